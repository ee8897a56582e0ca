#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsclab/types.hpp"

namespace dsclab {

// Binary containers share one framing convention: a 4-byte ASCII magic, then
// little-endian fixed-width fields. Numeric payloads are raw IEEE-754 f64, so
// save -> load -> save is byte-identical.
//
//   DSCF  feature matrices   (this header)
//   DSCS  fitted scorers     (scorers.hpp)
//   DSCT  teacher statistics (residual.hpp)
//   DSCM  student models     (student.hpp)

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}
  void magic(const char tag[4]);
  void u32(std::uint32_t v);
  void i32(std::int32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64_array(const double* data, std::size_t count);

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}
  // Throws std::runtime_error when the stream's next 4 bytes differ from tag.
  void expect_magic(const char tag[4]);
  std::uint32_t u32();
  std::int32_t i32();
  std::uint64_t u64();
  double f64();
  void f64_array(double* data, std::size_t count);

 private:
  std::istream& in_;
};

// CSV: header row `label,f0,f1,...`, one sample per line, '.' decimal point,
// LF line endings. Doubles print with enough digits to round-trip exactly.
void save_features_csv(const FeatureMatrix& feats, const std::string& path);
FeatureMatrix load_features_csv(const std::string& path);

// DSCF: magic, u32 n, u32 d, then n rows of (i32 label, d x f64).
void save_features_dscf(const FeatureMatrix& feats, const std::string& path);
FeatureMatrix load_features_dscf(const std::string& path);

// Dispatch on extension: ".csv" -> CSV, anything else -> DSCF.
void save_features(const FeatureMatrix& feats, const std::string& path);
FeatureMatrix load_features(const std::string& path);

// Shortest decimal form that parses back to the same double ("%.17g" fallback
// from "%.15g"/"%.16g"). Used by every CSV writer in the project so reruns are
// byte-identical.
std::string format_double(double v);

// Whole-file helpers used by CSV writers and the determinism checks.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace dsclab
