#include "dsclab/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dsclab {

namespace {

template <typename T>
void write_le(std::ostream& out, T v) {
  // Fixed-width little-endian, independent of host byte order.
  unsigned char buf[sizeof(T)];
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw std::runtime_error("binary read: truncated stream");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace

void BinaryWriter::magic(const char tag[4]) { out_.write(tag, 4); }
void BinaryWriter::u32(std::uint32_t v) { write_le(out_, v); }
void BinaryWriter::i32(std::int32_t v) { write_le(out_, v); }
void BinaryWriter::u64(std::uint64_t v) { write_le(out_, v); }
void BinaryWriter::f64(double v) { write_le(out_, v); }
void BinaryWriter::f64_array(const double* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) f64(data[i]);
}

void BinaryReader::expect_magic(const char tag[4]) {
  char buf[4];
  in_.read(buf, 4);
  if (!in_ || std::memcmp(buf, tag, 4) != 0)
    throw std::runtime_error(std::string("binary read: expected magic ") +
                             std::string(tag, 4));
}
std::uint32_t BinaryReader::u32() { return read_le<std::uint32_t>(in_); }
std::int32_t BinaryReader::i32() { return read_le<std::int32_t>(in_); }
std::uint64_t BinaryReader::u64() { return read_le<std::uint64_t>(in_); }
double BinaryReader::f64() { return read_le<double>(in_); }
void BinaryReader::f64_array(double* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) data[i] = f64();
}

std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_features_csv(const FeatureMatrix& feats, const std::string& path) {
  feats.validate();
  std::ostringstream out;
  out << "label";
  for (std::size_t j = 0; j < feats.d(); ++j) out << ",f" << j;
  out << "\n";
  for (std::size_t i = 0; i < feats.n(); ++i) {
    out << feats.labels[i];
    for (double v : feats.data.row(i)) out << "," << format_double(v);
    out << "\n";
  }
  write_text_file(path, out.str());
}

FeatureMatrix load_features_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
  std::size_t d = 0;
  for (char c : line)
    if (c == ',') ++d;
  if (line.rfind("label", 0) != 0)
    throw std::runtime_error("CSV header must start with 'label': " + path);

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    if (!std::getline(row, cell, ','))
      throw std::runtime_error(path + ": malformed line " + std::to_string(line_no));
    labels.push_back(std::stoi(cell));
    std::size_t got = 0;
    while (std::getline(row, cell, ',')) {
      values.push_back(std::strtod(cell.c_str(), nullptr));
      ++got;
    }
    if (got != d)
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               " has " + std::to_string(got) + " features, expected " +
                               std::to_string(d));
  }

  FeatureMatrix feats;
  feats.data = Matrix(labels.size(), d);
  std::memcpy(feats.data.data(), values.data(), values.size() * sizeof(double));
  feats.labels = std::move(labels);
  int max_label = -1;
  for (int l : feats.labels) max_label = std::max(max_label, l);
  feats.num_classes = max_label + 1;
  feats.validate();
  return feats;
}

void save_features_dscf(const FeatureMatrix& feats, const std::string& path) {
  feats.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  BinaryWriter w(out);
  w.magic("DSCF");
  w.u32(static_cast<std::uint32_t>(feats.n()));
  w.u32(static_cast<std::uint32_t>(feats.d()));
  for (std::size_t i = 0; i < feats.n(); ++i) {
    w.i32(feats.labels[i]);
    w.f64_array(feats.data.row(i).data(), feats.d());
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

FeatureMatrix load_features_dscf(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  BinaryReader r(in);
  r.expect_magic("DSCF");
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  FeatureMatrix feats;
  feats.data = Matrix(n, d);
  feats.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    feats.labels[i] = r.i32();
    r.f64_array(feats.data.row(i).data(), d);
  }
  int max_label = -1;
  for (int l : feats.labels) max_label = std::max(max_label, l);
  feats.num_classes = max_label + 1;
  feats.validate();
  return feats;
}

namespace {
bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace

void save_features(const FeatureMatrix& feats, const std::string& path) {
  if (has_suffix(path, ".csv"))
    save_features_csv(feats, path);
  else
    save_features_dscf(feats, path);
}

FeatureMatrix load_features(const std::string& path) {
  if (has_suffix(path, ".csv")) return load_features_csv(path);
  return load_features_dscf(path);
}

void FeatureMatrix::validate() const {
  if (n() == 0 || d() == 0)
    throw std::invalid_argument("FeatureMatrix: empty matrix");
  if (labels.size() != n())
    throw std::invalid_argument("FeatureMatrix: label count does not match rows");
  if (num_classes <= 0)
    throw std::invalid_argument("FeatureMatrix: num_classes must be positive");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw std::invalid_argument("FeatureMatrix: label out of range");
  for (std::size_t i = 0; i < n(); ++i)
    for (double v : data.row(i))
      if (!std::isfinite(v))
        throw std::invalid_argument("FeatureMatrix: non-finite entry");
}

}  // namespace dsclab
