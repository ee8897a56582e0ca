#pragma once

#include <cstdint>
#include <vector>

namespace dsclab {

// All randomness in the project flows through this generator so that runs are
// reproducible bit-for-bit from a single root seed. The core is SplitMix64;
// independent streams are derived by folding tag words through the same mixer
// (see derive_stream below), which makes the scheme splittable: adding a new
// consumer never perturbs the draws seen by existing ones.

std::uint64_t mix64(std::uint64_t x);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller. Always consumes exactly two uniforms, so
  // the stream position is a pure function of the call count.
  double normal();

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Fisher-Yates shuffle, descending index order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // Unit vector uniform on the sphere in R^dim (normalized Gaussian).
  std::vector<double> unit_vector(std::size_t dim);

 private:
  std::uint64_t state_;
};

// Stream identifiers for the stages of an experiment run. Streams are keyed
// by (run seed, lambda bits, stage), so changing the scorer roster or adding
// an eval stage cannot shift training randomness.
enum class Stage : std::uint64_t {
  generate = 1,
  teacher = 2,
  student_init = 3,
  shuffle = 4,
  scorer = 5,
  bound_pairs = 6,
  bound_subsample = 7,
  power_iteration = 8,
  toy = 9,
};

std::uint64_t derive_stream(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0,
                            std::uint64_t c = 0);
std::uint64_t derive_stream(std::uint64_t root, Stage stage, std::uint64_t b = 0,
                            std::uint64_t c = 0);

// Bit pattern of a double, used to key streams by lambda value.
std::uint64_t double_bits(double x);

}  // namespace dsclab
