#include "dsclab/synthgen.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dsclab/io.hpp"
#include "dsclab/rng.hpp"

namespace dsclab {

void GeneratorSpec::validate() const {
  if (d_y <= 0 || d_d <= 0) throw std::invalid_argument("d_y and d_d must be positive");
  if (c_train < 2) throw std::invalid_argument("need >= 2 training classes");
  if (c_train >= c_total) throw std::invalid_argument("c_train must be < c_total");
  if (c_total > d_y) throw std::invalid_argument("simplex anchors need c_total <= d_y");
  if (within_class_spread < 0.0) throw std::invalid_argument("sigma must be >= 0");
  if (anchor_scale <= 0.0) throw std::invalid_argument("anchor_scale must be positive");
  if (domain_jitter < 0.0) throw std::invalid_argument("domain_jitter must be >= 0");
  // Zero shift is the degenerate identity case; it stays constructible so the
  // equality-of-distributions check can run against it.
  if (ood_domain_shift < 0.0) throw std::invalid_argument("shift must be >= 0");
  if (n_per_split < 2) throw std::invalid_argument("n_per_split must be >= 2");
  if (!domain_value.empty() && domain_value.size() != static_cast<std::size_t>(d_d)) {
    throw std::invalid_argument("domain_value size must equal d_d");
  }
}

std::vector<double> GeneratorSpec::resolved_domain_value() const {
  if (!domain_value.empty()) return domain_value;
  return std::vector<double>(static_cast<std::size_t>(d_d), 1.0);
}

Matrix class_anchors(const GeneratorSpec& spec) {
  Matrix anchors(static_cast<std::size_t>(spec.c_total),
                 static_cast<std::size_t>(spec.d_y));
  const double centroid = 1.0 / static_cast<double>(spec.c_total);
  for (int c = 0; c < spec.c_total; ++c) {
    for (int j = 0; j < spec.c_total; ++j) {
      const double e = (j == c ? 1.0 : 0.0) - centroid;
      anchors(static_cast<std::size_t>(c), static_cast<std::size_t>(j)) =
          spec.anchor_scale * e;
    }
  }
  return anchors;
}

namespace {

enum SplitIndex : std::uint64_t {
  split_train = 0,
  split_id_test = 1,
  split_indomain = 2,
  split_outdomain = 3,
  split_far = 4,
};

// One split. Labels cycle through [label_lo, label_hi); shift > 0 adds a
// fresh random unit direction in the x_d block per sample.
FeatureMatrix gen_split(const GeneratorSpec& spec, const Matrix& anchors,
                        std::uint64_t split_idx, int label_lo, int label_hi,
                        double shift, int num_classes) {
  const auto n = static_cast<std::size_t>(spec.n_per_split);
  const auto d_y = static_cast<std::size_t>(spec.d_y);
  const auto d_d = static_cast<std::size_t>(spec.d_d);
  const std::vector<double> domain = spec.resolved_domain_value();
  const int span = label_hi - label_lo;

  Rng rng(derive_stream(spec.seed, Stage::generate, split_idx));
  FeatureMatrix out;
  out.data = Matrix(n, d_y + d_d);
  out.labels.resize(n);
  out.num_classes = num_classes;

  for (std::size_t i = 0; i < n; ++i) {
    const int label = label_lo + static_cast<int>(i % static_cast<std::size_t>(span));
    out.labels[i] = label;
    auto row = out.data.row(i);
    const auto anchor = anchors.row(static_cast<std::size_t>(label));
    for (std::size_t j = 0; j < d_y; ++j) {
      row[j] = anchor[j] + spec.within_class_spread * rng.normal();
    }
    for (std::size_t j = 0; j < d_d; ++j) {
      row[d_y + j] = domain[j] + spec.domain_jitter * rng.normal();
    }
    if (shift != 0.0) {
      const std::vector<double> dir = rng.unit_vector(d_d);
      for (std::size_t j = 0; j < d_d; ++j) row[d_y + j] += shift * dir[j];
    }
  }
  return out;
}

}  // namespace

DatasetBundle gen_single_domain(const GeneratorSpec& spec) {
  spec.validate();
  const Matrix anchors = class_anchors(spec);
  DatasetBundle b;
  b.train = gen_split(spec, anchors, split_train, 0, spec.c_train, 0.0, spec.c_train);
  b.id_test =
      gen_split(spec, anchors, split_id_test, 0, spec.c_train, 0.0, spec.c_train);
  b.indomain_ood = gen_split(spec, anchors, split_indomain, spec.c_train,
                             spec.c_total, 0.0, spec.c_total);
  b.outdomain_ood = gen_split(spec, anchors, split_outdomain, 0, spec.c_train,
                              spec.ood_domain_shift, spec.c_train);
  return b;
}

FeatureMatrix gen_far_ood(const GeneratorSpec& spec, double shift_multiplier) {
  spec.validate();
  if (shift_multiplier <= 0.0) {
    throw std::invalid_argument("shift_multiplier must be positive");
  }
  const Matrix anchors = class_anchors(spec);
  return gen_split(spec, anchors, split_far, 0, spec.c_train,
                   shift_multiplier * spec.ood_domain_shift, spec.c_train);
}

std::string dataset_manifest(const GeneratorSpec& spec, const DatasetBundle& bundle) {
  std::ostringstream out;
  out << "d_y=" << spec.d_y << "\n";
  out << "d_d=" << spec.d_d << "\n";
  out << "c_total=" << spec.c_total << "\n";
  out << "c_train=" << spec.c_train << "\n";
  out << "within_class_spread=" << format_double(spec.within_class_spread) << "\n";
  out << "anchor_scale=" << format_double(spec.anchor_scale) << "\n";
  const std::vector<double> domain = spec.resolved_domain_value();
  out << "domain_value=";
  for (std::size_t i = 0; i < domain.size(); ++i) {
    if (i > 0) out << ' ';
    out << format_double(domain[i]);
  }
  out << "\n";
  out << "domain_jitter=" << format_double(spec.domain_jitter) << "\n";
  out << "ood_domain_shift=" << format_double(spec.ood_domain_shift) << "\n";
  out << "n_per_split=" << spec.n_per_split << "\n";
  out << "seed=" << spec.seed << "\n";
  out << "n_train=" << bundle.train.n() << "\n";
  out << "n_id_test=" << bundle.id_test.n() << "\n";
  out << "n_indomain_ood=" << bundle.indomain_ood.n() << "\n";
  out << "n_outdomain_ood=" << bundle.outdomain_ood.n() << "\n";
  return out.str();
}

void TeacherSpec::validate() const {
  if (input_dim <= 0) throw std::invalid_argument("teacher input_dim must be positive");
  if (xy_dims <= 0 || xy_dims >= input_dim) {
    throw std::invalid_argument("xy_dims must be in (0, input_dim)");
  }
  if (hidden <= 0 || out_dim <= 0) {
    throw std::invalid_argument("teacher widths must be positive");
  }
  if (xy_rank < 1 || xy_rank > xy_dims) {
    throw std::invalid_argument("xy_rank must be in [1, xy_dims]");
  }
  if (xy_scale < 0.0 || xd_scale < 0.0) {
    throw std::invalid_argument("teacher scales must be >= 0");
  }
}

SyntheticTeacher make_teacher(const TeacherSpec& spec) {
  spec.validate();
  const auto hidden = static_cast<std::size_t>(spec.hidden);
  const auto d_in = static_cast<std::size_t>(spec.input_dim);
  const auto d_y = static_cast<std::size_t>(spec.xy_dims);
  const auto d_d = d_in - d_y;
  const auto rank = static_cast<std::size_t>(spec.xy_rank);

  Rng rng(derive_stream(spec.seed, Stage::teacher));

  // Draw order: A, B, x_d block, b1, W2.
  Matrix a(hidden, rank);
  for (std::size_t i = 0; i < hidden * rank; ++i) a.data()[i] = rng.normal();
  Matrix bfac(rank, d_y);
  for (std::size_t i = 0; i < rank * d_y; ++i) bfac.data()[i] = rng.normal();

  SyntheticTeacher t;
  t.w1 = Matrix(hidden, d_in);
  const double xy_gain =
      spec.xy_scale / std::sqrt(static_cast<double>(rank) * static_cast<double>(d_in));
  for (std::size_t r = 0; r < hidden; ++r) {
    for (std::size_t c = 0; c < d_y; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < rank; ++k) acc += a(r, k) * bfac(k, c);
      t.w1(r, c) = xy_gain * acc;
    }
  }
  const double xd_gain = spec.xd_scale / std::sqrt(static_cast<double>(d_in));
  for (std::size_t r = 0; r < hidden; ++r) {
    for (std::size_t c = 0; c < d_d; ++c) t.w1(r, d_y + c) = xd_gain * rng.normal();
  }

  t.b1.resize(hidden);
  for (std::size_t i = 0; i < hidden; ++i) t.b1[i] = rng.uniform(-0.5, 0.5);

  t.w2 = Matrix(static_cast<std::size_t>(spec.out_dim), hidden);
  const double out_gain = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t i = 0; i < t.w2.rows() * hidden; ++i) {
    t.w2.data()[i] = out_gain * rng.normal();
  }
  return t;
}

FeatureMatrix teacher_embed(const SyntheticTeacher& teacher,
                            const FeatureMatrix& inputs) {
  if (inputs.d() != teacher.input_dim()) {
    throw std::invalid_argument("teacher_embed: input dim mismatch");
  }
  FeatureMatrix out;
  out.data = Matrix(inputs.n(), teacher.out_dim());
  out.labels = inputs.labels;
  out.num_classes = inputs.num_classes;

  const std::size_t hidden = teacher.w1.rows();
  std::vector<double> act(hidden);
  for (std::size_t i = 0; i < inputs.n(); ++i) {
    const auto x = inputs.data.row(i);
    for (std::size_t h = 0; h < hidden; ++h) {
      double acc = teacher.b1[h];
      const double* wr = teacher.w1.row(h).data();
      for (std::size_t c = 0; c < x.size(); ++c) acc += wr[c] * x[c];
      act[h] = acc > 0.0 ? acc : 0.0;
    }
    auto row = out.data.row(i);
    for (std::size_t r = 0; r < teacher.out_dim(); ++r) {
      double acc = 0.0;
      const double* wr = teacher.w2.row(r).data();
      for (std::size_t h = 0; h < hidden; ++h) acc += wr[h] * act[h];
      row[r] = acc;
    }
  }
  return out;
}

FeatureMatrix linear_toy(int n, int p, std::span<const double> a_direction,
                         double noise, std::uint64_t seed) {
  if (p < 2) throw std::invalid_argument("linear_toy: p must be >= 2");
  if (n < 2) throw std::invalid_argument("linear_toy: n must be >= 2");
  if (a_direction.size() != static_cast<std::size_t>(p)) {
    throw std::invalid_argument("linear_toy: direction size mismatch");
  }
  double a_norm2 = 0.0;
  for (double v : a_direction) a_norm2 += v * v;
  if (a_norm2 <= 0.0) throw std::invalid_argument("linear_toy: zero direction");

  Rng rng(derive_stream(seed, Stage::toy));
  FeatureMatrix out;
  out.data = Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(p));
  out.labels.resize(static_cast<std::size_t>(n));
  out.num_classes = 2;

  std::vector<double> g(static_cast<std::size_t>(p));
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    const int label = static_cast<int>(i % 2);  // 0 -> y=-1, 1 -> y=+1
    const double y = label == 1 ? 1.0 : -1.0;
    out.labels[i] = label;
    for (double& v : g) v = rng.normal();
    // Project the nuisance onto the complement of a.
    double proj = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) proj += g[j] * a_direction[j];
    proj /= a_norm2;
    auto row = out.data.row(i);
    for (std::size_t j = 0; j < g.size(); ++j) {
      row[j] = y * a_direction[j] + noise * (g[j] - proj * a_direction[j]);
    }
  }
  return out;
}

std::vector<double> fit_ridge_logistic(const FeatureMatrix& toy, double l2,
                                       double lr, int steps) {
  toy.validate();
  if (toy.num_classes != 2) throw std::invalid_argument("toy must be binary");
  if (lr <= 0.0 || steps < 0) throw std::invalid_argument("bad optimizer settings");
  if (l2 < 0.0) throw std::invalid_argument("l2 must be >= 0");

  const std::size_t n = toy.n();
  const std::size_t p = toy.d();
  std::vector<double> w(p, 0.0);
  std::vector<double> grad(p);
  const double inv_n = 1.0 / static_cast<double>(n);

  for (int step = 0; step < steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double y = toy.labels[i] == 1 ? 1.0 : -1.0;
      const auto x = toy.data.row(i);
      double margin = 0.0;
      for (std::size_t j = 0; j < p; ++j) margin += w[j] * x[j];
      margin *= y;
      // d/dm log(1 + exp(-m)) = -1 / (1 + exp(m)), stable both tails.
      const double coef = -inv_n / (1.0 + std::exp(margin));
      for (std::size_t j = 0; j < p; ++j) grad[j] += coef * y * x[j];
    }
    for (std::size_t j = 0; j < p; ++j) w[j] -= lr * (grad[j] + l2 * w[j]);
  }
  return w;
}

}  // namespace dsclab
