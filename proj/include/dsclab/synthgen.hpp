#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsclab/types.hpp"

namespace dsclab {

// Inputs are a concatenation x = (x_y, x_d): the first d_y coordinates carry
// class identity (Gaussian clusters around simplex anchors), the last d_d
// carry the acquisition domain (a fixed vector plus small jitter). Collapse
// severity is dialed by within_class_spread; domain shifts move only x_d.
struct GeneratorSpec {
  int d_y = 16;
  int d_d = 16;
  int c_total = 9;
  int c_train = 6;
  double within_class_spread = 0.1;  // sigma around class anchors
  double anchor_scale = 0.35;        // anchor norm; small enough that trained
                                     // feature spread stays near c_train
                                     // effective directions instead of
                                     // collapsing onto two or three
  std::vector<double> domain_value;  // size d_d; empty selects all-ones
  double domain_jitter = 0.25;
  double ood_domain_shift = 3.0;     // zero allowed as the degenerate case
  int n_per_split = 2000;
  std::uint64_t seed = 1;

  int input_dim() const { return d_y + d_d; }
  int c_withheld() const { return c_total - c_train; }

  // Throws std::invalid_argument when a field is out of range.
  void validate() const;
  std::vector<double> resolved_domain_value() const;
};

// Class anchors: centered regular simplex on the first c_total axes of the
// x_y block, scaled by anchor_scale. Rows are anchors, c_total x d_y.
Matrix class_anchors(const GeneratorSpec& spec);

struct DatasetBundle {
  FeatureMatrix train;          // labels in [0, c_train)
  FeatureMatrix id_test;        // same law as train, fresh draws
  FeatureMatrix indomain_ood;   // withheld classes, labels in [c_train, c_total)
  FeatureMatrix outdomain_ood;  // training-class x_y, x_d shifted along random dirs
};

// Each split draws from its own derived stream; splits are disjoint (fresh
// continuous draws, no index reuse). Labels are assigned round-robin so every
// class is exactly balanced. num_classes is c_train for train/id_test/
// outdomain_ood and c_total for indomain_ood.
DatasetBundle gen_single_domain(const GeneratorSpec& spec);

// Larger x_d displacement (multiplier * ood_domain_shift), training-class
// x_y law. Loose stand-in for a probe far beyond the training domain; no
// claim of equivalence to any real far-domain dataset.
FeatureMatrix gen_far_ood(const GeneratorSpec& spec, double shift_multiplier = 3.0);

// Plain-text key=value manifest: spec fields, seed, split sizes.
std::string dataset_manifest(const GeneratorSpec& spec, const DatasetBundle& bundle);

// Frozen random two-layer rectifier map u = W2 relu(W1 x + b1). The x_y
// block of W1 is a rank-restricted factor (xy_scale / sqrt(xy_rank * d_in))
// * A B, so class identity reaches the teacher only through xy_rank
// directions while x_d acts at full rank. That is the desk-scale stand-in
// for a multi-domain teacher: broad domain sensitivity, weak fine-grained
// class discrimination.
struct TeacherSpec {
  int input_dim = 32;
  int xy_dims = 16;    // leading input coords treated as x_y
  int hidden = 64;
  int out_dim = 48;    // m
  int xy_rank = 1;
  double xy_scale = 1.0;
  double xd_scale = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticTeacher {
  Matrix w1;               // hidden x input
  std::vector<double> b1;  // hidden
  Matrix w2;               // out x hidden

  std::size_t input_dim() const { return w1.cols(); }
  std::size_t out_dim() const { return w2.rows(); }
};

SyntheticTeacher make_teacher(const TeacherSpec& spec);

// Deterministic embedding; labels and num_classes copy through.
FeatureMatrix teacher_embed(const SyntheticTeacher& teacher,
                            const FeatureMatrix& inputs);

// Binary toy: y in {-1, +1} encoded as labels {0, 1}, x = y * a + s with the
// nuisance s drawn Gaussian in the orthogonal complement of a, scaled by
// noise. Ground truth for checking that an l2-regularized logistic fit keeps
// its row space in span(a).
FeatureMatrix linear_toy(int n, int p, std::span<const double> a_direction,
                         double noise, std::uint64_t seed);

// Full-batch gradient descent on mean log(1 + exp(-y w.x)) + 0.5 * l2 ||w||^2.
// No intercept: the toy is symmetric through the origin.
std::vector<double> fit_ridge_logistic(const FeatureMatrix& toy, double l2,
                                       double lr, int steps);

}  // namespace dsclab
