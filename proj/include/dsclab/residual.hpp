#pragma once

#include <span>
#include <string>
#include <vector>

#include "dsclab/types.hpp"

namespace dsclab {

// Per-class statistics of frozen teacher embeddings, plus the oblique
// projector P_cls = U (U^T U + eps I)^{-1} U^T onto the class-discriminative
// teacher directions U = [mu_1 - mu, ..., mu_C - mu].
struct TeacherStats {
  Matrix class_prototypes;          // C x m
  std::vector<double> global_mean;  // m
  Matrix u_basis;                   // m x C, column c = prototype_c - mean
  double projector_eps = 1e-4;
  std::vector<std::int64_t> counts; // per class, cumulative samples seen

  std::size_t teacher_dim() const { return u_basis.rows(); }
  std::size_t num_classes() const { return class_prototypes.rows(); }

  // m x m suppression matrix, rebuilt whenever prototypes change.
  const Matrix& projector() const { return p_cls_; }

  // Recomputes u_basis and p_cls_ from prototypes / mean / eps.
  void rebuild_projector();

 private:
  Matrix p_cls_;
};

// Exact per-class and global means of the teacher embeddings. Every class in
// [0, C) must be present; projector_eps must be positive.
TeacherStats teacher_stats(const FeatureMatrix& teacher_feats,
                           double projector_eps = 1e-4);

// Builds U (U^T U + eps I)^{-1} U^T through the C x C symmetric
// eigendecomposition; never solves an m x m system.
Matrix oblique_projector(const Matrix& u_basis, double eps);

// u_dom = (I - P_cls)(u - mu): what the teacher says about the input after
// removing the class-predictable directions.
std::vector<double> class_suppressed_residual(const TeacherStats& stats,
                                              std::span<const double> u);

struct CosineLoss {
  double loss = 0.0;               // 1 - cos(h / ||h||, t / ||t||), in [0, 2]
  std::vector<double> grad;        // d loss / d h_out, analytic
};

// Target is treated as a constant (frozen teacher). Zero-norm h_out or
// target: loss 1, gradient 0.
CosineLoss cosine_domain_loss(std::span<const double> h_out,
                              std::span<const double> target);

// EMA prototype maintenance for the online mode: for every class present in
// the batch, prototype <- momentum * prototype + (1 - momentum) * batch mean.
// Counts accumulate batch counts; the global mean is refreshed as the
// count-weighted prototype average, then U and P_cls are rebuilt.
TeacherStats batch_prototype_update(TeacherStats stats, const FeatureMatrix& batch,
                                    double momentum);

// DSCT container; round-trip is bit-exact.
void save_teacher_stats(const TeacherStats& stats, const std::string& path);
TeacherStats load_teacher_stats(const std::string& path);

}  // namespace dsclab
