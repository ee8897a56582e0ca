#pragma once

#include <map>
#include <span>
#include <vector>

#include "dsclab/types.hpp"

namespace dsclab {

// Empirical second-moment decomposition of labeled features. With class
// priors p_c = n_c/n and population (divide-by-n) covariances, the split is
// exact: sigma_total = sigma_between + sigma_within.
struct CovarianceSplit {
  Matrix sigma_total;               // d x d
  Matrix sigma_between;             // d x d, rank <= C-1
  Matrix sigma_within;              // d x d
  Matrix class_means;               // C x d
  std::vector<double> global_mean;  // d
  std::vector<double> class_priors; // C, sums to 1
};

// Requires n >= 2 and at least one sample in every class in [0, C).
CovarianceSplit covariance_split(const FeatureMatrix& feats);

struct EigenDecomposition {
  std::vector<double> eigenvalues;  // descending
  Matrix eigenvectors;              // d x d, column i pairs with eigenvalues[i]
};

// Cyclic Jacobi for symmetric matrices. Rotations sweep the upper triangle
// until the off-diagonal Frobenius norm drops below 1e-12 * ||m||_F or 100
// sweeps elapse. Deterministic; reconstruction error stays within
// 1e-8 * ||m||_F. Rejects non-symmetric or non-finite input and d > 4096.
EigenDecomposition sym_eig(const Matrix& m);

// Rank diagnostics of a covariance split. Eigenvalues below 1e-12 * lambda_max
// (or negative from round-off) are clamped to zero before normalization;
// 0 * log 0 counts as 0 in the entropy.
struct SpectralSummary {
  std::vector<double> eigenvalues;  // of sigma_total, descending, clamped >= 0
  Matrix eigenvectors;
  double r_eff = 0.0;               // exp of spectral entropy
  double pr = 0.0;                  // participation ratio (sum l)^2 / sum l^2
  std::map<int, double> rho_k;      // top-k variance fraction per requested k
  double rho_within = 0.0;          // tr(sigma_within) / tr(sigma_total)
};

// k values larger than d count the full spectrum (rho = 1). Rejects a
// sigma_total with nonpositive trace ("degenerate covariance").
SpectralSummary spectral_summary(const CovarianceSplit& split,
                                 const std::vector<int>& k_list);

// Default rho_k report: k in {C-1, 64, d}.
std::vector<int> default_k_list(int num_classes, int d);

// Orthogonal projector stored via an orthonormal basis of its range.
struct Projector {
  Matrix basis;  // d x k, orthonormal columns

  std::size_t dim() const { return basis.rows(); }
  std::size_t k() const { return basis.cols(); }

  std::vector<double> apply(std::span<const double> x) const;       // P x
  std::vector<double> complement(std::span<const double> x) const;  // (I - P) x
};

// Projector onto the span of the top-k eigenvectors of sigma_total.
Projector class_subspace(const CovarianceSplit& split, int k);

struct OrthogonalEnergy {
  std::vector<double> per_row;  // ||(I - P) z_i||^2
  double mean = 0.0;
};

OrthogonalEnergy orthogonal_energy(const FeatureMatrix& feats, const Projector& p);

struct NullspaceAudit {
  double id_mean = 0.0;
  double ood_mean = 0.0;
  bool separated = false;  // ood_mean > id_mean
};

NullspaceAudit nullspace_audit(const FeatureMatrix& id_feats,
                               const FeatureMatrix& ood_feats, const Projector& p);

}  // namespace dsclab
