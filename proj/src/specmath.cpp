#include "dsclab/specmath.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dsclab {

CovarianceSplit covariance_split(const FeatureMatrix& feats) {
  feats.validate();
  const std::size_t n = feats.n();
  const std::size_t d = feats.d();
  const int c = feats.num_classes;
  if (n < 2) throw std::invalid_argument("covariance_split: n < 2");

  std::vector<std::size_t> counts(c, 0);
  for (int l : feats.labels) ++counts[l];
  for (int k = 0; k < c; ++k)
    if (counts[k] == 0)
      throw std::invalid_argument("covariance_split: class has no samples");

  CovarianceSplit split;
  split.class_means = Matrix(c, d, 0.0);
  split.global_mean.assign(d, 0.0);
  split.class_priors.assign(c, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    auto row = feats.data.row(i);
    auto mean = split.class_means.row(feats.labels[i]);
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (int k = 0; k < c; ++k) {
    auto mean = split.class_means.row(k);
    const double inv = 1.0 / static_cast<double>(counts[k]);
    for (std::size_t j = 0; j < d; ++j) mean[j] *= inv;
    split.class_priors[k] = static_cast<double>(counts[k]) / static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j)
      split.global_mean[j] += split.class_priors[k] * mean[j];
  }

  // Within: prior-weighted class-mean-centered scatter, population normalized.
  split.sigma_within = Matrix(d, d, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = feats.data.row(i);
    auto mean = split.class_means.row(feats.labels[i]);
    for (std::size_t j = 0; j < d; ++j) diff[j] = row[j] - mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      const double da = diff[a] * inv_n;
      for (std::size_t b = a; b < d; ++b) split.sigma_within(a, b) += da * diff[b];
    }
  }

  // Between: prior-weighted outer products of centered class means.
  split.sigma_between = Matrix(d, d, 0.0);
  for (int k = 0; k < c; ++k) {
    auto mean = split.class_means.row(k);
    for (std::size_t j = 0; j < d; ++j) diff[j] = mean[j] - split.global_mean[j];
    const double p = split.class_priors[k];
    for (std::size_t a = 0; a < d; ++a) {
      const double da = diff[a] * p;
      for (std::size_t b = a; b < d; ++b) split.sigma_between(a, b) += da * diff[b];
    }
  }

  // Mirror the upper triangles and form the total as the exact sum, which
  // makes the additivity invariant hold by construction.
  split.sigma_total = Matrix(d, d, 0.0);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      split.sigma_within(b, a) = split.sigma_within(a, b);
      split.sigma_between(b, a) = split.sigma_between(a, b);
      const double t = split.sigma_within(a, b) + split.sigma_between(a, b);
      split.sigma_total(a, b) = t;
      split.sigma_total(b, a) = t;
    }
  }
  return split;
}

EigenDecomposition sym_eig(const Matrix& m) {
  const std::size_t d = m.rows();
  if (d == 0 || m.cols() != d) throw std::invalid_argument("sym_eig: matrix not square");
  if (d > 4096) throw std::invalid_argument("sym_eig: dimension above 4096");
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (!std::isfinite(m(i, j)))
        throw std::invalid_argument("sym_eig: non-finite entry");
  const double frob = m.frobenius_norm();
  if (m.max_asymmetry() > 1e-9 * std::max(1.0, frob))
    throw std::invalid_argument("sym_eig: matrix not symmetric");

  Matrix a = m;
  // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
  Matrix q = Matrix::identity(d);

  const double tol = 1e-12 * frob;
  auto off_norm = [&a, d]() {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t r = p + 1; r < d; ++r) {
        const double apr = a(p, r);
        if (apr == 0.0) continue;
        const double app = a(p, p);
        const double arr = a(r, r);
        // Classic Jacobi rotation annihilating a(p, r).
        const double theta = (arr - app) / (2.0 * apr);
        const double t = (theta >= 0.0)
                             ? 1.0 / (theta + std::sqrt(1.0 + theta * theta))
                             : 1.0 / (theta - std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a(k, p);
          const double akr = a(k, r);
          a(k, p) = c * akp - s * akr;
          a(k, r) = s * akp + c * akr;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a(p, k);
          const double ark = a(r, k);
          a(p, k) = c * apk - s * ark;
          a(r, k) = s * apk + c * ark;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double qkp = q(k, p);
          const double qkr = q(k, r);
          q(k, p) = c * qkp - s * qkr;
          q(k, r) = s * qkp + c * qkr;
        }
      }
    }
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&a](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  EigenDecomposition eig;
  eig.eigenvalues.resize(d);
  eig.eigenvectors = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    eig.eigenvalues[i] = a(order[i], order[i]);
    for (std::size_t k = 0; k < d; ++k) eig.eigenvectors(k, i) = q(k, order[i]);
  }
  return eig;
}

SpectralSummary spectral_summary(const CovarianceSplit& split,
                                 const std::vector<int>& k_list) {
  const std::size_t d = split.sigma_total.rows();
  double trace_total = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace_total += split.sigma_total(i, i);
  if (!(trace_total > 0.0))
    throw std::invalid_argument("spectral_summary: degenerate covariance");

  EigenDecomposition eig = sym_eig(split.sigma_total);

  SpectralSummary out;
  out.eigenvectors = std::move(eig.eigenvectors);
  out.eigenvalues = std::move(eig.eigenvalues);
  const double lambda_max = out.eigenvalues.empty() ? 0.0 : out.eigenvalues.front();
  for (double& l : out.eigenvalues)
    if (l < 1e-12 * lambda_max) l = 0.0;

  double sum = 0.0;
  double sum_sq = 0.0;
  for (double l : out.eigenvalues) {
    sum += l;
    sum_sq += l * l;
  }
  if (!(sum > 0.0))
    throw std::invalid_argument("spectral_summary: degenerate covariance");

  out.pr = sum * sum / sum_sq;
  double entropy = 0.0;
  for (double l : out.eigenvalues) {
    if (l <= 0.0) continue;
    const double p = l / sum;
    entropy -= p * std::log(p);
  }
  out.r_eff = std::exp(entropy);

  for (int k : k_list) {
    if (k < 1) throw std::invalid_argument("spectral_summary: k must be >= 1");
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), d);
    double head = 0.0;
    for (std::size_t i = 0; i < take; ++i) head += out.eigenvalues[i];
    out.rho_k[k] = head / sum;
  }

  double trace_within = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace_within += split.sigma_within(i, i);
  out.rho_within = trace_within / trace_total;
  return out;
}

std::vector<int> default_k_list(int num_classes, int d) {
  std::vector<int> ks;
  ks.push_back(std::max(1, num_classes - 1));
  ks.push_back(64);
  ks.push_back(d);
  return ks;
}

std::vector<double> Projector::apply(std::span<const double> x) const {
  if (x.size() != dim()) throw std::invalid_argument("Projector::apply: size mismatch");
  std::vector<double> coeffs = matvec_transposed(basis, x);  // B^T x
  return matvec(basis, coeffs);                              // B (B^T x)
}

std::vector<double> Projector::complement(std::span<const double> x) const {
  std::vector<double> px = apply(x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - px[i];
  return out;
}

Projector class_subspace(const CovarianceSplit& split, int k) {
  const std::size_t d = split.sigma_total.rows();
  if (k < 1 || static_cast<std::size_t>(k) > d)
    throw std::invalid_argument("class_subspace: k out of range");
  EigenDecomposition eig = sym_eig(split.sigma_total);
  Projector p;
  p.basis = Matrix(d, static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) p.basis(i, j) = eig.eigenvectors(i, j);
  return p;
}

OrthogonalEnergy orthogonal_energy(const FeatureMatrix& feats, const Projector& p) {
  if (feats.d() != p.dim())
    throw std::invalid_argument("orthogonal_energy: dimension mismatch");
  OrthogonalEnergy out;
  out.per_row.resize(feats.n());
  double total = 0.0;
  for (std::size_t i = 0; i < feats.n(); ++i) {
    const double e = squared_norm(p.complement(feats.data.row(i)));
    out.per_row[i] = e;
    total += e;
  }
  out.mean = total / static_cast<double>(feats.n());
  return out;
}

NullspaceAudit nullspace_audit(const FeatureMatrix& id_feats,
                               const FeatureMatrix& ood_feats, const Projector& p) {
  if (id_feats.n() == 0 || ood_feats.n() == 0)
    throw std::invalid_argument("nullspace_audit: empty input");
  if (id_feats.d() != ood_feats.d())
    throw std::invalid_argument("nullspace_audit: dimension mismatch");
  NullspaceAudit audit;
  audit.id_mean = orthogonal_energy(id_feats, p).mean;
  audit.ood_mean = orthogonal_energy(ood_feats, p).mean;
  audit.separated = audit.ood_mean > audit.id_mean;
  return audit;
}

}  // namespace dsclab
