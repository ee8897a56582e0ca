#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dsclab/rng.hpp"
#include "dsclab/specmath.hpp"

using namespace dsclab;

// ---------------------------------------------------------------------------
// Oracles. Written against the definitions, independent of the implementation
// under test: a two-pass covariance, a direct entropy/participation formula,
// and plain linear algebra for projector identities.
// ---------------------------------------------------------------------------

namespace {

// Plain covariance around the mean, population normalization, two passes.
Matrix oracle_covariance(const Matrix& rows) {
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov(a, b) += (rows(i, a) - mean[a]) * (rows(i, b) - mean[b]);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) cov(a, b) /= static_cast<double>(n);
  return cov;
}

// r_eff and PR straight from the formulas on a raw spectrum.
struct SpreadOracle {
  double r_eff;
  double pr;
};

SpreadOracle oracle_spread(std::vector<double> eigs) {
  double lmax = 0.0;
  for (double l : eigs) lmax = std::max(lmax, l);
  double sum = 0.0, sum_sq = 0.0;
  for (double& l : eigs) {
    if (l < 1e-12 * lmax) l = 0.0;
    sum += l;
    sum_sq += l * l;
  }
  double entropy = 0.0;
  for (double l : eigs) {
    if (l <= 0.0) continue;
    const double p = l / sum;
    entropy -= p * std::log(p);
  }
  return {std::exp(entropy), sum * sum / sum_sq};
}

Matrix random_symmetric(Rng& rng, std::size_t d, double scale = 1.0) {
  Matrix m(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      const double v = scale * rng.normal();
      m(i, j) = v;
      m(j, i) = v;
    }
  return m;
}

FeatureMatrix random_features(Rng& rng, std::size_t n, std::size_t d, int classes) {
  FeatureMatrix fm;
  fm.num_classes = classes;
  fm.data = Matrix(n, d);
  fm.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    fm.labels[i] = static_cast<int>(i % classes);
    for (std::size_t j = 0; j < d; ++j) fm.data(i, j) = rng.normal();
  }
  return fm;
}

double frob_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double dv = a(i, j) - b(i, j);
      s += dv * dv;
    }
  return std::sqrt(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// covariance_split
// ---------------------------------------------------------------------------

TEST_CASE("two opposite points, one per class: within zero, between on x") {
  FeatureMatrix fm;
  fm.num_classes = 2;
  fm.data = Matrix(2, 2);
  fm.data(0, 0) = 1.0;
  fm.data(1, 0) = -1.0;
  fm.labels = {0, 1};
  const CovarianceSplit split = covariance_split(fm);
  CHECK(split.sigma_within.frobenius_norm() == 0.0);
  CHECK(split.sigma_between(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(split.sigma_between(0, 1) == 0.0);
  CHECK(split.sigma_between(1, 1) == 0.0);
}

TEST_CASE("all points identical: every covariance is zero") {
  FeatureMatrix fm;
  fm.num_classes = 2;
  fm.data = Matrix(6, 3, 2.5);
  fm.labels = {0, 1, 0, 1, 0, 1};
  const CovarianceSplit split = covariance_split(fm);
  CHECK(split.sigma_total.frobenius_norm() == 0.0);
  CHECK(split.sigma_between.frobenius_norm() == 0.0);
  CHECK(split.sigma_within.frobenius_norm() == 0.0);
}

TEST_CASE("sigma_total matches the two-pass covariance oracle") {
  Rng rng(11);
  FeatureMatrix fm = random_features(rng, 50, 8, 3);
  const CovarianceSplit split = covariance_split(fm);
  const Matrix direct = oracle_covariance(fm.data);
  CHECK(frob_diff(split.sigma_total, direct) < 1e-10);
}

TEST_CASE("between + within = total, 100 random datasets") {
  Rng rng(12);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 10 + rng.below(60);
    const std::size_t d = 2 + rng.below(12);
    const int classes = 2 + static_cast<int>(rng.below(4));
    FeatureMatrix fm = random_features(rng, n, d, classes);
    const CovarianceSplit split = covariance_split(fm);
    Matrix sum(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        sum(i, j) = split.sigma_between(i, j) + split.sigma_within(i, j);
    const double rel =
        frob_diff(sum, split.sigma_total) / std::max(1e-300, split.sigma_total.frobenius_norm());
    CHECK(rel < 1e-9);
  }
}

TEST_CASE("class priors sum to one and match counts") {
  Rng rng(13);
  FeatureMatrix fm = random_features(rng, 30, 4, 3);
  const CovarianceSplit split = covariance_split(fm);
  double total = 0.0;
  for (double p : split.class_priors) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(split.class_priors[0] == doctest::Approx(10.0 / 30.0));
}

// ---------------------------------------------------------------------------
// sym_eig
// ---------------------------------------------------------------------------

TEST_CASE("diagonal matrix: sorted eigenvalues, axis eigenvectors") {
  Matrix m(3, 3);
  m(0, 0) = 3.0;
  m(1, 1) = 1.0;
  m(2, 2) = 2.0;
  const EigenDecomposition eig = sym_eig(m);
  REQUIRE(eig.eigenvalues.size() == 3);
  CHECK(eig.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eig.eigenvalues[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(eig.eigenvalues[2] == doctest::Approx(1.0).epsilon(1e-12));
  // column 0 should be +-e_0, column 1 +-e_2, column 2 +-e_1
  CHECK(std::fabs(eig.eigenvectors(0, 0)) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::fabs(eig.eigenvectors(2, 1)) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::fabs(eig.eigenvectors(1, 2)) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("2x2 with known closed form") {
  Matrix m(2, 2);
  m(0, 0) = 2.0;
  m(0, 1) = 1.0;
  m(1, 0) = 1.0;
  m(1, 1) = 2.0;
  const EigenDecomposition eig = sym_eig(m);
  CHECK(eig.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eig.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  // (1,1)/sqrt(2) for eigenvalue 3, sign free
  CHECK(std::fabs(eig.eigenvectors(0, 0)) == doctest::Approx(inv_sqrt2).epsilon(1e-10));
  CHECK(eig.eigenvectors(0, 0) == doctest::Approx(eig.eigenvectors(1, 0)).epsilon(1e-10));
  // (1,-1)/sqrt(2) for eigenvalue 1
  CHECK(eig.eigenvectors(0, 1) == doctest::Approx(-eig.eigenvectors(1, 1)).epsilon(1e-10));
}

TEST_CASE("random 16x16: reconstruction and orthonormality") {
  Rng rng(21);
  const Matrix m = random_symmetric(rng, 16);
  const EigenDecomposition eig = sym_eig(m);
  const std::size_t d = 16;
  Matrix recon(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        s += eig.eigenvectors(i, k) * eig.eigenvalues[k] * eig.eigenvectors(j, k);
      recon(i, j) = s;
    }
  CHECK(frob_diff(recon, m) < 1e-8 * std::max(1.0, m.frobenius_norm()));
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        s += eig.eigenvectors(k, a) * eig.eigenvectors(k, b);
      CHECK(std::fabs(s - (a == b ? 1.0 : 0.0)) < 1e-8);
    }
}

TEST_CASE("eigenvalues are sorted descending on random input") {
  Rng rng(22);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t d = 2 + rng.below(20);
    const EigenDecomposition eig = sym_eig(random_symmetric(rng, d));
    CHECK(std::is_sorted(eig.eigenvalues.rbegin(), eig.eigenvalues.rend()));
  }
}

TEST_CASE("sym_eig rejects asymmetric input") {
  Matrix m(2, 2);
  m(0, 1) = 1.0;
  CHECK_THROWS_AS((void)sym_eig(m), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// spectral_summary
// ---------------------------------------------------------------------------

namespace {

// Builds a split whose sigma_total has the requested spectrum (diagonal) and
// zero within part, for formula checks.
CovarianceSplit synthetic_split(const std::vector<double>& eigs) {
  CovarianceSplit split;
  const std::size_t d = eigs.size();
  split.sigma_total = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) split.sigma_total(i, i) = eigs[i];
  split.sigma_between = split.sigma_total;
  split.sigma_within = Matrix(d, d);
  split.class_means = Matrix(1, d);
  split.global_mean.assign(d, 0.0);
  split.class_priors = {1.0};
  return split;
}

}  // namespace

TEST_CASE("identity covariance: r_eff = PR = d") {
  const CovarianceSplit split = synthetic_split(std::vector<double>(10, 1.0));
  const SpectralSummary s = spectral_summary(split, {3});
  CHECK(std::fabs(s.r_eff - 10.0) < 1e-12 * 10.0);
  CHECK(std::fabs(s.pr - 10.0) < 1e-12 * 10.0);
  CHECK(s.rho_k.at(3) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("rank one: r_eff = PR = 1") {
  std::vector<double> eigs(8, 0.0);
  eigs[0] = 1.0;
  const SpectralSummary s = spectral_summary(synthetic_split(eigs), {1});
  CHECK(s.r_eff == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.pr == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.rho_k.at(1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("spectrum (0.5, 0.25, 0.25): direct formula values") {
  const SpectralSummary s = spectral_summary(synthetic_split({0.5, 0.25, 0.25}), {2});
  // PR = 1 / 0.375 = 8/3; entropy = 1.5 ln 2 = 1.0397...
  CHECK(s.pr == doctest::Approx(8.0 / 3.0).epsilon(1e-12));
  CHECK(s.r_eff == doctest::Approx(std::exp(1.5 * std::log(2.0))).epsilon(1e-12));
}

TEST_CASE("r_eff and PR match the direct-formula oracle on random spectra") {
  Rng rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t d = 2 + rng.below(24);
    std::vector<double> eigs(d);
    for (double& l : eigs) l = std::exp(rng.normal());
    std::sort(eigs.rbegin(), eigs.rend());
    const SpectralSummary s = spectral_summary(synthetic_split(eigs), {1});
    const SpreadOracle oracle = oracle_spread(eigs);
    CHECK(std::fabs(s.r_eff - oracle.r_eff) < 1e-10 * oracle.r_eff);
    CHECK(std::fabs(s.pr - oracle.pr) < 1e-10 * oracle.pr);
  }
}

TEST_CASE("scale invariance of r_eff and PR under c * features") {
  Rng rng(32);
  FeatureMatrix fm = random_features(rng, 120, 9, 4);
  const SpectralSummary base = spectral_summary(covariance_split(fm), {3});
  for (std::size_t i = 0; i < fm.data.rows(); ++i)
    for (std::size_t j = 0; j < fm.data.cols(); ++j) fm.data(i, j) *= 7.25;
  const SpectralSummary scaled = spectral_summary(covariance_split(fm), {3});
  CHECK(std::fabs(base.r_eff - scaled.r_eff) < 1e-9 * base.r_eff);
  CHECK(std::fabs(base.pr - scaled.pr) < 1e-9 * base.pr);
  CHECK(std::fabs(base.rho_k.at(3) - scaled.rho_k.at(3)) < 1e-9);
}

TEST_CASE("k larger than d counts the whole spectrum") {
  const SpectralSummary s = spectral_summary(synthetic_split({0.6, 0.4}), {5});
  CHECK(s.rho_k.at(5) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("degenerate covariance is rejected") {
  CHECK_THROWS_AS((void)spectral_summary(synthetic_split({0.0, 0.0}), {1}),
                  std::invalid_argument);
}

TEST_CASE("default k list is {C-1, 64, d} deduplicated and in range") {
  const std::vector<int> ks = default_k_list(6, 32);
  CHECK(std::find(ks.begin(), ks.end(), 5) != ks.end());
  CHECK(std::find(ks.begin(), ks.end(), 32) != ks.end());
}

// ---------------------------------------------------------------------------
// class_subspace / orthogonal_energy / nullspace_audit
// ---------------------------------------------------------------------------

TEST_CASE("diag(3,2,1) top-1 projector is the first axis") {
  const CovarianceSplit split = synthetic_split({3.0, 2.0, 1.0});
  const Projector p = class_subspace(split, 1);
  REQUIRE(p.k() == 1);
  const std::vector<double> x = {2.0, 5.0, -1.0};
  const std::vector<double> px = p.apply(x);
  CHECK(px[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(px[1] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(px[2] == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("k = d projector is the identity, complement zero") {
  Rng rng(41);
  FeatureMatrix fm = random_features(rng, 40, 5, 2);
  const Projector p = class_subspace(covariance_split(fm), 5);
  const std::vector<double> x = {1.0, -2.0, 0.5, 3.0, -1.0};
  const std::vector<double> px = p.apply(x);
  const std::vector<double> cx = p.complement(x);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(px[i] == doctest::Approx(x[i]).epsilon(1e-10));
    CHECK(std::fabs(cx[i]) < 1e-10);
  }
}

TEST_CASE("projector Pythagoras on random data") {
  Rng rng(42);
  FeatureMatrix fm = random_features(rng, 20, 6, 2);
  const Projector p = class_subspace(covariance_split(fm), 2);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> x(6);
    for (double& v : x) v = rng.normal();
    const std::vector<double> px = p.apply(x);
    const std::vector<double> cx = p.complement(x);
    const double lhs = squared_norm(px) + squared_norm(cx);
    CHECK(std::fabs(lhs - squared_norm(x)) < 1e-10 * std::max(1.0, squared_norm(x)));
  }
}

TEST_CASE("rows inside the span have zero orthogonal energy") {
  // Projector built from data living on the first two axes.
  FeatureMatrix base;
  base.num_classes = 2;
  base.data = Matrix(8, 4);
  Rng rng(43);
  for (std::size_t i = 0; i < 8; ++i) {
    base.labels.push_back(static_cast<int>(i % 2));
    base.data(i, 0) = rng.normal();
    base.data(i, 1) = rng.normal();
  }
  const Projector p = class_subspace(covariance_split(base), 2);
  const OrthogonalEnergy e = orthogonal_energy(base, p);
  for (double v : e.per_row) CHECK(std::fabs(v) < 1e-18);
  CHECK(std::fabs(e.mean) < 1e-18);
}

TEST_CASE("row orthogonal to the basis with norm 2 has energy 4") {
  FeatureMatrix base;
  base.num_classes = 2;
  base.data = Matrix(8, 3);
  Rng rng(44);
  for (std::size_t i = 0; i < 8; ++i) {
    base.labels.push_back(static_cast<int>(i % 2));
    base.data(i, 0) = rng.normal();
  }
  const Projector p = class_subspace(covariance_split(base), 1);
  FeatureMatrix probe;
  probe.num_classes = 1;
  probe.data = Matrix(1, 3);
  probe.data(0, 2) = 2.0;  // assumes basis = span(e_0): e_2 is orthogonal
  probe.labels = {0};
  const OrthogonalEnergy e = orthogonal_energy(probe, p);
  CHECK(e.per_row[0] == doctest::Approx(4.0).epsilon(1e-10));
}

TEST_CASE("orthogonal energy equals the complement identity") {
  Rng rng(45);
  FeatureMatrix fm = random_features(rng, 30, 7, 3);
  const Projector p = class_subspace(covariance_split(fm), 3);
  const OrthogonalEnergy e = orthogonal_energy(fm, p);
  for (std::size_t i = 0; i < fm.data.rows(); ++i) {
    const auto row = fm.data.row(i);
    const std::vector<double> px = p.apply(row);
    const double expect = squared_norm(row) - squared_norm(px);
    CHECK(std::fabs(e.per_row[i] - expect) < 1e-10 * std::max(1.0, expect));
  }
}

TEST_CASE("nullspace audit: shift along a null direction raises ood mean by delta^2") {
  // ID lives exactly in span(e_0, e_1) of a 4-dim space.
  FeatureMatrix id;
  id.num_classes = 2;
  id.data = Matrix(40, 4);
  Rng rng(46);
  for (std::size_t i = 0; i < 40; ++i) {
    id.labels.push_back(static_cast<int>(i % 2));
    id.data(i, 0) = rng.normal();
    id.data(i, 1) = 2.0 * rng.normal();
  }
  const Projector p = class_subspace(covariance_split(id), 2);
  const double delta = 1.5;
  FeatureMatrix ood = id;
  for (std::size_t i = 0; i < ood.data.rows(); ++i) ood.data(i, 3) += delta;
  const NullspaceAudit audit = nullspace_audit(id, ood, p);
  CHECK(audit.id_mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(audit.ood_mean == doctest::Approx(delta * delta).epsilon(1e-9));
  CHECK(audit.separated);
}

TEST_CASE("nullspace audit: identical sets are not separated") {
  Rng rng(47);
  FeatureMatrix fm = random_features(rng, 25, 5, 2);
  const Projector p = class_subspace(covariance_split(fm), 2);
  const NullspaceAudit audit = nullspace_audit(fm, fm, p);
  CHECK(audit.id_mean == doctest::Approx(audit.ood_mean).epsilon(1e-15));
  CHECK_FALSE(audit.separated);
}
