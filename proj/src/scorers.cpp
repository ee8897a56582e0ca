#include "dsclab/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "dsclab/io.hpp"
#include "dsclab/specmath.hpp"

namespace dsclab {

namespace {

constexpr double kAutoShrinkFraction = 1e-3;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_finite(const Matrix& m, const char* what) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (double v : m.row(i))
      if (!std::isfinite(v))
        throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

double max_entry(std::span<const double> v) {
  double best = v[0];
  for (double x : v) best = std::max(best, x);
  return best;
}

// Mean eigenvalue equals trace / d, so the default shrinkage needs no
// eigendecomposition of its own.
double resolve_shrink(double requested, const Matrix& covariance) {
  if (requested > 0.0) return requested;
  double trace = 0.0;
  for (std::size_t i = 0; i < covariance.rows(); ++i) trace += covariance(i, i);
  return kAutoShrinkFraction * trace / static_cast<double>(covariance.rows());
}

FittedScorer::Whitening shrunk_whitening(const Matrix& covariance, double shrink) {
  EigenDecomposition eig = sym_eig(covariance);
  FittedScorer::Whitening w;
  w.basis = std::move(eig.eigenvectors);
  w.inv_eigs.resize(eig.eigenvalues.size());
  for (std::size_t i = 0; i < w.inv_eigs.size(); ++i) {
    const double denom = std::max(eig.eigenvalues[i], 0.0) + shrink;
    if (!(denom > 0.0))
      throw std::invalid_argument(
          "mahalanobis fit: singular covariance requires positive shrinkage");
    w.inv_eigs[i] = 1.0 / denom;
  }
  return w;
}

// (z - mean)^T (Sigma + shrink I)^{-1} (z - mean) through the stored
// eigendecomposition of Sigma.
double mahalanobis_sq(const FittedScorer::Whitening& w, std::span<const double> z,
                      std::span<const double> mean) {
  const std::size_t d = z.size();
  double m = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double coord = 0.0;
    for (std::size_t i = 0; i < d; ++i) coord += w.basis(i, j) * (z[i] - mean[i]);
    m += w.inv_eigs[j] * coord * coord;
  }
  return m;
}

std::vector<double> column_mean(const Matrix& m) {
  std::vector<double> mean(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) mean[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(m.rows());
  for (double& v : mean) v *= inv;
  return mean;
}

std::vector<double> apply_head(const LinearHead& head, std::span<const double> z) {
  std::vector<double> logits = matvec(head.weight, z);
  add_in_place(logits, head.bias);
  return logits;
}

int argmax_row(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace

double logsumexp(std::span<const double> v) {
  require(!v.empty(), "logsumexp: empty input");
  const double m = max_entry(v);
  if (!std::isfinite(m)) throw std::invalid_argument("logsumexp: non-finite input");
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  require(!logits.empty(), "softmax: empty input");
  const double m = max_entry(logits);
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

double percentile_linear(std::vector<double> values, double p) {
  require(!values.empty(), "percentile_linear: empty input");
  require(p >= 0.0 && p <= 100.0, "percentile_linear: p outside [0, 100]");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double idx = (p / 100.0) * static_cast<double>(values.size() - 1);
  auto lo = static_cast<std::size_t>(idx);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = idx - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

const std::vector<ScorerKind>& all_scorer_kinds() {
  static const std::vector<ScorerKind> kinds = {
      ScorerKind::msp,   ScorerKind::ebo,   ScorerKind::mds,
      ScorerKind::knn,   ScorerKind::vim,   ScorerKind::react,
      ScorerKind::scale, ScorerKind::nci,   ScorerKind::whiten,
      ScorerKind::teacher_mds,
  };
  return kinds;
}

std::string scorer_name(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::msp: return "msp";
    case ScorerKind::ebo: return "ebo";
    case ScorerKind::mds: return "mds";
    case ScorerKind::knn: return "knn";
    case ScorerKind::vim: return "vim";
    case ScorerKind::react: return "react";
    case ScorerKind::scale: return "scale";
    case ScorerKind::nci: return "nci";
    case ScorerKind::whiten: return "whiten";
    case ScorerKind::teacher_mds: return "teacher_mds";
  }
  throw std::logic_error("scorer_name: unknown kind");
}

ScorerKind scorer_from_name(const std::string& name) {
  for (ScorerKind k : all_scorer_kinds())
    if (scorer_name(k) == name) return k;
  throw std::invalid_argument("unknown scorer name: " + name);
}

// --- stateless scorers -------------------------------------------------

ScoreVector score_msp(const Matrix& logits) {
  require(logits.cols() >= 2, "score_msp: needs at least two classes");
  check_finite(logits, "score_msp");
  ScoreVector out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const std::vector<double> p = softmax(logits.row(i));
    out[i] = max_entry(p);
  }
  return out;
}

ScoreVector score_energy(const Matrix& logits, double temperature) {
  require(temperature > 0.0, "score_energy: temperature must be positive");
  require(logits.cols() >= 1, "score_energy: empty logits");
  check_finite(logits, "score_energy");
  ScoreVector out(logits.rows());
  std::vector<double> scaled(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) scaled[c] = row[c] / temperature;
    out[i] = temperature * logsumexp(scaled);
  }
  return out;
}

// --- Mahalanobis family -------------------------------------------------

FittedScorer fit_mds(const FeatureMatrix& train, double lambda_shrink,
                     bool per_class) {
  train.validate();
  CovarianceSplit split = covariance_split(train);

  std::vector<std::size_t> counts(train.num_classes, 0);
  for (int l : train.labels) ++counts[l];
  for (int c = 0; c < train.num_classes; ++c)
    if (counts[c] < 2)
      std::cerr << "fit_mds: class " << c
                << " has a single sample; pooled covariance still defined\n";

  FittedScorer fitted;
  fitted.kind = ScorerKind::mds;
  fitted.cfg.mds_per_class = per_class;
  fitted.class_means = split.class_means;
  // The shrinkage scale always comes from the pooled covariance so pooled and
  // per-class modes regularize identically.
  fitted.lambda_shrink = resolve_shrink(lambda_shrink, split.sigma_within);
  fitted.cfg.mds_shrink = lambda_shrink;

  if (!per_class) {
    fitted.whiten.push_back(shrunk_whitening(split.sigma_within, fitted.lambda_shrink));
    return fitted;
  }

  const std::size_t d = train.d();
  for (int c = 0; c < train.num_classes; ++c) {
    Matrix cov(d, d, 0.0);
    auto mean = split.class_means.row(c);
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < train.n(); ++i) {
      if (train.labels[i] != c) continue;
      auto row = train.data.row(i);
      for (std::size_t j = 0; j < d; ++j) diff[j] = row[j] - mean[j];
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) cov(a, b) += diff[a] * diff[b];
    }
    const double inv = 1.0 / static_cast<double>(counts[c]);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) {
        cov(a, b) *= inv;
        cov(b, a) = cov(a, b);
      }
    fitted.whiten.push_back(shrunk_whitening(cov, fitted.lambda_shrink));
  }
  return fitted;
}

ScoreVector score_mds(const FittedScorer& fitted, const Matrix& feats) {
  require(fitted.kind == ScorerKind::mds || fitted.kind == ScorerKind::teacher_mds,
          "score_mds: scorer is not an MDS variant");
  require(feats.cols() == fitted.class_means.cols(), "score_mds: dimension mismatch");
  check_finite(feats, "score_mds");
  const std::size_t num_classes = fitted.class_means.rows();
  ScoreVector out(feats.rows());
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < num_classes; ++c) {
      const auto& w =
          fitted.cfg.mds_per_class ? fitted.whiten[c] : fitted.whiten.front();
      best = std::min(best, mahalanobis_sq(w, feats.row(i), fitted.class_means.row(c)));
    }
    out[i] = -best;
  }
  return out;
}

FittedScorer fit_whiten(const FeatureMatrix& train, double lambda_shrink) {
  train.validate();
  require(train.n() >= 2, "fit_whiten: needs n >= 2");
  const std::size_t d = train.d();

  // Deliberately separate from the covariance_split path: this scorer is the
  // cross-check for single-class MDS, so it builds its own two-pass global
  // covariance.
  std::vector<double> mean = column_mean(train.data);
  Matrix cov(d, d, 0.0);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < train.n(); ++i) {
    auto row = train.data.row(i);
    for (std::size_t j = 0; j < d; ++j) diff[j] = row[j] - mean[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) cov(a, b) += diff[a] * diff[b];
  }
  const double inv = 1.0 / static_cast<double>(train.n());
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) *= inv;
      cov(b, a) = cov(a, b);
    }

  FittedScorer fitted;
  fitted.kind = ScorerKind::whiten;
  fitted.class_means = Matrix(1, d);
  for (std::size_t j = 0; j < d; ++j) fitted.class_means(0, j) = mean[j];
  fitted.lambda_shrink = resolve_shrink(lambda_shrink, cov);
  fitted.cfg.mds_shrink = lambda_shrink;
  fitted.whiten.push_back(shrunk_whitening(cov, fitted.lambda_shrink));
  return fitted;
}

ScoreVector score_whiten(const FittedScorer& fitted, const Matrix& feats) {
  require(fitted.kind == ScorerKind::whiten, "score_whiten: wrong scorer kind");
  require(feats.cols() == fitted.class_means.cols(),
          "score_whiten: dimension mismatch");
  check_finite(feats, "score_whiten");
  ScoreVector out(feats.rows());
  for (std::size_t i = 0; i < feats.rows(); ++i)
    out[i] =
        -mahalanobis_sq(fitted.whiten.front(), feats.row(i), fitted.class_means.row(0));
  return out;
}

FittedScorer fit_teacher_mds(const FeatureMatrix& teacher_train, double lambda_shrink,
                             bool per_class) {
  FittedScorer fitted = fit_mds(teacher_train, lambda_shrink, per_class);
  fitted.kind = ScorerKind::teacher_mds;
  return fitted;
}

ScoreVector score_teacher_mds(const FittedScorer& fitted, const Matrix& teacher_feats) {
  require(fitted.kind == ScorerKind::teacher_mds,
          "score_teacher_mds: wrong scorer kind");
  return score_mds(fitted, teacher_feats);
}

// --- kNN ------------------------------------------------------------------

namespace {
void normalize_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    const double n = norm2(row);
    if (n > 0.0) scale_in_place(row, 1.0 / n);
  }
}
}  // namespace

FittedScorer fit_knn(const FeatureMatrix& train, int k, bool normalize) {
  train.validate();
  require(k >= 1, "fit_knn: k must be positive");
  if (static_cast<std::size_t>(k) > train.n())
    throw std::invalid_argument("fit_knn: k exceeds training size");
  FittedScorer fitted;
  fitted.kind = ScorerKind::knn;
  fitted.cfg.knn_k = k;
  fitted.cfg.knn_normalize = normalize;
  fitted.knn_store = train.data;
  if (normalize) normalize_rows(fitted.knn_store);
  return fitted;
}

ScoreVector score_knn(const FittedScorer& fitted, const Matrix& feats) {
  require(fitted.kind == ScorerKind::knn, "score_knn: wrong scorer kind");
  require(feats.cols() == fitted.knn_store.cols(), "score_knn: dimension mismatch");
  check_finite(feats, "score_knn");
  const std::size_t n_store = fitted.knn_store.rows();
  const auto k = static_cast<std::size_t>(fitted.cfg.knn_k);
  ScoreVector out(feats.rows());
  std::vector<double> query(feats.cols());
  std::vector<double> dist_sq(n_store);
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    auto row = feats.row(i);
    std::copy(row.begin(), row.end(), query.begin());
    if (fitted.cfg.knn_normalize) {
      const double n = norm2(query);
      if (n > 0.0) scale_in_place(query, 1.0 / n);
    }
    for (std::size_t j = 0; j < n_store; ++j) {
      auto stored = fitted.knn_store.row(j);
      double s = 0.0;
      for (std::size_t t = 0; t < query.size(); ++t) {
        const double diff = query[t] - stored[t];
        s += diff * diff;
      }
      dist_sq[j] = s;
    }
    std::nth_element(dist_sq.begin(), dist_sq.begin() + (k - 1), dist_sq.end());
    out[i] = -std::sqrt(dist_sq[k - 1]);
  }
  return out;
}

// --- ViM --------------------------------------------------------------

namespace {
double vim_residual(const FittedScorer& fitted, std::span<const double> z) {
  std::vector<double> centered = subtract(z, fitted.vim_mean);
  // ||(I - P) v|| with P spanned by the orthonormal principal basis.
  std::vector<double> coeffs = matvec_transposed(fitted.vim_basis, centered);
  std::vector<double> inside = matvec(fitted.vim_basis, coeffs);
  double s = 0.0;
  for (std::size_t i = 0; i < centered.size(); ++i) {
    const double r = centered[i] - inside[i];
    s += r * r;
  }
  return std::sqrt(s);
}
}  // namespace

FittedScorer fit_vim(const FeatureMatrix& train, const Matrix& train_logits,
                     const LinearHead& head, int subspace_dim) {
  train.validate();
  require(train_logits.rows() == train.n(), "fit_vim: logits row mismatch");
  require(head.weight.cols() == train.d(), "fit_vim: head dimension mismatch");
  const std::size_t d = train.d();
  int k = subspace_dim;
  if (k <= 0) k = std::max(1, train.num_classes - 1);
  require(static_cast<std::size_t>(k) < d, "fit_vim: subspace_dim must be below d");

  FittedScorer fitted;
  fitted.kind = ScorerKind::vim;
  fitted.cfg.vim_subspace_dim = k;
  fitted.vim_mean = column_mean(train.data);

  Matrix cov(d, d, 0.0);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < train.n(); ++i) {
    auto row = train.data.row(i);
    for (std::size_t j = 0; j < d; ++j) diff[j] = row[j] - fitted.vim_mean[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) cov(a, b) += diff[a] * diff[b];
  }
  const double inv = 1.0 / static_cast<double>(train.n());
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) *= inv;
      cov(b, a) = cov(a, b);
    }
  EigenDecomposition eig = sym_eig(cov);
  fitted.vim_basis = Matrix(d, static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) fitted.vim_basis(i, j) = eig.eigenvectors(i, j);

  double mean_residual = 0.0;
  for (std::size_t i = 0; i < train.n(); ++i)
    mean_residual += vim_residual(fitted, train.data.row(i));
  mean_residual /= static_cast<double>(train.n());
  if (mean_residual == 0.0)
    throw std::invalid_argument("fit_vim: features fully inside subspace; ViM undefined");

  double mean_max_logit = 0.0;
  for (std::size_t i = 0; i < train_logits.rows(); ++i)
    mean_max_logit += max_entry(train_logits.row(i));
  mean_max_logit /= static_cast<double>(train_logits.rows());

  fitted.vim_alpha = mean_max_logit / mean_residual;
  fitted.head = head;
  return fitted;
}

ScoreVector score_vim(const FittedScorer& fitted, const Matrix& feats,
                      const Matrix& logits) {
  require(fitted.kind == ScorerKind::vim, "score_vim: wrong scorer kind");
  require(feats.rows() == logits.rows(), "score_vim: row count mismatch");
  require(feats.cols() == fitted.vim_mean.size(), "score_vim: dimension mismatch");
  check_finite(feats, "score_vim");
  check_finite(logits, "score_vim");
  ScoreVector out(feats.rows());
  for (std::size_t i = 0; i < feats.rows(); ++i)
    out[i] = logsumexp(logits.row(i)) - fitted.vim_alpha * vim_residual(fitted, feats.row(i));
  return out;
}

// --- activation-shaping scorers ----------------------------------------

FittedScorer fit_react(const Matrix& train_activations, const LinearHead& head,
                       double percentile, bool per_dim) {
  require(percentile > 0.0 && percentile < 100.0,
          "fit_react: percentile outside (0, 100)");
  require(train_activations.rows() >= 1, "fit_react: empty activations");
  require(head.weight.cols() == train_activations.cols(),
          "fit_react: head dimension mismatch");
  check_finite(train_activations, "fit_react");

  FittedScorer fitted;
  fitted.kind = ScorerKind::react;
  fitted.cfg.react_percentile = percentile;
  fitted.cfg.react_per_dim = per_dim;
  fitted.head = head;

  if (per_dim) {
    const std::size_t d = train_activations.cols();
    fitted.react_clamp_per_dim.resize(d);
    std::vector<double> column(train_activations.rows());
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < train_activations.rows(); ++i)
        column[i] = train_activations(i, j);
      fitted.react_clamp_per_dim[j] = percentile_linear(column, percentile);
    }
    fitted.react_clamp = 0.0;
  } else {
    std::vector<double> flat;
    flat.reserve(train_activations.rows() * train_activations.cols());
    for (std::size_t i = 0; i < train_activations.rows(); ++i)
      for (double v : train_activations.row(i)) flat.push_back(v);
    fitted.react_clamp = percentile_linear(std::move(flat), percentile);
  }
  return fitted;
}

ScoreVector score_react(const FittedScorer& fitted, const Matrix& feats) {
  require(fitted.kind == ScorerKind::react, "score_react: wrong scorer kind");
  require(feats.cols() == fitted.head.weight.cols(), "score_react: dimension mismatch");
  check_finite(feats, "score_react");
  ScoreVector out(feats.rows());
  std::vector<double> clamped(feats.cols());
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    auto row = feats.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double cap = fitted.cfg.react_per_dim ? fitted.react_clamp_per_dim[j]
                                                  : fitted.react_clamp;
      clamped[j] = std::min(row[j], cap);
    }
    out[i] = logsumexp(apply_head(fitted.head, clamped));
  }
  return out;
}

ScoreVector score_scale(const Matrix& feats, const LinearHead& head,
                        double percentile) {
  require(percentile > 0.0 && percentile < 100.0,
          "score_scale: percentile outside (0, 100)");
  require(head.weight.cols() == feats.cols(), "score_scale: dimension mismatch");
  check_finite(feats, "score_scale");
  ScoreVector out(feats.rows());
  std::vector<double> rectified(feats.cols());
  std::vector<double> scaled(feats.cols());
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    auto row = feats.row(i);
    double total = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      rectified[j] = std::max(row[j], 0.0);
      total += rectified[j];
    }
    const double cut = percentile_linear(rectified, percentile);
    double kept = 0.0;
    for (double v : rectified)
      if (v >= cut) kept += v;
    if (kept == 0.0)
      throw std::domain_error("score_scale: degenerate activation profile");
    const double s = total / kept;
    const double factor = std::exp(s - 1.0);
    for (std::size_t j = 0; j < rectified.size(); ++j)
      scaled[j] = rectified[j] * factor;
    out[i] = logsumexp(apply_head(head, scaled));
  }
  return out;
}

// --- NCI --------------------------------------------------------------

FittedScorer fit_nci(const FeatureMatrix& train, const LinearHead& head,
                     double gamma) {
  train.validate();
  require(head.weight.cols() == train.d(), "fit_nci: head dimension mismatch");
  FittedScorer fitted;
  fitted.kind = ScorerKind::nci;
  fitted.cfg.nci_gamma = gamma;
  fitted.head = head;
  fitted.nci_mean = column_mean(train.data);
  double total = 0.0;
  for (std::size_t i = 0; i < train.n(); ++i) total += norm2(train.data.row(i));
  fitted.nci_mean_norm = total / static_cast<double>(train.n());
  return fitted;
}

ScoreVector score_nci(const FittedScorer& fitted, const Matrix& feats,
                      const std::vector<int>& predicted_class) {
  require(fitted.kind == ScorerKind::nci, "score_nci: wrong scorer kind");
  require(feats.rows() == predicted_class.size(), "score_nci: prediction count mismatch");
  require(feats.cols() == fitted.nci_mean.size(), "score_nci: dimension mismatch");
  check_finite(feats, "score_nci");
  const auto num_classes = static_cast<int>(fitted.head.weight.rows());
  ScoreVector out(feats.rows());
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    const int c = predicted_class[i];
    require(c >= 0 && c < num_classes, "score_nci: predicted class out of range");
    std::vector<double> centered = subtract(feats.row(i), fitted.nci_mean);
    auto w = fitted.head.weight.row(c);
    const double cn = norm2(centered);
    const double wn = norm2(w);
    double cosine = 0.0;
    if (cn > 0.0 && wn > 0.0) cosine = dot(centered, w) / (cn * wn);
    double norm_term = 0.0;
    if (fitted.nci_mean_norm > 0.0)
      norm_term = fitted.cfg.nci_gamma * norm2(feats.row(i)) / fitted.nci_mean_norm;
    out[i] = cosine + norm_term;
  }
  return out;
}

// --- uniform dispatch ----------------------------------------------------

FittedScorer fit_scorer(ScorerKind kind, const ScorerTrainData& data,
                        const ScorerConfig& cfg) {
  auto need = [&](const void* p, const char* what) {
    if (p == nullptr)
      throw std::invalid_argument("fit_scorer(" + scorer_name(kind) +
                                  "): missing " + what);
  };
  switch (kind) {
    case ScorerKind::msp:
    case ScorerKind::ebo: {
      FittedScorer fitted;
      fitted.kind = kind;
      fitted.cfg = cfg;
      return fitted;
    }
    case ScorerKind::mds: {
      need(data.feats, "train features");
      FittedScorer fitted = fit_mds(*data.feats, cfg.mds_shrink, cfg.mds_per_class);
      return fitted;
    }
    case ScorerKind::knn:
      need(data.feats, "train features");
      return fit_knn(*data.feats, cfg.knn_k, cfg.knn_normalize);
    case ScorerKind::vim:
      need(data.feats, "train features");
      need(data.logits, "train logits");
      need(data.head, "classifier head");
      return fit_vim(*data.feats, *data.logits, *data.head, cfg.vim_subspace_dim);
    case ScorerKind::react:
      need(data.feats, "train features");
      need(data.head, "classifier head");
      return fit_react(data.feats->data, *data.head, cfg.react_percentile,
                       cfg.react_per_dim);
    case ScorerKind::scale: {
      need(data.head, "classifier head");
      FittedScorer fitted;
      fitted.kind = ScorerKind::scale;
      fitted.cfg = cfg;
      fitted.head = *data.head;
      return fitted;
    }
    case ScorerKind::nci:
      need(data.feats, "train features");
      need(data.head, "classifier head");
      return fit_nci(*data.feats, *data.head, cfg.nci_gamma);
    case ScorerKind::whiten:
      need(data.feats, "train features");
      return fit_whiten(*data.feats, cfg.mds_shrink);
    case ScorerKind::teacher_mds:
      need(data.teacher_feats, "teacher features");
      return fit_teacher_mds(*data.teacher_feats, cfg.mds_shrink, cfg.mds_per_class);
  }
  throw std::logic_error("fit_scorer: unknown kind");
}

ScoreVector apply_scorer(const FittedScorer& fitted, const ScorerEvalData& data) {
  auto need = [&](const void* p, const char* what) {
    if (p == nullptr)
      throw std::invalid_argument("apply_scorer(" + scorer_name(fitted.kind) +
                                  "): missing " + what);
  };
  switch (fitted.kind) {
    case ScorerKind::msp:
      need(data.logits, "logits");
      return score_msp(*data.logits);
    case ScorerKind::ebo:
      need(data.logits, "logits");
      return score_energy(*data.logits, fitted.cfg.energy_temperature);
    case ScorerKind::mds:
      need(data.feats, "features");
      return score_mds(fitted, *data.feats);
    case ScorerKind::knn:
      need(data.feats, "features");
      return score_knn(fitted, *data.feats);
    case ScorerKind::vim:
      need(data.feats, "features");
      need(data.logits, "logits");
      return score_vim(fitted, *data.feats, *data.logits);
    case ScorerKind::react:
      need(data.feats, "features");
      return score_react(fitted, *data.feats);
    case ScorerKind::scale:
      need(data.feats, "features");
      return score_scale(*data.feats, fitted.head, fitted.cfg.scale_percentile);
    case ScorerKind::nci: {
      need(data.feats, "features");
      need(data.logits, "logits");
      std::vector<int> predicted(data.logits->rows());
      for (std::size_t i = 0; i < data.logits->rows(); ++i)
        predicted[i] = argmax_row(data.logits->row(i));
      return score_nci(fitted, *data.feats, predicted);
    }
    case ScorerKind::whiten:
      need(data.feats, "features");
      return score_whiten(fitted, *data.feats);
    case ScorerKind::teacher_mds:
      need(data.teacher_feats, "teacher features");
      return score_teacher_mds(fitted, *data.teacher_feats);
  }
  throw std::logic_error("apply_scorer: unknown kind");
}

// --- serialization --------------------------------------------------------

namespace {

void write_matrix(BinaryWriter& w, const Matrix& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.f64_array(m.data(), m.rows() * m.cols());
}

Matrix read_matrix(BinaryReader& r) {
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  Matrix m(rows, cols);
  r.f64_array(m.data(), static_cast<std::size_t>(rows) * cols);
  return m;
}

void write_vector(BinaryWriter& w, const std::vector<double>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.f64_array(v.data(), v.size());
}

std::vector<double> read_vector(BinaryReader& r) {
  std::vector<double> v(r.u32());
  r.f64_array(v.data(), v.size());
  return v;
}

}  // namespace

void save_scorer(const FittedScorer& fitted, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  BinaryWriter w(out);
  w.magic("DSCS");
  w.u32(static_cast<std::uint32_t>(fitted.kind));

  const ScorerConfig& c = fitted.cfg;
  w.f64(c.energy_temperature);
  w.f64(c.mds_shrink);
  w.u32(c.mds_per_class ? 1 : 0);
  w.i32(c.knn_k);
  w.u32(c.knn_normalize ? 1 : 0);
  w.i32(c.vim_subspace_dim);
  w.f64(c.react_percentile);
  w.u32(c.react_per_dim ? 1 : 0);
  w.f64(c.scale_percentile);
  w.f64(c.nci_gamma);

  write_matrix(w, fitted.class_means);
  w.f64(fitted.lambda_shrink);
  w.u32(static_cast<std::uint32_t>(fitted.whiten.size()));
  for (const auto& wh : fitted.whiten) {
    write_matrix(w, wh.basis);
    write_vector(w, wh.inv_eigs);
  }
  write_matrix(w, fitted.knn_store);
  write_vector(w, fitted.vim_mean);
  write_matrix(w, fitted.vim_basis);
  w.f64(fitted.vim_alpha);
  w.f64(fitted.react_clamp);
  write_vector(w, fitted.react_clamp_per_dim);
  write_vector(w, fitted.nci_mean);
  w.f64(fitted.nci_mean_norm);
  write_matrix(w, fitted.head.weight);
  write_vector(w, fitted.head.bias);
  if (!out) throw std::runtime_error("write failed: " + path);
}

FittedScorer load_scorer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  BinaryReader r(in);
  r.expect_magic("DSCS");
  FittedScorer fitted;
  fitted.kind = static_cast<ScorerKind>(r.u32());

  ScorerConfig& c = fitted.cfg;
  c.energy_temperature = r.f64();
  c.mds_shrink = r.f64();
  c.mds_per_class = r.u32() != 0;
  c.knn_k = r.i32();
  c.knn_normalize = r.u32() != 0;
  c.vim_subspace_dim = r.i32();
  c.react_percentile = r.f64();
  c.react_per_dim = r.u32() != 0;
  c.scale_percentile = r.f64();
  c.nci_gamma = r.f64();

  fitted.class_means = read_matrix(r);
  fitted.lambda_shrink = r.f64();
  const std::uint32_t n_whiten = r.u32();
  fitted.whiten.resize(n_whiten);
  for (auto& wh : fitted.whiten) {
    wh.basis = read_matrix(r);
    wh.inv_eigs = read_vector(r);
  }
  fitted.knn_store = read_matrix(r);
  fitted.vim_mean = read_vector(r);
  fitted.vim_basis = read_matrix(r);
  fitted.vim_alpha = r.f64();
  fitted.react_clamp = r.f64();
  fitted.react_clamp_per_dim = read_vector(r);
  fitted.nci_mean = read_vector(r);
  fitted.nci_mean_norm = r.f64();
  fitted.head.weight = read_matrix(r);
  fitted.head.bias = read_vector(r);
  return fitted;
}

}  // namespace dsclab
