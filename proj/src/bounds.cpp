#include "dsclab/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dsclab/io.hpp"
#include "dsclab/metrics.hpp"
#include "dsclab/rng.hpp"

namespace dsclab {

double estimate_tau_sq(const FeatureMatrix& feats, const Projector& p) {
  return orthogonal_energy(feats, p).mean;
}

double estimate_eps(const FeatureMatrix& id_feats, const FeatureMatrix& ood_feats,
                    const Projector& p, int n_pairs, std::uint64_t seed) {
  if (n_pairs < 1) throw std::invalid_argument("n_pairs must be >= 1");
  if (id_feats.n() == 0 || ood_feats.n() == 0) {
    throw std::invalid_argument("empty feature set");
  }
  if (id_feats.d() != p.dim() || ood_feats.d() != p.dim()) {
    throw std::invalid_argument("projector dim mismatch");
  }
  Rng rng(derive_stream(seed, Stage::bound_pairs));
  double acc = 0.0;
  for (int k = 0; k < n_pairs; ++k) {
    const std::size_t i = static_cast<std::size_t>(rng.below(id_feats.n()));
    const std::size_t j = static_cast<std::size_t>(rng.below(ood_feats.n()));
    const std::vector<double> pi = p.apply(id_feats.data.row(i));
    const std::vector<double> pj = p.apply(ood_feats.data.row(j));
    double sq = 0.0;
    for (std::size_t c = 0; c < pi.size(); ++c) {
      const double dcomp = pi[c] - pj[c];
      sq += dcomp * dcomp;
    }
    acc += std::sqrt(sq);
  }
  return acc / static_cast<double>(n_pairs);
}

namespace {

// Top eigenvalue of a symmetric PSD operator given by its matvec. Power
// iteration, seeded start vector, 200 iterations or relative change < 1e-12.
double top_eigenvalue(std::size_t dim,
                      const std::function<std::vector<double>(const std::vector<double>&)>& apply) {
  Rng rng(derive_stream(0xb0d5u, Stage::power_iteration, dim));
  std::vector<double> v = rng.unit_vector(dim);
  double lambda_prev = -1.0;
  for (int it = 0; it < 200; ++it) {
    std::vector<double> av = apply(v);
    double vav = 0.0;
    for (std::size_t i = 0; i < dim; ++i) vav += v[i] * av[i];
    const double lambda = vav;  // v is unit
    double norm_sq = 0.0;
    for (double x : av) norm_sq += x * x;
    const double norm = std::sqrt(norm_sq);
    if (norm == 0.0) return 0.0;  // operator annihilates v; PSD top eig is 0
    for (std::size_t i = 0; i < dim; ++i) v[i] = av[i] / norm;
    if (lambda_prev >= 0.0 &&
        std::abs(lambda - lambda_prev) <= 1e-12 * std::max(lambda, 1e-300)) {
      return std::max(lambda, 0.0);
    }
    lambda_prev = lambda;
  }
  return std::max(lambda_prev, 0.0);
}

}  // namespace

double estimate_eta(const Matrix& head_weight, const Projector& p) {
  if (head_weight.cols() != p.dim()) {
    throw std::invalid_argument("head/projector dim mismatch");
  }
  const auto apply = [&](const std::vector<double>& x) {
    const std::vector<double> px = p.complement(x);
    const std::vector<double> wx = matvec(head_weight, px);
    const std::vector<double> wtwx = matvec_transposed(head_weight, wx);
    return p.complement(wtwx);
  };
  return std::sqrt(top_eigenvalue(head_weight.cols(), apply));
}

double operator_norm(const Matrix& w) {
  const auto apply = [&](const std::vector<double>& x) {
    const std::vector<double> wx = matvec(w, x);
    return matvec_transposed(w, wx);
  };
  return std::sqrt(top_eigenvalue(w.cols(), apply));
}

namespace {

// Equalize sample counts by seeded subsampling of the larger set (without
// replacement), then W1 between the two samples.
double w1_equalized(ScoreVector a, ScoreVector b, std::uint64_t seed) {
  Rng rng(derive_stream(seed, Stage::bound_subsample));
  const auto subsample = [&rng](ScoreVector& v, std::size_t target) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    ScoreVector out(target);
    for (std::size_t i = 0; i < target; ++i) out[i] = v[idx[i]];
    v = std::move(out);
  };
  if (a.size() > b.size()) {
    subsample(a, b.size());
  } else if (b.size() > a.size()) {
    subsample(b, a.size());
  }
  return wasserstein1(a, b);
}

double observed_range(const ScoreVector& a, const ScoreVector& b) {
  double lo = a[0], hi = a[0];
  for (double v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : b) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi - lo;
}

void finalize(BoundReport& r, const ScoreVector& id_scores, const ScoreVector& ood_scores) {
  r.holds = r.lhs_w1 <= r.rhs + 1e-9;
  r.regime = r.rhs > observed_range(id_scores, ood_scores) ? "vacuous" : "normal";
}

}  // namespace

BoundReport check_theorem1(const FeatureMatrix& id_feats,
                           const FeatureMatrix& ood_feats,
                           const FittedScorer& knn_scorer, const Projector& p,
                           int n_pairs, std::uint64_t seed) {
  if (knn_scorer.kind != ScorerKind::knn) {
    throw std::invalid_argument("check_theorem1 needs a knn scorer");
  }
  if (knn_scorer.cfg.knn_normalize) {
    throw std::invalid_argument(
        "distance bound needs raw Euclidean knn (knn_normalize = false)");
  }

  BoundReport r;
  r.score = "knn";
  r.l_k = 1.0;
  r.l_s = 0.0;
  r.tau_sq_id = estimate_tau_sq(id_feats, p);
  r.tau_sq_ood = estimate_tau_sq(ood_feats, p);
  r.eps_hat = estimate_eps(id_feats, ood_feats, p, n_pairs, seed);

  const ScoreVector id_scores = score_knn(knn_scorer, id_feats.data);
  const ScoreVector ood_scores = score_knn(knn_scorer, ood_feats.data);
  r.lhs_w1 = w1_equalized(id_scores, ood_scores, seed);
  r.rhs = r.l_k * r.eps_hat + 4.0 * r.l_k * std::max(r.tau_sq_id, r.tau_sq_ood);
  finalize(r, id_scores, ood_scores);
  return r;
}

BoundReport check_prop1(const FeatureMatrix& id_feats, const FeatureMatrix& ood_feats,
                        const LinearHead& head, const Projector& p, LogitScore score,
                        int n_pairs, std::uint64_t seed) {
  if (head.weight.cols() != id_feats.d() || id_feats.d() != ood_feats.d()) {
    throw std::invalid_argument("head/feature dim mismatch");
  }

  BoundReport r;
  r.score = score == LogitScore::energy ? "energy" : "msp";
  r.l_k = 0.0;
  r.l_s = score == LogitScore::energy ? 1.0 : 2.0;
  r.tau_sq_id = estimate_tau_sq(id_feats, p);
  r.tau_sq_ood = estimate_tau_sq(ood_feats, p);
  r.eps_hat = estimate_eps(id_feats, ood_feats, p, n_pairs, seed);
  r.eta_hat = estimate_eta(head.weight, p);
  r.w_op = operator_norm(head.weight);

  const auto logits_of = [&head](const FeatureMatrix& f) {
    Matrix logits(f.n(), head.weight.rows());
    for (std::size_t i = 0; i < f.n(); ++i) {
      const std::vector<double> row = matvec(head.weight, f.data.row(i));
      for (std::size_t c = 0; c < row.size(); ++c) logits(i, c) = row[c] + head.bias[c];
    }
    return logits;
  };
  const Matrix id_logits = logits_of(id_feats);
  const Matrix ood_logits = logits_of(ood_feats);
  const ScoreVector id_scores =
      score == LogitScore::energy ? score_energy(id_logits) : score_msp(id_logits);
  const ScoreVector ood_scores =
      score == LogitScore::energy ? score_energy(ood_logits) : score_msp(ood_logits);

  r.lhs_w1 = w1_equalized(id_scores, ood_scores, seed);
  r.rhs = r.w_op * r.eps_hat +
          r.l_s * r.eta_hat * std::sqrt(std::max(r.tau_sq_id, r.tau_sq_ood));
  finalize(r, id_scores, ood_scores);
  return r;
}

std::string bound_report_csv_header() {
  return "instance,score,tau_sq_id,tau_sq_ood,eps_hat,eta_hat,w_op,l_k,l_s,"
         "lhs_w1,rhs,holds,regime";
}

std::string bound_report_csv_row(const std::string& instance, const BoundReport& r) {
  std::ostringstream out;
  out << instance << ',' << r.score << ',' << format_double(r.tau_sq_id) << ','
      << format_double(r.tau_sq_ood) << ',' << format_double(r.eps_hat) << ','
      << format_double(r.eta_hat) << ',' << format_double(r.w_op) << ','
      << format_double(r.l_k) << ',' << format_double(r.l_s) << ','
      << format_double(r.lhs_w1) << ',' << format_double(r.rhs) << ','
      << (r.holds ? 1 : 0) << ',' << r.regime;
  return out.str();
}

}  // namespace dsclab
