#include "dsclab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dsclab {

namespace {

std::vector<double> sorted(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

double fpr_at_tpr(std::span<const double> id_scores,
                  std::span<const double> ood_scores, double tpr) {
  if (id_scores.empty() || ood_scores.empty())
    throw std::invalid_argument("fpr_at_tpr: empty input");
  if (!(tpr > 0.0 && tpr < 1.0))
    throw std::invalid_argument("fpr_at_tpr: tpr must lie in (0, 1)");

  const std::vector<double> ood = sorted(ood_scores);
  const std::size_t n_ood = ood.size();
  // ceil(tpr * n) as the 1-indexed order statistic; detecting score <= t then
  // catches at least that many OOD samples.
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(tpr * static_cast<double>(n_ood)));
  rank = std::clamp<std::size_t>(rank, 1, n_ood);
  const double threshold = ood[rank - 1];

  std::size_t false_positives = 0;
  for (double s : id_scores)
    if (s <= threshold) ++false_positives;
  return static_cast<double>(false_positives) / static_cast<double>(id_scores.size());
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty())
    throw std::invalid_argument("auroc: empty input");
  const std::vector<double> id = sorted(id_scores);
  const std::vector<double> ood = sorted(ood_scores);

  // For each OOD score, count ID scores strictly above plus half the ties.
  // Two-pointer merge keeps this O((n+m) log(n+m)) including the sorts.
  double favorable = 0.0;
  std::size_t below = 0;  // id values < current ood value
  std::size_t tied_end = 0;
  for (double o : ood) {
    while (below < id.size() && id[below] < o) ++below;
    if (tied_end < below) tied_end = below;
    while (tied_end < id.size() && id[tied_end] == o) ++tied_end;
    const auto ties = static_cast<double>(tied_end - below);
    favorable += static_cast<double>(id.size() - tied_end) + 0.5 * ties;
  }
  return favorable / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

double aupr(std::span<const double> scores_pos, std::span<const double> scores_neg,
            bool positive_is_high) {
  if (scores_pos.empty() || scores_neg.empty())
    throw std::invalid_argument("aupr: empty input");

  // Normalize to the "higher = flagged positive" orientation.
  std::vector<double> pos(scores_pos.begin(), scores_pos.end());
  std::vector<double> neg(scores_neg.begin(), scores_neg.end());
  if (!positive_is_high) {
    for (double& v : pos) v = -v;
    for (double& v : neg) v = -v;
  }
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());

  // Sweep thresholds downward over all distinct scores; at each step the
  // flagged set grows by every sample tied at that threshold.
  const double total_pos = static_cast<double>(pos.size());
  std::size_t ip = 0;
  std::size_t in = 0;
  double ap = 0.0;
  double prev_recall = 0.0;
  while (ip < pos.size() || in < neg.size()) {
    double t;
    if (ip < pos.size() && in < neg.size())
      t = std::max(pos[ip], neg[in]);
    else if (ip < pos.size())
      t = pos[ip];
    else
      t = neg[in];
    while (ip < pos.size() && pos[ip] == t) ++ip;
    while (in < neg.size() && neg[in] == t) ++in;
    const double recall = static_cast<double>(ip) / total_pos;
    const double flagged = static_cast<double>(ip + in);
    if (flagged > 0.0 && recall > prev_recall) {
      const double precision = static_cast<double>(ip) / flagged;
      ap += (recall - prev_recall) * precision;
    }
    prev_recall = recall;
  }
  return ap;
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("wasserstein1: empty input");
  const std::vector<double> sa = sorted(a);
  const std::vector<double> sb = sorted(b);

  if (sa.size() == sb.size()) {
    double total = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) total += std::fabs(sa[i] - sb[i]);
    return total / static_cast<double>(sa.size());
  }

  // Quantile functions are right-continuous steps at heights i/n. Integrate
  // |Fa^{-1}(u) - Fb^{-1}(u)| du over segments between merged breakpoints;
  // both quantile functions are constant inside each segment.
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  double total = 0.0;
  double u = 0.0;
  std::size_t ia = 0;
  std::size_t ib = 0;
  while (u < 1.0) {
    const double next_a = static_cast<double>(ia + 1) / na;
    const double next_b = static_cast<double>(ib + 1) / nb;
    const double next = std::min(next_a, next_b);
    total += (next - u) * std::fabs(sa[ia] - sb[ib]);
    if (next_a <= next) ++ia;
    if (next_b <= next) ++ib;
    u = next;
    if (ia >= sa.size() || ib >= sb.size()) break;
  }
  return total;
}

EvalRecord evaluate_scores(std::span<const double> id_scores,
                           std::span<const double> ood_scores) {
  EvalRecord rec;
  rec.fpr_at_95 = fpr_at_tpr(id_scores, ood_scores, 0.95);
  rec.fpr_at_98 = fpr_at_tpr(id_scores, ood_scores, 0.98);
  rec.auroc = auroc(id_scores, ood_scores);
  rec.aupr_in = aupr(id_scores, ood_scores, /*positive_is_high=*/true);
  rec.aupr_out = aupr(ood_scores, id_scores, /*positive_is_high=*/false);
  rec.n_id = id_scores.size();
  rec.n_ood = ood_scores.size();
  return rec;
}

}  // namespace dsclab
