#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dsclab/metrics.hpp"
#include "dsclab/rng.hpp"

using namespace dsclab;

// ---------------------------------------------------------------------------
// Oracles: brute-force counterparts of every metric, written straight from
// the definitions with no shared code.
// ---------------------------------------------------------------------------

namespace {

// AUROC by counting all (id, ood) pairs, halving ties.
double oracle_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0.0;
  for (double a : id)
    for (double b : ood) {
      if (a > b) wins += 1.0;
      else if (a == b) wins += 0.5;
    }
  return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// FPR@tpr by scanning every candidate threshold (every ood score), keeping
// thresholds that reach the requested TPR with the inclusive (score <= t)
// rule and taking the smallest resulting FPR.
double oracle_fpr_at_tpr(const std::vector<double>& id, const std::vector<double>& ood,
                         double tpr) {
  double best = 1.0;
  bool found = false;
  for (double t : ood) {
    std::size_t tp = 0;
    for (double b : ood)
      if (b <= t) ++tp;
    if (static_cast<double>(tp) < tpr * static_cast<double>(ood.size())) continue;
    std::size_t fp = 0;
    for (double a : id)
      if (a <= t) ++fp;
    const double fpr = static_cast<double>(fp) / static_cast<double>(id.size());
    if (!found || fpr < best) best = fpr;
    found = true;
  }
  REQUIRE(found);
  return best;
}

// W1 by dense quantile sampling; grid fine enough for 1e-3 agreement.
double oracle_w1(std::vector<double> a, std::vector<double> b, int grid = 2000000) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto quant = [](const std::vector<double>& v, double u) {
    // Left-continuous empirical quantile: inf{x : F(x) >= u}.
    const std::size_t idx = std::min(
        v.size() - 1, static_cast<std::size_t>(std::ceil(u * v.size()) - 1));
    return v[idx];
  };
  double acc = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double u = (i + 0.5) / grid;
    acc += std::fabs(quant(a, u) - quant(b, u));
  }
  return acc / grid;
}

// Average precision from the explicit precision-recall staircase, positives
// flagged at score >= threshold, thresholds descending over distinct scores.
double oracle_ap_high(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<double> thresholds = pos;
  thresholds.insert(thresholds.end(), neg.begin(), neg.end());
  std::sort(thresholds.rbegin(), thresholds.rend());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double ap = 0.0;
  double prev_recall = 0.0;
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (double s : pos)
      if (s >= t) ++tp;
    for (double s : neg)
      if (s >= t) ++fp;
    const double recall = static_cast<double>(tp) / static_cast<double>(pos.size());
    const double precision =
        tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

std::vector<double> random_scores(Rng& rng, std::size_t n, double shift = 0.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() + shift;
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// fpr_at_tpr
// ---------------------------------------------------------------------------

TEST_CASE("perfect separation gives FPR 0") {
  const std::vector<double> id = {5.0, 6.0, 7.0};
  const std::vector<double> ood = {1.0, 2.0, 3.0};
  CHECK(fpr_at_tpr(id, ood, 0.95) == 0.0);
}

TEST_CASE("identical samples: FPR equals the shared order statistic fraction") {
  // threshold = ceil(0.95 * 20) = 19th smallest; inclusive rule catches 19 of
  // the identical ID scores as well.
  std::vector<double> scores(20);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>(i);
  CHECK(fpr_at_tpr(scores, scores, 0.95) == doctest::Approx(19.0 / 20.0));
}

TEST_CASE("fpr_at_tpr equals the exhaustive threshold scan on 500 random cases") {
  Rng rng(101);
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = 2 + rng.below(40);
    const std::size_t m = 2 + rng.below(40);
    const std::vector<double> id = random_scores(rng, n, 0.5);
    const std::vector<double> ood = random_scores(rng, m, -0.5);
    const double tpr = 0.5 + 0.45 * rng.uniform();
    CHECK(fpr_at_tpr(id, ood, tpr) ==
          doctest::Approx(oracle_fpr_at_tpr(id, ood, tpr)).epsilon(1e-12));
  }
}

TEST_CASE("fpr_at_tpr validates its inputs") {
  const std::vector<double> ok = {1.0};
  CHECK_THROWS_AS((void)fpr_at_tpr({}, ok, 0.95), std::invalid_argument);
  CHECK_THROWS_AS((void)fpr_at_tpr(ok, ok, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)fpr_at_tpr(ok, ok, 1.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// auroc
// ---------------------------------------------------------------------------

TEST_CASE("identical multisets score exactly one half") {
  Rng rng(111);
  const std::vector<double> v = random_scores(rng, 37);
  CHECK(auroc(v, v) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("perfect separation scores one") {
  const std::vector<double> id = {10.0, 11.0};
  const std::vector<double> ood = {1.0, 2.0, 3.0};
  CHECK(auroc(id, ood) == 1.0);
}

TEST_CASE("auroc equals pairwise brute force on 500 random cases") {
  Rng rng(112);
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = 1 + rng.below(50);
    const std::size_t m = 1 + rng.below(50);
    std::vector<double> id = random_scores(rng, n);
    std::vector<double> ood = random_scores(rng, m);
    // force some exact ties to exercise the half-credit path
    if (n > 2 && m > 2) {
      id[0] = ood[0];
      id[1] = ood[1];
    }
    CHECK(auroc(id, ood) == doctest::Approx(oracle_auroc(id, ood)).epsilon(1e-12));
  }
}

// ---------------------------------------------------------------------------
// aupr
// ---------------------------------------------------------------------------

TEST_CASE("aupr of perfect separation is one") {
  const std::vector<double> pos = {5.0, 6.0};
  const std::vector<double> neg = {1.0, 2.0};
  CHECK(aupr(pos, neg, true) == doctest::Approx(1.0));
}

TEST_CASE("aupr at chance is near the positive prevalence") {
  Rng rng(121);
  const std::vector<double> v = random_scores(rng, 400);
  const double ap = aupr(v, v, true);
  CHECK(ap > 0.5 - 0.05);
  CHECK(ap < 0.5 + 0.05);
}

TEST_CASE("aupr matches the hand staircase on a small case") {
  // pos scores {3, 1, 0.5}, neg {2, 0.4, 0.3}: thresholds 3,2,1,0.5,0.4,0.3.
  const std::vector<double> pos = {3.0, 1.0, 0.5};
  const std::vector<double> neg = {2.0, 0.4, 0.3};
  CHECK(aupr(pos, neg, true) ==
        doctest::Approx(oracle_ap_high(pos, neg)).epsilon(1e-12));
  // hand value: R 1/3 at P 1, then P 1/2 (no recall change), R 2/3 at P 2/3,
  // R 1 at P 3/4 -> AP = 1/3 * 1 + 1/3 * 2/3 + 1/3 * 3/4
  CHECK(aupr(pos, neg, true) ==
        doctest::Approx(1.0 / 3.0 + 2.0 / 9.0 + 0.25).epsilon(1e-12));
}

TEST_CASE("aupr: low-tail orientation mirrors negated high-tail") {
  Rng rng(122);
  std::vector<double> pos = random_scores(rng, 25, -0.5);
  std::vector<double> neg = random_scores(rng, 30, 0.5);
  std::vector<double> neg_pos = pos, neg_neg = neg;
  for (double& v : neg_pos) v = -v;
  for (double& v : neg_neg) v = -v;
  CHECK(aupr(pos, neg, false) ==
        doctest::Approx(aupr(neg_pos, neg_neg, true)).epsilon(1e-12));
}

TEST_CASE("aupr equals the staircase oracle on 200 random cases") {
  Rng rng(123);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(30);
    const std::size_t m = 1 + rng.below(30);
    std::vector<double> pos = random_scores(rng, n, 0.3);
    std::vector<double> neg = random_scores(rng, m, -0.3);
    if (n > 1 && m > 1) pos[0] = neg[0];  // tie coverage
    CHECK(aupr(pos, neg, true) ==
          doctest::Approx(oracle_ap_high(pos, neg)).epsilon(1e-12));
  }
}

// ---------------------------------------------------------------------------
// wasserstein1
// ---------------------------------------------------------------------------

TEST_CASE("same multiset has distance zero") {
  const std::vector<double> a = {3.0, -1.0, 2.0, 2.0};
  std::vector<double> b = a;
  std::reverse(b.begin(), b.end());
  CHECK(wasserstein1(a, b) == 0.0);
}

TEST_CASE("translation by c moves W1 by exactly |c|") {
  Rng rng(131);
  const std::vector<double> a = random_scores(rng, 48);
  std::vector<double> b = a;
  for (double& v : b) v += -2.75;
  CHECK(wasserstein1(a, b) == doctest::Approx(2.75).epsilon(1e-12));
}

TEST_CASE("explicit 3 vs 5 case matches the quantile oracle") {
  const std::vector<double> a = {0.0, 1.0, 4.0};
  const std::vector<double> b = {-1.0, 0.5, 2.0, 2.5, 6.0};
  CHECK(wasserstein1(a, b) == doctest::Approx(oracle_w1(a, b)).epsilon(1e-3));
}

TEST_CASE("unequal random sizes match the quantile oracle to 1e-3") {
  Rng rng(132);
  for (int rep = 0; rep < 10; ++rep) {
    const std::vector<double> a = random_scores(rng, 3 + rng.below(20));
    const std::vector<double> b = random_scores(rng, 3 + rng.below(20), 0.7);
    CHECK(wasserstein1(a, b) == doctest::Approx(oracle_w1(a, b)).epsilon(1e-3));
  }
}

TEST_CASE("equal sizes agree with sorted mean absolute difference") {
  Rng rng(133);
  std::vector<double> a = random_scores(rng, 64);
  std::vector<double> b = random_scores(rng, 64, 0.4);
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double mean = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) mean += std::fabs(sa[i] - sb[i]);
  mean /= static_cast<double>(sa.size());
  CHECK(wasserstein1(a, b) == doctest::Approx(mean).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// evaluate_scores
// ---------------------------------------------------------------------------

TEST_CASE("evaluate_scores bundles the individual metrics") {
  Rng rng(141);
  const std::vector<double> id = random_scores(rng, 80, 1.0);
  const std::vector<double> ood = random_scores(rng, 90, -1.0);
  const EvalRecord rec = evaluate_scores(id, ood);
  CHECK(rec.fpr_at_95 == doctest::Approx(fpr_at_tpr(id, ood, 0.95)));
  CHECK(rec.fpr_at_98 == doctest::Approx(fpr_at_tpr(id, ood, 0.98)));
  CHECK(rec.auroc == doctest::Approx(auroc(id, ood)));
  CHECK(rec.aupr_in == doctest::Approx(aupr(id, ood, true)));
  CHECK(rec.aupr_out == doctest::Approx(aupr(ood, id, false)));
  CHECK(rec.n_id == 80);
  CHECK(rec.n_ood == 90);
}
