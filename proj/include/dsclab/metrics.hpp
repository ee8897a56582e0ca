#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dsclab {

// Score orientation everywhere in this project: higher score = more ID.
// OOD is the positive (detected) class; a detector fires on score <= t.
using ScoreVector = std::vector<double>;

// False-positive rate of ID samples at the threshold achieving at least the
// requested true-positive rate on OOD samples. The threshold is the
// ceil(tpr * n_ood)-th smallest OOD score with an inclusive (<=) detection
// rule, so the achieved TPR is always >= tpr. Requires 0 < tpr < 1 and
// nonempty inputs.
double fpr_at_tpr(std::span<const double> id_scores,
                  std::span<const double> ood_scores, double tpr);

// P(ID score > OOD score) + 0.5 P(equal), computed by sorting.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// Average precision: sum (R_i - R_{i-1}) * P_i over distinct thresholds.
// positive_is_high selects which tail flags a positive: true means a sample
// is flagged positive when its score >= threshold, false when <= threshold.
double aupr(std::span<const double> scores_pos, std::span<const double> scores_neg,
            bool positive_is_high);

// Empirical 1-D Wasserstein-1. Equal sizes: mean absolute difference of
// sorted samples. Unequal: exact piecewise-constant integration of the
// quantile-function gap over merged breakpoints.
double wasserstein1(std::span<const double> a, std::span<const double> b);

struct EvalRecord {
  double fpr_at_95 = 0.0;
  double fpr_at_98 = 0.0;
  double auroc = 0.0;
  double aupr_in = 0.0;   // ID positive, higher score positive
  double aupr_out = 0.0;  // OOD positive, lower score positive
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
};

EvalRecord evaluate_scores(std::span<const double> id_scores,
                           std::span<const double> ood_scores);

}  // namespace dsclab
