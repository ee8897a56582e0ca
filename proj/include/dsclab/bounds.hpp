#pragma once

#include <cstdint>
#include <string>

#include "dsclab/scorers.hpp"
#include "dsclab/specmath.hpp"
#include "dsclab/types.hpp"

namespace dsclab {

// Numeric audit of two score-shift inequalities. Every constant is a plug-in
// estimate from data or model weights; the report records all of them next to
// the measured left side so a violation is inspectable.
struct BoundReport {
  std::string score;       // knn | energy | msp
  double tau_sq_id = 0.0;  // mean squared feature mass outside the subspace
  double tau_sq_ood = 0.0;
  double eps_hat = 0.0;    // projected ID-vs-OOD discrepancy
  double eta_hat = 0.0;    // ||W P_perp||_op (logit bounds only)
  double w_op = 0.0;       // ||W||_op (logit bounds only)
  double l_k = 1.0;        // distance-score Lipschitz constant
  double l_s = 0.0;        // logit-score Lipschitz constant (1 energy, 2 msp)
  double lhs_w1 = 0.0;     // W1 between ID and OOD score samples
  double rhs = 0.0;
  bool holds = false;           // lhs_w1 <= rhs + 1e-9
  std::string regime = "normal";  // "vacuous" when rhs exceeds the score range
};

// Mean squared norm of the feature component orthogonal to the projector
// range; the tail-energy plug-in.
double estimate_tau_sq(const FeatureMatrix& feats, const Projector& p);

// Monte-Carlo mean of ||P z_id - P z_ood|| over n_pairs seeded unpaired
// draws. The underlying quantity is a distributional discrepancy, so pairs
// are independent uniform picks, not a coupling.
double estimate_eps(const FeatureMatrix& id_feats, const FeatureMatrix& ood_feats,
                    const Projector& p, int n_pairs, std::uint64_t seed);

// Largest singular value of W * P_perp via power iteration on the Gram
// operator (200 iterations or relative change < 1e-12).
double estimate_eta(const Matrix& head_weight, const Projector& p);

// Largest singular value of W, same routine without the projector.
double operator_norm(const Matrix& w);

// W1(knn scores on ID, knn scores on OOD) <= L_k eps + 4 L_k max(tau_sq),
// L_k = 1. The kNN scorer must be fitted on ID train with raw Euclidean
// distances (knn_normalize = false); normalization would break the
// 1-Lipschitz premise, so a normalized scorer is rejected.
BoundReport check_theorem1(const FeatureMatrix& id_feats,
                           const FeatureMatrix& ood_feats,
                           const FittedScorer& knn_scorer, const Projector& p,
                           int n_pairs = 10000, std::uint64_t seed = 1);

enum class LogitScore { energy, msp };

// W1(logit scores) <= ||W||_op eps + L_S eta sqrt(max tau_sq), with L_S = 1
// for the energy score and 2 for MSP.
BoundReport check_prop1(const FeatureMatrix& id_feats, const FeatureMatrix& ood_feats,
                        const LinearHead& head, const Projector& p, LogitScore score,
                        int n_pairs = 10000, std::uint64_t seed = 1);

// bounds.csv framing; the harness prefixes an instance id per row.
std::string bound_report_csv_header();
std::string bound_report_csv_row(const std::string& instance, const BoundReport& r);

}  // namespace dsclab
