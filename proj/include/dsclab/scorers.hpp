#pragma once

#include <string>
#include <vector>

#include "dsclab/types.hpp"

namespace dsclab {

using ScoreVector = std::vector<double>;

enum class ScorerKind {
  msp,
  ebo,
  mds,
  knn,
  vim,
  react,
  scale,
  nci,
  whiten,
  teacher_mds,
};

const std::vector<ScorerKind>& all_scorer_kinds();
std::string scorer_name(ScorerKind kind);
ScorerKind scorer_from_name(const std::string& name);  // throws on unknown name

// Classifier head: logits = weight * z + bias, weight is C x d_feat.
struct LinearHead {
  Matrix weight;
  std::vector<double> bias;
};

// Knobs for fitting; unset/defaulted fields match the documented defaults.
struct ScorerConfig {
  double energy_temperature = 1.0;
  double mds_shrink = -1.0;   // <= 0 selects 1e-3 * mean covariance eigenvalue
  bool mds_per_class = false;
  int knn_k = 10;
  bool knn_normalize = true;
  int vim_subspace_dim = -1;  // <= 0 selects C - 1
  double react_percentile = 90.0;
  bool react_per_dim = false;
  double scale_percentile = 85.0;
  double nci_gamma = 0.1;
};

// Shared numeric helpers (stable against large logits).
double logsumexp(std::span<const double> v);
std::vector<double> softmax(std::span<const double> logits);
// Percentile with linear interpolation between order statistics (the numpy
// convention): p in [0, 100], values need not be sorted.
double percentile_linear(std::vector<double> values, double p);

// One fitted post-hoc scorer. Which state blocks are populated depends on the
// variant; dimensions are validated when fitting and when loading.
struct FittedScorer {
  ScorerKind kind = ScorerKind::msp;
  ScorerConfig cfg;

  // mds / whiten / teacher_mds: Gaussian state. Pooled mode stores one
  // whitening; per-class mode stores one per class.
  struct Whitening {
    Matrix basis;                  // d x d eigenvectors of the raw covariance
    std::vector<double> inv_eigs;  // 1 / (eigenvalue + lambda_shrink)
  };
  Matrix class_means;  // C x d
  double lambda_shrink = 0.0;
  std::vector<Whitening> whiten;

  // knn
  Matrix knn_store;  // stored (optionally normalized) training rows

  // vim
  std::vector<double> vim_mean;
  Matrix vim_basis;  // d x subspace_dim
  double vim_alpha = 0.0;

  // react
  double react_clamp = 0.0;
  std::vector<double> react_clamp_per_dim;

  // nci
  std::vector<double> nci_mean;
  double nci_mean_norm = 0.0;

  // head (react / scale / nci / serialized vim context)
  LinearHead head;
};

// --- stateless scorers -------------------------------------------------
ScoreVector score_msp(const Matrix& logits);
ScoreVector score_energy(const Matrix& logits, double temperature = 1.0);

// --- Mahalanobis family -------------------------------------------------
// lambda_shrink <= 0 selects the default 1e-3 * (trace / d) of the pooled
// covariance. Pooled (tied) covariance by default; per_class switches to one
// shrunk covariance per class.
FittedScorer fit_mds(const FeatureMatrix& train, double lambda_shrink = -1.0,
                     bool per_class = false);
ScoreVector score_mds(const FittedScorer& fitted, const Matrix& feats);

// Global-covariance Mahalanobis (ZCA whitening view). Independent
// implementation; must agree with single-class MDS to 1e-10.
FittedScorer fit_whiten(const FeatureMatrix& train, double lambda_shrink = -1.0);
ScoreVector score_whiten(const FittedScorer& fitted, const Matrix& feats);

// MDS over teacher-space embeddings; same contract as fit_mds/score_mds.
FittedScorer fit_teacher_mds(const FeatureMatrix& teacher_train,
                             double lambda_shrink = -1.0, bool per_class = false);
ScoreVector score_teacher_mds(const FittedScorer& fitted, const Matrix& teacher_feats);

// --- kNN ------------------------------------------------------------------
FittedScorer fit_knn(const FeatureMatrix& train, int k, bool normalize);
ScoreVector score_knn(const FittedScorer& fitted, const Matrix& feats);

// --- ViM --------------------------------------------------------------
FittedScorer fit_vim(const FeatureMatrix& train, const Matrix& train_logits,
                     const LinearHead& head, int subspace_dim = -1);
ScoreVector score_vim(const FittedScorer& fitted, const Matrix& feats,
                      const Matrix& logits);

// --- activation-shaping scorers ----------------------------------------
FittedScorer fit_react(const Matrix& train_activations, const LinearHead& head,
                       double percentile = 90.0, bool per_dim = false);
ScoreVector score_react(const FittedScorer& fitted, const Matrix& feats);

// Stateless given the head; rectifies activations, rescales by the ratio of
// total to top-percentile activation mass, then takes the energy score.
ScoreVector score_scale(const Matrix& feats, const LinearHead& head,
                        double percentile = 85.0);

// --- NCI --------------------------------------------------------------
FittedScorer fit_nci(const FeatureMatrix& train, const LinearHead& head,
                     double gamma = 0.1);
ScoreVector score_nci(const FittedScorer& fitted, const Matrix& feats,
                      const std::vector<int>& predicted_class);

// --- uniform dispatch for the experiment harness -------------------------
struct ScorerTrainData {
  const FeatureMatrix* feats = nullptr;          // student train features
  const Matrix* logits = nullptr;                // student train logits
  const LinearHead* head = nullptr;              // classifier head
  const FeatureMatrix* teacher_feats = nullptr;  // teacher train embeddings
};

struct ScorerEvalData {
  const Matrix* feats = nullptr;
  const Matrix* logits = nullptr;
  const Matrix* teacher_feats = nullptr;
};

FittedScorer fit_scorer(ScorerKind kind, const ScorerTrainData& data,
                        const ScorerConfig& cfg);
ScoreVector apply_scorer(const FittedScorer& fitted, const ScorerEvalData& data);

// DSCS container: magic, variant tag, config block, then per-variant f64
// payloads. save -> load -> save is byte-identical.
void save_scorer(const FittedScorer& fitted, const std::string& path);
FittedScorer load_scorer(const std::string& path);

}  // namespace dsclab
