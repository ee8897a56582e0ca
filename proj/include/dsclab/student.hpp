#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsclab/residual.hpp"
#include "dsclab/scorers.hpp"
#include "dsclab/types.hpp"

namespace dsclab {

struct ParamBlock {
  Matrix w;               // out x in
  std::vector<double> b;  // out
};

// Rectifier MLP with two heads sharing the trunk:
//   trunk:      x -> [linear + relu] x L -> feature z (nonnegative)
//   classifier: logits = W z + b
//   domain:     h(z) = W2 relu(W1 z + b1) + b2, hidden width = d_feat
struct MLPStudent {
  std::vector<ParamBlock> trunk;
  ParamBlock classifier;
  ParamBlock domain_hidden;
  ParamBlock domain_out;

  std::size_t input_dim() const { return trunk.front().w.cols(); }
  std::size_t feat_dim() const { return trunk.back().w.rows(); }
  std::size_t num_classes() const { return classifier.w.rows(); }
  std::size_t teacher_dim() const { return domain_out.w.rows(); }

  LinearHead head() const { return {classifier.w, classifier.b}; }

  // Parameter blocks in canonical order (trunk layers, classifier,
  // domain_hidden, domain_out); optimizer state and gradients align to it.
  std::vector<const ParamBlock*> blocks() const;
  std::vector<ParamBlock*> blocks();
};

// trunk_dims = [input, hidden..., feature]; needs at least one layer.
// Weights and biases draw fan-in-scaled uniform values U(-1/sqrt(fan_in),
// 1/sqrt(fan_in)) from the seeded stream, in canonical block order.
MLPStudent make_student(const std::vector<int>& trunk_dims, int num_classes,
                        int teacher_dim, std::uint64_t seed);

struct ForwardCache {
  std::vector<std::vector<double>> trunk_pre;   // per layer, pre-activation
  std::vector<std::vector<double>> trunk_act;   // per layer, post-relu
  std::vector<double> feature;                  // alias of last trunk_act
  std::vector<double> logits;
  std::vector<double> domain_pre;               // W1 z + b1
  std::vector<double> domain_hidden_act;        // relu of the above
  std::vector<double> domain_pred;              // h(z)
};

// Rejects non-finite input. The cache holds everything backprop needs.
// with_domain = false leaves the domain-head fields empty.
ForwardCache forward(const MLPStudent& student, std::span<const double> x,
                     bool with_domain = true);

struct CeLoss {
  double loss = 0.0;               // clamped at >= 0
  std::vector<double> grad_logits; // softmax - onehot
};

CeLoss ce_loss(std::span<const double> logits, int label);

enum class PrototypeMode { precomputed, ema };

struct TrainConfig {
  double lambda_tgt = 1.0;
  double lr = 0.02;
  double momentum = 0.9;
  // Decoupled decay; see DESK-SCALE NOTE in student.cpp for why the default
  // sits far above a full-scale recipe.
  double weight_decay = 0.02;
  int batch_size = 128;
  int epochs = 300;
  std::uint64_t seed = 1;
  PrototypeMode prototype_mode = PrototypeMode::precomputed;
  double prototype_momentum = 0.9;
  int record_geometry_every = 50;
  // Ablation only: stop domain-head gradients at the trunk.
  bool stop_trunk_gradient = false;
};

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double domain = 0.0;  // mean cosine loss, already excludes lambda
};

struct Gradients {
  std::vector<ParamBlock> blocks;  // canonical order, shapes match student
};

// Mean CE + lambda * mean cosine domain loss over the batch, with gradients
// for every parameter. domain_targets must have one row per batch sample when
// lambda > 0; with lambda == 0 the domain head is skipped entirely (gradients
// stay zero), which is what makes the CE path bit-identical to a build with
// the head detached.
std::pair<LossBreakdown, Gradients> compute_batch_gradients(
    const MLPStudent& student, const Matrix& inputs, const std::vector<int>& labels,
    const Matrix* domain_targets, double lambda, bool stop_trunk_gradient = false);

struct OptimizerState {
  std::vector<ParamBlock> velocity;  // canonical order
};

OptimizerState make_optimizer_state(const MLPStudent& student);

// One SGD step with momentum and decoupled weight decay:
//   v <- momentum * v + g;  theta <- theta - lr * v - lr * weight_decay * theta
// Targets for the domain loss come from stats (class-suppressed residuals of
// batch_teacher rows); pass stats = nullptr when cfg.lambda_tgt == 0.
// Throws on non-finite loss or gradients.
LossBreakdown tgt_step(MLPStudent& student, const Matrix& batch_inputs,
                       const std::vector<int>& batch_labels,
                       const Matrix& batch_teacher, const TeacherStats* stats,
                       const TrainConfig& cfg, OptimizerState& opt);

// Features and logits of every row; labels copied from inputs.
struct Embedded {
  FeatureMatrix feats;
  Matrix logits;
};
Embedded embed(const MLPStudent& student, const FeatureMatrix& inputs);

double accuracy(const MLPStudent& student, const FeatureMatrix& inputs);

struct GeometryTraceRow {
  int epoch = 0;
  double r_eff = 0.0;
  double pr = 0.0;
  double rho_k = 0.0;       // top-(C-1) variance fraction
  double rho_within = 0.0;
  double fpr95_mds_far = 0.0;
};

using GeometryTrace = std::vector<GeometryTraceRow>;

// Probe inputs for the trace, frozen at run start; at most the first 1024
// rows of each are used.
struct ProbeSet {
  FeatureMatrix id_probe;
  FeatureMatrix far_probe;
};

struct TrainResult {
  MLPStudent student;
  GeometryTrace trace;
};

// Epoch loop with seeded shuffling. Geometry is audited on the probe set
// every record_geometry_every epochs and after the final epoch (skipped when
// probe is null). Aborts with std::runtime_error when the batch loss exceeds
// 1e6 or goes non-finite.
TrainResult train(MLPStudent student, const FeatureMatrix& train_inputs,
                  const FeatureMatrix& teacher_train, const TrainConfig& cfg,
                  const ProbeSet* probe);

// CSV with header epoch,r_eff,pr,rho_k,rho_within,fpr95_mds_far.
std::string geometry_trace_csv(const GeometryTrace& trace);

// DSCM container; round-trip is bit-exact.
void save_student(const MLPStudent& student, const std::string& path);
MLPStudent load_student(const std::string& path);

}  // namespace dsclab
