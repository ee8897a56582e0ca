#include "dsclab/student.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dsclab/io.hpp"
#include "dsclab/metrics.hpp"
#include "dsclab/rng.hpp"
#include "dsclab/specmath.hpp"

// DESK-SCALE NOTE on the default weight decay. The collapse mechanism this
// lab reproduces relies on l2 decay shrinking weight components that receive
// no loss gradient. A component decays by (1 - lr * wd) per step; at the few
// thousand steps a desk-scale run affords, wd = 5e-4 leaves such components
// at ~95% of their initial size, so the untrained nuisance directions never
// fade and the far-OOD blindness does not appear. wd = 0.02 with lr = 0.02
// gives ~7x decay over the default 300 x 16 steps, enough to reproduce the
// effect while leaving accuracy intact. Decay is decoupled, so this does not
// distort gradients. lr above ~0.05 with momentum 0.9 is unstable here: a
// large step can floor every trunk relu at once, after which no gradient
// flows and the run silently sits at chance.

namespace dsclab {

namespace {

void check_finite_input(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite input to forward");
  }
}

// y = w x + b
std::vector<double> affine(const ParamBlock& layer, std::span<const double> x) {
  if (x.size() != layer.w.cols()) throw std::invalid_argument("affine: dim mismatch");
  std::vector<double> y(layer.w.rows());
  for (std::size_t r = 0; r < layer.w.rows(); ++r) {
    double acc = layer.b[r];
    const double* wr = layer.w.row(r).data();
    for (std::size_t c = 0; c < x.size(); ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
  return y;
}

std::vector<double> relu(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

ParamBlock zero_like(const ParamBlock& p) {
  ParamBlock z;
  z.w = Matrix(p.w.rows(), p.w.cols());
  z.b.assign(p.b.size(), 0.0);
  return z;
}

// grad.w += scale * outer(dy, x); grad.b += scale * dy; returns w^T dy.
std::vector<double> backprop_affine(const ParamBlock& layer, ParamBlock& grad,
                                    std::span<const double> x,
                                    std::span<const double> dy, double scale) {
  std::vector<double> dx(layer.w.cols(), 0.0);
  for (std::size_t r = 0; r < layer.w.rows(); ++r) {
    const double g = scale * dy[r];
    grad.b[r] += g;
    const double* wr = layer.w.row(r).data();
    double* gr = grad.w.row(r).data();
    for (std::size_t c = 0; c < dx.size(); ++c) {
      gr[c] += g * x[c];
      dx[c] += wr[c] * dy[r];
    }
  }
  return dx;
}

}  // namespace

std::vector<const ParamBlock*> MLPStudent::blocks() const {
  std::vector<const ParamBlock*> out;
  for (const auto& layer : trunk) out.push_back(&layer);
  out.push_back(&classifier);
  out.push_back(&domain_hidden);
  out.push_back(&domain_out);
  return out;
}

std::vector<ParamBlock*> MLPStudent::blocks() {
  std::vector<ParamBlock*> out;
  for (auto& layer : trunk) out.push_back(&layer);
  out.push_back(&classifier);
  out.push_back(&domain_hidden);
  out.push_back(&domain_out);
  return out;
}

MLPStudent make_student(const std::vector<int>& trunk_dims, int num_classes,
                        int teacher_dim, std::uint64_t seed) {
  if (trunk_dims.size() < 2) throw std::invalid_argument("trunk needs >= 1 layer");
  for (int d : trunk_dims) {
    if (d <= 0) throw std::invalid_argument("trunk dims must be positive");
  }
  if (num_classes < 2) throw std::invalid_argument("need >= 2 classes");
  if (teacher_dim <= 0) throw std::invalid_argument("teacher_dim must be positive");

  Rng rng(derive_stream(seed, Stage::student_init));
  auto init_block = [&rng](std::size_t out_dim, std::size_t in_dim) {
    ParamBlock p;
    p.w = Matrix(out_dim, in_dim);
    p.b.assign(out_dim, 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (std::size_t i = 0; i < out_dim * in_dim; ++i) {
      p.w.data()[i] = rng.uniform(-bound, bound);
    }
    for (std::size_t i = 0; i < out_dim; ++i) p.b[i] = rng.uniform(-bound, bound);
    return p;
  };

  MLPStudent s;
  for (std::size_t i = 0; i + 1 < trunk_dims.size(); ++i) {
    s.trunk.push_back(init_block(static_cast<std::size_t>(trunk_dims[i + 1]),
                                 static_cast<std::size_t>(trunk_dims[i])));
  }
  const auto d_feat = static_cast<std::size_t>(trunk_dims.back());
  s.classifier = init_block(static_cast<std::size_t>(num_classes), d_feat);
  s.domain_hidden = init_block(d_feat, d_feat);
  s.domain_out = init_block(static_cast<std::size_t>(teacher_dim), d_feat);
  return s;
}

ForwardCache forward(const MLPStudent& student, std::span<const double> x,
                     bool with_domain) {
  if (x.size() != student.input_dim()) {
    throw std::invalid_argument("forward: input dim mismatch");
  }
  check_finite_input(x);

  ForwardCache cache;
  std::vector<double> cur(x.begin(), x.end());
  for (const auto& layer : student.trunk) {
    cache.trunk_pre.push_back(affine(layer, cur));
    cache.trunk_act.push_back(relu(cache.trunk_pre.back()));
    cur = cache.trunk_act.back();
  }
  cache.feature = cur;
  cache.logits = affine(student.classifier, cur);
  if (with_domain) {
    cache.domain_pre = affine(student.domain_hidden, cur);
    cache.domain_hidden_act = relu(cache.domain_pre);
    cache.domain_pred = affine(student.domain_out, cache.domain_hidden_act);
  }
  return cache;
}

CeLoss ce_loss(std::span<const double> logits, int label) {
  const auto C = logits.size();
  if (C < 2) throw std::invalid_argument("ce_loss: need >= 2 logits");
  if (label < 0 || static_cast<std::size_t>(label) >= C) {
    throw std::invalid_argument("ce_loss: label out of range");
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);

  CeLoss out;
  out.loss = std::max(lse - logits[static_cast<std::size_t>(label)], 0.0);
  out.grad_logits.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    out.grad_logits[c] = std::exp(logits[c] - lse);
  }
  out.grad_logits[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}

std::pair<LossBreakdown, Gradients> compute_batch_gradients(
    const MLPStudent& student, const Matrix& inputs, const std::vector<int>& labels,
    const Matrix* domain_targets, double lambda, bool stop_trunk_gradient) {
  const std::size_t n = inputs.rows();
  if (n == 0) throw std::invalid_argument("empty batch");
  if (labels.size() != n) throw std::invalid_argument("label count mismatch");
  const bool use_domain = lambda != 0.0;
  if (use_domain) {
    if (domain_targets == nullptr || domain_targets->rows() != n ||
        domain_targets->cols() != student.teacher_dim()) {
      throw std::invalid_argument("domain target shape mismatch");
    }
  }

  Gradients grads;
  for (const ParamBlock* p : student.blocks()) grads.blocks.push_back(zero_like(*p));
  const std::size_t n_trunk = student.trunk.size();
  std::vector<ParamBlock>& g = grads.blocks;
  ParamBlock& g_cls = g[n_trunk];
  ParamBlock& g_dh = g[n_trunk + 1];
  ParamBlock& g_do = g[n_trunk + 2];

  LossBreakdown loss;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto x = inputs.row(i);
    ForwardCache cache = forward(student, x, use_domain);

    const CeLoss ce = ce_loss(cache.logits, labels[i]);
    loss.ce += ce.loss * inv_n;

    // d loss / d feature, accumulated from both heads.
    std::vector<double> dz =
        backprop_affine(student.classifier, g_cls, cache.feature, ce.grad_logits, inv_n);
    for (double& v : dz) v *= inv_n;

    if (use_domain) {
      const CosineLoss cos = cosine_domain_loss(cache.domain_pred, domain_targets->row(i));
      loss.domain += cos.loss * inv_n;
      const double scale = lambda * inv_n;
      std::vector<double> dhid =
          backprop_affine(student.domain_out, g_do, cache.domain_hidden_act, cos.grad, scale);
      for (std::size_t j = 0; j < dhid.size(); ++j) {
        dhid[j] = cache.domain_pre[j] > 0.0 ? dhid[j] * scale : 0.0;
      }
      std::vector<double> dz_dom =
          backprop_affine(student.domain_hidden, g_dh, cache.feature, dhid, 1.0);
      if (!stop_trunk_gradient) {
        for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += dz_dom[j];
      }
    }

    for (std::size_t layer = n_trunk; layer-- > 0;) {
      const auto& pre = cache.trunk_pre[layer];
      for (std::size_t j = 0; j < dz.size(); ++j) {
        if (pre[j] <= 0.0) dz[j] = 0.0;
      }
      const std::span<const double> in_act =
          layer == 0 ? x : std::span<const double>(cache.trunk_act[layer - 1]);
      dz = backprop_affine(student.trunk[layer], g[layer], in_act, dz, 1.0);
    }
  }

  loss.total = loss.ce + lambda * loss.domain;
  return {loss, std::move(grads)};
}

OptimizerState make_optimizer_state(const MLPStudent& student) {
  OptimizerState opt;
  for (const ParamBlock* p : student.blocks()) opt.velocity.push_back(zero_like(*p));
  return opt;
}

namespace {

void sgd_update(MLPStudent& student, const Gradients& grads, OptimizerState& opt,
                const TrainConfig& cfg) {
  auto params = student.blocks();
  if (opt.velocity.size() != params.size())
    throw std::invalid_argument("sgd_update: optimizer state not from make_optimizer_state");
  for (std::size_t b = 0; b < params.size(); ++b) {
    ParamBlock& p = *params[b];
    const ParamBlock& gr = grads.blocks[b];
    ParamBlock& v = opt.velocity[b];
    const std::size_t nw = p.w.rows() * p.w.cols();
    for (std::size_t i = 0; i < nw; ++i) {
      v.w.data()[i] = cfg.momentum * v.w.data()[i] + gr.w.data()[i];
      p.w.data()[i] -= cfg.lr * v.w.data()[i] + cfg.lr * cfg.weight_decay * p.w.data()[i];
    }
    for (std::size_t i = 0; i < p.b.size(); ++i) {
      v.b[i] = cfg.momentum * v.b[i] + gr.b[i];
      p.b[i] -= cfg.lr * v.b[i] + cfg.lr * cfg.weight_decay * p.b[i];
    }
  }
}

void check_finite_step(const LossBreakdown& loss, const Gradients& grads) {
  if (!std::isfinite(loss.total)) throw std::runtime_error("non-finite training loss");
  for (const ParamBlock& b : grads.blocks) {
    for (std::size_t i = 0; i < b.w.rows() * b.w.cols(); ++i) {
      if (!std::isfinite(b.w.data()[i])) throw std::runtime_error("non-finite gradient");
    }
    for (double v : b.b) {
      if (!std::isfinite(v)) throw std::runtime_error("non-finite gradient");
    }
  }
}

}  // namespace

LossBreakdown tgt_step(MLPStudent& student, const Matrix& batch_inputs,
                       const std::vector<int>& batch_labels,
                       const Matrix& batch_teacher, const TeacherStats* stats,
                       const TrainConfig& cfg, OptimizerState& opt) {
  const bool use_domain = cfg.lambda_tgt != 0.0;
  Matrix targets;
  if (use_domain) {
    if (stats == nullptr) throw std::invalid_argument("tgt_step: stats required");
    if (batch_teacher.rows() != batch_inputs.rows()) {
      throw std::invalid_argument("tgt_step: teacher batch size mismatch");
    }
    targets = Matrix(batch_teacher.rows(), stats->teacher_dim());
    for (std::size_t i = 0; i < batch_teacher.rows(); ++i) {
      const auto res = class_suppressed_residual(*stats, batch_teacher.row(i));
      std::copy(res.begin(), res.end(), targets.row(i).begin());
    }
  }

  auto [loss, grads] = compute_batch_gradients(student, batch_inputs, batch_labels,
                                               use_domain ? &targets : nullptr,
                                               cfg.lambda_tgt, cfg.stop_trunk_gradient);
  check_finite_step(loss, grads);
  sgd_update(student, grads, opt, cfg);
  return loss;
}

Embedded embed(const MLPStudent& student, const FeatureMatrix& inputs) {
  Embedded out;
  out.feats.data = Matrix(inputs.n(), student.feat_dim());
  out.feats.labels = inputs.labels;
  out.feats.num_classes = inputs.num_classes;
  out.logits = Matrix(inputs.n(), student.num_classes());
  for (std::size_t i = 0; i < inputs.n(); ++i) {
    ForwardCache cache = forward(student, inputs.data.row(i), false);
    std::copy(cache.feature.begin(), cache.feature.end(), out.feats.data.row(i).begin());
    std::copy(cache.logits.begin(), cache.logits.end(), out.logits.row(i).begin());
  }
  return out;
}

double accuracy(const MLPStudent& student, const FeatureMatrix& inputs) {
  if (inputs.n() == 0) throw std::invalid_argument("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.n(); ++i) {
    ForwardCache cache = forward(student, inputs.data.row(i), false);
    const auto best = std::max_element(cache.logits.begin(), cache.logits.end());
    if (static_cast<int>(best - cache.logits.begin()) == inputs.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(inputs.n());
}

namespace {

FeatureMatrix head_rows(const FeatureMatrix& src, std::size_t cap) {
  const std::size_t n = std::min(src.n(), cap);
  FeatureMatrix out;
  out.data = Matrix(n, src.d());
  out.labels.assign(src.labels.begin(), src.labels.begin() + static_cast<long>(n));
  out.num_classes = src.num_classes;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = src.data.row(i);
    std::copy(r.begin(), r.end(), out.data.row(i).begin());
  }
  return out;
}

GeometryTraceRow probe_geometry(const MLPStudent& student, int epoch,
                                const FeatureMatrix& id_probe,
                                const FeatureMatrix& far_probe,
                                const FeatureMatrix& train_inputs) {
  GeometryTraceRow row;
  row.epoch = epoch;

  const Embedded id_emb = embed(student, id_probe);
  const CovarianceSplit split = covariance_split(id_emb.feats);
  const int k = std::max(1, id_probe.num_classes - 1);
  const SpectralSummary summary = spectral_summary(split, {k});
  row.r_eff = summary.r_eff;
  row.pr = summary.pr;
  row.rho_k = summary.rho_k.at(k);
  row.rho_within = summary.rho_within;

  const Embedded train_emb = embed(student, train_inputs);
  const FittedScorer mds = fit_mds(train_emb.feats);
  const ScoreVector id_scores = score_mds(mds, id_emb.feats.data);
  const Embedded far_emb = embed(student, far_probe);
  const ScoreVector far_scores = score_mds(mds, far_emb.feats.data);
  row.fpr95_mds_far = fpr_at_tpr(id_scores, far_scores, 0.95);
  return row;
}

}  // namespace

TrainResult train(MLPStudent student, const FeatureMatrix& train_inputs,
                  const FeatureMatrix& teacher_train, const TrainConfig& cfg,
                  const ProbeSet* probe) {
  train_inputs.validate();
  if (cfg.batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (cfg.lr < 0.0) throw std::invalid_argument("lr must be >= 0");
  if (train_inputs.num_classes != static_cast<int>(student.num_classes())) {
    throw std::invalid_argument("class count mismatch");
  }
  const bool use_domain = cfg.lambda_tgt != 0.0;
  if (use_domain) {
    teacher_train.validate();
    if (teacher_train.n() != train_inputs.n() ||
        teacher_train.labels != train_inputs.labels) {
      throw std::invalid_argument("teacher features misaligned with train inputs");
    }
    if (teacher_train.d() != student.teacher_dim()) {
      throw std::invalid_argument("teacher dim mismatch");
    }
  }

  TeacherStats stats;
  if (use_domain) stats = teacher_stats(teacher_train);

  FeatureMatrix id_probe, far_probe;
  if (probe != nullptr) {
    id_probe = head_rows(probe->id_probe, 1024);
    far_probe = head_rows(probe->far_probe, 1024);
    id_probe.validate();
    // Far probe labels are untrusted placeholders; only coordinates matter.
  }

  TrainResult result;
  result.trace.clear();

  Rng shuffle_rng(derive_stream(cfg.seed, Stage::shuffle, double_bits(cfg.lambda_tgt)));
  OptimizerState opt = make_optimizer_state(student);

  const std::size_t n = train_inputs.n();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  const auto record = [&](int epoch) {
    if (probe == nullptr) return;
    result.trace.push_back(
        probe_geometry(student, epoch, id_probe, far_probe, train_inputs));
  };

  // Initial-state row; lets the trace show the full collapse trajectory.
  if (cfg.epochs > 0 && cfg.record_geometry_every > 0) record(0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(perm);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t bs = stop - start;
      Matrix bx(bs, train_inputs.d());
      std::vector<int> by(bs);
      Matrix bt(use_domain ? bs : 0, use_domain ? teacher_train.d() : 0);
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t src = perm[start + i];
        const auto xr = train_inputs.data.row(src);
        std::copy(xr.begin(), xr.end(), bx.row(i).begin());
        by[i] = train_inputs.labels[src];
        if (use_domain) {
          const auto tr = teacher_train.data.row(src);
          std::copy(tr.begin(), tr.end(), bt.row(i).begin());
        }
      }

      if (use_domain && cfg.prototype_mode == PrototypeMode::ema) {
        FeatureMatrix batch_feats;
        batch_feats.data = bt;
        batch_feats.labels = by;
        batch_feats.num_classes = teacher_train.num_classes;
        stats = batch_prototype_update(std::move(stats), batch_feats,
                                       cfg.prototype_momentum);
      }

      const LossBreakdown loss =
          tgt_step(student, bx, by, bt, use_domain ? &stats : nullptr, cfg, opt);
      if (loss.total > 1e6) {
        throw std::runtime_error("training diverged: batch loss exceeded 1e6");
      }
    }
    if (cfg.record_geometry_every > 0 &&
        (epoch % cfg.record_geometry_every == 0 || epoch == cfg.epochs)) {
      record(epoch);
    }
  }

  result.student = std::move(student);
  return result;
}

std::string geometry_trace_csv(const GeometryTrace& trace) {
  std::ostringstream out;
  out << "epoch,r_eff,pr,rho_k,rho_within,fpr95_mds_far\n";
  for (const GeometryTraceRow& row : trace) {
    out << row.epoch << ',' << format_double(row.r_eff) << ','
        << format_double(row.pr) << ',' << format_double(row.rho_k) << ','
        << format_double(row.rho_within) << ',' << format_double(row.fpr95_mds_far)
        << '\n';
  }
  return out.str();
}

namespace {

void write_block(BinaryWriter& w, const ParamBlock& p) {
  w.u32(static_cast<std::uint32_t>(p.w.rows()));
  w.u32(static_cast<std::uint32_t>(p.w.cols()));
  w.f64_array(p.w.data(), p.w.rows() * p.w.cols());
  w.f64_array(p.b.data(), p.b.size());
}

ParamBlock read_block(BinaryReader& r) {
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1u << 28)) {
    throw std::runtime_error("student file: bad block shape");
  }
  ParamBlock p;
  p.w = Matrix(rows, cols);
  r.f64_array(p.w.data(), p.w.rows() * p.w.cols());
  p.b.assign(rows, 0.0);
  r.f64_array(p.b.data(), p.b.size());
  return p;
}

}  // namespace

void save_student(const MLPStudent& student, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  BinaryWriter w(out);
  w.magic("DSCM");
  w.u32(static_cast<std::uint32_t>(student.trunk.size()));
  for (const ParamBlock& layer : student.trunk) write_block(w, layer);
  write_block(w, student.classifier);
  write_block(w, student.domain_hidden);
  write_block(w, student.domain_out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

MLPStudent load_student(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  BinaryReader r(in);
  r.expect_magic("DSCM");
  const std::uint32_t n_trunk = r.u32();
  if (n_trunk == 0 || n_trunk > 64) throw std::runtime_error("student file: bad trunk size");
  MLPStudent s;
  for (std::uint32_t i = 0; i < n_trunk; ++i) s.trunk.push_back(read_block(r));
  s.classifier = read_block(r);
  s.domain_hidden = read_block(r);
  s.domain_out = read_block(r);
  return s;
}

}  // namespace dsclab
