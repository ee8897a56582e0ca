#include "dsclab/residual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dsclab/io.hpp"
#include "dsclab/specmath.hpp"

namespace dsclab {

Matrix oblique_projector(const Matrix& u_basis, double eps) {
  if (!(eps > 0.0))
    throw std::invalid_argument("oblique_projector: eps must be positive");
  const std::size_t m = u_basis.rows();
  const std::size_t c = u_basis.cols();

  // Gram matrix U^T U is C x C; its eigendecomposition gives
  // (U^T U + eps I)^{-1} = V diag(1 / (g + eps)) V^T.
  Matrix gram(c, c, 0.0);
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = a; b < c; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += u_basis(i, a) * u_basis(i, b);
      gram(a, b) = s;
      gram(b, a) = s;
    }
  EigenDecomposition eig = sym_eig(gram);

  // P = (U V) diag(1/(g+eps)) (U V)^T, assembled without any m x m solve.
  Matrix uv = matmul(u_basis, eig.eigenvectors);  // m x C
  Matrix p(m, m, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    const double inv = 1.0 / (std::max(eig.eigenvalues[j], 0.0) + eps);
    for (std::size_t a = 0; a < m; ++a) {
      const double ua = uv(a, j) * inv;
      for (std::size_t b = a; b < m; ++b) p(a, b) += ua * uv(b, j);
    }
  }
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a; b < m; ++b) p(b, a) = p(a, b);
  return p;
}

void TeacherStats::rebuild_projector() {
  const std::size_t c = class_prototypes.rows();
  const std::size_t m = class_prototypes.cols();
  u_basis = Matrix(m, c);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < m; ++i)
      u_basis(i, k) = class_prototypes(k, i) - global_mean[i];
  p_cls_ = oblique_projector(u_basis, projector_eps);
}

TeacherStats teacher_stats(const FeatureMatrix& teacher_feats, double projector_eps) {
  teacher_feats.validate();
  if (!(projector_eps > 0.0))
    throw std::invalid_argument("teacher_stats: projector_eps must be positive");
  const std::size_t m = teacher_feats.d();
  const int c = teacher_feats.num_classes;

  TeacherStats stats;
  stats.projector_eps = projector_eps;
  stats.counts.assign(c, 0);
  stats.class_prototypes = Matrix(c, m, 0.0);
  stats.global_mean.assign(m, 0.0);

  for (std::size_t i = 0; i < teacher_feats.n(); ++i) {
    const int label = teacher_feats.labels[i];
    ++stats.counts[label];
    auto proto = stats.class_prototypes.row(label);
    auto row = teacher_feats.data.row(i);
    for (std::size_t j = 0; j < m; ++j) proto[j] += row[j];
  }
  for (int k = 0; k < c; ++k) {
    if (stats.counts[k] == 0)
      throw std::invalid_argument("teacher_stats: class has no samples");
    auto proto = stats.class_prototypes.row(k);
    const double inv = 1.0 / static_cast<double>(stats.counts[k]);
    for (std::size_t j = 0; j < m; ++j) proto[j] *= inv;
  }
  for (std::size_t i = 0; i < teacher_feats.n(); ++i) {
    auto row = teacher_feats.data.row(i);
    for (std::size_t j = 0; j < m; ++j) stats.global_mean[j] += row[j];
  }
  const double inv_n = 1.0 / static_cast<double>(teacher_feats.n());
  for (double& v : stats.global_mean) v *= inv_n;

  stats.rebuild_projector();
  return stats;
}

std::vector<double> class_suppressed_residual(const TeacherStats& stats,
                                              std::span<const double> u) {
  if (u.size() != stats.teacher_dim())
    throw std::invalid_argument("class_suppressed_residual: dimension mismatch");
  std::vector<double> centered = subtract(u, stats.global_mean);
  std::vector<double> projected = matvec(stats.projector(), centered);
  for (std::size_t i = 0; i < centered.size(); ++i) centered[i] -= projected[i];
  return centered;
}

CosineLoss cosine_domain_loss(std::span<const double> h_out,
                              std::span<const double> target) {
  if (h_out.size() != target.size())
    throw std::invalid_argument("cosine_domain_loss: dimension mismatch");
  for (double v : h_out)
    if (!std::isfinite(v)) throw std::invalid_argument("cosine_domain_loss: non-finite h");
  for (double v : target)
    if (!std::isfinite(v))
      throw std::invalid_argument("cosine_domain_loss: non-finite target");

  CosineLoss out;
  out.grad.assign(h_out.size(), 0.0);
  const double hn = norm2(h_out);
  const double tn = norm2(target);
  if (hn == 0.0 || tn == 0.0) {
    out.loss = 1.0;
    return out;
  }

  const double inv_hn = 1.0 / hn;
  const double inv_tn = 1.0 / tn;
  double cosine = 0.0;
  for (std::size_t i = 0; i < h_out.size(); ++i)
    cosine += (h_out[i] * inv_hn) * (target[i] * inv_tn);
  out.loss = 1.0 - cosine;

  // d(1 - h.t / (|h||t|)) / dh = -(t_hat - h_hat * cos) / |h|
  for (std::size_t i = 0; i < h_out.size(); ++i) {
    const double h_hat = h_out[i] * inv_hn;
    const double t_hat = target[i] * inv_tn;
    out.grad[i] = -(t_hat - h_hat * cosine) * inv_hn;
  }
  return out;
}

TeacherStats batch_prototype_update(TeacherStats stats, const FeatureMatrix& batch,
                                    double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("batch_prototype_update: momentum outside [0, 1)");
  batch.validate();
  if (batch.d() != stats.teacher_dim())
    throw std::invalid_argument("batch_prototype_update: dimension mismatch");
  if (batch.num_classes > static_cast<int>(stats.num_classes()))
    throw std::invalid_argument("batch_prototype_update: unseen class id");

  const std::size_t m = stats.teacher_dim();
  const std::size_t c = stats.num_classes();
  Matrix batch_sum(c, m, 0.0);
  std::vector<std::int64_t> batch_counts(c, 0);
  for (std::size_t i = 0; i < batch.n(); ++i) {
    const int label = batch.labels[i];
    ++batch_counts[label];
    auto acc = batch_sum.row(label);
    auto row = batch.data.row(i);
    for (std::size_t j = 0; j < m; ++j) acc[j] += row[j];
  }

  for (std::size_t k = 0; k < c; ++k) {
    if (batch_counts[k] == 0) continue;
    auto proto = stats.class_prototypes.row(k);
    auto acc = batch_sum.row(k);
    const double inv = 1.0 / static_cast<double>(batch_counts[k]);
    for (std::size_t j = 0; j < m; ++j)
      proto[j] = momentum * proto[j] + (1.0 - momentum) * (acc[j] * inv);
    stats.counts[k] += batch_counts[k];
  }

  // Keep the global mean consistent with the prototype estimates: it is the
  // count-weighted prototype average, exactly as in the full-dataset build.
  double total = 0.0;
  for (std::int64_t v : stats.counts) total += static_cast<double>(v);
  std::fill(stats.global_mean.begin(), stats.global_mean.end(), 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double weight = static_cast<double>(stats.counts[k]) / total;
    auto proto = stats.class_prototypes.row(k);
    for (std::size_t j = 0; j < m; ++j) stats.global_mean[j] += weight * proto[j];
  }

  stats.rebuild_projector();
  return stats;
}

void save_teacher_stats(const TeacherStats& stats, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  BinaryWriter w(out);
  w.magic("DSCT");
  w.u32(static_cast<std::uint32_t>(stats.num_classes()));
  w.u32(static_cast<std::uint32_t>(stats.teacher_dim()));
  w.f64(stats.projector_eps);
  w.f64_array(stats.class_prototypes.data(),
              stats.class_prototypes.rows() * stats.class_prototypes.cols());
  w.f64_array(stats.global_mean.data(), stats.global_mean.size());
  for (std::int64_t v : stats.counts) w.u64(static_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("write failed: " + path);
}

TeacherStats load_teacher_stats(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  BinaryReader r(in);
  r.expect_magic("DSCT");
  const std::uint32_t c = r.u32();
  const std::uint32_t m = r.u32();
  TeacherStats stats;
  stats.projector_eps = r.f64();
  stats.class_prototypes = Matrix(c, m);
  r.f64_array(stats.class_prototypes.data(), static_cast<std::size_t>(c) * m);
  stats.global_mean.resize(m);
  r.f64_array(stats.global_mean.data(), m);
  stats.counts.resize(c);
  for (auto& v : stats.counts) v = static_cast<std::int64_t>(r.u64());
  stats.rebuild_projector();
  return stats;
}

}  // namespace dsclab
