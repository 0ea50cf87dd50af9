#include "mlc/heads.hpp"

#include <algorithm>
#include <cmath>

#include "mlc/errors.hpp"
#include "mlc/rng.hpp"

namespace mlc {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kNormFloor = 1e-12;

Linear make_linear(Index in, Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight.resize(out, in);
  // Row-major fill order so the stream layout does not depend on storage order.
  for (Index r = 0; r < out; ++r)
    for (Index c = 0; c < in; ++c) l.weight(r, c) = rng.uniform(-bound, bound);
  l.bias = VectorXd::Zero(out);
  return l;
}

MatrixXd affine(const Linear& l, const MatrixXd& x) {
  MatrixXd y = l.weight * x;
  y.colwise() += l.bias;
  return y;
}

VectorXd column_norms(const MatrixXd& m) {
  return m.colwise().norm().transpose().cwiseMax(kNormFloor);
}

MatrixXd scale_columns(const MatrixXd& m, const VectorXd& inv) {
  return m * inv.asDiagonal();
}

// VJP of y = u / |u| per column.
MatrixXd normalize_backward(const MatrixXd& y, const VectorXd& norms, const MatrixXd& grad) {
  const Eigen::RowVectorXd proj = y.cwiseProduct(grad).colwise().sum();
  MatrixXd g = grad - y * proj.asDiagonal();
  return g * norms.cwiseInverse().asDiagonal();
}

void check_finite_params(const HeadParams& p) {
  bool ok = true;
  for_each_tensor(p, [&](std::string_view, TensorGroup, const auto& t) { ok = ok && t.allFinite(); });
  if (!ok) throw NumericalError("head parameters contain non-finite entries");
}

}  // namespace

HeadGrads HeadGrads::zeros_like(const HeadParams& p) {
  HeadGrads g;
  auto zero = [](const Linear& l) {
    return Linear{MatrixXd::Zero(l.weight.rows(), l.weight.cols()), VectorXd::Zero(l.bias.size())};
  };
  g.fc1 = zero(p.fc1);
  g.bn = {VectorXd::Zero(p.bn.scale.size()), VectorXd::Zero(p.bn.shift.size())};
  g.fc2 = zero(p.fc2);
  g.feature = zero(p.feature);
  g.cluster = zero(p.cluster);
  return g;
}

HeadParams init_params(Index d_in, Index d_hidden, Index d, std::uint64_t seed) {
  if (d_in < 1 || d_hidden < 1 || d < 1) throw ConfigError("head dimensions must be >= 1");
  Rng rng(seed);
  HeadParams p;
  p.fc1 = make_linear(d_in, d_hidden, rng);
  p.bn.scale = VectorXd::Ones(d_hidden);
  p.bn.shift = VectorXd::Zero(d_hidden);
  p.bn_stats.running_mean = VectorXd::Zero(d_hidden);
  p.bn_stats.running_var = VectorXd::Ones(d_hidden);
  p.fc2 = make_linear(d_hidden, d_hidden, rng);
  p.feature = make_linear(d_hidden, d, rng);
  p.cluster = make_linear(d_hidden, d, rng);
  return p;
}

void copy_feature_to_cluster(HeadParams& p) { p.cluster = p.feature; }

namespace {

// `stats_out` receives the running-stat update in training mode.
ForwardResult forward_impl(const HeadParams& params, const MatrixXd& x, bool training,
                           BatchNormStats* stats_out) {
  if (x.rows() != params.d_in())
    throw ValidationError("input has " + std::to_string(x.rows()) + " rows, heads expect " +
                          std::to_string(params.d_in()));
  if (!x.allFinite()) throw ValidationError("input contains non-finite entries");
  const Index batch = x.cols();
  if (training && batch < 2) throw ValidationError("training-mode forward needs a batch of >= 2");
  if (batch < 1) throw ValidationError("empty batch");

  ForwardResult out;
  auto& tape = out.tape;
  tape.training = training;
  tape.x = x;

  const MatrixXd a1 = affine(params.fc1, x);
  const auto& stats = params.bn_stats;
  VectorXd mean, var;
  if (training) {
    mean = a1.rowwise().mean();
    var = (a1.colwise() - mean).array().square().rowwise().mean();
    if (stats_out != nullptr) {
      const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
      const double m = stats.momentum;
      stats_out->running_mean = (1.0 - m) * stats.running_mean + m * mean;
      stats_out->running_var = (1.0 - m) * stats.running_var + m * unbias * var;
    }
  } else {
    mean = stats.running_mean;
    var = stats.running_var;
  }
  tape.inv_std = (var.array() + stats.eps).rsqrt();
  tape.x_hat = tape.inv_std.asDiagonal() * (a1.colwise() - mean);
  MatrixXd y = params.bn.scale.asDiagonal() * tape.x_hat;
  y.colwise() += params.bn.shift;
  tape.r1 = y.cwiseMax(0.0);
  tape.h = affine(params.fc2, tape.r1).cwiseMax(0.0);

  tape.z_raw = affine(params.feature, tape.h);
  tape.c_raw = affine(params.cluster, tape.h);
  tape.z_norm = column_norms(tape.z_raw);
  tape.c_norm = column_norms(tape.c_raw);
  out.z = scale_columns(tape.z_raw, tape.z_norm.cwiseInverse());
  out.c = scale_columns(tape.c_raw, tape.c_norm.cwiseInverse());
  return out;
}

}  // namespace

ForwardResult forward(HeadParams& params, const MatrixXd& x, bool training) {
  BatchNormStats updated = params.bn_stats;
  auto out = forward_impl(params, x, training, &updated);
  if (training) params.bn_stats = std::move(updated);
  return out;
}

Embeddings infer(const HeadParams& params, const MatrixXd& x) {
  auto r = forward_impl(params, x, false, nullptr);
  return {std::move(r.z), std::move(r.c)};
}

HeadGrads backward(const HeadParams& params, const ForwardTape& tape, const MatrixXd& grad_z,
                   const MatrixXd& grad_c) {
  if (!tape.training) throw ValidationError("backward needs a training-mode tape");
  const Index batch = tape.x.cols();
  if (grad_z.rows() != params.d_out() || grad_z.cols() != batch ||
      grad_c.rows() != params.d_out() || grad_c.cols() != batch)
    throw ValidationError("gradient shape does not match the tape");
  if (tape.h.rows() != params.d_hidden() || tape.x.rows() != params.d_in())
    throw ValidationError("tape does not match the parameters");

  HeadGrads g;
  const MatrixXd z = scale_columns(tape.z_raw, tape.z_norm.cwiseInverse());
  const MatrixXd c = scale_columns(tape.c_raw, tape.c_norm.cwiseInverse());
  const MatrixXd dz_raw = normalize_backward(z, tape.z_norm, grad_z);
  const MatrixXd dc_raw = normalize_backward(c, tape.c_norm, grad_c);

  g.feature.weight = dz_raw * tape.h.transpose();
  g.feature.bias = dz_raw.rowwise().sum();
  g.cluster.weight = dc_raw * tape.h.transpose();
  g.cluster.bias = dc_raw.rowwise().sum();

  MatrixXd dh = params.feature.weight.transpose() * dz_raw;
  dh.noalias() += params.cluster.weight.transpose() * dc_raw;
  const MatrixXd da2 = (tape.h.array() > 0.0).select(dh, 0.0);

  g.fc2.weight = da2 * tape.r1.transpose();
  g.fc2.bias = da2.rowwise().sum();
  const MatrixXd dr1 = params.fc2.weight.transpose() * da2;
  const MatrixXd dy = (tape.r1.array() > 0.0).select(dr1, 0.0);

  g.bn.scale = dy.cwiseProduct(tape.x_hat).rowwise().sum();
  g.bn.shift = dy.rowwise().sum();
  const MatrixXd dx_hat = params.bn.scale.asDiagonal() * dy;
  const VectorXd sum_dx_hat = dx_hat.rowwise().sum();
  const VectorXd sum_dx_hat_x = dx_hat.cwiseProduct(tape.x_hat).rowwise().sum();
  const double inv_b = 1.0 / static_cast<double>(batch);
  // da1 = inv_std / B * (B dx_hat - sum(dx_hat) - x_hat * sum(dx_hat x_hat))
  MatrixXd da1 = static_cast<double>(batch) * dx_hat;
  da1.colwise() -= sum_dx_hat;
  da1 -= sum_dx_hat_x.asDiagonal() * tape.x_hat;
  da1 = (inv_b * tape.inv_std).asDiagonal() * da1;

  g.fc1.weight = da1 * tape.x.transpose();
  g.fc1.bias = da1.rowwise().sum();
  return g;
}

namespace {

bool owns(std::initializer_list<TensorGroup> groups, TensorGroup g) {
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

}  // namespace

void sgd_step(HeadParams& params, const HeadGrads& grads, OptimizerState& state,
              std::initializer_list<TensorGroup> groups) {
  // Pair each parameter tensor with its gradient by name.
  std::map<std::string, Eigen::Map<const VectorXd>> grad_views;
  for_each_tensor(grads, [&](std::string_view name, TensorGroup, const auto& t) {
    grad_views.emplace(std::string(name), Eigen::Map<const VectorXd>(t.data(), t.size()));
  });
  const auto& s = state.settings;
  for_each_tensor(params, [&](std::string_view name, TensorGroup group, auto& t) {
    if (!owns(groups, group)) return;
    const std::string key(name);
    const auto& grad = grad_views.at(key);
    if (grad.size() != t.size()) throw ValidationError("gradient shape mismatch for " + key);
    Eigen::Map<VectorXd> param(t.data(), t.size());
    auto [it, inserted] = state.buffers.try_emplace(key, VectorXd::Zero(t.size()));
    VectorXd& buf = it->second;
    if (buf.size() != t.size()) throw ValidationError("momentum buffer shape mismatch for " + key);
    buf = s.momentum * buf + grad + s.weight_decay * param;
    param -= s.lr * buf;
  });
  check_finite_params(params);
}

double grad_norm(const HeadGrads& grads, std::initializer_list<TensorGroup> groups) {
  double sq = 0.0;
  for_each_tensor(grads, [&](std::string_view, TensorGroup group, const auto& t) {
    if (owns(groups, group)) sq += t.squaredNorm();
  });
  return std::sqrt(sq);
}

}  // namespace mlc
