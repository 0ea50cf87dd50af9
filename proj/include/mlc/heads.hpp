#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace mlc {

// Trainable layers on top of a frozen encoder. Activations are column-major:
// a batch is a d_in x B matrix, one sample per column.
//
//   h = ReLU(W2 ReLU(BN(W1 x + b1)) + b2)      shared trunk
//   Z = normalize_columns(Wf h + bf)           feature head (theta)
//   C = normalize_columns(Wc h + bc)           cluster head (omega)

struct Linear {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct BatchNormAffine {
  Eigen::VectorXd scale;
  Eigen::VectorXd shift;
};

struct BatchNormStats {
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Which optimizer owns a tensor.
enum class TensorGroup { Trunk, FeatureHead, ClusterHead };

struct HeadParams {
  Linear fc1;
  BatchNormAffine bn;
  BatchNormStats bn_stats;
  Linear fc2;
  Linear feature;
  Linear cluster;

  Eigen::Index d_in() const { return fc1.weight.cols(); }
  Eigen::Index d_hidden() const { return fc1.weight.rows(); }
  Eigen::Index d_out() const { return feature.weight.rows(); }
};

/// Same trainable tensors as HeadParams, without batch-norm running stats.
struct HeadGrads {
  Linear fc1;
  BatchNormAffine bn;
  Linear fc2;
  Linear feature;
  Linear cluster;

  static HeadGrads zeros_like(const HeadParams& p);
};

/// Visits every trainable tensor as f(name, group, tensor). Works for both
/// HeadParams and HeadGrads, const or not. Names are stable and used as
/// checkpoint keys.
template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  f(std::string_view("fc1.weight"), TensorGroup::Trunk, p.fc1.weight);
  f(std::string_view("fc1.bias"), TensorGroup::Trunk, p.fc1.bias);
  f(std::string_view("bn.scale"), TensorGroup::Trunk, p.bn.scale);
  f(std::string_view("bn.shift"), TensorGroup::Trunk, p.bn.shift);
  f(std::string_view("fc2.weight"), TensorGroup::Trunk, p.fc2.weight);
  f(std::string_view("fc2.bias"), TensorGroup::Trunk, p.fc2.bias);
  f(std::string_view("feature.weight"), TensorGroup::FeatureHead, p.feature.weight);
  f(std::string_view("feature.bias"), TensorGroup::FeatureHead, p.feature.bias);
  f(std::string_view("cluster.weight"), TensorGroup::ClusterHead, p.cluster.weight);
  f(std::string_view("cluster.bias"), TensorGroup::ClusterHead, p.cluster.bias);
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, BN scale 1,
/// shift 0, running mean 0, running variance 1.
HeadParams init_params(Eigen::Index d_in, Eigen::Index d_hidden, Eigen::Index d,
                       std::uint64_t seed);

/// Overwrites the cluster head with the feature head, so C = Z afterwards.
void copy_feature_to_cluster(HeadParams& p);

/// Intermediates of a training-mode forward pass.
struct ForwardTape {
  Eigen::MatrixXd x;        // d_in x B
  Eigen::MatrixXd x_hat;    // normalized pre-activation, d_hidden x B
  Eigen::VectorXd inv_std;  // 1 / sqrt(batch var + eps)
  Eigen::MatrixXd r1;       // ReLU(BN(.))
  Eigen::MatrixXd h;        // trunk output
  Eigen::MatrixXd z_raw;    // feature head before normalization
  Eigen::MatrixXd c_raw;
  Eigen::VectorXd z_norm;   // column norms (clamped)
  Eigen::VectorXd c_norm;
  bool training = false;
};

struct ForwardResult {
  Eigen::MatrixXd z;  // d x B, unit columns
  Eigen::MatrixXd c;  // d x B, unit columns
  ForwardTape tape;
};

/// Training mode uses batch statistics, needs B >= 2 and updates the
/// running statistics in `params`. Inference mode uses running statistics.
ForwardResult forward(HeadParams& params, const Eigen::MatrixXd& x, bool training);

struct Embeddings {
  Eigen::MatrixXd z;
  Eigen::MatrixXd c;
};

/// Inference-mode forward; batch composition does not affect any column.
Embeddings infer(const HeadParams& params, const Eigen::MatrixXd& x);

/// Exact VJP of a training-mode forward w.r.t. every trainable tensor.
HeadGrads backward(const HeadParams& params, const ForwardTape& tape,
                   const Eigen::MatrixXd& grad_z, const Eigen::MatrixXd& grad_c);

struct SgdSettings {
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// Momentum buffers keyed by tensor name, created lazily on first step.
struct OptimizerState {
  SgdSettings settings;
  std::map<std::string, Eigen::VectorXd> buffers;
};

/// For each tensor whose group is owned by this optimizer:
///   g = grad + wd * param;  buf = momentum * buf + g;  param -= lr * buf
void sgd_step(HeadParams& params, const HeadGrads& grads, OptimizerState& state,
              std::initializer_list<TensorGroup> groups);

double grad_norm(const HeadGrads& grads, std::initializer_list<TensorGroup> groups);

}  // namespace mlc
