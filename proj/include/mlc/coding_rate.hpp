#pragma once

#include <optional>

#include <Eigen/Dense>

namespace mlc {

/// Rate-distortion precision and evaluation settings. Z is always d x n
/// (one sample per column).
struct RateConfig {
  double eps_sq = 0.1;
  /// When set, every Z must have exactly this many rows.
  std::optional<Eigen::Index> feature_dim;
  /// Worker threads for the per-column terms of the compressed rate.
  int threads = 1;
};

/// Membership sums must be 1 within this tolerance unless told otherwise.
inline constexpr double kMembershipSumTol = 1e-5;

/// R(Z) = logdet(I + d/(n eps^2) Z Z^T), evaluated on the smaller Gram side.
double rate(const Eigen::MatrixXd& z, const RateConfig& cfg);

/// Rc(Z, Pi) = 1/n sum_j logdet(I + d/eps^2 Z diag(Pi_j) Z^T), Pi_j the j-th
/// column. `sum_tol` bounds |row/col sum - 1|; pass infinity to accept a
/// truncated Sinkhorn output (nonnegativity is still enforced).
double rate_compressed(const Eigen::MatrixXd& z, const Eigen::MatrixXd& pi,
                       const RateConfig& cfg, double sum_tol = kMembershipSumTol);

/// R(Z) - Rc(Z, Pi).
double rate_reduction(const Eigen::MatrixXd& z, const Eigen::MatrixXd& pi,
                      const RateConfig& cfg, double sum_tol = kMembershipSumTol);

/// L(Z) = (n + d) R(Z).
double coding_length(const Eigen::MatrixXd& z, const RateConfig& cfg);

/// dR/dZ = 2d/(n eps^2) (I + d/(n eps^2) Z Z^T)^{-1} Z.
Eigen::MatrixXd rate_grad(const Eigen::MatrixXd& z, const RateConfig& cfg);

struct RateValueGrad {
  double value = 0.0;
  Eigen::MatrixXd grad_z;
};

/// rate() and rate_grad() from a single factorization.
RateValueGrad rate_with_grad(const Eigen::MatrixXd& z, const RateConfig& cfg);

struct CompressedValueGrads {
  double value = 0.0;
  Eigen::MatrixXd grad_z;   // d x n
  Eigen::MatrixXd grad_pi;  // n x n, entry (i, j) = 1/n d/eps^2 z_i^T M_j^{-1} z_i
};

CompressedValueGrads compressed_grads(const Eigen::MatrixXd& z, const Eigen::MatrixXd& pi,
                                      const RateConfig& cfg,
                                      double sum_tol = kMembershipSumTol);

/// Throws ValidationError unless pi is square n x n, finite, nonnegative and
/// its row and column sums are within `sum_tol` of 1.
void validate_membership(const Eigen::MatrixXd& pi, Eigen::Index n, double sum_tol);

}  // namespace mlc
