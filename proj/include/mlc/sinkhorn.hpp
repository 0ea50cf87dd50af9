#pragma once

#include <vector>

#include <Eigen/Dense>

namespace mlc {

/// Entropic projection onto the doubly stochastic matrices:
///   argmin_{Pi in Omega} -<A, Pi> + gamma sum Pi_ij log Pi_ij
/// solved by alternating row/column scaling of exp(A / gamma) in log space.
struct SinkhornConfig {
  double gamma = 0.175;
  int iters = 5;  // full sweeps; one sweep = row normalization + column normalization
};

/// Forward pass with every intermediate potential kept for the backward pass.
/// Pi_ij = exp(A_ij / gamma + row_potential[T]_i + col_potential[T]_j).
struct SinkhornForward {
  Eigen::MatrixXd pi;
  double gamma = 0.0;
  std::vector<Eigen::VectorXd> row_potentials;  // f^1 .. f^T
  std::vector<Eigen::VectorXd> col_potentials;  // g^1 .. g^T
};

/// Exactly cfg.iters sweeps, no convergence test.
Eigen::MatrixXd project(const Eigen::MatrixXd& a, const SinkhornConfig& cfg);
SinkhornForward project_with_trace(const Eigen::MatrixXd& a, const SinkhornConfig& cfg);

/// Vector-Jacobian product of project() at `a`: returns dL/dA given
/// upstream = dL/dPi, by reverse-mode through the recorded sweeps.
Eigen::MatrixXd project_vjp(const Eigen::MatrixXd& a, const SinkhornConfig& cfg,
                            const Eigen::MatrixXd& upstream);
Eigen::MatrixXd project_vjp(const Eigen::MatrixXd& a, const SinkhornForward& forward,
                            const Eigen::MatrixXd& upstream);

struct ConvergedProjection {
  Eigen::MatrixXd pi;
  int sweeps = 0;
  double max_sum_error = 0.0;  // max |row/col sum - 1| of the returned pi
  bool converged = false;
};

inline constexpr double kEvalSinkhornTol = 1e-6;
inline constexpr int kEvalSinkhornMaxIters = 1000;

/// Sweeps until every row and column sum is within `tol` of 1 or
/// `max_sweeps` is reached. Inputs symmetric up to rounding (relative
/// 1e-12) are symmetrized and use the scaling Pi = D K D instead of
/// alternating row/column steps.
ConvergedProjection project_converged(const Eigen::MatrixXd& a, double gamma,
                                      double tol = kEvalSinkhornTol,
                                      int max_sweeps = kEvalSinkhornMaxIters);

}  // namespace mlc
