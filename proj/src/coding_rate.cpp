#include "mlc/coding_rate.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "mlc/errors.hpp"
#include "mlc/parallel.hpp"

namespace mlc {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Factorization of I + c G for a PSD Gram matrix G. Cholesky first; if
/// rounding makes it fail, an eigendecomposition of G with eigenvalues
/// clamped at zero.
class IdentityPlusGram {
 public:
  IdentityPlusGram(const MatrixXd& gram, double c) {
    MatrixXd m = c * gram;
    m.diagonal().array() += 1.0;
    llt_.compute(m);
    if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().minCoeff() > 0.0) return;
    use_eig_ = true;
    eig_.compute(gram);
    if (eig_.info() != Eigen::Success) throw NumericalError("eigendecomposition of Gram matrix failed");
    inv_diag_ = (1.0 + c * eig_.eigenvalues().array().max(0.0)).inverse().matrix();
    logdet_ = (1.0 + c * eig_.eigenvalues().array().max(0.0)).log().sum();
  }

  double logdet() const {
    if (use_eig_) return logdet_;
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  MatrixXd solve(const MatrixXd& rhs) const {
    if (!use_eig_) return llt_.solve(rhs);
    const auto& v = eig_.eigenvectors();
    return v * (inv_diag_.asDiagonal() * (v.transpose() * rhs));
  }

 private:
  Eigen::LLT<MatrixXd> llt_;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig_;
  VectorXd inv_diag_;
  double logdet_ = 0.0;
  bool use_eig_ = false;
};

void check_features(const MatrixXd& z, const RateConfig& cfg) {
  if (!(cfg.eps_sq > 0.0)) throw ValidationError("eps_sq must be positive");
  if (z.rows() < 1 || z.cols() < 1) throw ValidationError("Z must be at least 1x1");
  if (cfg.feature_dim && *cfg.feature_dim != z.rows())
    throw ValidationError("Z has " + std::to_string(z.rows()) + " rows, config expects " +
                          std::to_string(*cfg.feature_dim));
  if (!z.allFinite()) throw ValidationError("Z contains non-finite entries");
}

double global_scale(const MatrixXd& z, const RateConfig& cfg) {
  return static_cast<double>(z.rows()) / (static_cast<double>(z.cols()) * cfg.eps_sq);
}

bool use_feature_side(const MatrixXd& z) { return z.rows() <= z.cols(); }

IdentityPlusGram factor_global(const MatrixXd& z, double c) {
  if (use_feature_side(z)) return IdentityPlusGram(z * z.transpose(), c);
  return IdentityPlusGram(z.transpose() * z, c);
}

}  // namespace

void validate_membership(const MatrixXd& pi, Index n, double sum_tol) {
  if (pi.rows() != n || pi.cols() != n) {
    std::ostringstream msg;
    msg << "membership is " << pi.rows() << "x" << pi.cols() << ", expected " << n << "x" << n;
    throw ValidationError(msg.str());
  }
  if (!pi.allFinite()) throw ValidationError("membership contains non-finite entries");
  if (pi.minCoeff() < 0.0) throw ValidationError("membership has negative entries");
  if (std::isfinite(sum_tol)) {
    const double row_err = (pi.rowwise().sum().array() - 1.0).abs().maxCoeff();
    const double col_err = (pi.colwise().sum().array() - 1.0).abs().maxCoeff();
    if (row_err > sum_tol || col_err > sum_tol) {
      std::ostringstream msg;
      msg << "membership is not doubly stochastic (row err " << row_err << ", col err " << col_err
          << ", tol " << sum_tol << ")";
      throw ValidationError(msg.str());
    }
  }
}

double rate(const MatrixXd& z, const RateConfig& cfg) {
  check_features(z, cfg);
  return factor_global(z, global_scale(z, cfg)).logdet();
}

RateValueGrad rate_with_grad(const MatrixXd& z, const RateConfig& cfg) {
  check_features(z, cfg);
  const double c = global_scale(z, cfg);
  const auto f = factor_global(z, c);
  RateValueGrad out;
  out.value = f.logdet();
  if (use_feature_side(z)) {
    out.grad_z = 2.0 * c * f.solve(z);
  } else {
    // (I + c Z Z^T)^{-1} Z = Z (I + c Z^T Z)^{-1}
    out.grad_z = 2.0 * c * f.solve(z.transpose()).transpose();
  }
  return out;
}

MatrixXd rate_grad(const MatrixXd& z, const RateConfig& cfg) { return rate_with_grad(z, cfg).grad_z; }

double coding_length(const MatrixXd& z, const RateConfig& cfg) {
  return static_cast<double>(z.rows() + z.cols()) * rate(z, cfg);
}

namespace {

// Shared driver for the compressed rate with or without gradients.
CompressedValueGrads compressed_impl(const MatrixXd& z, const MatrixXd& pi,
                                     const RateConfig& cfg, double sum_tol, bool want_grads) {
  check_features(z, cfg);
  const Index d = z.rows();
  const Index n = z.cols();
  validate_membership(pi, n, sum_tol);
  const double c = static_cast<double>(d) / cfg.eps_sq;
  const double inv_n = 1.0 / static_cast<double>(n);
  const bool feature_side = use_feature_side(z);
  const MatrixXd gram_n = feature_side ? MatrixXd() : MatrixXd(z.transpose() * z);

  const int chunks = chunk_count(n, cfg.threads);
  std::vector<double> logdets(static_cast<std::size_t>(n), 0.0);
  std::vector<MatrixXd> partial_grad_z(want_grads ? static_cast<std::size_t>(chunks) : 0);
  MatrixXd grad_pi = want_grads ? MatrixXd::Zero(n, n) : MatrixXd();

  parallel_chunks(n, cfg.threads, [&](int chunk, Index begin, Index end) {
    MatrixXd gz_local;
    if (want_grads) gz_local = MatrixXd::Zero(d, n);
    for (Index j = begin; j < end; ++j) {
      const VectorXd w = pi.col(j);
      if (feature_side) {
        const MatrixXd zs = z * w.cwiseSqrt().asDiagonal();
        MatrixXd gram = MatrixXd::Zero(d, d);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(zs);
        gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
        const IdentityPlusGram f(gram, c);
        logdets[static_cast<std::size_t>(j)] = f.logdet();
        if (want_grads) {
          const MatrixXd y = f.solve(z);  // M_j^{-1} Z
          gz_local.noalias() += (2.0 * c * inv_n) * (y.array().rowwise() * w.transpose().array()).matrix();
          grad_pi.col(j) = (c * inv_n) * z.cwiseProduct(y).colwise().sum().transpose();
        }
      } else {
        // det(I_d + c Z D Z^T) = det(I_n + c S G S), S = D^{1/2}
        const VectorXd s = w.array().sqrt();
        const MatrixXd sgs = s.asDiagonal() * gram_n * s.asDiagonal();
        const IdentityPlusGram f(sgs, c);
        logdets[static_cast<std::size_t>(j)] = f.logdet();
        if (want_grads) {
          // M^{-1} Z D = Z S N^{-1} S;  z_i^T M^{-1} z_i = G_ii - c (G S N^{-1} S G)_ii
          const MatrixXd h = s.asDiagonal() * f.solve(MatrixXd(s.asDiagonal()));
          gz_local.noalias() += (2.0 * c * inv_n) * (z * h);
          const MatrixXd t = h * gram_n;
          const VectorXd ghg = gram_n.cwiseProduct(t.transpose()).rowwise().sum();
          grad_pi.col(j) = (c * inv_n) * (gram_n.diagonal() - c * ghg);
        }
      }
    }
    if (want_grads) partial_grad_z[static_cast<std::size_t>(chunk)] = std::move(gz_local);
  });

  CompressedValueGrads out;
  double sum = 0.0;
  for (double v : logdets) sum += v;
  out.value = sum * inv_n;
  if (want_grads) {
    out.grad_z = MatrixXd::Zero(d, n);
    for (const auto& g : partial_grad_z) out.grad_z += g;
    out.grad_pi = std::move(grad_pi);
  }
  return out;
}

}  // namespace

double rate_compressed(const MatrixXd& z, const MatrixXd& pi, const RateConfig& cfg,
                       double sum_tol) {
  return compressed_impl(z, pi, cfg, sum_tol, false).value;
}

double rate_reduction(const MatrixXd& z, const MatrixXd& pi, const RateConfig& cfg,
                      double sum_tol) {
  return rate(z, cfg) - rate_compressed(z, pi, cfg, sum_tol);
}

CompressedValueGrads compressed_grads(const MatrixXd& z, const MatrixXd& pi,
                                      const RateConfig& cfg, double sum_tol) {
  return compressed_impl(z, pi, cfg, sum_tol, true);
}

}  // namespace mlc
