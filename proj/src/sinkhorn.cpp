#include "mlc/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mlc/errors.hpp"

namespace mlc {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_input(const MatrixXd& a, double gamma) {
  if (a.rows() != a.cols())
    throw ValidationError("Sinkhorn input must be square, got " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()));
  if (a.rows() < 1) throw ValidationError("Sinkhorn input is empty");
  if (!a.allFinite()) throw ValidationError("Sinkhorn input contains non-finite entries");
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
}

// f_i = -log sum_j exp(S_ij + g_j)
VectorXd row_update(const MatrixXd& s, const VectorXd& g) {
  const MatrixXd t = s.rowwise() + g.transpose();
  const VectorXd m = t.rowwise().maxCoeff();
  const VectorXd lse = m.array() + (t.colwise() - m).array().exp().rowwise().sum().log();
  return -lse;
}

// g_j = -log sum_i exp(S_ij + f_i)
VectorXd col_update(const MatrixXd& s, const VectorXd& f) {
  const MatrixXd t = s.colwise() + f;
  const Eigen::RowVectorXd m = t.colwise().maxCoeff();
  const Eigen::RowVectorXd lse =
      m.array() + (t.rowwise() - m).array().exp().colwise().sum().log();
  return -lse.transpose();
}

MatrixXd plan(const MatrixXd& s, const VectorXd& f, const VectorXd& g) {
  return ((s.colwise() + f).rowwise() + g.transpose()).array().exp();
}

// Pi = diag(e^f) K diag(e^f) with the damped update f <- (f + row_update(s, f)) / 2.
// Same unique scaling as the alternating iteration, reached in far fewer sweeps.
ConvergedProjection symmetric_converged(const MatrixXd& s, double tol, int max_sweeps) {
  VectorXd f = VectorXd::Zero(s.cols());
  ConvergedProjection out;
  for (int t = 1; t <= max_sweeps; ++t) {
    f = 0.5 * (f + row_update(s, f));
    out.sweeps = t;
    out.pi = plan(s, f, f);
    out.max_sum_error = (out.pi.rowwise().sum().array() - 1.0).abs().maxCoeff();
    out.converged = out.max_sum_error <= tol;
    if (out.converged) break;
  }
  out.pi = 0.5 * (out.pi + out.pi.transpose());
  return out;
}

}  // namespace

SinkhornForward project_with_trace(const MatrixXd& a, const SinkhornConfig& cfg) {
  check_input(a, cfg.gamma);
  if (cfg.iters < 1) throw ValidationError("Sinkhorn iters must be >= 1");
  const MatrixXd s = a / cfg.gamma;
  SinkhornForward out;
  out.gamma = cfg.gamma;
  out.row_potentials.reserve(static_cast<std::size_t>(cfg.iters));
  out.col_potentials.reserve(static_cast<std::size_t>(cfg.iters));
  VectorXd g = VectorXd::Zero(a.cols());
  for (int t = 0; t < cfg.iters; ++t) {
    VectorXd f = row_update(s, g);
    g = col_update(s, f);
    out.row_potentials.push_back(std::move(f));
    out.col_potentials.push_back(g);
  }
  out.pi = plan(s, out.row_potentials.back(), out.col_potentials.back());
  return out;
}

MatrixXd project(const MatrixXd& a, const SinkhornConfig& cfg) {
  return project_with_trace(a, cfg).pi;
}

MatrixXd project_vjp(const MatrixXd& a, const SinkhornForward& fwd, const MatrixXd& upstream) {
  if (upstream.rows() != a.rows() || upstream.cols() != a.cols() || fwd.pi.rows() != a.rows())
    throw ValidationError("Sinkhorn VJP shape mismatch");
  const MatrixXd s = a / fwd.gamma;
  const auto sweeps = fwd.row_potentials.size();

  // Pi = exp(S + f^T 1^T + 1 g^T^T)
  const MatrixXd w = upstream.cwiseProduct(fwd.pi);
  MatrixXd s_bar = w;
  VectorXd f_bar = w.rowwise().sum();
  VectorXd g_bar = w.colwise().sum().transpose();

  for (std::size_t t = sweeps; t-- > 0;) {
    const VectorXd& f = fwd.row_potentials[t];
    const VectorXd& g = fwd.col_potentials[t];
    // g_j = -LSE_i(S_ij + f_i): column-softmax weights P_ij = exp(S_ij + f_i + g_j)
    const MatrixXd p_col = plan(s, f, g);
    const MatrixXd gw = p_col.array().rowwise() * g_bar.transpose().array();
    s_bar -= gw;
    f_bar -= gw.rowwise().sum();
    // f_i = -LSE_j(S_ij + g_prev_j): row-softmax weights P_ij = exp(S_ij + f_i + g_prev_j)
    const VectorXd g_prev = t == 0 ? VectorXd::Zero(s.cols()) : fwd.col_potentials[t - 1];
    const MatrixXd p_row = plan(s, f, g_prev);
    const MatrixXd fw = p_row.array().colwise() * f_bar.array();
    s_bar -= fw;
    g_bar = -fw.colwise().sum().transpose();
    f_bar.setZero();
  }
  return s_bar / fwd.gamma;
}

MatrixXd project_vjp(const MatrixXd& a, const SinkhornConfig& cfg, const MatrixXd& upstream) {
  if (upstream.rows() != a.rows() || upstream.cols() != a.cols())
    throw ValidationError("Sinkhorn VJP shape mismatch");
  return project_vjp(a, project_with_trace(a, cfg), upstream);
}

ConvergedProjection project_converged(const MatrixXd& a, double gamma, double tol,
                                      int max_sweeps) {
  check_input(a, gamma);
  if (max_sweeps < 1) throw ValidationError("max_sweeps must be >= 1");
  const MatrixXd s = a / gamma;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale)
    return symmetric_converged(0.5 * (s + s.transpose()), tol, max_sweeps);
  VectorXd g = VectorXd::Zero(a.cols());
  VectorXd f = row_update(s, g);
  ConvergedProjection out;
  for (int t = 1; t <= max_sweeps; ++t) {
    g = col_update(s, f);
    // Columns are exact after the column step; the next row update tells us
    // how far the rows are off: row_sum_i = exp(f_i - f_next_i).
    VectorXd f_next = row_update(s, g);
    const double row_err = ((f - f_next).array().exp() - 1.0).abs().maxCoeff();
    out.sweeps = t;
    if (row_err <= tol || t == max_sweeps) {
      out.pi = plan(s, f, g);
      const double r = (out.pi.rowwise().sum().array() - 1.0).abs().maxCoeff();
      const double c = (out.pi.colwise().sum().array() - 1.0).abs().maxCoeff();
      out.max_sum_error = std::max(r, c);
      out.converged = out.max_sum_error <= tol;
      if (out.converged || t == max_sweeps) return out;
    }
    f = std::move(f_next);
  }
  return out;
}

}  // namespace mlc
