#include "mlc/synthetic.hpp"

#include <cmath>

#include "mlc/errors.hpp"
#include "mlc/rng.hpp"
#include "mlc/sinkhorn.hpp"

namespace mlc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

LabeledEmbeddings gen_subspaces(const SubspaceSpec& spec) {
  if (spec.k < 1 || spec.dims < 1 || spec.ambient < 1 || spec.points_per_cluster < 1)
    throw ValidationError("subspace spec counts must be >= 1");
  if (static_cast<long long>(spec.k) * spec.dims > spec.ambient)
    throw ValidationError("k * dims = " + std::to_string(spec.k * spec.dims) + " exceeds ambient " +
                      std::to_string(spec.ambient));
  if (!(spec.noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be >= 0");

  Rng rng(spec.seed);
  MatrixXd gauss(spec.ambient, spec.ambient);
  for (Index r = 0; r < gauss.rows(); ++r)
    for (Index c = 0; c < gauss.cols(); ++c) gauss(r, c) = rng.normal();
  const Eigen::HouseholderQR<MatrixXd> qr(gauss);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(spec.ambient, spec.k * spec.dims);

  LabeledEmbeddings out;
  out.bases = q;
  const Index n = static_cast<Index>(spec.k) * spec.points_per_cluster;
  out.points.data.resize(n, spec.ambient);
  out.labels.reserve(static_cast<std::size_t>(n));
  Index row = 0;
  for (int cluster = 0; cluster < spec.k; ++cluster) {
    const auto basis = q.middleCols(static_cast<Index>(cluster) * spec.dims, spec.dims);
    for (int p = 0; p < spec.points_per_cluster; ++p, ++row) {
      VectorXd dir(spec.dims);
      do {
        for (Index i = 0; i < dir.size(); ++i) dir(i) = rng.normal();
      } while (dir.norm() == 0.0);
      const double radius = std::pow(1.0 - rng.uniform(), 1.0 / spec.dims);
      VectorXd point = basis * (radius / dir.norm() * dir);
      for (Index i = 0; i < point.size(); ++i) point(i) += spec.noise_sigma * rng.normal();
      out.points.data.row(row) = point.transpose() / point.norm();
      out.labels.push_back(cluster);
    }
  }
  return out;
}

MatrixXd gen_doubly_stochastic(Index n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("n must be >= 1");
  Rng rng(seed);
  MatrixXd log_k(n, n);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < n; ++c) log_k(r, c) = std::log(rng.uniform(0.1, 1.0));
  auto proj = project_converged(log_k, 1.0, 1e-12, 100000);
  if (proj.max_sum_error > 1e-10)
    throw NumericalError("doubly stochastic generator did not converge");
  return proj.pi;
}

MatrixXd random_unit_columns(Index d, Index n, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd z(d, n);
  for (Index c = 0; c < n; ++c) {
    for (Index r = 0; r < d; ++r) z(r, c) = rng.normal();
    z.col(c).normalize();
  }
  return z;
}

}  // namespace mlc
