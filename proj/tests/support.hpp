#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "mlc/rng.hpp"

namespace mlc::test {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd gaussian(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline MatrixXd uniform(Index rows, Index cols, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

inline MatrixXd random_orthogonal(Index d, std::uint64_t seed) {
  Eigen::HouseholderQR<MatrixXd> qr(gaussian(d, d, seed));
  return qr.householderQ() * MatrixXd::Identity(d, d);
}

/// Central differences of a scalar function of a matrix, one entry at a time.
inline MatrixXd fd_gradient(const std::function<double(const MatrixXd&)>& f, const MatrixXd& x,
                            double h = 1e-5) {
  MatrixXd g(x.rows(), x.cols());
  MatrixXd probe = x;
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) {
      const double keep = probe(i, j);
      probe(i, j) = keep + h;
      const double up = f(probe);
      probe(i, j) = keep - h;
      const double down = f(probe);
      probe(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  return g;
}

/// max_i |got_i - want_i| / max(|want_i|, 1e-3 * max|want|, 1e-6).
/// Entries far below the overall scale are judged against that scale, and
/// gradients that vanish identically (finite differences then return pure
/// rounding noise, ~1e-11) against an absolute floor.
inline double max_rel_error(const MatrixXd& got, const MatrixXd& want) {
  const double scale = want.cwiseAbs().maxCoeff();
  double worst = 0.0;
  for (Index i = 0; i < want.size(); ++i) {
    const double denom = std::max({std::abs(want(i)), 1e-3 * scale, 1e-6});
    worst = std::max(worst, std::abs(got(i) - want(i)) / denom);
  }
  return worst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mlc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mlc::test
