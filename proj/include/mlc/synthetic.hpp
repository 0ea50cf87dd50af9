#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mlc/embedding_store.hpp"

namespace mlc {

/// Union of k mutually orthogonal `dims`-dimensional subspaces of R^ambient.
struct SubspaceSpec {
  int k = 5;
  int dims = 2;
  int ambient = 32;
  int points_per_cluster = 200;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
};

struct LabeledEmbeddings {
  EmbeddingMatrix points;  // n x ambient, unit rows, cluster-major order
  std::vector<int> labels;
  Eigen::MatrixXd bases;   // ambient x (k * dims), orthonormal columns
};

/// Orthonormal bases from the QR of a Gaussian ambient x ambient matrix;
/// each point is uniform in its subspace's unit ball, plus N(0, sigma^2)
/// noise in every ambient coordinate, then scaled to unit norm.
LabeledEmbeddings gen_subspaces(const SubspaceSpec& spec);

/// Positive random matrix (entries U[0.1, 1)) scaled onto the doubly
/// stochastic matrices; row/col sums within 1e-10.
Eigen::MatrixXd gen_doubly_stochastic(Eigen::Index n, std::uint64_t seed);

/// n x d Gaussian matrix with unit-norm columns (handy for d x n features).
Eigen::MatrixXd random_unit_columns(Eigen::Index d, Eigen::Index n, std::uint64_t seed);

}  // namespace mlc
