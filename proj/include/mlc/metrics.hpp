#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mlc {

struct Assignment {
  std::vector<int> row_to_col;  // -1 where a row was matched to a padding column
  double cost = 0.0;
};

/// Minimum-cost assignment on a p x q cost matrix (Kuhn-Munkres with
/// potentials, O(n^3)). Non-square inputs are padded to square with
/// zero-cost dummies.
Assignment hungarian(const Eigen::MatrixXd& cost);

/// counts(i, j) = #samples with the i-th distinct predicted label and the
/// j-th distinct true label; labels are compacted in ascending order.
struct ConfusionMatrix {
  Eigen::MatrixXi counts;
  std::vector<int> pred_labels;
  std::vector<int> true_labels;
  long long total() const { return counts.cast<long long>().sum(); }
};

ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth);

/// Fraction of samples on the best one-to-one matching of predicted to true
/// clusters.
double clustering_accuracy(std::span<const int> pred, std::span<const int> truth);

enum class NmiNormalization { Sqrt, Arithmetic, Max };

/// I(pred; truth) / norm(H(pred), H(truth)), natural logs. When the
/// normalizer is zero: 1 if both partitions are a single cluster, else 0.
double nmi(std::span<const int> pred, std::span<const int> truth,
           NmiNormalization norm = NmiNormalization::Sqrt);

}  // namespace mlc
