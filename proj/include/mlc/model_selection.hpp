#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mlc/coding_rate.hpp"

namespace mlc {

/// L_k for k = 1..K; argmin_k is 1-based and ties go to the smaller k.
struct CodingLengthCurve {
  int max_k = 0;
  std::vector<double> values;             // values[k - 1] = L_k
  std::vector<std::vector<int>> labels;   // labels[k - 1] = partition used for L_k
  int argmin_k = 0;
};

/// sum_i |Z_i| * -log(|Z_i| / n): n times the entropy of the cluster sizes.
double label_cost(std::span<const Eigen::Index> cluster_sizes);

/// sum_i [(|Z_i| + d) R(Z_i) + |Z_i| * -log(|Z_i| / n)]; empty clusters add 0.
double partition_coding_length(const Eigen::MatrixXd& z, std::span<const int> labels, int k,
                               const RateConfig& cfg);

/// Spectral clustering of Pi for each k = 1..K (one shared eigendecomposition)
/// scored by partition_coding_length on the columns of Z.
CodingLengthCurve select_k(const Eigen::MatrixXd& z, const Eigen::MatrixXd& pi, int max_k,
                           const RateConfig& cfg, std::uint64_t seed);

/// CSV "k,coding_length" (17 significant digits), plus an SVG line plot with
/// the argmin marked when `svg_path` is given.
void export_curve(const CodingLengthCurve& curve, const std::filesystem::path& csv_path,
                  const std::optional<std::filesystem::path>& svg_path = std::nullopt);

/// Parses the CSV written by export_curve; argmin is recomputed.
CodingLengthCurve read_curve_csv(const std::filesystem::path& csv_path);

std::string curve_svg(const CodingLengthCurve& curve);

}  // namespace mlc
