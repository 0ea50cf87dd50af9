#include "mlc/model_selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>

#include "mlc/errors.hpp"
#include "mlc/io.hpp"
#include "mlc/spectral.hpp"

namespace mlc {

using Eigen::Index;
using Eigen::MatrixXd;

double label_cost(std::span<const Index> cluster_sizes) {
  Index n = 0;
  for (auto s : cluster_sizes) n += s;
  double cost = 0.0;
  for (auto s : cluster_sizes)
    if (s > 0)
      cost -= static_cast<double>(s) * std::log(static_cast<double>(s) / static_cast<double>(n));
  return cost;
}

double partition_coding_length(const MatrixXd& z, std::span<const int> labels, int k,
                               const RateConfig& cfg) {
  if (static_cast<Index>(labels.size()) != z.cols())
    throw ValidationError("labels length does not match the number of feature columns");
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ValidationError("label outside [0, k)");
    members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  }
  std::vector<Index> sizes;
  double total = 0.0;
  for (const auto& m : members) {
    sizes.push_back(static_cast<Index>(m.size()));
    if (m.empty()) continue;
    const MatrixXd block = z(Eigen::all, m);
    total += coding_length(block, cfg);
  }
  return total + label_cost(sizes);
}

CodingLengthCurve select_k(const MatrixXd& z, const MatrixXd& pi, int max_k, const RateConfig& cfg,
                           std::uint64_t seed) {
  const Index n = z.cols();
  if (max_k < 1 || max_k > n)
    throw ConfigError("max k = " + std::to_string(max_k) + " must be in [1, " + std::to_string(n) + "]");
  if (pi.rows() != n || pi.cols() != n) throw ValidationError("membership does not match Z");

  const auto embedding = spectral_embedding(pi, max_k);
  CodingLengthCurve curve;
  curve.max_k = max_k;
  for (int k = 1; k <= max_k; ++k) {
    auto assignment = cluster_embedding(embedding, k, seed);
    curve.values.push_back(partition_coding_length(z, assignment.labels, k, cfg));
    curve.labels.push_back(std::move(assignment.labels));
  }
  curve.argmin_k =
      static_cast<int>(std::min_element(curve.values.begin(), curve.values.end()) - curve.values.begin()) + 1;
  return curve;
}

namespace {

std::string format17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string curve_svg(const CodingLengthCurve& curve) {
  constexpr double kW = 480, kH = 320, kPad = 40;
  const double lo = *std::min_element(curve.values.begin(), curve.values.end());
  const double hi = *std::max_element(curve.values.begin(), curve.values.end());
  const double span = hi > lo ? hi - lo : 1.0;
  const auto px = [&](int k) {
    return curve.max_k > 1 ? kPad + (kW - 2 * kPad) * (k - 1) / (curve.max_k - 1) : kW / 2;
  };
  const auto py = [&](double v) { return kH - kPad - (kH - 2 * kPad) * (v - lo) / span; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" data-argmin=\"" << curve.argmin_k << "\">\n";
  svg << "  <polyline fill=\"none\" stroke=\"black\" points=\"";
  for (int k = 1; k <= curve.max_k; ++k)
    svg << px(k) << ',' << py(curve.values[static_cast<std::size_t>(k - 1)]) << ' ';
  svg << "\"/>\n";
  const double ax = px(curve.argmin_k);
  const double ay = py(curve.values[static_cast<std::size_t>(curve.argmin_k - 1)]);
  svg << "  <circle cx=\"" << ax << "\" cy=\"" << ay << "\" r=\"5\" fill=\"red\"/>\n";
  svg << "  <text x=\"" << ax + 8 << "\" y=\"" << ay - 8 << "\" font-size=\"12\">k="
      << curve.argmin_k << "</text>\n";
  svg << "  <text x=\"" << kW / 2 << "\" y=\"" << kH - 8
      << "\" font-size=\"12\" text-anchor=\"middle\">k</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

void export_curve(const CodingLengthCurve& curve, const std::filesystem::path& csv_path,
                  const std::optional<std::filesystem::path>& svg_path) {
  if (curve.values.empty()) throw ValidationError("empty coding-length curve");
  std::string csv = "k,coding_length\n";
  for (std::size_t i = 0; i < curve.values.size(); ++i)
    csv += std::to_string(i + 1) + "," + format17(curve.values[i]) + "\n";
  atomic_write(csv_path, csv);
  if (svg_path) atomic_write(*svg_path, curve_svg(curve));
}

CodingLengthCurve read_curve_csv(const std::filesystem::path& csv_path) {
  std::istringstream in(read_text(csv_path));
  std::string line;
  if (!std::getline(in, line) || line != "k,coding_length")
    throw FormatError("curve CSV must start with 'k,coding_length'");
  CodingLengthCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("bad curve row '" + line + "'");
    const int k = std::stoi(line.substr(0, comma));
    if (k != static_cast<int>(curve.values.size()) + 1) throw FormatError("curve rows out of order");
    curve.values.push_back(std::stod(line.substr(comma + 1)));
  }
  if (curve.values.empty()) throw FormatError("curve CSV has no rows");
  curve.max_k = static_cast<int>(curve.values.size());
  curve.argmin_k =
      static_cast<int>(std::min_element(curve.values.begin(), curve.values.end()) - curve.values.begin()) + 1;
  return curve;
}

}  // namespace mlc
