#include "mlc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "mlc/errors.hpp"

namespace mlc {

using Eigen::Index;

Assignment hungarian(const Eigen::MatrixXd& cost) {
  const Index p = cost.rows();
  const Index q = cost.cols();
  Assignment out;
  if (p == 0) return out;
  if (!cost.allFinite()) throw ValidationError("assignment costs must be finite");
  const Index n = std::max(p, q);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  a.topLeftCorner(p, q) = cost;

  // 1-based potentials formulation; way[] tracks the augmenting path.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Index> match(n + 1, 0), way(n + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Index i0 = match[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  out.row_to_col.assign(static_cast<std::size_t>(p), -1);
  for (Index j = 1; j <= n; ++j) {
    const Index i = match[j] - 1;
    if (i < p && j - 1 < q) {
      out.row_to_col[static_cast<std::size_t>(i)] = static_cast<int>(j - 1);
      out.cost += cost(i, j - 1);
    }
  }
  return out;
}

namespace {

void check_pair(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size())
    throw ValidationError("label lengths differ: " + std::to_string(pred.size()) + " vs " +
                          std::to_string(truth.size()));
  if (pred.empty()) throw ValidationError("empty label lists");
}

std::vector<int> distinct(std::span<const int> labels) {
  std::vector<int> d(labels.begin(), labels.end());
  std::sort(d.begin(), d.end());
  d.erase(std::unique(d.begin(), d.end()), d.end());
  return d;
}

Index position(const std::vector<int>& sorted, int v) {
  return std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin();
}

double entropy(const Eigen::VectorXd& counts, double n) {
  double h = 0.0;
  for (Index i = 0; i < counts.size(); ++i)
    if (counts(i) > 0) h -= counts(i) / n * std::log(counts(i) / n);
  return h;
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth) {
  check_pair(pred, truth);
  ConfusionMatrix cm;
  cm.pred_labels = distinct(pred);
  cm.true_labels = distinct(truth);
  cm.counts = Eigen::MatrixXi::Zero(static_cast<Index>(cm.pred_labels.size()),
                                    static_cast<Index>(cm.true_labels.size()));
  for (std::size_t s = 0; s < pred.size(); ++s)
    ++cm.counts(position(cm.pred_labels, pred[s]), position(cm.true_labels, truth[s]));
  return cm;
}

double clustering_accuracy(std::span<const int> pred, std::span<const int> truth) {
  const auto cm = confusion_matrix(pred, truth);
  const Eigen::MatrixXd cost = -cm.counts.cast<double>();
  const auto match = hungarian(cost);
  return -match.cost / static_cast<double>(pred.size());
}

double nmi(std::span<const int> pred, std::span<const int> truth, NmiNormalization norm) {
  const auto cm = confusion_matrix(pred, truth);
  const Eigen::MatrixXd counts = cm.counts.cast<double>();
  const double n = static_cast<double>(pred.size());
  const Eigen::VectorXd a = counts.rowwise().sum();
  const Eigen::VectorXd b = counts.colwise().sum().transpose();
  double mi = 0.0;
  for (Index i = 0; i < counts.rows(); ++i)
    for (Index j = 0; j < counts.cols(); ++j)
      if (counts(i, j) > 0) mi += counts(i, j) / n * std::log(n * counts(i, j) / (a(i) * b(j)));
  const double ha = entropy(a, n);
  const double hb = entropy(b, n);
  double denom = 0.0;
  switch (norm) {
    case NmiNormalization::Sqrt: denom = std::sqrt(ha * hb); break;
    case NmiNormalization::Arithmetic: denom = 0.5 * (ha + hb); break;
    case NmiNormalization::Max: denom = std::max(ha, hb); break;
  }
  if (denom <= 0.0) return (counts.rows() == 1 && counts.cols() == 1) ? 1.0 : 0.0;
  return std::clamp(mi / denom, 0.0, 1.0);
}

}  // namespace mlc
