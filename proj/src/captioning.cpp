#include "mlc/captioning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mlc/errors.hpp"
#include "mlc/io.hpp"

namespace mlc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd normalize_rows(const MatrixXd& m) {
  MatrixXd out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm == 0.0) throw ValidationError("zero-norm embedding row " + std::to_string(i));
    out.row(i) /= norm;
  }
  return out;
}

// Indices of the `count` largest entries of `scores`, largest first, lower
// index first among equals.
std::vector<Index> top_indices(const VectorXd& scores, Index count) {
  std::vector<Index> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  const auto mid = idx.begin() + count;
  std::partial_sort(idx.begin(), mid, idx.end(), [&](Index a, Index b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

}  // namespace

CaptionVote vote_caption(const MatrixXd& images, const MatrixXd& texts,
                         const std::vector<std::string>& candidates, int top_m) {
  if (images.rows() < 1) throw ValidationError("cannot caption an empty cluster");
  if (texts.rows() != static_cast<Index>(candidates.size()))
    throw ValidationError("text embeddings have " + std::to_string(texts.rows()) + " rows but " +
                          std::to_string(candidates.size()) + " candidates were given");
  if (top_m < 1 || texts.rows() < top_m)
    throw ValidationError("need at least top_m = " + std::to_string(top_m) + " candidates, got " +
                          std::to_string(texts.rows()));
  if (images.cols() != texts.cols())
    throw ValidationError("image and text embeddings differ in width");
  if (!images.allFinite() || !texts.allFinite())
    throw ValidationError("embeddings contain non-finite entries");

  return vote_similarities(normalize_rows(images) * normalize_rows(texts).transpose(), candidates,
                           top_m);
}

CaptionVote vote_similarities(const MatrixXd& scores, const std::vector<std::string>& candidates,
                              int top_m) {
  if (scores.rows() < 1) throw ValidationError("cannot caption an empty cluster");
  if (scores.cols() != static_cast<Index>(candidates.size()))
    throw ValidationError("similarity matrix has " + std::to_string(scores.cols()) +
                          " columns but " + std::to_string(candidates.size()) +
                          " candidates were given");
  if (top_m < 1 || scores.cols() < top_m)
    throw ValidationError("need at least top_m = " + std::to_string(top_m) + " candidates, got " +
                          std::to_string(scores.cols()));
  CaptionVote out;
  out.votes = VectorXd::Zero(scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    const VectorXd row = scores.row(i).transpose();
    for (Index j : top_indices(row, top_m)) out.votes(j) += row(j);
  }
  out.winner = top_indices(out.votes, 1).front();
  out.caption = candidates[static_cast<std::size_t>(out.winner)];
  return out;
}

std::vector<Index> top_votes(const VectorXd& votes, int count) {
  return top_indices(votes, std::min<Index>(count, votes.size()));
}

SearchMetric search_metric_from_string(const std::string& s) {
  if (s == "euclidean") return SearchMetric::Euclidean;
  if (s == "cosine") return SearchMetric::Cosine;
  throw ConfigError("unknown metric '" + s + "' (expected euclidean or cosine)");
}

SearchResult image_search(const VectorXd& query, const MatrixXd& repo, int top, SearchMetric metric) {
  if (repo.rows() < 1) throw ValidationError("search repository is empty");
  if (query.size() != repo.cols()) throw ValidationError("query width does not match repository");
  if (top < 1) throw ConfigError("top must be >= 1");
  SearchResult out;
  Index count = top;
  if (count > repo.rows()) {
    count = repo.rows();
    out.clamped = true;
  }
  VectorXd dist(repo.rows());
  if (metric == SearchMetric::Euclidean) {
    dist = (repo.rowwise() - query.transpose()).rowwise().norm();
  } else {
    const double qn = query.norm();
    if (qn == 0.0) throw ValidationError("cosine search with a zero query");
    const VectorXd rn = repo.rowwise().norm();
    dist = 1.0 - (repo * query).array() / (rn.array() * qn);
  }
  // Smallest distance first: rank by negated distance.
  for (Index i : top_indices(-dist, count)) out.hits.push_back({i, dist(i)});
  return out;
}

std::vector<VectorXd> spectrum_by_cluster(const MatrixXd& z, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != z.cols())
    throw ValidationError("labels length does not match the number of feature columns");
  if (labels.empty()) throw ValidationError("no samples");
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw ValidationError("negative label");
    members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  }
  std::vector<VectorXd> out;
  for (int c = 0; c < k; ++c) {
    const auto& m = members[static_cast<std::size_t>(c)];
    if (m.empty()) throw ValidationError("cluster " + std::to_string(c) + " is empty");
    const MatrixXd block = z(Eigen::all, m);
    Eigen::BDCSVD<MatrixXd> svd(block);
    VectorXd s = svd.singularValues();
    if (s.size() > 0 && s(0) > 0.0) s /= s(0);
    out.push_back(std::move(s));
  }
  return out;
}

void write_spectra_csv(const std::vector<VectorXd>& spectra, const std::filesystem::path& path) {
  std::string csv = "cluster,index,normalized_singular_value\n";
  char buf[64];
  for (std::size_t c = 0; c < spectra.size(); ++c)
    for (Index i = 0; i < spectra[c].size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", spectra[c](i));
      csv += std::to_string(c) + "," + std::to_string(i) + "," + buf + "\n";
    }
  atomic_write(path, csv);
}

Heatmap similarity_heatmap(const MatrixXd& z, std::span<const int> labels, Index cap) {
  const Index n = z.cols();
  if (static_cast<Index>(labels.size()) != n)
    throw ValidationError("labels length does not match the number of feature columns");
  if (n > cap)
    throw ConfigError("heatmap of " + std::to_string(n) + " samples exceeds the cap of " +
                      std::to_string(cap) + "; subsample first");
  Heatmap out;
  out.order.resize(static_cast<std::size_t>(n));
  std::iota(out.order.begin(), out.order.end(), Index{0});
  std::stable_sort(out.order.begin(), out.order.end(), [&](Index a, Index b) {
    return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
  });
  const MatrixXd sorted = z(Eigen::all, out.order);
  const MatrixXd gram = (sorted.transpose() * sorted).cwiseAbs();
  out.abs_cos = 0.5 * (gram + gram.transpose());
  return out;
}

std::vector<std::uint8_t> heatmap_pgm(const MatrixXd& abs_cos) {
  const Index n = abs_cos.rows();
  const std::string header = "P5\n" + std::to_string(n) + " " + std::to_string(abs_cos.cols()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + static_cast<std::size_t>(abs_cos.size()));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < abs_cos.cols(); ++j) {
      const double v = std::clamp(abs_cos(i, j), 0.0, 1.0);
      bytes.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
    }
  return bytes;
}

void write_heatmap(const Heatmap& heatmap, const std::filesystem::path& csv_path,
                   const std::filesystem::path& pgm_path) {
  std::string csv;
  char buf[32];
  const auto& m = heatmap.abs_cos;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.6g", m(i, j));
      if (j) csv += ',';
      csv += buf;
    }
    csv += '\n';
  }
  atomic_write(csv_path, csv);
  atomic_write(pgm_path, heatmap_pgm(m));
}

}  // namespace mlc
