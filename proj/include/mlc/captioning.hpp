#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlc {

struct CaptionVote {
  std::string caption;
  Eigen::Index winner = 0;
  Eigen::VectorXd votes;  // one accumulated score per text candidate
};

/// Weighted vote over text candidates for one cluster. Each image adds its
/// top_m cosine similarities into the candidates they belong to; the
/// caption is the argmax (lowest index on ties). Rows are normalized here.
/// images: N x D, texts: M x D, both in the encoder's joint space.
CaptionVote vote_caption(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts,
                         const std::vector<std::string>& candidates, int top_m = 5);

/// Same vote from a precomputed N x M similarity matrix.
CaptionVote vote_similarities(const Eigen::MatrixXd& scores,
                              const std::vector<std::string>& candidates, int top_m = 5);

/// Indices of the `count` highest votes, highest first (lowest index on ties).
std::vector<Eigen::Index> top_votes(const Eigen::VectorXd& votes, int count);

enum class SearchMetric { Euclidean, Cosine };

SearchMetric search_metric_from_string(const std::string& s);

struct SearchHit {
  Eigen::Index index = 0;
  double distance = 0.0;  // Euclidean distance, or 1 - cosine
};

struct SearchResult {
  std::vector<SearchHit> hits;
  bool clamped = false;  // `top` exceeded the repository size
};

/// Exact nearest neighbours of `query` among the rows of `repo`, ordered
/// by (distance, index).
SearchResult image_search(const Eigen::VectorXd& query, const Eigen::MatrixXd& repo, int top = 64,
                          SearchMetric metric = SearchMetric::Euclidean);

/// Singular values of each cluster's block of Z (d x n), divided by the
/// largest. Entry c is cluster label c; every label in [0, max] must occur.
std::vector<Eigen::VectorXd> spectrum_by_cluster(const Eigen::MatrixXd& z,
                                                 std::span<const int> labels);

/// CSV "cluster,index,normalized_singular_value".
void write_spectra_csv(const std::vector<Eigen::VectorXd>& spectra,
                       const std::filesystem::path& path);

inline constexpr Eigen::Index kHeatmapCap = 2000;

struct Heatmap {
  Eigen::MatrixXd abs_cos;          // |Z^T Z| with columns sorted by label
  std::vector<Eigen::Index> order;  // source column of each heatmap row
};

Heatmap similarity_heatmap(const Eigen::MatrixXd& z, std::span<const int> labels,
                           Eigen::Index cap = kHeatmapCap);

/// Binary 8-bit PGM: "P5\n<n> <n>\n255\n" then n*n bytes round(255 * v).
std::vector<std::uint8_t> heatmap_pgm(const Eigen::MatrixXd& abs_cos);

/// Writes `<stem>.csv` and `<stem>.pgm`.
void write_heatmap(const Heatmap& heatmap, const std::filesystem::path& csv_path,
                   const std::filesystem::path& pgm_path);

}  // namespace mlc
