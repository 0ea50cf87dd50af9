#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlc {

/// n x d matrix, one sample per row, plus optional unique sample ids.
/// On disk the payload is float32; in memory everything is double.
struct EmbeddingMatrix {
  Eigen::MatrixXd data;
  std::vector<std::string> ids;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index cols() const { return data.cols(); }
};

/// Throws ValidationError unless n, d >= 1, every entry is finite and ids
/// (when present) are n unique strings.
void validate(const EmbeddingMatrix& m);

// EMB1 layout, all integers little-endian:
//   0  "EMB1"
//   4  version   u8 = 0x01
//   5  dtype     u8 = 0x01 (float32)
//   6  n         u64
//   14 d         u64
//   22 payload   n*d float32, row-major
inline constexpr std::size_t kEmbHeaderBytes = 22;

/// Ids, when present, go to a sidecar JSON at path + ".json".
void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

/// Raw EMB1 bytes for a matrix; exposed for format tests.
std::vector<std::uint8_t> encode_embeddings(const Eigen::MatrixXd& data);
Eigen::MatrixXd decode_embeddings(const std::vector<std::uint8_t>& bytes);

std::filesystem::path sidecar_path(const std::filesystem::path& emb_path);

/// Metadata that travels next to an embedding file. Labels are ground
/// truth and only ever read by the metrics.
struct DatasetManifest {
  std::filesystem::path embedding_path;
  std::vector<std::string> ids;
  std::optional<std::vector<int>> labels;
  std::optional<std::vector<std::string>> text_candidates;
};

/// Reads a manifest JSON (either a sidecar or a standalone file with an
/// "embedding_path" key). Missing keys stay empty.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Checks label count and range against n rows, and candidate count against
/// the text-embedding row count when given.
void validate_manifest(const DatasetManifest& manifest, Eigen::Index n_rows,
                       std::optional<Eigen::Index> text_rows = std::nullopt);

struct BatchSampler {
  Eigen::Index batch_size = 1;
  std::uint64_t seed = 0;
  bool drop_last = true;
};

Eigen::Index steps_per_epoch(const BatchSampler& sampler, Eigen::Index n);

/// Slice `step` of the epoch's permutation. The permutation is seeded by
/// mix_seed(seed, epoch), so any (seed, epoch, step) can be replayed alone.
std::vector<Eigen::Index> sample_batch(const BatchSampler& sampler, std::int64_t epoch,
                                       std::int64_t step, Eigen::Index n);

struct Subsample {
  EmbeddingMatrix matrix;
  std::vector<Eigen::Index> source_index;  // row i came from source_index[i]
};

/// Uniform subset of `cap` rows without replacement, kept in source order.
/// Returns the input unchanged when n <= cap.
Subsample subsample_eval(const EmbeddingMatrix& m, Eigen::Index cap, std::uint64_t seed);
std::vector<Eigen::Index> subsample_indices(Eigen::Index n, Eigen::Index cap,
                                            std::uint64_t seed);

inline constexpr Eigen::Index kDefaultEvalCap = 15000;

}  // namespace mlc
