#include "mlc/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "mlc/errors.hpp"
#include "mlc/io.hpp"
#include "mlc/rng.hpp"

namespace mlc {
namespace {

constexpr std::uint8_t kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint8_t kDtypeF32 = 0x01;

void put_f32(std::vector<std::uint8_t>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float get_f32(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

void check_finite(const Eigen::MatrixXd& data) {
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    for (Eigen::Index j = 0; j < data.cols(); ++j)
      if (!std::isfinite(data(i, j))) {
        std::ostringstream msg;
        msg << "non-finite entry at (" << i << ", " << j << ")";
        throw ValidationError(msg.str());
      }
}

}  // namespace

void validate(const EmbeddingMatrix& m) {
  if (m.rows() < 1 || m.cols() < 1) throw ValidationError("embedding matrix must be at least 1x1");
  check_finite(m.data);
  if (!m.ids.empty()) {
    if (static_cast<Eigen::Index>(m.ids.size()) != m.rows())
      throw ValidationError("ids length " + std::to_string(m.ids.size()) + " != n " +
                            std::to_string(m.rows()));
    std::unordered_set<std::string> seen;
    for (const auto& id : m.ids)
      if (!seen.insert(id).second) throw ValidationError("duplicate id '" + id + "'");
  }
}

std::vector<std::uint8_t> encode_embeddings(const Eigen::MatrixXd& data) {
  if (data.rows() < 1 || data.cols() < 1)
    throw ValidationError("embedding matrix must be at least 1x1");
  check_finite(data);
  std::vector<std::uint8_t> out;
  out.reserve(kEmbHeaderBytes + static_cast<std::size_t>(data.size()) * 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  out.push_back(kDtypeF32);
  put_u64(out, static_cast<std::uint64_t>(data.rows()));
  put_u64(out, static_cast<std::uint64_t>(data.cols()));
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      const auto v = static_cast<float>(data(i, j));
      if (!std::isfinite(v)) throw ValidationError("entry overflows float32 at (" +
                                                   std::to_string(i) + ", " + std::to_string(j) + ")");
      put_f32(out, v);
    }
  return out;
}

Eigen::MatrixXd decode_embeddings(const std::vector<std::uint8_t>& bytes) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (i >= bytes.size() || bytes[i] != kMagic[i])
      throw FormatError("bad magic at byte offset " + std::to_string(i));
  }
  if (bytes.size() < kEmbHeaderBytes)
    throw LengthError("header truncated: " + std::to_string(bytes.size()) + " bytes");
  if (bytes[4] != kVersion)
    throw FormatError("unsupported version " + std::to_string(bytes[4]) + " at byte offset 4");
  if (bytes[5] != kDtypeF32)
    throw FormatError("unsupported dtype " + std::to_string(bytes[5]) + " at byte offset 5");
  const std::uint64_t n = get_u64(bytes, 6);
  const std::uint64_t d = get_u64(bytes, 14);
  if (n == 0 || d == 0) throw FormatError("zero dimension in header (n=" + std::to_string(n) +
                                          ", d=" + std::to_string(d) + ")");
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  if (n > kMax / d || n * d > (kMax - kEmbHeaderBytes) / 4)
    throw FormatError("header dimensions overflow");
  const std::uint64_t expected = kEmbHeaderBytes + n * d * 4;
  if (bytes.size() < expected)
    throw LengthError("payload truncated: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  if (bytes.size() > expected)
    throw FormatError("trailing bytes after payload at byte offset " + std::to_string(expected));

  Eigen::MatrixXd data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::size_t off = kEmbHeaderBytes;
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    for (Eigen::Index j = 0; j < data.cols(); ++j, off += 4) data(i, j) = get_f32(bytes, off);
  check_finite(data);
  return data;
}

std::filesystem::path sidecar_path(const std::filesystem::path& emb_path) {
  auto p = emb_path;
  p += ".json";
  return p;
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  validate(m);
  atomic_write(path, encode_embeddings(m.data));
  if (!m.ids.empty()) {
    nlohmann::json j;
    j["ids"] = m.ids;
    atomic_write(sidecar_path(path), j.dump(2));
  }
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  EmbeddingMatrix m;
  m.data = decode_embeddings(read_bytes(path));
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    const auto manifest = read_manifest(side);
    m.ids = manifest.ids;
  }
  validate(m);
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError("manifest " + path.string() + " is not a JSON object");
  DatasetManifest m;
  try {
    if (j.contains("embedding_path")) {
      std::filesystem::path p = j.at("embedding_path").get<std::string>();
      m.embedding_path = p.is_relative() ? path.parent_path() / p : p;
    }
    if (j.contains("ids")) m.ids = j.at("ids").get<std::vector<std::string>>();
    if (j.contains("labels")) m.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("text_candidates"))
      m.text_candidates = j.at("text_candidates").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::object();
  if (!manifest.embedding_path.empty()) j["embedding_path"] = manifest.embedding_path.string();
  if (!manifest.ids.empty()) j["ids"] = manifest.ids;
  if (manifest.labels) j["labels"] = *manifest.labels;
  if (manifest.text_candidates) j["text_candidates"] = *manifest.text_candidates;
  atomic_write(path, j.dump(2));
}

void validate_manifest(const DatasetManifest& manifest, Eigen::Index n_rows,
                       std::optional<Eigen::Index> text_rows) {
  if (manifest.labels) {
    const auto& labels = *manifest.labels;
    if (static_cast<Eigen::Index>(labels.size()) != n_rows)
      throw ValidationError("labels length " + std::to_string(labels.size()) + " != n " +
                            std::to_string(n_rows));
    for (int l : labels)
      if (l < 0) throw ValidationError("negative label " + std::to_string(l));
  }
  if (!manifest.ids.empty() && static_cast<Eigen::Index>(manifest.ids.size()) != n_rows)
    throw ValidationError("ids length " + std::to_string(manifest.ids.size()) + " != n " +
                          std::to_string(n_rows));
  if (text_rows && manifest.text_candidates &&
      static_cast<Eigen::Index>(manifest.text_candidates->size()) != *text_rows)
    throw ValidationError("text candidate count " +
                          std::to_string(manifest.text_candidates->size()) +
                          " != text embedding rows " + std::to_string(*text_rows));
}

Eigen::Index steps_per_epoch(const BatchSampler& sampler, Eigen::Index n) {
  if (sampler.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (sampler.batch_size > n)
    throw ConfigError("batch_size " + std::to_string(sampler.batch_size) + " exceeds n " +
                      std::to_string(n));
  return sampler.drop_last ? n / sampler.batch_size
                           : (n + sampler.batch_size - 1) / sampler.batch_size;
}

std::vector<Eigen::Index> sample_batch(const BatchSampler& sampler, std::int64_t epoch,
                                       std::int64_t step, Eigen::Index n) {
  const auto steps = steps_per_epoch(sampler, n);
  if (step < 0 || step >= steps)
    throw ConfigError("step " + std::to_string(step) + " outside [0, " + std::to_string(steps) +
                      ")");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(mix_seed(sampler.seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(std::span(perm));
  const auto begin = step * sampler.batch_size;
  const auto end = std::min<Eigen::Index>(begin + sampler.batch_size, n);
  return {perm.begin() + begin, perm.begin() + end};
}

std::vector<Eigen::Index> subsample_indices(Eigen::Index n, Eigen::Index cap,
                                            std::uint64_t seed) {
  if (cap < 1) throw ConfigError("evaluation cap must be >= 1");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (n <= cap) return idx;
  Rng rng(seed);
  rng.shuffle(std::span(idx));
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Subsample subsample_eval(const EmbeddingMatrix& m, Eigen::Index cap, std::uint64_t seed) {
  Subsample out;
  out.source_index = subsample_indices(m.rows(), cap, seed);
  if (m.rows() <= cap) {
    out.matrix = m;
    return out;
  }
  out.matrix.data = m.data(out.source_index, Eigen::all);
  if (!m.ids.empty()) {
    out.matrix.ids.reserve(out.source_index.size());
    for (auto i : out.source_index) out.matrix.ids.push_back(m.ids[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace mlc
