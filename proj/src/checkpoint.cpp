#include <bit>
#include <cstring>
#include <string>

#include "mlc/errors.hpp"
#include "mlc/io.hpp"
#include "mlc/trainer.hpp"

namespace mlc {
namespace {

using Eigen::Index;

constexpr std::uint8_t kMagic[4] = {'M', 'L', 'C', 'K'};
constexpr std::uint8_t kDtypeF64 = 0x02;
constexpr std::size_t kPrefixBytes = 4 + 1 + 1 + 8;
constexpr std::size_t kChecksumBytes = 8;

class PayloadWriter {
 public:
  template <typename T>
  void add(const std::string& name, const T& tensor) {
    index_[name] = {{"offset", bytes_.size()}, {"shape", {tensor.rows(), tensor.cols()}}};
    for (Index i = 0; i < tensor.size(); ++i) put_u64(bytes_, std::bit_cast<std::uint64_t>(tensor.data()[i]));
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  const nlohmann::json& index() const { return index_; }

 private:
  std::vector<std::uint8_t> bytes_;
  nlohmann::json index_ = nlohmann::json::object();
};

class PayloadReader {
 public:
  PayloadReader(std::span<const std::uint8_t> payload, const nlohmann::json& index)
      : payload_(payload), index_(index) {}

  template <typename T>
  void read(const std::string& name, T& tensor) const {
    if (!index_.contains(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
    const auto& entry = index_.at(name);
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0)
      throw FormatError("bad shape for tensor '" + name + "'");
    if constexpr (T::ColsAtCompileTime == 1) {
      if (shape[1] != 1) throw FormatError("tensor '" + name + "' is not a vector");
      tensor.resize(shape[0]);
    } else {
      tensor.resize(shape[0], shape[1]);
    }
    const auto count = static_cast<std::size_t>(shape[0] * shape[1]);
    if (offset > payload_.size() || count > (payload_.size() - offset) / 8)
      throw LengthError("tensor '" + name + "' runs past the payload");
    for (std::size_t i = 0; i < count; ++i)
      tensor.data()[i] = std::bit_cast<double>(get_u64(payload_, offset + 8 * i));
  }

 private:
  std::span<const std::uint8_t> payload_;
  const nlohmann::json& index_;
};

nlohmann::json sgd_json(const SgdSettings& s) {
  return {{"lr", s.lr}, {"momentum", s.momentum}, {"weight_decay", s.weight_decay}};
}

SgdSettings sgd_from(const nlohmann::json& j) {
  return {j.at("lr").get<double>(), j.at("momentum").get<double>(), j.at("weight_decay").get<double>()};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state, const TrainConfig& cfg) {
  PayloadWriter payload;
  for_each_tensor(state.params, [&](std::string_view name, TensorGroup, const auto& t) {
    payload.add("param." + std::string(name), t);
  });
  payload.add("bn_stats.running_mean", state.params.bn_stats.running_mean);
  payload.add("bn_stats.running_var", state.params.bn_stats.running_var);
  nlohmann::json buffers = {{"feature", nlohmann::json::array()}, {"cluster", nlohmann::json::array()}};
  for (const auto& [name, buf] : state.feature_opt.buffers) {
    payload.add("opt.feature." + name, buf);
    buffers["feature"].push_back(name);
  }
  for (const auto& [name, buf] : state.cluster_opt.buffers) {
    payload.add("opt.cluster." + name, buf);
    buffers["cluster"].push_back(name);
  }

  nlohmann::json index;
  index["format_version"] = kCheckpointVersion;
  index["config"] = to_json(cfg);
  index["epochs_done"] = state.epochs_done;
  index["global_step"] = state.global_step;
  index["dims"] = {{"d_in", state.params.d_in()},
                   {"d_hidden", state.params.d_hidden()},
                   {"d", state.params.d_out()}};
  index["bn"] = {{"momentum", state.params.bn_stats.momentum}, {"eps", state.params.bn_stats.eps}};
  index["optimizers"] = {{"feature", sgd_json(state.feature_opt.settings)},
                         {"cluster", sgd_json(state.cluster_opt.settings)}};
  index["buffers"] = buffers;
  index["tensors"] = payload.index();
  const std::string index_text = index.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kCheckpointVersion);
  out.push_back(kDtypeF64);
  put_u64(out, index_text.size());
  out.insert(out.end(), index_text.begin(), index_text.end());
  out.insert(out.end(), payload.bytes().begin(), payload.bytes().end());
  put_u64(out, fnv1a64(out));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPrefixBytes + kChecksumBytes) throw LengthError("checkpoint truncated");
  const std::span<const std::uint8_t> all(bytes);
  const auto body = all.first(bytes.size() - kChecksumBytes);
  if (fnv1a64(body) != get_u64(all, body.size()))
    throw ChecksumError("checkpoint checksum mismatch (file corrupt or truncated)");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  if (bytes[4] != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(bytes[4]) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  if (bytes[5] != kDtypeF64) throw FormatError("checkpoint dtype " + std::to_string(bytes[5]) + " unsupported");
  const auto index_len = get_u64(all, 6);
  if (index_len > body.size() - kPrefixBytes) throw LengthError("checkpoint index runs past the end");

  Checkpoint ck;
  try {
    const auto index = nlohmann::json::parse(body.begin() + kPrefixBytes,
                                             body.begin() + kPrefixBytes + static_cast<std::ptrdiff_t>(index_len));
    if (index.at("format_version").get<int>() != kCheckpointVersion)
      throw FormatError("checkpoint index version mismatch");
    ck.config = train_config_from_json(index.at("config"));
    const PayloadReader payload(body.subspan(kPrefixBytes + index_len), index.at("tensors"));
    auto& p = ck.state.params;
    for_each_tensor(p, [&](std::string_view name, TensorGroup, auto& t) {
      payload.read("param." + std::string(name), t);
    });
    payload.read("bn_stats.running_mean", p.bn_stats.running_mean);
    payload.read("bn_stats.running_var", p.bn_stats.running_var);
    p.bn_stats.momentum = index.at("bn").at("momentum").get<double>();
    p.bn_stats.eps = index.at("bn").at("eps").get<double>();
    ck.state.feature_opt.settings = sgd_from(index.at("optimizers").at("feature"));
    ck.state.cluster_opt.settings = sgd_from(index.at("optimizers").at("cluster"));
    for (const auto& name : index.at("buffers").at("feature").get<std::vector<std::string>>())
      payload.read("opt.feature." + name, ck.state.feature_opt.buffers[name]);
    for (const auto& name : index.at("buffers").at("cluster").get<std::vector<std::string>>())
      payload.read("opt.cluster." + name, ck.state.cluster_opt.buffers[name]);
    ck.state.epochs_done = index.at("epochs_done").get<int>();
    ck.state.global_step = index.at("global_step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint index: ") + e.what());
  }
  if (ck.state.params.bn_stats.running_var.size() > 0 &&
      ck.state.params.bn_stats.running_var.minCoeff() <= 0.0)
    throw ValidationError("checkpoint has non-positive running variance");
  return ck;
}

void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::filesystem::path& path) {
  atomic_write(path, encode_checkpoint(state, cfg));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_bytes(path)); }

}  // namespace mlc
