#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mlc/coding_rate.hpp"
#include "mlc/heads.hpp"
#include "mlc/sinkhorn.hpp"

namespace mlc {

struct TrainConfig {
  int epochs_init = 1;    // warmup epochs (rate only)
  int epochs_total = 5;   // includes the warmup epochs
  Eigen::Index batch_size = 1024;
  double gamma = 0.175;
  int sinkhorn_iters = 5;
  double eps_sq = 0.1;
  Eigen::Index d = 128;
  Eigen::Index d_hidden = 4096;
  std::uint64_t seed = 0;
  SgdSettings feature_optimizer{1e-4, 0.9, 1e-4};
  SgdSettings cluster_optimizer{1e-4, 0.9, 0.005};
  int threads = 1;

  RateConfig rate_config() const { return {eps_sq, d, threads}; }
  SinkhornConfig sinkhorn_config() const { return {gamma, sinkhorn_iters}; }
};

/// Throws ConfigError on non-positive counts or epochs_init > epochs_total.
void validate(const TrainConfig& cfg);

/// Per-dataset defaults: "cifar10", "cifar20", "cifar100", "imagenet1k",
/// "coco", "laion".
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// JSON mirrors the field names above. A "preset" key, if present, is
/// applied first and the remaining keys override it.
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Everything needed to continue a run bit-for-bit.
struct TrainState {
  HeadParams params;
  OptimizerState feature_opt;  // trunk + feature head
  OptimizerState cluster_opt;  // cluster head
  int epochs_done = 0;
  std::int64_t global_step = 0;
};

TrainState init_state(const TrainConfig& cfg, Eigen::Index d_in);

enum class Phase { Warmup, Mlc };

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  Phase phase = Phase::Warmup;
  double rate = 0.0;
  double rate_compressed = 0.0;  // NaN during warmup
  double rate_reduction = 0.0;   // NaN during warmup
  double grad_norm_feature = 0.0;
  double grad_norm_cluster = 0.0;
};

struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const TrainState&)> on_epoch_end;
};

/// Rate-only ascent for the remaining warmup epochs (trunk + feature head),
/// then copies the feature head into the cluster head. `x` is d_in x n.
void warmup(TrainState& state, const Eigen::MatrixXd& x, const TrainConfig& cfg,
            const TrainCallbacks& callbacks = {});

/// Joint ascent on R(Z) - Rc(Z, Pi(C)) for the remaining epochs.
void train_mlc(TrainState& state, const Eigen::MatrixXd& x, const TrainConfig& cfg,
               const TrainCallbacks& callbacks = {});

/// warmup() if unfinished, then train_mlc().
void train(TrainState& state, const Eigen::MatrixXd& x, const TrainConfig& cfg,
           const TrainCallbacks& callbacks = {});

/// Loss gradients for one MLC step, exposed for gradient tests.
struct MlcStepGrads {
  double rate = 0.0;
  double rate_compressed = 0.0;
  Eigen::MatrixXd grad_z;  // d(-objective)/dZ
  Eigen::MatrixXd grad_c;  // d(-objective)/dC
};

MlcStepGrads mlc_objective_grads(const Eigen::MatrixXd& z, const Eigen::MatrixXd& c,
                                 const TrainConfig& cfg);

std::string training_log_csv(const std::vector<StepRecord>& records);

// Checkpoint container, little-endian:
//   "MLCK" | version u8 | dtype u8 (0x02 = float64) | index_len u64 |
//   index JSON | payload (float64, column-major per tensor) | FNV-1a64 of all
//   preceding bytes
inline constexpr std::uint8_t kCheckpointVersion = 0x01;

void save_checkpoint(const TrainState& state, const TrainConfig& cfg,
                     const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const TrainState& state, const TrainConfig& cfg);

struct Checkpoint {
  TrainState state;
  TrainConfig config;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace mlc
