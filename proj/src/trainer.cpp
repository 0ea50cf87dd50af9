#include "mlc/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "mlc/embedding_store.hpp"
#include "mlc/errors.hpp"
#include "mlc/rng.hpp"

namespace mlc {

using Eigen::Index;
using Eigen::MatrixXd;

void validate(const TrainConfig& cfg) {
  if (cfg.epochs_init < 1) throw ConfigError("epochs_init must be >= 1");
  if (cfg.epochs_total < cfg.epochs_init)
    throw ConfigError("epochs_total (" + std::to_string(cfg.epochs_total) +
                      ") must be >= epochs_init (" + std::to_string(cfg.epochs_init) + ")");
  if (cfg.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(cfg.gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (cfg.sinkhorn_iters < 1) throw ConfigError("sinkhorn_iters must be >= 1");
  if (!(cfg.eps_sq > 0.0)) throw ConfigError("eps_sq must be positive");
  if (cfg.d < 1 || cfg.d_hidden < 1) throw ConfigError("d and d_hidden must be >= 1");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  for (const auto* o : {&cfg.feature_optimizer, &cfg.cluster_optimizer})
    if (!(o->lr > 0.0) || o->momentum < 0.0 || o->weight_decay < 0.0)
      throw ConfigError("optimizer lr must be positive, momentum and weight_decay nonnegative");
}

namespace {

struct PresetRow {
  const char* name;
  Index d, d_hidden;
  double gamma;
  int iters, epochs_init, epochs_total;
  Index batch_size;
};

// Per-dataset hyperparameters (feature/hidden width, Sinkhorn strength,
// warmup/total epochs, batch size). Optimizers are shared by all presets.
constexpr PresetRow kPresets[] = {
    {"cifar10", 128, 4096, 0.175, 5, 1, 5, 1024},
    {"cifar20", 128, 4096, 0.13, 5, 1, 15, 1024},
    {"cifar100", 128, 4096, 0.1, 5, 1, 50, 1500},
    {"imagenet1k", 1024, 2048, 0.12, 5, 2, 20, 1024},
    {"coco", 128, 4096, 0.12, 5, 1, 20, 1200},
    {"laion", 1024, 2048, 0.09, 5, 2, 20, 1024},
};

nlohmann::json sgd_json(const SgdSettings& s) {
  return {{"lr", s.lr}, {"momentum", s.momentum}, {"weight_decay", s.weight_decay}};
}

SgdSettings sgd_from_json(const nlohmann::json& j, SgdSettings base) {
  base.lr = j.value("lr", base.lr);
  base.momentum = j.value("momentum", base.momentum);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  return base;
}

}  // namespace

TrainConfig preset(const std::string& name) {
  for (const auto& row : kPresets) {
    if (name != row.name) continue;
    TrainConfig cfg;
    cfg.d = row.d;
    cfg.d_hidden = row.d_hidden;
    cfg.gamma = row.gamma;
    cfg.sinkhorn_iters = row.iters;
    cfg.epochs_init = row.epochs_init;
    cfg.epochs_total = row.epochs_total;
    cfg.batch_size = row.batch_size;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& row : kPresets) names.emplace_back(row.name);
  return names;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"epochs_init", cfg.epochs_init},
          {"epochs_total", cfg.epochs_total},
          {"batch_size", cfg.batch_size},
          {"gamma", cfg.gamma},
          {"sinkhorn_iters", cfg.sinkhorn_iters},
          {"eps_sq", cfg.eps_sq},
          {"d", cfg.d},
          {"d_hidden", cfg.d_hidden},
          {"seed", cfg.seed},
          {"feature_optimizer", sgd_json(cfg.feature_optimizer)},
          {"cluster_optimizer", sgd_json(cfg.cluster_optimizer)},
          {"threads", cfg.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    TrainConfig cfg = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : TrainConfig{};
    cfg.epochs_init = j.value("epochs_init", cfg.epochs_init);
    cfg.epochs_total = j.value("epochs_total", cfg.epochs_total);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.sinkhorn_iters = j.value("sinkhorn_iters", cfg.sinkhorn_iters);
    cfg.eps_sq = j.value("eps_sq", cfg.eps_sq);
    cfg.d = j.value("d", cfg.d);
    cfg.d_hidden = j.value("d_hidden", cfg.d_hidden);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.threads = j.value("threads", cfg.threads);
    if (j.contains("feature_optimizer"))
      cfg.feature_optimizer = sgd_from_json(j.at("feature_optimizer"), cfg.feature_optimizer);
    if (j.contains("cluster_optimizer"))
      cfg.cluster_optimizer = sgd_from_json(j.at("cluster_optimizer"), cfg.cluster_optimizer);
    validate(cfg);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

TrainState init_state(const TrainConfig& cfg, Index d_in) {
  validate(cfg);
  TrainState s;
  s.params = init_params(d_in, cfg.d_hidden, cfg.d, cfg.seed);
  s.feature_opt.settings = cfg.feature_optimizer;
  s.cluster_opt.settings = cfg.cluster_optimizer;
  return s;
}

namespace {

BatchSampler sampler_for(const TrainConfig& cfg) {
  // Batches draw from their own stream so they do not correlate with the
  // weight initialization.
  return {cfg.batch_size, mix_seed(cfg.seed, 0x5EED'BA7C), true};
}

void check_data(const TrainState& state, const MatrixXd& x, const TrainConfig& cfg) {
  validate(cfg);
  if (x.rows() != state.params.d_in())
    throw ValidationError("data has " + std::to_string(x.rows()) + " features, heads expect " +
                          std::to_string(state.params.d_in()));
  if (cfg.batch_size > x.cols())
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds n " +
                      std::to_string(x.cols()));
}

MatrixXd gather_batch(const MatrixXd& x, const std::vector<Index>& idx) {
  return x(Eigen::all, idx);
}

void check_forward(const ForwardResult& fwd, const TrainConfig& cfg, int epoch, Index step) {
  if (fwd.z.allFinite() && fwd.c.allFinite()) return;
  std::ostringstream msg;
  msg << "non-finite features (gamma " << cfg.gamma << ", epoch " << epoch << ", batch " << step
      << ")";
  throw NumericalError(msg.str());
}

}  // namespace

void warmup(TrainState& state, const MatrixXd& x, const TrainConfig& cfg,
            const TrainCallbacks& callbacks) {
  check_data(state, x, cfg);
  const auto sampler = sampler_for(cfg);
  const Index steps = steps_per_epoch(sampler, x.cols());
  const RateConfig rate_cfg = cfg.rate_config();
  while (state.epochs_done < cfg.epochs_init) {
    const int epoch = state.epochs_done;
    for (Index step = 0; step < steps; ++step) {
      const MatrixXd xb = gather_batch(x, sample_batch(sampler, epoch, step, x.cols()));
      auto fwd = forward(state.params, xb, true);
      check_forward(fwd, cfg, epoch, step);
      const auto r = rate_with_grad(fwd.z, rate_cfg);
      if (!std::isfinite(r.value))
        throw NumericalError("non-finite rate in warmup (epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step) + ")");
      const MatrixXd zero_c = MatrixXd::Zero(fwd.c.rows(), fwd.c.cols());
      const auto grads = backward(state.params, fwd.tape, -r.grad_z, zero_c);
      sgd_step(state.params, grads, state.feature_opt, {TensorGroup::Trunk, TensorGroup::FeatureHead});
      ++state.global_step;
      if (callbacks.on_step) {
        StepRecord rec;
        rec.step = state.global_step;
        rec.epoch = epoch;
        rec.phase = Phase::Warmup;
        rec.rate = r.value;
        rec.rate_compressed = std::numeric_limits<double>::quiet_NaN();
        rec.rate_reduction = std::numeric_limits<double>::quiet_NaN();
        rec.grad_norm_feature = grad_norm(grads, {TensorGroup::Trunk, TensorGroup::FeatureHead});
        rec.grad_norm_cluster = 0.0;
        callbacks.on_step(rec);
      }
    }
    ++state.epochs_done;
    if (state.epochs_done == cfg.epochs_init) copy_feature_to_cluster(state.params);
    if (callbacks.on_epoch_end) callbacks.on_epoch_end(state);
  }
}

MlcStepGrads mlc_objective_grads(const MatrixXd& z, const MatrixXd& c, const TrainConfig& cfg) {
  const RateConfig rate_cfg = cfg.rate_config();
  const MatrixXd a = c.transpose() * c;
  const auto sink = project_with_trace(a, cfg.sinkhorn_config());
  const auto r = rate_with_grad(z, rate_cfg);
  // Truncated Sinkhorn is only column-exact; accept it as is.
  const auto rc = compressed_grads(z, sink.pi, rate_cfg, std::numeric_limits<double>::infinity());

  MlcStepGrads out;
  out.rate = r.value;
  out.rate_compressed = rc.value;
  // objective J = R - Rc; the optimizers descend on -J.
  out.grad_z = rc.grad_z - r.grad_z;
  const MatrixXd grad_a = project_vjp(a, sink, rc.grad_pi);  // d(Rc)/dA = d(-J)/dA
  out.grad_c = c * (grad_a + grad_a.transpose());
  return out;
}

void train_mlc(TrainState& state, const MatrixXd& x, const TrainConfig& cfg,
               const TrainCallbacks& callbacks) {
  check_data(state, x, cfg);
  if (state.epochs_done < cfg.epochs_init)
    throw ConfigError("train_mlc called before warmup finished");
  const auto sampler = sampler_for(cfg);
  const Index steps = steps_per_epoch(sampler, x.cols());
  while (state.epochs_done < cfg.epochs_total) {
    const int epoch = state.epochs_done;
    for (Index step = 0; step < steps; ++step) {
      const MatrixXd xb = gather_batch(x, sample_batch(sampler, epoch, step, x.cols()));
      auto fwd = forward(state.params, xb, true);
      check_forward(fwd, cfg, epoch, step);
      const auto g = mlc_objective_grads(fwd.z, fwd.c, cfg);
      const auto grads = backward(state.params, fwd.tape, g.grad_z, g.grad_c);
      const double gn_feature = grad_norm(grads, {TensorGroup::Trunk, TensorGroup::FeatureHead});
      const double gn_cluster = grad_norm(grads, {TensorGroup::ClusterHead});
      const double objective = g.rate - g.rate_compressed;
      if (!std::isfinite(objective) || !std::isfinite(gn_feature) || !std::isfinite(gn_cluster)) {
        std::ostringstream msg;
        msg << "non-finite objective (gamma " << cfg.gamma << ", epoch " << epoch << ", batch "
            << step << ", R " << g.rate << ", Rc " << g.rate_compressed << ", |g_feature| "
            << gn_feature << ", |g_cluster| " << gn_cluster << ")";
        throw NumericalError(msg.str());
      }
      sgd_step(state.params, grads, state.feature_opt, {TensorGroup::Trunk, TensorGroup::FeatureHead});
      sgd_step(state.params, grads, state.cluster_opt, {TensorGroup::ClusterHead});
      ++state.global_step;
      if (callbacks.on_step) {
        StepRecord rec;
        rec.step = state.global_step;
        rec.epoch = epoch;
        rec.phase = Phase::Mlc;
        rec.rate = g.rate;
        rec.rate_compressed = g.rate_compressed;
        rec.rate_reduction = objective;
        rec.grad_norm_feature = gn_feature;
        rec.grad_norm_cluster = gn_cluster;
        callbacks.on_step(rec);
      }
    }
    ++state.epochs_done;
    if (callbacks.on_epoch_end) callbacks.on_epoch_end(state);
  }
}

void train(TrainState& state, const MatrixXd& x, const TrainConfig& cfg,
           const TrainCallbacks& callbacks) {
  warmup(state, x, cfg, callbacks);
  train_mlc(state, x, cfg, callbacks);
}

std::string training_log_csv(const std::vector<StepRecord>& records) {
  std::string csv = "step,epoch,phase,R,Rc,dR,grad_norm_feature,grad_norm_cluster\n";
  char buf[512];
  auto num = [](double v) {
    char b[64];
    if (std::isnan(v)) return std::string();
    std::snprintf(b, sizeof b, "%.17g", v);
    return std::string(b);
  };
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%s,%s,%s,%s,%s,%s\n", static_cast<long long>(r.step),
                  r.epoch, r.phase == Phase::Warmup ? "warmup" : "mlc", num(r.rate).c_str(),
                  num(r.rate_compressed).c_str(), num(r.rate_reduction).c_str(),
                  num(r.grad_norm_feature).c_str(), num(r.grad_norm_cluster).c_str());
    csv += buf;
  }
  return csv;
}

}  // namespace mlc
