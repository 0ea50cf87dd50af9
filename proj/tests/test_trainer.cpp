#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "mlc/coding_rate.hpp"
#include "mlc/errors.hpp"
#include "mlc/io.hpp"
#include "mlc/synthetic.hpp"
#include "mlc/trainer.hpp"
#include "support.hpp"

using namespace mlc;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs_init = 2;
  cfg.epochs_total = 5;
  cfg.batch_size = 40;
  cfg.d = 8;
  cfg.d_hidden = 32;
  cfg.gamma = 0.5;
  cfg.seed = 3;
  return cfg;
}

// d_in x n, three 2-dim subspaces in 12 dims.
MatrixXd small_data() {
  SubspaceSpec spec;
  spec.k = 3;
  spec.dims = 2;
  spec.ambient = 12;
  spec.points_per_cluster = 40;
  spec.seed = 9;
  return gen_subspaces(spec).points.data.transpose();
}

bool same_params(const HeadParams& a, const HeadParams& b) {
  bool same = a.bn_stats.running_mean == b.bn_stats.running_mean &&
              a.bn_stats.running_var == b.bn_stats.running_var;
  for_each_tensor(a, [&](std::string_view name, TensorGroup, const auto& ta) {
    for_each_tensor(b, [&](std::string_view other, TensorGroup, const auto& tb) {
      if (name == other && !(ta == tb)) same = false;
    });
  });
  return same;
}

}  // namespace

TEST_CASE("config validation") {
  auto cfg = small_config();
  CHECK_NOTHROW(validate(cfg));
  cfg.epochs_init = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small_config();
  cfg.epochs_total = 1;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small_config();
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small_config();
  cfg.batch_size = 1;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small_config();
  cfg.feature_optimizer.lr = -1.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("dataset presets") {
  const auto c10 = preset("cifar10");
  CHECK(c10.d == 128);
  CHECK(c10.d_hidden == 4096);
  CHECK(c10.gamma == 0.175);
  CHECK(c10.sinkhorn_iters == 5);
  CHECK(c10.epochs_init == 1);
  CHECK(c10.epochs_total == 5);
  CHECK(c10.batch_size == 1024);
  CHECK(c10.eps_sq == 0.1);
  CHECK(c10.feature_optimizer.lr == 1e-4);
  CHECK(c10.feature_optimizer.momentum == 0.9);
  CHECK(c10.feature_optimizer.weight_decay == 1e-4);
  CHECK(c10.cluster_optimizer.weight_decay == 0.005);
  const auto c100 = preset("cifar100");
  CHECK(c100.gamma == 0.1);
  CHECK(c100.epochs_total == 50);
  CHECK(c100.batch_size == 1500);
  const auto in1k = preset("imagenet1k");
  CHECK(in1k.d == 1024);
  CHECK(in1k.d_hidden == 2048);
  CHECK(in1k.epochs_init == 2);
  CHECK(preset("cifar20").gamma == 0.13);
  CHECK(preset("coco").batch_size == 1200);
  CHECK(preset("laion").gamma == 0.09);
  CHECK(preset_names().size() == 6);
  CHECK_THROWS_AS(preset("mnist"), ConfigError);
}

TEST_CASE("config JSON: preset then overrides, and roundtrip") {
  const auto cfg = train_config_from_json(
      nlohmann::json::parse(R"({"preset": "cifar100", "gamma": 0.2, "cluster_optimizer": {"lr": 0.01}})"));
  CHECK(cfg.gamma == 0.2);
  CHECK(cfg.batch_size == 1500);
  CHECK(cfg.cluster_optimizer.lr == 0.01);
  CHECK(cfg.cluster_optimizer.weight_decay == 0.005);
  const auto back = train_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"gamma": "x"})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"epochs_init": 0})")), ConfigError);
}

TEST_CASE("objective gradients match finite differences") {
  auto cfg = small_config();
  cfg.d = 4;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const MatrixXd z = random_unit_columns(4, 7, 10 + seed);
    const MatrixXd c = random_unit_columns(4, 7, 20 + seed);
    const RateConfig rc = cfg.rate_config();
    const double inf = std::numeric_limits<double>::infinity();
    auto neg_objective = [&](const MatrixXd& zz, const MatrixXd& cc) {
      const MatrixXd pi = project(cc.transpose() * cc, cfg.sinkhorn_config());
      return -(rate(zz, rc) - rate_compressed(zz, pi, rc, inf));
    };
    const auto g = mlc_objective_grads(z, c, cfg);
    const auto fd_z = mlc::test::fd_gradient([&](const MatrixXd& x) { return neg_objective(x, c); }, z);
    const auto fd_c = mlc::test::fd_gradient([&](const MatrixXd& x) { return neg_objective(z, x); }, c);
    CHECK(mlc::test::max_rel_error(g.grad_z, fd_z) < 1e-5);
    CHECK(mlc::test::max_rel_error(g.grad_c, fd_c) < 1e-5);
    CHECK(g.rate - g.rate_compressed == doctest::Approx(-neg_objective(z, c)).epsilon(1e-12));
  }
}

TEST_CASE("warmup raises the rate on a probe batch and ties the heads") {
  auto cfg = small_config();
  cfg.epochs_init = 4;
  const MatrixXd x = small_data();
  auto state = init_state(cfg, x.rows());
  const MatrixXd probe = x.leftCols(60);
  // batch-statistics forward on a copy, as seen by the optimizer
  auto probe_rate = [&](HeadParams p) { return rate(forward(p, probe, true).z, cfg.rate_config()); };
  const double before = probe_rate(state.params);
  std::vector<double> per_epoch;
  TrainCallbacks cb;
  cb.on_epoch_end = [&](const TrainState& s) { per_epoch.push_back(probe_rate(s.params)); };
  warmup(state, x, cfg, cb);
  CHECK(state.epochs_done == 4);
  REQUIRE(per_epoch.size() == 4);
  CHECK(per_epoch[0] > before);
  for (std::size_t e = 1; e < per_epoch.size(); ++e) CHECK(per_epoch[e] >= per_epoch[e - 1] - 1e-6);
  const auto e = infer(state.params, x);
  CHECK((e.z - e.c).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rate reduction stays nonnegative and finite during training") {
  auto cfg = small_config();
  const MatrixXd x = small_data();
  auto state = init_state(cfg, x.rows());
  std::vector<StepRecord> log;
  TrainCallbacks cb;
  cb.on_step = [&](const StepRecord& r) { log.push_back(r); };
  train(state, x, cfg, cb);
  CHECK(state.epochs_done == 5);
  CHECK(log.size() == 15);
  int mlc_steps = 0;
  for (const auto& r : log) {
    CHECK(std::isfinite(r.rate));
    if (r.phase == Phase::Warmup) {
      CHECK(std::isnan(r.rate_reduction));
      continue;
    }
    ++mlc_steps;
    CHECK(std::isfinite(r.rate_reduction));
    CHECK(r.rate_reduction >= -1e-6);
  }
  CHECK(mlc_steps == 9);
  const auto csv = training_log_csv(log);
  CHECK(csv.rfind("step,epoch,phase,R,Rc,dR,grad_norm_feature,grad_norm_cluster\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 16);
}

TEST_CASE("identical seeds give bitwise identical runs") {
  const auto cfg = small_config();
  const MatrixXd x = small_data();
  auto a = init_state(cfg, x.rows());
  auto b = init_state(cfg, x.rows());
  train(a, x, cfg);
  train(b, x, cfg);
  CHECK(encode_checkpoint(a, cfg) == encode_checkpoint(b, cfg));
  auto other = cfg;
  other.seed = 4;
  auto c = init_state(other, x.rows());
  train(c, x, other);
  CHECK_FALSE(same_params(a.params, c.params));
}

TEST_CASE("checkpoint roundtrip is lossless") {
  const auto cfg = small_config();
  const MatrixXd x = small_data();
  auto state = init_state(cfg, x.rows());
  train(state, x, cfg);
  const auto dir = mlc::test::scratch_dir("ckpt");
  save_checkpoint(state, cfg, dir / "run.mlck");
  CHECK_FALSE(std::filesystem::exists(dir / "run.mlck.tmp"));
  const auto back = load_checkpoint(dir / "run.mlck");
  CHECK(same_params(back.state.params, state.params));
  CHECK(back.state.epochs_done == state.epochs_done);
  CHECK(back.state.global_step == state.global_step);
  CHECK(back.state.feature_opt.buffers == state.feature_opt.buffers);
  CHECK(back.state.cluster_opt.buffers == state.cluster_opt.buffers);
  CHECK(to_json(back.config) == to_json(cfg));
  CHECK(encode_checkpoint(back.state, back.config) == read_bytes(dir / "run.mlck"));
}

TEST_CASE("resuming at epoch 3 of 5 reproduces the uninterrupted run") {
  const auto cfg = small_config();
  const MatrixXd x = small_data();
  auto full = init_state(cfg, x.rows());
  train(full, x, cfg);

  auto partial_cfg = cfg;
  partial_cfg.epochs_total = 3;
  auto partial = init_state(cfg, x.rows());
  train(partial, x, partial_cfg);
  auto resumed = decode_checkpoint(encode_checkpoint(partial, cfg));
  CHECK(resumed.state.epochs_done == 3);
  train(resumed.state, x, resumed.config);
  CHECK(encode_checkpoint(resumed.state, cfg) == encode_checkpoint(full, cfg));
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto cfg = small_config();
  const auto state = init_state(cfg, 12);
  auto bytes = encode_checkpoint(state, cfg);
  SUBCASE("flipped payload byte") {
    bytes[bytes.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(decode_checkpoint(bytes), ChecksumError);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(bytes), ChecksumError);
  }
  SUBCASE("unknown version with a valid checksum") {
    bytes[4] = 0x09;
    bytes.resize(bytes.size() - 8);
    put_u64(bytes, fnv1a64(bytes));
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(mlc::test::scratch_dir("ckpt_missing") / "none.mlck"), IoError);
  }
}

TEST_CASE("data and batch checks") {
  auto cfg = small_config();
  const MatrixXd x = small_data();
  auto state = init_state(cfg, x.rows());
  CHECK_THROWS_AS(train(state, x.topRows(10), cfg), ValidationError);
  cfg.batch_size = 500;
  CHECK_THROWS_AS(train(state, x, cfg), ConfigError);
  auto fresh = init_state(small_config(), x.rows());
  CHECK_THROWS_AS(train_mlc(fresh, x, small_config()), ConfigError);
}

TEST_CASE("divergence aborts with a numerical error, bad input with a validation error") {
  auto cfg = small_config();
  cfg.epochs_init = 1;
  cfg.feature_optimizer.lr = 1e300;
  cfg.cluster_optimizer.lr = 1e300;
  const MatrixXd x = small_data();
  auto state = init_state(cfg, x.rows());
  CHECK_THROWS_AS(train(state, x, cfg), NumericalError);
  MatrixXd bad = x;
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  auto other = init_state(small_config(), x.rows());
  CHECK_THROWS_AS(train(other, bad, small_config()), ValidationError);
}
