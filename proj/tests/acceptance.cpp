// Prints one PASS/FAIL line per acceptance criterion; exits 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "mlc/cli.hpp"
#include "mlc/coding_rate.hpp"
#include "mlc/io.hpp"
#include "mlc/metrics.hpp"
#include "mlc/model_selection.hpp"
#include "mlc/sinkhorn.hpp"
#include "mlc/spectral.hpp"
#include "mlc/synthetic.hpp"
#include "mlc/trainer.hpp"
#include "support.hpp"

using namespace mlc;
using mlc::test::fd_gradient;
using mlc::test::gaussian;
using mlc::test::max_rel_error;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSec = 30.0;
constexpr int kGradInstances = 20;  // per gradient family
constexpr double kZeroGradAnalytic = 1e-12;
constexpr double kZeroGradFd = 1e-8;
constexpr double kSumTol = 1e-6;
constexpr int kSinkhornInputs = 100;
constexpr double kJensenTol = 1e-9;
constexpr double kUniformTol = 1e-9;
constexpr int kJensenPairs = 100;
constexpr double kRecoveryAcc = 0.98;
constexpr int kRecoveryK = 5;
constexpr int kRecoveryMaxK = 15;
constexpr double kRecoveryBudgetSec = 300.0;
constexpr int kHungarianInstances = 200;
constexpr double kNmiTol = 1e-10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Index draw(Rng& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// Gradient fidelity ---------------------------------------------------------

HeadParams random_net(Index d_in, Index hidden, Index d, std::uint64_t seed) {
  HeadParams p = init_params(d_in, hidden, d, seed);
  Rng rng(seed + 1000);
  for (Index i = 0; i < hidden; ++i) {
    p.bn.scale(i) = rng.uniform(0.5, 1.5);
    p.bn.shift(i) = rng.uniform(0.1, 0.5);
    p.fc1.bias(i) = rng.uniform(-0.2, 0.2);
    p.fc2.bias(i) = rng.uniform(0.1, 0.4);
  }
  for (Index i = 0; i < d; ++i) {
    p.feature.bias(i) = rng.uniform(-0.2, 0.2);
    p.cluster.bias(i) = rng.uniform(-0.2, 0.2);
  }
  return p;
}

double heads_probe(HeadParams p, const MatrixXd& x, const MatrixXd& gz, const MatrixXd& gc) {
  const auto out = forward(p, x, true);
  return out.z.cwiseProduct(gz).sum() + out.c.cwiseProduct(gc).sum();
}

// Largest |gradient| of fc1.bias, which training-mode BN makes identically zero.
double zero_bias_analytic = 0.0, zero_bias_fd = 0.0;

double heads_worst_error(std::uint64_t seed, Rng& rng) {
  const Index d_in = draw(rng, 2, 8), hidden = draw(rng, 2, 8), d = draw(rng, 2, 8), b = draw(rng, 2, 16);
  const HeadParams base = random_net(d_in, hidden, d, seed);
  const MatrixXd x = gaussian(d_in, b, seed + 1);
  const MatrixXd gz = gaussian(d, b, seed + 2);
  const MatrixXd gc = gaussian(d, b, seed + 3);
  HeadParams work = base;
  const auto out = forward(work, x, true);
  const auto grads = backward(base, out.tape, gz, gc);
  std::map<std::string, MatrixXd> analytic;
  for_each_tensor(grads, [&](std::string_view name, TensorGroup, const auto& t) {
    analytic[std::string(name)] = MatrixXd(t);
  });
  double worst = 0.0;
  for_each_tensor(base, [&](std::string_view name, TensorGroup, const auto& t) {
    MatrixXd fd(t.rows(), t.cols());
    for (Index i = 0; i < t.size(); ++i) {
      const double h = 1e-5;
      HeadParams up = base, down = base;
      for_each_tensor(up, [&](std::string_view n2, TensorGroup, auto& u) {
        if (n2 == name) u.data()[i] += h;
      });
      for_each_tensor(down, [&](std::string_view n2, TensorGroup, auto& u) {
        if (n2 == name) u.data()[i] -= h;
      });
      fd.data()[i] = (heads_probe(up, x, gz, gc) - heads_probe(down, x, gz, gc)) / (2.0 * h);
    }
    const MatrixXd& got = analytic.at(std::string(name));
    if (name == "fc1.bias") {
      zero_bias_analytic = std::max(zero_bias_analytic, got.cwiseAbs().maxCoeff());
      zero_bias_fd = std::max(zero_bias_fd, fd.cwiseAbs().maxCoeff());
    } else {
      worst = std::max(worst, max_rel_error(got, fd));
    }
  });
  return worst;
}

void gradient_fidelity() {
  const auto t0 = Clock::now();
  Rng rng(101);
  const double inf = std::numeric_limits<double>::infinity();
  std::map<std::string, double> worst;
  int instances = 0;
  for (int t = 0; t < kGradInstances; ++t) {
    const auto seed = static_cast<std::uint64_t>(1000 + 10 * t);
    const Index d = draw(rng, 2, 8), b = draw(rng, 2, 16);
    RateConfig cfg;
    const MatrixXd z = random_unit_columns(d, b, seed);

    const auto fd_r = fd_gradient([&](const MatrixXd& m) { return rate(m, cfg); }, z);
    worst["rate"] = std::max(worst["rate"], max_rel_error(rate_grad(z, cfg), fd_r));

    const MatrixXd pi = gen_doubly_stochastic(b, seed + 1);
    const auto rc = compressed_grads(z, pi, cfg);
    const auto fd_rz = fd_gradient([&](const MatrixXd& m) { return rate_compressed(m, pi, cfg, inf); }, z);
    const auto fd_rp = fd_gradient([&](const MatrixXd& m) { return rate_compressed(z, m, cfg, inf); }, pi);
    worst["rate_compressed/Z"] = std::max(worst["rate_compressed/Z"], max_rel_error(rc.grad_z, fd_rz));
    worst["rate_compressed/Pi"] = std::max(worst["rate_compressed/Pi"], max_rel_error(rc.grad_pi, fd_rp));

    const double gammas[] = {0.09, 0.1, 0.175, 1.0, 100.0};
    const SinkhornConfig sc{gammas[t % 5], static_cast<int>(draw(rng, 1, 10))};
    const MatrixXd c = random_unit_columns(d, b, seed + 2);
    const MatrixXd a = c.transpose() * c;
    const MatrixXd up = gaussian(b, b, seed + 3);
    const auto fd_s = fd_gradient([&](const MatrixXd& m) { return project(m, sc).cwiseProduct(up).sum(); }, a);
    worst["sinkhorn_vjp"] = std::max(worst["sinkhorn_vjp"], max_rel_error(project_vjp(a, sc, up), fd_s));

    worst["heads_backward"] = std::max(worst["heads_backward"], heads_worst_error(seed + 4, rng));
    instances += 5;
  }
  const double secs = seconds_since(t0);
  double overall = 0.0;
  std::ostringstream detail;
  for (const auto& [name, err] : worst) {
    overall = std::max(overall, err);
    detail << name << " " << fmt("%.2e", err) << ", ";
  }
  detail << instances << " instances (" << kGradInstances << " per family), max rel err "
         << fmt("%.2e", overall) << " (tol " << fmt("%.0e", kGradTol) << "), fc1.bias (zero under BN) |analytic| "
         << fmt("%.1e", zero_bias_analytic) << " |fd| " << fmt("%.1e", zero_bias_fd) << ", " << fmt("%.1f", secs)
         << " s (limit " << fmt("%.0f", kGradBudgetSec) << " s)";
  const bool zero_ok = zero_bias_analytic < kZeroGradAnalytic && zero_bias_fd < kZeroGradFd;
  report(overall < kGradTol && zero_ok && secs < kGradBudgetSec, "gradient fidelity", detail.str());
}

// Doubly stochastic contract ---------------------------------------------------

void doubly_stochastic() {
  Rng rng(202);
  const double gammas[] = {0.09, 0.1, 0.175, 1.0, 100.0};
  double worst = 0.0;
  int max_sweeps = 0, not_converged = 0;
  for (int t = 0; t < kSinkhornInputs; ++t) {
    const double gamma = gammas[t % 5];
    const Index n = draw(rng, 2, 200), d = draw(rng, 2, 32);
    // what evaluation projects: the Gram matrix of unit-norm codes
    const MatrixXd c = random_unit_columns(d, n, 3000 + static_cast<std::uint64_t>(t));
    const auto r = project_converged(c.transpose() * c, gamma);
    const double row = (r.pi.rowwise().sum().array() - 1.0).abs().maxCoeff();
    const double col = (r.pi.colwise().sum().array() - 1.0).abs().maxCoeff();
    worst = std::max({worst, row, col});
    max_sweeps = std::max(max_sweeps, r.sweeps);
    if (!r.converged) ++not_converged;
  }
  report(worst <= kSumTol && not_converged == 0, "doubly stochastic contract",
         std::to_string(kSinkhornInputs) + " inputs over gamma {0.09, 0.1, 0.175, 1, 100}, worst |sum - 1| " +
             fmt("%.2e", worst) + " (tol " + fmt("%.0e", kSumTol) + "), max sweeps " +
             std::to_string(max_sweeps) + ", unconverged " + std::to_string(not_converged));
}

// Jensen bound -----------------------------------------------------------------

void jensen_bound() {
  Rng rng(303);
  double min_dr = std::numeric_limits<double>::infinity();
  double worst_uniform = 0.0;
  for (int t = 0; t < kJensenPairs; ++t) {
    const Index d = draw(rng, 2, 16), n = draw(rng, 2, 64);
    const auto seed = 4000 + static_cast<std::uint64_t>(t);
    const MatrixXd z = random_unit_columns(d, n, seed);
    const RateConfig cfg;
    min_dr = std::min(min_dr, rate_reduction(z, gen_doubly_stochastic(n, seed + 1), cfg));
    const MatrixXd uniform = MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    worst_uniform = std::max(worst_uniform, std::abs(rate_compressed(z, uniform, cfg) - rate(z, cfg)));
  }
  report(min_dr >= -kJensenTol && worst_uniform <= kUniformTol, "Jensen bound",
         "min dR " + fmt("%.3e", min_dr) + " over " + std::to_string(kJensenPairs) + " pairs (tol -" +
             fmt("%.0e", kJensenTol) + "), max |Rc(uniform) - R| " + fmt("%.2e", worst_uniform) + " (tol " +
             fmt("%.0e", kUniformTol) + ")");
}

// Synthetic recovery --------------------------------------------------------------

void synthetic_recovery() {
  const auto t0 = Clock::now();
  SubspaceSpec spec;  // k 5, dims 2, ambient 32, 200 per cluster, sigma 0.05
  const auto data = gen_subspaces(spec);
  TrainConfig cfg = preset("cifar10");
  // preset warmup share (1 of 5 epochs) scaled to 30 epochs; one batch is the whole set
  cfg.epochs_init = 6;
  cfg.epochs_total = 30;
  cfg.batch_size = data.points.rows();
  cfg.threads = 1;
  const MatrixXd x = data.points.data.transpose();
  auto state = init_state(cfg, x.rows());
  train(state, x, cfg);
  const auto e = infer(state.params, x);
  const MatrixXd pi = build_affinity(e.c, cfg.gamma);
  const auto assignment = spectral_cluster(pi, kRecoveryK, 0);
  const double acc = clustering_accuracy(assignment.labels, data.labels);
  const auto curve = select_k(e.z, pi, kRecoveryMaxK, cfg.rate_config(), 0);
  const double secs = seconds_since(t0);
  report(acc >= kRecoveryAcc && curve.argmin_k == kRecoveryK && secs < kRecoveryBudgetSec, "synthetic recovery",
         "ACC " + fmt("%.4f", acc) + " (min " + fmt("%.2f", kRecoveryAcc) + "), NMI " +
             fmt("%.4f", nmi(assignment.labels, data.labels)) + ", select-k argmin " +
             std::to_string(curve.argmin_k) + " of K=" + std::to_string(kRecoveryMaxK) + " (want " +
             std::to_string(kRecoveryK) + "), " + fmt("%.1f", secs) + " s (limit " +
             fmt("%.0f", kRecoveryBudgetSec) + " s)");
}

// Exact-oracle metrics ------------------------------------------------------------

double brute_force_cost(const MatrixXd& cost) {
  const MatrixXd c = cost.rows() > cost.cols() ? MatrixXd(cost.transpose()) : cost;
  std::vector<int> cols(static_cast<std::size_t>(c.cols()));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Index r = 0; r < c.rows(); ++r) total += c(r, cols[static_cast<std::size_t>(r)]);
    best = std::min(best, total);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

double nmi_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    pa[a[i]] += 1.0;
    pb[b[i]] += 1.0;
  }
  double mi = 0.0, ha = 0.0, hb = 0.0;
  for (const auto& [key, nij] : joint) mi += nij / n * std::log(n * nij / (pa[key.first] * pb[key.second]));
  for (const auto& [k, c] : pa) ha -= c / n * std::log(c / n);
  for (const auto& [k, c] : pb) hb -= c / n * std::log(c / n);
  return mi / std::sqrt(ha * hb);
}

void exact_metrics() {
  Rng rng(505);
  int mismatches = 0;
  for (int t = 0; t < kHungarianInstances; ++t) {
    const Index p = draw(rng, 1, 6), q = draw(rng, 1, 6);
    const MatrixXd cost = mlc::test::uniform(p, q, 5000 + static_cast<std::uint64_t>(t), 0.0, 10.0);
    if (std::abs(hungarian(cost).cost - brute_force_cost(cost)) > 1e-12 * (1.0 + cost.cwiseAbs().sum()))
      ++mismatches;
  }
  const std::vector<int> truth{0, 0, 1, 1}, pred{1, 1, 0, 2};
  const double acc = clustering_accuracy(pred, truth);
  double nmi_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<int> a(50), b(50);
    const int ka = static_cast<int>(draw(rng, 2, 6)), kb = static_cast<int>(draw(rng, 2, 6));
    for (std::size_t i = 0; i < 50; ++i) {
      a[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(ka)));
      b[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(kb)));
    }
    nmi_err = std::max(nmi_err, std::abs(nmi(a, b) - nmi_oracle(a, b)));
  }
  report(mismatches == 0 && acc == 0.75 && nmi_err <= kNmiTol, "exact-oracle metrics",
         "Hungarian vs exhaustive search " + std::to_string(kHungarianInstances - mismatches) + "/" +
             std::to_string(kHungarianInstances) + " (k <= 6), worked-example ACC " + fmt("%.4f", acc) +
             " (want 0.75), max |NMI - contingency oracle| " + fmt("%.1e", nmi_err) + " (tol " +
             fmt("%.0e", kNmiTol) + ")");
}

// Determinism -----------------------------------------------------------------------

void determinism() {
  const auto dir = mlc::test::scratch_dir("acceptance_determinism");
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) { return run_cli(args, sink, sink); };
  bool ok = run({"gen", "--seed", "7", "--out", (dir / "x.emb").string()}) == 0;
  const nlohmann::json cfg = {{"preset", "cifar10"}, {"embeddings", "x.emb"}, {"d", 16},
                              {"d_hidden", 64},      {"batch_size", 250},     {"epochs_init", 1},
                              {"epochs_total", 3},   {"seed", 11},            {"deterministic", true}};
  atomic_write(dir / "c.json", cfg.dump());
  ok = ok && run({"train", "--config", (dir / "c.json").string(), "--out", (dir / "a.mlck").string()}) == 0;
  ok = ok && run({"train", "--config", (dir / "c.json").string(), "--out", (dir / "b.mlck").string()}) == 0;
  bool same_ckpt = false, same_log = false;
  std::size_t bytes = 0;
  if (ok) {
    const auto a = read_bytes(dir / "a.mlck");
    same_ckpt = a == read_bytes(dir / "b.mlck");
    same_log = read_text(dir / "a.train.csv") == read_text(dir / "b.train.csv");
    bytes = a.size();
  }
  report(ok && same_ckpt && same_log, "determinism",
         std::string("two `train` runs in deterministic mode: checkpoints ") +
             (same_ckpt ? "bitwise identical" : "differ") + " (" + std::to_string(bytes) + " bytes), logs " +
             (same_log ? "identical" : "differ") + (ok ? "" : ", a command failed: " + sink.str()));
}

}  // namespace

int main() {
  gradient_fidelity();
  doubly_stochastic();
  jensen_bound();
  synthetic_recovery();
  exact_metrics();
  determinism();
  return failures == 0 ? 0 : 1;
}
