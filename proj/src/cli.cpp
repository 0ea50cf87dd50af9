#include "mlc/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlc/captioning.hpp"
#include "mlc/embedding_store.hpp"
#include "mlc/errors.hpp"
#include "mlc/io.hpp"
#include "mlc/metrics.hpp"
#include "mlc/model_selection.hpp"
#include "mlc/spectral.hpp"
#include "mlc/synthetic.hpp"
#include "mlc/trainer.hpp"

namespace mlc {
namespace {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::MatrixXd;
using nlohmann::json;

enum class LogLevel { Quiet, Info, Debug };

// MLC_LOG_LEVEL=quiet|info|debug
LogLevel log_level_from_env() {
  const char* v = std::getenv("MLC_LOG_LEVEL");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

struct Context {
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  LogLevel level = LogLevel::Info;
  std::optional<int> threads;
  bool deterministic = false;

  void log(LogLevel at, const std::string& msg) const {
    if (level >= at && at != LogLevel::Quiet) *err << msg << '\n';
  }
  void warn(const std::string& msg) const { *err << "warning: " << msg << '\n'; }
  void emit(const json& j) const { *out << j.dump() << '\n'; }
  int effective_threads(int configured) const {
    if (deterministic) return 1;
    return threads.value_or(configured);
  }
};

// Configuration ---------------------------------------------------------------

struct PipelineConfig {
  TrainConfig train;
  fs::path embeddings;
  fs::path checkpoint;
  Index eval_cap = kDefaultEvalCap;
  bool deterministic = false;
};

const std::set<std::string>& pipeline_keys() {
  static const std::set<std::string> keys{"preset", "embeddings", "checkpoint", "eval_cap",
                                          "deterministic"};
  return keys;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + " is not a JSON object");
  const json known = to_json(TrainConfig{});
  json train_part = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.contains(it.key()) || it.key() == "preset")
      train_part[it.key()] = it.value();
    else if (!pipeline_keys().count(it.key()))
      throw ConfigError("unknown config key '" + it.key() + "' in " + path.string());
  }
  PipelineConfig pc;
  pc.train = train_config_from_json(train_part);
  try {
    auto resolve = [&](const char* key) -> fs::path {
      if (!j.contains(key)) return {};
      const fs::path p = j.at(key).get<std::string>();
      return p.is_relative() ? path.parent_path() / p : p;
    };
    pc.embeddings = resolve("embeddings");
    pc.checkpoint = resolve("checkpoint");
    pc.eval_cap = j.value("eval_cap", kDefaultEvalCap);
    pc.deterministic = j.value("deterministic", false);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (pc.eval_cap < 1) throw ConfigError("eval_cap must be >= 1");
  return pc;
}

// Files ----------------------------------------------------------------------

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw IoError(what + " not found: " + p.string());
}

void ensure_parent(const fs::path& p) {
  const auto dir = p.parent_path();
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

EmbeddingMatrix load_embeddings(const fs::path& p) {
  require_file(p, "embedding file");
  return read_embeddings(p);
}

json parse_json_file(const fs::path& p, const std::string& what) {
  require_file(p, what);
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

/// Labels plus the source rows they refer to (empty = all rows in order).
struct LabelFile {
  std::vector<int> labels;
  std::vector<Index> indices;
};

LabelFile read_label_file(const fs::path& p) {
  const json j = parse_json_file(p, "label file");
  LabelFile f;
  try {
    if (!j.is_object() || !j.contains("labels")) throw FormatError(p.string() + " has no \"labels\"");
    f.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("indices")) f.indices = j.at("indices").get<std::vector<Index>>();
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  if (!f.indices.empty() && f.indices.size() != f.labels.size())
    throw ValidationError(p.string() + ": indices and labels differ in length");
  return f;
}

ClusterAssignment read_assignment(const fs::path& p, std::vector<Index>& indices) {
  require_file(p, "label file");
  return assignment_from_json(read_text(p), &indices);
}

/// Rows of `m` selected by `indices`, or all of `m` when `indices` is empty.
MatrixXd select_rows(const MatrixXd& m, const std::vector<Index>& indices, std::size_t expected) {
  if (indices.empty()) {
    if (static_cast<std::size_t>(m.rows()) != expected)
      throw ValidationError("labels cover " + std::to_string(expected) + " samples but the file has " +
                            std::to_string(m.rows()) + " rows");
    return m;
  }
  for (Index i : indices)
    if (i < 0 || i >= m.rows())
      throw ValidationError("label index " + std::to_string(i) + " outside [0, " +
                            std::to_string(m.rows()) + ")");
  return m(indices, Eigen::all);
}

fs::path training_log_path(const fs::path& ckpt) {
  auto p = ckpt;
  p.replace_extension(".train.csv");
  return p;
}

// Encoders --------------------------------------------------------------------

Embeddings encode(const std::optional<Checkpoint>& ckpt, const MatrixXd& rows) {
  if (!ckpt) {
    MatrixXd u = rows.transpose();
    for (Index j = 0; j < u.cols(); ++j) {
      const double n = u.col(j).norm();
      if (n == 0.0) throw ValidationError("zero-norm embedding row " + std::to_string(j));
      u.col(j) /= n;
    }
    return {u, u};
  }
  if (rows.cols() != ckpt->state.params.d_in())
    throw ValidationError("embeddings have width " + std::to_string(rows.cols()) +
                          ", checkpoint expects " + std::to_string(ckpt->state.params.d_in()));
  return infer(ckpt->state.params, rows.transpose());
}

std::optional<Checkpoint> maybe_checkpoint(const std::string& path) {
  if (path.empty()) return std::nullopt;
  require_file(path, "checkpoint");
  return load_checkpoint(path);
}

const MatrixXd& pick_head(const Embeddings& e, const std::string& head) {
  return head == "cluster" ? e.c : e.z;
}

double default_gamma(const std::optional<Checkpoint>& ckpt, std::optional<double> flag) {
  if (flag) return *flag;
  return ckpt ? ckpt->config.gamma : TrainConfig{}.gamma;
}

RateConfig rate_config_for(const std::optional<Checkpoint>& ckpt, Index d, const Context& ctx) {
  RateConfig cfg;
  cfg.eps_sq = ckpt ? ckpt->config.eps_sq : TrainConfig{}.eps_sq;
  cfg.feature_dim = d;
  cfg.threads = ctx.effective_threads(ckpt ? ckpt->config.threads : 1);
  return cfg;
}

// Commands --------------------------------------------------------------------

struct GenArgs {
  SubspaceSpec spec;
  std::string out;
};

void cmd_gen(const GenArgs& a, const Context& ctx) {
  auto data = gen_subspaces(a.spec);
  std::vector<std::string> ids;
  ids.reserve(data.labels.size());
  char buf[32];
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    std::snprintf(buf, sizeof buf, "s%06zu", i);
    ids.emplace_back(buf);
  }
  data.points.ids = ids;
  const fs::path out = a.out;
  ensure_parent(out);
  write_embeddings(data.points, out);
  DatasetManifest manifest;
  manifest.embedding_path = out.filename();
  manifest.ids = ids;
  manifest.labels = data.labels;
  write_manifest(manifest, sidecar_path(out));
  ctx.emit({{"embeddings", out.string()},
            {"manifest", sidecar_path(out).string()},
            {"n", data.points.rows()},
            {"d", data.points.cols()},
            {"k", a.spec.k}});
}

struct TrainArgs {
  std::string config;
  std::string resume;
  std::string out;
};

void cmd_train(const TrainArgs& a, bool warmup_only, const Context& ctx) {
  auto pc = load_pipeline_config(a.config);
  if (pc.deterministic && ctx.threads && *ctx.threads != 1)
    throw ConfigError("deterministic mode runs single-threaded; drop --threads");
  Context run_ctx = ctx;
  run_ctx.deterministic = ctx.deterministic || pc.deterministic;
  TrainConfig cfg = pc.train;
  cfg.threads = run_ctx.effective_threads(cfg.threads);
  if (pc.embeddings.empty()) throw ConfigError("config needs an \"embeddings\" path");
  const fs::path ckpt_path = a.out.empty() ? pc.checkpoint : fs::path(a.out);
  if (ckpt_path.empty())
    throw ConfigError("no checkpoint path: set \"checkpoint\" in the config or pass --out");

  const auto emb = load_embeddings(pc.embeddings);
  const MatrixXd x = emb.data.transpose();

  TrainState state;
  std::vector<std::string> prior_log;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    auto ck = load_checkpoint(a.resume);
    if (ck.config.d != cfg.d || ck.config.d_hidden != cfg.d_hidden)
      throw ConfigError("checkpoint architecture (d " + std::to_string(ck.config.d) + ", d_hidden " +
                        std::to_string(ck.config.d_hidden) + ") does not match the config");
    state = std::move(ck.state);
    state.feature_opt.settings = cfg.feature_optimizer;
    state.cluster_opt.settings = cfg.cluster_optimizer;
    // keep the log rows that led up to the resumed state
    const auto old_log = training_log_path(a.resume);
    if (fs::is_regular_file(old_log)) {
      std::istringstream in(read_text(old_log));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        if (std::stoll(line.substr(0, comma)) <= state.global_step) prior_log.push_back(line);
      }
    }
  } else {
    state = init_state(cfg, x.rows());
  }

  ensure_parent(ckpt_path);
  const fs::path log_path = training_log_path(ckpt_path);
  std::vector<StepRecord> records;
  auto write_log = [&] {
    std::string csv = training_log_csv(records);
    const auto header_end = csv.find('\n') + 1;
    std::string body;
    for (const auto& l : prior_log) body += l + '\n';
    csv.insert(header_end, body);
    atomic_write(log_path, csv);
  };
  TrainCallbacks cb;
  cb.on_step = [&](const StepRecord& r) {
    records.push_back(r);
    if (run_ctx.level >= LogLevel::Debug) {
      std::ostringstream msg;
      msg << "step " << r.step << " epoch " << r.epoch << " R " << r.rate;
      if (r.phase == Phase::Mlc) msg << " Rc " << r.rate_compressed << " dR " << r.rate_reduction;
      run_ctx.log(LogLevel::Debug, msg.str());
    }
  };
  cb.on_epoch_end = [&](const TrainState& s) {
    save_checkpoint(s, cfg, ckpt_path);
    write_log();
    std::ostringstream msg;
    msg << "epoch " << s.epochs_done << "/" << cfg.epochs_total;
    if (!records.empty()) {
      msg << " R " << records.back().rate;
      if (records.back().phase == Phase::Mlc) msg << " dR " << records.back().rate_reduction;
    }
    run_ctx.log(LogLevel::Info, msg.str());
  };
  if (warmup_only)
    warmup(state, x, cfg, cb);
  else
    train(state, x, cfg, cb);
  save_checkpoint(state, cfg, ckpt_path);
  write_log();
  ctx.emit({{"checkpoint", ckpt_path.string()},
            {"log", log_path.string()},
            {"epochs_done", state.epochs_done},
            {"global_step", state.global_step}});
}

struct EmbedArgs {
  std::string ckpt, in, out, head = "feature";
};

void cmd_embed(const EmbedArgs& a, const Context& ctx) {
  const auto ckpt = maybe_checkpoint(a.ckpt);
  const auto emb = load_embeddings(a.in);
  const auto e = encode(ckpt, emb.data);
  EmbeddingMatrix out{pick_head(e, a.head).transpose(), emb.ids};
  ensure_parent(a.out);
  write_embeddings(out, a.out);
  ctx.emit({{"embeddings", a.out}, {"n", out.rows()}, {"d", out.cols()}, {"head", a.head}});
}

struct ClusterArgs {
  std::string ckpt, in, out;
  int k = 0;
  std::optional<double> gamma;
  Index eval_cap = kDefaultEvalCap;
  std::uint64_t seed = 0;
};

void cmd_cluster(const ClusterArgs& a, const Context& ctx) {
  const auto ckpt = maybe_checkpoint(a.ckpt);
  const auto emb = load_embeddings(a.in);
  const auto sub = subsample_eval(emb, a.eval_cap, a.seed);
  const bool subsampled = sub.matrix.rows() < emb.rows();
  if (subsampled)
    ctx.log(LogLevel::Info, "clustering a subsample of " + std::to_string(sub.matrix.rows()) + " of " +
                                std::to_string(emb.rows()) + " rows");
  const auto e = encode(ckpt, sub.matrix.data);
  const double gamma = default_gamma(ckpt, a.gamma);
  const MatrixXd pi = build_affinity(e.c, gamma, a.eval_cap);
  const auto assignment = spectral_cluster(pi, a.k, a.seed);
  ensure_parent(a.out);
  atomic_write(a.out, assignment_to_json(assignment, subsampled ? &sub.source_index : nullptr));
  std::vector<Index> sizes(static_cast<std::size_t>(a.k), 0);
  for (int l : assignment.labels) ++sizes[static_cast<std::size_t>(l)];
  ctx.emit({{"labels", a.out}, {"k", a.k}, {"n", sub.matrix.rows()}, {"gamma", gamma}, {"sizes", sizes}});
}

struct SelectKArgs {
  std::string ckpt, in, out, svg, labels_out;
  int max_k = 0;
  std::optional<double> gamma;
  Index eval_cap = kDefaultEvalCap;
  std::uint64_t seed = 0;
};

void cmd_select_k(const SelectKArgs& a, const Context& ctx) {
  const auto ckpt = maybe_checkpoint(a.ckpt);
  const auto emb = load_embeddings(a.in);
  const auto sub = subsample_eval(emb, a.eval_cap, a.seed);
  const bool subsampled = sub.matrix.rows() < emb.rows();
  const auto e = encode(ckpt, sub.matrix.data);
  const double gamma = default_gamma(ckpt, a.gamma);
  const MatrixXd pi = build_affinity(e.c, gamma, a.eval_cap);
  const auto curve = select_k(e.z, pi, a.max_k, rate_config_for(ckpt, e.z.rows(), ctx), a.seed);
  ensure_parent(a.out);
  std::optional<fs::path> svg;
  if (!a.svg.empty()) {
    ensure_parent(a.svg);
    svg = a.svg;
  }
  export_curve(curve, a.out, svg);
  if (!a.labels_out.empty()) {
    ClusterAssignment best{curve.labels[static_cast<std::size_t>(curve.argmin_k - 1)], curve.argmin_k,
                           AssignmentSource::SpectralOnPi};
    ensure_parent(a.labels_out);
    atomic_write(a.labels_out, assignment_to_json(best, subsampled ? &sub.source_index : nullptr));
  }
  ctx.emit({{"curve", a.out}, {"argmin_k", curve.argmin_k}, {"values", curve.values}, {"gamma", gamma}});
}

struct CaptionArgs {
  std::string labels, img, txt, candidates, out;
  int top_m = 5;
};

std::vector<std::string> read_candidates(const fs::path& p) {
  const json j = parse_json_file(p, "candidate file");
  try {
    if (j.is_array()) return j.get<std::vector<std::string>>();
    if (j.is_object() && j.contains("text_candidates"))
      return j.at("text_candidates").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  throw FormatError(p.string() + ": expected a list of strings or a \"text_candidates\" key");
}

void cmd_caption(const CaptionArgs& a, const Context& ctx) {
  std::vector<Index> indices;
  const auto assignment = read_assignment(a.labels, indices);
  const auto img = load_embeddings(a.img);
  const auto txt = load_embeddings(a.txt);
  const auto candidates = read_candidates(a.candidates);
  if (static_cast<Index>(candidates.size()) != txt.rows())
    throw ValidationError(std::to_string(candidates.size()) + " candidates but " +
                          std::to_string(txt.rows()) + " text embeddings");
  const MatrixXd rows = select_rows(img.data, indices, assignment.labels.size());
  json report = json::array();
  for (int c = 0; c < assignment.k; ++c) {
    std::vector<Index> members;
    for (std::size_t i = 0; i < assignment.labels.size(); ++i)
      if (assignment.labels[i] == c) members.push_back(static_cast<Index>(i));
    if (members.empty()) {
      ctx.warn("cluster " + std::to_string(c) + " is empty; no caption");
      continue;
    }
    const auto vote = vote_caption(rows(members, Eigen::all), txt.data, candidates, a.top_m);
    json top = json::array(), votes = json::array();
    for (Index t : top_votes(vote.votes, a.top_m)) {
      top.push_back(candidates[static_cast<std::size_t>(t)]);
      votes.push_back(vote.votes(t));
    }
    report.push_back({{"cluster", c}, {"caption", vote.caption}, {"top5_candidates", top}, {"votes", votes}});
  }
  ensure_parent(a.out);
  atomic_write(a.out, report.dump(2));
  ctx.emit({{"captions", a.out}, {"clusters", report.size()}});
}

struct SearchArgs {
  std::string repo, metric = "euclidean", out;
  Index query_index = -1;
  int top = 64;
};

void cmd_search(const SearchArgs& a, const Context& ctx) {
  const auto repo = load_embeddings(a.repo);
  if (a.query_index < 0 || a.query_index >= repo.rows())
    throw ConfigError("--query-index " + std::to_string(a.query_index) + " outside [0, " +
                      std::to_string(repo.rows()) + ")");
  const auto metric = search_metric_from_string(a.metric);
  const auto r = image_search(repo.data.row(a.query_index).transpose(), repo.data, a.top, metric);
  if (r.clamped)
    ctx.warn("top " + std::to_string(a.top) + " exceeds the repository size; returning " +
             std::to_string(r.hits.size()));
  json hits = json::array();
  for (std::size_t i = 0; i < r.hits.size(); ++i) {
    json h = {{"rank", i + 1}, {"index", r.hits[i].index}, {"distance", r.hits[i].distance}};
    if (!repo.ids.empty()) h["id"] = repo.ids[static_cast<std::size_t>(r.hits[i].index)];
    hits.push_back(std::move(h));
  }
  const json result = {{"query", a.query_index}, {"metric", a.metric}, {"clamped", r.clamped}, {"hits", hits}};
  if (!a.out.empty()) {
    ensure_parent(a.out);
    atomic_write(a.out, result.dump(2));
  }
  ctx.emit(result);
}

NmiNormalization nmi_from_string(const std::string& s) {
  if (s == "sqrt") return NmiNormalization::Sqrt;
  if (s == "arithmetic") return NmiNormalization::Arithmetic;
  if (s == "max") return NmiNormalization::Max;
  throw ConfigError("unknown NMI normalization '" + s + "' (expected sqrt, arithmetic or max)");
}

std::size_t distinct(const std::vector<int>& v) { return std::set<int>(v.begin(), v.end()).size(); }

json score(const std::vector<int>& pred, const std::vector<int>& truth, const std::string& norm) {
  return {{"acc", clustering_accuracy(pred, truth)},
          {"nmi", nmi(pred, truth, nmi_from_string(norm))},
          {"nmi_normalization", norm},
          {"n", pred.size()},
          {"k_pred", distinct(pred)},
          {"k_true", distinct(truth)}};
}

/// Truth labels for the samples `pred` covers.
std::vector<int> align_truth(const LabelFile& pred, const LabelFile& truth) {
  if (pred.indices.empty() || pred.indices == truth.indices) {
    if (truth.labels.size() != pred.labels.size())
      throw ValidationError("prediction has " + std::to_string(pred.labels.size()) +
                            " labels, truth has " + std::to_string(truth.labels.size()));
    return truth.labels;
  }
  if (!truth.indices.empty())
    throw ValidationError("prediction and truth cover different subsamples");
  std::vector<int> out;
  out.reserve(pred.indices.size());
  for (Index i : pred.indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= truth.labels.size())
      throw ValidationError("prediction index " + std::to_string(i) + " outside the truth labels");
    out.push_back(truth.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

struct EvalArgs {
  std::string pred, truth, out, nmi = "sqrt";
};

void cmd_eval(const EvalArgs& a, const Context& ctx) {
  const auto pred = read_label_file(a.pred);
  const auto truth = read_label_file(a.truth);
  const json result = score(pred.labels, align_truth(pred, truth), a.nmi);
  if (!a.out.empty()) {
    ensure_parent(a.out);
    atomic_write(a.out, result.dump(2));
  }
  ctx.emit(result);
}

struct KMeansArgs {
  std::string in, out, truth, nmi = "sqrt";
  int k = 0;
  std::uint64_t seed = 0;
  bool raw = false;
};

void cmd_kmeans(const KMeansArgs& a, const Context& ctx) {
  const auto emb = load_embeddings(a.in);
  MatrixXd points = emb.data;
  if (!a.raw) points = encode(std::nullopt, emb.data).z.transpose();
  const auto r = kmeans(points, a.k, a.seed);
  json result = {{"k", a.k}, {"n", points.rows()}, {"wcss", r.wcss},
                 {"iterations", r.wcss_trace.size()}, {"restart", r.winning_restart}};
  if (!a.truth.empty()) {
    const LabelFile pred{r.assignment.labels, {}};
    const json s = score(pred.labels, align_truth(pred, read_label_file(a.truth)), a.nmi);
    result["acc"] = s["acc"];
    result["nmi"] = s["nmi"];
  }
  if (!a.out.empty()) {
    ensure_parent(a.out);
    atomic_write(a.out, assignment_to_json(r.assignment));
    result["labels"] = a.out;
  }
  ctx.emit(result);
}

struct FigureArgs {
  std::string ckpt, in, labels, out, head = "feature";
  Index cap = kHeatmapCap;
};

/// Codes of the labeled rows plus their labels.
std::pair<MatrixXd, std::vector<int>> labeled_codes(const FigureArgs& a) {
  const auto ckpt = maybe_checkpoint(a.ckpt);
  const auto emb = load_embeddings(a.in);
  std::vector<Index> indices;
  const auto assignment = read_assignment(a.labels, indices);
  const MatrixXd rows = select_rows(emb.data, indices, assignment.labels.size());
  return {pick_head(encode(ckpt, rows), a.head), assignment.labels};
}

void cmd_heatmap(const FigureArgs& a, const Context& ctx) {
  const auto [codes, labels] = labeled_codes(a);
  const auto h = similarity_heatmap(codes, labels, a.cap);
  fs::path csv = a.out, pgm = a.out;
  csv += ".csv";
  pgm += ".pgm";
  ensure_parent(csv);
  write_heatmap(h, csv, pgm);
  ctx.emit({{"csv", csv.string()}, {"pgm", pgm.string()}, {"n", h.order.size()}});
}

void cmd_spectra(const FigureArgs& a, const Context& ctx) {
  const auto [codes, labels] = labeled_codes(a);
  const auto spectra = spectrum_by_cluster(codes, labels);
  ensure_parent(a.out);
  write_spectra_csv(spectra, a.out);
  ctx.emit({{"spectra", a.out}, {"clusters", spectra.size()}});
}

// Entry -----------------------------------------------------------------------

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numerical: return "numerical";
  }
  return "internal";
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return kExitConfig;
    case ErrorKind::Data: return kExitData;
    case ErrorKind::Numerical: return kExitNumerical;
  }
  return kExitInternal;
}

void emit_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Manifold linearizing and clustering on frozen embeddings", "mlc"};
  app.require_subcommand(1);
  Context ctx;
  ctx.out = &out;
  ctx.err = &err;
  ctx.level = log_level_from_env();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", ctx.deterministic, "Single-threaded reductions");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Write synthetic union-of-subspaces embeddings");
  gen_cmd->add_option("--k", gen.spec.k, "Clusters")->capture_default_str();
  gen_cmd->add_option("--dims", gen.spec.dims, "Subspace dimension")->capture_default_str();
  gen_cmd->add_option("--ambient", gen.spec.ambient, "Ambient dimension")->capture_default_str();
  gen_cmd->add_option("--points", gen.spec.points_per_cluster, "Points per cluster")->capture_default_str();
  gen_cmd->add_option("--sigma", gen.spec.noise_sigma, "Noise level")->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "Seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "EMB1 output (labels go to <out>.json)")->required();

  TrainArgs warm, tr;
  auto* warm_cmd = app.add_subcommand("warmup", "Rate-only warmup, then tie the heads");
  warm_cmd->add_option("--config", warm.config, "Pipeline config JSON")->required();
  warm_cmd->add_option("--resume", warm.resume, "Checkpoint to continue from");
  warm_cmd->add_option("--out", warm.out, "Checkpoint path (overrides the config)");
  auto* train_cmd = app.add_subcommand("train", "Warmup if needed, then joint training");
  train_cmd->add_option("--config", tr.config, "Pipeline config JSON")->required();
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train_cmd->add_option("--out", tr.out, "Checkpoint path (overrides the config)");

  EmbedArgs emb;
  auto* embed_cmd = app.add_subcommand("embed", "Refined embeddings from a checkpoint");
  embed_cmd->add_option("--ckpt", emb.ckpt, "Checkpoint")->required();
  embed_cmd->add_option("--in", emb.in, "Input EMB1")->required();
  embed_cmd->add_option("--out", emb.out, "Output EMB1")->required();
  embed_cmd->add_option("--head", emb.head, "feature or cluster")
      ->check(CLI::IsMember({"feature", "cluster"}))
      ->capture_default_str();

  ClusterArgs cl;
  auto* cluster_cmd = app.add_subcommand("cluster", "Spectral clustering on the membership matrix");
  cluster_cmd->add_option("--ckpt", cl.ckpt, "Checkpoint (default: normalized input rows)");
  cluster_cmd->add_option("--in", cl.in, "Input EMB1")->required();
  cluster_cmd->add_option("--k", cl.k, "Clusters")->required();
  cluster_cmd->add_option("--out", cl.out, "Labels JSON")->required();
  cluster_cmd->add_option("--gamma", cl.gamma, "Sinkhorn temperature (default: checkpoint)");
  cluster_cmd->add_option("--eval-cap", cl.eval_cap, "Subsample above this many rows")->capture_default_str();
  cluster_cmd->add_option("--seed", cl.seed, "Seed")->capture_default_str();

  SelectKArgs sk;
  auto* select_cmd = app.add_subcommand("select-k", "Coding-length curve over k");
  select_cmd->add_option("--ckpt", sk.ckpt, "Checkpoint (default: normalized input rows)");
  select_cmd->add_option("--in", sk.in, "Input EMB1")->required();
  select_cmd->add_option("--max-k", sk.max_k, "Largest k")->required();
  select_cmd->add_option("--out", sk.out, "Curve CSV")->required();
  select_cmd->add_option("--svg", sk.svg, "Curve plot");
  select_cmd->add_option("--labels-out", sk.labels_out, "Labels JSON at the argmin");
  select_cmd->add_option("--gamma", sk.gamma, "Sinkhorn temperature (default: checkpoint)");
  select_cmd->add_option("--eval-cap", sk.eval_cap, "Subsample above this many rows")->capture_default_str();
  select_cmd->add_option("--seed", sk.seed, "Seed")->capture_default_str();

  CaptionArgs cap;
  auto* caption_cmd = app.add_subcommand("caption", "Vote a caption for every cluster");
  caption_cmd->add_option("--labels", cap.labels, "Labels JSON")->required();
  caption_cmd->add_option("--img", cap.img, "Image EMB1 (encoder space)")->required();
  caption_cmd->add_option("--txt", cap.txt, "Text-candidate EMB1")->required();
  caption_cmd->add_option("--candidates", cap.candidates, "Candidate strings JSON")->required();
  caption_cmd->add_option("--out", cap.out, "Captions JSON")->required();
  caption_cmd->add_option("--top-m", cap.top_m, "Votes per image")->capture_default_str();

  SearchArgs se;
  auto* search_cmd = app.add_subcommand("search", "Nearest neighbours of one row");
  search_cmd->add_option("--repo", se.repo, "Repository EMB1")->required();
  search_cmd->add_option("--query-index", se.query_index, "Query row")->required();
  search_cmd->add_option("--top", se.top, "Results")->capture_default_str();
  search_cmd->add_option("--metric", se.metric, "euclidean or cosine")->capture_default_str();
  search_cmd->add_option("--out", se.out, "Also write the result here");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "ACC and NMI against ground truth");
  eval_cmd->add_option("--pred", ev.pred, "Predicted labels JSON")->required();
  eval_cmd->add_option("--truth", ev.truth, "Manifest or labels JSON")->required();
  eval_cmd->add_option("--out", ev.out, "Also write the scores here");
  eval_cmd->add_option("--nmi", ev.nmi, "sqrt, arithmetic or max")->capture_default_str();

  KMeansArgs km;
  auto* kmeans_cmd = app.add_subcommand("kmeans-baseline", "k-means on the input embeddings");
  kmeans_cmd->add_option("--in", km.in, "Input EMB1")->required();
  kmeans_cmd->add_option("--k", km.k, "Clusters")->required();
  kmeans_cmd->add_option("--out", km.out, "Labels JSON");
  kmeans_cmd->add_option("--truth", km.truth, "Manifest or labels JSON to score against");
  kmeans_cmd->add_option("--seed", km.seed, "Seed")->capture_default_str();
  kmeans_cmd->add_option("--nmi", km.nmi, "sqrt, arithmetic or max")->capture_default_str();
  kmeans_cmd->add_flag("--raw", km.raw, "Skip row normalization");

  FigureArgs hm, sp;
  auto* heatmap_cmd = app.add_subcommand("heatmap", "|Z^T Z| sorted by cluster, as CSV and PGM");
  auto* spectra_cmd = app.add_subcommand("spectra", "Normalized singular values per cluster");
  for (auto [cmd, fa] : {std::pair{heatmap_cmd, &hm}, std::pair{spectra_cmd, &sp}}) {
    cmd->add_option("--ckpt", fa->ckpt, "Checkpoint (default: normalized input rows)");
    cmd->add_option("--in", fa->in, "Input EMB1")->required();
    cmd->add_option("--labels", fa->labels, "Labels JSON")->required();
    cmd->add_option("--head", fa->head, "feature or cluster")
        ->check(CLI::IsMember({"feature", "cluster"}))
        ->capture_default_str();
  }
  heatmap_cmd->add_option("--out", hm.out, "Output stem (.csv and .pgm are appended)")->required();
  heatmap_cmd->add_option("--cap", hm.cap, "Largest n")->capture_default_str();
  spectra_cmd->add_option("--out", sp.out, "Spectra CSV")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (threads > 0) ctx.threads = threads;
    if (ctx.deterministic && ctx.threads && *ctx.threads != 1)
      throw ConfigError("--deterministic and --threads " + std::to_string(*ctx.threads) + " conflict");

    if (gen_cmd->parsed()) cmd_gen(gen, ctx);
    else if (warm_cmd->parsed()) cmd_train(warm, true, ctx);
    else if (train_cmd->parsed()) cmd_train(tr, false, ctx);
    else if (embed_cmd->parsed()) cmd_embed(emb, ctx);
    else if (cluster_cmd->parsed()) cmd_cluster(cl, ctx);
    else if (select_cmd->parsed()) cmd_select_k(sk, ctx);
    else if (caption_cmd->parsed()) cmd_caption(cap, ctx);
    else if (search_cmd->parsed()) cmd_search(se, ctx);
    else if (eval_cmd->parsed()) cmd_eval(ev, ctx);
    else if (kmeans_cmd->parsed()) cmd_kmeans(km, ctx);
    else if (heatmap_cmd->parsed()) cmd_heatmap(hm, ctx);
    else if (spectra_cmd->parsed()) cmd_spectra(sp, ctx);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    emit_error(err, "config", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    emit_error(err, kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    emit_error(err, "data", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    emit_error(err, "internal", e.what());
    return kExitInternal;
  }
}

}  // namespace mlc
