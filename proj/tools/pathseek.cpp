#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pathseek/bench.hpp"
#include "pathseek/config.hpp"
#include "pathseek/log.hpp"
#include "pathseek/metrics.hpp"
#include "pathseek/report.hpp"
#include "pathseek/suites.hpp"
#include "pathseek/theory.hpp"
#include "pathseek/trace.hpp"
#include "pathseek/training.hpp"

namespace fs = std::filesystem;
using namespace pathseek;

namespace {

class VerificationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> workers;
  std::optional<double> delta;
  std::optional<int> top_k;
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::optional<std::size_t> count;
  std::optional<std::size_t> limit;
  std::string trace;
  std::string suite = "all";
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "Config file (TOML-like, sections per module)")->check(CLI::ExistingFile);
  sub->add_option("--preset", o.preset, "Base preset")->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--seed", o.seed, "Master seed, threaded through every RNG");
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  sub->add_option("--workers", o.workers, "Instance-level worker threads");
  sub->add_option("--delta", o.delta, "Confidence threshold for early exit");
  sub->add_option("--top-k", o.top_k, "Regions kept per scale transition");
  sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
}

RunConfig resolve(const Options& o) {
  ConfigTable table;
  if (!o.config.empty()) table = load_config_file(o.config);
  std::string base = "desk";
  if (auto it = table.find("preset"); it != table.end())
    if (const auto* s = std::get_if<std::string>(&it->second)) base = *s;
  if (!o.preset.empty()) base = o.preset;
  RunConfig c = preset(base);
  apply_config(c, table);
  c.preset = base;
  if (o.seed) c.apply_seed(*o.seed);
  if (o.workers) c.workers = *o.workers;
  if (o.delta) c.reasoner.confidence_threshold = *o.delta;
  if (o.top_k) c.reasoner.top_k = *o.top_k;
  c.validate();
  return c;
}

DatasetManifest dataset(const Options& o, const RunConfig& c) {
  if (!o.manifest.empty()) {
    auto m = load_manifest(o.manifest);
    if (m.config.num_scales != c.reasoner.num_scales)
      throw ConfigError("reasoner.num_scales: manifest has " + std::to_string(m.config.num_scales) + " scales");
    return m;
  }
  return make_manifest(c.pyramid, c.data.count, c.data.train_fraction, c.data.val_fraction);
}

std::vector<std::uint64_t> split_ids(const DatasetManifest& m, const std::string& split) {
  if (split == "train") return m.train;
  if (split == "val") return m.val;
  if (split == "test") return m.test;
  std::vector<std::uint64_t> all(m.seeds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

std::vector<std::uint64_t> limited(std::vector<std::uint64_t> ids, const std::optional<std::size_t>& limit) {
  if (limit && ids.size() > *limit) ids.resize(*limit);
  return ids;
}

ModelParams<double> load_model(const std::string& path, const DatasetManifest& m) {
  if (path.empty()) throw ConfigError("checkpoint: --checkpoint is required");
  if (!fs::exists(path)) throw ConfigError("checkpoint: no such file " + path);
  auto params = load_checkpoint<double>(fs::path(path));
  if (params.config.input_dim != m.config.feature_dim)
    throw ConfigError("model.input_dim: checkpoint expects " + std::to_string(params.config.input_dim) +
                      " features, dataset has " + std::to_string(m.config.feature_dim));
  if (params.config.num_classes != m.config.num_classes)
    throw ConfigError("model.num_classes: checkpoint and dataset disagree");
  return params;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

ModelParams<double> train_model(const RunConfig& c, const DatasetManifest& m, const fs::path& out) {
  const EncoderStub stub(m.config);
  const auto train_set = instantiate(m, m.train);
  const auto val_set = instantiate(m, m.val);
  auto result = train(train_set, val_set, init_params<double>(c.model), c.train, c.reasoner, stub);
  save_checkpoint(result.params, out / "checkpoint.bin");
  write_metrics_csv(result.metrics, out / "metrics.csv");
  return result.params;
}

int cmd_gen(const Options& o) {
  const auto c = resolve(o);
  const fs::path out(o.out);
  fs::create_directories(out);
  RunConfig cc = c;
  if (o.count) cc.data.count = *o.count;
  const auto m = make_manifest(cc.pyramid, cc.data.count, cc.data.train_fraction, cc.data.val_fraction);
  save_manifest(m, out / "manifest.json");
  write_text(out / "config.toml", dump_config(cc));
  spdlog::info("gen: {} instances ({} train, {} val, {} test), checksum {}", m.seeds.size(), m.train.size(),
               m.val.size(), m.test.size(), m.checksum);
  return 0;
}

int cmd_train(const Options& o) {
  const auto c = resolve(o);
  const fs::path out(o.out);
  fs::create_directories(out);
  const auto m = dataset(o, c);
  if (m.config.feature_dim != c.model.input_dim) throw ConfigError("model.input_dim: must match the dataset");
  write_text(out / "config.toml", dump_config(c));
  train_model(c, m, out);
  spdlog::info("train: wrote {}", (out / "checkpoint.bin").string());
  return 0;
}

int cmd_infer(const Options& o) {
  const auto c = resolve(o);
  const auto m = dataset(o, c);
  const auto params = load_model(o.checkpoint, m);
  const fs::path out(o.out);
  fs::create_directories(out / "traces");
  const auto ids = limited(split_ids(m, o.split), o.limit);
  const auto instances = instantiate(m, ids);
  const EncoderStub stub(m.config);
  const auto traj = infer_dataset(instances, params, c.reasoner, stub, c.workers);
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::vector<double>> scores;
  std::vector<int> labels;
  std::uint64_t calls = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "instance_%06llu.jsonl", static_cast<unsigned long long>(ids[i]));
    write_trace(traj[i], out / "traces" / name);
    rows.push_back({{"id", ids[i]},
                    {"label", instances[i].label},
                    {"final_label", traj[i].final_label},
                    {"stop", to_string(traj[i].stop)},
                    {"encoder_calls", traj[i].budget.total_encoder_calls()}});
    scores.push_back(traj[i].final_probs);
    labels.push_back(instances[i].label);
    calls += traj[i].budget.total_encoder_calls();
  }
  nlohmann::json summary{{"split", o.split},
                         {"instances", ids.size()},
                         {"delta", c.reasoner.confidence_threshold},
                         {"top_k", c.reasoner.top_k},
                         {"mean_encoder_calls", ids.empty() ? 0.0 : static_cast<double>(calls) / ids.size()},
                         {"rows", rows}};
  try {
    summary["macro_auc"] = compute_auc(scores, labels).macro;
  } catch (const std::invalid_argument&) {
    summary["macro_auc"] = nullptr;
  }
  write_json(out / "infer_summary.json", summary);
  spdlog::info("infer: {} traces under {}", ids.size(), (out / "traces").string());
  return 0;
}

int cmd_trace(const Options& o) {
  const auto c = resolve(o);
  if (o.trace.empty()) throw ConfigError("trace: --trace is required");
  if (!fs::exists(o.trace)) throw ConfigError("trace: no such file " + o.trace);
  const auto t = read_trace(o.trace);
  const fs::path out(o.out);
  fs::create_directories(out);
  const auto path = out / (fs::path(o.trace).stem().string() + ".svg");
  write_text(path, trajectory_svg(t, c.reasoner.confidence_threshold));
  spdlog::info("trace: wrote {}", path.string());
  return 0;
}

int cmd_bench(const Options& o) {
  const auto c = resolve(o);
  const auto m = dataset(o, c);
  const fs::path out(o.out);
  fs::create_directories(out);
  const auto params = o.checkpoint.empty() ? train_model(c, m, out) : load_model(o.checkpoint, m);
  const EncoderStub stub(m.config);
  const auto baseline = baseline_mil_train(instantiate(m, m.train), instantiate(m, m.val), c.baseline, stub);
  const auto test = instantiate(m, limited(m.test, o.limit));
  const auto report = run_bench(test, params, baseline, c.reasoner, stub, c.bench.delta_grid, c.workers);
  emit_report(report, out, c.reasoner.confidence_threshold);
  for (const auto& s : report.methods)
    spdlog::info("bench: {:<16} auc {:.4f} patches {:.1f} time {:.1f}", s.method, s.auc, s.mean_patches, s.mean_time);
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto c = resolve(o);
  const auto m = dataset(o, c);
  const auto params = load_model(o.checkpoint, m);
  const fs::path out(o.out);
  fs::create_directories(out);
  const EncoderStub stub(m.config);
  const auto test = instantiate(m, limited(m.test, o.limit));
  BenchReport report;
  report.sweep = sweep(test, params, c.reasoner, stub, c.bench.k_grid, c.bench.delta_grid, c.workers);
  write_text(out / "sweep.csv", sweep_csv(report.sweep));
  write_text(out / "sweep_heatmap.svg", sweep_heatmap_svg(report.sweep));
  write_json(out / "sweep.json", to_json(report));
  spdlog::info("sweep: {} rows", report.sweep.size());
  return 0;
}

int cmd_verify(const Options& o) {
  const auto c = resolve(o);
  const fs::path out(o.out);
  fs::create_directories(out);
  bool ok = true;
  const bool all = o.suite == "all";
  if (all || o.suite == "fano") {
    auto r = run_fano_suite(c.seed);
    if (!o.checkpoint.empty()) {
      const auto m = dataset(o, c);
      const auto params = load_model(o.checkpoint, m);
      const auto test = instantiate(m, limited(m.test, o.limit));
      r.empirical = verify_fano(params, test, c.reasoner, EncoderStub(m.config), c.bench.delta_grid, c.workers);
    }
    const auto j = to_json(r);
    write_json(out / "fano.json", j);
    std::cout << j.dump() << "\n";
    for (const auto& rep : r.empirical) ok = ok && (rep.count == 0 || rep.bound_satisfied);
    ok = ok && r.dpi_failures == 0;
  }
  if (all || o.suite == "influence") {
    const auto m = dataset(o, c);
    auto params = o.checkpoint.empty() ? init_params<double>(c.model) : load_model(o.checkpoint, m);
    const auto test = instantiate(m, limited(m.test, o.limit.value_or(8)));
    ReasonerConfig rc = c.reasoner;
    rc.stopping_enabled = false;
    const auto r = verify_influence(params, test, rc, EncoderStub(m.config));
    write_json(out / "influence.json", to_json(r));
    spdlog::info("influence: {} snapshots, cauchy-schwarz {}, taylor {} ({} checked, {} skipped), spearman {:.3f}",
                 r.snapshots, r.cauchy_schwarz_ok, r.taylor_ok, r.taylor_checked, r.taylor_skipped, r.spearman_rho);
    ok = ok && r.cauchy_schwarz_ok && r.taylor_ok;
  }
  if (all || o.suite == "gradient") {
    const auto r = run_gradient_suite();
    auto j = to_json(r.report);
    j["epsilon"] = r.epsilon;
    j["seconds"] = r.seconds;
    write_json(out / "gradient.json", j);
    spdlog::info("gradient: max relative error {:.3g}", r.report.max_relative_error);
    ok = ok && r.report.max_relative_error < 1e-4;
  }
  if (!ok) throw VerificationFailure("verify: suite '" + o.suite + "' failed, see " + out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"pathseek: adaptive coarse-to-fine slide classification"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen", "Generate a dataset manifest");
  add_common(gen, o);
  gen->add_option("--count", o.count, "Number of instances (overrides data.count)");

  auto* tr = app.add_subcommand("train", "Train the adaptive model");
  add_common(tr, o);
  tr->add_option("--manifest", o.manifest, "Dataset manifest (generated from the config when omitted)");

  auto* inf = app.add_subcommand("infer", "Run inference and write per-instance traces");
  add_common(inf, o);
  inf->add_option("--manifest", o.manifest, "Dataset manifest");
  inf->add_option("--split", o.split, "Instances to run")->check(CLI::IsMember({"train", "val", "test", "all"}));
  inf->add_option("--limit", o.limit, "Use at most this many instances");

  auto* trc = app.add_subcommand("trace", "Render a trace file to SVG");
  add_common(trc, o);
  trc->add_option("--trace", o.trace, "Trace file (JSON Lines)");

  auto* bench = app.add_subcommand("bench", "Compare against the exhaustive baseline");
  add_common(bench, o);
  bench->add_option("--manifest", o.manifest, "Dataset manifest");
  bench->add_option("--limit", o.limit, "Use at most this many test instances");

  auto* sw = app.add_subcommand("sweep", "Sweep top-K and the confidence threshold");
  add_common(sw, o);
  sw->add_option("--manifest", o.manifest, "Dataset manifest");
  sw->add_option("--limit", o.limit, "Use at most this many test instances");

  auto* ver = app.add_subcommand("verify", "Run the theory and gradient suites");
  add_common(ver, o);
  ver->add_option("--suite", o.suite, "Suite to run")->check(CLI::IsMember({"fano", "influence", "gradient", "all"}));
  ver->add_option("--manifest", o.manifest, "Dataset manifest");
  ver->add_option("--limit", o.limit, "Use at most this many test instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(o);
    if (tr->parsed()) return cmd_train(o);
    if (inf->parsed()) return cmd_infer(o);
    if (trc->parsed()) return cmd_trace(o);
    if (bench->parsed()) return cmd_bench(o);
    if (sw->parsed()) return cmd_sweep(o);
    if (ver->parsed()) return cmd_verify(o);
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const ManifestError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 1;
}
