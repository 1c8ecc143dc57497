// forensicflow: synthesis, training, evaluation, ablation, Grad-CAM, CIs and
// gradient self-checks from one executable.
//
// Exit codes: 0 ok, 2 config, 3 IO, 4 numeric, 5 artifact mismatch.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "forensicflow/ablation.hpp"
#include "forensicflow/checkpoint.hpp"
#include "forensicflow/config.hpp"
#include "forensicflow/error.hpp"
#include "forensicflow/gradcam.hpp"
#include "forensicflow/gradcheck.hpp"
#include "forensicflow/synth.hpp"
#include "forensicflow/training.hpp"

namespace fs = std::filesystem;
using namespace ff;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kNumeric = 4, kMismatch = 5 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.synth.validate();
  cfg.train.schedule.validate();
  cfg.train.focal.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

/// Rebuilds the model recorded in a checkpoint. Missing or malformed
/// checkpoints are artifact mismatches.
std::unique_ptr<ForensicFlow> load_model(const fs::path& path) {
  Checkpoint ckpt;
  try {
    ckpt = read_checkpoint(path);
  } catch (const IoError& e) {
    throw FormatError(e.what());
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (!meta.contains("model")) throw FormatError("checkpoint metadata lacks the model configuration");
  auto model = std::make_unique<ForensicFlow>(model_config_from_json(meta["model"].dump()), 0);
  restore(model->registry(), ckpt);
  model->registry().set_all_trainable(false);
  return model;
}

fs::path manifest_in(const std::string& dir) { return fs::path(dir) / "manifest.jsonl"; }

int cmd_synth(const RunConfig& cfg, const std::string& out) {
  const auto summary = synth_generate(cfg.synth, out);
  std::cout << summary.text();
  return kOk;
}

int cmd_train(RunConfig cfg, const std::string& data, const std::string& out) {
  const fs::path out_dir(out);
  make_dir(out_dir);
  cfg.data_dir = data;
  cfg.out_dir = out;
  write_file(out_dir / "config.json", to_json(cfg) + "\n");
  const auto train = load_dataset(manifest_in(data), "train");
  const auto val = load_dataset(manifest_in(data), "val");
  ForensicFlow model(cfg.model, cfg.init_seed);
  auto tc = cfg.train;
  tc.out_dir = out_dir;
  const auto res = train_loop(model, train, val, tc, {nullptr, nullptr, log_line});
  write_predictions(out_dir / "predictions.jsonl", res.val_predictions);
  const auto report = make_report(res.val_predictions, tc.threshold, cfg.bootstrap);
  write_file(out_dir / "report.json", report.to_json() + "\n");
  std::cout << report.to_text();
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& mask_spec, bool ci, const std::string& predictions_out) {
  const auto model = load_model(checkpoint);
  const auto ds = load_dataset(manifest_in(data), split);
  const auto mask = mask_spec.empty() ? model->config().branches : BranchMask::parse(mask_spec);
  const auto preds = predict(*model, ds, mask);
  if (!predictions_out.empty()) write_predictions(predictions_out, preds);
  std::optional<BootstrapConfig> boot;
  if (ci) boot = cfg.bootstrap;
  std::cout << make_report(preds, cfg.train.threshold, boot).to_json() << "\n";
  return kOk;
}

int cmd_ablate(RunConfig cfg, const std::string& data, const std::string& out, const std::string& mode_name,
               const std::string& which, const std::string& checkpoint) {
  const auto mode = parse_ablation_mode(mode_name);
  const auto variants = which == "all" ? all_variants() : default_variants();
  if (which != "all" && which != "default") throw ConfigError("--variants must be 'default' or 'all'");
  const auto val = load_dataset(manifest_in(data), "val");
  std::vector<AblationRow> rows;
  if (mode == AblationMode::mask) {
    if (checkpoint.empty()) throw ConfigError("mask-mode ablation needs --checkpoint");
    const auto model = load_model(checkpoint);
    rows = ablate_mask(*model, val, variants, cfg.train.epochs, cfg.train.threshold);
  } else {
    const auto train = load_dataset(manifest_in(data), "train");
    rows = ablate_retrain(cfg.model, cfg.init_seed, cfg.train, train, val, variants, {nullptr, nullptr, log_line});
  }
  if (!out.empty()) {
    make_dir(out);
    write_file(fs::path(out) / "ablation.json", ablation_json(rows) + "\n");
  }
  std::cout << ablation_table(rows);
  return kOk;
}

int cmd_gradcam(const RunConfig& cfg, const std::string& checkpoint, const std::string& data, const std::string& out,
                const std::vector<std::string>& ids, std::size_t limit, std::optional<double> alpha) {
  auto model = load_model(checkpoint);
  const auto ds = load_dataset(manifest_in(data), "val");
  make_dir(out);
  auto gc = cfg.gradcam;
  if (alpha) gc.overlay_alpha = *alpha;
  std::size_t done = 0;
  for (const auto& s : ds.samples) {
    const bool wanted = ids.empty() ? s.label == 1 : std::find(ids.begin(), ids.end(), s.id) != ids.end();
    if (!wanted) continue;
    if (ids.empty() && done >= limit) break;
    const auto maps = grad_cam(*model, s.frames, s.freq_maps, gc);
    for (std::size_t f = 0; f < maps.size(); ++f) {
      const auto frame = slice(s.pixels, 0, f, f + 1);
      const auto rgb = reshape(frame, {3, s.pixels.dim(2), s.pixels.dim(3)});
      write_ppm(fs::path(out) / cam_file_name(s.id, f), overlay(rgb, maps[f], gc.overlay_alpha));
    }
    std::cout << s.id << " (" << s.artifact.kind << "): " << maps.size() << " frames";
    if (s.artifact.bbox) std::cout << ", mass in box " << mass_inside(maps.front(), *s.artifact.bbox);
    std::cout << "\n";
    ++done;
  }
  if (!ids.empty() && done != ids.size()) throw DataError("some requested segment ids are not in the val split");
  return kOk;
}

int cmd_ci(const RunConfig& cfg, const std::string& predictions, const std::string& metric) {
  const auto records = read_predictions(predictions);
  const auto m = parse_metric(metric);
  const double point = compute_metric(m, records, cfg.train.threshold);
  auto boot = cfg.bootstrap;
  boot.threshold = cfg.train.threshold;
  const auto iv = bootstrap_ci(records, m, boot);
  std::cout << nlohmann::json{{"metric", to_string(m)}, {"point", point}, {"lower", iv.lower}, {"upper", iv.upper},
                              {"n", boot.n}, {"seed", boot.seed}}
                   .dump(2)
            << "\n";
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  auto results = op_gradcheck_suite(seed);
  results.push_back(model_gradcheck(seed));
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << " max_err=" << r.max_error << " tol=" << r.tolerance
              << " coords=" << r.coords;
    if (!r.passed()) std::cout << " worst=" << r.worst;
    std::cout << "\n";
    ok = ok && r.passed();
  }
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ForensicFlow desk-scale deepfake detector"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", common.config, "JSON run configuration");
    sub->add_option("--set", common.overrides, "Override a config key (key=value); repeatable");
  };

  std::string out, data, checkpoint, split = "val", mask, predictions_out, mode = "retrain", variants = "default",
                                     predictions, metric = "auc";
  bool ci = false;
  std::vector<std::string> ids;
  std::size_t limit = 4;
  std::optional<double> alpha;
  std::uint64_t seed = 1;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic forgery dataset");
  add_common(synth);
  synth->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train with progressive unfreezing");
  add_common(train);
  train->add_option("--data", data, "Dataset directory (holds manifest.jsonl)")->required();
  train->add_option("--out", out, "Run directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--split", split);
  eval->add_option("--mask", mask, "Comma list of branches to keep (rgb,tex,freq)");
  eval->add_flag("--ci", ci, "Add bootstrap intervals");
  eval->add_option("--predictions", predictions_out, "Also write predictions JSONL here");

  auto* ablate = app.add_subcommand("ablate", "Branch ablation table");
  add_common(ablate);
  ablate->add_option("--data", data)->required();
  ablate->add_option("--out", out);
  ablate->add_option("--mode", mode, "mask or retrain");
  ablate->add_option("--variants", variants, "default (4 rows) or all (7 rows)");
  ablate->add_option("--checkpoint", checkpoint, "Model for mask mode");

  auto* gradcam = app.add_subcommand("gradcam", "Write Grad-CAM overlays");
  add_common(gradcam);
  gradcam->add_option("--checkpoint", checkpoint)->required();
  gradcam->add_option("--data", data)->required();
  gradcam->add_option("--out", out)->required();
  gradcam->add_option("--segment", ids, "Segment id; repeatable (default: first fakes)");
  gradcam->add_option("--limit", limit, "Segments when no id is given");
  gradcam->add_option("--alpha", alpha, "Overlay alpha");

  auto* cis = app.add_subcommand("ci", "Bootstrap interval over a predictions file");
  add_common(cis);
  cis->add_option("--predictions", predictions)->required();
  cis->add_option("--metric", metric, "auc, f1 or accuracy");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = gradcheck->parsed() ? RunConfig{} : resolve(common);
    if (synth->parsed()) return cmd_synth(cfg, out);
    if (train->parsed()) return cmd_train(cfg, data, out);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint, data, split, mask, ci, predictions_out);
    if (ablate->parsed()) return cmd_ablate(cfg, data, out, mode, variants, checkpoint);
    if (gradcam->parsed()) return cmd_gradcam(cfg, checkpoint, data, out, ids, limit, alpha);
    if (cis->parsed()) return cmd_ci(cfg, predictions, metric);
    if (gradcheck->parsed()) return cmd_gradcheck(seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const FormatError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const IntegrityError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
