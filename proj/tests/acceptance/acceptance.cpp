// Acceptance run: ten criteria, one PASS/FAIL line each. Exit status is 0
// only when all of them pass.
//
// Usage: forensicflow_acceptance --work DIR

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../support.hpp"
#include "forensicflow/ablation.hpp"
#include "forensicflow/checkpoint.hpp"
#include "forensicflow/config.hpp"
#include "forensicflow/dataio.hpp"
#include "forensicflow/error.hpp"
#include "forensicflow/gradcam.hpp"
#include "forensicflow/gradcheck.hpp"
#include "forensicflow/metrics.hpp"
#include "forensicflow/synth.hpp"
#include "forensicflow/training.hpp"

using namespace ff;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and thresholds.
constexpr double kGradcheckSeconds = 60.0;
constexpr double kConvTol = 1e-5;
constexpr double kFftRelTol = 1e-4;
constexpr double kFocalTol = 1e-6;
constexpr double kMinAuc = 0.95;
constexpr double kMinF1 = 0.90;
constexpr double kRunSeconds = 600.0;
constexpr double kSynergyMargin = 0.03;
constexpr std::size_t kMinCamSamples = 20;
constexpr double kMinMassRatio = 1.5;
constexpr std::size_t kAttentionInputs = 1000;
constexpr double kSumTol = 1e-6;
constexpr double kInvarianceTol = 1e-6;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void note(const std::string& line) { std::cerr << "  " << line << "\n"; }

// --- 1 -------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t failed = 0, total = 0;
  std::string worst;
  for (const auto& r : op_gradcheck_suite()) {
    ++total;
    if (!r.passed()) {
      ++failed;
      worst += " " + r.name;
    }
  }
  const auto model = model_gradcheck();
  const double secs = seconds_since(t0);
  const bool ok = failed == 0 && model.passed() && secs < kGradcheckSeconds;
  auto detail = std::to_string(total - failed) + "/" + std::to_string(total) + " ops" + worst +
                fmt(", model err %.2e (tol %.0e), %.1f s", model.max_error, model.tolerance, secs);
  return {ok, detail};
}

// --- 2 -------------------------------------------------------------------------

Outcome oracles() {
  PrecisionScope f64(Precision::f64);
  Rng rng(2);
  double conv_err = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t groups = 1 + rng.below(2), c = 2 * groups, f = 2 * groups, k = 1 + 2 * rng.below(3);
    const std::size_t h = 4 + rng.below(6), w = 4 + rng.below(6), stride = 1 + rng.below(2), pad = rng.below(k);
    const auto x = support::random_tensor(rng, {2, c, h, w});
    const auto wt = support::random_tensor(rng, {f, c / groups, k, k});
    const auto b = support::random_tensor(rng, {f});
    const auto y = conv2d(x, wt, b, {stride, pad, groups});
    const auto ref = support::naive_conv2d(support::to_vector(x), 2, c, h, w, support::to_vector(wt), f, k, k,
                                           support::to_vector(b), stride, pad, groups);
    conv_err = std::max(conv_err, support::max_abs_diff(support::to_vector(y), ref));
  }

  std::size_t auc_mismatch = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<PredictionRecord> recs;
    const std::size_t n = 2 + rng.below(80);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
      recs.push_back({"s" + std::to_string(i), label, std::round((rng.normal() + label) * 8) / 8});
    }
    if (auc(recs) != support::brute_force_auc(recs)) ++auc_mismatch;
  }

  double fft_err = 0;
  for (int t = 0; t < 50; ++t) {
    const auto x = support::random_tensor(rng, {16, 16});
    const auto m = support::to_vector(rfft2_magnitude(x));
    const auto ref = support::naive_dft_magnitude(support::to_vector(x), 16, 16);
    for (std::size_t i = 0; i < ref.size(); ++i)
      fft_err = std::max(fft_err, std::abs(m[i] - ref[i]) / std::max(1.0, std::abs(ref[i])));
  }
  const bool ok = conv_err < kConvTol && auc_mismatch == 0 && fft_err < kFftRelTol;
  return {ok, fmt("conv max err %.1e, ", conv_err) + std::to_string(auc_mismatch) +
                  fmt(" AUC mismatches, FFT rel err %.1e", fft_err)};
}

// --- 4 -------------------------------------------------------------------------

double focal_grad(double prob, double label) {
  Tape tape(Precision::f64);
  TapeScope scope(tape);
  auto p = Tensor::of({1}, {prob});
  p.set_requires_grad(true);
  tape.backward(focal_loss(p, Tensor::of({1}, {label})));
  return p.grad()[0];
}

Outcome focal_conformance() {
  PrecisionScope f64(Precision::f64);
  double bce_err = 0;
  for (double p = 0.01; p < 1.0; p += 0.01)
    for (double y : {0.0, 1.0}) {
      const double got = focal_loss(Tensor::of({1}, {p}), Tensor::of({1}, {y}), {1.0, 0.0, 1e-7}).item();
      const double bce = -(y * std::log(p) + (1 - y) * std::log(1 - p));
      bce_err = std::max(bce_err, std::abs(got - bce));
    }
  const double half = focal_loss(Tensor::of({1}, {0.5}), Tensor::of({1}, {1.0})).item();
  const double half_err = std::abs(half - 0.25 * std::numbers::ln2);
  const double g_easy = std::abs(focal_grad(0.9, 1.0)), g_hard = std::abs(focal_grad(0.5, 1.0));
  const bool ok = bce_err < kFocalTol && half_err < kFocalTol && g_easy < g_hard;
  return {ok, fmt("BCE err %.1e, p_t=0.5 err %.1e, |grad| %.3f at 0.9 vs %.3f at 0.5", bce_err, half_err, g_easy,
                  g_hard)};
}

// --- 9 -------------------------------------------------------------------------

Tensor permute_frames(const Tensor& x, const std::vector<std::size_t>& order) {
  std::vector<Tensor> parts;
  for (auto i : order) parts.push_back(slice(x, 1, i, i + 1));
  return concat(parts, 1);
}

Outcome attention_validity() {
  PrecisionScope f64(Precision::f64);
  const ModelConfig mc;
  ForensicFlow model(mc, 9);
  Rng rng(9);
  const auto variants = all_variants();
  constexpr std::size_t n = 8, k = 4, side = 32;
  double sum_err = 0, perm_err = 0, mask_err = 0;
  std::size_t negatives = 0, mask_checks = 0;
  for (std::size_t done = 0; done < kAttentionInputs; done += n) {
    const auto mask = variants[(done / n) % variants.size()];
    const auto frames = support::random_tensor(rng, {n, k, 3, side, side}, -2.5, 2.5);
    const auto maps = support::random_tensor(rng, {n, k, 1, side, side}, 0, 1);
    const auto out = model.forward(frames, maps, mask, {});
    auto check_rows = [&](const Tensor& t, std::size_t width) {
      const auto v = support::to_vector(t);
      for (std::size_t r = 0; r < v.size() / width; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < width; ++j) {
          negatives += v[r * width + j] < 0 ? 1 : 0;
          s += v[r * width + j];
        }
        sum_err = std::max(sum_err, std::abs(s - 1.0));
      }
    };
    check_rows(out.alphas, 3);
    for (const auto& w : out.frame_weights)
      if (w.defined()) check_rows(w, k);

    std::vector<std::size_t> order{0, 1, 2, 3};
    for (std::size_t i = k - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    const auto permuted = model.forward(permute_frames(frames, order), permute_frames(maps, order), mask, {});
    perm_err = std::max(perm_err, support::max_abs_diff(support::to_vector(out.logits),
                                                        support::to_vector(permuted.logits)));

    // Frames feed both the RGB and texture branches, the maps only the
    // frequency branch; perturb whichever input no enabled branch reads.
    Tensor other;
    if (!mask.freq) other = model.forward(frames, support::random_tensor(rng, maps.shape(), -5, 5), mask, {}).logits;
    else if (!mask.rgb && !mask.tex)
      other = model.forward(support::random_tensor(rng, frames.shape(), -5, 5), maps, mask, {}).logits;
    if (other.defined()) {
      ++mask_checks;
      mask_err = std::max(mask_err, support::max_abs_diff(support::to_vector(out.logits), support::to_vector(other)));
    }
  }
  const bool ok = negatives == 0 && sum_err < kSumTol && perm_err < kInvarianceTol && mask_err == 0.0;
  return {ok, std::to_string(kAttentionInputs) + " inputs, " + std::to_string(negatives) +
                  fmt(" negative weights, max |sum-1| %.1e, permutation L-inf %.1e, ", sum_err, perm_err) +
                  std::to_string(mask_checks) + fmt(" masked perturbations max diff %.1e", mask_err)};
}

// --- 3 and 5: one default run --------------------------------------------------

struct SchedulerAudit {
  std::vector<EpochRecord> records;
  std::vector<std::vector<double>> last;  // parameter values after the previous step
  std::size_t frozen_changes = 0, flag_mismatches = 0;
  std::string first_violation;
};

Outcome scheduler_conformance(const SchedulerAudit& audit, const TrainConfig& tc) {
  std::vector<int> changes;
  for (std::size_t i = 1; i < audit.records.size(); ++i) {
    const auto& a = audit.records[i - 1];
    const auto& b = audit.records[i];
    if (a.groups != b.groups || a.trainable_params != b.trainable_params) changes.push_back(b.epoch);
  }
  std::size_t lr_halvings = 0;
  bool lr_ok = audit.records.size() == static_cast<std::size_t>(tc.epochs);
  for (const auto& r : audit.records) {
    const double expect = r.epoch < tc.schedule.stage2_epoch ? 2e-5 : 1e-5;
    lr_ok = lr_ok && r.lr == expect;
  }
  for (std::size_t i = 1; i < audit.records.size(); ++i)
    if (audit.records[i].lr == audit.records[i - 1].lr * 0.5) ++lr_halvings;
  const bool ok = changes == std::vector<int>{4, 7, 9} && lr_ok && lr_halvings == 1 && audit.frozen_changes == 0 &&
                  audit.flag_mismatches == 0;
  std::string ch;
  for (int e : changes) ch += (ch.empty() ? "" : ",") + std::to_string(e);
  auto detail = "set changes at {" + ch + "}, lr " + fmt("%.0e -> %.0e", audit.records.front().lr,
                                                             audit.records.back().lr) +
                " (" + std::to_string(lr_halvings) + " halving), " + std::to_string(audit.frozen_changes) +
                " frozen-parameter changes";
  if (!audit.first_violation.empty()) detail += " [" + audit.first_violation + "]";
  return {ok, detail};
}

// --- 7 -------------------------------------------------------------------------

Outcome bootstrap_conformance(const std::vector<PredictionRecord>& preds, const BootstrapConfig& bc) {
  const bool defaults = bc.n == 1000 && bc.seed == 42 && bc.lo == 2.5 && bc.hi == 97.5;
  const auto a = bootstrap_ci(preds, Metric::auc, bc);
  const auto b = bootstrap_ci(preds, Metric::auc, bc);
  const bool deterministic = a.lower == b.lower && a.upper == b.upper;

  std::vector<PredictionRecord> perfect;
  for (int i = 0; i < 40; ++i) perfect.push_back({"p" + std::to_string(i), i % 4 ? 1 : 0, i % 4 ? 0.9 : 0.1});
  const auto p = bootstrap_ci(perfect, Metric::auc, bc);
  const bool perfect_ok = p.lower == 1.0 && p.upper == 1.0;

  bool brackets = true;
  std::string detail;
  for (auto m : {Metric::auc, Metric::f1, Metric::accuracy}) {
    const double point = compute_metric(m, preds, 0.5);
    const auto ci = bootstrap_ci(preds, m, bc);
    brackets = brackets && ci.lower <= point && point <= ci.upper;
    detail += to_string(m) + fmt(" %.4f [%.4f, %.4f]; ", point, ci.lower, ci.upper);
  }
  detail += deterministic ? "repeatable" : "NOT repeatable";
  detail += perfect_ok ? ", perfect split [1,1]" : fmt(", perfect split [%.4f, %.4f]", p.lower, p.upper);
  return {defaults && deterministic && perfect_ok && brackets, detail};
}

// --- 8 -------------------------------------------------------------------------

Outcome gradcam_localization(ForensicFlow& model, const Dataset& val, const Dataset& train, const GradCamConfig& gc) {
  std::vector<const Sample*> picks;
  for (const auto* ds : {&val, &train})
    for (const auto& s : ds->samples)
      if (s.artifact.kind == "texture" && s.artifact.bbox && picks.size() < kMinCamSamples) picks.push_back(&s);
  double ratio_sum = 0;
  std::size_t overlay_mismatch = 0, degenerate = 0;
  for (const auto* s : picks) {
    const auto maps = grad_cam(model, s->frames, s->freq_maps, gc);
    const auto bb = *s->artifact.bbox;
    const double h = static_cast<double>(s->pixels.dim(2)), w = static_cast<double>(s->pixels.dim(3));
    const double frac = bb[2] * bb[3] / (h * w);
    double mass = 0;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      mass += mass_inside(maps[k], bb);
      degenerate += maps[k].degenerate ? 1 : 0;
      const auto frame = reshape(slice(s->pixels, 0, k, k + 1), {3, s->pixels.dim(2), s->pixels.dim(3)});
      if (support::to_vector(overlay(frame, maps[k], 0.0)) != support::to_vector(frame)) ++overlay_mismatch;
    }
    ratio_sum += mass / static_cast<double>(maps.size()) / frac;
  }
  const double ratio = picks.empty() ? 0.0 : ratio_sum / static_cast<double>(picks.size());
  const bool ok = picks.size() >= kMinCamSamples && ratio >= kMinMassRatio && overlay_mismatch == 0;
  return {ok, std::to_string(picks.size()) + fmt(" texture fakes, mean mass ratio %.3f (need %.1f), ", ratio,
                                                   kMinMassRatio) +
                  std::to_string(degenerate) + " degenerate maps, " + std::to_string(overlay_mismatch) +
                  " alpha=0 overlay mismatches"};
}

// --- 10 ------------------------------------------------------------------------

Outcome round_trips(const fs::path& data_dir, const fs::path& run_dir, const fs::path& scratch) {
  fs::create_directories(scratch);
  const auto seg_src = data_dir / "segments" / "val_0000.ffsg";
  write_segment(scratch / "seg.ffsg", read_segment(seg_src));
  const bool seg_ok = file_bytes(seg_src) == file_bytes(scratch / "seg.ffsg");

  const auto ck_src = run_dir / "checkpoints" / "epoch_15.ffck";
  write_checkpoint(scratch / "ck.ffck", read_checkpoint(ck_src));
  const bool ck_ok = file_bytes(ck_src) == file_bytes(scratch / "ck.ffck");

  auto entries = read_manifest(data_dir / "manifest.jsonl");
  const auto val_it = std::find_if(entries.begin(), entries.end(), [](const auto& e) { return e.split == "val"; });
  val_it->identity = entries.front().identity;
  fs::copy(data_dir / "segments", scratch / "segments", fs::copy_options::recursive | fs::copy_options::skip_existing);
  write_manifest(scratch / "manifest.jsonl", entries);
  bool leak_rejected = false;
  try {
    load_dataset(scratch / "manifest.jsonl", "train");
  } catch (const DataError& e) {
    leak_rejected = true;
    note(std::string("leak rejected: ") + e.what());
  }
  return {seg_ok && ck_ok && leak_rejected, std::string("segment ") + (seg_ok ? "identical" : "DIFFERS") +
                                                ", checkpoint " + (ck_ok ? "identical" : "DIFFERS") +
                                                ", leaked manifest " + (leak_rejected ? "rejected" : "ACCEPTED")};
}

// --- 6 -------------------------------------------------------------------------

Outcome ablation_synergy(const RunConfig& cfg, const Dataset& train, const Dataset& val) {
  TrainConfig tc = cfg.train;
  tc.out_dir.reset();
  const auto rows = ablate_retrain(cfg.model, cfg.init_seed, tc, train, val, all_variants(),
                                   {nullptr, nullptr, [](const std::string&) {}});
  std::cerr << ablation_table(rows);
  double full = -1, best_other = -1;
  std::string best_label;
  for (const auto& r : rows) {
    if (r.variant.all()) full = r.report.auc;
    else if (r.report.auc > best_other) {
      best_other = r.report.auc;
      best_label = r.variant.label();
    }
  }
  const double margin = full - best_other;
  return {rows.size() == 7 && margin >= kSynergyMargin,
          fmt("Full AUC %.4f, best other %.4f", full, best_other) + " (" + best_label + ")" +
              fmt(", margin %.4f (need %.2f)", margin, kSynergyMargin)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ForensicFlow acceptance run"};
  std::string work = "acceptance_work";
  app.add_option("--work", work, "Scratch directory (wiped first)");
  CLI11_PARSE(app, argc, argv);
  const fs::path root(work);
  fs::remove_all(root);
  fs::create_directories(root);

  std::vector<std::pair<std::string, Outcome>> results(10);
  auto run = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    std::cerr << "criterion " << id << ": " << name << "\n";
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    note(o.detail);
    results[static_cast<std::size_t>(id - 1)] = {name, o};
  };

  run(1, "gradient suite", gradient_suite);
  run(2, "oracle equivalence", oracles);
  run(4, "focal loss", focal_conformance);
  run(9, "attention validity", attention_validity);

  // Default desk-scale run, shared by criteria 3, 5, 7, 8 and 10.
  const RunConfig cfg;
  const auto data_dir = root / "data", run_dir = root / "run";
  Dataset train, val;
  TrainResult res;
  SchedulerAudit audit;
  std::optional<ForensicFlow> model;
  run(5, "end-to-end synthetic run", [&]() -> Outcome {
    const auto t0 = std::chrono::steady_clock::now();
    synth_generate(cfg.synth, data_dir);
    train = load_dataset(data_dir / "manifest.jsonl", "train");
    val = load_dataset(data_dir / "manifest.jsonl", "val");
    model.emplace(cfg.model, cfg.init_seed);
    auto tc = cfg.train;
    tc.out_dir = run_dir;
    TrainHooks hooks;
    hooks.log = [](const std::string& line) { note(line); };
    hooks.on_epoch = [&](const EpochRecord& r, const ForensicFlow&) { audit.records.push_back(r); };
    hooks.on_step = [&](int epoch, std::size_t batch, const ForensicFlow& m) {
      const auto groups = active_groups(tc.schedule, epoch);
      const auto& entries = m.registry().entries();
      if (audit.last.empty()) audit.last.resize(entries.size());
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const bool active = std::find(groups.begin(), groups.end(), e.group) != groups.end();
        if (active != e.trainable()) ++audit.flag_mismatches;
        const auto v = e.tensor.data();
        std::vector<double> now(v.begin(), v.end());
        // A parameter frozen during this step must hold last step's values.
        if (!active && !audit.last[i].empty() && now != audit.last[i]) {
          if (audit.frozen_changes++ == 0)
            audit.first_violation = e.name + " at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch);
        }
        audit.last[i] = std::move(now);
      }
    };
    res = train_loop(*model, train, val, tc, hooks);
    const double secs = seconds_since(t0);
    const auto& first = res.records.front();
    const auto& last = res.records.back();
    const double a = auc(res.val_predictions), f = f1(res.val_predictions, tc.threshold);
    const bool ok = a >= kMinAuc && f >= kMinF1 && last.train_loss < first.train_loss && secs < kRunSeconds &&
                    res.records.size() == 15;
    return {ok, std::to_string(train.size()) + "/" + std::to_string(val.size()) + " segments" +
                    fmt(", val AUC %.4f, F1 %.4f, train loss %.4f -> %.4f", a, f, first.train_loss, last.train_loss) +
                    fmt(", %.0f s", secs)};
  });
  const bool have_run = model.has_value() && !res.records.empty();
  auto after_run = [&](auto fn) {
    return [&, fn]() -> Outcome { return have_run ? fn() : Outcome{false, "end-to-end run did not finish"}; };
  };
  run(3, "scheduler conformance", after_run([&] { return scheduler_conformance(audit, cfg.train); }));
  run(7, "bootstrap CI", after_run([&] { return bootstrap_conformance(res.val_predictions, cfg.bootstrap); }));
  run(8, "Grad-CAM localization", after_run([&] { return gradcam_localization(*model, val, train, cfg.gradcam); }));
  run(10, "format round-trips", after_run([&] { return round_trips(data_dir, run_dir, root / "roundtrip"); }));
  run(6, "ablation synergy", after_run([&] { return ablation_synergy(cfg, train, val); }));

  int failures = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& [name, o] = results[i];
    std::cout << (o.passed ? "PASS" : "FAIL") << "  " << i + 1 << ". " << name << ": " << o.detail << "\n";
    failures += o.passed ? 0 : 1;
  }
  std::cout << (10 - failures) << "/10 criteria passed\n";
  return failures == 0 ? 0 : 1;
}
