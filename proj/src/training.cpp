#include "forensicflow/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "forensicflow/checkpoint.hpp"
#include "forensicflow/config.hpp"
#include "forensicflow/error.hpp"

namespace ff {

namespace fs = std::filesystem;
using nlohmann::json;

void FocalLossConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("focal clamp_eps must lie in (0, 0.5)");
}

Tensor focal_loss(const Tensor& prob, const Tensor& label, const FocalLossConfig& cfg) {
  cfg.validate();
  if (prob.rank() != 1 || label.shape() != prob.shape()) {
    throw ShapeError("focal_loss expects prob [N] and label [N], got " + shape_str(prob.shape()) + " and " +
                     shape_str(label.shape()));
  }
  const std::size_t n = prob.numel();
  std::vector<double> sign(n), offset(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = label[i];
    if (y != 0.0 && y != 1.0) throw DataError("focal_loss label " + std::to_string(y) + " is not 0 or 1");
    // p_t = y p + (1 - y)(1 - p) = (2y - 1) p + (1 - y)
    sign[i] = 2.0 * y - 1.0;
    offset[i] = 1.0 - y;
  }
  const auto p = clamp(prob, cfg.clamp_eps, 1.0 - cfg.clamp_eps);
  const auto pt = add(mul(p, Tensor({n}, std::move(sign))), Tensor({n}, std::move(offset)));
  auto per_sample = log(pt);
  if (cfg.gamma != 0.0) per_sample = mul(pow_scalar(add_scalar(scale(pt, -1.0), 1.0), cfg.gamma), per_sample);
  return scale(mean(per_sample), -cfg.alpha);
}

// --- optimizer ----------------------------------------------------------------

std::size_t AdamW::steps(const std::string& name) const {
  auto it = slots_.find(name);
  return it == slots_.end() ? 0 : it->second.t;
}

void AdamW::step(ParamRegistry& registry) {
  for (auto& p : registry.entries()) {
    if (!p.trainable()) continue;
    if (!p.tensor.has_grad()) {
      throw IntegrityError("trainable parameter '" + p.name + "' has no gradient at optimizer step");
    }
    auto& slot = slots_[p.name];
    const auto g = p.tensor.grad();
    if (slot.m.empty()) {
      slot.m.assign(g.size(), 0.0);
      slot.v.assign(g.size(), 0.0);
    }
    ++slot.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
    const double decay = p.decay ? cfg_.lr * cfg_.weight_decay : 0.0;
    auto w = p.tensor.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      slot.m[i] = apply_precision(cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i]);
      slot.v[i] = apply_precision(cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i]);
      const double update = (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + cfg_.eps);
      w[i] = apply_precision(w[i] - decay * w[i] - cfg_.lr * update);
    }
  }
  registry.clear_grads();
}

// --- unfreezing -----------------------------------------------------------------

void UnfreezeSchedule::validate() const {
  if (!(1 <= stage2_epoch && stage2_epoch < stage1_epoch && stage1_epoch < full_epoch)) {
    throw ConfigError("unfreeze epochs must satisfy 1 <= stage2 < stage1 < full");
  }
  if (!(lr_decay_on_first_unfreeze > 0.0)) throw ConfigError("lr decay factor must be positive");
}

std::vector<ParamGroup> active_groups(const UnfreezeSchedule& schedule, int epoch) {
  std::vector<ParamGroup> g{ParamGroup::projection, ParamGroup::classifier, ParamGroup::head};
  if (epoch >= schedule.stage2_epoch) g.push_back(ParamGroup::backbone_last);
  if (epoch >= schedule.stage1_epoch) g.push_back(ParamGroup::backbone_mid);
  if (epoch >= schedule.full_epoch) g.push_back(ParamGroup::backbone_early);
  return g;
}

UnfreezeResult apply_unfreeze(const UnfreezeSchedule& schedule, ParamRegistry& registry, int epoch, double base_lr) {
  if (epoch < 1) throw UsageError("epochs are numbered from 1");
  UnfreezeResult r;
  r.groups = active_groups(schedule, epoch);
  registry.set_all_trainable(false);
  for (auto g : r.groups) registry.set_group_trainable(g, true);
  r.lr = epoch >= schedule.stage2_epoch ? base_lr * schedule.lr_decay_on_first_unfreeze : base_lr;
  return r;
}

// --- evaluation -----------------------------------------------------------------

std::vector<PredictionRecord> predict(const ForensicFlow& model, const Dataset& data, const BranchMask& mask,
                                      std::size_t batch_size) {
  std::vector<PredictionRecord> out;
  out.reserve(data.size());
  const ForwardContext ctx{};
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = make_batch(data, idx);
    const auto res = model.forward(batch.frames, batch.freq_maps, mask, ctx);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.push_back({batch.ids[i], static_cast<int>(batch.labels[i]), res.probs[i]});
    }
  }
  return out;
}

double mean_focal_loss(const std::vector<PredictionRecord>& preds, const FocalLossConfig& cfg) {
  std::vector<double> p, y;
  for (const auto& r : preds) {
    p.push_back(r.prob);
    y.push_back(r.label);
  }
  const std::size_t n = p.size();
  return focal_loss(Tensor({n}, std::move(p)), Tensor({n}, std::move(y)), cfg).item();
}

// --- loop -----------------------------------------------------------------------

std::string EpochRecord::to_json() const {
  return json{{"epoch", epoch},
              {"train_loss", train_loss},
              {"val_loss", val_loss},
              {"val_auc", val_auc},
              {"val_f1", val_f1},
              {"val_accuracy", val_accuracy},
              {"groups", groups},
              {"trainable_params", trainable_params},
              {"lr", lr}}
      .dump();
}

namespace {

constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kDropoutStream = 12;

json rng_json(const Rng& r) {
  const auto s = r.state();
  return json::array({s[0], s[1], s[2], s[3]});
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

TrainResult train_loop(ForensicFlow& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                       const TrainHooks& hooks) {
  if (train.empty() || val.empty()) throw DataError("training needs nonempty train and val sets");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
  cfg.schedule.validate();
  cfg.focal.validate();

  if (cfg.out_dir) {
    std::error_code ec;
    fs::create_directories(*cfg.out_dir / "checkpoints", ec);
    if (ec) throw IoError("cannot create " + cfg.out_dir->string() + ": " + ec.message());
  }
  Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
  Rng dropout_rng(derive_seed(cfg.seed, kDropoutStream));
  AdamW opt(cfg.optimizer);
  auto& registry = model.registry();
  TrainResult result;
  double best_auc = -1.0;
  std::string records_text;
  std::ostringstream curve;
  curve << "epoch,train_loss,val_loss\n";

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto stage = apply_unfreeze(cfg.schedule, registry, epoch, cfg.optimizer.lr);
    opt.set_lr(stage.lr);

    const auto order = shuffled_indices(train.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                         order.begin() + static_cast<long>(std::min(order.size(), start + cfg.batch_size)));
      const auto batch = make_batch(train, idx);
      Tape tape(Precision::f32);
      double loss_value = 0.0;
      {
        TapeScope scope(tape);
        const ForwardContext ctx{true, &dropout_rng, nullptr};
        auto fail = [&] {
          std::string ids;
          for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches) + " (segments " + ids + ")");
        };
        const auto out = model.forward(batch.frames, batch.freq_maps, ctx);
        // A NaN probability would otherwise surface as a domain error from the log.
        for (double p : out.probs.data())
          if (!std::isfinite(p)) fail();
        const auto loss = focal_loss(out.probs, batch.labels, cfg.focal);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) fail();
        tape.backward(loss);
      }
      opt.step(registry);
      if (hooks.on_step) hooks.on_step(epoch, batches, model);
      loss_sum += loss_value;
      ++batches;
    }

    result.val_predictions = predict(model, val, model.config().branches);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_loss = mean_focal_loss(result.val_predictions, cfg.focal);
    if (!std::isfinite(rec.val_loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    rec.val_auc = auc(result.val_predictions);
    rec.val_f1 = f1(result.val_predictions, cfg.threshold);
    rec.val_accuracy = accuracy(result.val_predictions, cfg.threshold);
    for (auto g : stage.groups) rec.groups.emplace_back(to_string(g));
    rec.trainable_params = registry.count_trainable();
    rec.lr = stage.lr;
    result.records.push_back(rec);

    if (rec.val_auc > best_auc) {
      best_auc = rec.val_auc;
      result.best_epoch = epoch;
    }
    if (cfg.out_dir) {
      json meta{{"epoch", epoch},
                {"lr", stage.lr},
                {"schedule",
                 {{"stage2_epoch", cfg.schedule.stage2_epoch},
                  {"stage1_epoch", cfg.schedule.stage1_epoch},
                  {"full_epoch", cfg.schedule.full_epoch},
                  {"lr_decay_on_first_unfreeze", cfg.schedule.lr_decay_on_first_unfreeze}}},
                {"rng", {{"shuffle", rng_json(shuffle_rng)}, {"dropout", rng_json(dropout_rng)}}},
                {"val_auc", rec.val_auc},
                {"model", json::parse(model_config_json(model.config()))}};
      std::ostringstream name;
      name << "epoch_" << std::setw(2) << std::setfill('0') << epoch << ".ffck";
      const auto dir = *cfg.out_dir / "checkpoints";
      write_checkpoint(dir / name.str(), snapshot(registry, meta.dump()));
      if (result.best_epoch == epoch) {
        std::error_code ec;
        fs::remove(dir / "best.ffck", ec);
        fs::create_symlink(name.str(), dir / "best.ffck", ec);
        if (ec) fs::copy_file(dir / name.str(), dir / "best.ffck", fs::copy_options::overwrite_existing);
      }
      records_text += rec.to_json() + "\n";
      curve << epoch << "," << json(rec.train_loss).dump() << "," << json(rec.val_loss).dump() << "\n";
      write_text(*cfg.out_dir / "epoch_records.jsonl", records_text);
      write_text(*cfg.out_dir / "loss_curve.csv", curve.str());
    }
    if (hooks.log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream os;
      os << std::fixed << std::setprecision(4) << "epoch " << epoch << " train_loss " << rec.train_loss
         << " val_loss " << rec.val_loss << " val_auc " << rec.val_auc << " val_f1 " << rec.val_f1 << " lr "
         << std::scientific << std::setprecision(1) << rec.lr << std::fixed << std::setprecision(1) << " ("
         << secs << " s)";
      hooks.log(os.str());
    }
    if (hooks.on_epoch) hooks.on_epoch(rec, model);
  }
  registry.clear_grads();
  return result;
}

}  // namespace ff
