#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forensicflow/dataio.hpp"
#include "forensicflow/metrics.hpp"
#include "forensicflow/model.hpp"

namespace ff {

struct FocalLossConfig {
  double alpha = 1.0;
  double gamma = 2.0;
  double clamp_eps = 1e-7;
  void validate() const;
};

/// mean over the batch of -alpha (1 - p_t)^gamma log(p_t), with p_t = prob for
/// fakes and 1 - prob for reals, prob clamped to [eps, 1 - eps] first.
/// Throws DataError on labels outside {0,1}.
Tensor focal_loss(const Tensor& prob, const Tensor& label, const FocalLossConfig& cfg = {});

struct AdamWConfig {
  double lr = 2e-5;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay. Moments and the bias-correction step
/// count are kept per parameter and start when a parameter first trains.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every trainable parameter, then clears all gradients. Frozen
  /// parameters are not touched. Throws IntegrityError when a trainable
  /// parameter has no gradient.
  void step(ParamRegistry& registry);

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps(const std::string& name) const;

 private:
  struct Slot {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  AdamWConfig cfg_;
  std::map<std::string, Slot> slots_;
};

struct UnfreezeSchedule {
  int stage2_epoch = 4;
  int stage1_epoch = 7;
  int full_epoch = 9;
  double lr_decay_on_first_unfreeze = 0.5;
  void validate() const;
};

/// Groups trainable at 1-based `epoch`: projection, classifier and head
/// always; backbone_last from stage2_epoch, backbone_mid from stage1_epoch,
/// backbone_early from full_epoch.
std::vector<ParamGroup> active_groups(const UnfreezeSchedule& schedule, int epoch);

struct UnfreezeResult {
  std::vector<ParamGroup> groups;
  double lr = 0;
};

/// Sets trainability to exactly `active_groups(epoch)` and returns the lr for
/// that epoch: base_lr before stage2_epoch, base_lr * decay from then on (one
/// halving only). Depends on `epoch` alone, so repeated calls are idempotent.
UnfreezeResult apply_unfreeze(const UnfreezeSchedule& schedule, ParamRegistry& registry, int epoch, double base_lr);

struct TrainConfig {
  int epochs = 15;
  std::size_t batch_size = 4;
  AdamWConfig optimizer;
  FocalLossConfig focal;
  UnfreezeSchedule schedule;
  std::uint64_t seed = 7;
  double threshold = 0.5;
  /// When set, checkpoints and telemetry files are written here.
  std::optional<std::filesystem::path> out_dir;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0, val_loss = 0;
  double val_auc = 0, val_f1 = 0, val_accuracy = 0;
  std::vector<std::string> groups;
  std::size_t trainable_params = 0;
  double lr = 0;
  std::string to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> records;
  std::vector<PredictionRecord> val_predictions;  // after the last epoch
  int best_epoch = 0;
};

using EpochHook = std::function<void(const EpochRecord&, const ForensicFlow&)>;
/// Called after each optimizer step with the 1-based epoch and batch index.
using StepHook = std::function<void(int epoch, std::size_t batch, const ForensicFlow&)>;

struct TrainHooks {
  EpochHook on_epoch;
  StepHook on_step;
  /// Progress lines (timings included); not part of any deterministic output.
  std::function<void(const std::string&)> log;
};

/// Runs the progressive-unfreezing schedule over `cfg.epochs`. Fully
/// deterministic given cfg.seed. Throws NumericError naming the batch when a
/// loss is not finite.
TrainResult train_loop(ForensicFlow& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                       const TrainHooks& hooks = {});

/// Eval-mode probabilities for every segment, in dataset order.
std::vector<PredictionRecord> predict(const ForensicFlow& model, const Dataset& data, const BranchMask& mask,
                                      std::size_t batch_size = 8);

/// Mean focal loss of `preds` (used for the validation curve).
double mean_focal_loss(const std::vector<PredictionRecord>& preds, const FocalLossConfig& cfg);

}  // namespace ff
