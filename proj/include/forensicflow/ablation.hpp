#pragma once

#include <string>
#include <vector>

#include "forensicflow/training.hpp"

namespace ff {

enum class AblationMode { mask, retrain };
AblationMode parse_ablation_mode(const std::string& name);

struct AblationRow {
  BranchMask variant;
  int epoch = 0;
  MetricReport report;
};

/// RGB-only, RGB + Freq, RGB + Texture, Full.
std::vector<BranchMask> default_variants();
/// Every nonempty branch subset, singles first, Full last.
std::vector<BranchMask> all_variants();

/// Evaluates one trained model with the other branches masked at fusion.
std::vector<AblationRow> ablate_mask(const ForensicFlow& model, const Dataset& val,
                                     const std::vector<BranchMask>& variants, int epoch, double threshold = 0.5);

/// Builds each variant without the removed branches and trains it from
/// scratch with the same init seed and training config.
std::vector<AblationRow> ablate_retrain(const ModelConfig& base, std::uint64_t init_seed, const TrainConfig& train_cfg,
                                        const Dataset& train, const Dataset& val,
                                        const std::vector<BranchMask>& variants, const TrainHooks& hooks = {});

/// Variant | Epoch | F1 | AUC table.
std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows);

}  // namespace ff
