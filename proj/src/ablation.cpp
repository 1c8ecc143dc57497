#include "forensicflow/ablation.hpp"

#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "forensicflow/error.hpp"

namespace ff {

AblationMode parse_ablation_mode(const std::string& name) {
  if (name == "mask") return AblationMode::mask;
  if (name == "retrain") return AblationMode::retrain;
  throw ConfigError("ablation mode must be 'mask' or 'retrain', got '" + name + "'");
}

std::vector<BranchMask> default_variants() {
  return {{true, false, false}, {true, false, true}, {true, true, false}, {true, true, true}};
}

std::vector<BranchMask> all_variants() {
  return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
          {true, false, true},  {false, true, true},  {true, true, true}};
}

std::vector<AblationRow> ablate_mask(const ForensicFlow& model, const Dataset& val,
                                     const std::vector<BranchMask>& variants, int epoch, double threshold) {
  if (variants.empty()) throw ConfigError("ablation needs at least one variant");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    rows.push_back({v, epoch, make_report(predict(model, val, v), threshold)});
  }
  return rows;
}

std::vector<AblationRow> ablate_retrain(const ModelConfig& base, std::uint64_t init_seed, const TrainConfig& train_cfg,
                                        const Dataset& train, const Dataset& val,
                                        const std::vector<BranchMask>& variants, const TrainHooks& hooks) {
  if (variants.empty()) throw ConfigError("ablation needs at least one variant");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    ModelConfig cfg = base;
    cfg.branches = v;
    ForensicFlow model(cfg, init_seed);
    TrainConfig tc = train_cfg;
    tc.out_dir.reset();
    if (hooks.log) hooks.log("variant " + v.label());
    const auto res = train_loop(model, train, val, tc, hooks);
    rows.push_back({v, tc.epochs, make_report(res.val_predictions, tc.threshold)});
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "Variant" << std::right << std::setw(7) << "Epoch" << std::setw(9) << "F1"
     << std::setw(9) << "AUC" << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.variant.label() << std::right << std::setw(7) << r.epoch << std::setw(9)
       << r.report.f1 << std::setw(9) << r.report.auc << "\n";
  }
  return os.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"variant", r.variant.label()},
                   {"epoch", r.epoch},
                   {"f1", r.report.f1},
                   {"auc", r.report.auc},
                   {"accuracy", r.report.accuracy}});
  }
  return arr.dump(2);
}

}  // namespace ff
