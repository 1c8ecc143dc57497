#pragma once

// Flat JSON run configuration. Every key is optional; missing keys keep the
// defaults below and unknown keys are rejected with ConfigError.

#include <cstdint>
#include <filesystem>
#include <string>

#include "forensicflow/metrics.hpp"
#include "forensicflow/model.hpp"
#include "forensicflow/synth.hpp"
#include "forensicflow/training.hpp"

namespace ff {

struct GradCamConfig {
  std::string target_layer = "rgb_back.stages[-1].blocks[-1].depthwise_conv";
  double overlay_alpha = 0.5;
};

struct RunConfig {
  /// Master seed. Setting it re-derives synth.seed, init_seed and
  /// train.seed as substreams 1, 2 and 3; each can still be set on its own.
  std::uint64_t seed = 7;
  std::uint64_t init_seed = 0;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  BootstrapConfig bootstrap;
  GradCamConfig gradcam;
  std::string data_dir = "data";
  std::string out_dir = "runs/default";

  RunConfig() { derive_seeds(); }
  void derive_seeds();
};

RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every key with its resolved value.
std::string to_json(const RunConfig& cfg);
/// Sets one key from its JSON text (e.g. "epochs", "3"); unknown keys throw.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& json_value);

std::string model_config_json(const ModelConfig& m);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace ff
