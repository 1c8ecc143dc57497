#include "forensicflow/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "forensicflow/error.hpp"

namespace ff {

using nlohmann::json;

namespace {

template <class T>
T as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

struct Binding {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

#define FF_BIND(key, field)                                                                 \
  {                                                                                         \
    key, Binding {                                                                          \
      [](const RunConfig& c) { return json(c.field); },                                     \
          [](RunConfig& c, const json& j) { c.field = as<decltype(c.field)>(j, key); }      \
    }                                                                                       \
  }

const std::vector<std::pair<std::string, Binding>>& model_bindings() {
  static const std::vector<std::pair<std::string, Binding>> table{
      FF_BIND("d", model.d),
      FF_BIND("rgb_depths", model.rgb.depths),
      FF_BIND("rgb_dims", model.rgb.dims),
      FF_BIND("rgb_stem_patch", model.rgb.stem_patch),
      FF_BIND("rgb_dw_kernel", model.rgb.dw_kernel),
      FF_BIND("rgb_layer_scale", model.rgb.layer_scale_init),
      FF_BIND("tex_embed_dim", model.tex.embed_dim),
      FF_BIND("tex_depths", model.tex.depths),
      FF_BIND("tex_heads", model.tex.heads),
      FF_BIND("tex_window", model.tex.window),
      FF_BIND("tex_patch", model.tex.patch),
      FF_BIND("tex_mlp_ratio", model.tex.mlp_ratio),
      FF_BIND("freq_channels", model.freq.channels),
      FF_BIND("freq_norm_groups", model.freq.norm_groups),
      FF_BIND("freq_se_ratio", model.freq.se_ratio),
      FF_BIND("classifier_hidden", model.classifier_hidden),
      FF_BIND("head_dropout", model.head_dropout),
      FF_BIND("share_pooler", model.share_pooler),
      FF_BIND("init_std", model.init_std),
      {"texture_input",
       {[](const RunConfig& c) { return json(c.model.texture_input == TextureInput::highpass ? "highpass" : "rgb"); },
        [](RunConfig& c, const json& j) {
          const auto v = as<std::string>(j, "texture_input");
          if (v == "highpass") c.model.texture_input = TextureInput::highpass;
          else if (v == "rgb") c.model.texture_input = TextureInput::rgb;
          else throw ConfigError("texture_input must be 'highpass' or 'rgb', got '" + v + "'");
        }}},
      {"branches",
       {[](const RunConfig& c) {
          std::string s;
          const auto f = c.model.branches.flags();
          const char* names[] = {"rgb", "tex", "freq"};
          for (int i = 0; i < 3; ++i)
            if (f[i]) s += (s.empty() ? "" : ",") + std::string(names[i]);
          return json(s);
        },
        [](RunConfig& c, const json& j) { c.model.branches = BranchMask::parse(as<std::string>(j, "branches")); }}},
  };
  return table;
}

const std::vector<std::pair<std::string, Binding>>& other_bindings() {
  static const std::vector<std::pair<std::string, Binding>> table{
      FF_BIND("init_seed", init_seed),
      FF_BIND("synth_seed", synth.seed),
      FF_BIND("train_seed", train.seed),
      FF_BIND("n_real_train", synth.n_real_train),
      FF_BIND("n_fake_train", synth.n_fake_train),
      FF_BIND("n_real_val", synth.n_real_val),
      FF_BIND("n_fake_val", synth.n_fake_val),
      FF_BIND("side", synth.side),
      FF_BIND("k", synth.k),
      FF_BIND("mix_texture", synth.mix.texture),
      FF_BIND("mix_frequency", synth.mix.frequency),
      FF_BIND("mix_color", synth.mix.color),
      FF_BIND("noise_sigma", synth.noise_sigma),
      FF_BIND("texture_sigma", synth.texture_sigma),
      FF_BIND("texture_min_box", synth.texture_min_box),
      FF_BIND("texture_max_box", synth.texture_max_box),
      FF_BIND("wave_amplitude", synth.wave_amplitude),
      FF_BIND("wave_min_radius", synth.wave_min_radius),
      FF_BIND("wave_max_radius", synth.wave_max_radius),
      FF_BIND("color_min_shift", synth.color_min_shift),
      FF_BIND("color_max_shift", synth.color_max_shift),
      FF_BIND("epochs", train.epochs),
      FF_BIND("batch_size", train.batch_size),
      FF_BIND("lr", train.optimizer.lr),
      FF_BIND("weight_decay", train.optimizer.weight_decay),
      FF_BIND("beta1", train.optimizer.beta1),
      FF_BIND("beta2", train.optimizer.beta2),
      FF_BIND("adam_eps", train.optimizer.eps),
      FF_BIND("focal_alpha", train.focal.alpha),
      FF_BIND("focal_gamma", train.focal.gamma),
      FF_BIND("focal_clamp_eps", train.focal.clamp_eps),
      FF_BIND("unfreeze_stage2", train.schedule.stage2_epoch),
      FF_BIND("unfreeze_stage1", train.schedule.stage1_epoch),
      FF_BIND("unfreeze_full", train.schedule.full_epoch),
      FF_BIND("lr_decay_on_first_unfreeze", train.schedule.lr_decay_on_first_unfreeze),
      FF_BIND("threshold", train.threshold),
      FF_BIND("bootstrap_n", bootstrap.n),
      FF_BIND("bootstrap_seed", bootstrap.seed),
      FF_BIND("ci_lo", bootstrap.lo),
      FF_BIND("ci_hi", bootstrap.hi),
      FF_BIND("gradcam_target", gradcam.target_layer),
      FF_BIND("overlay_alpha", gradcam.overlay_alpha),
      FF_BIND("data_dir", data_dir),
      FF_BIND("out_dir", out_dir),
  };
  return table;
}

#undef FF_BIND

const Binding* find_binding(const std::string& key) {
  for (const auto* table : {&model_bindings(), &other_bindings()})
    for (const auto& [k, b] : *table)
      if (k == key) return &b;
  return nullptr;
}

void apply_object(RunConfig& cfg, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  // The master seed goes first so explicit substream seeds can override it.
  if (j.contains("seed")) {
    cfg.seed = as<std::uint64_t>(j.at("seed"), "seed");
    cfg.derive_seeds();
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") continue;
    const auto* b = find_binding(key);
    if (!b) throw ConfigError("unknown config key '" + key + "'");
    b->set(cfg, value);
  }
}

}  // namespace

void RunConfig::derive_seeds() {
  synth.seed = derive_seed(seed, 1);
  init_seed = derive_seed(seed, 2);
  train.seed = derive_seed(seed, 3);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  apply_object(cfg, j);
  cfg.synth.validate();
  cfg.train.focal.validate();
  cfg.train.schedule.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

std::string to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  for (const auto* table : {&model_bindings(), &other_bindings()})
    for (const auto& [k, b] : *table) j[k] = b.get(cfg);
  return j.dump(2);
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& json_value) {
  json v;
  try {
    v = json::parse(json_value);
  } catch (const json::exception&) {
    v = json_value;  // bare strings need no quotes on the command line
  }
  apply_object(cfg, json{{key, v}});
}

std::string model_config_json(const ModelConfig& m) {
  RunConfig c;
  c.model = m;
  json j;
  for (const auto& [k, b] : model_bindings()) j[k] = b.get(c);
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    const Binding* b = nullptr;
    for (const auto& [k, bind] : model_bindings())
      if (k == key) b = &bind;
    if (!b) throw FormatError("unknown model config key '" + key + "'");
    b->set(c, value);
  }
  return c.model;
}

}  // namespace ff
