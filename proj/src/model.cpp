#include "forensicflow/model.hpp"

#include <algorithm>
#include <charconv>

#include "forensicflow/error.hpp"

namespace ff {

ForensicFlow::ForensicFlow(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (!cfg.branches.any()) throw ConfigError("model needs at least one branch");
  if (cfg.d == 0) throw ConfigError("embedding width d must be positive");
  // Each component draws from its own substream so a branch initializes
  // identically whether or not the other branches exist.
  auto builder_for = [&](std::uint64_t stream, Rng& rng) { rng = Rng(derive_seed(seed, stream)); };
  Rng rng;
  Builder b{registry_, rng, cfg.init_std};
  if (cfg.branches.rgb) {
    builder_for(0, rng);
    rgb_.emplace(b, "rgb_back", cfg.rgb, cfg.d);
  }
  if (cfg.branches.tex) {
    builder_for(1, rng);
    tex_.emplace(b, "tex_back", cfg.tex, cfg.d);
  }
  if (cfg.branches.freq) {
    builder_for(2, rng);
    freq_.emplace(b, "freq_back", cfg.freq, cfg.d);
  }
  static constexpr const char* pool_names[] = {"rgb_pool", "tex_pool", "freq_pool"};
  const auto on = cfg.branches.flags();
  for (int i = 0; i < 3; ++i) {
    if (!on[i]) continue;
    if (cfg.share_pooler) {
      builder_for(3, rng);
      if (!poolers_[0] && !poolers_[1] && !poolers_[2]) {
        poolers_[i].emplace(b, "temporal_pool", cfg.d);
      } else {
        for (const auto& p : poolers_)
          if (p) poolers_[i] = *p;
      }
    } else {
      builder_for(3 + static_cast<std::uint64_t>(i), rng);
      poolers_[i].emplace(b, pool_names[i], cfg.d);
    }
  }
  builder_for(6, rng);
  fusion_ = FusionGate(b, "fusion", cfg.d);
  builder_for(7, rng);
  head_ = ClassifierHead(b, "classifier", cfg.d, cfg.classifier_hidden ? cfg.classifier_hidden : cfg.d,
                         cfg.head_dropout);
}

const TemporalPooler& ForensicFlow::pooler(int branch) const {
  const auto& p = poolers_.at(static_cast<std::size_t>(branch));
  if (!p) throw ConfigError("branch " + std::to_string(branch) + " is not part of this model");
  return *p;
}

Tensor highpass_residual(const Tensor& frames) {
  if (frames.rank() != 4) throw ShapeError("highpass_residual expects [M,C,H,W], got " + shape_str(frames.shape()));
  const std::size_t planes = frames.dim(0) * frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  const auto in = frames.data();
  std::vector<double> out(in.size());
  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx)
            acc += src[clampi(static_cast<long>(y) + dy, h) * w + clampi(static_cast<long>(x) + dx, w)];
        out[p * h * w + y * w + x] = src[y * w + x] - acc / 9.0;
      }
    }
  }
  apply_precision(out);
  return Tensor(frames.shape(), std::move(out));
}

Tensor ForensicFlow::branch_embeddings(int branch, const Tensor& frames_flat, const Tensor& maps_flat,
                                       const ForwardContext& ctx) const {
  switch (branch) {
    case 0:
      if (!rgb_) throw ConfigError("model has no RGB branch");
      return rgb_->forward(frames_flat, ctx);
    case 1:
      if (!tex_) throw ConfigError("model has no texture branch");
      return tex_->forward(cfg_.texture_input == TextureInput::highpass ? highpass_residual(frames_flat) : frames_flat,
                           ctx);
    case 2:
      if (!freq_) throw ConfigError("model has no frequency branch");
      return freq_->forward(maps_flat, ctx);
    default:
      throw UsageError("branch index out of range");
  }
}

ModelOutput ForensicFlow::forward(const Tensor& frames, const Tensor& freq_maps, const BranchMask& mask,
                                  const ForwardContext& ctx) const {
  if (!mask.any()) throw ConfigError("branch mask enables no branch");
  const auto on = mask.flags();
  const auto built = cfg_.branches.flags();
  for (int i = 0; i < 3; ++i) {
    if (on[i] && !built[i]) throw ConfigError("mask enables branch '" + BranchMask{i == 0, i == 1, i == 2}.label() +
                                              "' which this model was built without");
  }
  if (frames.rank() != 5 || frames.dim(2) != 3) {
    throw ShapeError("frames must be [N,K,3,H,W], got " + shape_str(frames.shape()));
  }
  const std::size_t n = frames.dim(0), k = frames.dim(1), h = frames.dim(3), w = frames.dim(4);
  if (k == 0) throw DataError("segment with zero frames");
  const Tensor frames_flat = reshape(frames, {n * k, 3, h, w});
  Tensor maps_flat;
  if (mask.freq) {
    if (freq_maps.rank() != 5 || freq_maps.dim(0) != n || freq_maps.dim(1) != k || freq_maps.dim(2) != 1) {
      throw ShapeError("frequency maps must be [N,K,1,H,W] matching frames, got " + shape_str(freq_maps.shape()));
    }
    maps_flat = reshape(freq_maps, {n * k, 1, freq_maps.dim(3), freq_maps.dim(4)});
  }

  ModelOutput out;
  std::array<Tensor, 3> pooled;
  for (int i = 0; i < 3; ++i) {
    if (!on[i]) continue;
    auto emb = branch_embeddings(i, frames_flat, maps_flat, ctx);
    auto res = pooler(i).forward(reshape(emb, {n, k, cfg_.d}), ctx);
    pooled[static_cast<std::size_t>(i)] = res.pooled;
    out.frame_weights[static_cast<std::size_t>(i)] = res.weights;
  }
  auto fused = fusion_.forward(pooled[0], pooled[1], pooled[2], mask);
  out.alphas = fused.alphas;
  out.logits = head_.logits(fused.fused, ctx);
  out.probs = sigmoid(out.logits);
  return out;
}

std::string resolve_layer_path(const ParamRegistry& registry, const std::string& path) {
  std::string resolved;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const std::size_t dot = path.find('.', pos);
    std::string token = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    pos = dot == std::string::npos ? path.size() + 1 : dot + 1;
    const auto bracket = token.find('[');
    if (bracket == std::string::npos) {
      resolved = join_name(resolved, token);
      continue;
    }
    if (token.back() != ']') throw ConfigError("malformed layer path '" + path + "'");
    const std::string base = token.substr(0, bracket);
    const std::string index_text = token.substr(bracket + 1, token.size() - bracket - 2);
    long index = 0;
    const auto [ptr, ec] = std::from_chars(index_text.data(), index_text.data() + index_text.size(), index);
    if (ec != std::errc() || ptr != index_text.data() + index_text.size()) {
      throw ConfigError("malformed index in layer path '" + path + "'");
    }
    resolved = join_name(resolved, base);
    // Count children "<resolved>.<i>." present in the registry.
    long count = 0;
    const std::string prefix = resolved + ".";
    for (const auto& e : registry.entries()) {
      if (e.name.rfind(prefix, 0) != 0) continue;
      const auto rest = e.name.substr(prefix.size());
      long child = 0;
      const auto [p2, ec2] = std::from_chars(rest.data(), rest.data() + rest.size(), child);
      if (ec2 == std::errc() && p2 != rest.data() && (p2 == rest.data() + rest.size() || *p2 == '.')) {
        count = std::max(count, child + 1);
      }
    }
    const long actual = index < 0 ? count + index : index;
    if (actual < 0 || actual >= count) {
      throw ConfigError("index " + index_text + " out of range in layer path '" + path + "'");
    }
    resolved += "." + std::to_string(actual);
  }
  const std::string prefix = resolved + ".";
  const bool exists = std::any_of(registry.entries().begin(), registry.entries().end(),
                                  [&](const ParamEntry& e) { return e.name.rfind(prefix, 0) == 0; });
  if (!exists) throw ConfigError("no layer named '" + resolved + "' (from '" + path + "')");
  return resolved;
}

}  // namespace ff
