#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>

#include "forensicflow/backbones.hpp"
#include "forensicflow/fusion.hpp"

namespace ff {

/// What the texture branch looks at: the normalized frame itself, or its
/// high-pass residual (frame minus its 3x3 box blur). The residual removes any
/// spatially constant offset, so global color casts never reach that branch.
enum class TextureInput { rgb, highpass };

struct ModelConfig {
  std::size_t d = 64;
  MiniConvNeXtConfig rgb;
  MiniSwinConfig tex;
  FreqBranchConfig freq;
  /// Hidden width of the classifier; 0 means d.
  std::size_t classifier_hidden = 0;
  double head_dropout = 0.3;
  bool share_pooler = false;
  TextureInput texture_input = TextureInput::highpass;
  /// Branches that are built. Absent branches have no parameters at all.
  BranchMask branches;
  double init_std = 0.02;
};

struct ModelOutput {
  Tensor logits;  // [N] pre-sigmoid
  Tensor probs;   // [N] probability of "fake"
  Tensor alphas;  // [N,3]
  std::array<Tensor, 3> frame_weights;  // [N,K] per branch; undefined when masked
};

/// The tri-branch detector: per-frame branch embeddings, per-branch temporal
/// attention pooling, gated fusion and a two-layer classifier.
class ForensicFlow {
 public:
  ForensicFlow(const ModelConfig& cfg, std::uint64_t seed);
  ForensicFlow(const ForensicFlow&) = delete;
  ForensicFlow& operator=(const ForensicFlow&) = delete;

  /// frames [N,K,3,H,W] (normalized), freq_maps [N,K,1,H,W]. `mask` may only
  /// enable branches the model was built with.
  ModelOutput forward(const Tensor& frames, const Tensor& freq_maps, const BranchMask& mask,
                      const ForwardContext& ctx) const;
  ModelOutput forward(const Tensor& frames, const Tensor& freq_maps, const ForwardContext& ctx) const {
    return forward(frames, freq_maps, cfg_.branches, ctx);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& registry() { return registry_; }
  const ParamRegistry& registry() const { return registry_; }

  /// Per-frame embeddings [M,d] of one branch (0 rgb, 1 tex, 2 freq).
  Tensor branch_embeddings(int branch, const Tensor& frames_flat, const Tensor& maps_flat,
                           const ForwardContext& ctx) const;

  const MiniConvNeXt& rgb_backbone() const { return *rgb_; }
  const MiniSwin& tex_backbone() const { return *tex_; }
  MiniSwin& tex_backbone() { return *tex_; }
  const FreqBranch& freq_backbone() const { return *freq_; }
  const TemporalPooler& pooler(int branch) const;
  const FusionGate& fusion() const { return fusion_; }
  const ClassifierHead& head() const { return head_; }

 private:
  ModelConfig cfg_;
  ParamRegistry registry_;
  std::optional<MiniConvNeXt> rgb_;
  std::optional<MiniSwin> tex_;
  std::optional<FreqBranch> freq_;
  std::array<std::optional<TemporalPooler>, 3> poolers_;
  FusionGate fusion_;
  ClassifierHead head_;
};

/// x [M,C,H,W] minus its edge-replicated 3x3 box blur. Preprocessing only:
/// the result carries no gradient.
Tensor highpass_residual(const Tensor& frames);

/// Resolves a layer path with Python-style negative indices
/// ("rgb_back.stages[-1].blocks[-1].depthwise_conv") to the dotted name used in
/// the registry ("rgb_back.stages.2.blocks.1.depthwise_conv"). Throws
/// ConfigError when no parameter lives under the resolved path.
std::string resolve_layer_path(const ParamRegistry& registry, const std::string& path);

}  // namespace ff
