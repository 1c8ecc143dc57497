#pragma once

// Miniature branch encoders. Each maps a batch of frames to one d-vector per
// frame. Parameter names follow "<branch>_back.stages.<i>.blocks.<j>.<layer>";
// unfreezing groups are assigned per block: blocks of the final stage are
// backbone_last, the stem and the first block are backbone_early, the rest
// backbone_mid.

#include <cstddef>
#include <string>
#include <vector>

#include "forensicflow/layers.hpp"

namespace ff {

struct MiniConvNeXtConfig {
  std::vector<std::size_t> depths{1, 1, 2};
  std::vector<std::size_t> dims{16, 32, 64};
  std::size_t stem_patch = 4;
  std::size_t dw_kernel = 7;
  double layer_scale_init = 1e-6;
};

struct MiniSwinConfig {
  std::size_t embed_dim = 24;
  std::vector<std::size_t> depths{2, 1};
  std::vector<std::size_t> heads{2, 4};
  std::size_t window = 4;
  std::size_t patch = 4;
  std::size_t mlp_ratio = 4;
};

struct FreqBranchConfig {
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t norm_groups = 8;
  std::size_t se_ratio = 4;
};

/// Single-linear projection to the shared embedding width, followed by LayerNorm.
class Projection {
 public:
  Projection() = default;
  Projection(Builder& b, const std::string& name, std::size_t in, std::size_t d);
  Tensor forward(const Tensor& x) const { return norm.forward(fc.forward(x)); }

  Linear fc;
  LayerNorm norm;
};

class ConvNeXtBlock {
 public:
  ConvNeXtBlock() = default;
  ConvNeXtBlock(Builder& b, const std::string& name, std::size_t dim, std::size_t kernel, double layer_scale,
                ParamGroup group);
  /// x [N,C,H,W] -> same shape: x + γ·pw2(gelu(pw1(LN(dwconv(x))))).
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;

  std::string name;
  Conv2d depthwise_conv;
  LayerNorm norm;
  Linear pwconv1, pwconv2;
  Tensor gamma;
};

class MiniConvNeXt {
 public:
  MiniConvNeXt() = default;
  MiniConvNeXt(Builder& b, const std::string& name, const MiniConvNeXtConfig& cfg, std::size_t d);
  /// frames [M,3,H,W] -> [M,d].
  Tensor forward(const Tensor& frames, const ForwardContext& ctx) const;
  std::size_t downsampling() const;

  MiniConvNeXtConfig cfg;
  Conv2d stem;
  LayerNorm stem_norm;
  std::vector<LayerNorm> down_norms;  // index 0 unused
  std::vector<Conv2d> down_convs;     // index 0 unused
  std::vector<std::vector<ConvNeXtBlock>> stages;
  LayerNorm final_norm;
  Projection proj;
};

/// Additive attention mask for the shifted-window layout of an h×w token grid:
/// [num_windows, window², window²], 0 where two tokens come from the same
/// pre-shift region and kMaskedLogit otherwise.
Tensor shifted_window_mask(std::size_t h, std::size_t w, std::size_t window, std::size_t shift);

/// [N,H,W,C] -> [N*nW, window², C].
Tensor window_partition(const Tensor& x, std::size_t window);
/// Inverse of window_partition.
Tensor window_reverse(const Tensor& windows, std::size_t window, std::size_t n, std::size_t h, std::size_t w);

class SwinBlock {
 public:
  SwinBlock() = default;
  SwinBlock(Builder& b, const std::string& name, std::size_t dim, std::size_t heads, std::size_t window,
            std::size_t mlp_ratio, ParamGroup group);
  /// x [N, H*W, C]. With `shift` the tokens are cyclically shifted by window/2
  /// and attention across wrapped regions is masked. When `weights_out` is
  /// given it receives the attention weights.
  Tensor forward(const Tensor& x, std::size_t h, std::size_t w, bool shift, const ForwardContext& ctx,
                 Tensor* weights_out = nullptr) const;

  LayerNorm norm1, norm2;
  WindowAttention attn;
  Mlp mlp;
  std::size_t window = 4;
};

class MiniSwin {
 public:
  MiniSwin() = default;
  MiniSwin(Builder& b, const std::string& name, const MiniSwinConfig& cfg, std::size_t d);
  Tensor forward(const Tensor& frames, const ForwardContext& ctx) const;
  /// Whether block `j` of stage `stage` runs shifted at the given token-grid side.
  bool shifted(std::size_t j, std::size_t grid_side) const;

  MiniSwinConfig cfg;
  Conv2d patch_embed;
  LayerNorm patch_norm;
  std::vector<std::vector<SwinBlock>> stages;
  std::vector<LayerNorm> merge_norms;  // after stage i, for i < stages-1
  std::vector<Linear> merge_reductions;
  LayerNorm final_norm;
  Projection proj;
  /// Disables every shift; the block stack is then a plain windowed transformer.
  bool shifts_enabled = true;
};

class FreqBranch {
 public:
  FreqBranch() = default;
  FreqBranch(Builder& b, const std::string& name, const FreqBranchConfig& cfg, std::size_t d);
  /// maps [M,1,H,W] -> [M,d]: ConvStack -> adaptive avg pool -> SE -> projection.
  Tensor forward(const Tensor& maps, const ForwardContext& ctx) const;

  FreqBranchConfig cfg;
  std::vector<Conv2d> convs;
  std::vector<GroupNorm> norms;
  SEBlock se;
  Projection proj;
};

}  // namespace ff
