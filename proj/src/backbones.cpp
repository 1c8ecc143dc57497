#include "forensicflow/backbones.hpp"

#include <numeric>

#include "forensicflow/error.hpp"

namespace ff {

namespace {

ParamGroup block_group(std::size_t stage, std::size_t block, std::size_t num_stages) {
  if (stage + 1 == num_stages) return ParamGroup::backbone_last;
  if (stage == 0 && block == 0) return ParamGroup::backbone_early;
  return ParamGroup::backbone_mid;
}

std::string idx(const std::string& prefix, std::size_t i) { return prefix + "." + std::to_string(i); }

}  // namespace

Projection::Projection(Builder& b, const std::string& name, std::size_t in, std::size_t d) {
  fc = Linear(b, join_name(name, "linear"), in, d, ParamGroup::projection);
  norm = LayerNorm(b, join_name(name, "norm"), d, ParamGroup::projection);
}

// --- ConvNeXt --------------------------------------------------------------------

ConvNeXtBlock::ConvNeXtBlock(Builder& b, const std::string& n, std::size_t dim, std::size_t kernel,
                             double layer_scale, ParamGroup group)
    : name(n) {
  depthwise_conv = Conv2d(b, join_name(n, "depthwise_conv"), dim, dim, kernel,
                          Conv2dOptions{1, kernel / 2, dim}, group);
  norm = LayerNorm(b, join_name(n, "norm"), dim, group);
  pwconv1 = Linear(b, join_name(n, "pwconv1"), dim, 4 * dim, group);
  pwconv2 = Linear(b, join_name(n, "pwconv2"), 4 * dim, dim, group);
  gamma = b.constant(join_name(n, "gamma"), {dim}, layer_scale, group);
}

Tensor ConvNeXtBlock::forward(const Tensor& x, const ForwardContext& ctx) const {
  auto y = depthwise_conv.forward(x);
  if (ctx.capture) ctx.capture->offer(join_name(name, "depthwise_conv"), y);
  y = norm.forward(permute(y, {0, 2, 3, 1}));
  y = pwconv2.forward(gelu(pwconv1.forward(y)));
  y = permute(mul(y, gamma), {0, 3, 1, 2});
  return add(x, y);
}

MiniConvNeXt::MiniConvNeXt(Builder& b, const std::string& name, const MiniConvNeXtConfig& c, std::size_t d)
    : cfg(c) {
  const std::size_t num_stages = cfg.depths.size();
  if (num_stages == 0 || cfg.dims.size() != num_stages) {
    throw ConfigError("ConvNeXt config needs one dim per stage");
  }
  stem = Conv2d(b, join_name(name, "stem.0"), 3, cfg.dims[0], cfg.stem_patch, Conv2dOptions{cfg.stem_patch, 0, 1},
                ParamGroup::backbone_early);
  stem_norm = LayerNorm(b, join_name(name, "stem.1"), cfg.dims[0], ParamGroup::backbone_early);
  down_norms.resize(num_stages);
  down_convs.resize(num_stages);
  stages.resize(num_stages);
  for (std::size_t s = 0; s < num_stages; ++s) {
    if (s > 0) {
      const auto group = block_group(s, 0, num_stages);
      const std::string ds = idx(join_name(name, "downsample"), s);
      down_norms[s] = LayerNorm(b, join_name(ds, "0"), cfg.dims[s - 1], group);
      down_convs[s] = Conv2d(b, join_name(ds, "1"), cfg.dims[s - 1], cfg.dims[s], 2, Conv2dOptions{2, 0, 1}, group);
    }
    const std::string stage_name = idx(join_name(name, "stages"), s);
    for (std::size_t j = 0; j < cfg.depths[s]; ++j) {
      stages[s].emplace_back(b, idx(join_name(stage_name, "blocks"), j), cfg.dims[s], cfg.dw_kernel,
                             cfg.layer_scale_init, block_group(s, j, num_stages));
    }
  }
  final_norm = LayerNorm(b, join_name(name, "norm"), cfg.dims.back(), ParamGroup::backbone_last);
  proj = Projection(b, "rgb_proj", cfg.dims.back(), d);
}

std::size_t MiniConvNeXt::downsampling() const { return cfg.stem_patch << (cfg.depths.size() - 1); }

Tensor MiniConvNeXt::forward(const Tensor& frames, const ForwardContext& ctx) const {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("RGB branch expects [M,3,H,W], got " + shape_str(frames.shape()));
  }
  const std::size_t factor = downsampling();
  if (frames.dim(2) % factor != 0 || frames.dim(3) % factor != 0) {
    throw GeometryError("RGB branch: frame " + std::to_string(frames.dim(2)) + "x" + std::to_string(frames.dim(3)) +
                        " not divisible by total downsampling " + std::to_string(factor));
  }
  auto x = layer_norm_channels(stem_norm, stem.forward(frames));
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (s > 0) x = down_convs[s].forward(layer_norm_channels(down_norms[s], x));
    for (const auto& block : stages[s]) x = block.forward(x, ctx);
  }
  auto pooled = reshape(adaptive_avg_pool2d(x, 1, 1), {x.dim(0), x.dim(1)});
  return proj.forward(final_norm.forward(pooled));
}

// --- Swin ------------------------------------------------------------------------

Tensor window_partition(const Tensor& x, std::size_t window) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  auto t = reshape(x, {n, h / window, window, w / window, window, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {n * (h / window) * (w / window), window * window, c});
}

Tensor window_reverse(const Tensor& windows, std::size_t window, std::size_t n, std::size_t h, std::size_t w) {
  const std::size_t c = windows.dim(2);
  auto t = reshape(windows, {n, h / window, w / window, window, window, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {n, h, w, c});
}

Tensor shifted_window_mask(std::size_t h, std::size_t w, std::size_t window, std::size_t shift) {
  // Region id per pixel of the shifted grid: rows/cols split at [0, side-window),
  // [side-window, side-shift), [side-shift, side).
  auto band = [&](std::size_t i, std::size_t side) -> std::size_t {
    if (i < side - window) return 0;
    if (i < side - shift) return 1;
    return 2;
  };
  const std::size_t nwh = h / window, nww = w / window, t = window * window;
  std::vector<double> mask(nwh * nww * t * t, 0.0);
  for (std::size_t wy = 0; wy < nwh; ++wy) {
    for (std::size_t wx = 0; wx < nww; ++wx) {
      const std::size_t win = wy * nww + wx;
      std::vector<std::size_t> region(t);
      for (std::size_t k = 0; k < t; ++k) {
        const std::size_t y = wy * window + k / window, x = wx * window + k % window;
        region[k] = band(y, h) * 3 + band(x, w);
      }
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j)
          if (region[i] != region[j]) mask[(win * t + i) * t + j] = kMaskedLogit;
    }
  }
  return Tensor({nwh * nww, t, t}, std::move(mask));
}

SwinBlock::SwinBlock(Builder& b, const std::string& name, std::size_t dim, std::size_t heads, std::size_t win,
                     std::size_t mlp_ratio, ParamGroup group)
    : window(win) {
  norm1 = LayerNorm(b, join_name(name, "norm1"), dim, group, 1e-5);
  attn = WindowAttention(b, join_name(name, "attn"), dim, heads, win, group);
  norm2 = LayerNorm(b, join_name(name, "norm2"), dim, group, 1e-5);
  mlp = Mlp(b, join_name(name, "mlp"), dim, dim * mlp_ratio, dim, Activation::gelu, 0.0, group);
}

Tensor SwinBlock::forward(const Tensor& x, std::size_t h, std::size_t w, bool shift, const ForwardContext& ctx,
                          Tensor* weights_out) const {
  if (x.rank() != 3 || x.dim(1) != h * w) {
    throw ShapeError("Swin block expects [N," + std::to_string(h * w) + ",C], got " + shape_str(x.shape()));
  }
  if (h % window != 0 || w % window != 0) {
    throw GeometryError("Swin block: token grid " + std::to_string(h) + "x" + std::to_string(w) +
                        " not divisible by window " + std::to_string(window));
  }
  const std::size_t n = x.dim(0), c = x.dim(2);
  const std::size_t s = window / 2;
  auto y = reshape(norm1.forward(x), {n, h, w, c});
  Tensor mask;
  if (shift) {
    y = roll(roll(y, 1, -static_cast<long>(s)), 2, -static_cast<long>(s));
    mask = shifted_window_mask(h, w, window, s);
  }
  y = attn.forward(window_partition(y, window), mask, weights_out);
  y = window_reverse(y, window, n, h, w);
  if (shift) y = roll(roll(y, 1, static_cast<long>(s)), 2, static_cast<long>(s));
  auto out = add(x, reshape(y, {n, h * w, c}));
  return add(out, mlp.forward(norm2.forward(out), ctx));
}

MiniSwin::MiniSwin(Builder& b, const std::string& name, const MiniSwinConfig& c, std::size_t d) : cfg(c) {
  const std::size_t num_stages = cfg.depths.size();
  if (num_stages == 0 || cfg.heads.size() != num_stages) throw ConfigError("Swin config needs heads per stage");
  patch_embed = Conv2d(b, join_name(name, "patch_embed.proj"), 3, cfg.embed_dim, cfg.patch,
                       Conv2dOptions{cfg.patch, 0, 1}, ParamGroup::backbone_early);
  patch_norm = LayerNorm(b, join_name(name, "patch_embed.norm"), cfg.embed_dim, ParamGroup::backbone_early, 1e-5);
  stages.resize(num_stages);
  std::size_t dim = cfg.embed_dim;
  for (std::size_t s = 0; s < num_stages; ++s) {
    if (dim % cfg.heads[s] != 0) {
      throw ConfigError("Swin stage " + std::to_string(s) + ": dim " + std::to_string(dim) + " not divisible by " +
                        std::to_string(cfg.heads[s]) + " heads");
    }
    const std::string stage_name = idx(join_name(name, "stages"), s);
    for (std::size_t j = 0; j < cfg.depths[s]; ++j) {
      stages[s].emplace_back(b, idx(join_name(stage_name, "blocks"), j), dim, cfg.heads[s], cfg.window,
                             cfg.mlp_ratio, block_group(s, j, num_stages));
    }
    if (s + 1 < num_stages) {
      const auto group = block_group(s + 1, 0, num_stages);
      merge_norms.emplace_back(b, join_name(stage_name, "downsample.norm"), 4 * dim, group, 1e-5);
      merge_reductions.emplace_back(b, join_name(stage_name, "downsample.reduction"), 4 * dim, 2 * dim, group,
                                    false);
      dim *= 2;
    }
  }
  final_norm = LayerNorm(b, join_name(name, "norm"), dim, ParamGroup::backbone_last, 1e-5);
  proj = Projection(b, "tex_proj", dim, d);
}

bool MiniSwin::shifted(std::size_t j, std::size_t grid_side) const {
  return shifts_enabled && j % 2 == 1 && grid_side > cfg.window;
}

Tensor MiniSwin::forward(const Tensor& frames, const ForwardContext& ctx) const {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("texture branch expects [M,3,H,W], got " + shape_str(frames.shape()));
  }
  const std::size_t m = frames.dim(0);
  std::size_t side_factor = cfg.patch * cfg.window << (stages.size() - 1);
  if (frames.dim(2) % side_factor != 0 || frames.dim(3) % side_factor != 0) {
    throw GeometryError("texture branch: frame " + std::to_string(frames.dim(2)) + "x" +
                        std::to_string(frames.dim(3)) + " not divisible by patch*window*2^(stages-1) = " +
                        std::to_string(side_factor));
  }
  auto x = patch_embed.forward(frames);  // [M,C,h,w]
  std::size_t h = x.dim(2), w = x.dim(3), c = x.dim(1);
  x = patch_norm.forward(reshape(permute(x, {0, 2, 3, 1}), {m, h * w, c}));
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t j = 0; j < stages[s].size(); ++j) {
      x = stages[s][j].forward(x, h, w, shifted(j, std::min(h, w)), ctx);
    }
    if (s + 1 < stages.size()) {
      auto t = reshape(x, {m, h / 2, 2, w / 2, 2, c});
      t = reshape(permute(t, {0, 1, 3, 2, 4, 5}), {m, (h / 2) * (w / 2), 4 * c});
      x = merge_reductions[s].forward(merge_norms[s].forward(t));
      h /= 2;
      w /= 2;
      c *= 2;
    }
  }
  return proj.forward(final_norm.forward(mean(x, 1)));
}

// --- frequency branch --------------------------------------------------------------

FreqBranch::FreqBranch(Builder& b, const std::string& name, const FreqBranchConfig& c, std::size_t d) : cfg(c) {
  if (cfg.channels.empty()) throw ConfigError("frequency branch needs at least one conv block");
  const std::size_t n = cfg.channels.size();
  std::size_t in = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto group = block_group(i, 0, n);
    const std::string block = idx(join_name(name, "stack"), i);
    const std::size_t out = cfg.channels[i];
    convs.emplace_back(b, join_name(block, "conv"), in, out, 3, Conv2dOptions{1, 1, 1}, group);
    norms.emplace_back(b, join_name(block, "norm"), out, std::gcd(cfg.norm_groups, out), group);
    in = out;
  }
  se = SEBlock(b, join_name(name, "se"), in, cfg.se_ratio, ParamGroup::backbone_last);
  proj = Projection(b, "freq_proj", in, d);
}

Tensor FreqBranch::forward(const Tensor& maps, const ForwardContext&) const {
  if (maps.rank() != 4 || maps.dim(1) != 1) {
    throw ShapeError("frequency branch expects [M,1,H,W], got " + shape_str(maps.shape()));
  }
  const std::size_t min_side = std::size_t{1} << convs.size();
  if (maps.dim(2) < min_side || maps.dim(3) < min_side) {
    throw GeometryError("frequency branch: map " + std::to_string(maps.dim(2)) + "x" + std::to_string(maps.dim(3)) +
                        " too small for " + std::to_string(convs.size()) + " pooling stages");
  }
  auto x = maps;
  for (std::size_t i = 0; i < convs.size(); ++i) x = max_pool2d(relu(norms[i].forward(convs[i].forward(x))), 2, 2);
  x = se.forward(adaptive_avg_pool2d(x, 1, 1));
  return proj.forward(reshape(x, {x.dim(0), x.dim(1)}));
}

}  // namespace ff
