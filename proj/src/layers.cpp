#include "forensicflow/layers.hpp"

#include <cmath>

#include "forensicflow/error.hpp"

namespace ff {

namespace {
constexpr std::string_view kGroupNames[] = {"projection", "classifier", "backbone_last",
                                            "backbone_mid", "backbone_early", "head"};
}

std::string_view to_string(ParamGroup group) { return kGroupNames[static_cast<int>(group)]; }

ParamGroup parse_param_group(std::string_view name) {
  for (int i = 0; i < 6; ++i) {
    if (kGroupNames[i] == name) return static_cast<ParamGroup>(i);
  }
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

// --- registry ------------------------------------------------------------------

Tensor ParamRegistry::add(std::string name, Tensor tensor, ParamGroup group, bool decay) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry{std::move(name), tensor, group, decay});
  return tensor;
}

const ParamEntry* ParamRegistry::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

ParamEntry* ParamRegistry::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const ParamEntry& ParamRegistry::at(std::string_view name) const {
  const auto* e = find(name);
  if (!e) throw ConfigError("no parameter named '" + std::string(name) + "'");
  return *e;
}

void ParamRegistry::set_trainable(std::string_view name, bool on) {
  auto* e = find(name);
  if (!e) throw ConfigError("no parameter named '" + std::string(name) + "'");
  e->tensor.set_requires_grad(on);
}

void ParamRegistry::set_group_trainable(ParamGroup group, bool on) {
  for (auto& e : entries_) {
    if (e.group == group) e.tensor.set_requires_grad(on);
  }
}

void ParamRegistry::set_all_trainable(bool on) {
  for (auto& e : entries_) e.tensor.set_requires_grad(on);
}

std::size_t ParamRegistry::count_trainable() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.trainable() ? 1 : 0;
  return n;
}

std::size_t ParamRegistry::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamRegistry::clear_grads() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

void ActivationCapture::offer(std::string_view name, Tensor& t) {
  if (name != target_) return;
  t.retain_grad();
  captured_.push_back(t);
}

// --- builder -------------------------------------------------------------------

std::string join_name(std::string_view prefix, std::string_view leaf) {
  if (prefix.empty()) return std::string(leaf);
  std::string out(prefix);
  out += '.';
  out += leaf;
  return out;
}

Tensor Builder::weight(const std::string& name, Shape shape, ParamGroup group) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<double>(static_cast<float>(rng.truncated_normal(init_std)));
  return registry.add(name, Tensor(std::move(shape), std::move(values)), group, true);
}

Tensor Builder::zeros(const std::string& name, Shape shape, ParamGroup group, bool decay) {
  return registry.add(name, Tensor::zeros(std::move(shape)), group, decay);
}

Tensor Builder::constant(const std::string& name, Shape shape, double value, ParamGroup group) {
  return registry.add(name, Tensor::full(std::move(shape), static_cast<float>(value)), group, false);
}

// --- layers --------------------------------------------------------------------

Linear::Linear(Builder& b, const std::string& name, std::size_t in, std::size_t out, ParamGroup group,
               bool with_bias) {
  weight = b.weight(join_name(name, "weight"), {out, in}, group);
  if (with_bias) bias = b.zeros(join_name(name, "bias"), {out}, group);
}

Conv2d::Conv2d(Builder& b, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
               Conv2dOptions o, ParamGroup group)
    : opts(o) {
  if (o.groups == 0 || in % o.groups != 0 || out % o.groups != 0) {
    throw ConfigError(name + ": channels " + std::to_string(in) + "->" + std::to_string(out) +
                      " not divisible by groups=" + std::to_string(o.groups));
  }
  weight = b.weight(join_name(name, "weight"), {out, in / o.groups, kernel, kernel}, group);
  bias = b.zeros(join_name(name, "bias"), {out}, group);
}

LayerNorm::LayerNorm(Builder& b, const std::string& name, std::size_t features, ParamGroup group, double e)
    : eps(e) {
  gamma = b.constant(join_name(name, "weight"), {features}, 1.0, group);
  beta = b.zeros(join_name(name, "bias"), {features}, group);
}

Tensor layer_norm_channels(const LayerNorm& ln, const Tensor& x) {
  auto nhwc = permute(x, {0, 2, 3, 1});
  return permute(ln.forward(nhwc), {0, 3, 1, 2});
}

GroupNorm::GroupNorm(Builder& b, const std::string& name, std::size_t channels, std::size_t g, ParamGroup group)
    : groups(g) {
  if (g == 0 || channels % g != 0) {
    throw ConfigError(name + ": " + std::to_string(channels) + " channels not divisible into " + std::to_string(g) +
                      " groups");
  }
  gamma = b.constant(join_name(name, "weight"), {channels}, 1.0, group);
  beta = b.zeros(join_name(name, "bias"), {channels}, group);
}

Tensor dropout(const Tensor& x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (p >= 1.0) return mul(x, Tensor::zeros(x.shape()));
  if (!ctx.rng) throw UsageError("dropout in training mode needs an rng");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = ctx.rng->uniform() < p ? 0.0 : keep_scale;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

SEBlock::SEBlock(Builder& b, const std::string& name, std::size_t channels, std::size_t r, ParamGroup group)
    : ratio(r) {
  if (r == 0 || channels % r != 0) {
    throw ConfigError(name + ": SE channels " + std::to_string(channels) + " not divisible by ratio " +
                      std::to_string(r));
  }
  reduce = Linear(b, join_name(name, "reduce"), channels, channels / r, group);
  expand = Linear(b, join_name(name, "expand"), channels / r, channels, group);
}

Tensor SEBlock::gates(const Tensor& x) const {
  if (x.rank() != 4) throw ShapeError("SE block expects [N,C,H,W], got " + shape_str(x.shape()));
  const auto squeezed = reshape(adaptive_avg_pool2d(x, 1, 1), {x.dim(0), x.dim(1)});
  return sigmoid(expand.forward(relu(reduce.forward(squeezed))));
}

Tensor SEBlock::forward(const Tensor& x) const { return scale_channels(x, gates(x)); }

Mlp::Mlp(Builder& b, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Activation a,
         double p, ParamGroup group)
    : act(a), dropout_p(p) {
  fc1 = Linear(b, join_name(name, "fc1"), in, hidden, group);
  fc2 = Linear(b, join_name(name, "fc2"), hidden, out, group);
}

Tensor Mlp::forward(const Tensor& x, const ForwardContext& ctx) const {
  auto h = fc1.forward(x);
  switch (act) {
    case Activation::gelu: h = gelu(h); break;
    case Activation::relu: h = relu(h); break;
    case Activation::tanh: h = ff::tanh(h); break;
  }
  return fc2.forward(dropout(h, dropout_p, ctx));
}

WindowAttention::WindowAttention(Builder& b, const std::string& name, std::size_t d, std::size_t h,
                                 std::size_t w, ParamGroup group)
    : heads(h), window(w), dim(d) {
  if (h == 0 || d % h != 0) {
    throw ConfigError(name + ": dim " + std::to_string(d) + " not divisible by " + std::to_string(h) + " heads");
  }
  qkv = Linear(b, join_name(name, "qkv"), d, 3 * d, group);
  proj = Linear(b, join_name(name, "proj"), d, d, group);
  const std::size_t span = 2 * w - 1;
  rel_bias_table = b.registry.add(join_name(name, "relative_position_bias_table"),
                                  Tensor::zeros({span * span, h}), group, false);
  const std::size_t t = w * w;
  rel_index.resize(t * t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      const std::size_t dy = i / w + (w - 1) - j / w;
      const std::size_t dx = i % w + (w - 1) - j % w;
      rel_index[i * t + j] = dy * span + dx;
    }
  }
}

Tensor WindowAttention::forward(const Tensor& x, const Tensor& mask, Tensor* weights_out) const {
  const std::size_t t = window * window;
  if (x.rank() != 3 || x.dim(1) != t || x.dim(2) != dim) {
    throw ShapeError("window attention expects [B, " + std::to_string(t) + ", " + std::to_string(dim) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t bw = x.dim(0), hd = dim / heads;
  auto qkv_t = reshape(qkv.forward(x), {bw, t, 3, heads, hd});
  qkv_t = permute(qkv_t, {2, 0, 3, 1, 4});  // [3, B', H, T, hd]
  auto part = [&](std::size_t i) { return reshape(slice(qkv_t, 0, i, i + 1), {bw * heads, t, hd}); };
  const auto q = scale(part(0), 1.0 / std::sqrt(static_cast<double>(hd)));
  const auto k = part(1);
  const auto v = part(2);

  auto logits = reshape(bmm(q, k, true), {bw, heads, t, t});
  auto bias = reshape(permute(index_select(rel_bias_table, rel_index), {1, 0}), {heads, t, t});
  logits = add(logits, bias);
  if (mask.defined()) {
    if (mask.rank() != 3 || mask.dim(1) != t || mask.dim(2) != t || bw % mask.dim(0) != 0) {
      throw ShapeError("attention mask " + shape_str(mask.shape()) + " does not fit " + std::to_string(bw) +
                       " windows of " + std::to_string(t) + " tokens");
    }
    // Repeat over heads so the mask is a trailing suffix of [B, nW, H, T, T].
    const std::size_t nw = mask.dim(0);
    std::vector<double> expanded(nw * heads * t * t);
    const auto mv = mask.data();
    for (std::size_t w = 0; w < nw; ++w)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(mv.begin() + static_cast<long>(w * t * t), t * t,
                    expanded.begin() + static_cast<long>((w * heads + h) * t * t));
    logits = reshape(add(reshape(logits, {bw / nw, nw, heads, t, t}), Tensor({nw, heads, t, t}, std::move(expanded))),
                     {bw, heads, t, t});
  }
  const auto attn = softmax(logits, -1);
  if (weights_out) *weights_out = attn;
  auto out = bmm(reshape(attn, {bw * heads, t, t}), v);  // [B'H, T, hd]
  out = reshape(permute(reshape(out, {bw, heads, t, hd}), {0, 2, 1, 3}), {bw, t, dim});
  return proj.forward(out);
}

}  // namespace ff
