#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forensicflow/ops.hpp"
#include "forensicflow/rng.hpp"
#include "forensicflow/tensor.hpp"

namespace ff {

/// Unfreezing stage a parameter belongs to.
enum class ParamGroup { projection, classifier, backbone_last, backbone_mid, backbone_early, head };

std::string_view to_string(ParamGroup group);
ParamGroup parse_param_group(std::string_view name);

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamGroup group;
  /// Whether decoupled weight decay applies (false for biases, norm affines, layer scales).
  bool decay;
  bool trainable() const { return tensor.requires_grad(); }
};

/// Ordered, name-unique parameter table. Trainability is the tensor's
/// requires_grad flag, so the registry and the tape agree by construction.
class ParamRegistry {
 public:
  /// Registers `tensor` under `name`. Throws ConfigError on a duplicate name.
  Tensor add(std::string name, Tensor tensor, ParamGroup group, bool decay);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const ParamEntry* find(std::string_view name) const;
  ParamEntry* find(std::string_view name);
  const ParamEntry& at(std::string_view name) const;

  void set_trainable(std::string_view name, bool on);
  void set_group_trainable(ParamGroup group, bool on);
  void set_all_trainable(bool on);
  std::size_t count_trainable() const;
  std::size_t scalar_count() const;
  void clear_grads();

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Receives intermediate activations by hierarchical layer name during a forward.
class ActivationCapture {
 public:
  explicit ActivationCapture(std::string target) : target_(std::move(target)) {}
  const std::string& target() const { return target_; }
  /// Stores `t` (and asks the tape to keep its gradient) when `name` is the target.
  void offer(std::string_view name, Tensor& t);
  const std::vector<Tensor>& captured() const { return captured_; }

 private:
  std::string target_;
  std::vector<Tensor> captured_;
};

/// Per-call forward settings.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
  ActivationCapture* capture = nullptr;
};

/// Everything a layer constructor needs to create and register parameters.
struct Builder {
  ParamRegistry& registry;
  Rng& rng;
  double init_std = 0.02;

  Tensor weight(const std::string& name, Shape shape, ParamGroup group);
  Tensor zeros(const std::string& name, Shape shape, ParamGroup group, bool decay = false);
  Tensor constant(const std::string& name, Shape shape, double value, ParamGroup group);
};

std::string join_name(std::string_view prefix, std::string_view leaf);

class Linear {
 public:
  Linear() = default;
  Linear(Builder& b, const std::string& name, std::size_t in, std::size_t out, ParamGroup group, bool bias = true);
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor weight, bias;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Builder& b, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         Conv2dOptions opts, ParamGroup group);
  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, opts); }

  Tensor weight, bias;
  Conv2dOptions opts;
};

/// LayerNorm over the last axis.
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(Builder& b, const std::string& name, std::size_t features, ParamGroup group, double eps = 1e-6);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

  Tensor gamma, beta;
  double eps = 1e-6;
};

/// LayerNorm over the channel axis of an [N,C,H,W] tensor.
Tensor layer_norm_channels(const LayerNorm& ln, const Tensor& x);

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(Builder& b, const std::string& name, std::size_t channels, std::size_t groups, ParamGroup group);
  Tensor forward(const Tensor& x) const { return group_norm(x, groups, gamma, beta, 1e-5); }

  Tensor gamma, beta;
  std::size_t groups = 1;
};

/// Inverted dropout: surviving activations are scaled by 1/(1-p) in training mode.
Tensor dropout(const Tensor& x, double p, const ForwardContext& ctx);

/// Squeeze-and-excitation: per-channel gates sigmoid(expand(relu(reduce(mean_hw(x))))).
class SEBlock {
 public:
  SEBlock() = default;
  /// Throws ConfigError unless channels is divisible by `ratio`.
  SEBlock(Builder& b, const std::string& name, std::size_t channels, std::size_t ratio, ParamGroup group);
  /// Gates in (0,1), shape [N,C].
  Tensor gates(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;

  Linear reduce, expand;
  std::size_t ratio = 4;
};

enum class Activation { gelu, relu, tanh };

/// linear -> activation -> dropout -> linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(Builder& b, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Activation act,
      double dropout_p, ParamGroup group);
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;

  Linear fc1, fc2;
  Activation act = Activation::gelu;
  double dropout_p = 0.0;
};

/// Multi-head self-attention inside square windows with a learned relative
/// position bias. Input tokens are [num_windows * batch, window², C].
class WindowAttention {
 public:
  WindowAttention() = default;
  WindowAttention(Builder& b, const std::string& name, std::size_t dim, std::size_t heads, std::size_t window,
                  ParamGroup group);

  /// `mask` (optional) is [num_windows, window², window²] of 0 / -1e9 entries,
  /// repeated over the batch. When `weights_out` is given it receives the
  /// post-softmax attention [num_windows * batch, heads, T, T].
  Tensor forward(const Tensor& x, const Tensor& mask, Tensor* weights_out = nullptr) const;

  Linear qkv, proj;
  Tensor rel_bias_table;  // [(2w-1)², heads]
  std::size_t heads = 1, window = 1, dim = 0;
  std::vector<std::size_t> rel_index;  // [T*T] rows into rel_bias_table
};

/// Value added to masked attention logits.
inline constexpr double kMaskedLogit = -1e9;

}  // namespace ff
