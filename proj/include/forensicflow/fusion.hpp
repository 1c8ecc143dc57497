#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "forensicflow/layers.hpp"

namespace ff {

/// Which branches take part in fusion. At least one must be on.
struct BranchMask {
  bool rgb = true;
  bool tex = true;
  bool freq = true;

  bool any() const { return rgb || tex || freq; }
  bool all() const { return rgb && tex && freq; }
  std::array<bool, 3> flags() const { return {rgb, tex, freq}; }
  /// "RGB-only", "RGB + Freq", "RGB + Texture", "Full", ...
  std::string label() const;
  /// Parses a comma list of branch names ("rgb,tex,freq"); "full"/"all" enables all three.
  static BranchMask parse(const std::string& spec);
  bool operator==(const BranchMask&) const = default;
};

/// Frame-scoring MLP (d -> d/2 -> tanh -> 1) whose softmax over the K frames
/// weights the per-frame features of one branch.
class TemporalPooler {
 public:
  TemporalPooler() = default;
  TemporalPooler(Builder& b, const std::string& name, std::size_t d);

  struct Result {
    Tensor pooled;   // [N,d]
    Tensor weights;  // [N,K]
  };
  /// frames_feat [N,K,d]. Throws DataError when K == 0.
  Result forward(const Tensor& frames_feat, const ForwardContext& ctx) const;

  Mlp score;
};

/// Linear gate over the concatenated branch embeddings; softmax of its three
/// logits gives the per-branch fusion weights.
class FusionGate {
 public:
  FusionGate() = default;
  FusionGate(Builder& b, const std::string& name, std::size_t d);

  struct Result {
    Tensor fused;   // [N,d]
    Tensor alphas;  // [N,3] in (rgb, tex, freq) order
  };
  /// Masked branches may be passed as undefined tensors; they contribute zero
  /// features and a logit of kMaskedLogit. Throws ConfigError when all are masked.
  Result forward(const Tensor& f_rgb, const Tensor& f_tex, const Tensor& f_freq, const BranchMask& mask) const;

  Linear gate;
  std::size_t d = 0;
};

/// Two-layer classifier: linear -> GELU -> dropout -> linear -> one logit per sample.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(Builder& b, const std::string& name, std::size_t d, std::size_t hidden, double dropout_p);
  /// fused [N,d] -> logits [N].
  Tensor logits(const Tensor& fused, const ForwardContext& ctx) const;
  /// sigmoid(logits) = probability of "fake".
  Tensor forward(const Tensor& fused, const ForwardContext& ctx) const { return sigmoid(logits(fused, ctx)); }

  Mlp mlp;
};

}  // namespace ff
