#include "forensicflow/fusion.hpp"

#include <sstream>

#include "forensicflow/error.hpp"

namespace ff {

std::string BranchMask::label() const {
  if (all()) return "Full";
  std::string out;
  auto append = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += " + ";
    out += name;
  };
  append(rgb, "RGB");
  append(tex, "Texture");
  append(freq, "Freq");
  if (out.find('+') == std::string::npos) out += "-only";
  return out;
}

BranchMask BranchMask::parse(const std::string& spec) {
  if (spec == "full" || spec == "all") return {};
  BranchMask m{false, false, false};
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "rgb") {
      m.rgb = true;
    } else if (item == "tex" || item == "texture") {
      m.tex = true;
    } else if (item == "freq" || item == "frequency") {
      m.freq = true;
    } else if (!item.empty()) {
      throw ConfigError("unknown branch '" + item + "' (expected rgb, tex, freq)");
    }
  }
  if (!m.any()) throw ConfigError("branch mask '" + spec + "' enables no branch");
  return m;
}

TemporalPooler::TemporalPooler(Builder& b, const std::string& name, std::size_t d) {
  score = Mlp(b, join_name(name, "score"), d, std::max<std::size_t>(d / 2, 1), 1, Activation::tanh, 0.0,
              ParamGroup::head);
}

TemporalPooler::Result TemporalPooler::forward(const Tensor& frames_feat, const ForwardContext& ctx) const {
  if (frames_feat.rank() != 3) throw ShapeError("temporal pooling expects [N,K,d], got " + shape_str(frames_feat.shape()));
  const std::size_t n = frames_feat.dim(0), k = frames_feat.dim(1), d = frames_feat.dim(2);
  if (k == 0) throw DataError("temporal pooling over an empty segment (K = 0)");
  auto weights = softmax(reshape(score.forward(frames_feat, ctx), {n, k}), 1);
  auto pooled = reshape(bmm(reshape(weights, {n, 1, k}), frames_feat), {n, d});
  return {pooled, weights};
}

FusionGate::FusionGate(Builder& b, const std::string& name, std::size_t dim) : d(dim) {
  gate = Linear(b, join_name(name, "gate"), 3 * dim, 3, ParamGroup::head);
}

FusionGate::Result FusionGate::forward(const Tensor& f_rgb, const Tensor& f_tex, const Tensor& f_freq,
                                       const BranchMask& mask) const {
  if (!mask.any()) throw ConfigError("fusion with every branch masked");
  const std::array<const Tensor*, 3> feats{&f_rgb, &f_tex, &f_freq};
  const auto on = mask.flags();
  std::size_t n = 0;
  for (int i = 0; i < 3; ++i) {
    if (!on[i]) continue;
    const auto& f = *feats[i];
    if (!f.defined() || f.rank() != 2 || f.dim(1) != d) {
      throw ShapeError("fusion input " + std::to_string(i) + " must be [N," + std::to_string(d) + "]");
    }
    if (n == 0) n = f.dim(0);
    if (f.dim(0) != n) throw ShapeError("fusion inputs disagree on batch size");
  }
  std::vector<Tensor> parts;
  std::vector<double> logit_mask(n * 3, 0.0);
  for (int i = 0; i < 3; ++i) {
    parts.push_back(on[i] ? *feats[i] : Tensor::zeros({n, d}));
    if (!on[i])
      for (std::size_t r = 0; r < n; ++r) logit_mask[r * 3 + i] = kMaskedLogit;
  }
  auto logits = gate.forward(concat(parts, 1));
  if (!mask.all()) logits = add(logits, Tensor({n, 3}, std::move(logit_mask)));
  auto alphas = softmax(logits, 1);
  auto stacked = reshape(concat(parts, 1), {n, 3, d});
  auto fused = reshape(bmm(reshape(alphas, {n, 1, 3}), stacked), {n, d});
  return {fused, alphas};
}

ClassifierHead::ClassifierHead(Builder& b, const std::string& name, std::size_t d, std::size_t hidden,
                               double dropout_p) {
  mlp = Mlp(b, name, d, hidden, 1, Activation::gelu, dropout_p, ParamGroup::classifier);
}

Tensor ClassifierHead::logits(const Tensor& fused, const ForwardContext& ctx) const {
  auto out = mlp.forward(fused, ctx);
  return reshape(out, {out.dim(0)});
}

}  // namespace ff
