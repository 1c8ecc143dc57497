#include <doctest.h>

#include "forensicflow/error.hpp"
#include "forensicflow/gradcheck.hpp"
#include "forensicflow/model.hpp"
#include "support.hpp"

using namespace ff;
using support::random_tensor;

namespace {

struct Fixture {
  ParamRegistry reg;
  Rng rng{31};
  Builder b{reg, rng, 0.5};
};

Tensor permute_frames(const Tensor& x, const std::vector<std::size_t>& order) {
  std::vector<Tensor> parts;
  for (auto i : order) parts.push_back(slice(x, 1, i, i + 1));
  return concat(parts, 1);
}

}  // namespace

TEST_SUITE("temporal_fusion") {

TEST_CASE("pooling identical frames gives uniform weights") {
  PrecisionScope f64(Precision::f64);
  Fixture f;
  TemporalPooler pool(f.b, "pool", 6);
  Rng rng(1);
  const auto frame = random_tensor(rng, {1, 1, 6});
  const auto r = pool.forward(concat({frame, frame, frame, frame}, 1), {});
  for (double w : r.weights.data()) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(support::max_abs_diff(r.pooled.data(), frame.data()) < 1e-12);

  const auto single = pool.forward(frame, {});
  CHECK(single.weights[0] == 1.0);
  CHECK(support::max_abs_diff(single.pooled.data(), frame.data()) == 0.0);
}

TEST_CASE("pooling is permutation equivariant") {
  PrecisionScope f64(Precision::f64);
  Fixture f;
  TemporalPooler pool(f.b, "pool", 8);
  Rng rng(2);
  const auto x = random_tensor(rng, {3, 5, 8});
  const std::vector<std::size_t> order{3, 0, 4, 1, 2};
  const auto a = pool.forward(x, {});
  const auto b = pool.forward(permute_frames(x, order), {});
  CHECK(support::max_abs_diff(a.pooled.data(), b.pooled.data()) < 1e-6);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 5; ++j) CHECK(b.weights[n * 5 + j] == doctest::Approx(a.weights[n * 5 + order[j]]));
}

TEST_CASE("pooling an empty segment is an error") {
  Fixture f;
  TemporalPooler pool(f.b, "pool", 4);
  CHECK_THROWS_AS(pool.forward(Tensor::zeros({2, 0, 4}), {}), DataError);
}

TEST_CASE("fusion with only RGB passes it through") {
  PrecisionScope f64(Precision::f64);
  Fixture f;
  FusionGate gate(f.b, "fusion", 4);
  Rng rng(3);
  const auto rgb = random_tensor(rng, {2, 4});
  const auto r = gate.forward(rgb, Tensor{}, Tensor{}, {true, false, false});
  for (std::size_t n = 0; n < 2; ++n) {
    CHECK(r.alphas[n * 3] == 1.0);
    CHECK(r.alphas[n * 3 + 1] == 0.0);
    CHECK(r.alphas[n * 3 + 2] == 0.0);
  }
  CHECK(support::max_abs_diff(r.fused.data(), rgb.data()) == 0.0);
}

TEST_CASE("fusion with a zero gate averages the branches") {
  PrecisionScope f64(Precision::f64);
  Fixture f;
  FusionGate gate(f.b, "fusion", 4);
  for (auto& v : gate.gate.weight.mutable_data()) v = 0.0;
  Rng rng(4);
  const auto a = random_tensor(rng, {2, 4}), b = random_tensor(rng, {2, 4}), c = random_tensor(rng, {2, 4});
  const auto r = gate.forward(a, b, c, {});
  for (double al : r.alphas.data()) CHECK(al == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  for (std::size_t i = 0; i < 8; ++i) CHECK(r.fused[i] == doctest::Approx((a[i] + b[i] + c[i]) / 3.0).epsilon(1e-12));
}

TEST_CASE("fusion alphas are probability vectors") {
  PrecisionScope f64(Precision::f64);
  Fixture f;
  FusionGate gate(f.b, "fusion", 8);
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto r = gate.forward(random_tensor(rng, {1, 8}, -3, 3), random_tensor(rng, {1, 8}, -3, 3),
                                random_tensor(rng, {1, 8}, -3, 3), {});
    double total = 0;
    for (double a : r.alphas.data()) {
      CHECK(a >= 0.0);
      total += a;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("fusion with no branch is a config error") {
  Fixture f;
  FusionGate gate(f.b, "fusion", 4);
  CHECK_THROWS_AS(gate.forward(Tensor{}, Tensor{}, Tensor{}, {false, false, false}), ConfigError);
  CHECK_THROWS_AS(BranchMask::parse(""), ConfigError);
}

TEST_CASE("branch mask parsing and labels") {
  CHECK(BranchMask::parse("rgb") == BranchMask{true, false, false});
  CHECK(BranchMask::parse("tex,freq") == BranchMask{false, true, true});
  CHECK(BranchMask::parse("full") == BranchMask{});
  CHECK(BranchMask::parse("rgb").label() == "RGB-only");
  CHECK(BranchMask::parse("rgb,freq").label() == "RGB + Freq");
  CHECK(BranchMask::parse("rgb,tex").label() == "RGB + Texture");
  CHECK(BranchMask{}.label() == "Full");
  CHECK_THROWS_AS(BranchMask::parse("rgb,audio"), ConfigError);
}

TEST_CASE("classifier head probabilities") {
  Fixture f;
  ClassifierHead head(f.b, "classifier", 4, 8, 0.3);
  Rng rng(6);
  const auto x = random_tensor(rng, {5, 4}, -3, 3);
  const auto p = head.forward(x, {});
  for (double v : p.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(support::max_abs_diff(p.data(), head.forward(x, {}).data()) == 0.0);
  for (auto& w : head.mlp.fc2.weight.mutable_data()) w = 0.0;
  for (double v : support::to_vector(head.forward(x, {}))) CHECK(v == 0.5);
}

TEST_CASE("forward_segment shapes") {
  ForensicFlow model(ModelConfig{}, 7);
  Rng rng(7);
  const auto out = model.forward(random_tensor(rng, {2, 4, 3, 32, 32}), random_tensor(rng, {2, 4, 1, 32, 32}, 0, 1), {});
  CHECK(out.probs.shape() == Shape{2});
  CHECK(out.logits.shape() == Shape{2});
  CHECK(out.alphas.shape() == Shape{2, 3});
  for (const auto& w : out.frame_weights) CHECK(w.shape() == Shape{2, 4});
}

TEST_CASE("forward_segment is invariant to frame order") {
  PrecisionScope f64(Precision::f64);
  ForensicFlow model(tiny_model_config(), 8);
  Rng rng(8);
  const auto frames = random_tensor(rng, {2, 4, 3, 32, 32});
  const auto maps = random_tensor(rng, {2, 4, 1, 32, 32}, 0, 1);
  const std::vector<std::size_t> order{2, 3, 1, 0};
  const auto a = model.forward(frames, maps, {});
  const auto b = model.forward(permute_frames(frames, order), permute_frames(maps, order), {});
  CHECK(support::max_abs_diff(a.probs.data(), b.probs.data()) < 1e-6);
}

TEST_CASE("masked branch inputs do not affect the output") {
  ForensicFlow model(ModelConfig{}, 9);
  Rng rng(9);
  const auto frames = random_tensor(rng, {1, 4, 3, 32, 32});
  const auto maps = random_tensor(rng, {1, 4, 1, 32, 32}, 0, 1);
  const BranchMask no_freq{true, true, false};
  const auto a = model.forward(frames, maps, no_freq, {});
  const auto b = model.forward(frames, random_tensor(rng, {1, 4, 1, 32, 32}, -5, 5), no_freq, {});
  CHECK(a.probs[0] == b.probs[0]);
  CHECK_FALSE(b.frame_weights[2].defined());

  const BranchMask freq_only{false, false, true};
  const auto c = model.forward(frames, maps, freq_only, {});
  const auto d = model.forward(random_tensor(rng, {1, 4, 3, 32, 32}, -5, 5), maps, freq_only, {});
  CHECK(c.probs[0] == d.probs[0]);
}

TEST_CASE("masking down to RGB matches a model built without the other branches") {
  ModelConfig cfg;
  cfg.branches = {true, false, false};
  ForensicFlow rgb_only(cfg, 10);
  ForensicFlow full(ModelConfig{}, 10);
  // Same init streams per component, so the shared parameters agree.
  for (const auto& p : rgb_only.registry().entries()) {
    const auto* q = full.registry().find(p.name);
    REQUIRE(q);
    CHECK(support::max_abs_diff(p.tensor.data(), q->tensor.data()) == 0.0);
  }
  Rng rng(10);
  const auto frames = random_tensor(rng, {2, 4, 3, 32, 32});
  const auto maps = random_tensor(rng, {2, 4, 1, 32, 32}, 0, 1);
  const auto a = rgb_only.forward(frames, maps, {});
  const auto b = full.forward(frames, maps, cfg.branches, {});
  CHECK(support::max_abs_diff(a.probs.data(), b.probs.data()) == 0.0);
  CHECK_THROWS_AS(rgb_only.forward(frames, maps, BranchMask{}, {}), ConfigError);
}

TEST_CASE("layer paths resolve negative indices") {
  ForensicFlow model(ModelConfig{}, 1);
  CHECK(resolve_layer_path(model.registry(), "rgb_back.stages[-1].blocks[-1].depthwise_conv") ==
        "rgb_back.stages.2.blocks.1.depthwise_conv");
  CHECK(resolve_layer_path(model.registry(), "rgb_back.stages[0].blocks[0].depthwise_conv") ==
        "rgb_back.stages.0.blocks.0.depthwise_conv");
  CHECK_THROWS_AS(resolve_layer_path(model.registry(), "rgb_back.stages[5].blocks[0]"), ConfigError);
}

TEST_CASE("high-pass residual removes constant offsets") {
  PrecisionScope f64(Precision::f64);
  Rng rng(11);
  const auto x = random_tensor(rng, {2, 3, 8, 8});
  const auto shifted = add_scalar(x, 0.37);
  CHECK(support::max_abs_diff(highpass_residual(x).data(), highpass_residual(shifted).data()) < 1e-12);
  for (double v : support::to_vector(highpass_residual(Tensor::full({1, 3, 4, 4}, 2.0)))) CHECK(v == 0.0);
}

}  // TEST_SUITE
