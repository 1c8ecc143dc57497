#include "forensicflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "forensicflow/error.hpp"
#include "forensicflow/training.hpp"

namespace ff {

namespace {

/// Checks the gradients of `loss()` w.r.t. `live` (tensors the closure reads
/// directly), perturbing their storage in place.
GradcheckResult run_check(const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor>& live,
                          const std::vector<std::string>& labels, const GradcheckOptions& opts) {
  GradcheckResult res;
  res.name = name;
  res.tolerance = opts.tolerance;
  std::vector<std::vector<double>> analytic(live.size());
  {
    Tape tape(Precision::f64);
    TapeScope scope(tape);
    const auto l = loss();
    if (l.numel() != 1) throw UsageError("gradcheck '" + name + "': function must return a scalar");
    tape.backward(l);
    for (std::size_t i = 0; i < live.size(); ++i) {
      if (live[i].has_grad()) {
        const auto g = live[i].grad();
        analytic[i].assign(g.begin(), g.end());
      } else {
        analytic[i].assign(live[i].numel(), 0.0);
      }
      live[i].clear_grad();
    }
  }
  PrecisionScope precision(Precision::f64);
  Rng rng(opts.seed);
  for (std::size_t i = 0; i < live.size(); ++i) {
    const std::size_t n = live[i].numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.max_coords && n > opts.max_coords) {
      const auto order = shuffled_indices(n, rng);
      coords.assign(order.begin(), order.begin() + static_cast<long>(opts.max_coords));
    }
    double scale = 0.0;
    for (double g : analytic[i]) scale = std::max(scale, std::abs(g));
    auto data = live[i].mutable_data();
    for (auto j : coords) {
      const double orig = data[j];
      data[j] = orig + opts.eps;
      const double up = loss().item();
      data[j] = orig - opts.eps;
      const double down = loss().item();
      data[j] = orig;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3 * scale, 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (res.worst.empty() || err > res.max_error) {
        res.max_error = err;
        res.worst = labels[i] + "[" + std::to_string(j) + "]";
      }
      ++res.coords;
    }
  }
  return res;
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

/// sum(y * r) for a fixed random r, so every output coordinate matters.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(rng, y.shape(), -1.0, 1.0)));
}

}  // namespace

GradcheckResult check_gradients(const std::string& name, const ScalarFn& fn, const std::vector<Tensor>& inputs,
                                const GradcheckOptions& opts) {
  std::vector<Tensor> live;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    live.push_back(inputs[i].detach());
    live.back().set_requires_grad(true);
    labels.push_back("input" + std::to_string(i));
  }
  return run_check(name, [&] { return fn(live); }, live, labels, opts);
}

std::vector<GradcheckResult> op_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradcheckResult> out;
  auto check = [&](const std::string& name, const std::vector<Tensor>& inputs,
                   const std::function<Tensor(const std::vector<Tensor>&)>& op) {
    const std::uint64_t proj_seed = rng.next_u64();
    out.push_back(check_gradients(name, [&](const std::vector<Tensor>& x) { return project(op(x), proj_seed); },
                                  inputs, {1e-3, 1e-3, 0, seed}));
  };
  auto r = [&](Shape s) { return random_tensor(rng, std::move(s)); };
  auto pos = [&](Shape s) { return random_tensor(rng, std::move(s), 0.5, 2.0); };

  check("matmul", {r({3, 4}), r({4, 2})}, [](auto& x) { return matmul(x[0], x[1]); });
  check("bmm", {r({2, 3, 4}), r({2, 4, 5})}, [](auto& x) { return bmm(x[0], x[1]); });
  check("bmm_transposed", {r({2, 3, 4}), r({2, 5, 4})}, [](auto& x) { return bmm(x[0], x[1], true); });
  check("linear", {r({2, 3, 5}), r({4, 5}), r({4})}, [](auto& x) { return linear(x[0], x[1], x[2]); });
  check("conv2d", {r({2, 4, 8, 8}), r({6, 4, 3, 3}), r({6})},
        [](auto& x) { return conv2d(x[0], x[1], x[2], {1, 1, 1}); });
  check("conv2d_strided", {r({1, 3, 8, 8}), r({4, 3, 4, 4}), r({4})},
        [](auto& x) { return conv2d(x[0], x[1], x[2], {4, 0, 1}); });
  check("conv2d_depthwise", {r({2, 4, 6, 6}), r({4, 1, 7, 7}), r({4})},
        [](auto& x) { return conv2d(x[0], x[1], x[2], {1, 3, 4}); });
  check("conv2d_grouped", {r({1, 4, 5, 5}), r({6, 2, 3, 3}), r({6})},
        [](auto& x) { return conv2d(x[0], x[1], x[2], {2, 1, 2}); });
  check("softmax", {r({3, 5})}, [](auto& x) { return softmax(x[0], 1); });
  check("softmax_axis0", {r({4, 3})}, [](auto& x) { return softmax(x[0], 0); });
  check("layer_norm", {r({2, 8}), r({8}), r({8})}, [](auto& x) { return layer_norm(x[0], x[1], x[2], 1e-6); });
  check("group_norm", {r({2, 4, 3, 3}), r({4}), r({4})},
        [](auto& x) { return group_norm(x[0], 2, x[1], x[2], 1e-5); });
  check("add", {r({2, 3}), r({2, 3})}, [](auto& x) { return add(x[0], x[1]); });
  check("add_broadcast", {r({2, 3, 4}), r({4})}, [](auto& x) { return add(x[0], x[1]); });
  check("sub", {r({2, 3}), r({1})}, [](auto& x) { return sub(x[0], x[1]); });
  check("mul", {r({2, 3}), r({2, 3})}, [](auto& x) { return mul(x[0], x[1]); });
  check("mul_broadcast", {r({2, 3, 4}), r({3, 4})}, [](auto& x) { return mul(x[0], x[1]); });
  check("scale", {r({5})}, [](auto& x) { return scale(x[0], -1.7); });
  check("add_scalar", {r({5})}, [](auto& x) { return add_scalar(x[0], 0.3); });
  check("relu", {r({4, 4})}, [](auto& x) { return relu(x[0]); });
  check("gelu", {r({4, 4})}, [](auto& x) { return gelu(x[0]); });
  check("sigmoid", {r({4, 4})}, [](auto& x) { return sigmoid(x[0]); });
  check("tanh", {r({4, 4})}, [](auto& x) { return tanh(x[0]); });
  check("log", {pos({4, 4})}, [](auto& x) { return log(x[0]); });
  check("pow_scalar", {pos({4, 4})}, [](auto& x) { return pow_scalar(x[0], 2.5); });
  check("clamp", {r({4, 4})}, [](auto& x) { return clamp(x[0], -1.0, 1.0); });
  check("scale_channels", {r({2, 3, 4, 4}), r({2, 3})}, [](auto& x) { return scale_channels(x[0], x[1]); });
  check("sum", {r({3, 4})}, [](auto& x) { return scale(sum(x[0]), 0.7); });
  check("mean", {r({3, 4})}, [](auto& x) { return scale(mean(x[0]), 0.7); });
  check("mean_axis", {r({3, 4, 5})}, [](auto& x) { return mean(x[0], 1); });
  check("max_pool2d", {r({2, 3, 6, 6})}, [](auto& x) { return max_pool2d(x[0], 2, 2); });
  check("adaptive_avg_pool2d", {r({2, 3, 4, 4})}, [](auto& x) { return adaptive_avg_pool2d(x[0], 1, 1); });
  check("adaptive_avg_pool2d_2x2", {r({1, 2, 5, 6})}, [](auto& x) { return adaptive_avg_pool2d(x[0], 2, 2); });
  check("reshape", {r({2, 6})}, [](auto& x) { return reshape(x[0], {3, 4}); });
  check("permute", {r({2, 3, 4})}, [](auto& x) { return permute(x[0], {2, 0, 1}); });
  check("concat", {r({2, 3}), r({2, 2})}, [](auto& x) { return concat({x[0], x[1]}, 1); });
  check("slice", {r({4, 5})}, [](auto& x) { return slice(x[0], 1, 1, 4); });
  check("roll", {r({3, 6})}, [](auto& x) { return roll(x[0], 1, -2); });
  check("index_select", {r({5, 3})}, [](auto& x) { return index_select(x[0], {4, 0, 0, 2}); });
  check("focal_loss", {random_tensor(rng, {6}, 0.05, 0.95)}, [](auto& x) {
    return focal_loss(x[0], Tensor::of({6}, {1, 0, 1, 1, 0, 1}));
  });
  check("focal_loss_gamma0", {random_tensor(rng, {4}, 0.05, 0.95)}, [](auto& x) {
    return focal_loss(x[0], Tensor::of({4}, {1, 0, 0, 1}), {1.0, 0.0, 1e-7});
  });
  return out;
}

ModelConfig tiny_model_config() {
  ModelConfig m;
  m.d = 16;
  m.rgb.depths = {1, 1, 1};
  m.rgb.dims = {8, 8, 16};
  m.rgb.layer_scale_init = 0.5;
  m.tex.embed_dim = 8;
  m.tex.depths = {2, 1};
  m.tex.heads = {2, 2};
  m.freq.channels = {4, 8, 8};
  m.freq.norm_groups = 2;
  m.freq.se_ratio = 2;
  m.head_dropout = 0.0;
  m.init_std = 0.3;
  return m;
}

GradcheckResult model_gradcheck(std::uint64_t seed, std::size_t coords_per_tensor, double eps) {
  ForensicFlow model(tiny_model_config(), seed);
  model.registry().set_all_trainable(true);
  Rng rng(derive_seed(seed, 99));
  // Tables that start at zero get random values so their gradients are generic.
  for (auto& p : model.registry().entries()) {
    if (p.name.find("relative_position_bias_table") != std::string::npos) {
      for (auto& v : p.tensor.mutable_data()) v = rng.uniform(-0.5, 0.5);
    }
  }
  const std::size_t k = 2, side = 32;
  const auto frames = random_tensor(rng, {1, k, 3, side, side});
  const auto maps = random_tensor(rng, {1, k, 1, side, side}, 0.0, 1.0);
  const auto label = Tensor::of({1}, {1.0});
  std::vector<Tensor> live;
  std::vector<std::string> labels;
  for (auto& p : model.registry().entries()) {
    live.push_back(p.tensor);
    labels.push_back(p.name);
  }
  auto loss = [&] {
    const auto out = model.forward(frames, maps, ForwardContext{});
    return focal_loss(out.probs, label);
  };
  GradcheckOptions opts;
  opts.eps = eps;
  opts.tolerance = 1e-2;
  opts.max_coords = coords_per_tensor;
  opts.seed = seed;
  return run_check("forward_segment", loss, live, labels, opts);
}

}  // namespace ff
