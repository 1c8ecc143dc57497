#pragma once

// Central finite-difference checks of tape gradients in f64 mode.
//
// Error measure per coordinate: |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-3 * max|analytic over the tensor|, 1e-8). The scale floor
// keeps coordinates whose true gradient is ~0 from dominating.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "forensicflow/model.hpp"

namespace ff {

struct GradcheckResult {
  std::string name;
  double max_error = 0;
  double tolerance = 0;
  std::size_t coords = 0;
  std::string worst;  // input or parameter holding the largest error
  bool passed() const { return max_error < tolerance; }
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradcheckOptions {
  double eps = 1e-3;
  double tolerance = 1e-3;
  /// Coordinates sampled per input tensor; 0 checks all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 1;
};

/// `fn` maps the inputs to a scalar. Inputs are copied; the originals are untouched.
GradcheckResult check_gradients(const std::string& name, const ScalarFn& fn, const std::vector<Tensor>& inputs,
                                const GradcheckOptions& opts = {});

/// Every differentiable op on random inputs in [-2, 2] (domain-restricted ops
/// use positive inputs), tolerance 1e-3.
std::vector<GradcheckResult> op_gradcheck_suite(std::uint64_t seed = 1);

/// Small config used for the end-to-end check: every component present and
/// the shifted-window path exercised, but cheap enough to perturb one
/// coordinate at a time.
ModelConfig tiny_model_config();

/// All parameters of a freshly built tiny model against a focal loss on one
/// random segment; `coords_per_tensor` sampled coordinates each, tolerance 1e-2.
/// The step is smaller than the per-op one: a norm weight moves thousands of
/// ReLU and max-pool inputs at once, and a 1e-3 step regularly pushes one of
/// them across its kink.
GradcheckResult model_gradcheck(std::uint64_t seed = 1, std::size_t coords_per_tensor = 20, double eps = 1e-5);

}  // namespace ff
