#pragma once

// Shared helpers and independent reference implementations for the tests.
// The oracles are written as plainly as possible and share no code with the
// library kernels they check.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "forensicflow/dataio.hpp"
#include "forensicflow/metrics.hpp"
#include "forensicflow/rng.hpp"
#include "forensicflow/synth.hpp"
#include "forensicflow/tensor.hpp"

namespace support {

inline ff::Tensor random_tensor(ff::Rng& rng, ff::Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(ff::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ff::Tensor(std::move(shape), std::move(v));
}

/// Owning copy; safe to iterate when the tensor is a temporary.
inline std::vector<double> to_vector(const ff::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Direct 6-loop cross-correlation with zero padding and channel groups.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t h,
                                        std::size_t w, const std::vector<double>& wt, std::size_t f, std::size_t kh,
                                        std::size_t kw, const std::vector<double>& bias, std::size_t stride,
                                        std::size_t pad, std::size_t groups) {
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  const std::size_t cg = c / groups, fg = f / groups;
  std::vector<double> out(n * f * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = bias.empty() ? 0.0 : bias[o];
          const std::size_t g = o / fg;
          for (std::size_t ci = 0; ci < cg; ++ci)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xo * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                const std::size_t cin = g * cg + ci;
                acc += x[((b * c + cin) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] *
                       wt[((o * cg + ci) * kh + i) * kw + j];
              }
          out[((b * f + o) * oh + y) * ow + xo] = acc;
        }
  return out;
}

/// O(N^4) DFT magnitude with the DC term moved to (h/2, w/2).
inline std::vector<double> naive_dft_magnitude(const std::vector<double>& x, std::size_t h, std::size_t w) {
  std::vector<double> out(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double phase = -2.0 * std::numbers::pi *
                               (static_cast<double>(u * y) / static_cast<double>(h) +
                                static_cast<double>(v * xx) / static_cast<double>(w));
          acc += x[y * w + xx] * std::polar(1.0, phase);
        }
      out[((u + h / 2) % h) * w + (v + w / 2) % w] = std::abs(acc);
    }
  return out;
}

/// AUC by enumerating every (fake, real) pair.
inline double brute_force_auc(const std::vector<ff::PredictionRecord>& r) {
  double score = 0;
  std::size_t pairs = 0;
  for (const auto& a : r)
    for (const auto& b : r) {
      if (a.label != 1 || b.label != 0) continue;
      ++pairs;
      if (a.prob > b.prob) score += 1;
      else if (a.prob == b.prob) score += 0.5;
    }
  return score / static_cast<double>(pairs);
}

/// Generated train and val splits, loaded straight from memory.
inline std::pair<ff::Dataset, ff::Dataset> synth_datasets(const ff::SynthConfig& cfg) {
  std::pair<ff::Dataset, ff::Dataset> out;
  for (auto& seg : ff::synth_segments(cfg)) {
    auto& dst = seg.split == "train" ? out.first : out.second;
    dst.samples.push_back(ff::make_sample(seg.id, seg.label, seg.artifact, seg.data));
  }
  return out;
}

/// A small generator config for tests that train.
inline ff::SynthConfig small_synth(std::uint64_t seed = 5) {
  ff::SynthConfig cfg;
  cfg.n_real_train = 4;
  cfg.n_fake_train = 8;
  cfg.n_real_val = 3;
  cfg.n_fake_val = 6;
  cfg.seed = seed;
  return cfg;
}

}  // namespace support
