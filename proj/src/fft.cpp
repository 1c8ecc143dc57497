#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "forensicflow/error.hpp"
#include "forensicflow/ops.hpp"

namespace ff {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 Cooley-Tukey, forward sign convention e^{-2πi kn/N}.
void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

}  // namespace

Tensor rfft2_magnitude(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("rfft2_magnitude: expected [H,W], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1);
  if (!is_pow2(h) || !is_pow2(w)) {
    throw GeometryError("rfft2_magnitude: unsupported size " + std::to_string(h) + "x" + std::to_string(w) +
                        " (both sides must be powers of two)");
  }
  const auto xv = x.data();
  std::vector<std::complex<double>> grid(h * w);
  for (std::size_t i = 0; i < h * w; ++i) grid[i] = xv[i];

  std::vector<std::complex<double>> line(w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) line[c] = grid[r * w + c];
    fft_inplace(line);
    for (std::size_t c = 0; c < w; ++c) grid[r * w + c] = line[c];
  }
  line.resize(h);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) line[r] = grid[r * w + c];
    fft_inplace(line);
    for (std::size_t r = 0; r < h; ++r) grid[r * w + c] = line[r];
  }

  // fftshift: frequency (u, v) moves to ((u + H/2) mod H, (v + W/2) mod W).
  std::vector<double> out(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) out[((u + h / 2) % h) * w + (v + w / 2) % w] = std::abs(grid[u * w + v]);
  apply_precision(out);
  return Tensor({h, w}, std::move(out));
}

}  // namespace ff
