#include "forensicflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "forensicflow/error.hpp"
#include "kernels.hpp"

namespace ff {

using detail::finish;
using detail::grad_sink;

namespace {

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Returns the output shape of a broadcasting binary op.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return sa;
  if (b.numel() == 1) return sa;
  if (a.numel() == 1) return sb;
  if (is_suffix(sb, sa)) return sa;
  if (is_suffix(sa, sb)) return sb;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sa) + " with " + shape_str(sb));
}

template <class Fwd, class Bwd>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Bwd dfdx) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return finish(name, x.shape(), std::move(out), {x}, [x, dfdx](std::span<const double> g, std::span<const double> y) {
    if (double* gx = grad_sink(x)) {
      const auto xv = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], y[i]);
    }
  });
}

}  // namespace

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " do not chain");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm(m, n, k, a.data().data(), false, b.data().data(), false, out.data(), false);
  return finish("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, n, k](std::span<const double> g, auto) {
    if (double* ga = grad_sink(a)) kernels::gemm(m, k, n, g.data(), false, b.data().data(), true, ga, true);
    if (double* gb = grad_sink(b)) kernels::gemm(k, n, m, a.data().data(), true, g.data(), false, gb, true);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == (transpose_b ? b.dim(2) : b.dim(1));
  if (!ok) {
    throw ShapeError("bmm: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     (transpose_b ? " (b transposed)" : "") + " do not chain");
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm(m, n, k, a.data().data() + i * m * k, false, b.data().data() + i * k * n, transpose_b,
                  out.data() + i * m * n, false);
  }
  return finish("bmm", {batch, m, n}, std::move(out), {a, b},
                [a, b, batch, m, n, k, transpose_b](std::span<const double> g, auto) {
                  double* ga = grad_sink(a);
                  double* gb = grad_sink(b);
                  for (std::size_t i = 0; i < batch; ++i) {
                    const double* gi = g.data() + i * m * n;
                    const double* ai = a.data().data() + i * m * k;
                    const double* bi = b.data().data() + i * k * n;
                    // dA = G · op(B)ᵀ
                    if (ga) kernels::gemm(m, k, n, gi, false, bi, !transpose_b, ga + i * m * k, true);
                    if (gb) {
                      if (transpose_b) {
                        kernels::gemm(n, k, m, gi, true, ai, false, gb + i * k * n, true);  // dB[n,k] = Gᵀ A
                      } else {
                        kernels::gemm(k, n, m, ai, true, gi, false, gb + i * k * n, true);  // dB[k,n] = Aᵀ G
                      }
                    }
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(out_f) +
                     " outputs");
  }
  const std::size_t rows = x.numel() / in_f;
  std::vector<double> out(rows * out_f);
  kernels::gemm(rows, out_f, in_f, x.data().data(), false, weight.data().data(), true, out.data(), false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_f; ++j) out[r * out_f + j] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = out_f;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return finish("linear", std::move(shape), std::move(out), inputs,
                [x, weight, bias, rows, in_f, out_f](std::span<const double> g, auto) {
                  if (double* gx = grad_sink(x))
                    kernels::gemm(rows, in_f, out_f, g.data(), false, weight.data().data(), false, gx, true);
                  if (double* gw = grad_sink(weight))
                    kernels::gemm(out_f, in_f, rows, g.data(), true, x.data().data(), false, gw, true);
                  if (bias.defined()) {
                    if (double* gb = grad_sink(bias)) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
                    }
                  }
                });
}

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, f, cg, fg, kh, kw, stride, pad, groups, ho, wo;
  std::size_t ckk() const { return cg * kh * kw; }
  std::size_t hw_out() const { return ho * wo; }
};

void im2col(const ConvGeom& g, const double* x_img, std::size_t group, double* col) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.cg; ++c) {
    const double* plane = x_img + (group * g.cg + c) * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * g.hw_out();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - pad;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, std::size_t group, double* gx_img) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.cg; ++c) {
    double* plane = gx_img + (group * g.cg + c) * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * g.hw_out();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - pad;
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d: expected 4-D input and weight, got " + shape_str(x.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  ConvGeom g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.f = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = opts.stride;
  g.pad = opts.padding;
  g.groups = opts.groups;
  if (g.groups == 0 || g.c % g.groups != 0 || g.f % g.groups != 0) {
    throw ShapeError("conv2d: " + std::to_string(g.c) + " input and " + std::to_string(g.f) +
                     " output channels are not divisible by groups=" + std::to_string(g.groups));
  }
  g.cg = g.c / g.groups;
  g.fg = g.f / g.groups;
  if (weight.dim(1) != g.cg) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)) +
                     " channels per group, input provides " + std::to_string(g.cg));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.f)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(g.f) + " filters");
  }
  if (g.stride == 0) throw GeometryError("conv2d: stride must be positive");
  const long hp = static_cast<long>(g.h + 2 * g.pad) - static_cast<long>(g.kh);
  const long wp = static_cast<long>(g.w + 2 * g.pad) - static_cast<long>(g.kw);
  if (hp < 0 || wp < 0) {
    throw GeometryError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                        " does not fit padded input " + std::to_string(g.h + 2 * g.pad) + "x" +
                        std::to_string(g.w + 2 * g.pad) + " (computed H'=" +
                        std::to_string(hp / static_cast<long>(g.stride) + 1) + ")");
  }
  g.ho = static_cast<std::size_t>(hp) / g.stride + 1;
  g.wo = static_cast<std::size_t>(wp) / g.stride + 1;

  std::vector<double> out(g.n * g.f * g.hw_out());
  std::vector<double> col(g.ckk() * g.hw_out());
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* img = xd + n * g.c * g.h * g.w;
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      im2col(g, img, grp, col.data());
      double* dst = out.data() + (n * g.f + grp * g.fg) * g.hw_out();
      kernels::gemm(g.fg, g.hw_out(), g.ckk(), wd + grp * g.fg * g.ckk(), false, col.data(), false, dst, false);
    }
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::size_t f = 0; f < g.f; ++f) {
        double* dst = out.data() + (n * g.f + f) * g.hw_out();
        for (std::size_t i = 0; i < g.hw_out(); ++i) dst[i] += bv[f];
      }
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return finish("conv2d", {g.n, g.f, g.ho, g.wo}, std::move(out), inputs,
                [x, weight, bias, g](std::span<const double> gout, auto) {
                  double* gx = grad_sink(x);
                  double* gw = grad_sink(weight);
                  double* gb = bias.defined() ? grad_sink(bias) : nullptr;
                  std::vector<double> col(g.ckk() * g.hw_out());
                  std::vector<double> gcol(gx ? col.size() : 0);
                  const double* xd = x.data().data();
                  const double* wd = weight.data().data();
                  for (std::size_t n = 0; n < g.n; ++n) {
                    const double* img = xd + n * g.c * g.h * g.w;
                    for (std::size_t grp = 0; grp < g.groups; ++grp) {
                      const double* go = gout.data() + (n * g.f + grp * g.fg) * g.hw_out();
                      if (gw) {
                        im2col(g, img, grp, col.data());
                        kernels::gemm(g.fg, g.ckk(), g.hw_out(), go, false, col.data(), true,
                                      gw + grp * g.fg * g.ckk(), true);
                      }
                      if (gx) {
                        kernels::gemm(g.ckk(), g.hw_out(), g.fg, wd + grp * g.fg * g.ckk(), true, go, false,
                                      gcol.data(), false);
                        col2im_add(g, gcol.data(), grp, gx + n * g.c * g.h * g.w);
                      }
                    }
                    if (gb) {
                      for (std::size_t f = 0; f < g.f; ++f) {
                        const double* go = gout.data() + (n * g.f + f) * g.hw_out();
                        double acc = 0.0;
                        for (std::size_t i = 0; i < g.hw_out(); ++i) acc += go[i];
                        gb[f] += acc;
                      }
                    }
                  }
                });
}

// --- normalization ----------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  const auto& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size());
  const std::size_t n = s[ax];
  if (n == 0) throw ShapeError("softmax over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  }
  return finish("softmax", s, std::move(out), {x}, [x, outer, inner, n](std::span<const double> g, std::span<const double> y) {
    double* gx = grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match " + std::to_string(c) + " features");
  }
  const std::size_t rows = x.numel() / c;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> out(xv.size());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t i = 0; i < c; ++i) mu += row[i];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < c; ++i) {
      const double h = (row[i] - mu) * rs;
      (*xhat)[r * c + i] = h;
      out[r * c + i] = h * gv[i] + bv[i];
    }
  }
  return finish("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, rstd, rows, c](std::span<const double> g, auto) {
                  double* gx = grad_sink(x);
                  double* gg = grad_sink(gamma);
                  double* gb = grad_sink(beta);
                  const auto gv = gamma.data();
                  const double inv_c = 1.0 / static_cast<double>(c);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * c;
                    const double* hr = xhat->data() + r * c;
                    if (gg)
                      for (std::size_t i = 0; i < c; ++i) gg[i] += gr[i] * hr[i];
                    if (gb)
                      for (std::size_t i = 0; i < c; ++i) gb[i] += gr[i];
                    if (gx) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t i = 0; i < c; ++i) {
                        const double d = gr[i] * gv[i];
                        m1 += d;
                        m2 += d * hr[i];
                      }
                      m1 *= inv_c;
                      m2 *= inv_c;
                      for (std::size_t i = 0; i < c; ++i)
                        gx[r * c + i] += (*rstd)[r] * (gr[i] * gv[i] - m1 - hr[i] * m2);
                    }
                  }
                });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 4) throw ShapeError("group_norm: expected [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) +
                      " groups");
  }
  if (gamma.numel() != c || beta.numel() != c) throw ShapeError("group_norm: affine parameters do not match channels");
  const std::size_t cg = c / groups;
  const std::size_t span = cg * hw;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> out(xv.size());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(n * groups);
  for (std::size_t b = 0; b < n * groups; ++b) {
    const double* seg = xv.data() + b * span;
    double mu = 0.0;
    for (std::size_t i = 0; i < span; ++i) mu += seg[i];
    mu /= static_cast<double>(span);
    double var = 0.0;
    for (std::size_t i = 0; i < span; ++i) var += (seg[i] - mu) * (seg[i] - mu);
    var /= static_cast<double>(span);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[b] = rs;
    for (std::size_t i = 0; i < span; ++i) {
      const std::size_t ch = (b % groups) * cg + i / hw;
      const double h = (seg[i] - mu) * rs;
      (*xhat)[b * span + i] = h;
      out[b * span + i] = h * gv[ch] + bv[ch];
    }
  }
  return finish("group_norm", x.shape(), std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, rstd, n, groups, cg, hw, span](std::span<const double> g, auto) {
                  double* gx = grad_sink(x);
                  double* gg = grad_sink(gamma);
                  double* gb = grad_sink(beta);
                  const auto gv = gamma.data();
                  const double inv = 1.0 / static_cast<double>(span);
                  for (std::size_t b = 0; b < n * groups; ++b) {
                    const double* gr = g.data() + b * span;
                    const double* hr = xhat->data() + b * span;
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t i = 0; i < span; ++i) {
                      const std::size_t ch = (b % groups) * cg + i / hw;
                      if (gg) gg[ch] += gr[i] * hr[i];
                      if (gb) gb[ch] += gr[i];
                      const double d = gr[i] * gv[ch];
                      m1 += d;
                      m2 += d * hr[i];
                    }
                    if (!gx) continue;
                    m1 *= inv;
                    m2 *= inv;
                    for (std::size_t i = 0; i < span; ++i) {
                      const std::size_t ch = (b % groups) * cg + i / hw;
                      gx[b * span + i] += (*rstd)[b] * (gr[i] * gv[ch] - m1 - hr[i] * m2);
                    }
                  }
                });
}

// --- elementwise --------------------------------------------------------------

namespace {

enum class BinOp { add, sub, mul };

Tensor binary(BinOp op, const Tensor& a, const Tensor& b) {
  static constexpr const char* names[] = {"add", "sub", "mul"};
  const char* name = names[static_cast<int>(op)];
  Shape shape = broadcast_shape(a, b, name);
  const std::size_t total = shape_numel(shape);
  const std::size_t na = a.numel(), nb = b.numel();
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) {
    const double x = av[i % na], y = bv[i % nb];
    out[i] = op == BinOp::add ? x + y : op == BinOp::sub ? x - y : x * y;
  }
  return finish(name, std::move(shape), std::move(out), {a, b}, [op, a, b, na, nb](std::span<const double> g, auto) {
    double* ga = grad_sink(a);
    double* gb = grad_sink(b);
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ia = i % na, ib = i % nb;
      switch (op) {
        case BinOp::add:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] += g[i];
          break;
        case BinOp::sub:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] -= g[i];
          break;
        case BinOp::mul:
          if (ga) ga[ia] += g[i] * bv[ib];
          if (gb) gb[ib] += g[i] * av[ia];
          break;
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinOp::mul, a, b); }

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary("add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor pow_scalar(const Tensor& x, double exponent) {
  for (double v : x.data()) {
    if (v < 0.0) throw DomainError("pow_scalar of negative value " + std::to_string(v));
  }
  return unary(
      "pow", x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) {
        if (exponent == 0.0) return 0.0;
        if (v == 0.0) return exponent == 1.0 ? 1.0 : (exponent > 1.0 ? 0.0 : HUGE_VAL);
        return exponent * std::pow(v, exponent - 1.0);
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  if (x.rank() != 4 || gate.rank() != 2 || gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1)) {
    throw ShapeError("scale_channels: input " + shape_str(x.shape()) + " and gate " + shape_str(gate.shape()) +
                     " disagree");
  }
  const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  const auto gv = gate.data();
  std::vector<double> out(xv.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = xv[p * hw + i] * gv[p];
  return finish("scale_channels", x.shape(), std::move(out), {x, gate}, [x, gate, planes, hw](std::span<const double> g, auto) {
    double* gx = grad_sink(x);
    double* gg = grad_sink(gate);
    const auto xv = x.data();
    const auto gv = gate.data();
    for (std::size_t p = 0; p < planes; ++p) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        if (gx) gx[p * hw + i] += g[p * hw + i] * gv[p];
        acc += g[p * hw + i] * xv[p * hw + i];
      }
      if (gg) gg[p] += acc;
    }
  });
}

// --- reductions and pooling ---------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return finish("sum", {}, {total}, {x}, [x](std::span<const double> g, auto) {
    if (double* gx = grad_sink(x))
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, int axis) {
  const auto& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size());
  const std::size_t n = s[ax];
  if (n == 0) throw ShapeError("mean over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const auto xv = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t in = 0; in < inner; ++in) out[o * inner + in] += xv[(o * n + k) * inner + in];
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= inv;
  Shape shape = s;
  shape.erase(shape.begin() + static_cast<long>(ax));
  return finish("mean_axis", std::move(shape), std::move(out), {x}, [x, outer, inner, n, inv](std::span<const double> g, auto) {
    if (double* gx = grad_sink(x)) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t in = 0; in < inner; ++in) gx[(o * n + k) * inner + in] += g[o * inner + in] * inv;
    }
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 4) throw ShapeError("max_pool2d: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (kernel == 0 || stride == 0) throw GeometryError("max_pool2d: kernel and stride must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel || w < kernel) {
    throw GeometryError("max_pool2d: kernel " + std::to_string(kernel) + " larger than input " + std::to_string(h) +
                        "x" + std::to_string(w) + " (computed H'=0)");
  }
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  const auto xv = x.data();
  std::vector<double> out(planes * ho * wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = xv.data() + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = (oy * stride + i) * w + ox * stride + j;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = plane[best];
        (*argmax)[o] = p * h * w + best;
      }
    }
  }
  return finish("max_pool2d", {x.dim(0), x.dim(1), ho, wo}, std::move(out), {x}, [x, argmax](std::span<const double> g, auto) {
    if (double* gx = grad_sink(x))
      for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
  });
}

Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 4) throw ShapeError("adaptive_avg_pool2d: expected [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == 0 || out_w == 0 || h < out_h || w < out_w) {
    throw GeometryError("adaptive_avg_pool2d: cannot pool " + std::to_string(h) + "x" + std::to_string(w) + " to " +
                        std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  // Bin i covers [floor(i*H/out), ceil((i+1)*H/out)).
  auto bounds = [](std::size_t i, std::size_t in, std::size_t out) {
    return std::pair{i * in / out, ((i + 1) * in + out - 1) / out};
  };
  const auto xv = x.data();
  std::vector<double> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto [y0, y1] = bounds(oy, h, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto [x0, x1] = bounds(ox, w, out_w);
        double acc = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) acc += xv[p * h * w + y * w + xx];
        out[(p * out_h + oy) * out_w + ox] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return finish("adaptive_avg_pool2d", {x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
                [x, planes, h, w, out_h, out_w, bounds](std::span<const double> g, auto) {
                  double* gx = grad_sink(x);
                  if (!gx) return;
                  for (std::size_t p = 0; p < planes; ++p) {
                    for (std::size_t oy = 0; oy < out_h; ++oy) {
                      const auto [y0, y1] = bounds(oy, h, out_h);
                      for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto [x0, x1] = bounds(ox, w, out_w);
                        const double share =
                            g[(p * out_h + oy) * out_w + ox] / static_cast<double>((y1 - y0) * (x1 - x0));
                        for (std::size_t y = y0; y < y1; ++y)
                          for (std::size_t xx = x0; xx < x1; ++xx) gx[p * h * w + y * w + xx] += share;
                      }
                    }
                  }
                });
}

// --- layout -------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return finish("reshape", std::move(shape), std::move(out), {x}, [x](std::span<const double> g, auto) {
    if (double* gx = grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& s = x.shape();
  const std::size_t r = s.size();
  if (order.size() != r) throw ShapeError("permute: order has wrong rank for " + shape_str(s));
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    if (o >= r || seen[o]) throw ShapeError("permute: invalid axis order");
    seen[o] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);  // input stride for each output axis
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[order[i]];
    src_stride[i] = in_strides[order[i]];
  }
  const std::size_t total = x.numel();
  auto mapping = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    (*mapping)[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  const auto xv = x.data();
  std::vector<double> out(total);
  for (std::size_t o = 0; o < total; ++o) out[o] = xv[(*mapping)[o]];
  return finish("permute", std::move(out_shape), std::move(out), {x}, [x, mapping](std::span<const double> g, auto) {
    if (double* gx = grad_sink(x))
      for (std::size_t o = 0; o < g.size(); ++o) gx[(*mapping)[o]] += g[o];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t ax = norm_axis(axis, first.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    total_axis += s[ax];
  }
  Shape shape = first;
  shape[ax] = total_axis;
  std::vector<double> out(outer * total_axis * inner);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.shape()[ax];
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<long>(o * n * inner), n * inner,
                  out.begin() + static_cast<long>((o * total_axis + offset) * inner));
    offset += n;
  }
  return finish("concat", std::move(shape), std::move(out), parts, [parts, ax, outer, inner, total_axis](std::span<const double> g, auto) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.shape()[ax];
      if (double* gp = grad_sink(p)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < n * inner; ++i) gp[o * n * inner + i] += g[(o * total_axis + offset) * inner + i];
      }
      offset += n;
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const auto& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size());
  if (begin > end || end > s[ax]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for axis of " +
                     std::to_string(s[ax]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax], len = end - begin;
  const auto xv = x.data();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<long>((o * n + begin) * inner), len * inner,
                out.begin() + static_cast<long>(o * len * inner));
  Shape shape = s;
  shape[ax] = len;
  return finish("slice", std::move(shape), std::move(out), {x}, [x, outer, inner, n, begin, len](std::span<const double> g, auto) {
    if (double* gx = grad_sink(x))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len * inner; ++i) gx[(o * n + begin) * inner + i] += g[o * len * inner + i];
  });
}

Tensor roll(const Tensor& x, int axis, long shift) {
  const auto& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  const long ln = static_cast<long>(n);
  const std::size_t sh = n == 0 ? 0 : static_cast<std::size_t>(((shift % ln) + ln) % ln);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t src = (k + n - sh) % n;
      std::copy_n(xv.begin() + static_cast<long>((o * n + src) * inner), inner,
                  out.begin() + static_cast<long>((o * n + k) * inner));
    }
  return finish("roll", s, std::move(out), {x}, [x, outer, inner, n, sh](std::span<const double> g, auto) {
    if (double* gx = grad_sink(x))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t src = (k + n - sh) % n;
          for (std::size_t i = 0; i < inner; ++i) gx[(o * n + src) * inner + i] += g[(o * n + k) * inner + i];
        }
  });
}

Tensor index_select(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (x.rank() < 1) throw ShapeError("index_select on a scalar");
  const std::size_t rows = x.dim(0);
  const std::size_t row = x.numel() / std::max<std::size_t>(rows, 1);
  for (auto i : indices) {
    if (i >= rows) throw ShapeError("index_select: index " + std::to_string(i) + " out of range " + std::to_string(rows));
  }
  const auto xv = x.data();
  std::vector<double> out(indices.size() * row);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(xv.begin() + static_cast<long>(indices[r] * row), row, out.begin() + static_cast<long>(r * row));
  Shape shape = x.shape();
  shape[0] = indices.size();
  return finish("index_select", std::move(shape), std::move(out), {x}, [x, indices, row](std::span<const double> g, auto) {
    if (double* gx = grad_sink(x))
      for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t i = 0; i < row; ++i) gx[indices[r] * row + i] += g[r * row + i];
  });
}

}  // namespace ff
