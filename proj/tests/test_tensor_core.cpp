#include <doctest.h>

#include <cmath>
#include <numbers>

#include "forensicflow/error.hpp"
#include "forensicflow/gradcheck.hpp"
#include "forensicflow/ops.hpp"
#include "support.hpp"

using namespace ff;
using support::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_SUITE("tensor_core") {

TEST_CASE("matmul small products") {
  const auto m = Tensor::of({2, 2}, {1, 2, 3, 4});
  CHECK(values(matmul(Tensor::of({2, 2}, {1, 0, 0, 1}), m)) == std::vector<double>{1, 2, 3, 4});
  CHECK(values(matmul(Tensor::of({2, 2}, {1, 0, 0, 0}), Tensor::of({2, 2}, {5, 6, 7, 8}))) ==
        std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape error names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("conv2d of ones sums the window") {
  const auto y = conv2d(Tensor::ones({1, 1, 3, 3}), Tensor::ones({1, 1, 3, 3}), Tensor{});
  REQUIRE(y.numel() == 1);
  CHECK(y.item() == 9.0);
}

TEST_CASE("conv2d delta kernel with padding is the identity") {
  Rng rng(3);
  const auto x = random_tensor(rng, {2, 1, 5, 6});
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  PrecisionScope f64(Precision::f64);
  CHECK(values(conv2d(x, Tensor({1, 1, 3, 3}, k), Tensor{}, {1, 1, 1})) == values(x));
}

TEST_CASE("conv2d matches the naive loop oracle") {
  PrecisionScope f64(Precision::f64);
  struct Case {
    std::size_t n, c, h, w, f, k, stride, pad, groups;
  };
  const Case cases[] = {{2, 4, 8, 8, 6, 3, 1, 1, 1}, {1, 3, 8, 8, 4, 4, 4, 0, 1}, {2, 4, 6, 6, 4, 7, 1, 3, 4},
                        {1, 4, 5, 7, 6, 3, 2, 1, 2}, {3, 2, 4, 4, 2, 1, 1, 0, 1}};
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto& cs = cases[trial % 5];
    const auto x = random_tensor(rng, {cs.n, cs.c, cs.h, cs.w});
    const auto wt = random_tensor(rng, {cs.f, cs.c / cs.groups, cs.k, cs.k});
    const auto b = random_tensor(rng, {cs.f});
    const auto y = conv2d(x, wt, b, {cs.stride, cs.pad, cs.groups});
    const auto ref = support::naive_conv2d(values(x), cs.n, cs.c, cs.h, cs.w, values(wt), cs.f, cs.k, cs.k, values(b),
                                           cs.stride, cs.pad, cs.groups);
    REQUIRE(y.numel() == ref.size());
    CHECK(support::max_abs_diff(y.data(), ref) < 1e-5);
  }
}

TEST_CASE("conv2d gradients match finite differences of the naive oracle") {
  Rng rng(12);
  const auto x = random_tensor(rng, {2, 4, 8, 8});
  const auto wt = random_tensor(rng, {6, 4, 3, 3});
  const auto b = random_tensor(rng, {6});
  const auto r = random_tensor(rng, {2, 6, 8, 8}, -1, 1);
  Tape tape(Precision::f64);
  std::vector<Tensor> leaves{x.detach(), wt.detach(), b.detach()};
  {
    TapeScope scope(tape);
    for (auto& l : leaves) l.set_requires_grad(true);
    tape.backward(sum(mul(conv2d(leaves[0], leaves[1], leaves[2], {1, 1, 1}), r)));
  }
  auto oracle_loss = [&](const std::vector<std::vector<double>>& v) {
    const auto y = support::naive_conv2d(v[0], 2, 4, 8, 8, v[1], 6, 3, 3, v[2], 1, 1, 1);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  std::vector<std::vector<double>> vals{values(x), values(wt), values(b)};
  for (std::size_t t = 0; t < 3; ++t) {
    const auto g = leaves[t].grad();
    for (std::size_t j = 0; j < vals[t].size(); j += 7) {
      const double orig = vals[t][j];
      vals[t][j] = orig + 1e-4;
      const double up = oracle_loss(vals);
      vals[t][j] = orig - 1e-4;
      const double down = oracle_loss(vals);
      vals[t][j] = orig;
      const double fd = (up - down) / 2e-4;
      CHECK(g[j] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("conv2d geometry error reports the output size") {
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor{}), GeometryError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 1, 3, 3}), Tensor{}, {1, 1, 2}), ShapeError);
}

TEST_CASE("softmax values and invariants") {
  PrecisionScope f64(Precision::f64);
  const auto u = softmax(Tensor::of({3}, {0, 0, 0}));
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto s = softmax(Tensor::of({3}, {0, std::log(2.0), std::log(3.0)}));
  CHECK(s[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
  CHECK(s[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));

  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_tensor(rng, {4, 7}, -30, 30);
    const double c = rng.uniform(-100, 100);
    const auto a = softmax(x, 1);
    const auto b = softmax(add_scalar(x, c), 1);
    for (std::size_t row = 0; row < 4; ++row) {
      double total = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(a[row * 7 + j] >= 0.0);
        total += a[row * 7 + j];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    CHECK(support::max_abs_diff(a.data(), b.data()) < 1e-9);
  }
}

TEST_CASE("layer_norm examples") {
  PrecisionScope f64(Precision::f64);
  const auto z = layer_norm(Tensor::full({5}, 2.5), Tensor::ones({5}), Tensor::zeros({5}));
  for (double v : z.data()) CHECK(v == 0.0);
  const auto y = layer_norm(Tensor::of({2}, {1, 3}), Tensor::ones({2}), Tensor::zeros({2}), 1e-12);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("elementwise examples") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(gelu(Tensor::scalar(0)).item() == 0.0);
  Tape tape(Precision::f64);
  TapeScope scope(tape);
  auto x = Tensor::scalar(-2.0);
  x.set_requires_grad(true);
  const auto y = relu(x);
  CHECK(y.item() == 0.0);
  tape.backward(y);
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("log rejects non-positive input") {
  CHECK_THROWS_AS(log(Tensor::of({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log(Tensor::of({1}, {-1.0})), DomainError);
}

TEST_CASE("broadcasting is limited to scalars and trailing suffixes") {
  CHECK(add(Tensor::zeros({2, 3}), Tensor::ones({3})).shape() == Shape{2, 3});
  CHECK(add(Tensor::zeros({2, 3}), Tensor::ones({1})).shape() == Shape{2, 3});
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::ones({2})), ShapeError);
  CHECK_THROWS_AS(mul(Tensor::zeros({2, 3}), Tensor::ones({2, 1})), ShapeError);
}

TEST_CASE("pooling examples and max tie-break") {
  const auto p = adaptive_avg_pool2d(Tensor::ones({1, 3, 4, 4}));
  CHECK(values(p) == std::vector<double>{1, 1, 1});
  CHECK(max_pool2d(Tensor::of({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2).item() == 4.0);

  Tape tape(Precision::f64);
  TapeScope scope(tape);
  auto x = Tensor::of({1, 1, 2, 2}, {5, 5, 0, 0});
  x.set_requires_grad(true);
  tape.backward(sum(max_pool2d(x, 2, 2)));
  CHECK(values(Tensor({4}, {x.grad().begin(), x.grad().end()})) == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("adaptive pooling to one cell equals the spatial mean") {
  PrecisionScope f64(Precision::f64);
  Rng rng(8);
  const auto x = random_tensor(rng, {2, 3, 5, 7});
  const auto p = adaptive_avg_pool2d(x);
  const auto m = mean(reshape(x, {2, 3, 35}), 2);
  CHECK(support::max_abs_diff(p.data(), m.data()) < 1e-12);
}

TEST_CASE("rfft2_magnitude of a constant has only the DC bin") {
  PrecisionScope f64(Precision::f64);
  const double c = 0.7;
  const auto m = rfft2_magnitude(Tensor::full({8, 8}, c));
  for (std::size_t i = 0; i < 64; ++i) {
    if (i == 4 * 8 + 4) CHECK(m[i] == doctest::Approx(64 * c).epsilon(1e-12));
    else CHECK(std::abs(m[i]) < 1e-12);
  }
}

TEST_CASE("rfft2_magnitude of a horizontal stripe has two symmetric peaks") {
  PrecisionScope f64(Precision::f64);
  std::vector<double> px(32 * 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) px[y * 32 + x] = std::cos(2 * std::numbers::pi * 4 * x / 32.0);
  const auto m = rfft2_magnitude(Tensor({32, 32}, px));
  const auto ref = support::naive_dft_magnitude(px, 32, 32);
  CHECK(support::max_abs_diff(m.data(), ref) < 1e-9);
  CHECK(m[16 * 32 + 16 + 4] == doctest::Approx(512.0).epsilon(1e-9));
  CHECK(m[16 * 32 + 16 - 4] == doctest::Approx(512.0).epsilon(1e-9));
  double rest = 0;
  for (std::size_t i = 0; i < px.size(); ++i)
    if (i != 16 * 32 + 20 && i != 16 * 32 + 12) rest = std::max(rest, m[i]);
  CHECK(rest < 1e-9);
}

TEST_CASE("rfft2_magnitude matches a naive DFT on 16x16 inputs") {
  PrecisionScope f64(Precision::f64);
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor(rng, {16, 16});
    const auto m = rfft2_magnitude(x);
    const auto ref = support::naive_dft_magnitude(values(x), 16, 16);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(std::abs(m[i] - ref[i]) <= 1e-4 * std::max(1.0, std::abs(ref[i])));
    }
  }
}

TEST_CASE("rfft2_magnitude satisfies Parseval") {
  PrecisionScope f64(Precision::f64);
  Rng rng(22);
  for (std::size_t side : {8u, 16u, 32u}) {
    const auto x = random_tensor(rng, {side, side});
    const auto m = rfft2_magnitude(x);
    double spec = 0, px = 0;
    for (double v : m.data()) spec += v * v;
    for (double v : x.data()) px += v * v;
    CHECK(std::abs(spec / static_cast<double>(side * side) - px) / px < 1e-4);
  }
}

TEST_CASE("rfft2_magnitude rejects sizes that are not powers of two") {
  CHECK_THROWS_AS(rfft2_magnitude(Tensor::zeros({12, 16})), GeometryError);
}

TEST_CASE("backward examples") {
  Tape tape(Precision::f64);
  TapeScope scope(tape);
  auto x = Tensor::zeros({2, 2});
  x.set_requires_grad(true);
  tape.backward(sum(x));
  CHECK(values(Tensor({4}, {x.grad().begin(), x.grad().end()})) == std::vector<double>{1, 1, 1, 1});

  auto v = Tensor::of({2}, {1, 2});
  v.set_requires_grad(true);
  tape.backward(sum(mul(v, v)));
  CHECK(v.grad()[0] == 2.0);
  CHECK(v.grad()[1] == 4.0);
}

TEST_CASE("gradients accumulate for a tensor used twice") {
  Tape tape(Precision::f64);
  TapeScope scope(tape);
  auto w = Tensor::of({2}, {3, -1});
  w.set_requires_grad(true);
  tape.backward(add(sum(scale(w, 2.0)), sum(mul(w, w))));
  CHECK(w.grad()[0] == 2.0 + 6.0);
  CHECK(w.grad()[1] == 2.0 - 2.0);
}

TEST_CASE("untracked leaves receive no gradient") {
  Tape tape(Precision::f64);
  TapeScope scope(tape);
  auto a = Tensor::of({2}, {1, 2});
  auto frozen = Tensor::of({2}, {3, 4});
  a.set_requires_grad(true);
  tape.backward(sum(mul(a, frozen)));
  CHECK(a.has_grad());
  CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("backward without a tape is a usage error") {
  const auto x = Tensor::of({2}, {1, 2});
  CHECK_THROWS_AS(backward(sum(x)), UsageError);
}

TEST_CASE("f32 mode rounds op results to binary32") {
  const auto x = Tensor::of({1}, {0.1});
  const auto y = scale(x, 3.0);
  CHECK(y[0] == static_cast<double>(static_cast<float>(0.1 * 3.0)));
  PrecisionScope f64(Precision::f64);
  CHECK(scale(x, 3.0)[0] == 0.1 * 3.0);
}

TEST_CASE("replaying a seeded forward and backward is bitwise identical") {
  auto run = [] {
    Rng rng(99);
    auto w = random_tensor(rng, {4, 4, 3, 3});
    const auto x = random_tensor(rng, {2, 4, 6, 6});
    Tape tape;
    TapeScope scope(tape);
    w.set_requires_grad(true);
    const auto h = gelu(conv2d(x, w, Tensor{}, {1, 1, 1}));
    tape.backward(mean(softmax(reshape(h, {2, 144}), 1)));
    return values(Tensor(w.shape(), {w.grad().begin(), w.grad().end()}));
  };
  CHECK(run() == run());
}

TEST_CASE("every op passes the finite-difference suite") {
  for (const auto& r : op_gradcheck_suite(1)) {
    INFO(r.name << " worst " << r.worst << " err " << r.max_error);
    CHECK(r.passed());
  }
}

TEST_CASE("end-to-end gradients of the tiny model pass") {
  const auto r = model_gradcheck(1);
  INFO("worst " << r.worst << " err " << r.max_error);
  CHECK(r.passed());
  CHECK(r.coords > 100);
}

}  // TEST_SUITE
