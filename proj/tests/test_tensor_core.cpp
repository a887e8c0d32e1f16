#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ddsm/io.hpp"
#include "ddsm/nn.hpp"
#include "support.hpp"

using namespace ddsm;
using ddsm::test::input_grad_error;
using ddsm::test::random_tensor;

TEST_CASE("tensor shape checks and arithmetic") {
  Tensor a({2, 3}, 1.0);
  Tensor b({2, 3}, 2.0);
  CHECK((a + b)[5] == 3.0);
  CHECK((b - a)[0] == 1.0);
  CHECK((a * 4.0)[2] == 4.0);
  CHECK_THROWS_AS(a + Tensor({3, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(a.reshaped({4}), ShapeError);
  CHECK(a.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("concat and split channels round trip") {
  Rng rng(1);
  const Tensor a = random_tensor(rng, {2, 3, 4});
  const Tensor b = random_tensor(rng, {3, 3, 4});
  const Tensor cat = concat_channels(a, b);
  CHECK(cat.dim(0) == 5);
  auto [x, y] = split_channels(cat, 2);
  CHECK(x == a);
  CHECK(y == b);
}

TEST_CASE("conv1x1 matches the oracle and is linear") {
  Rng rng(2);
  LinearMap m = init_linear(rng, 3, 4);
  const Tensor u = random_tensor(rng, {3, 5, 5});
  const Tensor v = random_tensor(rng, {3, 5, 5});
  CHECK(max_abs_diff(conv1x1(u, m), oracle::conv1x1(u, m)) < 1e-14);
  const Tensor combo = u * 2.0 + v * -3.0;
  const Tensor lhs = conv1x1(combo, m);
  const Tensor rhs = conv1x1(u, m) * 2.0 + conv1x1(v, m) * -3.0;
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
  CHECK_THROWS_AS(conv1x1(Tensor({2, 5, 5}), m), ShapeError);
}

TEST_CASE("avg_pool_to examples") {
  Tensor ones({2, 5, 7}, 3.25);
  Tensor pooled = avg_pool_to(ones, 3);
  for (double v : pooled.data()) CHECK(v == doctest::Approx(3.25).epsilon(1e-15));

  Rng rng(3);
  const Tensor r = random_tensor(rng, {2, 4, 4});
  CHECK(avg_pool_to(r, 4) == r);

  Tensor seq({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) seq[i] = static_cast<double>(i + 1);
  const Tensor p = avg_pool_to(seq, 2);
  CHECK(p(0, 0, 0) == 3.5);
  CHECK(p(0, 0, 1) == 5.5);
  CHECK(p(0, 1, 0) == 11.5);
  CHECK(p(0, 1, 1) == 13.5);

  CHECK_THROWS(avg_pool_to(seq, 5));
}

TEST_CASE("avg_pool_to preserves the mean for even partitions") {
  Rng rng(4);
  const Tensor r = random_tensor(rng, {1, 6, 6});
  const Tensor p = avg_pool_to(r, 3);
  double m1 = 0.0, m2 = 0.0;
  for (double v : r.data()) m1 += v / 36.0;
  for (double v : p.data()) m2 += v / 9.0;
  CHECK(m1 == doctest::Approx(m2).epsilon(1e-13));
}

TEST_CASE("bilinear_resize examples") {
  Rng rng(5);
  const Tensor r = random_tensor(rng, {2, 3, 4});
  CHECK(bilinear_resize(r, 3, 4) == r);
  CHECK(max_abs_diff(bilinear_resize(r, 5, 7), oracle::resize_align_corners(r, 5, 7)) < 1e-14);

  Tensor c({1, 4, 4}, -1.5);
  const Tensor up = bilinear_resize(c, 7, 3);
  for (double v : up.data()) CHECK(v == doctest::Approx(-1.5).epsilon(1e-15));
  const Tensor down_up = bilinear_resize(bilinear_resize(c, 2, 2), 4, 4);
  CHECK(max_abs_diff(down_up, c) < 1e-15);

  Tensor m({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(bilinear_resize(m, 3, 3)(0, 1, 1) == 2.5);
  CHECK(bilinear_resize(m, 1, 1)(0, 0, 0) == 1.0);
}

TEST_CASE("softmax examples and shift invariance") {
  const auto w = softmax(std::vector<double>{0, 0, 0});
  for (double v : w) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(softmax(std::vector<double>{4.2})[0] == 1.0);

  const auto s = softmax(std::vector<double>{1, 2, 3});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - std::exp(i + 1.0) / z) < 1e-15);
  CHECK(std::abs(s[0] + s[1] + s[2] - 1.0) < 1e-12);

  const auto t = softmax(std::vector<double>{101, 102, 103});
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - t[i]) < 1e-12);

  CHECK_THROWS(softmax(std::vector<double>{}));
  CHECK_THROWS(softmax(std::vector<double>{1.0, NAN}));
  CHECK_THROWS(softmax(std::vector<double>{INFINITY}));
}

TEST_CASE("init_linear bounds and determinism") {
  Rng a(9), b(9);
  const LinearMap x = init_linear(a, 4, 6);
  const LinearMap y = init_linear(b, 4, 6);
  CHECK(x.weight == y.weight);
  CHECK(x.bias == y.bias);
  for (double v : x.weight.data()) CHECK(std::abs(v) <= 0.5);
  for (double v : x.bias.data()) CHECK(v == 0.0);
}

TEST_CASE("rng mapping is fixed") {
  Rng rng(123);
  std::mt19937_64 ref(123);
  CHECK(rng.uniform() == static_cast<double>(ref() >> 11) * 0x1.0p-53);
  Rng r2(5);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double n = r2.normal();
    sum += n;
    sq += n * n;
  }
  CHECK(std::abs(sum / 20000) < 0.03);
  CHECK(std::abs(sq / 20000 - 1.0) < 0.05);
}

TEST_CASE("every forward op has a matching adjoint") {
  Rng rng(10);
  SUBCASE("conv1x1") {
    LinearMap m = init_linear(rng, 3, 2);
    m.bias = random_tensor(rng, {2});
    const Tensor x = random_tensor(rng, {3, 4, 5});
    const Tensor u = random_tensor(rng, {2, 4, 5});
    LinearMap g{Tensor({2, 3}), Tensor({2})};
    const Tensor gx = conv1x1_backward(u, x, m, g);
    CHECK(input_grad_error(gx, [&](const Tensor& t) { return conv1x1(t, m); }, u, x) <= 1e-6);
    auto fw = [&](const Tensor& w) {
      LinearMap mm = m;
      mm.weight = w;
      return conv1x1(x, mm);
    };
    CHECK(input_grad_error(g.weight, fw, u, m.weight) <= 1e-6);
    auto fb = [&](const Tensor& b) {
      LinearMap mm = m;
      mm.bias = b;
      return conv1x1(x, mm);
    };
    CHECK(input_grad_error(g.bias, fb, u, m.bias) <= 1e-6);
  }
  SUBCASE("conv3x3 with dilation") {
    for (std::size_t dil : {1u, 2u}) {
      Conv3x3 c = init_conv3x3(rng, 2, 3, dil);
      c.bias = random_tensor(rng, {3});
      const Tensor x = random_tensor(rng, {2, 5, 6});
      const Tensor u = random_tensor(rng, {3, 5, 6});
      Conv3x3 g{Tensor(c.weight.shape()), Tensor(c.bias.shape()), dil};
      const Tensor gx = conv3x3_backward(u, x, c, g);
      CHECK(max_abs_diff(conv3x3(x, c), oracle::conv3x3_replicate(x, c)) < 1e-13);
      CHECK(input_grad_error(gx, [&](const Tensor& t) { return conv3x3(t, c); }, u, x) <= 1e-6);
      auto fw = [&](const Tensor& w) {
        Conv3x3 cc = c;
        cc.weight = w;
        return conv3x3(x, cc);
      };
      CHECK(input_grad_error(g.weight, fw, u, c.weight) <= 1e-6);
    }
  }
  SUBCASE("avg_pool_to") {
    const Tensor x = random_tensor(rng, {2, 5, 7});
    const Tensor u = random_tensor(rng, {2, 3, 3});
    const Tensor gx = avg_pool_to_backward(u, x.shape());
    CHECK(input_grad_error(gx, [&](const Tensor& t) { return avg_pool_to(t, 3); }, u, x) <= 1e-6);
  }
  SUBCASE("bilinear_resize") {
    const Tensor x = random_tensor(rng, {2, 3, 4});
    const Tensor u = random_tensor(rng, {2, 7, 5});
    const Tensor gx = bilinear_resize_backward(u, x.shape());
    CHECK(input_grad_error(gx, [&](const Tensor& t) { return bilinear_resize(t, 7, 5); }, u, x) <= 1e-6);
  }
  SUBCASE("softmax") {
    const Tensor z = random_tensor(rng, {6});
    const Tensor u = random_tensor(rng, {6});
    const auto w = softmax(z.values());
    const auto gz = softmax_backward(w, u.values());
    auto f = [&](const Tensor& t) { return Tensor({6}, softmax(t.values())); };
    CHECK(input_grad_error(Tensor({6}, gz), f, u, z) <= 1e-6);
  }
  SUBCASE("relu away from zero") {
    Tensor x = random_tensor(rng, {1, 4, 4});
    for (auto& v : x.data())
      if (std::abs(v) < 0.01) v = 0.5;
    const Tensor u = random_tensor(rng, {1, 4, 4});
    CHECK(input_grad_error(relu_backward(u, x), [](const Tensor& t) { return relu(t); }, u, x) <= 1e-6);
  }
}

TEST_CASE("finite differences of a quadratic") {
  Rng rng(11);
  const Tensor x = random_tensor(rng, {10});
  const Tensor g = oracle::finite_diff_grad(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v * v;
        return s;
      },
      x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(g[i] - 2.0 * x[i]) < 1e-9);
  CHECK_THROWS_AS(oracle::finite_diff_grad([](const Tensor& t) { return t[0] > 0 ? NAN : 0.0; }, Tensor({1})),
                  std::runtime_error);
}

TEST_CASE("tensor text format round-trips bitwise") {
  Rng rng(12);
  Tensor t = random_tensor(rng, {2, 3, 4});
  t[0] = 1.0 / 3.0;
  t[1] = -0.0;
  t[2] = 1e-300;
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(ss.str().rfind("shape: 2 3 4\n", 0) == 0);
  CHECK(read_tensor(ss) == t);
  std::stringstream bad("shape: 2\n1.0\n");
  CHECK_THROWS(read_tensor(bad));
}
