#include "daam/common.hpp"
#include "daam/numerics.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace daam;

TEST_CASE("finite differences of simple functions") {
  auto sq = [](std::span<const double> t) { return t[0] * t[0]; };
  std::vector<double> x{3.0};
  CHECK(finite_diff_grad(sq, x)[0] == doctest::Approx(6.0).epsilon(1e-6));

  auto sine = [](std::span<const double> t) { return std::sin(t[0]); };
  std::vector<double> z{0.0};
  CHECK(std::abs(finite_diff_grad(sine, z)[0] - 1.0) < 1e-6);
}

TEST_CASE("finite differences match analytic cubic gradients") {
  Rng rng(99, 1);
  for (int trial = 0; trial < 20; ++trial) {
    // f(x, y) = a x^3 + b x^2 y + c y^3 + d x y + e
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), c = rng.uniform(-2, 2), d = rng.uniform(-2, 2);
    auto f = [&](std::span<const double> t) {
      const double x = t[0], y = t[1];
      return a * x * x * x + b * x * x * y + c * y * y * y + d * x * y + 0.5;
    };
    std::vector<double> p{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const double x = p[0], y = p[1];
    std::vector<double> analytic{3 * a * x * x + 2 * b * x * y + d * y, b * x * x + 3 * c * y * y + d * x};
    const auto fd = finite_diff_grad(f, p);
    CHECK(relative_error(analytic, fd, 1e-7) < 1e-4);
  }
}

TEST_CASE("non-finite objective names the coordinate") {
  auto f = [](std::span<const double> t) { return t[1] > 1.0 ? std::nan("") : t[0]; };
  std::vector<double> p{0.0, 1.0};
  try {
    finite_diff_grad(f, p);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
}

TEST_CASE("relative error uses the largest magnitude as scale") {
  std::vector<double> a{1.0, 2.0}, b{1.0, 2.1};
  CHECK(relative_error(a, b, 1e-7) == doctest::Approx(0.1 / 2.1));
  std::vector<double> z{0.0}, w{1e-9};
  CHECK(relative_error(z, w, 1e-7) == doctest::Approx(1e-2));
}

TEST_CASE("seeded streams are reproducible and distinct") {
  Rng a(42, 5), b(42, 5), c(42, 6), d(43, 5);
  bool differs_stream = false, differs_seed = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    REQUIRE(x == b.next_u64());
    differs_stream |= x != c.next_u64();
    differs_seed |= x != d.next_u64();
  }
  CHECK(differs_stream);
  CHECK(differs_seed);
}

TEST_CASE("uniform draws have mean near one half") {
  Rng rng(7, 0);
  double sum = 0.0;
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    sum += u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(std::abs(sum / 1e5 - 0.5) < 0.01);
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
}

TEST_CASE("normal draws have unit variance") {
  Rng rng(3, 9);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.02);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("below covers its range without bias") {
  Rng rng(1, 2);
  std::vector<int> counts(6, 0);
  for (int i = 0; i < 60000; ++i) counts[rng.below(6)]++;
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(5, 5);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  rng.shuffle(v);
  CHECK(std::set<int>(v.begin(), v.end()).size() == 50);
  bool moved = false;
  for (int i = 0; i < 50; ++i) moved |= v[i] != i;
  CHECK(moved);
}

TEST_CASE("stream keys separate their parts") {
  CHECK(stream_key({1, 2}) != stream_key({2, 1}));
  CHECK(stream_key({1, 2}) != stream_key({1, 2, 0}));
  CHECK(stream_key({4, 9}) == stream_key({4, 9}));
}

TEST_CASE("softplus helpers") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(50.0) == 50.0);
  CHECK(softplus(-50.0) == doctest::Approx(std::exp(-50.0)));
  for (double y : {1e-6, 0.5, 1.0, 3.0, 40.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(800.0) == 1.0);
}
