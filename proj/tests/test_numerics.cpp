#include <doctest.h>

#include <cmath>
#include <numeric>

#include "iskd/ops.hpp"
#include "support.hpp"

using namespace iskd;
using namespace iskd::testing;

TEST_CASE("matmul identity, zero and worked example") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(Tensor({2, 2}, {1, 0, 0, 1}), a) == a);
  CHECK(matmul(Tensor({3, 2}, 0.0f), a) == Tensor({3, 2}, 0.0f));

  const std::vector<double> expect = oracle_matmul({1, 2, 3, 4}, {5, 6, 7, 8}, 2, 2, 2);
  CHECK(expect == std::vector<double>{19, 22, 43, 50});
  const Tensor c = matmul(a, Tensor({2, 2}, {5, 6, 7, 8}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(c[i] == static_cast<float>(expect[i]));
}

TEST_CASE("matmul matches the naive oracle on random shapes") {
  SeededRng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(7), k = 1 + rng.below(7), n = 1 + rng.below(7);
    const Tensor64 a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    const auto want = oracle_matmul({a.data().begin(), a.data().end()},
                                    {b.data().begin(), b.data().end()}, m, k, n);
    const Tensor64 got = matmul(a, b);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes") {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul is associative within float32 tolerance") {
  SeededRng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), l = 1 + rng.below(5),
                      n = 1 + rng.below(5);
    const Tensor a = random_tensor<float>({m, k}, rng), b = random_tensor<float>({k, l}, rng),
                 c = random_tensor<float>({l, n}, rng);
    const Tensor left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) CHECK(std::abs(left[i] - right[i]) < 1e-4);
  }
}

TEST_CASE("matmul raises on non-finite results") {
  CHECK_THROWS_AS(matmul(Tensor({1, 1}, {1e30f}), Tensor({1, 1}, {1e30f})), NumericError);
}

TEST_CASE("conv2d trivial cases and the all-ones example") {
  SeededRng rng(3);
  const Tensor64 x = random_tensor({2, 4, 5}, rng);
  // 1x1 identity mix: filter f copies channel f.
  Tensor64 eye({2, 2, 1, 1});
  eye[0] = 1;
  eye[3] = 1;
  CHECK(conv2d(x, eye, 1, 0) == x);
  CHECK(conv2d(x, Tensor64({3, 2, 3, 3}), 1, 1) == Tensor64({3, 4, 5}));

  const Tensor64 ones({1, 5, 5}, 1.0), kernel({1, 1, 3, 3}, 1.0);
  const Tensor64 oracle = oracle_conv2d(ones, kernel, 1, 0);
  CHECK(oracle == Tensor64({1, 3, 3}, 9.0));
  CHECK(conv2d(ones, kernel, 1, 0) == oracle);
}

TEST_CASE("conv2d matches the sliding-window oracle") {
  SeededRng rng(8);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t c = 1 + rng.below(3), f = 1 + rng.below(3), k = 1 + rng.below(3);
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    std::size_t h = k + rng.below(5), w = k + rng.below(5);
    while ((h + 2 * pad - k) % stride) ++h;
    while ((w + 2 * pad - k) % stride) ++w;
    const Tensor64 x = random_tensor({c, h, w}, rng), kern = random_tensor({f, c, k, k}, rng);
    const Tensor64 want = oracle_conv2d(x, kern, stride, pad), got = conv2d(x, kern, stride, pad);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d with odd k and same padding preserves spatial size") {
  for (std::size_t k : {1, 3, 5, 7}) {
    const Tensor x({1, 9, 6}, 1.0f);
    const Tensor y = conv2d(x, Tensor({2, 1, k, k}, 0.5f), 1, (k - 1) / 2);
    CHECK(y.shape() == Shape{2, 9, 6});
  }
}

TEST_CASE("conv2d rejects non-integral output sizes") {
  CHECK_THROWS_AS(conv2d(Tensor({1, 6, 6}), Tensor({1, 1, 3, 3}), 2, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3}), 1, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(Tensor({2, 4, 4}), Tensor({1, 1, 3, 3}), 1, 0), DimensionError);
}

TEST_CASE("softmax examples") {
  const Tensor64 uniform = softmax(Tensor64({4}, 2.5));
  for (double p : uniform.data()) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor64 p = softmax(Tensor64({2}, {0.0, std::log(3.0)}));
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-15));

  SeededRng rng(2);
  const Tensor64 x = random_tensor({6}, rng);
  Tensor64 shifted = x;
  for (auto& v : shifted.data()) v += 17.25;
  const Tensor64 a = softmax(x), b = softmax(shifted);
  for (std::size_t i = 0; i < 6; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  CHECK_THROWS_AS(softmax(Tensor64({2}, {0.0, NAN})), NumericError);
}

TEST_CASE("softmax stays positive and normalized over wide inputs") {
  SeededRng rng(21);
  // float64 covers |x| <= 80: the smallest probability is about e^-160.
  for (int trial = 0; trial < 500; ++trial) {
    Tensor64 x({2 + rng.below(15)});
    for (auto& v : x.data()) v = rng.uniform(-80.0, 80.0);
    const Tensor64 p = softmax(x);
    double sum = 0;
    for (double v : p.data()) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
  // float32 underflows below ~e^-103, so positivity is checked to |x| <= 40.
  for (int trial = 0; trial < 500; ++trial) {
    Tensor x({2 + rng.below(15)});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-40.0, 40.0));
    const Tensor p = softmax(x);
    double sum = 0;
    for (float v : p.data()) {
      CHECK(v > 0.0f);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("randn is seeded and standard normal") {
  SeededRng a(42), b(42), c(43);
  const Tensor x = randn<float>({10, 10}, a);
  CHECK(bitwise_equal(x, randn<float>({10, 10}, b)));
  CHECK_FALSE(x == randn<float>({10, 10}, c));

  SeededRng rng(7);
  const Tensor64 big = randn<double>({100000}, rng);
  const double mean = std::accumulate(big.data().begin(), big.data().end(), 0.0) / big.size();
  double var = 0;
  for (double v : big.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (big.size() - 1));
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(sd - 1.0) < 0.02);
}

TEST_CASE("rng helpers") {
  SeededRng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.below(7) < 7);
  }
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[i] == i);

  CHECK(derive_seed(1, "init") == derive_seed(1, "init"));
  CHECK(derive_seed(1, "init") != derive_seed(1, "shuffle"));
  CHECK(derive_seed(1, "init") != derive_seed(2, "init"));
}

TEST_CASE("operations are bit-identical across repeated runs") {
  SeededRng rng(4);
  const Tensor a = random_tensor<float>({7, 9}, rng), b = random_tensor<float>({9, 5}, rng);
  CHECK(bitwise_equal(matmul(a, b), matmul(a, b)));
  const Tensor x = random_tensor<float>({3, 8, 8}, rng), k = random_tensor<float>({4, 3, 3, 3}, rng);
  CHECK(bitwise_equal(conv2d(x, k, 1, 1), conv2d(x, k, 1, 1)));
  CHECK(bitwise_equal(softmax_rows(a), softmax_rows(a)));
}

TEST_CASE("tensor construction contracts") {
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor t({2, 3});
  CHECK_THROWS_AS(t.reshape({4, 2}), DimensionError);
  t.reshape({3, 2});
  CHECK(t.shape() == Shape{3, 2});
  CHECK(shape_string({2, 3}) == "[2x3]");
}
