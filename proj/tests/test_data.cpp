#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "iskd/data.hpp"
#include "support.hpp"

using namespace iskd;
using namespace iskd::testing;

namespace {

struct IdxPair {
  std::filesystem::path images, labels;
};

IdxPair write_sample_idx(const std::string& name, std::size_t n, std::size_t rows = 3,
                         std::size_t cols = 4) {
  const auto dir = scratch_dir(name);
  std::vector<std::uint8_t> pixels(n * rows * cols), labels(n);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(i * 37 % 256);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>(i % 3);
  IdxPair p{dir / "images.idx", dir / "labels.idx"};
  write_idx(p.images, p.labels, pixels, rows, cols, labels);
  return p;
}

}  // namespace

TEST_CASE("load_idx reads a well-formed pair") {
  const IdxPair p = write_sample_idx("idx_ok", 10);
  const Dataset d = load_idx(p.images, p.labels, {0.0, 1.0});
  CHECK(d.size() == 10);
  CHECK(d.images.shape() == Shape{10, 1, 3, 4});
  CHECK(d.class_count == 3);
  CHECK(d.labels[4] == 1);
  CHECK(d.images[5] == doctest::Approx(5 * 37 % 256 / 255.0));
}

TEST_CASE("load_idx normalizes with the configured constants") {
  const auto dir = scratch_dir("idx_norm");
  const std::vector<std::uint8_t> pixels{255, 0}, labels{0, 1};
  write_idx(dir / "i", dir / "l", pixels, 1, 1, labels);
  const Dataset d = load_idx(dir / "i", dir / "l", {0.5, 0.5});
  CHECK(d.images[0] == 1.0f);
  CHECK(d.images[1] == -1.0f);
}

TEST_CASE("load_idx rejects corrupt files") {
  const IdxPair p = write_sample_idx("idx_bad", 10);
  const std::string img = read_file(p.images), lbl = read_file(p.labels);
  const auto dir = p.images.parent_path();
  const auto expect_reject = [&](const std::string& image_bytes, const std::string& label_bytes) {
    write_file(dir / "x_images", image_bytes);
    write_file(dir / "x_labels", label_bytes);
    CHECK_THROWS_AS(load_idx(dir / "x_images", dir / "x_labels"), FormatError);
  };
  std::string bad = img;
  bad[3] = 0x01;
  expect_reject(bad, lbl);  // image magic
  bad = lbl;
  bad[3] = 0x03;
  expect_reject(img, bad);  // label magic
  expect_reject(img.substr(0, img.size() - 1), lbl);
  expect_reject(img.substr(0, 10), lbl);
  expect_reject(img, lbl.substr(0, lbl.size() - 2));
  expect_reject(img + "z", lbl);
  expect_reject("", lbl);

  const IdxPair fewer = write_sample_idx("idx_fewer", 9);
  CHECK_THROWS_AS(load_idx(p.images, fewer.labels), FormatError);
  CHECK_THROWS_AS(load_idx(dir / "missing", p.labels), FormatError);
}

TEST_CASE("synth_pothole is seeded, balanced and shaped") {
  const Dataset a = synth_pothole(100, 16, 3), b = synth_pothole(100, 16, 3), c = synth_pothole(100, 16, 4);
  CHECK(bitwise_equal(a.images, b.images));
  CHECK(a.labels == b.labels);
  CHECK_FALSE(a.images == c.images);
  CHECK(a.images.shape() == Shape{100, 1, 16, 16});
  CHECK(std::count(a.labels.begin(), a.labels.end(), 1) == 50);
  CHECK(a.class_count == 2);
  CHECK_NOTHROW(a.validate());
  CHECK_THROWS_AS(synth_pothole(99, 16, 1), ConfigError);
}

TEST_CASE("synth_pothole is not solved by a brightness threshold") {
  // Nor is it hopeless: mean brightness alone must already beat chance.
  const Dataset pool = synth_pothole(6000, 16, 7);
  const auto [train, test] = split_7_3(pool, 1);
  const auto darkness = [](const Dataset& d, std::size_t i) {
    const auto px = d.images.row(i);
    return -std::accumulate(px.begin(), px.end(), 0.0);
  };
  std::vector<std::pair<double, int>> scored;
  for (std::size_t i = 0; i < train.size(); ++i) scored.emplace_back(darkness(train, i), train.labels[i]);
  std::sort(scored.begin(), scored.end());
  // Predict 1 above the threshold; pick the threshold with the best train accuracy.
  std::size_t ones_above = std::count_if(scored.begin(), scored.end(), [](auto& s) { return s.second == 1; });
  std::size_t zeros_below = 0, best = ones_above;
  double threshold = scored.front().first - 1;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].second == 1) {
      --ones_above;
    } else {
      ++zeros_below;
    }
    if (zeros_below + ones_above > best) {
      best = zeros_below + ones_above;
      threshold = scored[i].first;
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += (darkness(test, i) > threshold) == (test.labels[i] == 1);
  const double acc = 100.0 * correct / test.size();
  CHECK(acc > 70.0);
  CHECK(acc < 85.0);
}

TEST_CASE("7:3 split sizes and determinism") {
  const auto s = split_indices_7_3(100, 5);
  CHECK(s.train.size() == 70);
  CHECK(s.test.size() == 30);
  const auto again = split_indices_7_3(100, 5);
  CHECK(s.train == again.train);
  CHECK(s.test == again.test);
  CHECK(split_indices_7_3(100, 6).train != s.train);
  CHECK_THROWS_AS(split_indices_7_3(9, 1), ConfigError);

  const Dataset pool = synth_pothole(20, 8, 1);
  const auto [tr, te] = split_7_3(pool, 2);
  CHECK(tr.size() == 14);
  CHECK(te.size() == 6);
}

TEST_CASE("7:3 split partitions for random sizes and seeds") {
  SeededRng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 10 + rng.below(500);
    const auto s = split_indices_7_3(n, rng.next_u64());
    // round(0.7 n) with halves rounded up
    CHECK(s.train.size() == (7 * n + 5) / 10);
    CHECK(s.train.size() + s.test.size() == n);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(n);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(all == expect);
    CHECK(std::is_sorted(s.train.begin(), s.train.end()));
    CHECK(std::is_sorted(s.test.begin(), s.test.end()));
  }
}

TEST_CASE("batches cover every index and depend only on seed and epoch") {
  const BatchPlan plan{4, 17, false};
  const auto b = batches(10, plan, 0);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 4);
  CHECK(b[2].size() == 2);
  CHECK(batches(10, plan, 0) == b);
  CHECK(batches(10, plan, 1) != b);
  CHECK(batches(10, {4, 17, true}, 0).size() == 2);
  CHECK_THROWS_AS(batches(10, {0, 1, false}, 0), ConfigError);

  SeededRng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    const BatchPlan p{1 + rng.below(64), rng.next_u64(), false};
    std::vector<std::size_t> seen;
    for (const auto& slice : batches(n, p, rng.below(50))) seen.insert(seen.end(), slice.begin(), slice.end());
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> expect(n);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(seen == expect);
  }
}

TEST_CASE("gather and subset preserve order and labels") {
  const Dataset d = synth_pothole(20, 8, 2);
  const std::vector<std::size_t> idx{5, 2, 9};
  const auto [x, y] = d.gather(idx);
  CHECK(x.shape() == Shape{3, 1, 8, 8});
  CHECK(y == std::vector<int>{1, 0, 1});
  for (std::size_t j = 0; j < 64; ++j) CHECK(x[64 + j] == d.images[2 * 64 + j]);
  const Dataset s = d.subset(idx);
  CHECK(s.labels == y);
  CHECK(s.images == x);
}

TEST_CASE("dataset validation") {
  Dataset d = synth_pothole(10, 8, 1);
  d.labels[0] = 5;
  CHECK_THROWS_AS(d.validate(), FormatError);
  d = synth_pothole(10, 8, 1);
  d.images[3] = NAN;
  CHECK_THROWS_AS(d.validate(), FormatError);
}
