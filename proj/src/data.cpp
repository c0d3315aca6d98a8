#include "iskd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "iskd/rng.hpp"

namespace iskd {

Shape Dataset::sample_shape() const {
  return Shape(images.shape().begin() + 1, images.shape().end());
}

void Dataset::validate() const {
  if (labels.empty()) throw FormatError("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw FormatError("dataset images " + shape_string(images.shape()) + " do not match " +
                      std::to_string(labels.size()) + " labels");
  }
  if (class_count < 2) throw FormatError("dataset needs at least 2 classes");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw FormatError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(class_count) + ")");
    }
  }
  if (!images.all_finite()) throw FormatError("dataset contains non-finite pixels");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  auto [batch, batch_labels] = gather(indices);
  return Dataset{std::move(batch), std::move(batch_labels), class_count, provenance};
}

std::pair<Tensor, std::vector<int>> Dataset::gather(std::span<const std::size_t> indices) const {
  Shape shape = images.shape();
  shape[0] = indices.size();
  Tensor batch(shape);
  std::vector<int> batch_labels(indices.size());
  const std::size_t stride = images.size() / images.dim(0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = images.row(indices[i]);
    std::copy(src.begin(), src.end(), batch.raw() + i * stride);
    batch_labels[i] = labels[indices[i]];
  }
  return {std::move(batch), std::move(batch_labels)};
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& file) {
  if (bytes.size() < offset + 4) throw FormatError(file + ": truncated IDX header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 Normalization norm, std::size_t class_count) {
  const std::string img_name = images_path.string(), lbl_name = labels_path.string();
  const std::string img = read_file(images_path);
  const std::string lbl = read_file(labels_path);

  if (read_be32(img, 0, img_name) != kImageMagic) throw FormatError(img_name + ": bad IDX image magic");
  if (read_be32(lbl, 0, lbl_name) != kLabelMagic) throw FormatError(lbl_name + ": bad IDX label magic");
  const std::size_t n = read_be32(img, 4, img_name);
  const std::size_t rows = read_be32(img, 8, img_name);
  const std::size_t cols = read_be32(img, 12, img_name);
  const std::size_t n_labels = read_be32(lbl, 4, lbl_name);
  if (n != n_labels) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(img_name + ": empty IDX image file");
  if (img.size() != 16 + n * rows * cols) throw FormatError(img_name + ": IDX image payload truncated or oversized");
  if (lbl.size() != 8 + n) throw FormatError(lbl_name + ": IDX label payload truncated or oversized");
  if (!(norm.std > 0.0)) throw ConfigError("normalization std must be positive", "dataset.std");

  Dataset ds;
  ds.images = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) {
    const double px = static_cast<unsigned char>(img[16 + i]) / 255.0;
    ds.images[i] = static_cast<float>((px - norm.mean) / norm.std);
  }
  int top = 0;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<unsigned char>(lbl[8 + i]);
    top = std::max(top, ds.labels[i]);
  }
  ds.class_count = class_count != 0 ? class_count : std::max<std::size_t>(2, top + 1);
  ds.provenance = "idx:" + img_name;
  ds.validate();
  return ds;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols,
               std::span<const std::uint8_t> labels) {
  if (rows == 0 || cols == 0 || pixels.size() != labels.size() * rows * cols) {
    throw DimensionError("write_idx: pixel count does not match labels x rows x cols");
  }
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lbl(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lbl) throw Error("write_idx: cannot open output files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(labels.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  write_be32(lbl, kLabelMagic);
  write_be32(lbl, static_cast<std::uint32_t>(labels.size()));
  lbl.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset synth_pothole(std::size_t n, std::size_t image_size, std::uint64_t seed,
                      Normalization norm) {
  if (n < 2 || n % 2 != 0) {
    throw ConfigError("needs an even sample count of at least 2, got " + std::to_string(n), "dataset.n");
  }
  if (image_size < 8) throw ConfigError("image size must be at least 8", "dataset.image_size");
  if (!(norm.std > 0.0)) throw ConfigError("normalization std must be positive", "dataset.std");

  SeededRng rng(seed);
  const std::size_t s = image_size;
  const double extent = static_cast<double>(s - 1);
  Dataset ds;
  ds.images = Tensor({n, 1, s, s});
  ds.labels.resize(n);
  ds.class_count = 2;
  ds.provenance = "synth_pothole:n=" + std::to_string(n) + ",size=" + std::to_string(s) +
                  ",seed=" + std::to_string(seed);

  std::vector<double> px(s * s);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    ds.labels[i] = label;

    // Road surface: base brightness plus a planar gradient.
    const double base = rng.uniform(0.505, 0.535);
    const double slope = rng.uniform(0.0, 0.20);
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const double u = x / extent - 0.5, v = y / extent - 0.5;
        px[y * s + x] = base + slope * (u * std::cos(dir) + v * std::sin(dir));
      }
    }

    if (label == 1) {
      const std::size_t blobs = 1 + static_cast<std::size_t>(rng.below(3));
      for (std::size_t b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(2.0, extent - 2.0);
        const double cy = rng.uniform(2.0, extent - 2.0);
        const double rx = rng.uniform(0.14, 0.28) * s;
        const double ry = rng.uniform(0.10, 0.20) * s;
        const double rot = rng.uniform(0.0, std::numbers::pi);
        const double depth = rng.uniform(0.03, 0.30);
        const double c = std::cos(rot), sn = std::sin(rot);
        for (std::size_t y = 0; y < s; ++y) {
          for (std::size_t x = 0; x < s; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double a = (dx * c + dy * sn) / rx;
            const double bb = (-dx * sn + dy * c) / ry;
            const double r2 = a * a + bb * bb;
            if (r2 < 1.0) px[y * s + x] -= depth * (1.0 - r2);
          }
        }
      }
    }

    float* dst = ds.images.raw() + i * s * s;
    for (std::size_t p = 0; p < s * s; ++p) {
      const double value = std::clamp(px[p] + 0.10 * rng.normal(), 0.0, 1.0);
      dst[p] = static_cast<float>((value - norm.mean) / norm.std);
    }
  }
  return ds;
}

SplitIndices split_indices_7_3(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw ConfigError("7:3 split needs at least 10 samples, got " + std::to_string(n), "dataset.n");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_train = (7 * n + 5) / 10;
  SplitIndices split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::pair<Dataset, Dataset> split_7_3(const Dataset& dataset, std::uint64_t seed) {
  const SplitIndices idx = split_indices_7_3(dataset.size(), seed);
  return {dataset.subset(idx.train), dataset.subset(idx.test)};
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, const BatchPlan& plan,
                                              std::size_t epoch) {
  if (plan.batch_size == 0) throw ConfigError("must be at least 1", "optim.batch_size");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(derive_seed(plan.seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += plan.batch_size) {
    const std::size_t end = std::min(n, start + plan.batch_size);
    if (plan.drop_last && end - start < plan.batch_size) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(const Dataset& dataset, const BatchPlan& plan,
                                              std::size_t epoch) {
  return batches(dataset.size(), plan, epoch);
}

}  // namespace iskd
