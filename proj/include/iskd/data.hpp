#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iskd/tensor.hpp"

namespace iskd {

/// Per-dataset constants applied as (x - mean) / std after scaling pixels
/// to [0, 1]. Never estimated from the data.
struct Normalization {
  double mean = 0.0;
  double std = 1.0;
};

/// Immutable after construction; safe to share across threads.
struct Dataset {
  Tensor images;  // N x C x H x W
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::string provenance;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;

  /// Throws FormatError unless labels lie in [0, class_count), N >= 1 and
  /// every pixel is finite.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;

  /// Batch tensor (|indices| x C x H x W) and labels, in index order.
  std::pair<Tensor, std::vector<int>> gather(std::span<const std::size_t> indices) const;
};

/// Reads an IDX image file (magic 0x00000803, N x rows x cols u8) and an IDX
/// label file (magic 0x00000801). `class_count` 0 means max label + 1 (at
/// least 2).
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 Normalization norm = {}, std::size_t class_count = 0);

/// Writes the IDX pair read by load_idx.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols,
               std::span<const std::uint8_t> labels);

/// Two-class texture data. Class 0: smooth brightness gradient plus pixel
/// noise. Class 1: the same with 1-3 dark soft-edged ellipses. Labels
/// alternate 0, 1, 0, 1, ... so any even n is exactly balanced.
Dataset synth_pothole(std::size_t n, std::size_t image_size, std::uint64_t seed,
                      Normalization norm = {0.5, 0.25});

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Random 7:3 partition of {0..n-1}; |train| = round(0.7 n) with halves
/// rounded up. Both sides sorted ascending.
SplitIndices split_indices_7_3(std::size_t n, std::uint64_t seed);
std::pair<Dataset, Dataset> split_7_3(const Dataset& dataset, std::uint64_t seed);

struct BatchPlan {
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool drop_last = false;
};

/// Index slices for one epoch. The permutation depends only on
/// (plan.seed, epoch).
std::vector<std::vector<std::size_t>> batches(std::size_t n, const BatchPlan& plan,
                                              std::size_t epoch);
std::vector<std::vector<std::size_t>> batches(const Dataset& dataset, const BatchPlan& plan,
                                              std::size_t epoch);

}  // namespace iskd
