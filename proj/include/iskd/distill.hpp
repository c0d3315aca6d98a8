#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iskd/checkpoint.hpp"
#include "iskd/data.hpp"
#include "iskd/losses.hpp"
#include "iskd/network.hpp"

namespace iskd {

/// Where training data comes from. "synth" generates a synth_pothole pool
/// and applies the 7:3 split; "idx" reads IDX files, using the official
/// test pair when given and a 7:3 split of the training pair otherwise.
struct DatasetSpec {
  std::string kind = "synth";
  std::size_t n = 6000;
  std::size_t image_size = 16;
  std::uint64_t seed = 7;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  double mean = 0.5;
  double std = 0.25;
  std::size_t class_count = 0;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct OptimizerParams {
  std::optional<double> lr;  // unset: the architecture preset's rate
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;

  friend bool operator==(const OptimizerParams&, const OptimizerParams&) = default;
};

struct RunConfig {
  std::string arch = "cnn-small";
  DatasetSpec dataset;
  std::size_t epochs_per_iteration = 50;
  std::size_t max_iterations = 6;
  KDConfig kd;
  OptimizerParams optim;
  double epsilon = 0.05;  // stopping threshold, accuracy points
  std::uint64_t seed = 1;
  bool save_epoch_checkpoints = false;
  std::optional<std::size_t> baseline_total_epochs;  // unset: epochs x max_iterations
  std::vector<double> alphas = default_alpha_grid();
  std::size_t sweep_iteration = 2;
  std::string ts_baseline = "e1";  // "e1" or "large-epoch"

  double learning_rate() const;
  std::size_t baseline_epochs() const;
  std::uint64_t init_seed() const;
  std::uint64_t shuffle_seed() const;
  /// Batch order of KD iteration k; every iteration draws its own stream.
  std::uint64_t shuffle_seed(std::size_t k) const;

  /// Throws ConfigError naming the offending key.
  void validate() const;

  static std::vector<double> default_alpha_grid();

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct MetricRow {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0.0;
  double accuracy = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct IterationRecord {
  std::size_t k = 1;
  std::size_t epochs = 0;  // e_s
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::string checkpoint;  // relative to the run directory; empty if not written
  std::vector<MetricRow> metrics;
};

struct RunReport {
  std::string kind;  // "iskd", "large_epoch", "tfkd"
  std::string arch;
  std::string dataset;
  std::vector<IterationRecord> iterations;
  std::size_t last = 0;  // index into iterations
  std::size_t best = 0;
  std::string note;

  std::size_t total_epochs() const;
  const IterationRecord& last_record() const { return iterations.at(last); }
  const IterationRecord& best_record() const { return iterations.at(best); }
};

struct PreparedData {
  Dataset train;
  Dataset test;
};

PreparedData prepare_data(const DatasetSpec& spec);

/// The shared starting point every student restarts from.
Checkpoint make_init_checkpoint(const RunConfig& config, const PreparedData& data);

/// Everything one iteration needs besides its teacher.
struct TrainingContext {
  const RunConfig& config;
  const PreparedData& data;
  const Checkpoint& init;
  std::filesystem::path run_dir;  // empty: write nothing
};

using EpochHook = std::function<void(std::size_t epoch, const Network& student)>;

struct IterationResult {
  Network student;
  IterationRecord record;
};

/// Trains a student from `ctx.init` for `epochs` epochs. Without a teacher
/// the loss is cross-entropy; with one it is kd_total(kd). The teacher is
/// only read.
IterationResult train_iteration(const TrainingContext& ctx, std::size_t k, std::size_t epochs,
                                const Network* teacher, const KDConfig& kd,
                                const EpochHook& on_epoch_end = {});

struct EvalResult {
  double accuracy = 0.0;  // percent
  double loss = 0.0;      // mean cross-entropy
};

EvalResult evaluate_full(const Network& network, const Dataset& dataset);
double evaluate(const Network& network, const Dataset& dataset);

enum class StopDecision { proceed, stop };

/// Stop once the latest gain acc[k] - acc[k-1] falls below epsilon, or
/// when k reaches max_iterations.
StopDecision stop_decision(std::span<const double> history, double epsilon,
                           std::size_t max_iterations);

using IterationStep = std::function<IterationResult(std::size_t k, const Network* teacher)>;

struct IskdRun {
  RunReport report;
  std::vector<Network> students;  // S_1 .. S_K
};

/// The iteration loop: S_1 without a teacher, then T_k = S_{k-1} until
/// stop_decision says stop.
IskdRun run_iterations(const IterationStep& step, std::size_t max_iterations, double epsilon);

IskdRun run_iskd_full(const RunConfig& config, const PreparedData& data, const Checkpoint& init,
                      const std::filesystem::path& run_dir = {});
RunReport run_iskd(const RunConfig& config, const std::filesystem::path& run_dir = {});

/// Plain cross-entropy training for total_epochs from the shared init.
RunReport run_large_epoch_baseline(const RunConfig& config, std::size_t total_epochs,
                                   const std::filesystem::path& run_dir = {});
RunReport run_large_epoch_baseline(const RunConfig& config, const PreparedData& data,
                                   const Checkpoint& init, std::size_t total_epochs,
                                   const std::filesystem::path& run_dir = {});

/// One-shot self distillation: epochs_per_iteration of cross-entropy, then
/// total_epochs - epochs_per_iteration distilling a fresh student from it.
RunReport run_tfkd_baseline(const RunConfig& config, std::size_t total_epochs,
                            const std::filesystem::path& run_dir = {});
RunReport run_tfkd_baseline(const RunConfig& config, const PreparedData& data,
                            const Checkpoint& init, std::size_t total_epochs,
                            const std::filesystem::path& run_dir = {});

/// Writes metrics.csv and report.json.
void write_run_outputs(const RunReport& report, const std::filesystem::path& run_dir);

std::string metrics_csv(const RunReport& report);

}  // namespace iskd
