#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iskd/distill.hpp"

namespace iskd {

struct TSPoint {
  double teacher_accuracy = 0.0;
  double student_accuracy = 0.0;
  std::size_t teacher_epoch = 0;
};

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double pearson_r = 0.0;
};

/// Ordinary least squares y = slope * x + intercept and the product-moment
/// correlation. Throws NumericError when x has no variance. r is 0 when y
/// has no variance.
FitResult linear_fit(std::span<const double> x, std::span<const double> y);
FitResult linear_fit(std::span<const TSPoint> points);

/// Points where the teacher is below `baseline` but the student above it.
std::size_t blue_count(std::span<const TSPoint> points, double baseline);

struct TSRelation {
  std::vector<TSPoint> points;
  FitResult fit;
  std::size_t blue_count = 0;
  double baseline = 0.0;
};

/// Distills one student per teacher (all from the shared init, one KD
/// iteration each) and fits student accuracy against teacher accuracy.
/// Jobs run on a worker pool; results are ordered by teacher epoch.
TSRelation ts_relation(const TrainingContext& ctx,
                       std::span<const std::pair<std::size_t, Network>> teachers, double baseline,
                       std::size_t threads = 0);

/// Full experiment: trains S_1 keeping a teacher per epoch, then calls the
/// overload above. The baseline is S_1's accuracy ("e1") or a large-epoch
/// run of two iterations' budget ("large-epoch"), per config.ts_baseline.
TSRelation ts_relation(const RunConfig& config, const std::filesystem::path& run_dir = {});

struct SweepEntry {
  double alpha = 0.0;
  double student_accuracy = 0.0;
};

struct AlphaSweep {
  std::vector<SweepEntry> entries;  // in the order of the requested alphas
  double baseline = 0.0;            // accuracy of the previous iteration's student
  std::size_t iteration = 2;
};

/// One train_iteration per alpha with a fixed teacher and seed.
AlphaSweep alpha_sweep(const TrainingContext& ctx, const Network& teacher, std::size_t iteration,
                       std::span<const double> alphas, double baseline, std::size_t threads = 0);

/// Runs the ISKD chain up to S_{config.sweep_iteration - 1} (no early stop),
/// then sweeps config.alphas for iteration config.sweep_iteration.
AlphaSweep alpha_sweep(const RunConfig& config, const std::filesystem::path& run_dir = {});

std::string ts_relation_csv(const TSRelation& result);
std::string ts_relation_fit_json(const TSRelation& result);
std::string alpha_sweep_csv(const AlphaSweep& sweep);

struct ReportCell {
  double accuracy = 0.0;
  std::size_t epochs = 0;

  friend bool operator==(const ReportCell&, const ReportCell&) = default;
};

/// One table row: i_1..i_n cells ("n/a" past the stop), the ISKD summary
/// (last iteration's accuracy, summed epochs), and both baselines.
struct ReportRow {
  std::string dataset;
  std::string architecture;
  std::vector<std::optional<ReportCell>> iterations;
  std::optional<ReportCell> iskd;
  std::optional<ReportCell> large_epoch;
  std::optional<ReportCell> tfkd;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

ReportRow make_report_row(const RunReport& iskd, const RunReport* large_epoch,
                          const RunReport* tfkd, std::size_t columns = 6);

/// Cells are written as "<accuracy>_<epochs>" or "n/a"; accuracies use the
/// shortest exact decimal so the CSV reparses to identical rows.
std::string render_csv(std::span<const ReportRow> rows);
std::vector<ReportRow> parse_report_csv(std::string_view csv);

/// Aligned text table, accuracies to two decimals.
std::string render_text(std::span<const ReportRow> rows);

}  // namespace iskd
