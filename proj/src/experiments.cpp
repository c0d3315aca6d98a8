#include "iskd/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "iskd/format.hpp"
#include "iskd/json_io.hpp"
#include "iskd/workers.hpp"

namespace iskd {

namespace fs = std::filesystem;
using nlohmann::json;

FitResult linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("linear_fit: x and y lengths differ");
  if (x.size() < 2) throw NumericError("linear_fit needs at least 2 points");
  const auto n = static_cast<double>(x.size());
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mean_x, dy = y[i] - mean_y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0)) throw NumericError("linear_fit: x values have no variance");
  FitResult fit;
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_x;
  fit.pearson_r = syy > 0.0 ? std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0) : 0.0;
  return fit;
}

FitResult linear_fit(std::span<const TSPoint> points) {
  std::vector<double> x, y;
  for (const auto& p : points) {
    x.push_back(p.teacher_accuracy);
    y.push_back(p.student_accuracy);
  }
  return linear_fit(x, y);
}

std::size_t blue_count(std::span<const TSPoint> points, double baseline) {
  return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [&](const TSPoint& p) {
    return p.teacher_accuracy < baseline && p.student_accuracy > baseline;
  }));
}

TSRelation ts_relation(const TrainingContext& ctx,
                       std::span<const std::pair<std::size_t, Network>> teachers, double baseline,
                       std::size_t threads) {
  if (teachers.empty()) throw ContractError("ts_relation needs at least one teacher checkpoint");
  // Worker contexts share the read-only data and init; none writes files.
  const TrainingContext quiet{ctx.config, ctx.data, ctx.init, {}};
  TSRelation out;
  out.points = parallel_map(
      teachers.size(),
      [&](std::size_t i) {
        const auto& [epoch, teacher] = teachers[i];
        TSPoint p;
        p.teacher_epoch = epoch;
        p.teacher_accuracy = evaluate(teacher, ctx.data.test);
        p.student_accuracy =
            train_iteration(quiet, 2, ctx.config.epochs_per_iteration, &teacher, ctx.config.kd)
                .record.test_accuracy;
        return p;
      },
      threads);
  std::stable_sort(out.points.begin(), out.points.end(),
                   [](const TSPoint& a, const TSPoint& b) { return a.teacher_epoch < b.teacher_epoch; });
  out.fit = linear_fit(out.points);
  out.baseline = baseline;
  out.blue_count = blue_count(out.points, baseline);
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void begin(const RunConfig& config, const Checkpoint& init, const fs::path& run_dir) {
  if (run_dir.empty()) return;
  fs::create_directories(run_dir);
  write_text(run_dir / "config.json", config_to_json(config).dump(2) + "\n");
  save_checkpoint(init.network, init.meta, run_dir / "init.ckpt");
}

}  // namespace

TSRelation ts_relation(const RunConfig& config, const fs::path& run_dir) {
  config.validate();
  const PreparedData data = prepare_data(config.dataset);
  const Checkpoint init = make_init_checkpoint(config, data);
  begin(config, init, run_dir);

  // Per-epoch teachers are always written when there is a run directory and
  // are then read back from disk.
  RunConfig first_cfg = config;
  first_cfg.save_epoch_checkpoints = !run_dir.empty();
  const TrainingContext ctx{first_cfg, data, init, run_dir};

  std::vector<std::pair<std::size_t, Network>> teachers;
  const EpochHook keep = [&](std::size_t epoch, const Network& student) {
    if (run_dir.empty()) teachers.emplace_back(epoch, student);
  };
  IterationResult first = train_iteration(ctx, 1, config.epochs_per_iteration, nullptr, config.kd, keep);
  if (!run_dir.empty()) {
    for (std::size_t e = 1; e <= config.epochs_per_iteration; ++e) {
      const fs::path p = run_dir / "iter_1" / ("epoch_" + std::to_string(e) + ".ckpt");
      if (!fs::exists(p)) throw Error("missing teacher checkpoint " + p.string());
      teachers.emplace_back(e, load_checkpoint(p).network);
    }
  }

  double baseline = first.record.test_accuracy;
  if (config.ts_baseline == "large-epoch") {
    baseline = run_large_epoch_baseline(config, data, init, config.baseline_epochs())
                   .last_record()
                   .test_accuracy;
  }
  TSRelation result = ts_relation(TrainingContext{config, data, init, {}}, teachers, baseline);

  if (!run_dir.empty()) {
    RunReport report;
    report.kind = "iskd";
    report.arch = config.arch;
    report.dataset = data.train.provenance;
    report.iterations.push_back(first.record);
    write_run_outputs(report, run_dir);
    write_text(run_dir / "ts_relation.csv", ts_relation_csv(result));
    write_text(run_dir / "ts_fit.json", ts_relation_fit_json(result));
  }
  return result;
}

AlphaSweep alpha_sweep(const TrainingContext& ctx, const Network& teacher, std::size_t iteration,
                       std::span<const double> alphas, double baseline, std::size_t threads) {
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha values must lie in [0, 1]", "sweep.alphas");
  }
  const TrainingContext quiet{ctx.config, ctx.data, ctx.init, {}};
  AlphaSweep sweep;
  sweep.iteration = iteration;
  sweep.baseline = baseline;
  sweep.entries = parallel_map(
      alphas.size(),
      [&](std::size_t i) {
        KDConfig kd = ctx.config.kd;
        kd.alpha = alphas[i];
        const auto result =
            train_iteration(quiet, iteration, ctx.config.epochs_per_iteration, &teacher, kd);
        return SweepEntry{alphas[i], result.record.test_accuracy};
      },
      threads);
  return sweep;
}

AlphaSweep alpha_sweep(const RunConfig& config, const fs::path& run_dir) {
  config.validate();
  const PreparedData data = prepare_data(config.dataset);
  const Checkpoint init = make_init_checkpoint(config, data);
  begin(config, init, run_dir);
  const TrainingContext ctx{config, data, init, run_dir};

  // The chain must reach S_{iteration-1}, so the stopping rule is disabled.
  const std::size_t chain = config.sweep_iteration - 1;
  IskdRun run = run_iterations(
      [&](std::size_t k, const Network* teacher) {
        return train_iteration(ctx, k, config.epochs_per_iteration, teacher, config.kd);
      },
      chain, -std::numeric_limits<double>::infinity());
  run.report.arch = config.arch;
  run.report.dataset = data.train.provenance;

  AlphaSweep sweep = alpha_sweep(ctx, run.students.back(), config.sweep_iteration, config.alphas,
                                 run.report.last_record().test_accuracy);
  if (!run_dir.empty()) {
    write_run_outputs(run.report, run_dir);
    write_text(run_dir / "alpha_sweep.csv", alpha_sweep_csv(sweep));
  }
  return sweep;
}

std::string ts_relation_csv(const TSRelation& result) {
  std::string out = "teacher_epoch,teacher_acc,student_acc\n";
  for (const auto& p : result.points) {
    out += std::to_string(p.teacher_epoch) + "," + format_double(p.teacher_accuracy) + "," +
           format_double(p.student_accuracy) + "\n";
  }
  return out;
}

std::string ts_relation_fit_json(const TSRelation& result) {
  const json j{{"slope", result.fit.slope},
               {"intercept", result.fit.intercept},
               {"pearson_r", result.fit.pearson_r},
               {"baseline", result.baseline},
               {"blue_count", result.blue_count}};
  return j.dump(2) + "\n";
}

std::string alpha_sweep_csv(const AlphaSweep& sweep) {
  std::string out = "alpha,student_acc,baseline\n";
  for (const auto& e : sweep.entries) {
    out += format_double(e.alpha) + "," + format_double(e.student_accuracy) + "," +
           format_double(sweep.baseline) + "\n";
  }
  return out;
}

ReportRow make_report_row(const RunReport& iskd, const RunReport* large_epoch,
                          const RunReport* tfkd, std::size_t columns) {
  ReportRow row;
  row.dataset = iskd.dataset;
  row.architecture = iskd.arch;
  row.iterations.assign(std::max(columns, iskd.iterations.size()), std::nullopt);
  for (std::size_t i = 0; i < iskd.iterations.size(); ++i) {
    row.iterations[i] = ReportCell{iskd.iterations[i].test_accuracy, iskd.iterations[i].epochs};
  }
  row.iskd = ReportCell{iskd.last_record().test_accuracy, iskd.total_epochs()};
  if (large_epoch) row.large_epoch = ReportCell{large_epoch->last_record().test_accuracy, large_epoch->total_epochs()};
  if (tfkd) row.tfkd = ReportCell{tfkd->last_record().test_accuracy, tfkd->total_epochs()};
  return row;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line");
  return fields;
}

std::string cell_text(const std::optional<ReportCell>& cell) {
  if (!cell) return "n/a";
  return format_double(cell->accuracy) + "_" + std::to_string(cell->epochs);
}

std::optional<ReportCell> parse_cell(const std::string& text) {
  if (text == "n/a") return std::nullopt;
  const auto us = text.rfind('_');
  if (us == std::string::npos) throw FormatError("report cell '" + text + "' is not accuracy_epochs");
  ReportCell cell;
  cell.accuracy = parse_double(std::string_view(text).substr(0, us));
  const std::string epochs = text.substr(us + 1);
  if (epochs.empty() || epochs.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("report cell '" + text + "' has a bad epoch count");
  }
  cell.epochs = std::stoull(epochs);
  return cell;
}

std::string pretty_cell(const std::optional<ReportCell>& cell) {
  if (!cell) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f_%zu", cell->accuracy, cell->epochs);
  return buf;
}

std::vector<std::string> header(std::size_t columns) {
  std::vector<std::string> h{"dataset", "architecture"};
  for (std::size_t i = 1; i <= columns; ++i) h.push_back("i" + std::to_string(i));
  h.insert(h.end(), {"iskd", "large_epoch", "tfkd"});
  return h;
}

std::size_t column_count(std::span<const ReportRow> rows) {
  std::size_t columns = 6;
  for (const auto& r : rows) columns = std::max(columns, r.iterations.size());
  return columns;
}

}  // namespace

std::string render_csv(std::span<const ReportRow> rows) {
  const std::size_t columns = column_count(rows);
  std::string out;
  const auto h = header(columns);
  for (std::size_t i = 0; i < h.size(); ++i) out += (i ? "," : "") + h[i];
  out += "\n";
  for (const auto& r : rows) {
    out += csv_field(r.dataset) + "," + csv_field(r.architecture);
    for (std::size_t i = 0; i < columns; ++i) {
      out += "," + cell_text(i < r.iterations.size() ? r.iterations[i] : std::nullopt);
    }
    out += "," + cell_text(r.iskd) + "," + cell_text(r.large_epoch) + "," + cell_text(r.tfkd) + "\n";
  }
  return out;
}

std::vector<ReportRow> parse_report_csv(std::string_view csv) {
  std::vector<std::string_view> lines;
  while (!csv.empty()) {
    const auto nl = csv.find('\n');
    lines.push_back(csv.substr(0, nl));
    csv = nl == std::string_view::npos ? std::string_view{} : csv.substr(nl + 1);
  }
  if (lines.empty()) throw FormatError("report CSV is empty");
  const auto head = split_csv_line(lines[0]);
  if (head.size() < 5 + 6) throw FormatError("report CSV header is too short");
  const std::size_t columns = head.size() - 5;
  if (head != header(columns)) throw FormatError("unexpected report CSV header");

  std::vector<ReportRow> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto f = split_csv_line(lines[li]);
    if (f.size() != head.size()) {
      throw FormatError("report CSV line " + std::to_string(li + 1) + " has " +
                        std::to_string(f.size()) + " fields, expected " + std::to_string(head.size()));
    }
    ReportRow r;
    r.dataset = f[0];
    r.architecture = f[1];
    for (std::size_t i = 0; i < columns; ++i) r.iterations.push_back(parse_cell(f[2 + i]));
    r.iskd = parse_cell(f[2 + columns]);
    r.large_epoch = parse_cell(f[3 + columns]);
    r.tfkd = parse_cell(f[4 + columns]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_text(std::span<const ReportRow> rows) {
  const std::size_t columns = column_count(rows);
  std::vector<std::vector<std::string>> table{header(columns)};
  for (const auto& r : rows) {
    std::vector<std::string> line{r.dataset, r.architecture};
    for (std::size_t i = 0; i < columns; ++i) {
      line.push_back(pretty_cell(i < r.iterations.size() ? r.iterations[i] : std::nullopt));
    }
    line.push_back(pretty_cell(r.iskd));
    line.push_back(pretty_cell(r.large_epoch));
    line.push_back(pretty_cell(r.tfkd));
    table.push_back(std::move(line));
  }
  std::vector<std::size_t> width(table[0].size(), 0);
  for (const auto& line : table) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::string out;
  for (const auto& line : table) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out += line[i];
      if (i + 1 < line.size()) out += std::string(width[i] - line[i].size() + 2, ' ');
    }
    out += "\n";
  }
  return out;
}

}  // namespace iskd
