#include "iskd/distill.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "iskd/format.hpp"
#include "iskd/json_io.hpp"
#include "iskd/optim.hpp"

namespace iskd {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> RunConfig::default_alpha_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(i / 20.0);
  return grid;
}

double RunConfig::learning_rate() const { return optim.lr ? *optim.lr : preset_learning_rate(arch); }

std::size_t RunConfig::baseline_epochs() const {
  return baseline_total_epochs ? *baseline_total_epochs : epochs_per_iteration * max_iterations;
}

std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, "init"); }
std::uint64_t RunConfig::shuffle_seed() const { return derive_seed(seed, "shuffle"); }
std::uint64_t RunConfig::shuffle_seed(std::size_t k) const { return derive_seed(shuffle_seed(), k); }

void RunConfig::validate() const {
  if (arch != "mlp-small" && arch != "cnn-small") {
    throw ConfigError("unknown preset '" + arch + "' (expected mlp-small or cnn-small)", "arch");
  }
  if (dataset.kind == "synth") {
    if (dataset.n < 10 || dataset.n % 2 != 0) {
      throw ConfigError("must be an even count of at least 10", "dataset.n");
    }
    if (dataset.image_size < 8) throw ConfigError("must be at least 8", "dataset.image_size");
  } else if (dataset.kind == "idx") {
    if (dataset.train_images.empty()) throw ConfigError("required for idx datasets", "dataset.train_images");
    if (dataset.train_labels.empty()) throw ConfigError("required for idx datasets", "dataset.train_labels");
    if (dataset.test_images.empty() != dataset.test_labels.empty()) {
      throw ConfigError("test_images and test_labels must be given together", "dataset.test_labels");
    }
  } else {
    throw ConfigError("must be 'synth' or 'idx'", "dataset.kind");
  }
  if (!(dataset.std > 0.0)) throw ConfigError("must be positive", "dataset.std");
  if (max_iterations < 1) throw ConfigError("must be at least 1", "max_iterations");
  if (!(epsilon >= 0.0)) throw ConfigError("must be nonnegative", "epsilon");
  kd.validate();
  SgdConfig{learning_rate(), optim.momentum, optim.weight_decay}.validate();
  if (optim.batch_size < 1) throw ConfigError("must be at least 1", "optim.batch_size");
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("values must lie in [0, 1]", "sweep.alphas");
  }
  if (sweep_iteration < 2) throw ConfigError("must be at least 2", "sweep.iteration");
  if (ts_baseline != "e1" && ts_baseline != "large-epoch") {
    throw ConfigError("must be 'e1' or 'large-epoch'", "ts_relation.baseline");
  }
}

std::size_t RunReport::total_epochs() const {
  std::size_t total = 0;
  for (const auto& r : iterations) total += r.epochs;
  return total;
}

PreparedData prepare_data(const DatasetSpec& spec) {
  const Normalization norm{spec.mean, spec.std};
  const std::uint64_t split_seed = derive_seed(spec.seed, "split");
  if (spec.kind == "synth") {
    auto [train, test] = split_7_3(synth_pothole(spec.n, spec.image_size, spec.seed, norm), split_seed);
    return {std::move(train), std::move(test)};
  }
  if (spec.kind == "idx") {
    Dataset train = load_idx(spec.train_images, spec.train_labels, norm, spec.class_count);
    if (spec.test_images.empty()) {
      auto [tr, te] = split_7_3(train, split_seed);
      return {std::move(tr), std::move(te)};
    }
    Dataset test = load_idx(spec.test_images, spec.test_labels, norm, train.class_count);
    if (test.sample_shape() != train.sample_shape()) {
      throw FormatError("IDX test images have a different shape than the training images");
    }
    return {std::move(train), std::move(test)};
  }
  throw ConfigError("must be 'synth' or 'idx'", "dataset.kind");
}

Checkpoint make_init_checkpoint(const RunConfig& config, const PreparedData& data) {
  Checkpoint init;
  init.network = build_network(
      preset_architecture(config.arch, data.train.sample_shape(), data.train.class_count));
  SeededRng rng(config.init_seed());
  init_params(init.network, rng);
  init.meta = CheckpointMeta{0, 0, config.seed, std::nullopt};
  return init;
}

EvalResult evaluate_full(const Network& network, const Dataset& dataset) {
  if (network.class_count() != dataset.class_count) {
    throw DimensionError("network predicts " + std::to_string(network.class_count()) +
                         " classes, dataset has " + std::to_string(dataset.class_count));
  }
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + kChunk); ++i) idx.push_back(i);
    const auto [batch, labels] = dataset.gather(idx);
    const Tensor logits = network.predict(batch);
    const auto ce = cross_entropy(logits, std::span<const int>(labels));
    loss_sum += ce.loss * static_cast<double>(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = logits.row(i);
      const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
      if (pred == labels[i]) ++correct;
    }
  }
  const auto n = static_cast<double>(dataset.size());
  return {100.0 * static_cast<double>(correct) / n, loss_sum / n};
}

double evaluate(const Network& network, const Dataset& dataset) {
  return evaluate_full(network, dataset).accuracy;
}

IterationResult train_iteration(const TrainingContext& ctx, std::size_t k, std::size_t epochs,
                                const Network* teacher, const KDConfig& kd,
                                const EpochHook& on_epoch_end) {
  const RunConfig& cfg = ctx.config;
  const Dataset& train = ctx.data.train;
  if (teacher && !(teacher->architecture() == ctx.init.network.architecture())) {
    throw ContractError("teacher architecture differs from the student's");
  }
  if (teacher) kd.validate();

  Network student = ctx.init.network;
  SgdState state(student, SgdConfig{cfg.learning_rate(), cfg.optim.momentum, cfg.optim.weight_decay});
  const std::vector<double> schedule = make_schedule(epochs, cfg.learning_rate());
  const BatchPlan plan{cfg.optim.batch_size, cfg.shuffle_seed(k), false};
  // With alpha == 0 the teacher term vanishes exactly; skip its forward pass.
  const bool distill = teacher != nullptr && kd.alpha > 0.0;

  const fs::path iter_rel = "iter_" + std::to_string(k);
  if (!ctx.run_dir.empty()) fs::create_directories(ctx.run_dir / iter_rel);

  IterationRecord record;
  record.k = k;
  record.epochs = epochs;
  for (std::size_t e = 0; e < epochs; ++e) {
    state.set_lr(schedule[e]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& idx : batches(train, plan, e)) {
      const auto [batch, labels] = train.gather(idx);
      const std::span<const int> y(labels);
      auto [logits, cache] = student.forward(batch);
      const LossResult<float> loss =
          distill ? kd_total(logits, teacher->predict(batch), y, kd) : cross_entropy(logits, y);
      if (!std::isfinite(loss.loss)) {
        throw NumericError("non-finite loss in iteration " + std::to_string(k) + " at epoch " +
                           std::to_string(e + 1));
      }
      loss_sum += loss.loss * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto row = logits.row(i);
        if (std::max_element(row.begin(), row.end()) - row.begin() == labels[i]) ++correct;
      }
      student.backward(cache, loss.dlogits);
      sgd_step(student, state);
    }
    const auto n = static_cast<double>(train.size());
    record.metrics.push_back({k, e + 1, "train", loss_sum / n, 100.0 * static_cast<double>(correct) / n});
    const EvalResult test = evaluate_full(student, ctx.data.test);
    record.metrics.push_back({k, e + 1, "test", test.loss, test.accuracy});

    if (on_epoch_end) on_epoch_end(e + 1, student);
    if (!ctx.run_dir.empty() && cfg.save_epoch_checkpoints) {
      save_checkpoint(student, CheckpointMeta{k, e + 1, cfg.seed, test.accuracy},
                      ctx.run_dir / iter_rel / ("epoch_" + std::to_string(e + 1) + ".ckpt"));
    }
  }

  record.train_accuracy = evaluate(student, train);
  record.test_accuracy = evaluate(student, ctx.data.test);
  if (!ctx.run_dir.empty()) {
    const fs::path rel = iter_rel / "student.ckpt";
    save_checkpoint(student, CheckpointMeta{k, epochs, cfg.seed, record.test_accuracy}, ctx.run_dir / rel);
    record.checkpoint = rel.generic_string();
  }
  return {std::move(student), std::move(record)};
}

StopDecision stop_decision(std::span<const double> history, double epsilon,
                           std::size_t max_iterations) {
  if (history.empty()) throw ContractError("stop_decision needs at least one accuracy");
  if (history.size() >= max_iterations) return StopDecision::stop;
  if (history.size() < 2) return StopDecision::proceed;
  const double gain = history.back() - history[history.size() - 2];
  // Accuracies are printed to two decimals; a gain that equals epsilon in
  // decimal must not be lost to binary rounding (93.04 - 92.99 < 0.05).
  constexpr double kSlack = 1e-9;
  return gain + kSlack < epsilon ? StopDecision::stop : StopDecision::proceed;
}

namespace {

void finalize_indices(RunReport& report) {
  report.last = report.iterations.size() - 1;
  report.best = 0;
  for (std::size_t i = 1; i < report.iterations.size(); ++i) {
    if (report.iterations[i].test_accuracy > report.iterations[report.best].test_accuracy) {
      report.best = i;
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void begin_run_dir(const RunConfig& config, const Checkpoint& init, const fs::path& run_dir) {
  if (run_dir.empty()) return;
  fs::create_directories(run_dir);
  write_text(run_dir / "config.json", config_to_json(config).dump(2) + "\n");
  save_checkpoint(init.network, init.meta, run_dir / "init.ckpt");
}

RunReport blank_report(std::string kind, const RunConfig& config, const PreparedData& data) {
  RunReport report;
  report.kind = std::move(kind);
  report.arch = config.arch;
  report.dataset = data.train.provenance;
  return report;
}

}  // namespace

IskdRun run_iterations(const IterationStep& step, std::size_t max_iterations, double epsilon) {
  if (max_iterations < 1) throw ConfigError("must be at least 1", "max_iterations");
  IskdRun run;
  run.report.kind = "iskd";
  std::vector<double> history;
  for (std::size_t k = 1;; ++k) {
    const Network* teacher = k == 1 ? nullptr : &run.students.back();
    IterationResult result = step(k, teacher);
    history.push_back(result.record.test_accuracy);
    run.report.iterations.push_back(std::move(result.record));
    run.students.push_back(std::move(result.student));
    if (stop_decision(history, epsilon, max_iterations) == StopDecision::stop) break;
  }
  finalize_indices(run.report);
  return run;
}

IskdRun run_iskd_full(const RunConfig& config, const PreparedData& data, const Checkpoint& init,
                      const fs::path& run_dir) {
  config.validate();
  begin_run_dir(config, init, run_dir);
  const TrainingContext ctx{config, data, init, run_dir};
  IskdRun run = run_iterations(
      [&](std::size_t k, const Network* teacher) {
        return train_iteration(ctx, k, config.epochs_per_iteration, teacher, config.kd);
      },
      config.max_iterations, config.epsilon);
  RunReport named = blank_report("iskd", config, data);
  named.iterations = std::move(run.report.iterations);
  named.last = run.report.last;
  named.best = run.report.best;
  run.report = std::move(named);
  if (!run_dir.empty()) write_run_outputs(run.report, run_dir);
  return run;
}

RunReport run_iskd(const RunConfig& config, const fs::path& run_dir) {
  config.validate();
  const PreparedData data = prepare_data(config.dataset);
  const Checkpoint init = make_init_checkpoint(config, data);
  return run_iskd_full(config, data, init, run_dir).report;
}

RunReport run_large_epoch_baseline(const RunConfig& config, const PreparedData& data,
                                   const Checkpoint& init, std::size_t total_epochs,
                                   const fs::path& run_dir) {
  config.validate();
  begin_run_dir(config, init, run_dir);
  const TrainingContext ctx{config, data, init, run_dir};
  RunReport report = blank_report("large_epoch", config, data);
  report.iterations.push_back(train_iteration(ctx, 1, total_epochs, nullptr, config.kd).record);
  finalize_indices(report);
  if (!run_dir.empty()) write_run_outputs(report, run_dir);
  return report;
}

RunReport run_large_epoch_baseline(const RunConfig& config, std::size_t total_epochs,
                                   const fs::path& run_dir) {
  config.validate();
  const PreparedData data = prepare_data(config.dataset);
  return run_large_epoch_baseline(config, data, make_init_checkpoint(config, data), total_epochs,
                                  run_dir);
}

RunReport run_tfkd_baseline(const RunConfig& config, const PreparedData& data,
                            const Checkpoint& init, std::size_t total_epochs,
                            const fs::path& run_dir) {
  config.validate();
  const std::size_t phase1 = config.epochs_per_iteration;
  if (total_epochs <= phase1) {
    throw ConfigError("total budget " + std::to_string(total_epochs) +
                          " must exceed epochs_per_iteration " + std::to_string(phase1),
                      "baseline_total_epochs");
  }
  begin_run_dir(config, init, run_dir);
  const TrainingContext ctx{config, data, init, run_dir};
  RunReport report = blank_report("tfkd", config, data);
  IterationResult first = train_iteration(ctx, 1, phase1, nullptr, config.kd);
  IterationResult second = train_iteration(ctx, 2, total_epochs - phase1, &first.student, config.kd);
  report.iterations.push_back(std::move(first.record));
  report.iterations.push_back(std::move(second.record));
  report.note = "phase split (" + std::to_string(phase1) + ", " +
                std::to_string(total_epochs - phase1) + ")";
  finalize_indices(report);
  if (!run_dir.empty()) write_run_outputs(report, run_dir);
  return report;
}

RunReport run_tfkd_baseline(const RunConfig& config, std::size_t total_epochs,
                            const fs::path& run_dir) {
  config.validate();
  const PreparedData data = prepare_data(config.dataset);
  return run_tfkd_baseline(config, data, make_init_checkpoint(config, data), total_epochs, run_dir);
}

std::string metrics_csv(const RunReport& report) {
  std::string out = "iteration,epoch,split,loss,accuracy\n";
  for (const auto& rec : report.iterations) {
    for (const auto& m : rec.metrics) {
      out += std::to_string(m.iteration) + "," + std::to_string(m.epoch) + "," + m.split + "," +
             format_double(m.loss) + "," + format_double(m.accuracy) + "\n";
    }
  }
  return out;
}

nlohmann::json report_to_json(const RunReport& report) {
  json iterations = json::array();
  for (const auto& r : report.iterations) {
    iterations.push_back({{"k", r.k},
                          {"epochs", r.epochs},
                          {"train_accuracy", r.train_accuracy},
                          {"test_accuracy", r.test_accuracy},
                          {"checkpoint", r.checkpoint}});
  }
  return json{{"kind", report.kind},
              {"arch", report.arch},
              {"dataset", report.dataset},
              {"iterations", std::move(iterations)},
              {"last", report.last},
              {"best", report.best},
              {"total_epochs", report.total_epochs()},
              {"note", report.note}};
}

RunReport report_from_json(const nlohmann::json& j) {
  try {
    RunReport report;
    report.kind = j.at("kind").get<std::string>();
    report.arch = j.at("arch").get<std::string>();
    report.dataset = j.at("dataset").get<std::string>();
    for (const auto& r : j.at("iterations")) {
      IterationRecord rec;
      rec.k = r.at("k").get<std::size_t>();
      rec.epochs = r.at("epochs").get<std::size_t>();
      rec.train_accuracy = r.at("train_accuracy").get<double>();
      rec.test_accuracy = r.at("test_accuracy").get<double>();
      rec.checkpoint = r.value("checkpoint", std::string{});
      report.iterations.push_back(std::move(rec));
    }
    report.last = j.at("last").get<std::size_t>();
    report.best = j.at("best").get<std::size_t>();
    report.note = j.value("note", std::string{});
    if (report.iterations.empty() || report.last >= report.iterations.size() ||
        report.best >= report.iterations.size()) {
      throw FormatError("report has no iterations or out-of-range last/best index");
    }
    return report;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

void write_run_outputs(const RunReport& report, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  write_text(run_dir / "metrics.csv", metrics_csv(report));
  write_text(run_dir / "report.json", report_to_json(report).dump(2) + "\n");
}

}  // namespace iskd
