#include "iskd/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "iskd/config.hpp"
#include "iskd/format.hpp"
#include "iskd/json_io.hpp"

namespace iskd::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::optional<std::string> config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<std::size_t> epochs;
  std::optional<std::string> arch;
  std::optional<std::string> dataset;
  std::optional<std::string> alphas;
  std::optional<double> epsilon;
  std::optional<std::size_t> max_iterations;
  std::optional<bool> save_epoch_checkpoints;
  std::optional<std::size_t> total_epochs;
  std::vector<std::string> runs;  // report only
};

void add_run_flags(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  cmd.add_option("--out", f.out, "Output directory")->required();
  cmd.add_option("--seed", f.seed, "Run seed");
  cmd.add_option("--alpha", f.alpha, "KD mixing weight");
  cmd.add_option("--epochs", f.epochs, "Epochs per KD iteration");
  cmd.add_option("--arch", f.arch, "Architecture preset")
      ->check(CLI::IsMember({"mlp-small", "cnn-small"}));
  cmd.add_option("--dataset", f.dataset, "Dataset spec, e.g. synth:n=6000,size=16");
  cmd.add_option("--alphas", f.alphas, "Comma-separated alpha grid");
  cmd.add_option("--epsilon", f.epsilon, "Stopping threshold in accuracy points");
  cmd.add_option("--max-iters", f.max_iterations, "Maximum KD iterations");
  cmd.add_option("--save-epoch-ckpts", f.save_epoch_checkpoints, "Write a checkpoint every epoch");
  cmd.add_option("--total-epochs", f.total_epochs, "Epoch budget for the baselines");
}

std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> alphas;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      alphas.push_back(parse_double(item));
    } catch (const FormatError&) {
      throw ConfigError("'" + item + "' is not a number", "sweep.alphas");
    }
  }
  return alphas;
}

RunConfig resolve(const Flags& f) {
  ConfigOverrides o;
  o.seed = f.seed;
  o.alpha = f.alpha;
  o.epochs = f.epochs;
  o.arch = f.arch;
  o.dataset = f.dataset;
  if (f.alphas) o.alphas = parse_alpha_list(*f.alphas);
  o.epsilon = f.epsilon;
  o.max_iterations = f.max_iterations;
  o.save_epoch_checkpoints = f.save_epoch_checkpoints;
  o.total_epochs = f.total_epochs;
  std::optional<fs::path> path;
  if (f.config) path = *f.config;
  return parse_config(path, o);
}

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream test(probe);
    if (!test) throw Error("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void print_report(std::ostream& out, const RunReport& r) {
  out << r.kind << " " << r.arch << " on " << r.dataset << "\n";
  for (const auto& it : r.iterations) {
    out << "  i" << it.k << ": test " << format_double(it.test_accuracy) << "% after "
        << it.epochs << " epochs\n";
  }
  out << "  last i" << r.last_record().k << ", best i" << r.best_record().k << ", "
      << r.total_epochs() << " epochs total\n";
}

RunReport read_report(const fs::path& run) {
  const fs::path file = fs::is_directory(run) ? run / "report.json" : run;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace

std::vector<ReportRow> collect_report_rows(std::span<const fs::path> runs, std::ostream& warn) {
  std::vector<RunReport> iskd, large, tfkd;
  for (const auto& run : runs) {
    RunReport r = read_report(run);
    if (r.kind == "iskd") iskd.push_back(std::move(r));
    else if (r.kind == "large_epoch") large.push_back(std::move(r));
    else if (r.kind == "tfkd") tfkd.push_back(std::move(r));
    else throw FormatError(run.string() + ": unknown report kind '" + r.kind + "'");
  }
  std::vector<const RunReport*> large_for(iskd.size(), nullptr), tfkd_for(iskd.size(), nullptr);
  const auto attach = [&](const std::vector<RunReport>& baselines,
                          std::vector<const RunReport*>& slots) {
    for (const auto& b : baselines) {
      bool placed = false;
      for (std::size_t i = 0; i < iskd.size() && !placed; ++i) {
        if (!slots[i] && iskd[i].dataset == b.dataset && iskd[i].arch == b.arch) {
          slots[i] = &b;
          placed = true;
        }
      }
      if (!placed) warn << "warning: no ISKD run for " << b.kind << " " << b.arch << " on " << b.dataset << "\n";
    }
  };
  attach(large, large_for);
  attach(tfkd, tfkd_for);
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < iskd.size(); ++i) {
    rows.push_back(make_report_row(iskd[i], large_for[i], tfkd_for[i]));
  }
  return rows;
}

int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iterative self knowledge distillation"};
  app.name("iskd");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Flags f;
  auto* run = app.add_subcommand("run", "ISKD run");
  auto* large = app.add_subcommand("baseline-large", "Plain training for the full epoch budget");
  auto* tfkd = app.add_subcommand("baseline-tfkd", "One-shot self distillation baseline");
  auto* ts = app.add_subcommand("exp-ts-relation", "Teacher/student accuracy relation");
  auto* sweep = app.add_subcommand("exp-alpha-sweep", "Student accuracy over an alpha grid");
  for (auto* cmd : {run, large, tfkd, ts, sweep}) add_run_flags(*cmd, f);
  auto* report = app.add_subcommand("report", "Render a table from run directories");
  report->add_option("runs", f.runs, "Run directories or report.json files")
      ->required()
      ->check(CLI::ExistingPath);
  report->add_option("--out", f.out, "Output directory")->required();

  if (!args.empty() && !args[0].starts_with("-") && !app.get_subcommand_no_throw(args[0])) {
    err << "unknown subcommand '" << args[0] << "'\n" << app.help();
    return kUsage;
  }

  std::vector<const char*> argv{"iskd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (report->parsed()) {
      std::vector<fs::path> runs(f.runs.begin(), f.runs.end());
      const auto rows = collect_report_rows(runs, err);
      prepare_out(f.out);
      write_text(fs::path(f.out) / "table.csv", render_csv(rows));
      write_text(fs::path(f.out) / "table.txt", render_text(rows));
      out << render_text(rows);
      return kOk;
    }

    const RunConfig config = resolve(f);
    const fs::path dir = f.out;
    prepare_out(dir);
    if (run->parsed()) {
      print_report(out, run_iskd(config, dir));
    } else if (large->parsed()) {
      print_report(out, run_large_epoch_baseline(config, config.baseline_epochs(), dir));
    } else if (tfkd->parsed()) {
      print_report(out, run_tfkd_baseline(config, config.baseline_epochs(), dir));
    } else if (ts->parsed()) {
      const TSRelation r = ts_relation(config, dir);
      out << "teachers " << r.points.size() << ", slope " << format_double(r.fit.slope)
          << ", pearson_r " << format_double(r.fit.pearson_r) << ", blue " << r.blue_count
          << " (baseline " << format_double(r.baseline) << ")\n";
    } else if (sweep->parsed()) {
      const AlphaSweep s = alpha_sweep(config, dir);
      out << "baseline " << format_double(s.baseline) << "\n";
      for (const auto& e : s.entries) {
        out << "  alpha " << format_double(e.alpha) << ": " << format_double(e.student_accuracy)
            << "\n";
      }
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace iskd::cli
