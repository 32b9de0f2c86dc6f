// ms2m: run migration experiments, compare CSV reports, validate scenarios.

#include "ms2m/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <thread>

namespace {

namespace h = ms2m::harness;

constexpr int kOk = 0;
constexpr int kValidationError = 1;
constexpr int kRuntimeError = 2;

int report_config_error(const h::ConfigError& e) {
  std::cerr << e.what() << "\n";
  return kValidationError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator for message-based stateful service migration"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::string out_dir = ".";
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());

  auto* run = app.add_subcommand("run", "Run every trial of a scenario and write <out>/<name>.csv");
  run->add_option("config", config_path, "Scenario config (JSON)")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--trials", trials, "Override the trial count")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> csv_paths;
  auto* cmp = app.add_subcommand("compare", "Summarize and compare CSV reports");
  cmp->add_option("csv", csv_paths, "CSV reports written by `run`")->required()->expected(1, 2);

  auto* val = app.add_subcommand("validate", "Check a scenario config and list every problem");
  val->add_option("config", config_path, "Scenario config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidationError;
  }

  try {
    if (*val) {
      const auto cfg = h::load_config(config_path);
      std::cout << config_path << ": ok (" << cfg.hosts.size() << " hosts, " << cfg.links.size() << " links, "
                << cfg.trials << " trials)\n";
      return kOk;
    }
    if (*run) {
      auto cfg = h::load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (trials) cfg.trials = *trials;
      const auto report = h::run_experiment(cfg, jobs);
      const auto path = std::filesystem::path(out_dir) / (cfg.name + ".csv");
      h::export_csv(report, path);
      std::cout << "scenario " << cfg.name << " (seed " << cfg.seed << ", " << cfg.trials << " trials) -> "
                << path.string() << "\n"
                << h::format_summary(h::compare(report));
      return kOk;
    }
    if (*cmp) {
      std::vector<h::ComparisonSummary> summaries;
      for (const auto& p : csv_paths) {
        summaries.push_back(h::compare(h::load_csv(p)));
        std::cout << "== " << p << "\n" << h::format_summary(summaries.back());
      }
      if (summaries.size() == 2) {
        std::cout << "== " << csv_paths[1] << " relative to " << csv_paths[0] << " (mean total ms)\n";
        for (const auto& b : summaries[1].techniques) {
          const auto* a = summaries[0].find(b.technique);
          if (a == nullptr || a->completed == 0 || b.completed == 0 || a->total_ms.mean == 0) continue;
          const double delta = (b.total_ms.mean - a->total_ms.mean) / a->total_ms.mean * 100.0;
          std::cout << "  " << ms2m::migration::to_string(b.technique) << ": " << a->total_ms.mean << " -> "
                    << b.total_ms.mean << " (" << (delta >= 0 ? "+" : "") << delta << " %)\n";
        }
      }
      return kOk;
    }
  } catch (const h::ConfigError& e) {
    return report_config_error(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
