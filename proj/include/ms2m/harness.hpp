#pragma once

#include "ms2m/migration.hpp"
#include "ms2m/service.hpp"
#include "ms2m/sim.hpp"
#include "ms2m/workload.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ms2m::harness {

using migration::Outcome;
using migration::Technique;
using sim::Millis;

inline constexpr int kCsvSchemaVersion = 1;

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  std::size_t trials = 1;
  /// Simulated time at which the migration manager sends the pause request.
  Millis trigger_ms = 1000;
  std::vector<Technique> techniques{Technique::MS2M, Technique::StopAndCopy};

  service::ServiceProfile service;
  std::vector<sim::Host> hosts;
  std::vector<sim::Link> links;
  std::string source_host = "source";
  std::string target_host = "target";
  Millis control_latency_ms = 0;

  /// The seed field is ignored; each trial derives its own.
  workload::WorkloadSpec workload;
  /// When set, the arrival rate is this multiple of the processing rate.
  std::optional<double> rate_ratio;

  migration::HandoffPolicy policy;
  std::optional<migration::SourceCrashFault> crash;
};

/// Validation failure listing every offending field.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

private:
  std::vector<std::string> problems_;
};

/// Parses and validates; throws ConfigError on any problem.
ScenarioConfig parse_config(std::string_view json_text);
ScenarioConfig load_config(const std::filesystem::path& path);
/// Semantic checks on an already-built config. Empty means valid.
std::vector<std::string> validate(const ScenarioConfig& config);

/// The workload a trial actually runs.
workload::WorkloadSpec effective_workload(const ScenarioConfig& config, std::size_t trial);

struct TrialRow {
  std::size_t trial = 0;
  Technique technique = Technique::MS2M;
  Outcome outcome = Outcome::Completed;
  migration::Metrics metrics;

  // Not part of the CSV.
  std::size_t published = 0;
  std::size_t emitted = 0;
  std::size_t buffered_at_end = 0;
  bool conservation_ok = true;
  bool single_writer_ok = true;
};

struct MetricsReport {
  std::string scenario;
  std::vector<TrialRow> rows;
};

/// Everything observable from one simulated trial.
struct TrialRun {
  std::optional<migration::MigrationRecord> record;
  std::optional<TrialRow> row;
  service::ServiceState final_state;
  std::vector<std::string> outputs;
  std::vector<service::OutputRecord> output_log;
  /// Some instance was Serving when the simulation ran out of events.
  bool serving_at_end = false;
  std::size_t max_concurrent_serving = 0;
  bool outputs_only_from_serving = true;
};

/// Runs one trial. Without a technique this is the unmigrated control run
/// over the same workload.
TrialRun simulate_trial(const ScenarioConfig& config, std::size_t trial, std::optional<Technique> technique);

/// Every (trial, technique) pair on a fresh simulation. Rows are ordered by
/// trial, then by the configured technique order, regardless of `jobs`.
MetricsReport run_experiment(const ScenarioConfig& config, unsigned jobs = 1);

struct Spread {
  double mean = 0;
  double min = 0;
  double p05 = 0;
  double p50 = 0;
  double p95 = 0;
  double max = 0;
};

Spread spread_of(std::vector<double> values);

struct TechniqueSummary {
  Technique technique = Technique::MS2M;
  std::size_t trials = 0;
  std::size_t completed = 0;
  std::size_t aborted_divergence = 0;
  std::size_t aborted_crash = 0;
  // Aggregates below are over completed trials.
  Spread total_ms;
  Spread downtime_strict_ms;
  Spread downtime_paused_ms;
  Spread downtime_freeze_transfer_ms;
  std::array<double, migration::kPhaseCount> mean_phase_ms{};
  /// Mean phase duration as a percentage of mean total time.
  std::array<double, migration::kPhaseCount> phase_share_pct{};
  double mean_replayed = 0;
  double mean_drain_ms = 0;
};

struct ComparisonSummary {
  std::vector<TechniqueSummary> techniques;
  /// Relative change of MS2M mean total time versus stop-and-copy, in percent.
  std::optional<double> total_delta_pct;
  /// Downtime reduction of MS2M versus stop-and-copy for each MS2M reading.
  std::optional<double> downtime_reduction_strict_pct;
  std::optional<double> downtime_reduction_paused_pct;
  std::optional<double> downtime_reduction_freeze_transfer_pct;

  const TechniqueSummary* find(Technique t) const;
};

ComparisonSummary compare(const MetricsReport& report);
std::string format_summary(const ComparisonSummary& summary);

/// Recomputes every mean in the summary from the rows.
bool aggregates_consistent(const MetricsReport& report, const ComparisonSummary& summary, double tolerance = 1e-9);

std::string to_csv(const MetricsReport& report);
void export_csv(const MetricsReport& report, const std::filesystem::path& path);
/// Reads a CSV written by export_csv. Only the CSV columns are restored.
MetricsReport parse_csv(std::string_view text);
MetricsReport load_csv(const std::filesystem::path& path);

}  // namespace ms2m::harness
