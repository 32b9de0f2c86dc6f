#include "ms2m/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <mutex>
#include <thread>

namespace ms2m::harness {

namespace {

using broker::MessageId;

constexpr std::uint64_t kWorkloadStream = 0x776f726b6c6f6164ULL;

sim::Network build_network(const ScenarioConfig& cfg) {
  sim::Network net;
  for (const auto& h : cfg.hosts) net.add_host(h);
  for (const auto& l : cfg.links) net.add_link(l);
  return net;
}

// Message conservation: every published id ends up exactly once among
// "emitted", "applied silently during replay only" and "still buffered".
bool check_conservation(const broker::Queue& main, const service::Journal& journal,
                        const std::vector<std::unique_ptr<service::ServiceInstance>>& instances, TrialRow& row) {
  std::set<MessageId> emitted;
  bool duplicate = false;
  for (const auto& out : journal.outputs()) {
    duplicate |= !emitted.insert(out.input_id).second;
  }
  std::set<MessageId> replay_only;
  for (const auto& inst : instances) {
    for (MessageId id : inst->replayed_ids()) {
      if (emitted.count(id) == 0) replay_only.insert(id);
    }
  }
  std::set<MessageId> buffered;
  for (const auto& m : main.buffer()) {
    if (emitted.count(m.id) == 0 && replay_only.count(m.id) == 0) buffered.insert(m.id);
  }
  row.published = main.history().size();
  row.emitted = emitted.size();
  row.buffered_at_end = main.buffer().size();

  std::set<MessageId> all;
  for (const auto& m : main.history()) all.insert(m.id);
  const std::size_t accounted = emitted.size() + replay_only.size() + buffered.size();
  bool subset = true;
  for (MessageId id : emitted) subset &= all.count(id) == 1;
  for (MessageId id : replay_only) subset &= all.count(id) == 1;
  return !duplicate && subset && accounted == all.size();
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double sum = 0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

double reduction_pct(double baseline, double value) { return (baseline - value) / baseline * 100.0; }

}  // namespace

workload::WorkloadSpec effective_workload(const ScenarioConfig& cfg, std::size_t trial) {
  workload::WorkloadSpec spec = cfg.workload;
  spec.seed = sim::mix_seed(sim::mix_seed(cfg.seed, trial), kWorkloadStream);
  if (cfg.rate_ratio) {
    spec.arrival_rate = *cfg.rate_ratio * cfg.service.processing_rate_per_s();
  }
  return spec;
}

TrialRun simulate_trial(const ScenarioConfig& cfg, std::size_t trial, std::optional<Technique> technique) {
  const sim::Network net = build_network(cfg);
  sim::Simulator sim(sim::mix_seed(cfg.seed, trial));
  migration::Cluster cluster(sim, net, cfg.service);
  cluster.deploy(cfg.source_host);

  auto& broker = cluster.broker();
  const std::string main = cluster.main_queue();
  for (auto& item : workload::generate(effective_workload(cfg, trial))) {
    sim.schedule_at(item.publish_ms, [&broker, main, payload = std::move(item.payload)]() mutable {
      broker.publish(main, std::move(payload));
    });
  }

  const migration::MigrationRecord* record = nullptr;
  if (technique) {
    migration::MigrationOptions opts;
    opts.policy = cfg.policy;
    opts.control_latency_ms = cfg.control_latency_ms;
    opts.crash = cfg.crash;
    sim.schedule_at(cfg.trigger_ms, [&, t = *technique, opts] {
      record = &cluster.begin(t, cfg.source_host, cfg.target_host, opts);
    });
  }
  sim.run();

  TrialRun run;
  const auto& journal = cluster.journal();
  for (const auto& out : journal.outputs()) run.outputs.push_back(out.payload);
  run.output_log = journal.outputs();
  run.max_concurrent_serving = journal.max_concurrent_serving();
  run.outputs_only_from_serving = journal.outputs_only_from_serving();
  if (const auto* serving = cluster.serving()) {
    run.final_state = serving->state();
    run.serving_at_end = true;
  }

  if (technique) {
    if (record == nullptr || !record->complete()) {
      throw migration::MigrationError("migration did not finish in trial " + std::to_string(trial));
    }
    run.record = *record;
    TrialRow row;
    row.trial = trial;
    row.technique = *technique;
    row.outcome = *record->outcome;
    row.metrics = migration::compute_metrics(*record);
    row.conservation_ok = check_conservation(broker.queue(main), journal, cluster.instances(), row);
    row.single_writer_ok = run.max_concurrent_serving <= 1 && run.outputs_only_from_serving;
    run.row = row;
  }
  return run;
}

MetricsReport run_experiment(const ScenarioConfig& cfg, unsigned jobs) {
  if (auto problems = validate(cfg); !problems.empty()) {
    throw ConfigError(std::move(problems));
  }
  struct Task {
    std::size_t trial;
    Technique technique;
  };
  std::vector<Task> tasks;
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    for (Technique tech : cfg.techniques) tasks.push_back({t, tech});
  }

  std::vector<std::optional<TrialRow>> rows(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        rows[i] = simulate_trial(cfg, tasks[i].trial, tasks[i].technique).row;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(tasks.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  MetricsReport report;
  report.scenario = cfg.name;
  for (auto& r : rows) report.rows.push_back(std::move(*r));
  return report;
}

Spread spread_of(std::vector<double> values) {
  Spread s;
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.mean = mean_of(values);
  s.min = values.front();
  s.max = values.back();
  s.p05 = percentile(values, 0.05);
  s.p50 = percentile(values, 0.50);
  s.p95 = percentile(values, 0.95);
  return s;
}

const TechniqueSummary* ComparisonSummary::find(Technique t) const {
  for (const auto& s : techniques) {
    if (s.technique == t) return &s;
  }
  return nullptr;
}

ComparisonSummary compare(const MetricsReport& report) {
  std::vector<Technique> order;
  for (const auto& row : report.rows) {
    if (std::find(order.begin(), order.end(), row.technique) == order.end()) order.push_back(row.technique);
  }

  ComparisonSummary out;
  for (Technique tech : order) {
    TechniqueSummary s;
    s.technique = tech;
    std::vector<double> total, strict, paused, freeze, replayed, drain;
    std::array<std::vector<double>, migration::kPhaseCount> phases;
    for (const auto& row : report.rows) {
      if (row.technique != tech) continue;
      ++s.trials;
      switch (row.outcome) {
        case Outcome::Completed: ++s.completed; break;
        case Outcome::AbortedDivergence: ++s.aborted_divergence; continue;
        case Outcome::AbortedSourceCrash: ++s.aborted_crash; continue;
      }
      const auto& m = row.metrics;
      total.push_back(m.total_ms);
      strict.push_back(m.downtime_strict_ms);
      paused.push_back(m.downtime_paused_ms);
      freeze.push_back(m.downtime_freeze_transfer_ms);
      replayed.push_back(static_cast<double>(m.replayed_count));
      drain.push_back(m.drain_ms);
      for (std::size_t p = 0; p < migration::kPhaseCount; ++p) phases[p].push_back(m.phase_ms[p]);
    }
    s.total_ms = spread_of(total);
    s.downtime_strict_ms = spread_of(strict);
    s.downtime_paused_ms = spread_of(paused);
    s.downtime_freeze_transfer_ms = spread_of(freeze);
    for (std::size_t p = 0; p < migration::kPhaseCount; ++p) {
      s.mean_phase_ms[p] = mean_of(phases[p]);
      s.phase_share_pct[p] = s.total_ms.mean > 0 ? s.mean_phase_ms[p] / s.total_ms.mean * 100.0 : 0.0;
    }
    s.mean_replayed = mean_of(replayed);
    s.mean_drain_ms = mean_of(drain);
    out.techniques.push_back(s);
  }

  const auto* ms2m = out.find(Technique::MS2M);
  const auto* sc = out.find(Technique::StopAndCopy);
  if (ms2m != nullptr && sc != nullptr && ms2m->completed > 0 && sc->completed > 0) {
    if (sc->total_ms.mean > 0) {
      out.total_delta_pct = (ms2m->total_ms.mean - sc->total_ms.mean) / sc->total_ms.mean * 100.0;
    }
    const double base = sc->downtime_paused_ms.mean;
    if (base > 0) {
      out.downtime_reduction_strict_pct = reduction_pct(base, ms2m->downtime_strict_ms.mean);
      out.downtime_reduction_paused_pct = reduction_pct(base, ms2m->downtime_paused_ms.mean);
      out.downtime_reduction_freeze_transfer_pct = reduction_pct(base, ms2m->downtime_freeze_transfer_ms.mean);
    }
  }
  return out;
}

std::string format_summary(const ComparisonSummary& summary) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  for (const auto& s : summary.techniques) {
    os << migration::to_string(s.technique) << ": " << s.trials << " trials, " << s.completed << " completed, "
       << s.aborted_divergence << " aborted (divergence), " << s.aborted_crash << " aborted (source crash)\n";
    if (s.completed == 0) continue;
    auto line = [&os](const char* label, const Spread& sp) {
      os << "  " << std::left << std::setw(26) << label << std::right << " mean " << std::setw(10) << sp.mean
         << "  p05 " << std::setw(10) << sp.p05 << "  p50 " << std::setw(10) << sp.p50 << "  p95 " << std::setw(10)
         << sp.p95 << "\n";
    };
    line("total ms", s.total_ms);
    line("downtime strict ms", s.downtime_strict_ms);
    line("downtime paused ms", s.downtime_paused_ms);
    line("downtime freeze+transfer ms", s.downtime_freeze_transfer_ms);
    os << "  phases (mean ms / share of total):\n";
    for (std::size_t p = 0; p < migration::kPhaseCount; ++p) {
      os << "    " << std::left << std::setw(20) << migration::to_string(migration::kAllPhases[p]) << std::right
         << std::setw(10) << s.mean_phase_ms[p] << "  " << std::setw(6) << s.phase_share_pct[p] << " %\n";
    }
    os << "  replayed messages (mean) " << s.mean_replayed << ", backlog drain ms (mean) " << s.mean_drain_ms
       << "\n";
  }
  auto pct = [&os](const char* label, const std::optional<double>& v) {
    if (v) os << label << (*v >= 0 ? "+" : "") << *v << " %\n";
  };
  if (summary.total_delta_pct || summary.downtime_reduction_paused_pct) {
    os << "ms2m vs stop_and_copy:\n";
    pct("  total time delta:                      ", summary.total_delta_pct);
    os << "  downtime reduction (baseline: stop_and_copy downtime, initiation until the target serves)\n";
    pct("    strict (checkpoint only):            ", summary.downtime_reduction_strict_pct);
    pct("    paused (pause+checkpoint+continue):  ", summary.downtime_reduction_paused_pct);
    pct("    freeze+transfer (pause+ckpt+xfer):   ", summary.downtime_reduction_freeze_transfer_pct);
  }
  return os.str();
}

bool aggregates_consistent(const MetricsReport& report, const ComparisonSummary& summary, double tolerance) {
  for (const auto& s : summary.techniques) {
    double total = 0, paused = 0, strict = 0;
    std::array<double, migration::kPhaseCount> phases{};
    std::size_t n = 0, trials = 0;
    for (const auto& row : report.rows) {
      if (row.technique != s.technique) continue;
      ++trials;
      if (row.outcome != Outcome::Completed) continue;
      ++n;
      total += row.metrics.total_ms;
      paused += row.metrics.downtime_paused_ms;
      strict += row.metrics.downtime_strict_ms;
      for (std::size_t p = 0; p < migration::kPhaseCount; ++p) phases[p] += row.metrics.phase_ms[p];
    }
    if (trials != s.trials || n != s.completed) return false;
    if (n == 0) continue;
    const double d = static_cast<double>(n);
    auto close = [tolerance](double a, double b) { return std::abs(a - b) <= tolerance * std::max(1.0, std::abs(b)); };
    if (!close(total / d, s.total_ms.mean) || !close(paused / d, s.downtime_paused_ms.mean) ||
        !close(strict / d, s.downtime_strict_ms.mean)) {
      return false;
    }
    for (std::size_t p = 0; p < migration::kPhaseCount; ++p) {
      if (!close(phases[p] / d, s.mean_phase_ms[p])) return false;
    }
  }
  return true;
}

namespace {

constexpr const char* kHeader =
    "schema_version,trial,technique,outcome,total_ms,downtime_strict_ms,downtime_paused_ms,pause_ms,"
    "checkpoint_ms,continuation_ms,transfer_ms,restoration_ms,replay_ms,finalize_ms,replayed_count,drain_ms";

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  // Avoid "-0.000".
  if (std::string_view(buf) == "-0.000") return "0.000";
  return buf;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::runtime_error("csv line " + std::to_string(line) + ": bad number '" + s + "'");
}

Outcome parse_outcome(const std::string& s, std::size_t line) {
  for (Outcome o : {Outcome::Completed, Outcome::AbortedDivergence, Outcome::AbortedSourceCrash}) {
    if (migration::to_string(o) == s) return o;
  }
  throw std::runtime_error("csv line " + std::to_string(line) + ": unknown outcome '" + s + "'");
}

}  // namespace

std::string to_csv(const MetricsReport& report) {
  using migration::Phase;
  std::string out = kHeader;
  out += '\n';
  for (const auto& row : report.rows) {
    const auto& m = row.metrics;
    out += std::to_string(kCsvSchemaVersion) + ',' + std::to_string(row.trial) + ',' +
           std::string(migration::to_string(row.technique)) + ',' + std::string(migration::to_string(row.outcome));
    for (double v : {m.total_ms, m.downtime_strict_ms, m.downtime_paused_ms, m.phase(Phase::ServicePause),
                     m.phase(Phase::ServiceCheckpoint), m.phase(Phase::ServiceContinuation),
                     m.phase(Phase::CheckpointTransfer), m.phase(Phase::ServiceRestoration),
                     m.phase(Phase::MessageReplay), m.phase(Phase::Finalization)}) {
      out += ',' + fixed3(v);
    }
    out += ',' + std::to_string(m.replayed_count) + ',' + fixed3(m.drain_ms) + '\n';
  }
  return out;
}

void export_csv(const MetricsReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  out << to_csv(report);
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

MetricsReport parse_csv(std::string_view text) {
  using migration::Phase;
  MetricsReport report;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kHeader) throw std::runtime_error("csv: unexpected header");
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 16) throw std::runtime_error("csv line " + std::to_string(line_no) + ": expected 16 fields");
    if (f[0] != std::to_string(kCsvSchemaVersion)) {
      throw std::runtime_error("csv line " + std::to_string(line_no) + ": unsupported schema_version " + f[0]);
    }
    TrialRow row;
    row.trial = static_cast<std::size_t>(to_double(f[1], line_no));
    try {
      row.technique = migration::parse_technique(f[2]);
    } catch (const migration::MigrationError&) {
      throw std::runtime_error("csv line " + std::to_string(line_no) + ": unknown technique '" + f[2] + "'");
    }
    row.outcome = parse_outcome(f[3], line_no);
    auto& m = row.metrics;
    m.total_ms = to_double(f[4], line_no);
    m.downtime_strict_ms = to_double(f[5], line_no);
    m.downtime_paused_ms = to_double(f[6], line_no);
    const Phase order[] = {Phase::ServicePause,       Phase::ServiceCheckpoint, Phase::ServiceContinuation,
                           Phase::CheckpointTransfer, Phase::ServiceRestoration, Phase::MessageReplay,
                           Phase::Finalization};
    for (std::size_t i = 0; i < 7; ++i) {
      m.phase_ms[static_cast<std::size_t>(order[i])] = to_double(f[7 + i], line_no);
    }
    m.replayed_count = static_cast<std::size_t>(to_double(f[14], line_no));
    m.drain_ms = to_double(f[15], line_no);
    m.downtime_freeze_transfer_ms =
        row.technique == Technique::MS2M
            ? m.phase(Phase::ServicePause) + m.phase(Phase::ServiceCheckpoint) + m.phase(Phase::CheckpointTransfer)
            : m.downtime_paused_ms;
    report.rows.push_back(row);
  }
  if (!header_seen) throw std::runtime_error("csv: missing header");
  return report;
}

MetricsReport load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  MetricsReport report = parse_csv(buf.str());
  report.scenario = path.stem().string();
  return report;
}

}  // namespace ms2m::harness
