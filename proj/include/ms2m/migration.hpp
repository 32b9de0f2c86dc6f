#pragma once

#include "ms2m/broker.hpp"
#include "ms2m/service.hpp"
#include "ms2m/sim.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ms2m::migration {

using broker::MessageId;
using service::ServiceInstance;
using sim::Millis;

enum class Technique { MS2M, StopAndCopy };
enum class Outcome { Completed, AbortedDivergence, AbortedSourceCrash };

enum class Phase {
  ServicePause,
  ServiceCheckpoint,
  ServiceContinuation,
  CheckpointTransfer,
  ServiceRestoration,
  MessageReplay,
  Finalization,
};

inline constexpr std::size_t kPhaseCount = 7;
inline constexpr std::array<Phase, kPhaseCount> kAllPhases = {
    Phase::ServicePause,       Phase::ServiceCheckpoint,  Phase::ServiceContinuation, Phase::CheckpointTransfer,
    Phase::ServiceRestoration, Phase::MessageReplay, Phase::Finalization,
};

std::string_view to_string(Technique t);
std::string_view to_string(Outcome o);
std::string_view to_string(Phase p);
/// Accepts "ms2m" / "stop_and_copy" and the CamelCase names.
Technique parse_technique(std::string_view name);
/// Accepts the CamelCase names and snake_case ("message_replay").
Phase parse_phase(std::string_view name);

class MigrationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct PhaseSpan {
  Phase phase;
  Millis start = 0;
  Millis end = 0;

  Millis duration() const { return end - start; }
};

struct MigrationRecord {
  Technique technique = Technique::MS2M;
  std::string source_host;
  std::string target_host;
  std::vector<PhaseSpan> phase_timeline;
  /// Unset while the migration is running.
  std::optional<Outcome> outcome;
  std::optional<MessageId> watermark;
  std::size_t replayed_count = 0;

  /// The moment the pause request is sent.
  Millis initiated_at = 0;
  Millis finished_at = 0;
  std::size_t checkpoint_bytes = 0;
  MessageId checkpoint_last_id = 0;
  /// Time from the target starting to serve until the main-queue backlog
  /// first empties. Unset if that has not happened (yet).
  std::optional<Millis> drain_ms;
  /// After a source crash: main-queue ids that were published but never had
  /// their output emitted by any instance.
  std::vector<MessageId> unemitted_ids;
  /// After a source crash: ids the discarded target had applied silently
  /// beyond the source's last processed message.
  std::vector<MessageId> replayed_beyond_source;

  bool complete() const { return outcome.has_value(); }
  const PhaseSpan* span(Phase phase) const;
  Millis duration_of(Phase phase) const;
};

struct HandoffPolicy {
  /// Handoff once the target's replay backlog is at most this many messages.
  std::size_t handoff_threshold = 0;
  /// Consecutive window checks with arrival rate above processing rate
  /// before the replay is declared divergent.
  int divergence_window = 5;
  Millis check_interval_ms = 100;
  /// 0 disables the timeout.
  Millis replay_timeout_ms = 60'000;
};

enum class HandoffDecision { Handoff, Continue, Abort };

struct ReplayObservation {
  std::size_t backlog = 0;
  double arrival_rate_per_s = 0;
  double processing_rate_per_s = 0;
  Millis elapsed_ms = 0;
  /// Window checks update the divergence streak; per-message checks only
  /// test the backlog and the timeout.
  bool window_check = false;
};

/// `divergent_streak` carries the consecutive-violation count between calls.
HandoffDecision decide_handoff(const ReplayObservation& obs, const HandoffPolicy& policy, int& divergent_streak);

struct Metrics {
  Millis total_ms = 0;
  /// Checkpoint creation only.
  Millis downtime_strict_ms = 0;
  /// MS2M: pause + checkpoint + continuation. Stop-and-copy: pause request
  /// until the target serves.
  Millis downtime_paused_ms = 0;
  /// MS2M: pause + checkpoint + transfer. Stop-and-copy: same as paused.
  Millis downtime_freeze_transfer_ms = 0;
  std::array<Millis, kPhaseCount> phase_ms{};
  std::size_t replayed_count = 0;
  Millis drain_ms = 0;

  Millis phase(Phase p) const { return phase_ms[static_cast<std::size_t>(p)]; }
};

/// Throws MigrationError if the record is not complete.
Metrics compute_metrics(const MigrationRecord& record);

/// Crash the source host `offset_ms` after `phase` begins.
struct SourceCrashFault {
  Phase phase = Phase::MessageReplay;
  Millis offset_ms = 0;
};

struct MigrationOptions {
  HandoffPolicy policy;
  /// Delivery latency of the per-migration control queue.
  Millis control_latency_ms = 0;
  std::optional<SourceCrashFault> crash;
  /// Keep the target's suppressed outputs for inspection.
  bool shadow_outputs = false;
};

/// One logical service deployed across the hosts of a simulation, together
/// with its broker queues and the migration manager driving it.
///
/// Inputs arrive on `<service>.in`; outputs go to `<service>.out`.
class Cluster {
public:
  Cluster(sim::Simulator& sim, const sim::Network& network, service::ServiceProfile profile,
          std::string service = "game");
  ~Cluster();

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  /// Starts the first instance, Serving on the main queue.
  ServiceInstance& deploy(const std::string& host);

  /// Starts a migration of the serving instance at the current simulated time.
  /// The record fills in as the simulation runs.
  const MigrationRecord& begin(Technique technique, const std::string& source_host, const std::string& target_host,
                               MigrationOptions options = {});
  /// begin() followed by running the simulation until the record completes.
  MigrationRecord migrate_ms2m(const std::string& source_host, const std::string& target_host,
                               MigrationOptions options = {});
  MigrationRecord migrate_stop_and_copy(const std::string& source_host, const std::string& target_host,
                                        MigrationOptions options = {});

  /// Every live instance on the host fails abruptly.
  void crash_host(const std::string& host);

  ServiceInstance* serving() const;
  bool migrating() const;
  const std::vector<std::unique_ptr<ServiceInstance>>& instances() const { return instances_; }
  const std::vector<const MigrationRecord*> records() const;

  const std::string& service_name() const { return service_; }
  const std::string& main_queue() const { return main_queue_; }
  const std::string& output_queue() const { return output_queue_; }
  broker::Broker& broker() { return broker_; }
  const broker::Broker& broker() const { return broker_; }
  const service::Journal& journal() const { return journal_; }
  sim::Simulator& sim() { return sim_; }
  const service::ServiceProfile& profile() const { return profile_; }
  const sim::Network& network() const { return network_; }

private:
  class Manager;
  friend class Manager;

  service::Context context_for(const std::string& host);
  ServiceInstance& adopt(std::unique_ptr<ServiceInstance> instance);
  std::string next_instance_id(const std::string& host);
  void track_drain(ServiceInstance& instance, MigrationRecord& record);

  sim::Simulator& sim_;
  const sim::Network& network_;
  service::ServiceProfile profile_;
  std::string service_;
  std::string main_queue_;
  std::string output_queue_;
  service::Journal journal_;
  broker::Broker broker_;
  std::vector<std::unique_ptr<ServiceInstance>> instances_;
  std::size_t instance_counter_ = 0;
  std::vector<std::unique_ptr<Manager>> managers_;
};

}  // namespace ms2m::migration
