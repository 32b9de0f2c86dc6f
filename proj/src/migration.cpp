#include "ms2m/migration.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <utility>

namespace ms2m::migration {

std::string_view to_string(Technique t) {
  switch (t) {
    case Technique::MS2M: return "ms2m";
    case Technique::StopAndCopy: return "stop_and_copy";
  }
  return "?";
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Completed: return "Completed";
    case Outcome::AbortedDivergence: return "AbortedDivergence";
    case Outcome::AbortedSourceCrash: return "AbortedSourceCrash";
  }
  return "?";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::ServicePause: return "ServicePause";
    case Phase::ServiceCheckpoint: return "ServiceCheckpoint";
    case Phase::ServiceContinuation: return "ServiceContinuation";
    case Phase::CheckpointTransfer: return "CheckpointTransfer";
    case Phase::ServiceRestoration: return "ServiceRestoration";
    case Phase::MessageReplay: return "MessageReplay";
    case Phase::Finalization: return "Finalization";
  }
  return "?";
}

Technique parse_technique(std::string_view name) {
  if (name == "ms2m" || name == "MS2M") return Technique::MS2M;
  if (name == "stop_and_copy" || name == "StopAndCopy") return Technique::StopAndCopy;
  throw MigrationError("unknown technique: " + std::string(name));
}

Phase parse_phase(std::string_view name) {
  static const std::map<std::string_view, Phase> snake = {
      {"service_pause", Phase::ServicePause},
      {"service_checkpoint", Phase::ServiceCheckpoint},
      {"service_continuation", Phase::ServiceContinuation},
      {"checkpoint_transfer", Phase::CheckpointTransfer},
      {"service_restoration", Phase::ServiceRestoration},
      {"message_replay", Phase::MessageReplay},
      {"finalization", Phase::Finalization},
  };
  for (Phase p : kAllPhases) {
    if (to_string(p) == name) return p;
  }
  if (auto it = snake.find(name); it != snake.end()) return it->second;
  throw MigrationError("unknown phase: " + std::string(name));
}

const PhaseSpan* MigrationRecord::span(Phase phase) const {
  for (const auto& s : phase_timeline) {
    if (s.phase == phase) return &s;
  }
  return nullptr;
}

Millis MigrationRecord::duration_of(Phase phase) const {
  const PhaseSpan* s = span(phase);
  return s ? s->duration() : 0.0;
}

HandoffDecision decide_handoff(const ReplayObservation& obs, const HandoffPolicy& policy, int& divergent_streak) {
  if (obs.backlog <= policy.handoff_threshold) {
    divergent_streak = 0;
    return HandoffDecision::Handoff;
  }
  if (policy.replay_timeout_ms > 0 && obs.elapsed_ms > policy.replay_timeout_ms) {
    return HandoffDecision::Abort;
  }
  if (obs.window_check) {
    divergent_streak = obs.arrival_rate_per_s > obs.processing_rate_per_s ? divergent_streak + 1 : 0;
    if (policy.divergence_window > 0 && divergent_streak >= policy.divergence_window) {
      return HandoffDecision::Abort;
    }
  }
  return HandoffDecision::Continue;
}

Metrics compute_metrics(const MigrationRecord& record) {
  if (!record.complete()) {
    throw MigrationError("metrics requested for an unfinished migration");
  }
  Metrics m;
  for (const auto& s : record.phase_timeline) {
    m.phase_ms[static_cast<std::size_t>(s.phase)] += s.duration();
  }
  m.total_ms = record.finished_at - record.initiated_at;
  m.replayed_count = record.replayed_count;
  m.drain_ms = record.drain_ms.value_or(0.0);
  if (record.technique == Technique::MS2M) {
    m.downtime_strict_ms = m.phase(Phase::ServiceCheckpoint);
    m.downtime_paused_ms =
        m.phase(Phase::ServicePause) + m.phase(Phase::ServiceCheckpoint) + m.phase(Phase::ServiceContinuation);
    m.downtime_freeze_transfer_ms =
        m.phase(Phase::ServicePause) + m.phase(Phase::ServiceCheckpoint) + m.phase(Phase::CheckpointTransfer);
  } else {
    const PhaseSpan* restore = record.span(Phase::ServiceRestoration);
    const bool served = restore != nullptr && record.outcome == Outcome::Completed;
    m.downtime_paused_ms = served ? restore->end - record.initiated_at : m.total_ms;
    m.downtime_strict_ms = m.downtime_paused_ms;
    m.downtime_freeze_transfer_ms = m.downtime_paused_ms;
  }
  return m;
}

// Drives one migration. Every step is a simulation event; steps scheduled
// before the migration finished become no-ops afterwards.
class Cluster::Manager {
public:
  Manager(Cluster& cluster, Technique technique, ServiceInstance& source, std::string target_host,
          MigrationOptions options, std::size_t seq)
      : c_(cluster), opt_(std::move(options)), source_(&source) {
    record.technique = technique;
    record.source_host = source.host();
    record.target_host = std::move(target_host);
    const std::string tag = std::to_string(seq);
    consumer_ = "migration-manager." + tag;
    control_queue_ = c_.service_ + ".control." + tag;
    secondary_queue_ = c_.main_queue_ + ".replay." + tag;
  }

  MigrationRecord record;

  bool finished() const { return record.complete(); }

  void start() {
    record.initiated_at = c_.sim_.now();
    c_.broker_.create_queue(control_queue_);
    c_.broker_.subscribe(
        control_queue_, consumer_, [this](const broker::Message& m) { on_control(m); }, opt_.control_latency_ms);
    open_phase(Phase::ServicePause);
    send("ServicePauseRequest", [this] {
      source_->pause();
      after(c_.profile_.pause_ms, [this] { after_pause(); });
    });
  }

  void on_host_crash(const std::string& host) {
    if (finished() || host != record.source_host) {
      return;
    }
    // Past these points the source is no longer needed.
    if (record.technique == Technique::MS2M && target_serving_) return;
    if (record.technique == Technique::StopAndCopy && transfer_done_) return;
    abort_source_crash();
  }

private:
  bool ms2m() const { return record.technique == Technique::MS2M; }

  void after(Millis delay, std::function<void()> step) {
    c_.sim_.schedule(delay, [this, step = std::move(step)] {
      if (!finished()) step();
    });
  }

  void send(const std::string& payload, std::function<void()> on_arrival) {
    const MessageId id = c_.broker_.publish(control_queue_, payload);
    pending_control_.emplace(id, std::move(on_arrival));
  }

  void on_control(const broker::Message& m) {
    c_.broker_.ack(control_queue_, consumer_, m.id);
    auto node = pending_control_.extract(m.id);
    if (!node.empty() && !finished()) {
      node.mapped()();
    }
  }

  void open_phase(Phase p) {
    const Millis now = c_.sim_.now();
    record.phase_timeline.push_back({p, now, now});
    if (opt_.crash && opt_.crash->phase == p) {
      after(opt_.crash->offset_ms, [this] { c_.crash_host(record.source_host); });
    }
  }

  void close_phase() { record.phase_timeline.back().end = c_.sim_.now(); }

  void next_phase(Phase p) {
    close_phase();
    open_phase(p);
  }

  std::size_t state_size() const { return service::serialize(source_->state()).size(); }

  void after_pause() {
    next_phase(Phase::ServiceCheckpoint);
    const sim::Host& host = c_.network_.host(record.source_host);
    Millis cost = sim::checkpoint_duration(host, state_size());
    if (ms2m()) {
      cost += host.live_checkpoint_extra_ms;
    }
    after(cost, [this] { after_checkpoint(); });
  }

  void after_checkpoint() {
    checkpoint_ = source_->create_checkpoint();
    record.checkpoint_bytes = checkpoint_->size_bytes;
    record.checkpoint_last_id = checkpoint_->checkpoint_last_id;
    if (ms2m()) {
      c_.broker_.create_queue(secondary_queue_);
      c_.broker_.start_mirror(c_.main_queue_, secondary_queue_, checkpoint_->checkpoint_last_id + 1);
      mirror_active_ = true;
      next_phase(Phase::ServiceContinuation);
      after(c_.profile_.resume_ms, [this] {
        source_->resume(c_.main_queue_);
        start_transfer();
      });
    } else {
      start_transfer();
    }
  }

  void start_transfer() {
    next_phase(Phase::CheckpointTransfer);
    const sim::Link& link = c_.network_.link(record.source_host, record.target_host);
    after(sim::transfer_duration(link, checkpoint_->size_bytes, c_.sim_.rng()), [this] {
      transfer_done_ = true;
      next_phase(Phase::ServiceRestoration);
      const sim::Host& host = c_.network_.host(record.target_host);
      const Millis cost = sim::restore_duration(host, checkpoint_->size_bytes) + c_.profile_.resume_ms;
      after(cost, [this] { ms2m() ? restored_for_replay() : restored_for_serving(); });
    });
  }

  ServiceInstance& restore_target() {
    auto instance = ServiceInstance::restore(c_.context_for(record.target_host),
                                             c_.next_instance_id(record.target_host), *checkpoint_,
                                             record.target_host);
    instance->set_shadow_outputs(opt_.shadow_outputs);
    target_ = &c_.adopt(std::move(instance));
    return *target_;
  }

  // Stop-and-copy: the restored instance takes over the main queue directly.
  void restored_for_serving() {
    restore_target().resume(c_.main_queue_);
    target_serving_ = true;
    c_.track_drain(*target_, record);
    next_phase(Phase::Finalization);
    send("RestoreConfirmed", [this] {
      source_->stop();
      finish(Outcome::Completed);
    });
  }

  void restored_for_replay() {
    ServiceInstance& target = restore_target();
    target.set_on_applied([this](const ServiceInstance&, const broker::Message&) {
      if (!finished() && in_replay_) evaluate(false);
    });
    target.enter_replay(secondary_queue_);
    send("RestoreConfirmed", [this] {
      next_phase(Phase::MessageReplay);
      in_replay_ = true;
      replay_started_ = c_.sim_.now();
      arrivals_seen_ = c_.broker_.queue(secondary_queue_).history().size();
      schedule_window_check();
      evaluate(false);
    });
  }

  void schedule_window_check() {
    window_event_ = c_.sim_.schedule(opt_.policy.check_interval_ms, [this] {
      window_event_.reset();
      if (finished() || !in_replay_) return;
      if (evaluate(true)) schedule_window_check();
    });
  }

  // Returns true while the replay continues.
  bool evaluate(bool window) {
    ReplayObservation obs;
    obs.backlog = c_.broker_.backlog(secondary_queue_);
    obs.processing_rate_per_s = c_.profile_.processing_rate_per_s();
    obs.elapsed_ms = c_.sim_.now() - replay_started_;
    obs.window_check = window;
    if (window) {
      const std::size_t seen = c_.broker_.queue(secondary_queue_).history().size();
      obs.arrival_rate_per_s = static_cast<double>(seen - arrivals_seen_) / (opt_.policy.check_interval_ms / 1000.0);
      arrivals_seen_ = seen;
    }
    switch (decide_handoff(obs, opt_.policy, divergent_streak_)) {
      case HandoffDecision::Handoff:
        begin_finalization();
        return false;
      case HandoffDecision::Abort:
        abort_divergence();
        return false;
      case HandoffDecision::Continue:
        return true;
    }
    return true;
  }

  void leave_replay() {
    in_replay_ = false;
    if (window_event_) {
      c_.sim_.cancel(*window_event_);
      window_event_.reset();
    }
  }

  // The target pauses its replay first, so the source's watermark can never
  // fall behind what the target has already applied silently.
  void begin_finalization() {
    leave_replay();
    next_phase(Phase::Finalization);
    send("HoldReplay", [this] {
      target_->hold_replay();
      const MessageId position = target_->state().last_processed_id;
      send("ReplayPosition " + std::to_string(position), [this, position] {
        send("StopAt " + std::to_string(position), [this, position] {
          source_->stop_consuming_at(position, [this](MessageId watermark) {
            record.watermark = watermark;
            send("Watermark " + std::to_string(watermark), [this, watermark] {
              target_->finish_replay(watermark, c_.main_queue_, [this] {
                target_serving_ = true;
                c_.track_drain(*target_, record);
                send("SwitchConfirmed", [this] {
                  source_->stop();
                  finish(Outcome::Completed);
                });
              });
            });
          });
        });
      });
    });
  }

  void abort_divergence() {
    leave_replay();
    close_phase();
    target_->stop();
    finish(Outcome::AbortedDivergence);
  }

  void abort_source_crash() {
    leave_replay();
    close_phase();
    const MessageId survived = source_->state().last_processed_id;
    for (const auto& m : c_.broker_.queue(c_.main_queue_).history()) {
      if (m.id > survived) record.unemitted_ids.push_back(m.id);
    }
    if (target_ != nullptr) {
      for (MessageId id : target_->replayed_ids()) {
        if (id > survived) record.replayed_beyond_source.push_back(id);
      }
      target_->stop();
    }
    finish(Outcome::AbortedSourceCrash);
  }

  void finish(Outcome outcome) {
    close_phase();
    if (mirror_active_) {
      c_.broker_.stop_mirror(c_.main_queue_);
      mirror_active_ = false;
    }
    if (c_.broker_.has_queue(secondary_queue_)) {
      c_.broker_.delete_queue(secondary_queue_);
    }
    c_.broker_.unsubscribe(control_queue_, consumer_);
    c_.broker_.delete_queue(control_queue_);
    pending_control_.clear();
    if (target_ != nullptr) {
      record.replayed_count = target_->replayed_count();
    }
    record.finished_at = c_.sim_.now();
    record.outcome = outcome;
  }

  Cluster& c_;
  MigrationOptions opt_;
  ServiceInstance* source_;
  ServiceInstance* target_ = nullptr;
  std::string consumer_;
  std::string control_queue_;
  std::string secondary_queue_;
  std::optional<service::Checkpoint> checkpoint_;
  std::map<MessageId, std::function<void()>> pending_control_;

  bool mirror_active_ = false;
  bool transfer_done_ = false;
  bool target_serving_ = false;
  bool in_replay_ = false;
  Millis replay_started_ = 0;
  std::size_t arrivals_seen_ = 0;
  int divergent_streak_ = 0;
  std::optional<sim::EventId> window_event_;
};

Cluster::Cluster(sim::Simulator& sim, const sim::Network& network, service::ServiceProfile profile,
                 std::string service)
    : sim_(sim),
      network_(network),
      profile_(profile),
      service_(std::move(service)),
      main_queue_(service_ + ".in"),
      output_queue_(service_ + ".out"),
      broker_(sim) {
  broker_.create_queue(main_queue_);
  broker_.create_queue(output_queue_);
}

Cluster::~Cluster() {
  managers_.clear();
  instances_.clear();
}

service::Context Cluster::context_for(const std::string& host) {
  return service::Context{sim_, broker_, journal_, output_queue_, profile_.processing_ms,
                          network_.host(host).delivery_latency_ms};
}

std::string Cluster::next_instance_id(const std::string& host) {
  return service_ + "@" + host + "#" + std::to_string(++instance_counter_);
}

ServiceInstance& Cluster::adopt(std::unique_ptr<ServiceInstance> instance) {
  instances_.push_back(std::move(instance));
  return *instances_.back();
}

ServiceInstance& Cluster::deploy(const std::string& host) {
  if (serving() != nullptr) {
    throw MigrationError("service " + service_ + " already has a serving instance");
  }
  auto& instance = adopt(std::make_unique<ServiceInstance>(context_for(host), next_instance_id(host), host,
                                                           service::ServiceState{}));
  instance.resume(main_queue_);
  return instance;
}

ServiceInstance* Cluster::serving() const {
  for (const auto& i : instances_) {
    if (i->mode() == service::Mode::Serving) return i.get();
  }
  return nullptr;
}

bool Cluster::migrating() const {
  return std::any_of(managers_.begin(), managers_.end(), [](const auto& m) { return !m->finished(); });
}

const std::vector<const MigrationRecord*> Cluster::records() const {
  std::vector<const MigrationRecord*> out;
  for (const auto& m : managers_) out.push_back(&m->record);
  return out;
}

const MigrationRecord& Cluster::begin(Technique technique, const std::string& source_host,
                                      const std::string& target_host, MigrationOptions options) {
  if (migrating()) {
    throw MigrationError("a migration of " + service_ + " is already in progress");
  }
  ServiceInstance* source = serving();
  if (source == nullptr || source->host() != source_host) {
    throw MigrationError("no serving instance of " + service_ + " on " + source_host);
  }
  if (source_host == target_host || !network_.has_host(target_host)) {
    throw MigrationError("invalid target host " + target_host);
  }
  try {
    network_.link(source_host, target_host);
  } catch (const sim::SimError& e) {
    throw MigrationError(e.what());
  }
  if (options.policy.check_interval_ms <= 0) {
    throw MigrationError("check_interval_ms must be positive");
  }
  managers_.push_back(std::make_unique<Manager>(*this, technique, *source, target_host, std::move(options),
                                                managers_.size() + 1));
  Manager& manager = *managers_.back();
  manager.start();
  return manager.record;
}

MigrationRecord Cluster::migrate_ms2m(const std::string& source_host, const std::string& target_host,
                                      MigrationOptions options) {
  const MigrationRecord& record = begin(Technique::MS2M, source_host, target_host, std::move(options));
  sim_.run_until([&] { return record.complete(); });
  if (!record.complete()) {
    throw MigrationError("simulation ran out of events before the migration finished");
  }
  return record;
}

MigrationRecord Cluster::migrate_stop_and_copy(const std::string& source_host, const std::string& target_host,
                                               MigrationOptions options) {
  const MigrationRecord& record = begin(Technique::StopAndCopy, source_host, target_host, std::move(options));
  sim_.run_until([&] { return record.complete(); });
  if (!record.complete()) {
    throw MigrationError("simulation ran out of events before the migration finished");
  }
  return record;
}

void Cluster::crash_host(const std::string& host) {
  for (const auto& i : instances_) {
    if (i->host() == host && !i->crashed()) {
      i->crash();
    }
  }
  for (const auto& m : managers_) {
    m->on_host_crash(host);
  }
}

void Cluster::track_drain(ServiceInstance& instance, MigrationRecord& record) {
  const Millis served_at = sim_.now();
  if (broker_.backlog(main_queue_) == 0) {
    record.drain_ms = 0.0;
    instance.set_on_applied(nullptr);
    return;
  }
  instance.set_on_applied([this, &record, served_at](const ServiceInstance&, const broker::Message&) {
    if (!record.drain_ms && broker_.backlog(main_queue_) == 0) {
      record.drain_ms = sim_.now() - served_at;
    }
  });
}

}  // namespace ms2m::migration
