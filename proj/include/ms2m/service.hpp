#pragma once

#include "ms2m/broker.hpp"
#include "ms2m/sim.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ms2m::service {

using broker::Message;
using broker::MessageId;
using sim::Millis;

using Value = std::variant<std::int64_t, std::string>;

struct ServiceState {
  std::map<std::string, Value> data;
  MessageId last_processed_id = 0;

  bool operator==(const ServiceState&) const = default;
};

class ServiceError : public std::runtime_error {
public:
  enum class Code {
    DuplicateOrOutOfOrder,
    MalformedMessage,
    InvalidMode,
    CorruptCheckpoint,
    ProtocolError,
  };

  ServiceError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

private:
  Code code_;
};

/// Canonical encoding (all integers little-endian):
///
///   u64 last_processed_id
///   u32 entry_count
///   entry_count x { u32 key_len, key bytes, u32 value_len, value bytes }
///
/// Entries appear in ascending byte order of their keys. Value bytes start
/// with a one-byte tag: 'i' followed by an 8-byte two's-complement integer, or
/// 's' followed by the raw string bytes. See docs/state_format.md.
std::string serialize(const ServiceState& state);
ServiceState deserialize(std::string_view bytes);

struct HandleResult {
  ServiceState state;
  std::vector<std::string> outputs;
};

/// Applies one input message: `set <key> <value>` stores the value under
/// `settings.<key>`; `score <delta> [padding]` adds delta to `score`. Both
/// emit exactly one acknowledgement output. Throws ServiceError on a
/// malformed payload or when msg.id does not advance last_processed_id; the
/// input state is never modified.
HandleResult handle(const ServiceState& state, const Message& msg);

struct Checkpoint {
  std::string snapshot;
  std::size_t size_bytes = 0;
  Millis created_at = 0;
  std::string source_host;
  MessageId checkpoint_last_id = 0;
};

enum class Mode { Serving, Paused, Replaying, Stopped };

std::string_view to_string(Mode mode);

/// Timing of the containerised service, shared by all its instances.
struct ServiceProfile {
  Millis processing_ms = 1;
  Millis pause_ms = 0;
  Millis resume_ms = 0;

  double processing_rate_per_s() const;
};

struct OutputRecord {
  std::uint64_t seq = 0;
  Millis time = 0;
  std::string instance;
  MessageId input_id = 0;
  std::string payload;
};

struct ModeChange {
  std::uint64_t seq = 0;
  Millis time = 0;
  std::string instance;
  Mode mode = Mode::Paused;
};

/// Journal of everything observable about one logical service: every output
/// that reached the broker and every instance mode transition.
class Journal {
public:
  /// Both record kinds share one sequence counter, giving a total order.
  void record_output(OutputRecord record);
  void record_mode(ModeChange change);

  const std::vector<OutputRecord>& outputs() const { return outputs_; }
  const std::vector<ModeChange>& mode_changes() const { return modes_; }

  /// Largest number of instances simultaneously in Serving mode.
  std::size_t max_concurrent_serving() const;
  /// True if every output was published by an instance that was Serving.
  bool outputs_only_from_serving() const;

private:
  std::uint64_t next_seq_ = 0;
  std::vector<OutputRecord> outputs_;
  std::vector<ModeChange> modes_;
};

/// Runtime surroundings an instance needs. Everything is owned elsewhere and
/// must outlive the instance.
struct Context {
  sim::Simulator& sim;
  broker::Broker& broker;
  Journal& journal;
  std::string output_queue;
  Millis processing_ms = 1;
  Millis delivery_latency_ms = 0;
};

/// One running copy of the service on a host.
///
/// Consumption is sequential: a delivered message occupies the instance for
/// processing_ms, then is applied with handle(), acked, and its outputs are
/// published (Serving) or discarded (Replaying). Leaving a mode while a
/// message is being processed abandons it unapplied and unacked, so the broker
/// redelivers it; state is never torn.
class ServiceInstance {
public:
  using AppliedHook = std::function<void(const ServiceInstance&, const Message&)>;

  ServiceInstance(Context ctx, std::string id, std::string host, ServiceState state);

  ServiceInstance(const ServiceInstance&) = delete;
  ServiceInstance& operator=(const ServiceInstance&) = delete;
  ~ServiceInstance();

  /// New instance in mode Paused from a checkpoint.
  static std::unique_ptr<ServiceInstance> restore(Context ctx, std::string id, const Checkpoint& checkpoint,
                                                  std::string host);

  void pause();
  void resume(const std::string& queue);
  Checkpoint create_checkpoint() const;

  void enter_replay(const std::string& secondary);
  /// Stops consuming the secondary queue but stays in Replaying mode.
  void hold_replay();
  /// Consumes the secondary queue up to `watermark` with outputs suppressed,
  /// then switches to `main` in Serving mode and calls on_serving.
  void finish_replay(MessageId watermark, const std::string& main, std::function<void()> on_serving = {});

  /// Keeps serving until last_processed_id >= at_least, then stops consuming
  /// (mode Paused) and reports the final last_processed_id.
  void stop_consuming_at(MessageId at_least, std::function<void(MessageId)> on_stopped);

  void stop();
  /// Abrupt failure: like stop(), but also refuses any later lifecycle call.
  void crash();

  const std::string& id() const { return id_; }
  const std::string& host() const { return host_; }
  Mode mode() const { return mode_; }
  bool crashed() const { return crashed_; }
  const ServiceState& state() const { return state_; }
  const std::optional<std::string>& subscription() const { return subscription_; }

  std::size_t replayed_count() const { return replayed_count_; }
  /// Input ids applied while Replaying.
  const std::vector<MessageId>& replayed_ids() const { return replayed_ids_; }

  /// When enabled, outputs suppressed during replay are kept for inspection.
  void set_shadow_outputs(bool enabled) { shadow_enabled_ = enabled; }
  const std::vector<std::string>& shadow_outputs() const { return shadow_outputs_; }

  void set_on_applied(AppliedHook hook) { on_applied_ = std::move(hook); }

private:
  void set_mode(Mode mode);
  void require_alive(const char* op) const;
  void subscribe(const std::string& queue);
  void unsubscribe();
  void on_delivery(const Message& msg);
  void complete(const Message& msg, std::uint64_t token);
  void maybe_switch_after_replay();
  void maybe_stop_consuming();

  Context ctx_;
  std::string id_;
  std::string host_;
  ServiceState state_;
  Mode mode_ = Mode::Paused;
  bool crashed_ = false;
  std::optional<std::string> subscription_;
  std::uint64_t token_ = 0;
  std::optional<sim::EventId> pending_completion_;

  MessageId checkpoint_last_id_ = 0;
  std::string replay_secondary_;
  std::optional<MessageId> replay_watermark_;
  std::string replay_main_;
  std::function<void()> on_serving_;
  std::optional<MessageId> stop_at_;
  std::function<void(MessageId)> on_stopped_;

  std::size_t replayed_count_ = 0;
  std::vector<MessageId> replayed_ids_;
  bool shadow_enabled_ = false;
  std::vector<std::string> shadow_outputs_;
  AppliedHook on_applied_;
};

}  // namespace ms2m::service
