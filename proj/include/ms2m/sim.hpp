#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ms2m::sim {

/// Simulated time in milliseconds. Wall-clock time is never consulted.
using Millis = double;
using EventId = std::uint64_t;

inline constexpr Millis kForever = std::numeric_limits<Millis>::infinity();

class SimError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// One fired event, as recorded in the trace.
struct TraceEntry {
  Millis time = 0;
  EventId id = 0;
  std::string label;

  bool operator==(const TraceEntry&) const = default;
};

/// Portable seeded randomness. mt19937_64 output is fixed by the standard, the
/// distributions below are implemented locally so streams are identical on
/// every standard library.
class Random {
public:
  explicit Random(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Exponential with the given rate (events per unit), via inverse CDF.
  double exponential(double rate);
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);

private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer, used to derive independent per-trial seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Discrete-event loop with a single virtual clock.
///
/// Events are ordered by (time, insertion sequence), so events scheduled for
/// the same instant fire in the order they were scheduled. An action may
/// schedule further events, including at the current time.
class Simulator {
public:
  explicit Simulator(std::uint64_t seed = 0, bool record_trace = false);

  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  Millis now() const { return now_; }

  EventId schedule(Millis delay_ms, std::function<void()> action, std::string label = {});
  EventId schedule_at(Millis time_ms, std::function<void()> action, std::string label = {});
  /// Returns false if the event already fired or was cancelled.
  bool cancel(EventId id);

  /// Processes every event with timestamp <= end_ms, then advances the clock
  /// to end_ms (if finite). Returns the final simulated time.
  Millis run_until(Millis end_ms);
  /// Processes events until `stop` holds (checked before each event) or the
  /// queue is exhausted or the next event lies beyond end_ms.
  Millis run_until(const std::function<bool()>& stop, Millis end_ms = kForever);
  Millis run() { return run_until(kForever); }

  bool idle() const { return queue_.empty(); }
  std::size_t pending() const { return queue_.size(); }
  std::uint64_t fired() const { return fired_; }

  Random& rng() { return rng_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }

private:
  struct Key {
    Millis time;
    EventId seq;
    bool operator<(const Key& o) const { return time < o.time || (time == o.time && seq < o.seq); }
  };
  struct Pending {
    std::function<void()> action;
    std::string label;
  };

  bool step();

  Millis now_ = 0;
  EventId next_id_ = 1;
  std::uint64_t fired_ = 0;
  std::map<Key, Pending> queue_;
  std::unordered_map<EventId, Millis> index_;
  Random rng_;
  bool record_trace_;
  std::vector<TraceEntry> trace_;
};

/// fixed_ms + ms_per_kib * size / 1024
struct LinearCost {
  double fixed_ms = 0;
  double ms_per_kib = 0;

  Millis at(std::size_t size_bytes) const {
    return fixed_ms + ms_per_kib * (static_cast<double>(size_bytes) / 1024.0);
  }
  bool operator==(const LinearCost&) const = default;
};

struct Host {
  std::string id;
  std::string region;
  LinearCost checkpoint;
  LinearCost restore;
  /// Extra freeze time when the checkpointed process must be resumed in place
  /// afterwards (a live checkpoint). Only the message-replay technique pays it.
  double live_checkpoint_extra_ms = 0;
  /// Broker-to-consumer delivery latency for instances on this host.
  double delivery_latency_ms = 0;
};

struct Link {
  std::string from;
  std::string to;
  double latency_ms = 0;
  /// Infinity means size does not contribute to transfer time.
  double bandwidth_kib_per_s = std::numeric_limits<double>::infinity();
  /// Jitter is uniform in [0, jitter_fraction * latency_ms].
  double jitter_fraction = 0;
};

Millis checkpoint_duration(const Host& host, std::size_t size_bytes);
Millis restore_duration(const Host& host, std::size_t size_bytes);
/// Deterministic part of the transfer time (no jitter).
Millis transfer_duration(const Link& link, std::size_t size_bytes);
/// Transfer time including a jitter sample drawn from rng.
Millis transfer_duration(const Link& link, std::size_t size_bytes, Random& rng);

/// Hosts and directed links of one simulation.
class Network {
public:
  void add_host(Host host);
  void add_link(Link link);

  const Host& host(const std::string& id) const;
  /// Directed lookup; falls back to the reverse link when only one direction
  /// is configured.
  const Link& link(const std::string& from, const std::string& to) const;
  bool has_host(const std::string& id) const { return hosts_.count(id) != 0; }

  const std::map<std::string, Host>& hosts() const { return hosts_; }

private:
  std::map<std::string, Host> hosts_;
  std::map<std::pair<std::string, std::string>, Link> links_;
};

}  // namespace ms2m::sim
