#pragma once

#include "ms2m/sim.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ms2m::workload {

using sim::Millis;

enum class Kind { GameSession, ConstantRate, Poisson };

std::string_view to_string(Kind kind);
Kind parse_kind(std::string_view name);

struct WorkloadSpec {
  Kind kind = Kind::GameSession;
  double arrival_rate = 10;  // messages per second
  Millis duration_ms = 10'000;
  std::size_t payload_size_bytes = 128;
  std::uint64_t seed = 1;
  /// Truncates the stream after this many messages; 0 keeps everything.
  std::size_t max_messages = 0;
};

struct TimedPayload {
  Millis publish_ms = 0;
  std::string payload;

  bool operator==(const TimedPayload&) const = default;
};

/// Deterministic input stream, ordered by publish time.
///
/// GameSession: one `set difficulty ...` message at t=0, then score messages
/// every 1000/arrival_rate ms. ConstantRate: score messages at t = k/rate.
/// Poisson: score messages with exponential inter-arrival times. Score deltas
/// are drawn from the seed. Payloads are padded with '.' to
/// payload_size_bytes (settings values carry the padding, so they grow the
/// service state; score padding does not).
std::vector<TimedPayload> generate(const WorkloadSpec& spec);

/// Spec whose arrival rate is `ratio` times the service's processing rate.
WorkloadSpec replay_stress_spec(double ratio, double processing_rate_per_s, WorkloadSpec base = {});

}  // namespace ms2m::workload
