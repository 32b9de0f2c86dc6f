#include "ms2m/workload.hpp"

#include <cmath>
#include <stdexcept>

namespace ms2m::workload {

namespace {

std::string padded(std::string text, std::size_t size) {
  if (text.size() < size) {
    text.append(size - text.size(), '.');
  }
  return text;
}

std::string score_payload(sim::Random& rng, std::size_t size) {
  // Trailing space separates the delta from the padding.
  return padded("score " + std::to_string(rng.integer(1, 10)) + " ", size);
}

}  // namespace

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::GameSession: return "game_session";
    case Kind::ConstantRate: return "constant_rate";
    case Kind::Poisson: return "poisson";
  }
  return "?";
}

Kind parse_kind(std::string_view name) {
  if (name == "game_session") return Kind::GameSession;
  if (name == "constant_rate") return Kind::ConstantRate;
  if (name == "poisson") return Kind::Poisson;
  throw std::invalid_argument("unknown workload kind: " + std::string(name));
}

std::vector<TimedPayload> generate(const WorkloadSpec& spec) {
  if (spec.arrival_rate < 0 || spec.duration_ms < 0) {
    throw std::invalid_argument("workload rate and duration must be >= 0");
  }
  std::vector<TimedPayload> out;
  if (spec.arrival_rate == 0 || spec.duration_ms == 0) {
    return out;
  }
  sim::Random rng(spec.seed);
  const Millis interval = 1000.0 / spec.arrival_rate;
  const auto full = [&] { return spec.max_messages != 0 && out.size() >= spec.max_messages; };

  switch (spec.kind) {
    case Kind::GameSession: {
      out.push_back({0.0, padded("set difficulty ", spec.payload_size_bytes)});
      for (std::size_t k = 1; !full(); ++k) {
        const Millis t = static_cast<double>(k) * interval;
        if (t >= spec.duration_ms) break;
        out.push_back({t, score_payload(rng, spec.payload_size_bytes)});
      }
      break;
    }
    case Kind::ConstantRate: {
      for (std::size_t k = 0; !full(); ++k) {
        const Millis t = static_cast<double>(k) * interval;
        if (t >= spec.duration_ms) break;
        out.push_back({t, score_payload(rng, spec.payload_size_bytes)});
      }
      break;
    }
    case Kind::Poisson: {
      const double rate_per_ms = spec.arrival_rate / 1000.0;
      Millis t = rng.exponential(rate_per_ms);
      while (t < spec.duration_ms && !full()) {
        out.push_back({t, score_payload(rng, spec.payload_size_bytes)});
        t += rng.exponential(rate_per_ms);
      }
      break;
    }
  }
  return out;
}

WorkloadSpec replay_stress_spec(double ratio, double processing_rate_per_s, WorkloadSpec base) {
  if (ratio < 0 || !(processing_rate_per_s > 0) || std::isinf(processing_rate_per_s)) {
    throw std::invalid_argument("stress ratio needs ratio >= 0 and a finite processing rate");
  }
  base.arrival_rate = ratio * processing_rate_per_s;
  return base;
}

}  // namespace ms2m::workload
