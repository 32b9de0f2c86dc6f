#include "ms2m/sim.hpp"

#include <cmath>
#include <utility>

namespace ms2m::sim {

double Random::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Random::exponential(double rate) {
  if (rate <= 0) {
    throw SimError("exponential rate must be positive");
  }
  return -std::log1p(-uniform()) / rate;
}

std::int64_t Random::integer(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) {
    throw SimError("empty integer range");
  }
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) {
    return static_cast<std::int64_t>(engine_());
  }
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t draw = engine_();
  while (draw >= limit) {
    draw = engine_();
  }
  return lo + static_cast<std::int64_t>(draw % span);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Simulator::Simulator(std::uint64_t seed, bool record_trace)
    : rng_(seed), record_trace_(record_trace) {}

EventId Simulator::schedule(Millis delay_ms, std::function<void()> action, std::string label) {
  if (!(delay_ms >= 0)) {
    throw SimError("negative or NaN delay: " + std::to_string(delay_ms));
  }
  return schedule_at(now_ + delay_ms, std::move(action), std::move(label));
}

EventId Simulator::schedule_at(Millis time_ms, std::function<void()> action, std::string label) {
  if (!(time_ms >= now_)) {
    throw SimError("cannot schedule in the past");
  }
  const EventId id = next_id_++;
  queue_.emplace(Key{time_ms, id}, Pending{std::move(action), std::move(label)});
  index_.emplace(id, time_ms);
  return id;
}

bool Simulator::cancel(EventId id) {
  const auto it = index_.find(id);
  if (it == index_.end()) {
    return false;
  }
  queue_.erase(Key{it->second, id});
  index_.erase(it);
  return true;
}

bool Simulator::step() {
  auto node = queue_.extract(queue_.begin());
  index_.erase(node.key().seq);
  now_ = node.key().time;
  ++fired_;
  if (record_trace_) {
    trace_.push_back({now_, node.key().seq, node.mapped().label});
  }
  node.mapped().action();
  return true;
}

Millis Simulator::run_until(Millis end_ms) {
  while (!queue_.empty() && queue_.begin()->first.time <= end_ms) {
    step();
  }
  if (std::isfinite(end_ms) && end_ms > now_) {
    now_ = end_ms;
  }
  return now_;
}

Millis Simulator::run_until(const std::function<bool()>& stop, Millis end_ms) {
  while (!queue_.empty() && !stop() && queue_.begin()->first.time <= end_ms) {
    step();
  }
  return now_;
}

Millis checkpoint_duration(const Host& host, std::size_t size_bytes) {
  return host.checkpoint.at(size_bytes);
}

Millis restore_duration(const Host& host, std::size_t size_bytes) {
  return host.restore.at(size_bytes);
}

Millis transfer_duration(const Link& link, std::size_t size_bytes) {
  const double kib = static_cast<double>(size_bytes) / 1024.0;
  const double streaming = std::isinf(link.bandwidth_kib_per_s) ? 0.0 : kib / link.bandwidth_kib_per_s * 1000.0;
  return link.latency_ms + streaming;
}

Millis transfer_duration(const Link& link, std::size_t size_bytes, Random& rng) {
  Millis base = transfer_duration(link, size_bytes);
  if (link.jitter_fraction > 0 && link.latency_ms > 0) {
    base += rng.uniform(0.0, link.jitter_fraction * link.latency_ms);
  }
  return base;
}

void Network::add_host(Host host) {
  if (host.checkpoint.fixed_ms < 0 || host.checkpoint.ms_per_kib < 0 || host.restore.fixed_ms < 0 ||
      host.restore.ms_per_kib < 0 || host.live_checkpoint_extra_ms < 0 || host.delivery_latency_ms < 0) {
    throw SimError("host " + host.id + ": cost coefficients must be >= 0");
  }
  auto id = host.id;
  if (!hosts_.emplace(id, std::move(host)).second) {
    throw SimError("duplicate host " + id);
  }
}

void Network::add_link(Link link) {
  if (!has_host(link.from) || !has_host(link.to)) {
    throw SimError("link " + link.from + "->" + link.to + " references an unknown host");
  }
  if (link.latency_ms < 0 || !(link.bandwidth_kib_per_s > 0) || link.jitter_fraction < 0) {
    throw SimError("link " + link.from + "->" + link.to + ": invalid parameters");
  }
  auto key = std::make_pair(link.from, link.to);
  links_[key] = std::move(link);
}

const Host& Network::host(const std::string& id) const {
  const auto it = hosts_.find(id);
  if (it == hosts_.end()) {
    throw SimError("unknown host " + id);
  }
  return it->second;
}

const Link& Network::link(const std::string& from, const std::string& to) const {
  if (const auto it = links_.find({from, to}); it != links_.end()) {
    return it->second;
  }
  if (const auto it = links_.find({to, from}); it != links_.end()) {
    return it->second;
  }
  throw SimError("no link between " + from + " and " + to);
}

}  // namespace ms2m::sim
