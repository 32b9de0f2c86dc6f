#include "ms2m/service.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <utility>

namespace ms2m::service {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

class Reader {
public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u64() { return read_le(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }
  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw ServiceError(ServiceError::Code::CorruptCheckpoint, "truncated state snapshot");
    }
  }
  std::uint64_t read_le(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string_view next_token(std::string_view& rest) {
  const auto space = rest.find(' ');
  auto token = rest.substr(0, space);
  rest = space == std::string_view::npos ? std::string_view{} : rest.substr(space + 1);
  return token;
}

[[noreturn]] void malformed(const Message& msg, const char* why) {
  throw ServiceError(ServiceError::Code::MalformedMessage,
                     "message " + std::to_string(msg.id) + ": " + why);
}

}  // namespace

std::string serialize(const ServiceState& state) {
  std::string out;
  put_u64(out, state.last_processed_id);
  put_u32(out, static_cast<std::uint32_t>(state.data.size()));
  // std::map<std::string> orders keys by char_traits<char>::compare, which is
  // unsigned byte order.
  for (const auto& [key, value] : state.data) {
    put_u32(out, static_cast<std::uint32_t>(key.size()));
    out += key;
    if (const auto* i = std::get_if<std::int64_t>(&value)) {
      put_u32(out, 9);
      out.push_back('i');
      put_u64(out, static_cast<std::uint64_t>(*i));
    } else {
      const auto& s = std::get<std::string>(value);
      put_u32(out, static_cast<std::uint32_t>(s.size() + 1));
      out.push_back('s');
      out += s;
    }
  }
  return out;
}

ServiceState deserialize(std::string_view bytes) {
  Reader in(bytes);
  ServiceState state;
  state.last_processed_id = in.u64();
  const std::uint32_t count = in.u32();
  std::string previous;
  for (std::uint32_t n = 0; n < count; ++n) {
    std::string key(in.take(in.u32()));
    if (n > 0 && !(previous < key)) {
      throw ServiceError(ServiceError::Code::CorruptCheckpoint, "state keys not in canonical order");
    }
    const std::uint32_t len = in.u32();
    if (len == 0) {
      throw ServiceError(ServiceError::Code::CorruptCheckpoint, "empty value encoding");
    }
    const std::string_view raw = in.take(len);
    if (raw[0] == 'i' && len == 9) {
      Reader num(raw.substr(1));
      state.data.emplace(key, static_cast<std::int64_t>(num.u64()));
    } else if (raw[0] == 's') {
      state.data.emplace(key, std::string(raw.substr(1)));
    } else {
      throw ServiceError(ServiceError::Code::CorruptCheckpoint, "unknown value tag");
    }
    previous = std::move(key);
  }
  if (!in.done()) {
    throw ServiceError(ServiceError::Code::CorruptCheckpoint, "trailing bytes after state");
  }
  return state;
}

HandleResult handle(const ServiceState& state, const Message& msg) {
  if (msg.id <= state.last_processed_id) {
    throw ServiceError(ServiceError::Code::DuplicateOrOutOfOrder,
                       "message " + std::to_string(msg.id) + " does not follow " +
                           std::to_string(state.last_processed_id));
  }
  std::string_view rest = msg.payload;
  const std::string_view verb = next_token(rest);
  HandleResult result{state, {}};
  const std::string ack = "ack " + std::to_string(msg.id) + " ";
  if (verb == "set") {
    const std::string_view key = next_token(rest);
    if (key.empty()) {
      malformed(msg, "set without key");
    }
    const std::string full_key = "settings." + std::string(key);
    result.state.data[full_key] = std::string(rest);
    result.outputs.push_back(ack + "set " + std::string(key));
  } else if (verb == "score") {
    const std::string_view digits = next_token(rest);
    std::int64_t delta = 0;
    const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), delta);
    if (ec != std::errc{} || end != digits.data() + digits.size() || digits.empty()) {
      malformed(msg, "score delta is not an integer");
    }
    auto& slot = result.state.data["score"];
    const std::int64_t* current = std::get_if<std::int64_t>(&slot);
    const std::int64_t total = (current ? *current : 0) + delta;
    slot = total;
    result.outputs.push_back(ack + "score " + std::to_string(total));
  } else {
    malformed(msg, "unknown verb");
  }
  result.state.last_processed_id = msg.id;
  return result;
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Serving: return "Serving";
    case Mode::Paused: return "Paused";
    case Mode::Replaying: return "Replaying";
    case Mode::Stopped: return "Stopped";
  }
  return "?";
}

double ServiceProfile::processing_rate_per_s() const {
  return processing_ms > 0 ? 1000.0 / processing_ms : std::numeric_limits<double>::infinity();
}

void Journal::record_output(OutputRecord record) {
  record.seq = next_seq_++;
  outputs_.push_back(std::move(record));
}

void Journal::record_mode(ModeChange change) {
  change.seq = next_seq_++;
  modes_.push_back(std::move(change));
}

std::size_t Journal::max_concurrent_serving() const {
  std::set<std::string> serving;
  std::size_t peak = 0;
  for (const auto& change : modes_) {
    if (change.mode == Mode::Serving) {
      serving.insert(change.instance);
    } else {
      serving.erase(change.instance);
    }
    peak = std::max(peak, serving.size());
  }
  return peak;
}

bool Journal::outputs_only_from_serving() const {
  std::set<std::string> serving;
  std::size_t m = 0;
  for (const auto& out : outputs_) {
    while (m < modes_.size() && modes_[m].seq < out.seq) {
      if (modes_[m].mode == Mode::Serving) {
        serving.insert(modes_[m].instance);
      } else {
        serving.erase(modes_[m].instance);
      }
      ++m;
    }
    if (serving.count(out.instance) == 0) {
      return false;
    }
  }
  return true;
}

ServiceInstance::ServiceInstance(Context ctx, std::string id, std::string host, ServiceState state)
    : ctx_(std::move(ctx)), id_(std::move(id)), host_(std::move(host)), state_(std::move(state)) {
  checkpoint_last_id_ = state_.last_processed_id;
  ctx_.journal.record_mode({0, ctx_.sim.now(), id_, mode_});
}

ServiceInstance::~ServiceInstance() {
  if (pending_completion_) {
    ctx_.sim.cancel(*pending_completion_);
  }
  if (subscription_ && ctx_.broker.has_queue(*subscription_)) {
    const auto& sub = ctx_.broker.queue(*subscription_).subscriber();
    if (sub && *sub == id_) {
      ctx_.broker.unsubscribe(*subscription_, id_);
    }
  }
}

std::unique_ptr<ServiceInstance> ServiceInstance::restore(Context ctx, std::string id, const Checkpoint& checkpoint,
                                                          std::string host) {
  if (checkpoint.snapshot.size() != checkpoint.size_bytes) {
    throw ServiceError(ServiceError::Code::CorruptCheckpoint, "checkpoint size does not match snapshot");
  }
  ServiceState state = deserialize(checkpoint.snapshot);
  if (state.last_processed_id != checkpoint.checkpoint_last_id) {
    throw ServiceError(ServiceError::Code::CorruptCheckpoint, "checkpoint watermark does not match snapshot");
  }
  return std::make_unique<ServiceInstance>(std::move(ctx), std::move(id), std::move(host), std::move(state));
}

void ServiceInstance::set_mode(Mode mode) {
  if (mode == mode_) {
    return;
  }
  mode_ = mode;
  ctx_.journal.record_mode({0, ctx_.sim.now(), id_, mode_});
}

void ServiceInstance::require_alive(const char* op) const {
  if (crashed_) {
    throw ServiceError(ServiceError::Code::InvalidMode, std::string(op) + ": instance " + id_ + " has crashed");
  }
}

void ServiceInstance::subscribe(const std::string& queue) {
  ctx_.broker.subscribe(
      queue, id_, [this](const Message& msg) { on_delivery(msg); }, ctx_.delivery_latency_ms);
  subscription_ = queue;
}

void ServiceInstance::unsubscribe() {
  ++token_;
  if (pending_completion_) {
    ctx_.sim.cancel(*pending_completion_);
    pending_completion_.reset();
  }
  if (subscription_) {
    if (ctx_.broker.has_queue(*subscription_)) {
      ctx_.broker.unsubscribe(*subscription_, id_);
    }
    subscription_.reset();
  }
}

void ServiceInstance::on_delivery(const Message& msg) {
  const std::uint64_t token = token_;
  pending_completion_ = ctx_.sim.schedule(
      ctx_.processing_ms, [this, msg, token] { complete(msg, token); }, "apply " + id_ + " #" + std::to_string(msg.id));
}

void ServiceInstance::complete(const Message& msg, std::uint64_t token) {
  if (token != token_) {
    return;
  }
  pending_completion_.reset();
  const std::string queue = *subscription_;
  if (msg.id <= state_.last_processed_id) {
    // Redelivery of something already applied (at-least-once broker).
    ctx_.broker.ack(queue, id_, msg.id);
    return;
  }
  HandleResult result = handle(state_, msg);
  state_ = std::move(result.state);
  ctx_.broker.ack(queue, id_, msg.id);
  if (mode_ == Mode::Serving) {
    for (auto& out : result.outputs) {
      ctx_.broker.publish(ctx_.output_queue, out);
      ctx_.journal.record_output({0, ctx_.sim.now(), id_, msg.id, std::move(out)});
    }
  } else {
    ++replayed_count_;
    replayed_ids_.push_back(msg.id);
    if (shadow_enabled_) {
      for (auto& out : result.outputs) {
        shadow_outputs_.push_back(std::move(out));
      }
    }
  }
  if (on_applied_) {
    on_applied_(*this, msg);
  }
  maybe_switch_after_replay();
  maybe_stop_consuming();
}

void ServiceInstance::pause() {
  require_alive("pause");
  if (mode_ != Mode::Serving) {
    throw ServiceError(ServiceError::Code::InvalidMode, "pause requires Serving, instance is " +
                                                            std::string(to_string(mode_)));
  }
  unsubscribe();
  set_mode(Mode::Paused);
}

void ServiceInstance::resume(const std::string& queue) {
  require_alive("resume");
  if (mode_ != Mode::Paused) {
    throw ServiceError(ServiceError::Code::InvalidMode, "resume requires Paused, instance is " +
                                                             std::string(to_string(mode_)));
  }
  set_mode(Mode::Serving);
  subscribe(queue);
}

Checkpoint ServiceInstance::create_checkpoint() const {
  require_alive("checkpoint");
  if (mode_ != Mode::Paused) {
    throw ServiceError(ServiceError::Code::InvalidMode, "checkpoint requires a paused instance");
  }
  Checkpoint cp;
  cp.snapshot = serialize(state_);
  cp.size_bytes = cp.snapshot.size();
  cp.created_at = ctx_.sim.now();
  cp.source_host = host_;
  cp.checkpoint_last_id = state_.last_processed_id;
  return cp;
}

void ServiceInstance::enter_replay(const std::string& secondary) {
  require_alive("enter_replay");
  if (mode_ != Mode::Paused) {
    throw ServiceError(ServiceError::Code::InvalidMode, "enter_replay requires a freshly restored instance");
  }
  replay_secondary_ = secondary;
  set_mode(Mode::Replaying);
  subscribe(secondary);
}

void ServiceInstance::hold_replay() {
  require_alive("hold_replay");
  if (mode_ != Mode::Replaying) {
    throw ServiceError(ServiceError::Code::InvalidMode, "hold_replay requires Replaying");
  }
  unsubscribe();
}

void ServiceInstance::finish_replay(MessageId watermark, const std::string& main, std::function<void()> on_serving) {
  require_alive("finish_replay");
  if (mode_ != Mode::Replaying) {
    throw ServiceError(ServiceError::Code::InvalidMode, "finish_replay requires Replaying");
  }
  if (watermark < checkpoint_last_id_) {
    throw ServiceError(ServiceError::Code::ProtocolError,
                       "watermark " + std::to_string(watermark) + " precedes checkpoint id " +
                           std::to_string(checkpoint_last_id_));
  }
  if (state_.last_processed_id > watermark) {
    throw ServiceError(ServiceError::Code::ProtocolError, "replay already passed watermark " +
                                                              std::to_string(watermark));
  }
  replay_watermark_ = watermark;
  replay_main_ = main;
  on_serving_ = std::move(on_serving);
  if (state_.last_processed_id == watermark) {
    maybe_switch_after_replay();
  } else if (!subscription_) {
    subscribe(replay_secondary_);
  }
}

void ServiceInstance::maybe_switch_after_replay() {
  if (mode_ != Mode::Replaying || !replay_watermark_ || state_.last_processed_id < *replay_watermark_) {
    return;
  }
  unsubscribe();
  replay_watermark_.reset();
  set_mode(Mode::Serving);
  subscribe(replay_main_);
  if (auto done = std::exchange(on_serving_, nullptr)) {
    done();
  }
}

void ServiceInstance::stop_consuming_at(MessageId at_least, std::function<void(MessageId)> on_stopped) {
  require_alive("stop_consuming_at");
  if (mode_ != Mode::Serving) {
    throw ServiceError(ServiceError::Code::InvalidMode, "stop_consuming_at requires Serving");
  }
  stop_at_ = at_least;
  on_stopped_ = std::move(on_stopped);
  maybe_stop_consuming();
}

void ServiceInstance::maybe_stop_consuming() {
  if (mode_ != Mode::Serving || !stop_at_ || state_.last_processed_id < *stop_at_) {
    return;
  }
  stop_at_.reset();
  unsubscribe();
  set_mode(Mode::Paused);
  if (auto done = std::exchange(on_stopped_, nullptr)) {
    done(state_.last_processed_id);
  }
}

void ServiceInstance::stop() {
  unsubscribe();
  stop_at_.reset();
  on_stopped_ = nullptr;
  replay_watermark_.reset();
  on_serving_ = nullptr;
  set_mode(Mode::Stopped);
}

void ServiceInstance::crash() {
  stop();
  crashed_ = true;
}

}  // namespace ms2m::service
