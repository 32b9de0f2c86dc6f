#pragma once

#include "ms2m/sim.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ms2m::broker {

using sim::Millis;
/// Per-queue sequence number; the first message published on a queue is 1.
using MessageId = std::uint64_t;
using ConsumerId = std::string;

struct Message {
  MessageId id = 0;
  /// Queue the message was originally published on. Mirrored copies keep it.
  std::string topic;
  std::string payload;
  Millis publish_time = 0;

  bool operator==(const Message&) const = default;
};

struct DeliveryRecord {
  MessageId message_id = 0;
  ConsumerId consumer;
  Millis deliver_time = 0;
  bool acked = false;
};

struct Mirror {
  std::string target;
  MessageId start_id = 0;
};

class BrokerError : public std::runtime_error {
public:
  enum class Code {
    DuplicateQueue,
    UnknownQueue,
    AlreadySubscribed,
    NotSubscribed,
    MirrorActive,
    MirrorInactive,
    InvalidMirror,
    NotDelivered,
  };

  BrokerError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

private:
  Code code_;
};

/// Called when a message is delivered. The consumer must ack it before the
/// next message on that queue is delivered (prefetch of one).
using DeliveryHandler = std::function<void(const Message&)>;

class Queue {
public:
  const std::string& name() const { return name_; }
  /// Unacknowledged messages in id order.
  const std::deque<Message>& buffer() const { return buffer_; }
  /// Every message ever accepted, in id order.
  const std::vector<Message>& history() const { return history_; }
  const std::optional<ConsumerId>& subscriber() const { return subscriber_; }
  const std::optional<Mirror>& mirror() const { return mirror_; }
  const std::vector<DeliveryRecord>& deliveries() const { return deliveries_; }
  MessageId last_id() const { return next_id_ - 1; }

private:
  friend class Broker;

  explicit Queue(std::string name) : name_(std::move(name)) {}

  std::string name_;
  MessageId next_id_ = 1;
  std::deque<Message> buffer_;
  std::vector<Message> history_;
  std::optional<ConsumerId> subscriber_;
  DeliveryHandler handler_;
  Millis delivery_latency_ = 0;
  std::uint64_t epoch_ = 0;
  std::optional<MessageId> in_flight_;
  std::optional<std::size_t> in_flight_record_;
  std::optional<Mirror> mirror_;
  std::vector<DeliveryRecord> deliveries_;
};

/// In-memory broker with named FIFO queues, one exclusive consumer per queue,
/// at-least-once delivery with explicit acks, and queue mirroring.
///
/// Deliveries are scheduled on the simulator with the subscription's latency.
/// Unsubscribing returns any delivered-but-unacked message to the head of the
/// queue, so it is redelivered to the next subscriber.
class Broker {
public:
  explicit Broker(sim::Simulator& sim) : sim_(sim) {}

  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  const Queue& create_queue(const std::string& name);
  /// Removes the queue and anything still buffered in it. Also clears any
  /// mirror pointing at it.
  void delete_queue(const std::string& name);
  bool has_queue(std::string_view name) const;
  const Queue& queue(std::string_view name) const;

  MessageId publish(std::string_view queue, std::string payload);

  void subscribe(std::string_view queue, ConsumerId consumer, DeliveryHandler handler,
                 Millis delivery_latency_ms = 0);
  void unsubscribe(std::string_view queue, const ConsumerId& consumer);
  void ack(std::string_view queue, const ConsumerId& consumer, MessageId id);

  /// Copies every message of `main` with id >= start_id to `secondary`, both
  /// those already accepted and all future ones, keeping ids and order.
  void start_mirror(std::string_view main, std::string_view secondary, MessageId start_id);
  void stop_mirror(std::string_view main);

  /// Buffered (not yet acknowledged) message count.
  std::size_t backlog(std::string_view queue) const;

private:
  Queue& find(std::string_view name);
  const Queue& find(std::string_view name) const;
  void append(Queue& queue, Message message);
  void pump(Queue& queue);

  sim::Simulator& sim_;
  std::map<std::string, Queue, std::less<>> queues_;
};

}  // namespace ms2m::broker
