#include "ms2m/broker.hpp"

#include <algorithm>
#include <utility>

namespace ms2m::broker {

namespace {

std::uint64_t next_epoch() {
  // Epochs are only compared for equality within one broker's events, but a
  // process-wide counter keeps them unique even across re-created queues.
  static thread_local std::uint64_t counter = 0;
  return ++counter;
}

}  // namespace

const Queue& Broker::create_queue(const std::string& name) {
  if (queues_.count(name) != 0) {
    throw BrokerError(BrokerError::Code::DuplicateQueue, "queue already exists: " + name);
  }
  auto [it, _] = queues_.emplace(name, Queue(name));
  return it->second;
}

void Broker::delete_queue(const std::string& name) {
  auto it = queues_.find(name);
  if (it == queues_.end()) {
    throw BrokerError(BrokerError::Code::UnknownQueue, "unknown queue: " + name);
  }
  queues_.erase(it);
  for (auto& [_, q] : queues_) {
    if (q.mirror_ && q.mirror_->target == name) {
      q.mirror_.reset();
    }
  }
}

bool Broker::has_queue(std::string_view name) const { return queues_.find(name) != queues_.end(); }

const Queue& Broker::queue(std::string_view name) const { return find(name); }

Queue& Broker::find(std::string_view name) {
  auto it = queues_.find(name);
  if (it == queues_.end()) {
    throw BrokerError(BrokerError::Code::UnknownQueue, "unknown queue: " + std::string(name));
  }
  return it->second;
}

const Queue& Broker::find(std::string_view name) const {
  auto it = queues_.find(name);
  if (it == queues_.end()) {
    throw BrokerError(BrokerError::Code::UnknownQueue, "unknown queue: " + std::string(name));
  }
  return it->second;
}

MessageId Broker::publish(std::string_view queue_name, std::string payload) {
  Queue& q = find(queue_name);
  Message message{q.next_id_, q.name_, std::move(payload), sim_.now()};
  append(q, message);
  if (q.mirror_ && message.id >= q.mirror_->start_id) {
    append(find(q.mirror_->target), message);
  }
  return message.id;
}

void Broker::append(Queue& q, Message message) {
  q.next_id_ = std::max(q.next_id_, message.id + 1);
  q.history_.push_back(message);
  q.buffer_.push_back(std::move(message));
  pump(q);
}

void Broker::pump(Queue& q) {
  if (!q.subscriber_ || q.in_flight_ || q.buffer_.empty()) {
    return;
  }
  const MessageId id = q.buffer_.front().id;
  const std::uint64_t epoch = q.epoch_;
  q.in_flight_ = id;
  sim_.schedule(
      q.delivery_latency_,
      [this, name = q.name_, epoch, id] {
        auto it = queues_.find(name);
        if (it == queues_.end() || it->second.epoch_ != epoch) {
          return;
        }
        Queue& live = it->second;
        live.in_flight_record_ = live.deliveries_.size();
        live.deliveries_.push_back({id, *live.subscriber_, sim_.now(), false});
        // Copies: the handler may unsubscribe or ack, which mutates the queue.
        DeliveryHandler handler = live.handler_;
        Message message = live.buffer_.front();
        handler(message);
      },
      "deliver " + q.name_ + "#" + std::to_string(id));
}

void Broker::subscribe(std::string_view queue_name, ConsumerId consumer, DeliveryHandler handler,
                       Millis delivery_latency_ms) {
  Queue& q = find(queue_name);
  if (q.subscriber_) {
    throw BrokerError(BrokerError::Code::AlreadySubscribed,
                      "queue " + q.name_ + " already consumed by " + *q.subscriber_);
  }
  q.subscriber_ = std::move(consumer);
  q.handler_ = std::move(handler);
  q.delivery_latency_ = delivery_latency_ms;
  q.epoch_ = next_epoch();
  q.in_flight_.reset();
  q.in_flight_record_.reset();
  pump(q);
}

void Broker::unsubscribe(std::string_view queue_name, const ConsumerId& consumer) {
  Queue& q = find(queue_name);
  if (!q.subscriber_ || *q.subscriber_ != consumer) {
    throw BrokerError(BrokerError::Code::NotSubscribed, consumer + " is not subscribed to " + q.name_);
  }
  q.subscriber_.reset();
  q.handler_ = nullptr;
  q.epoch_ = next_epoch();
  q.in_flight_.reset();
  q.in_flight_record_.reset();
}

void Broker::ack(std::string_view queue_name, const ConsumerId& consumer, MessageId id) {
  Queue& q = find(queue_name);
  if (!q.subscriber_ || *q.subscriber_ != consumer || q.in_flight_ != id || !q.in_flight_record_) {
    throw BrokerError(BrokerError::Code::NotDelivered,
                      "message " + std::to_string(id) + " on " + q.name_ + " not delivered to " + consumer);
  }
  q.deliveries_[*q.in_flight_record_].acked = true;
  q.buffer_.pop_front();
  q.in_flight_.reset();
  q.in_flight_record_.reset();
  pump(q);
}

void Broker::start_mirror(std::string_view main, std::string_view secondary, MessageId start_id) {
  Queue& src = find(main);
  Queue& dst = find(secondary);
  if (&src == &dst) {
    throw BrokerError(BrokerError::Code::InvalidMirror, "queue cannot mirror into itself");
  }
  if (src.mirror_) {
    throw BrokerError(BrokerError::Code::MirrorActive, "mirror already active on " + src.name_);
  }
  src.mirror_ = Mirror{dst.name_, start_id};
  for (const Message& m : src.history_) {
    if (m.id >= start_id) {
      append(dst, m);
    }
  }
}

void Broker::stop_mirror(std::string_view main) {
  Queue& q = find(main);
  if (!q.mirror_) {
    throw BrokerError(BrokerError::Code::MirrorInactive, "no mirror on " + q.name_);
  }
  q.mirror_.reset();
}

std::size_t Broker::backlog(std::string_view queue_name) const { return find(queue_name).buffer_.size(); }

}  // namespace ms2m::broker
