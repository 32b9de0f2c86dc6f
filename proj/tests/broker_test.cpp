#include "ms2m/broker.hpp"

#include <doctest.h>

#include <string>
#include <vector>

using namespace ms2m;
using broker::Broker;
using broker::BrokerError;
using broker::Message;
using broker::MessageId;

namespace {

std::vector<MessageId> ids_of(const std::deque<Message>& buf) {
  std::vector<MessageId> out;
  for (const auto& m : buf) out.push_back(m.id);
  return out;
}

BrokerError::Code code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const BrokerError& e) {
    return e.code();
  }
  FAIL("expected a BrokerError");
  return BrokerError::Code::UnknownQueue;
}

// Consumer that records every delivery and acks it immediately.
struct AutoAck {
  Broker& broker;
  std::string queue;
  std::string name;
  std::vector<MessageId> seen;

  void attach(double latency = 0) {
    broker.subscribe(queue, name, [this](const Message& m) {
      seen.push_back(m.id);
      broker.ack(queue, name, m.id);
    }, latency);
  }
};

}  // namespace

TEST_CASE("create_queue gives an empty queue and rejects duplicates") {
  sim::Simulator sim;
  Broker b(sim);
  const auto& q = b.create_queue("main");
  CHECK(q.name() == "main");
  CHECK(q.buffer().empty());
  CHECK_FALSE(q.subscriber());
  CHECK_FALSE(q.mirror());
  CHECK(q.last_id() == 0);
  CHECK(code_of([&] { b.create_queue("main"); }) == BrokerError::Code::DuplicateQueue);
}

TEST_CASE("ids start at 1 per queue and increase without gaps") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("main");
  b.create_queue("secondary");
  CHECK(b.publish("secondary", "x") == 1);
  for (MessageId i = 1; i <= 5; ++i) CHECK(b.publish("main", "m") == i);
  CHECK(b.publish("main", "b1") == 6);
  CHECK(b.backlog("main") == 6);
  CHECK(code_of([&] { b.publish("nope", "x"); }) == BrokerError::Code::UnknownQueue);
}

TEST_CASE("mirror duplicates messages with id >= start_id") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("main");
  b.create_queue("secondary");
  for (int i = 0; i < 6; ++i) b.publish("main", "m");
  b.start_mirror("main", "secondary", 4);
  CHECK(ids_of(b.queue("secondary").buffer()) == std::vector<MessageId>{4, 5, 6});
  CHECK(b.publish("main", "b") == 7);
  CHECK(ids_of(b.queue("secondary").buffer()) == std::vector<MessageId>{4, 5, 6, 7});
  const Message& copy = b.queue("secondary").buffer().back();
  CHECK(copy.payload == "b");
  CHECK(copy.topic == "main");
  CHECK(code_of([&] { b.start_mirror("main", "secondary", 1); }) == BrokerError::Code::MirrorActive);
  b.stop_mirror("main");
  b.publish("main", "after");
  CHECK(b.queue("secondary").buffer().size() == 4);
  CHECK(code_of([&] { b.stop_mirror("main"); }) == BrokerError::Code::MirrorInactive);
  CHECK(code_of([&] { b.start_mirror("main", "main", 1); }) == BrokerError::Code::InvalidMirror);
}

TEST_CASE("mirror started from the next id then three publishes") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("main");
  b.create_queue("secondary");
  b.publish("main", "old");
  b.start_mirror("main", "secondary", b.queue("main").last_id() + 1);
  b.publish("main", "a");
  b.publish("main", "b");
  b.publish("main", "c");
  const auto& sec = b.queue("secondary").buffer();
  REQUIRE(sec.size() == 3);
  CHECK(sec[0].payload == "a");
  CHECK(sec[1].payload == "b");
  CHECK(sec[2].payload == "c");
}

TEST_CASE("mirror with start_id beyond the current max stays empty") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("main");
  b.create_queue("secondary");
  b.publish("main", "a");
  b.start_mirror("main", "secondary", 50);
  CHECK(b.queue("secondary").buffer().empty());
}

TEST_CASE("mirror completeness over random interleavings") {
  for (std::uint64_t seed = 1; seed <= 300; ++seed) {
    sim::Simulator sim;
    sim::Random rng(seed);
    Broker b(sim);
    b.create_queue("main");
    b.create_queue("sec");
    const int before = static_cast<int>(rng.integer(0, 20));
    const int after = static_cast<int>(rng.integer(0, 20));
    for (int i = 0; i < before; ++i) b.publish("main", "p" + std::to_string(rng.integer(0, 999)));
    const auto start = static_cast<MessageId>(rng.integer(1, before + after + 2));
    b.start_mirror("main", "sec", start);
    // Consumption of main must not affect the mirror.
    AutoAck consumer{b, "main", "c"};
    if (rng.integer(0, 1) == 1) consumer.attach();
    for (int i = 0; i < after; ++i) {
      b.publish("main", "q" + std::to_string(rng.integer(0, 999)));
      if (rng.integer(0, 2) == 0) sim.run();
    }
    sim.run();

    std::vector<Message> expected;
    for (const auto& m : b.queue("main").history()) {
      if (m.id >= start) expected.push_back(m);
    }
    const auto& got = b.queue("sec").buffer();
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == expected[i].id);
      CHECK(got[i].payload == expected[i].payload);
    }
  }
}

TEST_CASE("deliveries are in id order with ack-driven flow") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("q");
  for (int i = 0; i < 5; ++i) b.publish("q", "m");
  AutoAck c{b, "q", "c"};
  c.attach(2);
  sim.run();
  CHECK(c.seen == std::vector<MessageId>{1, 2, 3, 4, 5});
  CHECK(b.backlog("q") == 0);
  CHECK(sim.now() == 10);
  const auto& d = b.queue("q").deliveries();
  REQUIRE(d.size() == 5);
  CHECK(d.front().acked);
  CHECK(d.front().deliver_time == 2);
}

TEST_CASE("exclusive consumer discipline") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("q");
  b.subscribe("q", "a", [](const Message&) {});
  CHECK(code_of([&] { b.subscribe("q", "b", [](const Message&) {}); }) == BrokerError::Code::AlreadySubscribed);
  CHECK(code_of([&] { b.unsubscribe("q", "b"); }) == BrokerError::Code::NotSubscribed);
  b.unsubscribe("q", "a");
  CHECK_FALSE(b.queue("q").subscriber());
  CHECK(code_of([&] { b.unsubscribe("q", "a"); }) == BrokerError::Code::NotSubscribed);
}

TEST_CASE("unacked messages stay buffered and are redelivered to the next subscriber") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("q");
  b.publish("q", "one");
  b.publish("q", "two");
  std::vector<MessageId> first;
  b.subscribe("q", "a", [&](const Message& m) { first.push_back(m.id); });
  sim.run();
  CHECK(first == std::vector<MessageId>{1});
  b.unsubscribe("q", "a");
  CHECK(b.backlog("q") == 2);

  AutoAck c{b, "q", "b"};
  c.attach();
  sim.run();
  CHECK(c.seen == std::vector<MessageId>{1, 2});
  CHECK(b.backlog("q") == 0);
}

TEST_CASE("with no subscriber nothing is dropped") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("q");
  for (int i = 0; i < 1000; ++i) b.publish("q", std::to_string(i));
  sim.run();
  CHECK(b.backlog("q") == 1000);
  CHECK(b.queue("q").buffer().back().payload == "999");
}

TEST_CASE("ack must match the delivered message") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("q");
  b.publish("q", "m");
  CHECK(code_of([&] { b.ack("q", "a", 1); }) == BrokerError::Code::NotDelivered);
  b.subscribe("q", "a", [](const Message&) {}, 5);
  // Scheduled but not yet delivered.
  CHECK(code_of([&] { b.ack("q", "a", 1); }) == BrokerError::Code::NotDelivered);
  sim.run();
  CHECK(code_of([&] { b.ack("q", "a", 2); }) == BrokerError::Code::NotDelivered);
  CHECK(code_of([&] { b.ack("q", "zz", 1); }) == BrokerError::Code::NotDelivered);
  b.ack("q", "a", 1);
  CHECK(b.backlog("q") == 0);
}

TEST_CASE("a delivery scheduled before unsubscribe is dropped") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("q");
  b.publish("q", "m");
  int calls = 0;
  b.subscribe("q", "a", [&](const Message&) { ++calls; }, 10);
  sim.run_until(5);
  b.unsubscribe("q", "a");
  sim.run();
  CHECK(calls == 0);
  CHECK(b.backlog("q") == 1);
}

TEST_CASE("delete_queue clears mirrors pointing at it") {
  sim::Simulator sim;
  Broker b(sim);
  b.create_queue("main");
  b.create_queue("sec");
  b.start_mirror("main", "sec", 1);
  b.delete_queue("sec");
  CHECK_FALSE(b.has_queue("sec"));
  CHECK_FALSE(b.queue("main").mirror());
  CHECK(b.publish("main", "ok") == 1);
  CHECK(code_of([&] { b.delete_queue("sec"); }) == BrokerError::Code::UnknownQueue);
}
