#include "ms2m/service.hpp"
#include "ms2m/workload.hpp"

#include <doctest.h>

#include <string>
#include <vector>

using namespace ms2m;
using service::Mode;
using service::ServiceError;
using service::ServiceInstance;
using service::ServiceState;

namespace {

broker::Message msg(broker::MessageId id, std::string payload) { return {id, "in", std::move(payload), 0}; }

ServiceError::Code code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    return e.code();
  }
  FAIL("expected a ServiceError");
  return ServiceError::Code::InvalidMode;
}

ServiceState run_script(const std::vector<workload::TimedPayload>& script, std::vector<std::string>* outputs) {
  ServiceState s;
  broker::MessageId id = 0;
  for (const auto& item : script) {
    auto r = service::handle(s, msg(++id, item.payload));
    s = std::move(r.state);
    if (outputs) outputs->insert(outputs->end(), r.outputs.begin(), r.outputs.end());
  }
  return s;
}

struct Rig {
  sim::Simulator sim;
  broker::Broker broker{sim};
  service::Journal journal;

  Rig() {
    broker.create_queue("in");
    broker.create_queue("sec");
    broker.create_queue("out");
  }

  service::Context ctx(double processing_ms = 1) { return {sim, broker, journal, "out", processing_ms, 0}; }

  std::vector<std::string> output_payloads() const {
    std::vector<std::string> out;
    for (const auto& m : broker.queue("out").history()) out.push_back(m.payload);
    return out;
  }
};

}  // namespace

TEST_CASE("first message on an empty state") {
  auto r = service::handle({}, msg(1, "score 3"));
  CHECK(r.state.last_processed_id == 1);
  REQUIRE(r.state.data.size() == 1);
  CHECK(std::get<std::int64_t>(r.state.data.at("score")) == 3);
  CHECK(r.outputs == std::vector<std::string>{"ack 1 score 3"});
}

TEST_CASE("set stores under settings and score accumulates") {
  ServiceState s;
  s = service::handle(s, msg(1, "set difficulty hard")).state;
  auto r = service::handle(s, msg(2, "score 4 ....."));
  r = service::handle(r.state, msg(5, "score -1"));
  CHECK(std::get<std::string>(r.state.data.at("settings.difficulty")) == "hard");
  CHECK(std::get<std::int64_t>(r.state.data.at("score")) == 3);
  CHECK(r.outputs == std::vector<std::string>{"ack 5 score 3"});
  CHECK(r.state.last_processed_id == 5);
  CHECK(service::handle(s, msg(9, "set mode")).outputs == std::vector<std::string>{"ack 9 set mode"});
}

TEST_CASE("duplicate or out-of-order ids are rejected without state change") {
  ServiceState s = service::handle({}, msg(3, "score 1")).state;
  const ServiceState before = s;
  CHECK(code_of([&] { service::handle(s, msg(3, "score 1")); }) == ServiceError::Code::DuplicateOrOutOfOrder);
  CHECK(code_of([&] { service::handle(s, msg(2, "score 1")); }) == ServiceError::Code::DuplicateOrOutOfOrder);
  CHECK(s == before);
}

TEST_CASE("malformed payloads are rejected") {
  for (const char* p : {"", "jump 3", "score", "score x", "score 3x", "set"}) {
    CAPTURE(p);
    CHECK(code_of([&] { service::handle({}, msg(1, p)); }) == ServiceError::Code::MalformedMessage);
  }
}

TEST_CASE("same 50-message sequence twice gives bit-identical states") {
  workload::WorkloadSpec spec;
  spec.max_messages = 50;
  spec.seed = 99;
  const auto script = workload::generate(spec);
  REQUIRE(script.size() == 50);
  std::vector<std::string> o1, o2;
  const auto a = run_script(script, &o1);
  const auto b = run_script(script, &o2);
  CHECK(service::serialize(a) == service::serialize(b));
  CHECK(o1 == o2);
  CHECK(o1.size() == 50);
}

TEST_CASE("canonical serialization layout") {
  ServiceState empty;
  const std::string e = service::serialize(empty);
  CHECK(e.size() == 12);
  CHECK(e == std::string(12, '\0'));

  ServiceState s;
  s.last_processed_id = 0x0102;
  s.data["b"] = std::int64_t{-1};
  s.data["a"] = std::string("xy");
  const std::string bytes = service::serialize(s);
  const std::string expected = std::string("\x02\x01\0\0\0\0\0\0", 8) + std::string("\x02\0\0\0", 4) +
                               std::string("\x01\0\0\0", 4) + "a" + std::string("\x03\0\0\0", 4) + "sxy" +
                               std::string("\x01\0\0\0", 4) + "b" + std::string("\x09\0\0\0", 4) + "i" +
                               std::string(8, '\xff');
  CHECK(bytes == expected);
  CHECK(service::deserialize(bytes) == s);
}

TEST_CASE("default game state is 175 bytes") {
  // One padded settings message and any number of scores.
  const auto script = workload::generate(workload::WorkloadSpec{});
  const auto state = run_script(script, nullptr);
  CHECK(service::serialize(state).size() == 175);
}

TEST_CASE("deserialize rejects corrupt snapshots") {
  ServiceState s;
  s.data["k"] = std::int64_t{5};
  const std::string good = service::serialize(s);
  CHECK(code_of([&] { service::deserialize(good.substr(0, good.size() - 1)); }) ==
        ServiceError::Code::CorruptCheckpoint);
  CHECK(code_of([&] { service::deserialize(good + "x"); }) == ServiceError::Code::CorruptCheckpoint);
  std::string bad_tag = good;
  bad_tag[12 + 4 + 1 + 4] = 'q';
  CHECK(code_of([&] { service::deserialize(bad_tag); }) == ServiceError::Code::CorruptCheckpoint);

  ServiceState two;
  two.data["a"] = std::int64_t{1};
  two.data["b"] = std::int64_t{2};
  std::string swapped = service::serialize(two);
  std::swap(swapped[16], swapped[16 + 1 + 4 + 9 + 4]);
  CHECK(code_of([&] { service::deserialize(swapped); }) == ServiceError::Code::CorruptCheckpoint);
}

TEST_CASE("checkpoint round trip over generated states") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    sim::Random rng(seed);
    ServiceState s;
    s.last_processed_id = rng.next();
    const auto n = rng.integer(0, 12);
    for (int i = 0; i < n; ++i) {
      std::string key(static_cast<std::size_t>(rng.integer(0, 6)), 'a');
      for (auto& c : key) c = static_cast<char>(rng.integer(0, 255));
      if (rng.integer(0, 1) == 0) {
        s.data[key] = static_cast<std::int64_t>(rng.next());
      } else {
        std::string v(static_cast<std::size_t>(rng.integer(0, 40)), '\0');
        for (auto& c : v) c = static_cast<char>(rng.integer(0, 255));
        s.data[key] = v;
      }
    }
    const auto bytes = service::serialize(s);
    CHECK(service::deserialize(bytes) == s);
    CHECK(service::serialize(service::deserialize(bytes)) == bytes);
  }
}

TEST_CASE("checkpoint requires a paused instance and restores identically") {
  Rig rig;
  ServiceInstance inst(rig.ctx(), "svc#1", "a", {});
  auto empty_cp = inst.create_checkpoint();
  CHECK(empty_cp.size_bytes == service::serialize({}).size());
  CHECK(empty_cp.checkpoint_last_id == 0);

  inst.resume("in");
  CHECK(code_of([&] { inst.create_checkpoint(); }) == ServiceError::Code::InvalidMode);
  for (int i = 0; i < 100; ++i) rig.broker.publish("in", "score " + std::to_string(i % 7));
  rig.sim.run();
  CHECK(inst.state().last_processed_id == 100);
  inst.pause();
  const auto cp = inst.create_checkpoint();
  CHECK(cp.size_bytes == cp.snapshot.size());
  CHECK(cp.checkpoint_last_id == 100);
  CHECK(cp.source_host == "a");

  auto restored = ServiceInstance::restore(rig.ctx(), "svc#2", cp, "b");
  CHECK(restored->mode() == Mode::Paused);
  CHECK(restored->host() == "b");
  CHECK(restored->state() == inst.state());

  auto bad = cp;
  bad.size_bytes += 1;
  CHECK(code_of([&] { ServiceInstance::restore(rig.ctx(), "x", bad, "b"); }) ==
        ServiceError::Code::CorruptCheckpoint);
  bad = cp;
  bad.checkpoint_last_id = 3;
  CHECK(code_of([&] { ServiceInstance::restore(rig.ctx(), "x", bad, "b"); }) ==
        ServiceError::Code::CorruptCheckpoint);
}

TEST_CASE("mode preconditions") {
  Rig rig;
  ServiceInstance inst(rig.ctx(), "svc#1", "a", {});
  CHECK(code_of([&] { inst.pause(); }) == ServiceError::Code::InvalidMode);
  inst.resume("in");
  CHECK(code_of([&] { inst.resume("in"); }) == ServiceError::Code::InvalidMode);
  CHECK(code_of([&] { inst.enter_replay("sec"); }) == ServiceError::Code::InvalidMode);
  CHECK(code_of([&] { inst.finish_replay(0, "in"); }) == ServiceError::Code::InvalidMode);
  inst.crash();
  CHECK(inst.crashed());
  CHECK(inst.mode() == Mode::Stopped);
  CHECK(code_of([&] { inst.resume("in"); }) == ServiceError::Code::InvalidMode);
  CHECK_FALSE(rig.broker.queue("in").subscriber());
}

TEST_CASE("pause mid-processing defers the in-flight message") {
  Rig rig;
  ServiceInstance inst(rig.ctx(10), "svc#1", "a", {});
  inst.resume("in");
  rig.broker.publish("in", "score 1");
  rig.broker.publish("in", "score 2");
  rig.sim.run_until(15);  // message 1 applied at 10, message 2 in flight
  inst.pause();
  CHECK(inst.state().last_processed_id == 1);
  rig.sim.run();
  CHECK(inst.state().last_processed_id == 1);
  CHECK(rig.broker.backlog("in") == 1);
  inst.resume("in");
  rig.sim.run();
  CHECK(inst.state().last_processed_id == 2);
  CHECK(rig.output_payloads() == std::vector<std::string>{"ack 1 score 1", "ack 2 score 3"});
}

TEST_CASE("replay is silent, then outputs resume after the watermark") {
  Rig rig;
  ServiceInstance source(rig.ctx(), "svc#1", "a", {});
  source.resume("in");
  rig.broker.publish("in", "score 1");
  rig.sim.run();
  source.pause();
  const auto cp = source.create_checkpoint();
  rig.broker.start_mirror("in", "sec", cp.checkpoint_last_id + 1);
  source.resume("in");

  auto target = ServiceInstance::restore(rig.ctx(), "svc#2", cp, "b");
  target->set_shadow_outputs(true);
  target->enter_replay("sec");
  for (int i = 0; i < 10; ++i) rig.broker.publish("in", "score 1");
  rig.sim.run();
  CHECK(source.state().last_processed_id == 11);
  CHECK(target->state().last_processed_id == 11);
  CHECK(target->replayed_count() == 10);
  CHECK(rig.journal.outputs().size() == 11);
  for (const auto& o : rig.journal.outputs()) CHECK(o.instance == "svc#1");

  bool serving = false;
  source.stop_consuming_at(11, [&](broker::MessageId w) {
    CHECK(w == 11);
    target->finish_replay(w, "in", [&] { serving = true; });
  });
  CHECK(serving);
  CHECK(target->mode() == Mode::Serving);
  source.stop();
  rig.broker.publish("in", "score 1");
  rig.sim.run();
  REQUIRE(rig.journal.outputs().size() == 12);
  CHECK(rig.journal.outputs().back().instance == "svc#2");
  CHECK(rig.journal.outputs().back().input_id == 12);
  CHECK(rig.journal.outputs().back().payload == "ack 12 score 12");
  CHECK(target->shadow_outputs().size() == 10);
  CHECK(target->shadow_outputs().back() == "ack 11 score 11");
  CHECK(rig.journal.max_concurrent_serving() == 1);
  CHECK(rig.journal.outputs_only_from_serving());
}

TEST_CASE("finish_replay with an empty replay switches immediately") {
  Rig rig;
  ServiceState s = service::handle({}, msg(1, "score 2")).state;
  ServiceInstance source(rig.ctx(), "svc#1", "a", s);
  const auto cp = source.create_checkpoint();
  auto target = ServiceInstance::restore(rig.ctx(), "svc#2", cp, "b");
  target->enter_replay("sec");
  bool serving = false;
  target->finish_replay(1, "in", [&] { serving = true; });
  CHECK(serving);
  CHECK(target->replayed_count() == 0);
  CHECK(target->subscription() == std::optional<std::string>("in"));
}

TEST_CASE("finish_replay consumes up to a later watermark") {
  Rig rig;
  ServiceInstance target(rig.ctx(), "svc#2", "b", {});
  target.enter_replay("sec");
  target.hold_replay();
  for (int i = 0; i < 5; ++i) rig.broker.publish("sec", "score 1");
  rig.sim.run();
  CHECK(target.replayed_count() == 0);
  target.finish_replay(3, "in");
  rig.sim.run();
  CHECK(target.mode() == Mode::Serving);
  CHECK(target.replayed_count() == 3);
  CHECK(target.state().last_processed_id == 3);
  CHECK(rig.journal.outputs().empty());
}

TEST_CASE("watermark below the checkpoint id is a protocol error") {
  Rig rig;
  ServiceState s = service::handle({}, msg(5, "score 2")).state;
  ServiceInstance source(rig.ctx(), "svc#1", "a", s);
  auto target = ServiceInstance::restore(rig.ctx(), "svc#2", source.create_checkpoint(), "b");
  target->enter_replay("sec");
  CHECK(code_of([&] { target->finish_replay(4, "in"); }) == ServiceError::Code::ProtocolError);
}

TEST_CASE("redelivered messages are acked without being applied twice") {
  Rig rig;
  ServiceState s = service::handle({}, msg(1, "score 5")).state;
  ServiceInstance inst(rig.ctx(), "svc#1", "a", s);
  rig.broker.publish("in", "score 5");
  rig.broker.publish("in", "score 1");
  inst.resume("in");
  rig.sim.run();
  CHECK(inst.state().last_processed_id == 2);
  CHECK(std::get<std::int64_t>(inst.state().data.at("score")) == 6);
  CHECK(rig.journal.outputs().size() == 1);
}

TEST_CASE("journal detects concurrent serving") {
  service::Journal j;
  j.record_mode({0, 0, "a", Mode::Serving});
  j.record_output({0, 1, "a", 1, "x"});
  j.record_mode({0, 2, "b", Mode::Serving});
  CHECK(j.max_concurrent_serving() == 2);
  j.record_mode({0, 3, "a", Mode::Paused});
  j.record_output({0, 4, "a", 2, "y"});
  CHECK_FALSE(j.outputs_only_from_serving());
}
