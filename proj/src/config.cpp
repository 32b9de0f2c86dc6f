#include "ms2m/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace ms2m::harness {

using nlohmann::json;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid scenario config:";
  for (const auto& p : problems) {
    out += "\n  " + p;
  }
  return out;
}

// Reads fields from one JSON object, recording problems instead of throwing
// so that every offending field is reported at once.
class Section {
public:
  Section(const json& node, std::string path, std::vector<std::string>& problems)
      : node_(node), path_(std::move(path)), problems_(problems) {
    if (!node_.is_object()) {
      problem("", "must be an object");
    }
  }

  ~Section() {
    if (!node_.is_object()) return;
    for (const auto& [key, _] : node_.items()) {
      if (seen_.count(key) == 0) problem(key, "unknown field");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.is_object() && node_.contains(key) && !node_.at(key).is_null();
  }

  const json* child(const std::string& key) { return has(key) ? &node_.at(key) : nullptr; }

  std::string field_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void problem(const std::string& key, const std::string& what) {
    problems_.push_back((key.empty() ? path_ : field_path(key)) + ": " + what);
  }

  void number(const std::string& key, double& out, double min = 0) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      problem(key, "must be a number");
    } else if (v.get<double>() < min) {
      std::ostringstream os;
      os << "must be >= " << min;
      problem(key, os.str());
    } else {
      out = v.get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out, long long min = 0) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_number_integer()) {
      problem(key, "must be an integer");
    } else if (v.get<long long>() < min) {
      problem(key, "must be >= " + std::to_string(min));
    } else {
      out = static_cast<Int>(v.get<long long>());
    }
  }

  void text(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_string() || v.get<std::string>().empty()) {
      problem(key, "must be a non-empty string");
    } else {
      out = v.get<std::string>();
    }
  }

private:
  const json& node_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

sim::LinearCost read_cost(const json& node, const std::string& path, std::vector<std::string>& problems) {
  sim::LinearCost cost;
  Section s(node, path, problems);
  s.number("fixed_ms", cost.fixed_ms);
  s.number("ms_per_kib", cost.ms_per_kib);
  return cost;
}

void read_hosts(const json& node, ScenarioConfig& cfg, std::vector<std::string>& problems) {
  if (!node.is_array()) {
    problems.push_back("hosts: must be an array");
    return;
  }
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string path = "hosts[" + std::to_string(i) + "]";
    sim::Host host;
    Section s(node[i], path, problems);
    s.text("id", host.id);
    if (host.id.empty()) s.problem("id", "is required");
    s.text("region", host.region);
    if (const json* c = s.child("checkpoint")) host.checkpoint = read_cost(*c, s.field_path("checkpoint"), problems);
    if (const json* c = s.child("restore")) host.restore = read_cost(*c, s.field_path("restore"), problems);
    s.number("live_checkpoint_extra_ms", host.live_checkpoint_extra_ms);
    s.number("delivery_latency_ms", host.delivery_latency_ms);
    cfg.hosts.push_back(std::move(host));
  }
}

void read_links(const json& node, ScenarioConfig& cfg, std::vector<std::string>& problems) {
  if (!node.is_array()) {
    problems.push_back("links: must be an array");
    return;
  }
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string path = "links[" + std::to_string(i) + "]";
    sim::Link link;
    Section s(node[i], path, problems);
    s.text("from", link.from);
    s.text("to", link.to);
    s.number("latency_ms", link.latency_ms);
    if (s.has("bandwidth_kib_per_s")) {
      double bw = 0;
      s.number("bandwidth_kib_per_s", bw);
      if (bw > 0) {
        link.bandwidth_kib_per_s = bw;
      } else {
        s.problem("bandwidth_kib_per_s", "must be > 0 (omit for unlimited)");
      }
    }
    s.number("jitter_fraction", link.jitter_fraction);
    cfg.links.push_back(std::move(link));
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

std::vector<std::string> validate(const ScenarioConfig& cfg) {
  std::vector<std::string> problems;
  if (cfg.trials < 1) problems.push_back("trials: must be >= 1");
  if (cfg.techniques.empty()) problems.push_back("techniques: at least one technique is required");
  if (cfg.trigger_ms < 0) problems.push_back("trigger_ms: must be >= 0");
  if (cfg.service.processing_ms < 0) problems.push_back("service.processing_ms: must be >= 0");
  if (cfg.service.pause_ms < 0) problems.push_back("service.pause_ms: must be >= 0");
  if (cfg.service.resume_ms < 0) problems.push_back("service.resume_ms: must be >= 0");

  std::set<std::string> ids;
  for (std::size_t i = 0; i < cfg.hosts.size(); ++i) {
    const auto& h = cfg.hosts[i];
    const std::string path = "hosts[" + std::to_string(i) + "]";
    if (!ids.insert(h.id).second) problems.push_back(path + ".id: duplicate host id " + h.id);
    if (h.checkpoint.fixed_ms < 0 || h.checkpoint.ms_per_kib < 0 || h.restore.fixed_ms < 0 ||
        h.restore.ms_per_kib < 0 || h.live_checkpoint_extra_ms < 0 || h.delivery_latency_ms < 0) {
      problems.push_back(path + ": cost coefficients must be >= 0");
    }
  }
  bool linked = false;
  for (std::size_t i = 0; i < cfg.links.size(); ++i) {
    const auto& l = cfg.links[i];
    const std::string path = "links[" + std::to_string(i) + "]";
    if (ids.count(l.from) == 0) problems.push_back(path + ".from: undefined host " + l.from);
    if (ids.count(l.to) == 0) problems.push_back(path + ".to: undefined host " + l.to);
    if (l.latency_ms < 0 || !(l.bandwidth_kib_per_s > 0) || l.jitter_fraction < 0) {
      problems.push_back(path + ": latency and jitter must be >= 0, bandwidth > 0");
    }
    if ((l.from == cfg.source_host && l.to == cfg.target_host) ||
        (l.from == cfg.target_host && l.to == cfg.source_host)) {
      linked = true;
    }
  }
  if (ids.count(cfg.source_host) == 0) problems.push_back("migration.source: undefined host " + cfg.source_host);
  if (ids.count(cfg.target_host) == 0) problems.push_back("migration.target: undefined host " + cfg.target_host);
  if (cfg.source_host == cfg.target_host) problems.push_back("migration.target: must differ from source");
  if (!linked) problems.push_back("links: no link between " + cfg.source_host + " and " + cfg.target_host);
  if (cfg.control_latency_ms < 0) problems.push_back("migration.control_latency_ms: must be >= 0");

  if (cfg.workload.arrival_rate < 0) problems.push_back("workload.arrival_rate: must be >= 0");
  if (cfg.workload.duration_ms < 0) problems.push_back("workload.duration_ms: must be >= 0");
  if (cfg.rate_ratio) {
    if (*cfg.rate_ratio < 0) problems.push_back("workload.rate_ratio: must be >= 0");
    if (!(cfg.service.processing_ms > 0)) {
      problems.push_back("workload.rate_ratio: needs service.processing_ms > 0");
    }
  }
  if (!(cfg.policy.check_interval_ms > 0)) problems.push_back("policy.check_interval_ms: must be > 0");
  if (cfg.policy.divergence_window < 0) problems.push_back("policy.divergence_window: must be >= 0");
  if (cfg.policy.replay_timeout_ms < 0) problems.push_back("policy.replay_timeout_ms: must be >= 0");
  if (cfg.crash && cfg.crash->offset_ms < 0) problems.push_back("fault.crash_source.offset_ms: must be >= 0");
  return problems;
}

ScenarioConfig parse_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("syntax: ") + e.what()});
  }

  std::vector<std::string> problems;
  ScenarioConfig cfg;
  {
    Section root(doc, "", problems);
    root.text("name", cfg.name);
    root.integer("seed", cfg.seed);
    root.integer("trials", cfg.trials, 1);
    root.number("trigger_ms", cfg.trigger_ms);
    if (const json* t = root.child("techniques")) {
      cfg.techniques.clear();
      if (!t->is_array()) {
        root.problem("techniques", "must be an array");
      } else {
        for (const auto& name : *t) {
          try {
            cfg.techniques.push_back(migration::parse_technique(name.is_string() ? name.get<std::string>() : ""));
          } catch (const migration::MigrationError&) {
            root.problem("techniques", "unknown technique " + name.dump());
          }
        }
      }
    }
    if (const json* svc = root.child("service")) {
      Section s(*svc, "service", problems);
      s.number("processing_ms", cfg.service.processing_ms);
      s.number("pause_ms", cfg.service.pause_ms);
      s.number("resume_ms", cfg.service.resume_ms);
    }
    if (const json* h = root.child("hosts")) {
      read_hosts(*h, cfg, problems);
    } else {
      root.problem("hosts", "is required");
    }
    if (const json* l = root.child("links")) {
      read_links(*l, cfg, problems);
    } else {
      root.problem("links", "is required");
    }
    if (const json* m = root.child("migration")) {
      Section s(*m, "migration", problems);
      s.text("source", cfg.source_host);
      s.text("target", cfg.target_host);
      s.number("control_latency_ms", cfg.control_latency_ms);
    }
    if (const json* w = root.child("workload")) {
      Section s(*w, "workload", problems);
      std::string kind;
      s.text("kind", kind);
      if (!kind.empty()) {
        try {
          cfg.workload.kind = workload::parse_kind(kind);
        } catch (const std::invalid_argument&) {
          s.problem("kind", "unknown workload kind " + kind);
        }
      }
      s.number("arrival_rate", cfg.workload.arrival_rate);
      if (s.has("rate_ratio")) {
        double ratio = 0;
        s.number("rate_ratio", ratio);
        cfg.rate_ratio = ratio;
        if (s.has("arrival_rate")) s.problem("rate_ratio", "conflicts with arrival_rate");
      }
      s.number("duration_ms", cfg.workload.duration_ms);
      s.integer("payload_size_bytes", cfg.workload.payload_size_bytes);
      s.integer("max_messages", cfg.workload.max_messages);
    }
    if (const json* p = root.child("policy")) {
      Section s(*p, "policy", problems);
      s.integer("handoff_threshold", cfg.policy.handoff_threshold);
      s.integer("divergence_window", cfg.policy.divergence_window);
      s.number("check_interval_ms", cfg.policy.check_interval_ms);
      s.number("replay_timeout_ms", cfg.policy.replay_timeout_ms);
    }
    if (const json* f = root.child("fault")) {
      Section s(*f, "fault", problems);
      if (const json* c = s.child("crash_source")) {
        Section cs(*c, "fault.crash_source", problems);
        migration::SourceCrashFault fault;
        std::string phase;
        cs.text("phase", phase);
        try {
          fault.phase = migration::parse_phase(phase);
        } catch (const migration::MigrationError&) {
          cs.problem("phase", "unknown phase '" + phase + "'");
        }
        cs.number("offset_ms", fault.offset_ms);
        cfg.crash = fault;
      }
    }
  }
  for (auto& p : validate(cfg)) {
    if (std::find(problems.begin(), problems.end(), p) == problems.end()) problems.push_back(std::move(p));
  }
  if (!problems.empty()) {
    throw ConfigError(std::move(problems));
  }
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error(path.string() + ": cannot open");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace ms2m::harness
