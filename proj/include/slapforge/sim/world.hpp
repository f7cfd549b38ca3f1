#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "slapforge/core/message.hpp"
#include "slapforge/grid/boinc_profiles.hpp"
#include "slapforge/grid/grid.hpp"
#include "slapforge/mac/policy.hpp"
#include "slapforge/master/link.hpp"
#include "slapforge/master/master.hpp"
#include "slapforge/node/agent.hpp"
#include "slapforge/profile/profile.hpp"

namespace slapforge::sim {

struct NodeSpec {
  std::string node_id;
  std::uint32_t partitions = 1;
  std::string credentials;
  std::vector<std::string> supplies;
};

struct RequestSpec {
  std::string reference;
  std::string user;
  std::string url;
  std::string type = "default";
  std::optional<std::string> sla_node;
  ParamMap params;
  std::optional<std::string> link;  // reference of a server whose connection this instance consumes
};

struct ScenarioConfig {
  std::uint64_t seed = 0;
  Tick ticks = 0;
  bool confinement = false;
  mac::Mode mode = mac::Mode::targeted;
  Tick poll_period = 1;
  std::optional<std::size_t> expect_wus;
  std::vector<NodeSpec> nodes;
  std::vector<RequestSpec> requests;
};

namespace detail {

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw ParseError("scenario", 0, what + " must be a natural number, got '" + s + "'");
  try {
    return std::stoull(s);
  } catch (const std::out_of_range&) {
    throw ParseError("scenario", 0, what + " is out of range");
  }
}

inline bool parse_switch(const std::string& s, const std::string& what) {
  if (s == "on" || s == "true" || s == "yes") return true;
  if (s == "off" || s == "false" || s == "no") return false;
  throw ParseError("scenario", 0, what + " must be on or off, got '" + s + "'");
}

}  // namespace detail

// Scenario files use the profile syntax: a [scenario] section naming node
// and request sections.
inline ScenarioConfig parse_scenario(const std::string& text, const std::string& origin = "scenario") {
  auto doc = profile::parse_profile(text, origin);
  const auto* sc = doc.sections.get("scenario");
  if (!sc) throw ParseError(origin, 0, "missing [scenario] section");
  auto opt = [&](const profile::Section& s, const std::string& k, const std::string& fallback = {}) {
    const auto* v = s.get(k);
    return v ? *v : fallback;
  };

  ScenarioConfig cfg;
  cfg.seed = detail::parse_u64(opt(*sc, "seed", "0"), "seed");
  cfg.ticks = static_cast<Tick>(detail::parse_u64(opt(*sc, "ticks", "0"), "ticks"));
  cfg.confinement = detail::parse_switch(opt(*sc, "confinement", "off"), "confinement");
  cfg.mode = mac::parse_mode(opt(*sc, "mode", "targeted"));
  cfg.poll_period = static_cast<Tick>(detail::parse_u64(opt(*sc, "poll-period", "1"), "poll-period"));
  if (cfg.poll_period == 0) throw ParseError(origin, 0, "poll-period must be positive");
  if (const auto* e = sc->get("expect-wus")) cfg.expect_wus = detail::parse_u64(*e, "expect-wus");

  auto section = [&](const std::string& name) -> const profile::Section& {
    const auto* s = doc.sections.get(name);
    if (!s) throw ParseError(origin, 0, "scenario names missing section [" + name + "]");
    return *s;
  };

  for (const auto& name : profile::split_words(opt(*sc, "nodes"))) {
    const auto& s = section(name);
    NodeSpec n;
    n.node_id = name;
    n.partitions = static_cast<std::uint32_t>(detail::parse_u64(opt(s, "partitions", "1"), name + ":partitions"));
    n.credentials = opt(s, "credentials", name);
    n.supplies = profile::split_words(opt(s, "supply"));
    cfg.nodes.push_back(std::move(n));
  }
  for (const auto& name : profile::split_words(opt(*sc, "requests"))) {
    const auto& s = section(name);
    RequestSpec r;
    r.reference = name;
    r.user = opt(s, "user");
    r.url = opt(s, "url");
    if (r.user.empty() || r.url.empty()) throw ParseError(origin, 0, "request [" + name + "] needs user and url");
    r.type = opt(s, "type", "default");
    if (const auto* v = s.get("sla-node")) r.sla_node = *v;
    if (const auto* v = s.get("link")) r.link = *v;
    for (const auto& [k, v] : s)
      if (k.starts_with("param.")) r.params[k.substr(6)] = v;
    cfg.requests.push_back(std::move(r));
  }
  return cfg;
}

// SLAPFORGE_SEED, when set, replaces the scenario seed.
inline void apply_seed_override(ScenarioConfig& cfg) {
  if (const char* s = std::getenv("SLAPFORGE_SEED"); s && *s) cfg.seed = detail::parse_u64(s, "SLAPFORGE_SEED");
}

inline std::string boinc_e2e_scenario_text() {
  return "[scenario]\n"
         "seed = 7\n"
         "ticks = 40\n"
         "confinement = off\n"
         "mode = targeted\n"
         "expect-wus = 5\n"
         "nodes = node-a node-b\n"
         "requests = grid-server client-1 client-2 client-3\n"
         "\n"
         "[node-a]\n"
         "partitions = 4\n"
         "credentials = secret-a\n"
         "supply = " + grid::kBoincE2eSoftwareUrl + "\n"
         "\n"
         "[node-b]\n"
         "partitions = 4\n"
         "credentials = secret-b\n"
         "supply = " + grid::kBoincClientSoftwareUrl + "\n"
         "\n"
         "[grid-server]\n"
         "user = alice\n"
         "url = " + grid::kBoincE2eSoftwareUrl + "\n"
         "type = server\n"
         "sla-node = node-a\n"
         "param.project-name = simpletest\n"
         "\n"
         "[client-1]\n"
         "user = bob\n"
         "url = " + grid::kBoincClientSoftwareUrl + "\n"
         "type = client\n"
         "sla-node = node-b\n"
         "link = grid-server\n"
         "\n"
         "[client-2]\n"
         "user = bob\n"
         "url = " + grid::kBoincClientSoftwareUrl + "\n"
         "type = client\n"
         "sla-node = node-b\n"
         "link = grid-server\n"
         "\n"
         "[client-3]\n"
         "user = carol\n"
         "url = " + grid::kBoincClientSoftwareUrl + "\n"
         "type = client\n"
         "sla-node = node-b\n"
         "link = grid-server\n";
}

inline const std::map<std::string, std::string>& bundled_scenarios() {
  static const std::map<std::string, std::string> s{{"boinc-e2e", boinc_e2e_scenario_text()}};
  return s;
}

struct WorldConfig {
  std::uint64_t seed = 0;
  bool confinement = false;
  mac::Mode mode = mac::Mode::targeted;
  Tick poll_period = 1;
  master::MasterConfig master;
};

struct GridTally {
  std::size_t projects = 0;
  std::size_t total = 0;
  std::size_t done = 0;
  std::size_t error = 0;
};

// One master, its nodes and the grid network, driven single-threaded by a
// seeded round-robin scheduler. Everything that crosses a wire is traced.
class World {
 public:
  explicit World(WorldConfig config = {}, profile::FetchFn fetch = grid::bundled_fetch())
      : config_(std::move(config)),
        fetch_(std::move(fetch)),
        master_(config_.master),
        network_(&trace_),
        link_(master_, &trace_),
        client_(link_),
        rng_(config_.seed) {}

  World(const World&) = delete;
  World& operator=(const World&) = delete;

  node::NodeAgent& add_node(const std::string& node_id, const std::string& credentials, std::uint32_t partitions,
                            Tick now) {
    if (agents_.count(node_id)) throw Error("node '" + node_id + "' already exists");
    node::AgentConfig ac;
    ac.confinement = config_.confinement;
    ac.mode = config_.mode;
    ac.poll_period = config_.poll_period;
    auto agent = std::make_unique<node::NodeAgent>(node_id, credentials, partitions, fetch_, &network_, ac);
    master_.set_time(now);
    agent->prepare(client_, now);
    order_.push_back(node_id);
    return *agents_.emplace(node_id, std::move(agent)).first->second;
  }

  void supply(const std::string& url, const std::string& node_id) { client_.supply(url, node_id); }

  // Sends an operator message to the master as is.
  SlapMessage call(const SlapMessage& m) {
    auto reply = link_.call(m);
    master::raise_if_error(reply);
    return reply;
  }

  SlapMessage request(const RequestSpec& r) {
    return client_.request_instance(r.user, r.reference, r.url, r.type, r.params, r.sla_node);
  }

  // One scheduler round: every node steps once, in a seeded order.
  void tick(Tick now) {
    master_.set_time(now);
    auto order = order_;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_() % i]);
    for (const auto& id : order) step_node(id, now);
    flush_events();
  }

  node::StepSummary step_node(const std::string& node_id, Tick now) {
    auto& agent = this->agent(node_id);
    master_.set_time(now);
    SlapMessage step(MessageKind::Step);
    step.set("node_id", node_id).set("tick", now);
    trace_.record(step);
    auto summary = agent.step(client_, now);
    if (config_.confinement) {
      auto records = agent.enforcer().audit.snapshot();
      auto& seen = audit_seen_[node_id];
      for (; seen < records.size(); ++seen) {
        auto m = mac::to_message(records[seen]);
        m.set("node_id", node_id);
        trace_.record(m);
      }
    }
    return summary;
  }

  void flush_events() {
    for (const auto& e : master_.drain_events()) trace_.record(e);
  }

  GridTally grid_tally() const {
    GridTally t;
    for (const auto& [_, agent] : agents_)
      for (const auto& [root, server] : agent->grid_host().servers()) {
        const auto& p = server->project();
        ++t.projects;
        t.total += p.wu_store.size();
        t.done += p.count(grid::WuStatus::done);
        t.error += p.count(grid::WuStatus::error);
      }
    return t;
  }

  node::NodeAgent& agent(const std::string& node_id) {
    auto it = agents_.find(node_id);
    if (it == agents_.end()) throw UnknownNodeError("no node '" + node_id + "'");
    return *it->second;
  }
  bool has_agent(const std::string& node_id) const { return agents_.count(node_id) != 0; }
  const std::map<std::string, std::unique_ptr<node::NodeAgent>>& agents() const noexcept { return agents_; }

  master::Master& master() noexcept { return master_; }
  master::MasterClient& client() noexcept { return client_; }
  master::Trace& trace() noexcept { return trace_; }
  const master::Trace& trace() const noexcept { return trace_; }
  grid::GridNetwork& network() noexcept { return network_; }
  const WorldConfig& config() const noexcept { return config_; }

 private:
  WorldConfig config_;
  profile::FetchFn fetch_;
  master::Trace trace_;
  master::Master master_;
  grid::GridNetwork network_;
  master::InProcessLink link_;
  master::MasterClient client_;
  std::mt19937_64 rng_;
  std::vector<std::string> order_;
  std::map<std::string, std::size_t> audit_seen_;
  // Declared last: agents detach from the network and master on teardown.
  std::map<std::string, std::unique_ptr<node::NodeAgent>> agents_;
};

struct RunOutcome {
  int exit_code = 1;
  Tick ticks_run = 0;
  std::vector<std::string> trace;
  std::vector<std::string> summary;
  GridTally grid;
  std::size_t running = 0;
  std::size_t requested = 0;
};

// Runs a scenario for its full tick budget. Setup happens inside tick 0,
// so a zero-tick run leaves an empty trace.
class ScenarioRunner {
 public:
  explicit ScenarioRunner(ScenarioConfig cfg, profile::FetchFn fetch = grid::bundled_fetch())
      : cfg_(std::move(cfg)), world_(world_config(cfg_), std::move(fetch)) {}

  RunOutcome run() {
    for (Tick t = 0; t < cfg_.ticks; ++t) {
      if (t == 0) setup();
      issue_requests();
      world_.tick(t);
    }
    return outcome();
  }

  World& world() noexcept { return world_; }

 private:
  static WorldConfig world_config(const ScenarioConfig& c) {
    WorldConfig w;
    w.seed = c.seed;
    w.confinement = c.confinement;
    w.mode = c.mode;
    w.poll_period = c.poll_period;
    return w;
  }

  void setup() {
    for (const auto& n : cfg_.nodes) world_.add_node(n.node_id, n.credentials, n.partitions, 0);
    for (const auto& n : cfg_.nodes)
      for (const auto& url : n.supplies) world_.supply(url, n.node_id);
  }

  const RequestSpec* spec_of(const std::string& reference) const {
    for (const auto& r : cfg_.requests)
      if (r.reference == reference) return &r;
    return nullptr;
  }

  // A linked request waits until its server has published a url and key.
  void issue_requests() {
    for (const auto& r : cfg_.requests) {
      if (issued_.count(r.reference)) continue;
      auto spec = r;
      if (r.link) {
        const auto* server = spec_of(*r.link);
        if (!server) throw ParseError("scenario", 0, "request [" + r.reference + "] links unknown [" + *r.link + "]");
        auto inst = world_.master().find_instance(server->user, server->reference);
        if (!inst) continue;
        auto url = inst->connection.find("url");
        auto key = inst->connection.find("account-key");
        if (url == inst->connection.end() || key == inst->connection.end()) continue;
        spec.params["server-url"] = url->second;
        spec.params["account-key"] = key->second;
      }
      world_.request(spec);
      issued_.insert(r.reference);
    }
  }

  RunOutcome outcome() {
    RunOutcome out;
    out.ticks_run = cfg_.ticks;
    out.trace = world_.trace().lines();
    out.grid = world_.grid_tally();
    out.requested = cfg_.requests.size();
    for (const auto& r : cfg_.requests) {
      auto inst = world_.master().find_instance(r.user, r.reference);
      std::string state = "not requested";
      if (inst) {
        state = std::string(to_string(inst->lifecycle));
        if (!inst->last_error.empty()) state += " (" + inst->last_error + ")";
        if (inst->lifecycle == Lifecycle::running) ++out.running;
      }
      out.summary.push_back("instance " + r.reference + ": " + state);
    }
    out.summary.push_back("work units: " + std::to_string(out.grid.done) + "/" + std::to_string(out.grid.total) +
                          " done");
    const bool wus_ok = out.grid.done == out.grid.total && (!cfg_.expect_wus || out.grid.done == *cfg_.expect_wus);
    const bool ok = out.requested > 0 && out.running == out.requested && wus_ok;
    out.exit_code = ok ? 0 : 1;
    if (!ok) out.summary.push_back("deadline not met after " + std::to_string(cfg_.ticks) + " ticks");
    return out;
  }

  ScenarioConfig cfg_;
  World world_;
  std::set<std::string> issued_;
};

}  // namespace slapforge::sim
