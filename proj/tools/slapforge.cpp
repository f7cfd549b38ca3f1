#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "slapforge/slapforge.hpp"

namespace sf = slapforge;

namespace {

constexpr int kOk = 0;
constexpr int kDomainFailure = 1;
constexpr int kUsage = 2;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sf::ParseError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("SLAPFORGE_SEED");
  if (!s || !*s) return std::nullopt;
  return sf::sim::detail::parse_u64(s, "SLAPFORGE_SEED");
}

sf::ParamMap parse_params(const std::vector<std::string>& kvs) {
  sf::ParamMap out;
  for (const auto& kv : kvs) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw sf::ParseError("--param", 0, "expected key=value, got '" + kv + "'");
    out[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return out;
}

struct StateOpts {
  std::string file = "slapforge.state";
  std::optional<std::uint64_t> seed;
};

std::unique_ptr<sf::sim::Session> open_session(const StateOpts& o) {
  auto seed = o.seed ? *o.seed : env_seed().value_or(0);
  return sf::sim::Session::load(o.file, seed);
}

int apply_and_save(const StateOpts& o, const sf::SlapMessage& m, bool print_reply = true) {
  auto s = open_session(o);
  auto reply = s->apply(m);
  s->save(o.file);
  if (print_reply) std::cout << sf::encode_message(reply) << '\n';
  return kOk;
}

void print_status(sf::sim::Session& s) {
  auto& master = s.world().master();
  std::cout << "tick " << s.now() << '\n';
  for (const auto& [id, n] : master.nodes()) {
    std::cout << "node " << id << " ordinal=" << n.ordinal << " partitions=" << n.partition_count
              << (n.stale ? " stale" : "") << '\n';
  }
  for (const auto& [key, status] : master.supplies())
    std::cout << "supply " << key.first << ' ' << sf::to_string(status) << ' ' << key.second << '\n';
  for (const auto& [id, inst] : master.instances()) {
    std::cout << "instance " << id << ' ' << inst.requester << '/' << inst.reference << ' '
              << sf::to_string(inst.lifecycle);
    if (inst.partition) std::cout << " on " << inst.partition->node_id << ':' << inst.partition->index;
    for (const auto& [k, v] : inst.connection) std::cout << ' ' << k << '=' << v;
    if (!inst.last_error.empty()) std::cout << " error=\"" << inst.last_error << '"';
    std::cout << '\n';
  }
  for (const auto& id : master.pending()) std::cout << "pending " << id << '\n';
}

void print_project(const sf::grid::Project& p) {
  std::cout << "project " << p.project_name << ' ' << p.url << '\n';
  for (const auto& id : p.wu_order) {
    const auto& wu = p.wu_store.at(id);
    std::cout << "  wu " << id << ' ' << sf::grid::to_string(wu.status);
    if (wu.assigned_to) std::cout << ' ' << *wu.assigned_to;
    if (auto r = p.results.find(id); r != p.results.end()) std::cout << " output=\"" << r->second.output << '"';
    std::cout << '\n';
  }
}

int print_grid(sf::sim::Session& s, const std::string& instance) {
  if (!instance.empty()) {
    const auto* p = s.find_project(instance);
    if (!p) throw sf::GridError("instance '" + instance + "' hosts no grid project");
    print_project(*p);
    return kOk;
  }
  for (const auto& [node, agent] : s.world().agents())
    for (const auto& [root, server] : agent->grid_host().servers()) print_project(server->project());
  return kOk;
}

// Partition index named by a path under the partition tree.
std::optional<std::uint32_t> partition_in_path(std::string_view path) {
  constexpr std::string_view tree = "/srv/slapgrid/slappart";
  if (!path.starts_with(tree)) return std::nullopt;
  auto n = path.substr(tree.size());
  n = n.substr(0, n.find('/'));
  if (n.empty() || n.size() > 9 || !std::all_of(n.begin(), n.end(), [](unsigned char c) { return std::isdigit(c); }))
    return std::nullopt;
  return static_cast<std::uint32_t>(std::stoul(std::string(n)));
}

sf::mac::Policy strict_partition_policy(std::uint32_t partitions) {
  sf::mac::Policy p;
  for (std::uint32_t i = 0; i < partitions; ++i) {
    p.add_all(sf::mac::generate_partition_policy(i));
    p.labeled_subjects.insert(sf::mac::service_subject(i));
  }
  return sf::mac::set_mode(std::move(p), sf::mac::Mode::strict);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slapforge: provisioning master, node agents and desktop grid simulator"};
  app.require_subcommand(1);

  // run
  std::string scenario;
  std::string trace_out = "slapforge.trace";
  std::optional<std::uint64_t> run_seed;
  auto* run = app.add_subcommand("run", "simulate a scenario file or bundled scenario");
  run->add_option("scenario", scenario, "scenario file, or a bundled name (boinc-e2e)")->required();
  run->add_option("--trace", trace_out, "event trace output");
  run->add_option("--seed", run_seed, "override the scenario seed");

  StateOpts st;
  auto add_state = [&](CLI::App* c) {
    c->add_option("--state-file", st.file, "journal of operator actions");
    c->add_option("--seed", st.seed, "seed for a fresh state file");
  };

  // node
  auto* node = app.add_subcommand("node", "node lifecycle");
  node->require_subcommand(1);
  std::string node_id, credentials, connect;
  std::uint32_t partitions = 10;
  std::int64_t ticks = 1;
  auto* prepare = node->add_subcommand("prepare", "create partitions and register with the master");
  prepare->add_option("--node", node_id)->required();
  prepare->add_option("--partitions", partitions);
  prepare->add_option("--credentials", credentials);
  add_state(prepare);
  auto* step = node->add_subcommand("step", "one agent cycle");
  step->add_option("--node", node_id)->required();
  add_state(step);
  auto* node_run = node->add_subcommand("run", "several agent cycles (all nodes unless --node)");
  node_run->add_option("--node", node_id);
  node_run->add_option("--ticks", ticks)->required();
  node_run->add_option("--connect", connect, "host:port of a live master");
  node_run->add_option("--credentials", credentials);
  node_run->add_option("--partitions", partitions);
  add_state(node_run);

  // supply / request
  std::string url, user, reference, type = "default", requested = "started";
  std::optional<std::string> sla_node;
  std::vector<std::string> params;
  auto* supply = app.add_subcommand("supply", "make a software release installable on a node");
  supply->add_option("--url", url)->required();
  supply->add_option("--node", node_id)->required();
  add_state(supply);
  auto* request = app.add_subcommand("request", "request or update a software instance");
  request->add_option("--user", user)->required();
  request->add_option("--reference", reference)->required();
  request->add_option("--url", url)->required();
  request->add_option("--type", type);
  request->add_option("--sla-node", sla_node);
  request->add_option("--param", params, "key=value slapparameter");
  request->add_option("--state", requested, "started, stopped or destroyed");
  add_state(request);

  auto* status = app.add_subcommand("status", "nodes, supplies and instances");
  add_state(status);

  std::int64_t from = 0, to = 0;
  auto* invoice = app.add_subcommand("invoice", "usage cost over [from, to)");
  invoice->add_option("--user", user)->required();
  invoice->add_option("--from", from)->required();
  invoice->add_option("--to", to)->required();
  add_state(invoice);

  // grid
  auto* grid = app.add_subcommand("grid", "desktop grid inspection");
  grid->require_subcommand(1);
  std::string grid_instance, app_name, input_file;
  std::int64_t count = 1;
  auto* grid_status = grid->add_subcommand("status", "per work unit status");
  grid_status->add_option("instance", grid_instance, "server instance id or reference (default: all)");
  add_state(grid_status);
  auto* inject = grid->add_subcommand("inject", "add work units to a server instance's project");
  inject->add_option("instance", grid_instance, "server instance id or reference")->required();
  inject->add_option("--app", app_name)->required();
  inject->add_option("--input", input_file, "plain text payload file")->required();
  inject->add_option("--wu-number", count);
  add_state(inject);

  // profile
  auto* prof = app.add_subcommand("profile", "profile tooling");
  prof->require_subcommand(1);
  std::string file, target = "software";
  auto* lint = prof->add_subcommand("lint", "parse, merge and resolve a profile");
  lint->add_option("file", file, "path or bundled profile url")->required();
  auto* plan = prof->add_subcommand("plan", "print the install plan");
  plan->add_option("file", file)->required();
  plan->add_option("--target", target)->check(CLI::IsMember({"software", "partition"}));

  // policy
  auto* pol = app.add_subcommand("policy", "policy tooling");
  pol->require_subcommand(1);
  auto* plint = pol->add_subcommand("lint", "check a policy file");
  plint->add_option("file", file)->required();
  std::string trace_in, policy_file;
  std::uint32_t label_partitions = 0;
  auto* audit = pol->add_subcommand("audit", "replay the access checks in a trace");
  audit->add_option("--trace", trace_in)->required();
  audit->add_option("--policy", policy_file, "re-evaluate under this policy");
  audit->add_option("--partitions", label_partitions, "labeled partitions (default: those seen)");
  std::uint64_t fuzz_seed = 0;
  std::size_t fuzz_n = 1000;
  std::uint32_t fuzz_parts = 8;
  std::string fuzz_mode = "strict", identity = std::string(sf::kSystemIdentity);
  auto* fuzz = pol->add_subcommand("fuzz", "randomized cross-partition access");
  fuzz->add_option("--seed", fuzz_seed);
  fuzz->add_option("--n", fuzz_n);
  fuzz->add_option("--partitions", fuzz_parts);
  fuzz->add_option("--mode", fuzz_mode)->check(CLI::IsMember({"strict", "off"}));
  fuzz->add_option("--identity", identity);

  std::uint16_t port = 0;
  auto* serve = app.add_subcommand("serve", "run the master on a loopback socket");
  serve->add_option("--port", port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*run) {
      std::string text;
      const auto& bundled = sf::sim::bundled_scenarios();
      auto it = bundled.find(scenario);
      text = it != bundled.end() ? it->second : read_text(scenario);
      auto cfg = sf::sim::parse_scenario(text, scenario);
      sf::sim::apply_seed_override(cfg);
      if (run_seed) cfg.seed = *run_seed;
      sf::sim::ScenarioRunner runner(cfg, sf::grid::local_then_bundled());
      auto out = runner.run();
      std::ofstream t(trace_out, std::ios::trunc);
      if (!t) throw sf::Error("cannot write trace " + trace_out);
      for (const auto& l : out.trace) t << l << '\n';
      for (const auto& l : out.summary) std::cout << l << '\n';
      std::cout << "trace " << trace_out << " (" << out.trace.size() << " lines)\n";
      return out.exit_code;
    }

    if (*prepare) {
      sf::SlapMessage m(sf::MessageKind::RegisterNode);
      m.set("node_id", node_id).set("credentials", credentials.empty() ? node_id : credentials);
      m.set("partition_count", static_cast<std::int64_t>(partitions));
      return apply_and_save(st, m);
    }
    if (*step || (*node_run && connect.empty())) {
      sf::SlapMessage m(sf::MessageKind::Step, {{"origin", "cli"}});
      if (!node_id.empty()) m.set("node_id", node_id);
      m.set("ticks", *step ? 1 : ticks);
      return apply_and_save(st, m);
    }
    if (*node_run) {
      auto colon = connect.rfind(':');
      if (colon == std::string::npos || node_id.empty()) {
        std::cerr << "--connect needs host:port and --node\n";
        return kUsage;
      }
      sf::master::SocketLink link(connect.substr(0, colon),
                                  static_cast<std::uint16_t>(std::stoul(connect.substr(colon + 1))));
      sf::master::MasterClient client(link);
      sf::grid::GridNetwork network;
      sf::node::NodeAgent agent(node_id, credentials.empty() ? node_id : credentials, partitions,
                                sf::grid::local_then_bundled(), &network);
      agent.prepare(client, 0);
      for (sf::Tick t = 1; t <= ticks; ++t) {
        auto s = agent.step(client, t);
        for (const auto& [u, status] : s.installs) std::cout << t << " install " << sf::to_string(status) << ' ' << u << '\n';
        for (const auto& r : s.reports) std::cout << t << " instance " << r.instance_id << ' ' << r.status << '\n';
      }
      return kOk;
    }
    if (*supply) {
      sf::SlapMessage m(sf::MessageKind::Supply);
      m.set("node_id", node_id).set("url", url).set("requester", "admin");
      return apply_and_save(st, m);
    }
    if (*request) {
      auto state = sf::parse_requested_state(requested);
      auto s = open_session(st);
      sf::SlapMessage m(sf::MessageKind::RequestInstance);
      m.set("requester", user).set("reference", reference).set("url", url).set("type", type);
      m.set_map("param", parse_params(params));
      if (sla_node) m.set("sla.node_id", *sla_node);
      std::cout << sf::encode_message(s->apply(m)) << '\n';
      if (state != sf::RequestedState::started) {
        sf::SlapMessage set(sf::MessageKind::SetState);
        set.set("requester", user).set("reference", reference).set("state", std::string(sf::to_string(state)));
        std::cout << sf::encode_message(s->apply(set)) << '\n';
      }
      s->save(st.file);
      return kOk;
    }
    if (*status) {
      auto s = open_session(st);
      print_status(*s);
      return kOk;
    }
    if (*invoice) {
      auto s = open_session(st);
      std::cout << s->world().master().compute_invoice(user, from, to) << '\n';
      return kOk;
    }
    if (*grid_status) {
      auto s = open_session(st);
      return print_grid(*s, grid_instance);
    }
    if (*inject) {
      sf::SlapMessage m(sf::MessageKind::InjectWork, {{"origin", grid_instance}});
      m.set("app", app_name).set("input", read_text(input_file)).set("count", count);
      return apply_and_save(st, m);
    }

    if (*lint || *plan) {
      auto fetch = sf::grid::local_then_bundled();
      std::string text;
      try {
        text = fetch(file);
      } catch (const sf::FetchError&) {
        throw sf::ParseError(file, 0, "cannot open profile");
      }
      auto parsed = sf::profile::parse_profile(text, file);
      auto resolved = sf::profile::resolve(sf::profile::merge_extends(parsed, fetch));
      if (*lint) {
        std::cout << "ok " << resolved.sections.size() << " sections\n";
        return kOk;
      }
      auto p = sf::profile::plan(resolved, target == "software" ? sf::profile::TargetKind::software
                                                                : sf::profile::TargetKind::partition);
      for (const auto& part : p.parts) {
        sf::SlapMessage m(sf::MessageKind::Part, {{"origin", file}, {"name", part.name}, {"recipe", part.recipe}});
        for (const auto& [k, v] : part.options) m.set("option." + k, v);
        std::cout << sf::encode_message(m) << '\n';
      }
      return kOk;
    }

    if (*plint) {
      auto p = sf::mac::parse_policy(read_text(file), file);
      std::cout << "ok mode " << sf::mac::to_string(p.mode) << ", " << p.rules.size() << " rules\n";
      return kOk;
    }
    if (*audit) {
      std::ifstream in(trace_in);
      if (!in) throw sf::ParseError(trace_in, 0, "cannot open trace");
      std::vector<sf::mac::AccessRequest> reqs;
      std::vector<std::string> recorded;
      std::set<std::uint32_t> seen;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto m = sf::decode_message(line);
        if (m.kind != sf::MessageKind::AccessCheck) continue;
        reqs.push_back(sf::mac::request_from_message(m));
        recorded.push_back(m.get("allowed") == "1" ? "allow" : "deny");
        if (auto n = partition_in_path(reqs.back().path)) seen.insert(*n);
      }
      if (label_partitions) {
        seen.clear();
        for (std::uint32_t i = 0; i < label_partitions; ++i) seen.insert(i);
      }
      std::size_t denies = 0;
      if (policy_file.empty()) {
        for (std::size_t i = 0; i < reqs.size(); ++i) {
          if (recorded[i] == "deny") ++denies;
          std::cout << recorded[i] << ' ' << reqs[i].subject << ' ' << sf::mac::to_string(reqs[i].permission) << ' '
                    << (reqs[i].path.empty() ? reqs[i].target : reqs[i].path) << '\n';
        }
      } else {
        auto policy = sf::mac::parse_policy(read_text(policy_file), policy_file);
        sf::mac::Labeling labeling(seen);
        for (const auto& r : reqs) {
          auto rec = sf::mac::check_access(policy, labeling, r, sf::mac::Confinement::on);
          if (!rec.allowed) ++denies;
          std::cout << (rec.allowed ? "allow " : "deny ") << r.subject << ' ' << sf::mac::to_string(r.permission)
                    << ' ' << (r.path.empty() ? r.target : r.path) << " (" << sf::mac::to_string(rec.reason)
                    << ")\n";
        }
      }
      std::cout << reqs.size() << " checks, " << denies << " denied\n";
      return denies ? kDomainFailure : kOk;
    }
    if (*fuzz) {
      auto reqs = sf::mac::cross_partition_fuzz(fuzz_seed, fuzz_n, fuzz_parts, identity);
      std::set<std::uint32_t> all;
      for (std::uint32_t i = 0; i < fuzz_parts; ++i) all.insert(i);
      const sf::mac::Labeling labeling(all);
      const auto policy = fuzz_mode == "strict" ? strict_partition_policy(fuzz_parts) : sf::mac::Policy{};
      const auto conf = fuzz_mode == "strict" ? sf::mac::Confinement::on : sf::mac::Confinement::off;
      std::size_t allows = 0;
      for (const auto& r : reqs) allows += sf::mac::check_access(policy, labeling, r, conf).allowed ? 1 : 0;
      std::cout << "allowed " << allows << '/' << reqs.size() << '\n';
      return kOk;
    }
    if (*serve) {
      sf::master::Master master;
      sf::master::LineServer server(master, port);
      std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
      server.serve();
      return kOk;
    }
  } catch (const sf::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const sf::PolicyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const sf::MalformedMessage& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDomainFailure;
  }
  return kUsage;
}
