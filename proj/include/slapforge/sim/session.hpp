#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "slapforge/core/message.hpp"
#include "slapforge/grid/boinc_profiles.hpp"
#include "slapforge/sim/world.hpp"

namespace slapforge::sim {

// Operator state kept as a journal of encoded messages. Loading replays the
// journal into a fresh world; the simulation is deterministic, so replay
// reconstructs the same state.
class Session {
 public:
  explicit Session(std::uint64_t seed = 0, profile::FetchFn fetch = grid::local_then_bundled())
      : seed_(seed), world_(world_config(seed), std::move(fetch)) {}

  static std::unique_ptr<Session> load(const std::string& path, std::uint64_t fresh_seed = 0,
                                       profile::FetchFn fetch = grid::local_then_bundled()) {
    std::ifstream in(path);
    if (!in) return std::make_unique<Session>(fresh_seed, std::move(fetch));
    std::string line;
    std::vector<SlapMessage> journal;
    std::uint64_t seed = fresh_seed;
    bool header = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto m = decode_message(line);
      if (header) {
        header = false;
        if (m.kind == MessageKind::Status && m.get("origin") == "session") {
          seed = static_cast<std::uint64_t>(m.at_int("seed"));
          continue;
        }
      }
      journal.push_back(std::move(m));
    }
    auto s = std::make_unique<Session>(seed, std::move(fetch));
    for (const auto& m : journal) s->apply(m);
    return s;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write state file " + path);
    SlapMessage head(MessageKind::Status, {{"origin", "session"}});
    head.set("seed", static_cast<std::int64_t>(seed_));
    out << encode_message(head) << '\n';
    for (const auto& m : journal_) out << encode_message(m) << '\n';
  }

  // Applies one operator message and records it.
  SlapMessage apply(const SlapMessage& m) {
    SlapMessage reply(MessageKind::Ack, {{"origin", "session"}, {"ok", "1"}});
    switch (m.kind) {
      case MessageKind::RegisterNode: {
        const auto& id = m.at("node_id");
        if (world_.has_agent(id)) {
          world_.master().set_time(now_);
          master::MasterClient& c = world_.client();
          world_.agent(id).prepare(c, now_);
        } else {
          world_.add_node(id, m.at("credentials"), static_cast<std::uint32_t>(m.at_int("partition_count")), now_);
        }
        reply.set("ordinal", static_cast<std::int64_t>(world_.agent(id).ordinal()));
        break;
      }
      case MessageKind::Supply:
      case MessageKind::RequestInstance:
      case MessageKind::SetState:
        world_.master().set_time(now_);
        reply = world_.call(m);
        break;
      case MessageKind::Step: {
        const auto ticks = m.has("ticks") ? m.at_int("ticks") : 1;
        const auto node = m.get("node_id");
        if (!node.empty()) world_.agent(node);  // fail before advancing time
        for (std::int64_t i = 0; i < ticks; ++i) {
          ++now_;
          if (node.empty()) {
            world_.tick(now_);
          } else {
            world_.step_node(node, now_);
            world_.flush_events();
          }
        }
        reply.set("tick", now_);
        break;
      }
      case MessageKind::InjectWork:
        reply.set("added", static_cast<std::int64_t>(inject(m)));
        break;
      default:
        throw MalformedMessage("journal cannot hold " + std::string(to_string(m.kind)));
    }
    journal_.push_back(m);
    return reply;
  }

  World& world() noexcept { return world_; }
  Tick now() const noexcept { return now_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<SlapMessage>& journal() const noexcept { return journal_; }

  // Grid project hosted by an instance, named by instance id or reference.
  grid::Project* find_project(const std::string& instance) {
    for (const auto& [id, inst] : world_.master().instances()) {
      if ((id != instance && inst.reference != instance) || !inst.partition) continue;
      if (!world_.has_agent(inst.partition->node_id)) continue;
      auto root = derive_partition_identity(inst.partition->index).root_path;
      if (auto* server = world_.agent(inst.partition->node_id).grid_host().server_at(root)) return &server->project();
    }
    return nullptr;
  }

 private:
  static WorldConfig world_config(std::uint64_t seed) {
    WorldConfig w;
    w.seed = seed;
    return w;
  }

  std::size_t inject(const SlapMessage& m) {
    auto* project = find_project(m.at("origin"));
    if (!project) throw GridError("instance '" + m.at("origin") + "' hosts no grid project");
    const auto count = m.has("count") ? m.at_int("count") : 1;
    if (count < 1) throw GridError("inject count must be positive");
    std::size_t added = 0;
    for (std::int64_t i = 0; i < count; ++i) {
      grid::WorkUnit wu;
      wu.wu_id = project->project_name + "_inj" + std::to_string(project->wu_order.size());
      wu.app_name = m.at("app");
      wu.input = m.get("input");
      if (project->add_work_unit(std::move(wu))) ++added;
    }
    return added;
  }

  std::uint64_t seed_;
  World world_;
  Tick now_ = 0;
  std::vector<SlapMessage> journal_;
};

}  // namespace slapforge::sim
