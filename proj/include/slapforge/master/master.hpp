#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "slapforge/core/message.hpp"
#include "slapforge/core/model.hpp"
#include "slapforge/error.hpp"

namespace slapforge::master {

enum class TaskKind { install, deploy, destroy };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::install: return "install";
    case TaskKind::deploy: return "deploy";
    case TaskKind::destroy: return "destroy";
  }
  return "?";
}

struct Task {
  TaskKind kind = TaskKind::install;
  std::string release_url;
  std::string instance_id;
  std::string instance_type;
  ParamMap slapparameters;
  std::uint32_t partition = 0;
  RequestedState requested_state = RequestedState::started;

  bool operator==(const Task&) const = default;

  ParamMap to_params() const {
    ParamMap m{{"kind", std::string(to_string(kind))}, {"url", release_url}};
    if (kind != TaskKind::install) {
      m["instance_id"] = instance_id;
      m["type"] = instance_type;
      m["partition"] = std::to_string(partition);
      m["state"] = std::string(to_string(requested_state));
      for (const auto& [k, v] : slapparameters) m["param." + k] = v;
    }
    return m;
  }

  static Task from_params(const ParamMap& m) {
    auto get = [&](const std::string& k) {
      auto it = m.find(k);
      if (it == m.end()) throw MalformedMessage("task lacks '" + k + "'");
      return it->second;
    };
    Task t;
    auto kind = get("kind");
    if (kind == "install") t.kind = TaskKind::install;
    else if (kind == "deploy") t.kind = TaskKind::deploy;
    else if (kind == "destroy") t.kind = TaskKind::destroy;
    else throw MalformedMessage("unknown task kind '" + kind + "'");
    t.release_url = get("url");
    if (t.kind != TaskKind::install) {
      t.instance_id = get("instance_id");
      t.instance_type = get("type");
      try {
        t.partition = static_cast<std::uint32_t>(std::stoul(get("partition")));
      } catch (const std::logic_error&) {
        throw MalformedMessage("bad task partition");
      }
      t.requested_state = parse_requested_state(get("state"));
      for (const auto& [k, v] : m)
        if (k.starts_with("param.")) t.slapparameters[k.substr(6)] = v;
    }
    return t;
  }
};

// One entry of a node's ReportState.
struct InstanceReport {
  std::string instance_id;
  std::string status;  // a lifecycle name, or "failed"
  std::string error;
  ParamMap connection;
};

struct MasterConfig {
  Tick stale_after = 50;             // silent ticks before a node is stale; 0 disables
  std::int64_t default_rate = 1;     // cost units per tick
  std::map<std::string, std::int64_t> rates;  // per release url
};

struct RegisterResult {
  std::uint32_t ordinal = 0;
  std::vector<ComputerPartition> partitions;
};

// The central directory. Every mutating call is serialized through one
// mutex, so concurrent agents observe a single ordered command stream.
class Master {
 public:
  explicit Master(MasterConfig config = {}) : config_(std::move(config)) {}

  // ---- clock -------------------------------------------------------------

  void set_time(Tick t) {
    std::lock_guard lock(mu_);
    now_ = std::max(now_, t);
  }
  Tick now() const {
    std::lock_guard lock(mu_);
    return now_;
  }

  // ---- operations ----------------------------------------------------------

  RegisterResult register_node(const std::string& node_id, const std::string& credentials,
                               std::uint32_t partition_count) {
    std::lock_guard lock(mu_);
    if (node_id.empty()) throw Error("empty node id");
    auto it = nodes_.find(node_id);
    if (it != nodes_.end()) {
      if (it->second.credentials != credentials) throw AuthError("credential mismatch for node '" + node_id + "'");
      it->second.last_report_time = now_;
      it->second.stale = false;
      return {it->second.ordinal, node_partitions(node_id)};
    }
    NodeRecord rec;
    rec.node_id = node_id;
    rec.credentials = credentials;
    rec.ordinal = static_cast<std::uint32_t>(nodes_.size()) + 1;
    rec.partition_count = partition_count;
    rec.last_report_time = now_;
    for (std::uint32_t i = 0; i < partition_count; ++i)
      partitions_[{node_id, i}] = ComputerPartition::make(rec.ordinal, i);
    nodes_[node_id] = rec;
    return {rec.ordinal, node_partitions(node_id)};
  }

  void supply(const std::string& release_url, const std::string& node_id) {
    std::lock_guard lock(mu_);
    require_node(node_id);
    auto [it, inserted] = supplies_.try_emplace({node_id, release_url}, InstallStatus::requested);
    if (!inserted && it->second == InstallStatus::failed) it->second = InstallStatus::requested;
  }

  SoftwareInstance request_instance(const std::string& requester, const std::string& reference,
                                    const std::string& release_url, const std::string& instance_type,
                                    const ParamMap& slapparameters,
                                    const std::optional<std::string>& sla_node = std::nullopt) {
    std::lock_guard lock(mu_);
    if (sla_node && !nodes_.count(*sla_node)) throw UnknownNodeError("sla names unknown node '" + *sla_node + "'");

    if (auto it = by_reference_.find({requester, reference}); it != by_reference_.end()) {
      auto& inst = instances_.at(it->second);
      if (inst.slapparameters != slapparameters) {
        inst.slapparameters = slapparameters;
        if (inst.partition) redeploy_.insert(inst.instance_id);
      }
      return inst;
    }

    SoftwareInstance inst;
    inst.instance_id = "inst-" + std::to_string(++instance_seq_);
    inst.requester = requester;
    inst.reference = reference;
    inst.release_url = release_url;
    inst.instance_type = instance_type;
    inst.slapparameters = slapparameters;
    by_reference_[{requester, reference}] = inst.instance_id;
    if (sla_node) sla_[inst.instance_id] = *sla_node;
    instances_[inst.instance_id] = inst;
    if (!try_allocate(inst.instance_id)) pending_.push_back(inst.instance_id);
    return instances_.at(inst.instance_id);
  }

  void set_requested_state(const std::string& requester, const std::string& reference, RequestedState state) {
    std::lock_guard lock(mu_);
    auto it = by_reference_.find({requester, reference});
    if (it == by_reference_.end()) throw Error("no instance '" + reference + "' for '" + requester + "'");
    auto& inst = instances_.at(it->second);
    inst.requested_state = state;
    if (!inst.partition && state == RequestedState::destroyed) {
      inst.lifecycle = Lifecycle::destroyed;
      pending_.erase(std::remove(pending_.begin(), pending_.end(), inst.instance_id), pending_.end());
    }
  }

  std::vector<Task> get_tasks(const std::string& node_id) {
    std::lock_guard lock(mu_);
    auto& node = require_node(node_id);
    node.last_report_time = now_;
    if (node.stale) {
      node.stale = false;
      for (auto& [_, inst] : instances_)
        if (inst.partition && inst.partition->node_id == node_id) inst.stale = false;
    }

    std::vector<Task> tasks;
    for (auto& [key, status] : supplies_) {
      if (key.first != node_id || status != InstallStatus::requested) continue;
      status = InstallStatus::installing;
      tasks.push_back({TaskKind::install, key.second, {}, {}, {}, 0, RequestedState::started});
    }
    std::vector<Task> destroys;
    for (auto& [index, part] : partitions_on(node_id)) {
      if (!part->occupant) continue;
      auto& inst = instances_.at(*part->occupant);
      Task t{TaskKind::deploy, inst.release_url, inst.instance_id, inst.instance_type, inst.slapparameters,
             index, inst.requested_state};
      if (inst.requested_state == RequestedState::destroyed) {
        t.kind = TaskKind::destroy;
        destroys.push_back(std::move(t));
        continue;
      }
      const bool want_running = inst.requested_state == RequestedState::started;
      const bool settled = (want_running && inst.lifecycle == Lifecycle::running) ||
                           (!want_running && inst.lifecycle == Lifecycle::stopped);
      if (settled && !redeploy_.count(inst.instance_id)) continue;
      if (inst.lifecycle == Lifecycle::allocated) inst.lifecycle = Lifecycle::deploying;
      tasks.push_back(std::move(t));
    }
    for (auto& t : destroys) tasks.push_back(std::move(t));
    return tasks;
  }

  void report_install(const std::string& node_id, const std::string& release_url, InstallStatus status) {
    std::lock_guard lock(mu_);
    auto& node = require_node(node_id);
    auto it = supplies_.find({node_id, release_url});
    if (it == supplies_.end())
      throw ConsistencyError("node '" + node_id + "' reported a release it was never supplied: " + release_url);
    it->second = status;
    if (status == InstallStatus::installed) {
      node.installed_releases.insert(release_url);
      reevaluate_pending();
    } else if (status == InstallStatus::failed) {
      node.installed_releases.erase(release_url);
    }
  }

  void report_state(const std::string& node_id, const std::vector<InstanceReport>& reports) {
    std::lock_guard lock(mu_);
    require_node(node_id);
    for (const auto& r : reports) {
      auto it = instances_.find(r.instance_id);
      if (it == instances_.end() || !it->second.partition || it->second.partition->node_id != node_id) {
        rejected_reports_++;
        throw ConsistencyError("node '" + node_id + "' reported instance '" + r.instance_id +
                               "' which is not allocated to it");
      }
      if (r.status != "failed") parse_lifecycle(r.status);
    }
    bool freed = false;
    for (const auto& r : reports) {
      auto& inst = instances_.at(r.instance_id);
      if (!r.connection.empty()) inst.connection = r.connection;
      if (r.status == "failed") {
        inst.last_error = r.error;
        inst.lifecycle = Lifecycle::deploying;
        continue;
      }
      auto lc = parse_lifecycle(r.status);
      switch (lc) {
        case Lifecycle::running:
          if (inst.lifecycle != Lifecycle::running || redeploy_.count(inst.instance_id)) {
            redeploy_.erase(inst.instance_id);
            inst.last_error.clear();
          }
          inst.lifecycle = Lifecycle::running;
          open_record(inst);
          break;
        case Lifecycle::stopped:
          redeploy_.erase(inst.instance_id);
          inst.lifecycle = Lifecycle::stopped;
          close_record(inst.instance_id);
          break;
        case Lifecycle::destroyed: {
          close_record(inst.instance_id);
          auto& part = partitions_.at({inst.partition->node_id, inst.partition->index});
          part.state = PartitionState::free;
          part.occupant.reset();
          inst.partition.reset();
          inst.lifecycle = Lifecycle::destroyed;
          redeploy_.erase(inst.instance_id);
          freed = true;
          break;
        }
        default:
          inst.lifecycle = lc;
          break;
      }
    }
    if (freed) reevaluate_pending();
  }

  // Sum over the requester's records of overlap([start, stop or t1), [t0, t1)) * rate.
  std::int64_t compute_invoice(const std::string& requester, Tick t0, Tick t1) const {
    std::lock_guard lock(mu_);
    if (t0 > t1) throw Error("invoice period ends before it starts");
    std::int64_t total = 0;
    for (const auto& rec : ledger_) {
      auto it = instances_.find(rec.instance_id);
      if (it == instances_.end() || it->second.requester != requester) continue;
      const Tick end = rec.stop_time.value_or(t1);
      const Tick lo = std::max(rec.start_time, t0);
      const Tick hi = std::min(end, t1);
      if (hi > lo) total += (hi - lo) * rec.rate;
    }
    return total;
  }

  // Marks nodes that stopped polling; their instances are flagged, not moved.
  std::vector<std::string> check_liveness() {
    std::lock_guard lock(mu_);
    std::vector<std::string> stale;
    if (config_.stale_after <= 0) return stale;
    for (auto& [id, node] : nodes_) {
      if (node.stale || now_ - node.last_report_time <= config_.stale_after) continue;
      node.stale = true;
      stale.push_back(id);
      for (auto& [_, inst] : instances_)
        if (inst.partition && inst.partition->node_id == id) inst.stale = true;
    }
    return stale;
  }

  // ---- snapshots -----------------------------------------------------------

  std::map<std::string, NodeRecord> nodes() const {
    std::lock_guard lock(mu_);
    return nodes_;
  }
  std::map<PartitionRef, ComputerPartition> partitions() const {
    std::lock_guard lock(mu_);
    std::map<PartitionRef, ComputerPartition> out;
    for (const auto& [k, v] : partitions_) out[{k.first, k.second}] = v;
    return out;
  }
  std::map<std::string, SoftwareInstance> instances() const {
    std::lock_guard lock(mu_);
    return instances_;
  }
  std::optional<SoftwareInstance> find_instance(const std::string& requester, const std::string& reference) const {
    std::lock_guard lock(mu_);
    auto it = by_reference_.find({requester, reference});
    if (it == by_reference_.end()) return std::nullopt;
    return instances_.at(it->second);
  }
  std::vector<AccountingRecord> ledger() const {
    std::lock_guard lock(mu_);
    return ledger_;
  }
  std::map<std::pair<std::string, std::string>, InstallStatus> supplies() const {
    std::lock_guard lock(mu_);
    return supplies_;
  }
  std::vector<std::string> pending() const {
    std::lock_guard lock(mu_);
    return {pending_.begin(), pending_.end()};
  }
  std::size_t rejected_reports() const {
    std::lock_guard lock(mu_);
    return rejected_reports_;
  }

  // AccountingEvent messages produced since the last drain, in order.
  std::vector<SlapMessage> drain_events() {
    std::lock_guard lock(mu_);
    std::vector<SlapMessage> out;
    out.swap(events_);
    return out;
  }

  // ---- wire entry point ----------------------------------------------------

  SlapMessage handle(const SlapMessage& msg);

 private:
  using PartKey = std::pair<std::string, std::uint32_t>;

  NodeRecord& require_node(const std::string& node_id) {
    auto it = nodes_.find(node_id);
    if (it == nodes_.end()) throw UnknownNodeError("unknown node '" + node_id + "'");
    return it->second;
  }

  std::vector<ComputerPartition> node_partitions(const std::string& node_id) const {
    std::vector<ComputerPartition> out;
    for (auto it = partitions_.lower_bound({node_id, 0}); it != partitions_.end() && it->first.first == node_id; ++it)
      out.push_back(it->second);
    return out;
  }

  std::vector<std::pair<std::uint32_t, ComputerPartition*>> partitions_on(const std::string& node_id) {
    std::vector<std::pair<std::uint32_t, ComputerPartition*>> out;
    for (auto it = partitions_.lower_bound({node_id, 0}); it != partitions_.end() && it->first.first == node_id; ++it)
      out.emplace_back(it->first.second, &it->second);
    return out;
  }

  // First fit: among eligible nodes take the one with most free partitions
  // (ties by node id), then its lowest free index.
  bool try_allocate(const std::string& instance_id) {
    auto& inst = instances_.at(instance_id);
    if (inst.requested_state == RequestedState::destroyed) return true;
    const auto sla = sla_.find(instance_id);
    const NodeRecord* best = nullptr;
    std::size_t best_free = 0;
    for (const auto& [id, node] : nodes_) {
      if (sla != sla_.end() && sla->second != id) continue;
      if (!node.installed_releases.count(inst.release_url)) continue;
      std::size_t free = 0;
      for (const auto& [idx, part] : partitions_on(id))
        if (part->state == PartitionState::free) ++free;
      if (free > best_free) {
        best = &node;
        best_free = free;
      }
    }
    if (!best) return false;
    for (auto& [idx, part] : partitions_on(best->node_id)) {
      if (part->state != PartitionState::free) continue;
      part->state = PartitionState::allocated;
      part->occupant = instance_id;
      inst.partition = PartitionRef{best->node_id, idx};
      inst.lifecycle = Lifecycle::allocated;
      open_record(inst);
      return true;
    }
    return false;
  }

  void reevaluate_pending() {
    std::deque<std::string> still;
    while (!pending_.empty()) {
      auto id = pending_.front();
      pending_.pop_front();
      if (!try_allocate(id)) still.push_back(id);
    }
    pending_.swap(still);
  }

  std::int64_t rate_for(const std::string& url) const {
    auto it = config_.rates.find(url);
    return it == config_.rates.end() ? config_.default_rate : it->second;
  }

  void open_record(const SoftwareInstance& inst) {
    if (open_.count(inst.instance_id)) return;
    open_[inst.instance_id] = ledger_.size();
    ledger_.push_back({inst.instance_id, now_, std::nullopt, rate_for(inst.release_url)});
    SlapMessage ev(MessageKind::AccountingEvent);
    ev.set("requester", inst.requester).set("instance_id", inst.instance_id).set("event", "open");
    ev.set("tick", now_).set("rate", ledger_.back().rate);
    events_.push_back(std::move(ev));
  }

  void close_record(const std::string& instance_id) {
    auto it = open_.find(instance_id);
    if (it == open_.end()) return;
    ledger_[it->second].stop_time = now_;
    open_.erase(it);
    SlapMessage ev(MessageKind::AccountingEvent);
    ev.set("requester", instances_.at(instance_id).requester).set("instance_id", instance_id);
    ev.set("event", "close").set("tick", now_);
    events_.push_back(std::move(ev));
  }

  // Recursive so that handle() can call the typed operations.
  mutable std::recursive_mutex mu_;
  MasterConfig config_;
  Tick now_ = 0;
  std::map<std::string, NodeRecord> nodes_;
  std::map<PartKey, ComputerPartition> partitions_;
  std::map<std::pair<std::string, std::string>, InstallStatus> supplies_;  // (node, url)
  std::map<std::string, SoftwareInstance> instances_;
  std::map<std::pair<std::string, std::string>, std::string> by_reference_;
  std::map<std::string, std::string> sla_;
  std::set<std::string> redeploy_;
  std::deque<std::string> pending_;
  std::vector<AccountingRecord> ledger_;
  std::map<std::string, std::size_t> open_;
  std::vector<SlapMessage> events_;
  std::uint64_t instance_seq_ = 0;
  std::size_t rejected_reports_ = 0;
};

// ---- message (de)construction shared by both ends of the link ---------------

inline SlapMessage instance_to_message(MessageKind kind, const SoftwareInstance& inst) {
  SlapMessage m(kind);
  m.set("requester", inst.requester).set("reference", inst.reference).set("instance_id", inst.instance_id);
  m.set("url", inst.release_url).set("type", inst.instance_type);
  m.set("lifecycle", std::string(to_string(inst.lifecycle)));
  m.set("state", std::string(to_string(inst.requested_state)));
  if (inst.partition) m.set("node", inst.partition->node_id).set("partition", inst.partition->index);
  m.set_map("param", inst.slapparameters);
  m.set_map("conn", inst.connection);
  return m;
}

inline SlapMessage error_reply(const SlapMessage& req, const std::string& code, const std::string& what) {
  SlapMessage m(MessageKind::Ack);
  for (auto key : kIdentityKeys)
    if (req.has(std::string(key))) m.set(std::string(key), req.get(std::string(key)));
  if (!m.well_formed()) m.set("origin", "master");
  m.set("ok", "0").set("error", code).set("message", what);
  return m;
}

inline SlapMessage Master::handle(const SlapMessage& msg) {
  try {
    if (msg.has("tick")) set_time(msg.at_int("tick"));
    switch (msg.kind) {
      case MessageKind::RegisterNode: {
        auto count = msg.at_int("partition_count");
        if (count < 0 || count > 65536) throw MalformedMessage("partition_count out of range");
        auto r = register_node(msg.at("node_id"), msg.get("credentials"), static_cast<std::uint32_t>(count));
        SlapMessage ack(MessageKind::Ack, {{"node_id", msg.at("node_id")}, {"ok", "1"}});
        ack.set("ordinal", static_cast<std::int64_t>(r.ordinal));
        ack.set("partition_count", static_cast<std::int64_t>(r.partitions.size()));
        return ack;
      }
      case MessageKind::Supply:
        supply(msg.at("url"), msg.at("node_id"));
        return SlapMessage(MessageKind::Ack, {{"node_id", msg.at("node_id")}, {"ok", "1"}});
      case MessageKind::RequestInstance: {
        std::optional<std::string> sla;
        if (msg.has("sla.node_id")) sla = msg.at("sla.node_id");
        auto inst = request_instance(msg.at("requester"), msg.at("reference"), msg.at("url"),
                                     msg.get("type", "default"), msg.get_map("param"), sla);
        auto reply = instance_to_message(MessageKind::Ack, inst);
        reply.set("ok", "1");
        return reply;
      }
      case MessageKind::SetState:
        set_requested_state(msg.at("requester"), msg.at("reference"), parse_requested_state(msg.at("state")));
        return SlapMessage(MessageKind::Ack, {{"requester", msg.at("requester")}, {"ok", "1"}});
      case MessageKind::GetTasks: {
        auto tasks = get_tasks(msg.at("node_id"));
        std::vector<ParamMap> items;
        for (const auto& t : tasks) items.push_back(t.to_params());
        SlapMessage reply(MessageKind::TaskList, {{"node_id", msg.at("node_id")}});
        reply.set_list("task", items);
        return reply;
      }
      case MessageKind::ReportInstall:
        report_install(msg.at("node_id"), msg.at("url"), parse_install_status(msg.at("status")));
        return SlapMessage(MessageKind::Ack, {{"node_id", msg.at("node_id")}, {"ok", "1"}});
      case MessageKind::ReportState: {
        std::vector<InstanceReport> reports;
        for (const auto& item : msg.get_list("instance")) {
          InstanceReport r;
          auto get = [&](const std::string& k) {
            auto it = item.find(k);
            return it == item.end() ? std::string() : it->second;
          };
          r.instance_id = get("id");
          r.status = get("status");
          r.error = get("error");
          for (const auto& [k, v] : item)
            if (k.starts_with("conn.")) r.connection[k.substr(5)] = v;
          reports.push_back(std::move(r));
        }
        report_state(msg.at("node_id"), reports);
        return SlapMessage(MessageKind::Ack, {{"node_id", msg.at("node_id")}, {"ok", "1"}});
      }
      default:
        throw MalformedMessage("master does not accept " + std::string(to_string(msg.kind)));
    }
  } catch (const AuthError& e) {
    return error_reply(msg, "auth", e.what());
  } catch (const UnknownNodeError& e) {
    return error_reply(msg, "unknown-node", e.what());
  } catch (const ConsistencyError& e) {
    return error_reply(msg, "consistency", e.what());
  } catch (const MalformedMessage& e) {
    return error_reply(msg, "malformed", e.what());
  } catch (const Error& e) {
    return error_reply(msg, "error", e.what());
  }
}

}  // namespace slapforge::master
