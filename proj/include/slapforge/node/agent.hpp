#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "slapforge/core/model.hpp"
#include "slapforge/grid/grid.hpp"
#include "slapforge/grid/recipes.hpp"
#include "slapforge/mac/policy.hpp"
#include "slapforge/master/link.hpp"
#include "slapforge/node/service.hpp"
#include "slapforge/node/simfs.hpp"
#include "slapforge/node/supervisor.hpp"
#include "slapforge/profile/plan.hpp"
#include "slapforge/profile/profile.hpp"
#include "slapforge/profile/recipe.hpp"
#include "slapforge/profile/resolve.hpp"

namespace slapforge::node {

struct AgentConfig {
  bool confinement = false;           // route actions through MAC
  mac::Mode mode = mac::Mode::targeted;
  bool install_agent_policy = true;   // load the agent's own policy at prepare time
  bool auto_service_policy = true;    // generate a policy for each deployed service
  Tick poll_period = 1;               // talk to the master every N ticks
};

struct SoftwareRoot {
  std::string url;
  std::string root;
  InstallStatus status = InstallStatus::requested;
  profile::Profile resolved;
  std::set<profile::Artifact> artifacts;
  profile::TargetState state;
  std::string error;
};

struct LocalInstance {
  std::string instance_id;
  std::uint32_t partition = 0;
  std::string release_url;
  std::string instance_type;
  ParamMap slapparameters;
  profile::TargetState state;
  ParamMap connection;
  std::set<profile::Artifact> artifacts;
  std::string status;  // last reported: running, stopped, failed
  std::string error;
};

struct StepSummary {
  Tick tick = 0;
  bool polled = false;
  std::vector<std::pair<std::string, InstallStatus>> installs;
  std::vector<master::InstanceReport> reports;
  std::vector<RestartEvent> restarts;
  std::size_t new_artifacts = 0;
};

// The per-node SLAPGRID loop: poll, install, instantiate, supervise, report.
class NodeAgent {
 public:
  NodeAgent(std::string node_id, std::string credentials, std::uint32_t partition_count, profile::FetchFn fetch,
            grid::GridNetwork* network = nullptr, AgentConfig config = {})
      : node_id_(std::move(node_id)),
        credentials_(std::move(credentials)),
        partition_count_(partition_count),
        fetch_(std::move(fetch)),
        config_(config),
        host_(network) {
    grid::register_builtin_recipes(registry_, host_);
    factories_ = grid::builtin_service_factories();
    enforcer_.confinement = config.confinement ? mac::Confinement::on : mac::Confinement::off;
    enforcer_.update([&](mac::Policy& p) { p.mode = config.mode; });
  }

  NodeAgent(const NodeAgent&) = delete;
  NodeAgent& operator=(const NodeAgent&) = delete;

  ~NodeAgent() {
    // Services reference envs and the grid host; stop them first.
    for (const auto& id : service_ids()) supervisor_.remove(id);
  }

  // slapprepare: create and label the partitions, register with the master.
  void prepare(master::MasterClient& master, Tick now) {
    ordinal_ = master.register_node(node_id_, credentials_, partition_count_, now);
    std::set<std::uint32_t> indices;
    for (std::uint32_t i = 0; i < partition_count_; ++i) {
      indices.insert(i);
      if (partitions_.count(i)) continue;
      auto part = ComputerPartition::make(ordinal_, i);
      fs_.write(part.root_path + "/.slapos-partition", part.tap_label + " " + part.ipv6_addr + "\n",
                part.user_label);
      partitions_.emplace(i, std::move(part));
    }
    enforcer_.set_labeling(mac::Labeling(indices));
    if (config_.install_agent_policy) install_agent_policy();
    prepared_ = true;
  }

  StepSummary step(master::MasterClient& master, Tick now) {
    if (!prepared_) throw Error("node '" + node_id_ + "' is not prepared");
    StepSummary summary;
    summary.tick = now;
    std::vector<master::InstanceReport> reports;

    const bool poll = config_.poll_period <= 1 || (now % config_.poll_period) == 0;
    if (poll) {
      summary.polled = true;
      for (const auto& task : master.get_tasks(node_id_, now)) {
        switch (task.kind) {
          case master::TaskKind::install: {
            auto status = install(task.release_url, summary);
            summary.installs.emplace_back(task.release_url, status);
            master.report_install(node_id_, task.release_url, status, now);
            break;
          }
          case master::TaskKind::deploy:
            reports.push_back(deploy(task, now, summary));
            break;
          case master::TaskKind::destroy:
            reports.push_back(destroy(task));
            break;
        }
      }
    }

    summary.restarts = supervisor_.tick(now);

    if (poll) {
      master.report_state(node_id_, reports, now);
      summary.reports = std::move(reports);
    }
    return summary;
  }

  // Loads the per-partition confinement pattern for one service.
  void install_service_policy(std::uint32_t partition, const std::string& kind = {}) {
    enforcer_.update([&](mac::Policy& p) {
      p.add_all(mac::generate_partition_policy(partition, kind));
      p.labeled_subjects.insert(mac::service_subject(partition));
    });
  }

  void install_agent_policy() {
    std::set<std::uint32_t> indices;
    for (const auto& [i, _] : partitions_) indices.insert(i);
    enforcer_.update([&](mac::Policy& p) { p.add_all(mac::generate_agent_policy(indices)); });
  }

  void set_mode(mac::Mode mode) {
    enforcer_.update([&](mac::Policy& p) { p = mac::set_mode(std::move(p), mode); });
  }
  void set_confinement(bool on) { enforcer_.confinement = on ? mac::Confinement::on : mac::Confinement::off; }
  void set_auto_service_policy(bool on) { config_.auto_service_policy = on; }

  // The agent's own access check (subject slapgrid_t, identity root).
  bool agent_access(const std::string& path, mac::Permission p, Tick now = 0) {
    mac::AccessRequest req;
    req.subject = std::string(mac::kAgentSubject);
    req.identity = std::string(kSystemIdentity);
    req.path = path;
    req.permission = p;
    req.tick = now;
    return enforcer_.check(req, &fs_);
  }

  // Object labels of every file currently on the node.
  std::map<std::string, std::string> label_filesystem() const {
    std::map<std::string, std::string> out;
    auto labeling = enforcer_.labeling();
    for (const auto& [path, _] : fs_.files()) {
      auto l = labeling ? labeling->label_of(path) : std::nullopt;
      out[path] = l.value_or("<unlabeled>");
    }
    return out;
  }

  // ---- accessors -----------------------------------------------------------

  const std::string& node_id() const noexcept { return node_id_; }
  std::uint32_t ordinal() const noexcept { return ordinal_; }
  bool prepared() const noexcept { return prepared_; }
  SimFs& fs() noexcept { return fs_; }
  const SimFs& fs() const noexcept { return fs_; }
  Supervisor& supervisor() noexcept { return supervisor_; }
  const Supervisor& supervisor() const noexcept { return supervisor_; }
  mac::Enforcer& enforcer() noexcept { return enforcer_; }
  grid::GridHost& grid_host() noexcept { return host_; }
  const grid::GridHost& grid_host() const noexcept { return host_; }
  profile::RecipeRegistry& registry() noexcept { return registry_; }
  const std::map<std::uint32_t, ComputerPartition>& partitions() const noexcept { return partitions_; }
  const std::map<std::string, SoftwareRoot>& software_roots() const noexcept { return software_; }
  const std::map<std::string, LocalInstance>& instances() const noexcept { return instances_; }

  void register_service_kind(const std::string& kind, ServiceFactory factory) { factories_[kind] = std::move(factory); }

 private:
  std::vector<std::string> service_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : supervisor_.table()) out.push_back(id);
    return out;
  }

  profile::TargetContext agent_context(const std::string& root, const std::string& owner, bool world_readable,
                                       profile::TargetKind kind, profile::TargetState& state, Tick now) {
    profile::TargetContext ctx;
    ctx.root = root;
    ctx.owner = owner;
    ctx.world_readable = world_readable;
    ctx.kind = kind;
    ctx.fs = &fs_;
    ctx.state = &state;
    ctx.fetch = fetch_;
    ctx.node_id = node_id_;
    ctx.gate = [this, now](const std::string& path, profile::Access a) {
      auto p = a == profile::Access::read    ? mac::Permission::read
               : a == profile::Access::write ? mac::Permission::write
                                             : mac::Permission::execute;
      return agent_access(path, p, now);
    };
    return ctx;
  }

  // Software phase: runs as the system identity into the shared root.
  InstallStatus install(const std::string& url, StepSummary& summary) {
    auto& sw = software_[url];
    sw.url = url;
    sw.root = install_root(url);
    sw.status = InstallStatus::installing;
    try {
      auto merged = profile::merge_extends(profile::parse_profile(fetch_(url), url), fetch_);
      merged.sections["buildout"].set("directory", sw.root);
      sw.resolved = profile::resolve(merged);
      auto plan = profile::plan(sw.resolved, profile::TargetKind::software);
      auto ctx = agent_context(sw.root, std::string(kSystemIdentity), true, profile::TargetKind::software, sw.state, summary.tick);
      auto result = profile::execute(plan, registry_, ctx);
      summary.new_artifacts += result.new_artifacts.size();
      sw.artifacts = {result.artifacts.begin(), result.artifacts.end()};
      if (!result.ok) {
        sw.status = InstallStatus::failed;
        sw.error = "part '" + result.failed_part + "': " + result.error;
        return sw.status;
      }
      sw.status = InstallStatus::installed;
      sw.error.clear();
    } catch (const std::exception& e) {
      sw.status = InstallStatus::failed;
      sw.error = e.what();
    }
    return sw.status;
  }

  // Builds the instance profile: resolved software sections, slap-* data
  // sections, the instance-type profile, then the requested parameters.
  profile::Profile instance_profile(const SoftwareRoot& sw, const master::Task& task, const ComputerPartition& part) {
    const auto* type_url = sw.resolved.option("instance-profile", task.instance_type);
    if (!type_url) type_url = sw.resolved.option("instance-profile", "default");
    if (!type_url) throw Error("release offers no instance profile for type '" + task.instance_type + "'");

    auto top = profile::merge_extends(profile::parse_profile(fetch_(*type_url), *type_url), fetch_);
    profile::Profile combined;
    combined.origin = *type_url;
    for (const auto& [name, section] : sw.resolved.sections)
      if (name != "buildout" && name != "instance-profile") combined.sections.set(name, section);

    combined.sections.set("slap-partition", profile::Section{{"index", std::to_string(part.index)},
                                                             {"user", part.user_label},
                                                             {"tap", part.tap_label},
                                                             {"root", part.root_path},
                                                             {"ipv6", part.ipv6_addr},
                                                             {"ipv4", part.ipv4_local}});
    combined.sections.set("slap-connection", profile::Section{{"node-id", node_id_},
                                                              {"instance-id", task.instance_id},
                                                              {"software-release-url", task.release_url},
                                                              {"software-root", sw.root}});
    for (const auto& [name, section] : top.sections) {
      auto& dst = combined.sections[name];
      for (const auto& [k, v] : section) dst.set(k, v);
    }
    // Requested parameters win over defaults in the instance profile.
    auto& params = combined.sections["slap-parameter"];
    for (const auto& [k, v] : task.slapparameters) params.set(k, v);
    combined.sections["buildout"].set("directory", part.root_path);
    return combined;
  }

  // Instance phase: runs into the partition, files owned by its user.
  master::InstanceReport deploy(const master::Task& task, Tick now, StepSummary& summary) {
    master::InstanceReport report;
    report.instance_id = task.instance_id;
    auto pit = partitions_.find(task.partition);
    if (pit == partitions_.end()) {
      report.status = "failed";
      report.error = "no local partition " + std::to_string(task.partition);
      return report;
    }
    auto& part = pit->second;
    auto [iit, fresh_instance] = instances_.try_emplace(task.instance_id);
    auto& inst = iit->second;
    if (!fresh_instance && inst.partition != task.partition) {
      report.status = "failed";
      report.error = "instance moved partitions";
      return report;
    }
    inst.instance_id = task.instance_id;
    inst.partition = task.partition;
    inst.release_url = task.release_url;
    inst.instance_type = task.instance_type;
    inst.slapparameters = task.slapparameters;
    part.state = PartitionState::allocated;
    part.occupant = task.instance_id;

    try {
      auto swit = software_.find(task.release_url);
      if (swit == software_.end() || swit->second.status != InstallStatus::installed)
        throw Error("software release not installed: " + task.release_url);
      auto resolved = profile::resolve(instance_profile(swit->second, task, part));
      auto plan = profile::plan(resolved, profile::TargetKind::partition);

      auto ctx = agent_context(part.root_path, part.user_label, false, profile::TargetKind::partition, inst.state, now);
      ctx.slapparameters = task.slapparameters;
      ctx.partition = {{"index", std::to_string(part.index)}, {"user", part.user_label},
                       {"root", part.root_path},              {"ipv6", part.ipv6_addr},
                       {"ipv4", part.ipv4_local}};
      ctx.instance_id = task.instance_id;
      ctx.published = &inst.connection;
      auto result = profile::execute(plan, registry_, ctx);
      summary.new_artifacts += result.new_artifacts.size();
      inst.artifacts = {result.artifacts.begin(), result.artifacts.end()};
      if (!result.ok) throw Error("part '" + result.failed_part + "': " + result.error);

      start_services(inst, part, task.requested_state, now);
      inst.status = task.requested_state == RequestedState::stopped ? "stopped" : "running";
      inst.error.clear();
      report.status = inst.status;
      report.connection = inst.connection;
    } catch (const std::exception& e) {
      inst.status = "failed";
      inst.error = e.what();
      report.status = "failed";
      report.error = e.what();
    }
    return report;
  }

  void start_services(LocalInstance& inst, const ComputerPartition& part, RequestedState requested, Tick now) {
    const auto desired = requested == RequestedState::stopped ? Desired::stopped : Desired::running;
    for (const auto& [id, def] : inst.state.services) {
      auto fit = factories_.find(def.kind);
      if (fit == factories_.end()) throw Error("no runnable for service kind '" + def.kind + "'");

      // Policies go in before the first service tick.
      if (config_.auto_service_policy) install_service_policy(part.index, def.kind);

      auto& known = launched_[id];
      if (supervisor_.contains(id) && known == def.fingerprint()) {
        supervisor_.set_desired(id, desired, now);
        continue;
      }
      supervisor_.remove(id);
      auto env = std::make_unique<ServiceEnv>();
      env->node_id = node_id_;
      env->partition = part.index;
      env->partition_root = part.root_path;
      env->identity = part.user_label;
      env->subject = mac::service_subject(part.index);
      env->instance_id = inst.instance_id;
      env->fs = &fs_;
      env->enforcer = &enforcer_;
      env->host = &host_;
      env->network = host_.network();
      env->now = now;
      auto runnable = fit->second(def, *env);
      envs_[id] = std::move(env);
      supervisor_.add(id, part.index, std::make_unique<GatedStart>(std::move(runnable), *this, part.index), now,
                      desired);
      known = def.fingerprint();
    }
  }

  master::InstanceReport destroy(const master::Task& task) {
    master::InstanceReport report;
    report.instance_id = task.instance_id;
    report.status = "destroyed";
    for (const auto& id : supervisor_.services_of(task.partition)) {
      supervisor_.remove(id);
      envs_.erase(id);
      launched_.erase(id);
    }
    auto pit = partitions_.find(task.partition);
    if (pit != partitions_.end()) {
      auto& part = pit->second;
      host_.drop(part.root_path);
      fs_.remove_tree(part.root_path);
      fs_.write(part.root_path + "/.slapos-partition", part.tap_label + " " + part.ipv6_addr + "\n", part.user_label);
      part.state = PartitionState::free;
      part.occupant.reset();
      const auto subject = mac::service_subject(part.index);
      enforcer_.update([&](mac::Policy& p) {
        for (auto it = p.rules.begin(); it != p.rules.end();) it = it->subject == subject ? p.rules.erase(it) : std::next(it);
        p.labeled_subjects.erase(subject);
      });
    }
    instances_.erase(task.instance_id);
    return report;
  }

  // Launching a partition service is a transition from the agent's subject
  // into the service's subject.
  class GatedStart : public Runnable {
   public:
    GatedStart(std::unique_ptr<Runnable> inner, NodeAgent& agent, std::uint32_t partition)
        : inner_(std::move(inner)), agent_(agent), partition_(partition) {}
    bool start(Tick now) override {
      mac::AccessRequest req;
      req.subject = std::string(mac::kAgentSubject);
      req.identity = std::string(kSystemIdentity);
      req.target = mac::service_subject(partition_);
      req.cls = mac::ObjectClass::process;
      req.permission = mac::Permission::transition;
      req.tick = now;
      if (!agent_.enforcer_.check(req, &agent_.fs_)) return false;
      return inner_->start(now);
    }
    RunState step(Tick now) override { return inner_->step(now); }
    void halted() override { inner_->halted(); }

   private:
    std::unique_ptr<Runnable> inner_;
    NodeAgent& agent_;
    std::uint32_t partition_;
  };

  std::string node_id_;
  std::string credentials_;
  std::uint32_t partition_count_;
  profile::FetchFn fetch_;
  AgentConfig config_;
  std::uint32_t ordinal_ = 0;
  bool prepared_ = false;

  SimFs fs_;
  mac::Enforcer enforcer_;
  grid::GridHost host_;
  profile::RecipeRegistry registry_;
  std::map<std::string, ServiceFactory> factories_;
  std::map<std::uint32_t, ComputerPartition> partitions_;
  std::map<std::string, SoftwareRoot> software_;
  std::map<std::string, LocalInstance> instances_;
  std::map<std::string, std::unique_ptr<ServiceEnv>> envs_;
  std::map<std::string, std::string> launched_;  // service id -> fingerprint
  Supervisor supervisor_;
};

}  // namespace slapforge::node
