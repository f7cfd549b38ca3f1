#include <gtest/gtest.h>

#include "support/testkit.hpp"

using namespace slapforge;
using namespace slapforge::node;

namespace {

const std::string kSw = "http://t/sw.cfg";

std::map<std::string, std::string> release_files() {
  return {
      {kSw,
       "[buildout]\nparts = bin\n"
       "[bin]\nrecipe = hexagonit.recipe.download\nurl = http://t/upper_case\ndownload-only = true\nfilename = upper_case\n"
       "[instance-profile]\ndefault = http://t/instance.cfg\nbroken = http://t/broken.cfg\n"},
      {"http://t/upper_case", "#!sim-exec upper_case\n"},
      {"http://t/instance.cfg",
       "[buildout]\nparts = copy svc\n"
       "[copy]\nrecipe = hexagonit.recipe.download\nurl = ${bin:location}/upper_case\ndownload-only = true\n"
       "[svc]\nrecipe = t:svc\ngreeting = ${slap-parameter:greeting}\n"
       "[slap-parameter]\ngreeting = hello\n"},
      {"http://t/broken.cfg", "[buildout]\nparts = bad\n[bad]\nrecipe = t:fail\n"},
  };
}

// Writes a config and declares one service; the runnable counts its steps.
void add_test_recipes(NodeAgent& agent, int* steps) {
  agent.registry().register_recipe("t:svc", [](const profile::PartSpec& part, profile::TargetContext& ctx) {
    const auto conf = ctx.root + "/etc/svc.conf";
    ctx.write_file(conf, part.option_or("greeting", "") + "\n");
    profile::ServiceDef def;
    def.id = ctx.instance_id + ":svc";
    def.kind = "t-svc";
    def.config = conf;
    def.log = ctx.root + "/var/log/svc.log";
    ctx.add_service(def);
    ctx.publish("greeting", part.option_or("greeting", ""));
  });
  agent.registry().register_recipe("t:fail", [](const profile::PartSpec&, profile::TargetContext&) {
    throw RecipeError("deliberate");
  });
  agent.register_service_kind("t-svc", [steps](const profile::ServiceDef&, ServiceEnv&) {
    return make_runnable([steps](Tick) {
      if (steps) ++*steps;
      return RunState::running;
    });
  });
}

struct Harness {
  master::Master m;
  master::InProcessLink link{m};
  master::MasterClient client{link};
  NodeAgent agent;
  int steps = 0;
  Tick now = 0;

  explicit Harness(std::uint32_t partitions = 10, AgentConfig config = {})
      : agent("n1", "secret", partitions, testkit::map_fetch(release_files()), nullptr, config) {
    add_test_recipes(agent, &steps);
    agent.prepare(client, now);
  }

  StepSummary step() {
    m.set_time(now);
    return agent.step(client, now++);
  }
};

void check_ownership(const NodeAgent& agent) {
  for (const auto& [path, e] : agent.fs().files()) {
    if (path.starts_with("/srv/slapgrid/slappart")) {
      const auto index = path.substr(std::string("/srv/slapgrid/slappart").size());
      const auto n = index.substr(0, index.find('/'));
      EXPECT_EQ(e.owner, "slapuser" + n) << path;
      EXPECT_FALSE(e.world_readable) << path;
    } else {
      EXPECT_TRUE(path.starts_with("/opt/slapgrid/")) << path;
      EXPECT_EQ(e.owner, "root") << path;
    }
  }
}

void check_containment(const NodeAgent& agent) {
  for (const auto& [id, inst] : agent.instances()) {
    const auto& root = agent.partitions().at(inst.partition).root_path;
    for (const auto& a : inst.artifacts)
      if (a.kind == profile::ArtifactKind::file) {
        EXPECT_TRUE(path_under(a.id, root)) << id << " wrote " << a.id;
      }
  }
}

}  // namespace

TEST(Prepare, CreatesAndRegistersPartitions) {
  Harness h(10);
  ASSERT_EQ(h.agent.partitions().size(), 10u);
  EXPECT_EQ(h.m.partitions().size(), 10u);
  EXPECT_EQ(h.m.nodes().at("n1").partition_count, 10u);
  for (const auto& [i, p] : h.agent.partitions()) {
    EXPECT_EQ(p, ComputerPartition::make(h.agent.ordinal(), i));
    EXPECT_EQ(h.agent.fs().find(p.root_path + "/.slapos-partition")->owner, p.user_label);
  }
}

TEST(Prepare, RerunIsARefresh) {
  Harness h(4);
  auto before = h.agent.fs().files();
  h.agent.prepare(h.client, 3);
  EXPECT_EQ(h.agent.fs().files(), before);
  EXPECT_EQ(h.m.nodes().size(), 1u);
  EXPECT_EQ(h.agent.partitions().size(), 4u);
}

TEST(Prepare, TwoHundredTwentyPartitions) {
  Harness h(220);
  EXPECT_EQ(h.agent.partitions().size(), 220u);
  EXPECT_EQ(h.agent.partitions().rbegin()->second.root_path, "/srv/slapgrid/slappart219");
}

TEST(Prepare, WrongCredentialsPropagate) {
  Harness h(2);
  NodeAgent impostor("n1", "guess", 2, testkit::map_fetch({}));
  EXPECT_THROW(impostor.prepare(h.client, 1), AuthError);
}

TEST(Step, UnpreparedAgentRefuses) {
  master::Master m;
  master::InProcessLink link(m);
  master::MasterClient c(link);
  NodeAgent a("n1", "c", 1, testkit::map_fetch({}));
  EXPECT_THROW(a.step(c, 0), Error);
}

TEST(Step, NoTasksOnlyReports) {
  Harness h(2);
  auto s = h.step();
  EXPECT_TRUE(s.polled);
  EXPECT_TRUE(s.installs.empty());
  EXPECT_TRUE(s.reports.empty());
  EXPECT_EQ(s.new_artifacts, 0u);
}

TEST(Step, InstallPopulatesSharedRoot) {
  Harness h(2);
  h.client.supply(kSw, "n1");
  auto s = h.step();
  ASSERT_EQ(s.installs.size(), 1u);
  EXPECT_EQ(s.installs[0].second, InstallStatus::installed);
  const auto root = install_root(kSw);
  ASSERT_TRUE(h.agent.fs().exists(root + "/parts/bin/upper_case"));
  EXPECT_TRUE(h.agent.fs().find(root + "/parts/bin/upper_case")->world_readable);
  EXPECT_TRUE(h.m.nodes().at("n1").installed_releases.count(kSw));
  check_ownership(h.agent);
}

TEST(Step, InstallFailureIsReported) {
  Harness h(2);
  h.client.supply("http://t/missing.cfg", "n1");
  auto s = h.step();
  ASSERT_EQ(s.installs.size(), 1u);
  EXPECT_EQ(s.installs[0].second, InstallStatus::failed);
  EXPECT_EQ(h.m.supplies().at({"n1", "http://t/missing.cfg"}), InstallStatus::failed);
}

TEST(Step, DeployRunsServicesAndPublishes) {
  Harness h(3);
  h.client.supply(kSw, "n1");
  h.step();
  h.client.request_instance("alice", "one", kSw, "default", {{"greeting", "bonjour"}});
  auto s = h.step();
  ASSERT_EQ(s.reports.size(), 1u);
  EXPECT_EQ(s.reports[0].status, "running");
  EXPECT_EQ(s.reports[0].connection.at("greeting"), "bonjour");
  auto inst = h.m.find_instance("alice", "one");
  EXPECT_EQ(inst->lifecycle, Lifecycle::running);
  EXPECT_EQ(inst->connection.at("greeting"), "bonjour");
  const auto root = h.agent.partitions().at(0).root_path;
  EXPECT_EQ(h.agent.fs().find(root + "/etc/svc.conf")->content, "bonjour\n");
  EXPECT_EQ(h.agent.fs().find(root + "/parts/copy/upper_case")->content, "#!sim-exec upper_case\n");
  EXPECT_EQ(h.steps, 1);
  h.step();
  EXPECT_EQ(h.steps, 2);
  check_ownership(h.agent);
  check_containment(h.agent);
}

TEST(Step, FailingRecipeIsolatesOneInstance) {
  Harness h(3);
  h.client.supply(kSw, "n1");
  h.step();
  h.client.request_instance("alice", "good", kSw, "default", {});
  h.client.request_instance("alice", "bad", kSw, "broken", {});
  auto s = h.step();
  ASSERT_EQ(s.reports.size(), 2u);
  std::map<std::string, std::string> status;
  for (const auto& r : s.reports) status[r.instance_id] = r.status;
  EXPECT_EQ(status.at(h.m.find_instance("alice", "good")->instance_id), "running");
  EXPECT_EQ(status.at(h.m.find_instance("alice", "bad")->instance_id), "failed");
  EXPECT_EQ(h.m.find_instance("alice", "good")->lifecycle, Lifecycle::running);
  EXPECT_NE(h.m.find_instance("alice", "bad")->last_error.find("deliberate"), std::string::npos);
}

TEST(Step, RedeployWithSameTaskChangesNothing) {
  Harness h(2);
  h.client.supply(kSw, "n1");
  h.step();
  h.client.request_instance("alice", "one", kSw, "default", {});
  h.step();
  auto fs_before = h.agent.fs().files();
  auto artifacts_before = h.agent.instances().begin()->second.artifacts;
  // Change a parameter and change it back.
  h.client.request_instance("alice", "one", kSw, "default", {{"greeting", "x"}});
  h.step();
  h.client.request_instance("alice", "one", kSw, "default", {{"greeting", "x"}});
  h.client.request_instance("alice", "one", kSw, "default", {});
  auto s = h.step();
  ASSERT_EQ(s.reports.size(), 1u);
  EXPECT_EQ(s.new_artifacts, 1u);  // the config returns to its old content
  EXPECT_EQ(h.agent.fs().files(), fs_before);
  EXPECT_EQ(h.agent.instances().begin()->second.artifacts, artifacts_before);
  auto again = h.step();
  EXPECT_EQ(again.new_artifacts, 0u);
}

TEST(Step, DestroyCleansThePartition) {
  Harness h(1);
  h.client.supply(kSw, "n1");
  h.step();
  h.client.request_instance("alice", "one", kSw, "default", {});
  h.step();
  const auto root = h.agent.partitions().at(0).root_path;
  ASSERT_TRUE(h.agent.fs().exists(root + "/etc/svc.conf"));
  h.client.set_state("alice", "one", RequestedState::destroyed);
  auto s = h.step();
  ASSERT_EQ(s.reports.size(), 1u);
  EXPECT_EQ(s.reports[0].status, "destroyed");
  EXPECT_FALSE(h.agent.fs().exists(root + "/etc/svc.conf"));
  EXPECT_TRUE(h.agent.fs().exists(root + "/.slapos-partition"));
  EXPECT_TRUE(h.agent.supervisor().table().empty());
  EXPECT_TRUE(h.agent.instances().empty());
  EXPECT_EQ(h.m.partitions().at({"n1", 0}).state, PartitionState::free);
}

TEST(Step, PollPeriodSkipsMasterBetweenPolls) {
  Harness h(1, AgentConfig{.poll_period = 3});
  EXPECT_TRUE(h.step().polled);   // tick 0
  EXPECT_FALSE(h.step().polled);  // tick 1
  EXPECT_FALSE(h.step().polled);  // tick 2
  EXPECT_TRUE(h.step().polled);   // tick 3
}

// Random request/destroy sequences keep files inside partition roots and
// owned by the right identity.
TEST(AgentProperty, ContainmentAndOwnership) {
  std::mt19937_64 rng(11);
  for (int round = 0; round < 10; ++round) {
    Harness h(6);
    h.client.supply(kSw, "n1");
    h.step();
    for (int i = 0; i < 30; ++i) {
      const auto ref = "r" + std::to_string(rng() % 8);
      switch (rng() % 3) {
        case 0:
          h.client.request_instance("u", ref, kSw, rng() % 5 ? "default" : "broken",
                                    {{"greeting", std::to_string(rng() % 4)}});
          break;
        case 1:
          if (h.m.find_instance("u", ref)) h.client.set_state("u", ref, RequestedState::destroyed);
          break;
        default:
          break;
      }
      h.step();
      check_containment(h.agent);
      check_ownership(h.agent);
      std::set<std::uint32_t> used;
      for (const auto& [id, inst] : h.agent.instances()) EXPECT_TRUE(used.insert(inst.partition).second);
    }
  }
}
