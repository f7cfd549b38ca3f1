#include <gtest/gtest.h>

#include <thread>

#include "support/testkit.hpp"

using namespace slapforge;
using namespace slapforge::master;

namespace {
const std::string kUrl(grid::kBoincSoftwareUrl);

void install(Master& m, const std::string& node, const std::string& url = kUrl) {
  m.supply(url, node);
  m.get_tasks(node);
  m.report_install(node, url, InstallStatus::installed);
}

void check_conservation(const Master& m) {
  const auto parts = m.partitions();
  const auto insts = m.instances();
  std::size_t allocated = 0;
  for (const auto& [ref, p] : parts) {
    if (p.state == PartitionState::free) {
      EXPECT_FALSE(p.occupant);
      continue;
    }
    ++allocated;
    ASSERT_TRUE(p.occupant);
    auto it = insts.find(*p.occupant);
    ASSERT_NE(it, insts.end());
    ASSERT_TRUE(it->second.partition);
    EXPECT_EQ(*it->second.partition, ref);
  }
  std::size_t placed = 0;
  for (const auto& [id, inst] : insts) {
    if (!inst.partition) continue;
    ++placed;
    EXPECT_EQ(parts.at(*inst.partition).occupant, id);
    EXPECT_TRUE(m.nodes().at(inst.partition->node_id).installed_releases.count(inst.release_url));
  }
  EXPECT_EQ(allocated, placed);
}
}  // namespace

TEST(Register, CreatesFreePartitions) {
  Master m;
  auto r = m.register_node("n1", "c", 10);
  ASSERT_EQ(r.partitions.size(), 10u);
  for (std::uint32_t i = 0; i < 10; ++i) {
    EXPECT_EQ(r.partitions[i].index, i);
    EXPECT_EQ(r.partitions[i].root_path, "/srv/slapgrid/slappart" + std::to_string(i));
    EXPECT_EQ(r.partitions[i].state, PartitionState::free);
  }
}

TEST(Register, ZeroCapacityKeepsRequestsPending) {
  Master m;
  m.register_node("n1", "c", 0);
  install(m, "n1");
  auto inst = m.request_instance("alice", "x", kUrl, "default", {});
  EXPECT_EQ(inst.lifecycle, Lifecycle::requested);
  EXPECT_EQ(m.pending(), std::vector<std::string>{inst.instance_id});
}

TEST(Register, RefreshAndCredentialMismatch) {
  Master m;
  auto first = m.register_node("n1", "c", 3);
  auto again = m.register_node("n1", "c", 3);
  EXPECT_EQ(first.ordinal, again.ordinal);
  EXPECT_EQ(first.partitions, again.partitions);
  EXPECT_THROW(m.register_node("n1", "other", 3), AuthError);
}

TEST(Supply, NextPollCarriesOneInstallTask) {
  Master m;
  m.register_node("n1", "c", 2);
  m.supply(kUrl, "n1");
  m.supply(kUrl, "n1");
  auto tasks = m.get_tasks("n1");
  ASSERT_EQ(tasks.size(), 1u);
  EXPECT_EQ(tasks[0].kind, TaskKind::install);
  EXPECT_EQ(tasks[0].release_url, kUrl);
  EXPECT_THROW(m.supply(kUrl, "ghost"), UnknownNodeError);
}

TEST(GetTasks, EmptyStateAndUnknownNode) {
  Master m;
  m.register_node("n1", "c", 2);
  EXPECT_TRUE(m.get_tasks("n1").empty());
  EXPECT_THROW(m.get_tasks("n2"), UnknownNodeError);
}

TEST(GetTasks, DeployAfterInstallAndRequest) {
  Master m;
  m.register_node("n1", "c", 2);
  install(m, "n1");
  auto inst = m.request_instance("alice", "boinc1", kUrl, "server", {{"project-name", "demo"}});
  auto tasks = m.get_tasks("n1");
  ASSERT_EQ(tasks.size(), 1u);
  EXPECT_EQ(tasks[0].kind, TaskKind::deploy);
  EXPECT_EQ(tasks[0].instance_id, inst.instance_id);
  EXPECT_EQ(tasks[0].instance_type, "server");
  EXPECT_EQ(tasks[0].partition, 0u);
  EXPECT_EQ(tasks[0].slapparameters.at("project-name"), "demo");
}

TEST(GetTasks, PollIsTheHeartbeat) {
  MasterConfig cfg;
  cfg.stale_after = 5;
  Master m(cfg);
  m.register_node("n1", "c", 1);
  m.set_time(4);
  m.get_tasks("n1");
  EXPECT_EQ(m.nodes().at("n1").last_report_time, 4);
  m.set_time(9);
  EXPECT_TRUE(m.check_liveness().empty());
  m.set_time(10);
  EXPECT_EQ(m.check_liveness(), std::vector<std::string>{"n1"});
  m.get_tasks("n1");
  EXPECT_FALSE(m.nodes().at("n1").stale);
}

TEST(Request, AllocatesLowestIndexAndIsIdempotent) {
  Master m;
  m.register_node("n1", "c", 3);
  install(m, "n1");
  auto a = m.request_instance("alice", "boinc1", kUrl, "server", {{"project-name", "p"}});
  ASSERT_TRUE(a.partition);
  EXPECT_EQ(*a.partition, (PartitionRef{"n1", 0}));
  EXPECT_EQ(a.lifecycle, Lifecycle::allocated);
  auto b = m.request_instance("alice", "boinc1", kUrl, "server", {{"project-name", "p"}});
  EXPECT_EQ(a.instance_id, b.instance_id);
  EXPECT_EQ(a.partition, b.partition);
  auto c = m.request_instance("alice", "boinc2", kUrl, "server", {});
  EXPECT_EQ(*c.partition, (PartitionRef{"n1", 1}));
}

TEST(Request, PendingUntilInstallSucceeds) {
  Master m;
  m.register_node("n1", "c", 2);
  m.supply(kUrl, "n1");
  auto inst = m.request_instance("alice", "x", kUrl, "default", {});
  EXPECT_EQ(inst.lifecycle, Lifecycle::requested);
  EXPECT_FALSE(inst.partition);
  m.get_tasks("n1");
  m.report_install("n1", kUrl, InstallStatus::installed);
  auto now = m.find_instance("alice", "x");
  ASSERT_TRUE(now->partition);
  EXPECT_EQ(now->lifecycle, Lifecycle::allocated);
  EXPECT_TRUE(m.pending().empty());
}

TEST(Request, MostFreeNodeThenNodeId) {
  Master m;
  m.register_node("b", "c", 3);
  m.register_node("a", "c", 3);
  m.register_node("z", "c", 5);
  for (auto n : {"a", "b", "z"}) install(m, n);
  EXPECT_EQ(m.request_instance("u", "1", kUrl, "t", {}).partition->node_id, "z");
  EXPECT_EQ(m.request_instance("u", "2", kUrl, "t", {}).partition->node_id, "z");
  // Now all three have 3 free partitions: lexicographic order wins.
  auto third = m.request_instance("u", "3", kUrl, "t", {});
  EXPECT_EQ(*third.partition, (PartitionRef{"a", 0}));
}

TEST(Request, SlaFilter) {
  Master m;
  m.register_node("a", "c", 5);
  m.register_node("b", "c", 1);
  install(m, "a");
  install(m, "b");
  EXPECT_EQ(m.request_instance("u", "1", kUrl, "t", {}, "b").partition->node_id, "b");
  auto full = m.request_instance("u", "2", kUrl, "t", {}, "b");
  EXPECT_FALSE(full.partition);
  EXPECT_THROW(m.request_instance("u", "3", kUrl, "t", {}, "nowhere"), UnknownNodeError);
}

TEST(Request, NeverOnNodeWithoutRelease) {
  Master m;
  m.register_node("a", "c", 5);
  m.register_node("b", "c", 1);
  install(m, "b");
  EXPECT_EQ(m.request_instance("u", "1", kUrl, "t", {}).partition->node_id, "b");
  EXPECT_FALSE(m.request_instance("u", "2", kUrl, "t", {}).partition);
}

TEST(Request, ParameterChangeTriggersRedeploy) {
  Master m;
  m.register_node("n1", "c", 1);
  install(m, "n1");
  auto inst = m.request_instance("u", "r", kUrl, "t", {{"k", "1"}});
  m.get_tasks("n1");
  m.report_state("n1", {{inst.instance_id, "running", "", {}}});
  EXPECT_TRUE(m.get_tasks("n1").empty());
  m.request_instance("u", "r", kUrl, "t", {{"k", "2"}});
  auto tasks = m.get_tasks("n1");
  ASSERT_EQ(tasks.size(), 1u);
  EXPECT_EQ(tasks[0].slapparameters.at("k"), "2");
  m.report_state("n1", {{inst.instance_id, "running", "", {}}});
  EXPECT_TRUE(m.get_tasks("n1").empty());
}

TEST(Report, RunningThenStoppedBracketsOneRecord) {
  // The record opens at allocation, which waits for the install report at tick 10.
  Master clean;
  clean.register_node("n1", "c", 1);
  clean.supply(kUrl, "n1");
  auto inst = clean.request_instance("u", "r", kUrl, "t", {});
  clean.set_time(10);
  clean.report_install("n1", kUrl, InstallStatus::installed);
  clean.report_state("n1", {{inst.instance_id, "running", "", {}}});
  clean.set_time(70);
  clean.report_state("n1", {{inst.instance_id, "stopped", "", {}}});
  auto ledger = clean.ledger();
  ASSERT_EQ(ledger.size(), 1u);
  EXPECT_EQ(ledger[0].start_time, 10);
  EXPECT_EQ(ledger[0].stop_time, 70);
}

TEST(Report, RogueNodeIsRejected) {
  Master m;
  m.register_node("n1", "c", 1);
  m.register_node("n2", "c", 1);
  install(m, "n1");
  auto inst = m.request_instance("u", "r", kUrl, "t", {}, "n1");
  EXPECT_THROW(m.report_state("n2", {{inst.instance_id, "running", "", {}}}), ConsistencyError);
  EXPECT_EQ(m.rejected_reports(), 1u);
  EXPECT_EQ(m.find_instance("u", "r")->lifecycle, Lifecycle::allocated);
  EXPECT_THROW(m.report_install("n2", kUrl, InstallStatus::installed), ConsistencyError);
}

TEST(Report, DestroyFreesAndReevaluatesPending) {
  Master m;
  m.register_node("n1", "c", 1);
  install(m, "n1");
  auto a = m.request_instance("u", "a", kUrl, "t", {});
  auto b = m.request_instance("u", "b", kUrl, "t", {});
  EXPECT_FALSE(b.partition);
  m.set_requested_state("u", "a", RequestedState::destroyed);
  auto tasks = m.get_tasks("n1");
  ASSERT_EQ(tasks.size(), 1u);
  EXPECT_EQ(tasks[0].kind, TaskKind::destroy);
  m.report_state("n1", {{a.instance_id, "destroyed", "", {}}});
  EXPECT_EQ(*m.find_instance("u", "b")->partition, (PartitionRef{"n1", 0}));
  check_conservation(m);
}

TEST(Invoice, Examples) {
  Master m;
  m.register_node("n1", "c", 2);
  m.supply(kUrl, "n1");
  EXPECT_EQ(m.compute_invoice("alice", 0, 100), 0);
  auto a = m.request_instance("alice", "a", kUrl, "t", {});
  m.set_time(10);
  m.report_install("n1", kUrl, InstallStatus::installed);
  m.set_time(70);
  m.report_state("n1", {{a.instance_id, "stopped", "", {}}});
  EXPECT_EQ(m.compute_invoice("alice", 0, 100), 60);

  Master open;
  open.register_node("n1", "c", 1);
  open.supply(kUrl, "n1");
  open.request_instance("carol", "o", kUrl, "t", {});
  open.set_time(40);
  open.report_install("n1", kUrl, InstallStatus::installed);
  EXPECT_TRUE(open.find_instance("carol", "o")->partition);
  // Oracle: [40, 100) overlaps [0, 100) for 60 ticks.
  EXPECT_EQ(open.compute_invoice("carol", 0, 100), 100 - 40);
  EXPECT_THROW(open.compute_invoice("carol", 5, 4), Error);
}

TEST(Invoice, RatePerRelease) {
  Master m(MasterConfig{.stale_after = 0, .default_rate = 1, .rates = {{kUrl, 3}}});
  m.register_node("n1", "c", 1);
  m.supply(kUrl, "n1");
  m.request_instance("u", "r", kUrl, "t", {});
  m.set_time(5);
  m.report_install("n1", kUrl, InstallStatus::installed);
  EXPECT_EQ(m.compute_invoice("u", 0, 15), 30);
}

// Random lifecycles, checked against interval arithmetic done here.
TEST(Invoice, AdditiveAndMatchesOracle) {
  std::mt19937_64 rng(77);
  for (int round = 0; round < 200; ++round) {
    Master m;
    m.register_node("n1", "c", 8);
    m.supply(kUrl, "n1");
    m.report_install("n1", kUrl, InstallStatus::installed);
    std::vector<std::pair<Tick, std::optional<Tick>>> spans;
    const int count = static_cast<int>(rng() % 5) + 1;
    std::vector<std::tuple<Tick, int, std::string>> events;  // tick, 0 start / 1 stop, reference
    for (int i = 0; i < count; ++i) {
      Tick s = static_cast<Tick>(rng() % 100);
      std::optional<Tick> e;
      if (rng() % 3) e = s + static_cast<Tick>(rng() % 60);
      spans.emplace_back(s, e);
      events.emplace_back(s, 0, "r" + std::to_string(i));
      if (e) events.emplace_back(*e, 1, "r" + std::to_string(i));
    }
    std::sort(events.begin(), events.end());
    for (const auto& [t, what, ref] : events) {
      m.set_time(t);
      if (what == 0) {
        m.request_instance("u", ref, kUrl, "t", {});
      } else {
        m.report_state("n1", {{m.find_instance("u", ref)->instance_id, "stopped", "", {}}});
      }
    }
    const Tick c = 200;
    auto oracle = [&](Tick t0, Tick t1) {
      std::int64_t sum = 0;
      for (auto [s, e] : spans)
        for (Tick t = t0; t < t1; ++t)
          if (t >= s && t < e.value_or(t1)) ++sum;
      return sum;
    };
    EXPECT_EQ(m.compute_invoice("u", 0, c), oracle(0, c));
    const Tick a = static_cast<Tick>(rng() % 201);
    const Tick b = a + static_cast<Tick>(rng() % static_cast<std::uint64_t>(c - a + 1));
    EXPECT_EQ(m.compute_invoice("u", 0, a) + m.compute_invoice("u", a, b) + m.compute_invoice("u", b, c),
              m.compute_invoice("u", 0, c));
  }
}

TEST(Property, ConservationAndStablePlacementUnderRandomOps) {
  std::mt19937_64 rng(2024);
  Master m;
  for (auto n : {"a", "b", "c"}) {
    m.register_node(n, "k", 4);
    install(m, n);
  }
  std::map<std::string, PartitionRef> placed;
  for (int step = 0; step < 600; ++step) {
    m.set_time(step);
    const auto ref = "r" + std::to_string(rng() % 20);
    switch (rng() % 4) {
      case 0:
      case 1:
        m.request_instance("u", ref, kUrl, "t", {{"v", std::to_string(rng() % 3)}});
        break;
      case 2:
        if (m.find_instance("u", ref)) m.set_requested_state("u", ref, RequestedState::destroyed);
        break;
      case 3:
        for (auto n : {"a", "b", "c"}) {
          std::vector<InstanceReport> reports;
          for (const auto& t : m.get_tasks(n)) {
            if (t.kind == TaskKind::install) continue;
            reports.push_back({t.instance_id, t.kind == TaskKind::destroy ? "destroyed" : "running", "", {}});
          }
          m.report_state(n, reports);
        }
        break;
    }
    check_conservation(m);
    for (const auto& [id, inst] : m.instances()) {
      if (!inst.partition) {
        placed.erase(id);
        continue;
      }
      auto [it, fresh] = placed.try_emplace(id, *inst.partition);
      EXPECT_EQ(it->second, *inst.partition) << id << " moved without being destroyed";
    }
  }
}

TEST(Property, ConcurrentRequestsStayConsistent) {
  Master m;
  m.register_node("n1", "c", 64);
  install(m, "n1");
  std::vector<std::thread> pool;
  for (int t = 0; t < 8; ++t)
    pool.emplace_back([&m, t] {
      for (int i = 0; i < 10; ++i) m.request_instance("u" + std::to_string(t), "r" + std::to_string(i), kUrl, "x", {});
    });
  for (auto& th : pool) th.join();
  check_conservation(m);
  EXPECT_EQ(m.instances().size(), 80u);
  EXPECT_EQ(m.pending().size(), 16u);
}

TEST(Wire, HandleSpeaksMessages) {
  Master m;
  Trace trace;
  InProcessLink link(m, &trace);
  SlapMessage reg(MessageKind::RegisterNode, {{"node_id", "n1"}, {"credentials", "c"}, {"partition_count", "2"}});
  auto reply = link.call(reg);
  EXPECT_EQ(reply.kind, MessageKind::Ack);
  EXPECT_EQ(trace.size(), 2u);
  auto bad = link.call(SlapMessage(MessageKind::RegisterNode, {{"node_id", "n1"}, {"credentials", "x"}, {"partition_count", "2"}}));
  EXPECT_THROW(raise_if_error(bad), AuthError);
  auto unknown = link.call(SlapMessage(MessageKind::GetTasks, {{"node_id", "n9"}}));
  EXPECT_THROW(raise_if_error(unknown), UnknownNodeError);
}
