#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "support/testkit.hpp"

using namespace slapforge;
using namespace slapforge::sim;

namespace {

ScenarioConfig e2e() { return parse_scenario(boinc_e2e_scenario_text(), "boinc-e2e"); }

std::vector<const grid::Project*> projects_of(World& w) {
  std::vector<const grid::Project*> out;
  for (const auto& [id, agent] : w.agents())
    for (const auto& [root, server] : agent->grid_host().servers()) out.push_back(&server->project());
  return out;
}

}  // namespace

TEST(Scenario, BundledE2eParses) {
  auto cfg = e2e();
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.ticks, 40);
  EXPECT_EQ(cfg.expect_wus, 5u);
  ASSERT_EQ(cfg.nodes.size(), 2u);
  EXPECT_EQ(cfg.nodes[0].node_id, "node-a");
  EXPECT_EQ(cfg.nodes[0].supplies, std::vector<std::string>{grid::kBoincE2eSoftwareUrl});
  ASSERT_EQ(cfg.requests.size(), 4u);
  EXPECT_EQ(cfg.requests[0].params.at("project-name"), "simpletest");
  EXPECT_EQ(cfg.requests[0].sla_node, "node-a");
  EXPECT_EQ(cfg.requests[3].link, "grid-server");
  EXPECT_EQ(cfg.requests[3].user, "carol");
}

TEST(Scenario, Errors) {
  EXPECT_THROW(parse_scenario("[other]\n"), ParseError);
  EXPECT_THROW(parse_scenario("[scenario]\nseed = -3\n"), ParseError);
  EXPECT_THROW(parse_scenario("[scenario]\nticks = many\n"), ParseError);
  EXPECT_THROW(parse_scenario("[scenario]\nnodes = ghost\n"), ParseError);
  EXPECT_THROW(parse_scenario("[scenario]\nrequests = r\n[r]\nuser = u\n"), ParseError);
  EXPECT_THROW(parse_scenario("[scenario]\nconfinement = maybe\n"), ParseError);
  EXPECT_THROW(parse_scenario("[scenario]\npoll-period = 0\n"), ParseError);
}

TEST(Scenario, SeedOverride) {
  auto cfg = e2e();
  ::setenv("SLAPFORGE_SEED", "99", 1);
  apply_seed_override(cfg);
  ::unsetenv("SLAPFORGE_SEED");
  EXPECT_EQ(cfg.seed, 99u);
  apply_seed_override(cfg);
  EXPECT_EQ(cfg.seed, 99u);
}

TEST(E2e, AllUnitsDoneWithOracleOutputs) {
  ScenarioRunner runner(e2e());
  auto out = runner.run();
  EXPECT_EQ(out.exit_code, 0) << testing::PrintToString(out.summary);
  EXPECT_EQ(out.grid.done, 5u);
  EXPECT_EQ(out.grid.total, 5u);
  EXPECT_EQ(out.running, 4u);
  auto projects = projects_of(runner.world());
  ASSERT_EQ(projects.size(), 1u);
  const auto& p = *projects.front();
  EXPECT_EQ(p.results.size(), 5u);
  EXPECT_GE(p.clients.size(), 2u);
  for (const auto& [wid, res] : p.results) {
    std::string expected = p.wu_store.at(wid).input;
    for (auto& c : expected)
      if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    EXPECT_EQ(res.output, expected) << wid;
  }
}

TEST(E2e, StrictConfinementStillCompletes) {
  auto cfg = e2e();
  cfg.confinement = true;
  cfg.mode = mac::Mode::strict;
  ScenarioRunner runner(cfg);
  auto out = runner.run();
  EXPECT_EQ(out.exit_code, 0) << testing::PrintToString(out.summary);
  // Service denials would show up as audited AccessChecks in the trace.
  std::size_t denied = 0;
  for (const auto& line : out.trace)
    if (line.starts_with("SLAP1 AccessCheck") && line.find(" allowed=0") != std::string::npos) ++denied;
  EXPECT_EQ(denied, 0u);
}

TEST(E2e, SameSeedSameTrace) {
  auto a = ScenarioRunner(e2e()).run();
  auto b = ScenarioRunner(e2e()).run();
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_FALSE(a.trace.empty());
}

TEST(E2e, ShortBudgetFails) {
  auto cfg = e2e();
  cfg.ticks = 0;
  auto out = ScenarioRunner(cfg).run();
  EXPECT_EQ(out.exit_code, 1);
  EXPECT_TRUE(out.trace.empty());
  cfg.ticks = 3;
  EXPECT_EQ(ScenarioRunner(cfg).run().exit_code, 1);
}

TEST(Session, JournalReplayRebuildsState) {
  const auto path = (std::filesystem::temp_directory_path() / "slapforge_session_test.state").string();
  std::filesystem::remove(path);
  {
    Session s(5);
    s.apply(SlapMessage(MessageKind::RegisterNode, {{"node_id", "n1"}, {"credentials", "c"}, {"partition_count", "3"}}));
    s.apply(SlapMessage(MessageKind::Supply, {{"node_id", "n1"}, {"url", grid::kBoincSoftwareUrl}, {"requester", "admin"}}));
    SlapMessage req(MessageKind::RequestInstance, {{"requester", "alice"}, {"reference", "srv"}, {"url", grid::kBoincSoftwareUrl}, {"type", "server"}});
    req.set("param.project-name", "demo");
    s.apply(req);
    s.apply(SlapMessage(MessageKind::Step, {{"origin", "cli"}, {"ticks", "3"}}));
    s.apply(SlapMessage(MessageKind::InjectWork, {{"origin", "srv"}, {"app", "upper_case"}, {"input", "abc"}, {"count", "2"}}));
    s.save(path);
  }
  auto loaded = Session::load(path);
  EXPECT_EQ(loaded->seed(), 5u);
  EXPECT_EQ(loaded->now(), 3);
  auto inst = loaded->world().master().find_instance("alice", "srv");
  ASSERT_TRUE(inst);
  EXPECT_EQ(inst->lifecycle, Lifecycle::running);
  auto* project = loaded->find_project("srv");
  ASSERT_NE(project, nullptr);
  EXPECT_TRUE(project->wu_store.count("demo_inj1"));
  EXPECT_TRUE(project->wu_store.count("demo_inj2"));
  EXPECT_EQ(project->wu_store.at("demo_inj2").input, "abc");
  EXPECT_THROW(loaded->apply(SlapMessage(MessageKind::InjectWork, {{"origin", "nope"}, {"app", "upper_case"}})), GridError);
  std::filesystem::remove(path);
}
