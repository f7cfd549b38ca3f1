#include <gtest/gtest.h>

#include "support/testkit.hpp"

using namespace slapforge;
using namespace slapforge::profile;

TEST(Download, DownloadOnlyKeepsFileUnderTarget) {
  testkit::Rig rig(std::map<std::string, std::string>{{"http://repo/upper_case", "#!sim-exec upper_case\n"}});
  auto ctx = rig.context();
  ctx.root = "/opt/slapgrid/abc";
  ctx.kind = TargetKind::software;
  auto r = execute(plan(resolve(parse_profile("[buildout]\ndirectory = /opt/slapgrid/abc\nparts = boinc-application\n"
                                              "[boinc-application]\nrecipe = hexagonit.recipe.download\n"
                                              "url = http://repo/upper_case\ndownload-only = true\n"
                                              "filename = upper_case\n"))),
                   rig.registry, ctx);
  ASSERT_TRUE(r.ok) << r.error;
  ASSERT_EQ(r.artifacts.size(), 1u);
  EXPECT_EQ(r.artifacts[0].id, "/opt/slapgrid/abc/parts/boinc-application/upper_case");
  EXPECT_EQ(rig.fs.find(r.artifacts[0].id)->content, "#!sim-exec upper_case\n");
}

TEST(Download, ArchivesAreUnpacked) {
  testkit::Rig rig(std::map<std::string, std::string>{{"http://repo/a.sim-archive", "#sim-archive\n@@ bin/x\nline1\n@@ lib/y\nline2\n"}});
  auto ctx = rig.context();
  auto r = rig.run("parts = a\n[a]\nrecipe = hexagonit.recipe.download\nurl = http://repo/a.sim-archive\n", ctx);
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_EQ(rig.fs.find(ctx.root + "/parts/a/bin/x")->content, "line1\n");
  EXPECT_EQ(rig.fs.find(ctx.root + "/parts/a/lib/y")->content, "line2\n");
}

TEST(Execute, EmptyPlanProducesNothing) {
  testkit::Rig rig;
  auto ctx = rig.context();
  auto r = execute(InstallPlan{}, rig.registry, ctx);
  EXPECT_TRUE(r.ok);
  EXPECT_TRUE(r.artifacts.empty());
  EXPECT_TRUE(r.new_artifacts.empty());
}

TEST(Execute, UnregisteredRecipeNamesThePart) {
  testkit::Rig rig;
  auto ctx = rig.context();
  auto r = rig.run("parts = x\n[x]\nrecipe = nobody:knows\n", ctx);
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.failed_part, "x");
}

TEST(Execute, FailureStopsLaterParts) {
  testkit::Rig rig;
  bool ran = false;
  rig.registry.register_recipe("t:fail", [](const PartSpec&, TargetContext&) { throw RecipeError("boom"); });
  rig.registry.register_recipe("t:mark", [&](const PartSpec&, TargetContext&) { ran = true; });
  auto ctx = rig.context();
  auto r = rig.run("parts = a b\n[a]\nrecipe = t:fail\n[b]\nrecipe = t:mark\n", ctx);
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.failed_part, "a");
  EXPECT_EQ(r.error, "boom");
  EXPECT_FALSE(ran);
}

TEST(Execute, WritesOutsideTargetAreRefused) {
  testkit::Rig rig;
  rig.registry.register_recipe("t:escape", [](const PartSpec&, TargetContext& c) {
    c.write_file("/srv/slapgrid/slappart1/etc/x", "nope");
  });
  auto ctx = rig.context(0);
  auto r = rig.run("parts = a\n[a]\nrecipe = t:escape\n", ctx);
  EXPECT_FALSE(r.ok);
  EXPECT_FALSE(rig.fs.exists("/srv/slapgrid/slappart1/etc/x"));
}

TEST(Execute, GateDenialFailsThePart) {
  testkit::Rig rig;
  auto ctx = rig.context();
  ctx.gate = [](const std::string&, Access a) { return a != Access::write; };
  auto r = rig.run("parts = server\n" + testkit::kServerPart, ctx);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.error.find("access denied"), std::string::npos);
}

TEST(Execute, BoincAppPlanIsIdempotent) {
  testkit::Rig rig;
  testkit::seed_software(rig.fs);
  auto ctx = rig.context();
  const auto text = "parts = server app\n" + testkit::kServerPart + testkit::app_part("app", "upper_case", "simpletest", "3");
  auto first = rig.run(text, ctx);
  ASSERT_TRUE(first.ok) << first.error;
  EXPECT_FALSE(first.new_artifacts.empty());
  auto second = rig.run(text, ctx);
  ASSERT_TRUE(second.ok) << second.error;
  EXPECT_TRUE(second.new_artifacts.empty());
  EXPECT_EQ(std::set<Artifact>(first.artifacts.begin(), first.artifacts.end()),
            std::set<Artifact>(second.artifacts.begin(), second.artifacts.end()));
}

TEST(Registry, BothAppSpellingsAreRegistered) {
  testkit::Rig rig;
  EXPECT_TRUE(rig.registry.contains("slapos.cookbook:boinc-app"));
  EXPECT_TRUE(rig.registry.contains("slapos.cookbook:boinc.app"));
  for (auto id : {"hexagonit.recipe.download", "slapos.cookbook:boinc", "slapos.cookbook:boinc-client",
                  "slapos.cookbook:mariadb"})
    EXPECT_TRUE(rig.registry.contains(id)) << id;
}

TEST(Execute, ArtifactsStayUnderTheTarget) {
  testkit::Rig rig;
  testkit::seed_software(rig.fs);
  auto ctx = rig.context(3);
  auto r = rig.run("parts = server app\n" + testkit::kServerPart + testkit::app_part("app", "upper_case", "w", "2"), ctx);
  ASSERT_TRUE(r.ok) << r.error;
  for (const auto& a : r.artifacts)
    if (a.kind == ArtifactKind::file) {
      EXPECT_TRUE(node::path_under(a.id, ctx.root)) << a.id;
    }
}
