#include <gtest/gtest.h>

#include <set>

#include "nanozone/scenario.hpp"
#include "test_util.hpp"

using namespace nanozone;

namespace {

const ScenarioLibrary& library() {
  static const ScenarioLibrary lib(NANOZONE_SCENARIO_DIR);
  return lib;
}

Scenario with_steps(const std::string& name, const Json& steps) {
  Json j = {{"name", name}, {"steps", steps}, {"expect", "ok"}};
  return parse_scenario(j);
}

}  // namespace

TEST(Attacks, GoldenSuiteBlocked) {
  const auto names = library().golden();
  ASSERT_EQ(names.size(), 12u);
  const auto results = library().run(names);
  const Json& manifest = library().manifest();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const ScenarioResult& r = results[i];
    EXPECT_TRUE(r.blocked) << r.name << ": " << r.detail;
    EXPECT_TRUE(outcome_matches(manifest["golden"][i]["expect"].get<std::string>(), r.actual))
        << r.name << " produced " << r.actual;
  }
}

TEST(Attacks, ManifestCoversAllAnchors) {
  std::set<std::string> anchors;
  for (const auto& e : library().manifest()["golden"]) {
    anchors.insert(e["anchor"].get<std::string>());
    for (const auto& a : e.value("also_covers", Json::array())) anchors.insert(a.get<std::string>());
  }
  for (const char* cve : {"CVE-2014-0160", "CVE-2023-3138", "CVE-2013-2028", "CVE-2024-22857", "CVE-2017-2800",
                          "CVE-2017-18922", "CVE-2022-24834", "CVE-2015-7805", "CVE-2016-5314", "CVE-2021-44486"})
    EXPECT_TRUE(anchors.count(cve)) << cve;
}

TEST(Attacks, BenignBaselineClean) {
  const ScenarioResult r = run_scenario(library().at("benign_baseline"));
  EXPECT_TRUE(r.blocked) << r.detail;
  EXPECT_EQ(r.actual, "ok");
  EXPECT_EQ(r.faults, 0u);
}

TEST(Attacks, ParallelRunMatchesSequential) {
  const auto names = library().golden();
  const auto seq = library().run(names, 1);
  const auto par = library().run(names, 4);
  ASSERT_EQ(seq.size(), par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    EXPECT_EQ(seq[i].actual, par[i].actual);
    EXPECT_EQ(seq[i].blocked, par[i].blocked);
    EXPECT_EQ(seq[i].faults, par[i].faults);
  }
}

TEST(Attacks, UnknownScenario) {
  EXPECT_ERROR_CODE(library().at("no_such_scenario"), ErrorCode::kUnknownScenario);
  EXPECT_ERROR_CODE(library().run({"heartbleed_oob_read", "nope"}), ErrorCode::kUnknownScenario);
}

TEST(Attacks, StrictKeys) {
  EXPECT_ERROR_CODE(parse_scenario(Json::parse(R"({"name": "x", "stepz": []})")), ErrorCode::kConfig);
  EXPECT_ERROR_CODE(parse_scenario(Json::parse(R"({"name": "x", "machine": {"corez": 2}})")), ErrorCode::kConfig);
  EXPECT_ERROR_CODE(parse_scenario(Json::parse(R"({"name": "x", "machine": {"rng_trap_on": false}})")),
                    ErrorCode::kConfig);
  EXPECT_ERROR_CODE(run_scenario(with_steps("x", Json::parse(R"([{"op": "teleport"}])"))), ErrorCode::kConfig);
  EXPECT_ERROR_CODE(run_scenario(with_steps("x", Json::parse(R"([{"op": "revoke", "extra": 1}])"))),
                    ErrorCode::kConfig);
}

TEST(Attacks, OutcomeMatching) {
  EXPECT_TRUE(outcome_matches("SwitchRejected", "SwitchRejected(WrongGptBase)"));
  EXPECT_TRUE(outcome_matches("CpiViolation(TypeMismatch)", "CpiViolation(TypeMismatch)"));
  EXPECT_FALSE(outcome_matches("CpiViolation(TypeMismatch)", "CpiViolation(AddrMismatch)"));
  EXPECT_FALSE(outcome_matches("GPF", "GPFX"));
  EXPECT_FALSE(outcome_matches("PermFault", "ok"));
}

// Removing the relevant protection must let each control-flow attack through.
TEST(Attacks, NegativeControls) {
  struct Case {
    const char* scenario;
    const char* key;
  } cases[] = {{"fnptr_overwrite_zlog", "instrument"},
               {"fnptr_reuse_type_confusion", "instrument"},
               {"stray_gcsstr_inline", "scan"}};
  for (const auto& c : cases) {
    Scenario s = library().at(c.scenario);
    for (auto& st : s.steps)
      if (st["op"] == "run_program") st[c.key] = false;
    const ScenarioResult r = run_scenario(s);
    EXPECT_FALSE(r.blocked) << c.scenario << " still blocked with " << c.key << " off: " << r.actual;
  }
  Scenario ret = library().at("ret_overwrite_nginx");
  const Json trap = {{"op", "trap"}, {"cause", "syscall"}};
  const Json off = {{"op", "kernel_set_features"}, {"gcs_on", false}};
  const Json resume = {{"op", "resume"}};
  // Resume forces GCS back on, so the kernel's edit must not survive.
  ret.steps.insert(ret.steps.begin(), {trap, off, resume});
  EXPECT_TRUE(run_scenario(ret).blocked);
}

TEST(Attacks, CrossCoreWindowIsPerCore) {
  const ScenarioResult r = run_scenario(library().at("cross_core_window"));
  EXPECT_EQ(r.actual, "GPF");
}
