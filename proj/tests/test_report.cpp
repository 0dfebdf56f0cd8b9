#include <gtest/gtest.h>

#include <fstream>

#include "nanozone/report.hpp"

using namespace nanozone;

namespace {

WorkloadConfig golden_config() {
  WorkloadConfig c;
  c.connections = 40;
  c.requests_per_connection = 6;
  c.domains_per_core = 14;
  c.interleave = Interleave::kRandom;
  c.seed = 7;
  return c;
}

}  // namespace

// Schema and values are pinned; any change to either must be deliberate.
TEST(Report, MatchesGoldenFile) {
  const Json got = report_to_json(simulate(golden_config()));
  std::ifstream in(std::string(NANOZONE_TEST_DATA_DIR) + "/report_small.json");
  ASSERT_TRUE(in) << "missing golden file";
  const Json want = Json::parse(in);
  EXPECT_EQ(got, want) << got.dump(2);
}

TEST(Report, RequiredFields) {
  const Json j = report_to_json(simulate(golden_config()));
  EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
  for (const char* k : {"config", "pas_count", "requests", "switches", "per_core", "total_cycles", "revocations",
                        "monitor", "heatmap"})
    EXPECT_TRUE(j.contains(k)) << k;
  for (const char* k : {"L1", "L2", "L3"}) {
    EXPECT_TRUE(j["switches"]["rates"].contains(k));
    EXPECT_TRUE(j["switches"]["counts"].contains(k));
  }
  EXPECT_EQ(j["per_core"].size(), 2u);
  // The emitted config round-trips through the parser.
  EXPECT_EQ(report_to_json(simulate(parse_workload_config(j["config"])))["switches"], j["switches"]);
}

TEST(Report, TableRow) {
  WorkloadConfig c;
  c.connections = 20;
  c.domains_per_core = 7;
  const std::string row = table_row(simulate(c));
  EXPECT_NE(row.find("74.13"), std::string::npos);
  EXPECT_NE(row.find("100.00"), std::string::npos);
  EXPECT_NE(table_header().find("avg_cycles"), std::string::npos);
}
