// nanozone: run workloads, oracle suites, attack scenarios and the toy-IR
// passes. Exit status: 0 pass, 1 suite failure, 2 usage or config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nanozone/oracle.hpp"
#include "nanozone/report.hpp"
#include "nanozone/scenario.hpp"
#include "nanozone/toy_ir.hpp"
#include "nanozone/workload.hpp"

namespace fs = std::filesystem;
using namespace nanozone;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;
constexpr unsigned kTable4Domains[] = {7, 14, 28, 112, 168, 224};

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::kConfig, "cannot write " + p.string());
  out << text;
}

struct SimulateArgs {
  std::string config;
  std::string policy;
  std::string interleave;
  unsigned domains = 0;
  std::uint64_t seed = 0;
  bool has_seed = false;
  bool sweep = false;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  WorkloadConfig base = a.config.empty() ? WorkloadConfig{} : parse_workload_config(cfg::read_json_file(a.config));
  if (!a.policy.empty()) {
    auto p = parse_policy(a.policy);
    if (!p) throw Error(ErrorCode::kConfig, "--policy must be affinity or round_robin");
    base.policy = *p;
  }
  if (!a.interleave.empty()) {
    auto i = parse_interleave(a.interleave);
    if (!i) throw Error(ErrorCode::kConfig, "--interleave must be round_robin_arrival or random");
    base.interleave = *i;
  }
  if (a.domains) base.domains_per_core = a.domains;
  if (a.has_seed) base.seed = a.seed;

  std::vector<WorkloadConfig> runs;
  if (a.sweep) {
    for (unsigned d : kTable4Domains) {
      runs.push_back(base);
      runs.back().domains_per_core = d;
    }
  } else {
    runs.push_back(base);
  }
  Json report = {{"schema_version", kReportSchemaVersion}, {"runs", Json::array()}};
  std::string table = table_header();
  for (const auto& c : runs) {
    const RunReport r = simulate(c);
    report["runs"].push_back(report_to_json(r));
    table += table_row(r);
  }
  std::cout << table;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "report.json", report.dump(2) + "\n");
    write_file(fs::path(a.out) / "table.txt", table);
  }
  return 0;
}

int cmd_oracle(const std::string& suite, const std::string& config) {
  AccessMatrix matrix = AccessMatrix::standard();
  if (!config.empty()) {
    const Json j = cfg::read_json_file(config);
    cfg::check_keys(j, "oracle config", {"access_matrix"});
    if (j.contains("access_matrix")) matrix = cfg::parse_matrix(j.at("access_matrix"));
  }
  std::vector<OracleReport> reports;
  if (suite == "perm" || suite == "all") reports.push_back(perm_oracle());
  if (suite == "gpc" || suite == "all") reports.push_back(gpc_oracle(matrix));
  if (suite == "isolation" || suite == "all") reports.push_back(isolation_oracle(matrix));
  bool ok = true;
  for (const auto& r : reports) {
    std::printf("%-10s %s  %llu cases, %llu failures\n", r.suite.c_str(), r.passed() ? "PASS" : "FAIL",
                static_cast<unsigned long long>(r.cases), static_cast<unsigned long long>(r.failures));
    if (!r.passed()) {
      std::printf("  counterexample: %s\n", r.counterexample->c_str());
      ok = false;
    }
  }
  return ok ? 0 : kExitFail;
}

int cmd_attack(const std::string& suite, const std::vector<std::string>& names, const std::string& dir,
               unsigned jobs) {
  ScenarioLibrary lib(dir);
  std::vector<std::string> run = names;
  std::vector<std::string> control;
  if (suite == "golden") {
    auto golden = lib.golden();
    run.insert(run.end(), golden.begin(), golden.end());
    const Json controls = lib.manifest().value("control", Json::array());
    for (const auto& e : controls)
      control.push_back(e.at("scenario").get<std::string>());
  } else if (!suite.empty()) {
    throw Error(ErrorCode::kConfig, "unknown suite '" + suite + "'");
  }
  if (run.empty() && control.empty()) throw Error(ErrorCode::kConfig, "nothing to run: pass --suite or --scenario");
  for (const auto& n : run)
    if (!lib.contains(n)) throw Error(ErrorCode::kUnknownScenario, n);

  std::vector<std::string> all = run;
  all.insert(all.end(), control.begin(), control.end());
  const auto results = lib.run(all, jobs);
  std::printf("%-28s %-28s %-28s %s\n", "scenario", "expected", "actual", "result");
  std::size_t blocked = 0;
  bool ok = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const bool is_control = i >= run.size();
    std::string verdict;
    if (is_control) verdict = r.blocked ? "clean (" + std::to_string(r.faults) + " faults)" : "OVER-BLOCKED";
    else verdict = r.blocked ? "blocked" : "MISMATCH";
    std::printf("%-28s %-28s %-28s %s\n", r.name.c_str(), r.expected.c_str(), r.actual.c_str(), verdict.c_str());
    if (!r.blocked) {
      std::printf("  %s\n", r.detail.c_str());
      ok = false;
    } else if (!is_control) {
      ++blocked;
    }
  }
  if (!run.empty()) std::printf("%zu/%zu blocked as expected\n", blocked, run.size());
  return ok ? 0 : kExitFail;
}

int cmd_instrument(const std::string& path, bool scan, const std::string& out) {
  ToyProgram p = parse_program(read_file(path));
  PassStats stats;
  p = instrument(p, &stats);
  if (scan) p = binary_scan(p, &stats);
  const std::string text = print_program(p);
  char counts[128];
  std::snprintf(counts, sizeof counts, "%zu backups, %zu checks, %zu rewrites\n", stats.backups, stats.checks,
                stats.rewrites);
  if (out.empty()) {
    std::cout << text;
    std::cerr << counts;
  } else {
    write_file(out, text);
    std::cout << counts;
  }
  for (const auto& line : stats.log) std::cerr << "scan: " << line << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NanoZone three-tier isolation simulator"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "run a server workload and report switch levels");
  simulate_cmd->add_option("config", sim.config, "workload config file (JSON)");
  simulate_cmd->add_option("--policy", sim.policy, "affinity | round_robin");
  simulate_cmd->add_option("--domains-per-core", sim.domains, "domains per worker core")->check(CLI::PositiveNumber);
  auto* seed_opt = simulate_cmd->add_option("--seed", sim.seed, "seed for the random interleave");
  simulate_cmd->add_option("--interleave", sim.interleave, "round_robin_arrival | random");
  simulate_cmd->add_flag("--sweep", sim.sweep, "run the standard domains-per-core sweep");
  simulate_cmd->add_option("--out", sim.out, "directory for report.json and table.txt");

  std::string suite = "all";
  std::string oracle_config;
  auto* oracle_cmd = app.add_subcommand("oracle", "run the brute-force oracle suites");
  oracle_cmd->add_option("--suite", suite, "perm | gpc | isolation | all")
      ->check(CLI::IsMember({"perm", "gpc", "isolation", "all"}));
  oracle_cmd->add_option("--config", oracle_config, "JSON with an access_matrix override");

  std::string attack_suite;
  std::vector<std::string> scenarios;
  std::string scenario_dir = NANOZONE_SCENARIO_DIR;
  unsigned jobs = 1;
  auto* attack_cmd = app.add_subcommand("attack", "run attack scenarios");
  attack_cmd->add_option("--suite", attack_suite, "golden");
  attack_cmd->add_option("--scenario", scenarios, "scenario name (repeatable)");
  attack_cmd->add_option("--scenario-dir", scenario_dir, "directory of scenario files");
  attack_cmd->add_option("--jobs", jobs, "scenarios to run in parallel")->check(CLI::PositiveNumber);

  std::string program;
  bool scan = false;
  std::string out;
  auto* instrument_cmd = app.add_subcommand("instrument", "apply the CPI pass (and optionally the binary scan)");
  instrument_cmd->add_option("program", program, "toy IR program")->required();
  instrument_cmd->add_flag("--scan", scan, "also run the binary scan");
  instrument_cmd->add_option("--out", out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    sim.has_seed = seed_opt->count() > 0;
    if (*simulate_cmd) return cmd_simulate(sim);
    if (*oracle_cmd) return cmd_oracle(suite, oracle_config);
    if (*attack_cmd) return cmd_attack(attack_suite, scenarios, scenario_dir, jobs);
    if (*instrument_cmd) return cmd_instrument(program, scan, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    const bool usage = e.code() == ErrorCode::kConfig || e.code() == ErrorCode::kUnknownScenario ||
                       e.code() == ErrorCode::kMalformedProgram || e.code() == ErrorCode::kExhausted;
    return usage ? kExitUsage : kExitFail;
  }
  return kExitUsage;
}
