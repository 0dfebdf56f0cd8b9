#pragma once

// Workload configuration files and the machine-readable run report.

#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"
#include "nanozone/scenario.hpp"
#include "nanozone/workload.hpp"

namespace nanozone {

inline constexpr int kReportSchemaVersion = 1;

inline std::optional<AllocPolicy> parse_policy(std::string_view s) {
  if (s == "affinity") return AllocPolicy::kAffinity;
  if (s == "round_robin") return AllocPolicy::kRoundRobin;
  return std::nullopt;
}

inline std::optional<Interleave> parse_interleave(std::string_view s) {
  if (s == "round_robin_arrival") return Interleave::kRoundRobinArrival;
  if (s == "random") return Interleave::kRandom;
  return std::nullopt;
}

// {"workload": {...}, "cost_model": {...}}; every key optional, none unknown.
inline WorkloadConfig parse_workload_config(const Json& j) {
  cfg::check_keys(j, "config", {"workload", "cost_model"});
  WorkloadConfig c;
  if (auto w = j.find("workload"); w != j.end()) {
    const std::string where = "workload";
    cfg::check_keys(*w, where, {"workers", "connections", "requests_per_connection", "domains_per_core",
                                "burst_length", "interleave", "seed", "policy", "reuse_freed", "window_scale"});
    c.workers = cfg::get(*w, "workers", where, c.workers);
    c.connections = cfg::get(*w, "connections", where, c.connections);
    c.requests_per_connection = cfg::get(*w, "requests_per_connection", where, c.requests_per_connection);
    c.domains_per_core = cfg::get(*w, "domains_per_core", where, c.domains_per_core);
    c.burst_length = cfg::get(*w, "burst_length", where, c.burst_length);
    c.reuse_freed = cfg::get(*w, "reuse_freed", where, c.reuse_freed);
    c.window_scale = cfg::get(*w, "window_scale", where, c.window_scale);
    if (w->contains("seed") && !w->at("seed").is_null()) c.seed = cfg::get<std::uint64_t>(*w, "seed", where, 0);
    if (w->contains("interleave")) {
      auto i = parse_interleave(cfg::get<std::string>(*w, "interleave", where, ""));
      if (!i) throw Error(ErrorCode::kConfig, "key 'interleave' in workload must be round_robin_arrival or random");
      c.interleave = *i;
    }
    if (w->contains("policy")) {
      auto p = parse_policy(cfg::get<std::string>(*w, "policy", where, ""));
      if (!p) throw Error(ErrorCode::kConfig, "key 'policy' in workload must be affinity or round_robin");
      c.policy = *p;
    }
  }
  if (auto cm = j.find("cost_model"); cm != j.end()) c.costs = cfg::parse_costs(*cm);
  return c;
}

inline Json workload_to_json(const WorkloadConfig& c) {
  Json w = {{"workers", c.workers},
            {"connections", c.connections},
            {"requests_per_connection", c.requests_per_connection},
            {"domains_per_core", c.domains_per_core},
            {"burst_length", c.burst_length},
            {"interleave", std::string(to_string(c.interleave))},
            {"policy", std::string(to_string(c.policy))},
            {"reuse_freed", c.reuse_freed},
            {"window_scale", c.window_scale}};
  w["seed"] = c.seed ? Json(*c.seed) : Json(nullptr);
  return {{"workload", w}, {"cost_model", cfg::costs_to_json(c.costs)}};
}

inline Json metrics_to_json(const SwitchMetrics& m) {
  return {{"total", m.total},
          {"counts", {{"L1", m.counts[0]}, {"L2", m.counts[1]}, {"L3", m.counts[2]}}},
          {"rates", {{"L1", m.rates[0]}, {"L2", m.rates[1]}, {"L3", m.rates[2]}}},
          {"avg_switch_cycles", m.avg_cycles}};
}

inline std::string heatmap_string(const std::vector<SwitchLevel>& levels) {
  std::string s;
  for (SwitchLevel l : levels) s.push_back(static_cast<char>('1' + static_cast<int>(l)));
  return s;
}

inline Json report_to_json(const RunReport& r) {
  Json j;
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = workload_to_json(r.config);
  j["pas_count"] = r.pas_count;
  j["requests"] = r.requests;
  j["switches"] = metrics_to_json(r.overall);
  j["switches"]["trace_mean_cycles"] = r.trace_mean_cycles;
  j["per_core"] = Json::array();
  for (std::size_t c = 0; c < r.per_core.size(); ++c) {
    Json pc = metrics_to_json(r.per_core[c]);
    pc["core"] = c;
    j["per_core"].push_back(pc);
  }
  j["total_cycles"] = r.total_cycles;
  j["revocations"] = r.revocations;
  j["monitor"] = {{"tlb_flushes", r.tlb_flushes}, {"events", r.monitor_events}};
  j["heatmap"] = heatmap_string(r.heatmap);
  return j;
}

inline std::string table_header() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-13s %-12s %12s %8s %8s %8s\n", "domains/core", "policy", "avg_cycles",
                "L1%", "L2%", "L3%");
  return buf;
}

inline std::string table_row(const RunReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-13u %-12s %12.2f %8.2f %8.2f %8.2f\n", r.config.domains_per_core,
                std::string(to_string(r.config.policy)).c_str(), r.overall.avg_cycles, 100 * r.overall.rates[0],
                100 * r.overall.rates[1], 100 * r.overall.rates[2]);
  return buf;
}

}  // namespace nanozone
