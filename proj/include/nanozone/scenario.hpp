#pragma once

// Scenario files: a machine description, named domains, an optional toy
// program, and a list of steps each carrying its expected outcome. Parsing is
// strict; unknown keys are configuration errors. Format: docs/scenarios.md.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nanozone/machine.hpp"

namespace nanozone {

using Json = nlohmann::json;

namespace cfg {

inline void check_keys(const Json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error(ErrorCode::kConfig, "unknown key '" + key + "' in " + where);
}

template <typename T>
T get(const Json& j, std::string_view key, const std::string& where, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kConfig, "key '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

template <typename T>
T require(const Json& j, std::string_view key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorCode::kConfig, "missing key '" + std::string(key) + "' in " + where);
  return get<T>(j, key, where, T{});
}

inline CostModel parse_costs(const Json& j, CostModel c = {}) {
  const std::string where = "cost_model";
  check_keys(j, where, {"l1_switch", "l2_switch", "l3_switch", "ptr_backup", "ptr_check", "syscall",
                        "hooked_syscall"});
  c.l1_switch = get(j, "l1_switch", where, c.l1_switch);
  c.l2_switch = get(j, "l2_switch", where, c.l2_switch);
  c.l3_switch = get(j, "l3_switch", where, c.l3_switch);
  c.ptr_backup = get(j, "ptr_backup", where, c.ptr_backup);
  c.ptr_check = get(j, "ptr_check", where, c.ptr_check);
  c.syscall = get(j, "syscall", where, c.syscall);
  c.hooked_syscall = get(j, "hooked_syscall", where, c.hooked_syscall);
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, std::string("cost_model: ") + e.what());
  }
  return c;
}

inline Json costs_to_json(const CostModel& c) {
  return {{"l1_switch", c.l1_switch},   {"l2_switch", c.l2_switch}, {"l3_switch", c.l3_switch},
          {"ptr_backup", c.ptr_backup}, {"ptr_check", c.ptr_check}, {"syscall", c.syscall},
          {"hooked_syscall", c.hooked_syscall}};
}

// Access matrix override: {"normal": ["normal", "full-access"], ...}.
inline AccessMatrix parse_matrix(const Json& j) {
  check_keys(j, "access_matrix", {"normal", "secure", "realm", "root"});
  AccessMatrix m = AccessMatrix::standard();
  for (const auto& [state_name, labels] : j.items()) {
    const SecurityState s = *parse_security_state(state_name);
    if (!labels.is_array()) throw Error(ErrorCode::kConfig, "access_matrix." + state_name + " must be a list");
    for (PasLabel l : kAllPasLabels) m.set(s, l, false);
    for (const auto& l : labels) {
      auto label = l.is_string() ? parse_pas_label(l.get<std::string>()) : std::nullopt;
      if (!label) throw Error(ErrorCode::kConfig, "unknown PAS label in access_matrix." + state_name);
      m.set(s, *label, true);
    }
  }
  return m;
}

inline Json matrix_to_json(const AccessMatrix& m) {
  Json j = Json::object();
  for (SecurityState s : kAllSecurityStates) {
    Json row = Json::array();
    for (PasLabel l : kAllPasLabels)
      if (m.allowed(s, l)) row.push_back(std::string(to_string(l)));
    j[std::string(to_string(s))] = row;
  }
  return j;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

}  // namespace cfg

struct StepResult {
  std::size_t index = 0;
  std::string op;
  std::string expected;
  std::string actual;
  bool matched = false;
};

struct ScenarioResult {
  std::string name;
  std::string anchor;
  std::string expected;
  std::string actual;
  bool blocked = false;
  std::string detail;
  std::vector<StepResult> steps;
  std::uint64_t faults = 0;
};

// "SwitchRejected" matches "SwitchRejected(WrongGptBase)"; otherwise exact.
inline bool outcome_matches(const std::string& expected, const std::string& actual) {
  if (expected == actual) return true;
  return actual.size() > expected.size() && actual.compare(0, expected.size(), expected) == 0 &&
         actual[expected.size()] == '(' && expected.find('(') == std::string::npos;
}

inline bool is_fault_outcome(const std::string& o) { return o != "ok"; }

struct Scenario {
  std::string name;
  std::string anchor;
  std::string description;
  std::string expect;
  MachineConfig machine;
  struct Label {
    GranuleRange range;
    PasLabel label;
  };
  std::vector<Label> labels;
  std::map<std::string, DomainId> domains;
  std::map<std::string, std::uint64_t> domain_pages;
  std::optional<ToyProgram> program;
  std::vector<Json> steps;
};

inline Scenario parse_scenario(const Json& j, const std::filesystem::path& base_dir = ".") {
  cfg::check_keys(j, "scenario", {"name", "anchor", "description", "machine", "gpt", "process", "cost_model",
                                  "program", "program_text", "steps", "expect"});
  Scenario s;
  s.name = cfg::require<std::string>(j, "name", "scenario");
  const std::string where = "scenario '" + s.name + "'";
  s.anchor = cfg::get<std::string>(j, "anchor", where, "");
  s.description = cfg::get<std::string>(j, "description", where, "");
  s.expect = cfg::get<std::string>(j, "expect", where, "ok");
  if (auto m = j.find("machine"); m != j.end()) {
    cfg::check_keys(*m, "machine", {"cores", "granule_size", "window_scale", "zones", "pim_capacity",
                                    "rng_trap_on", "access_matrix"});
    s.machine.cores = cfg::get(*m, "cores", "machine", s.machine.cores);
    s.machine.granule_size = cfg::get(*m, "granule_size", "machine", s.machine.granule_size);
    s.machine.window_scale = cfg::get(*m, "window_scale", "machine", s.machine.window_scale);
    s.machine.zones = cfg::get(*m, "zones", "machine", s.machine.zones);
    s.machine.pim_capacity = cfg::get<std::size_t>(*m, "pim_capacity", "machine", s.machine.pim_capacity);
    s.machine.rng_trap_on = cfg::get(*m, "rng_trap_on", "machine", s.machine.rng_trap_on);
    if (!s.machine.rng_trap_on)
      throw Error(ErrorCode::kConfig, "machine.rng_trap_on: privileged domain switches require the RNG trap");
    if (m->contains("access_matrix")) s.machine.matrix = cfg::parse_matrix(m->at("access_matrix"));
  }
  if (auto c = j.find("cost_model"); c != j.end()) s.machine.costs = cfg::parse_costs(*c);
  if (auto g = j.find("gpt"); g != j.end()) {
    cfg::check_keys(*g, "gpt", {"labels"});
    const Json labels = g->value("labels", Json::array());
    for (const auto& l : labels) {
      cfg::check_keys(l, "gpt.labels[]", {"start", "end", "label"});
      auto label = parse_pas_label(cfg::require<std::string>(l, "label", "gpt.labels[]"));
      if (!label) throw Error(ErrorCode::kConfig, "unknown PAS label in gpt.labels[]");
      s.labels.push_back({{cfg::require<std::uint64_t>(l, "start", "gpt.labels[]"),
                           cfg::require<std::uint64_t>(l, "end", "gpt.labels[]")},
                          *label});
    }
  }
  if (auto p = j.find("process"); p != j.end()) {
    cfg::check_keys(*p, "process", {"domains"});
    const Json domains = p->value("domains", Json::object());
    for (const auto& [name, d] : domains.items()) {
      const std::string w = "process.domains." + name;
      cfg::check_keys(d, w, {"pas", "pie", "poe", "pages"});
      s.domains[name] = {cfg::require<unsigned>(d, "pas", w), cfg::require<unsigned>(d, "pie", w),
                         cfg::require<unsigned>(d, "poe", w)};
      s.domain_pages[name] = cfg::get<std::uint64_t>(d, "pages", w, 1);
    }
  }
  if (j.contains("program") && j.contains("program_text"))
    throw Error(ErrorCode::kConfig, where + " sets both program and program_text");
  if (auto p = j.find("program"); p != j.end()) {
    const auto path = base_dir / p->get<std::string>();
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kConfig, "cannot open program " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    s.program = parse_program(ss.str());
  }
  if (auto p = j.find("program_text"); p != j.end()) {
    std::string text;
    for (const auto& line : *p) text += line.get<std::string>() + "\n";
    s.program = parse_program(text);
  }
  for (const auto& step : cfg::get(j, "steps", where, Json::array())) s.steps.push_back(step);
  return s;
}

inline Scenario load_scenario_file(const std::filesystem::path& path) {
  return parse_scenario(cfg::read_json_file(path), path.parent_path());
}

// Executes scenario steps against a fresh machine.
class ScenarioRunner {
 public:
  explicit ScenarioRunner(const Scenario& s) : s_(s), m_(s.machine) {
    for (const auto& l : s.labels) apply_label(l.range, l.label);
    for (const auto& [name, d] : s.domains) {
      if (!m_.domains().valid(d)) throw Error(ErrorCode::kConfig, "domain '" + name + "' is not valid here");
      const MapStatus st = m_.map_domain(d, s.domain_pages.at(name));
      if (st != MapStatus::kOk)
        throw Error(ErrorCode::kConfig, "mapping domain '" + name + "': " + std::string(to_string(st)));
    }
  }

  ScenarioResult run() {
    ScenarioResult r{s_.name, s_.anchor, s_.expect, "ok", false, "", {}, 0};
    bool all_matched = true;
    for (std::size_t i = 0; i < s_.steps.size(); ++i) {
      const Json& step = s_.steps[i];
      const std::string where = "steps[" + std::to_string(i) + "]";
      StepResult sr;
      sr.index = i;
      sr.op = cfg::require<std::string>(step, "op", where);
      sr.expected = cfg::get<std::string>(step, "expect", where, "ok");
      sr.actual = execute(step, where);
      sr.matched = outcome_matches(sr.expected, sr.actual);
      if (is_fault_outcome(sr.actual)) {
        ++r.faults;
        if (r.actual == "ok") r.actual = sr.actual;
      }
      if (!sr.matched && all_matched) {
        all_matched = false;
        r.detail = where + " (" + sr.op + "): expected " + sr.expected + ", got " + sr.actual;
      }
      r.steps.push_back(sr);
    }
    r.blocked = all_matched && outcome_matches(s_.expect, r.actual);
    if (all_matched && !r.blocked)
      r.detail = "scenario outcome " + r.actual + " does not match expected " + s_.expect;
    return r;
  }

  Machine& machine() { return m_; }

 private:
  void apply_label(GranuleRange range, PasLabel label) {
    Monitor& mon = m_.monitor();
    DelegateResult d;
    switch (label) {
      case PasLabel::kRealm: d = mon.claim_for_world(range, SecurityState::kRealmWorld); break;
      case PasLabel::kSecure: d = mon.claim_for_world(range, SecurityState::kSecureWorld); break;
      case PasLabel::kRoot: d = mon.claim_for_world(range, SecurityState::kRootWorld); break;
      case PasLabel::kFullAccess: d = mon.add_shared_buffer(range); break;
      case PasLabel::kNormal: return;
      case PasLabel::kNoAccess:
        throw Error(ErrorCode::kConfig, "no-access labels come only from delegation");
    }
    if (!d.ok) throw Error(ErrorCode::kConfig, "initial GPT label overlaps machine memory");
  }

  const DomainId& domain(const Json& step, const std::string& where, std::string_view key = "domain") {
    const std::string name = cfg::require<std::string>(step, key, where);
    auto it = s_.domains.find(name);
    if (it == s_.domains.end()) throw Error(ErrorCode::kConfig, where + ": unknown domain '" + name + "'");
    return it->second;
  }

  static Mode parse_mode(const std::string& s, const std::string& where) {
    if (s == "user") return Mode::kUser;
    if (s == "kernel") return Mode::kKernel;
    if (s == "monitor") return Mode::kMonitor;
    throw Error(ErrorCode::kConfig, where + ": unknown mode '" + s + "'");
  }

  static AccessKind parse_kind(const std::string& s, const std::string& where) {
    for (AccessKind k : {AccessKind::kRead, AccessKind::kWrite, AccessKind::kExec, AccessKind::kGcsStore})
      if (to_string(k) == s) return k;
    throw Error(ErrorCode::kConfig, where + ": unknown access kind '" + s + "'");
  }

  // Virtual address for targets "domain:<name>", "priv", "shared", "pim", "gcs".
  std::uint64_t target_vaddr(const std::string& target, unsigned core, std::uint64_t offset,
                             const std::string& where) {
    const std::uint64_t g = m_.config().granule_size;
    if (target.rfind("domain:", 0) == 0) {
      auto it = s_.domains.find(target.substr(7));
      if (it == s_.domains.end()) throw Error(ErrorCode::kConfig, where + ": unknown target " + target);
      return m_.domain_vaddr(it->second, offset);
    }
    if (target == "priv") return m_.priv_vaddr() + offset;
    if (target == "shared") return m_.shared_vaddr() + offset;
    if (target == "pim") return m_.pim(core).base() + offset;
    if (target == "gcs") return (MachineLayout::kGcsVpage + core) * g + offset;
    throw Error(ErrorCode::kConfig, where + ": unknown target " + target);
  }

  std::uint64_t target_paddr(const std::string& target, unsigned core, std::uint64_t offset,
                             const std::string& where) {
    const std::uint64_t g = m_.config().granule_size;
    if (target == "page_tables") return m_.layout().page_tables.start * g + offset;
    if (target == "kernel") return m_.layout().kernel.start * g + offset;
    const std::uint64_t va = target_vaddr(target, core, offset, where);
    const PageTableEntry* pte = m_.aspace().lookup(va / g);
    if (!pte) throw Error(ErrorCode::kConfig, where + ": target " + target + " is unmapped");
    return pte->phys_page * g + va % g;
  }

  static std::string fault_name(const AccessResult& r) {
    return r.ok() ? "ok" : std::string(to_string(r.fault->kind));
  }

  std::string execute(const Json& st, const std::string& where) {
    const std::string op = st.at("op").get<std::string>();
    const unsigned core_id = cfg::get<unsigned>(st, "core", where, 0);
    if (core_id >= m_.core_count()) throw Error(ErrorCode::kConfig, where + ": no core " + std::to_string(core_id));
    CoreState& core = m_.core(core_id);
    Monitor& mon = m_.monitor();

    if (op == "switch") {
      cfg::check_keys(st, where, {"op", "core", "expect", "domain", "via"});
      const std::string via = cfg::get<std::string>(st, "via", where, "trampoline");
      if (via != "trampoline" && via != "raw") throw Error(ErrorCode::kConfig, where + ": via must be trampoline or raw");
      const SwitchOutcome out = m_.trampoline().switch_domain(
          core, domain(st, where), via == "raw" ? SwitchVia::kRaw : SwitchVia::kTrampoline);
      return out.ok() ? "ok" : "SwitchRejected(" + std::string(to_string(*out.rejected)) + ")";
    }
    if (op == "revoke") {
      cfg::check_keys(st, where, {"op", "core", "expect"});
      m_.trampoline().revoke(core);
      return "ok";
    }
    if (op == "access") {
      cfg::check_keys(st, where, {"op", "core", "expect", "mode", "target", "offset", "kind"});
      const Mode mode = parse_mode(cfg::get<std::string>(st, "mode", where, "user"), where);
      const AccessKind kind = parse_kind(cfg::get<std::string>(st, "kind", where, "read"), where);
      const std::uint64_t va = target_vaddr(cfg::require<std::string>(st, "target", where), core_id,
                                            cfg::get<std::uint64_t>(st, "offset", where, 0), where);
      return fault_name(m_.access_as(core_id, va, kind, mode));
    }
    if (op == "phys_access") {
      cfg::check_keys(st, where, {"op", "core", "expect", "mode", "target", "offset"});
      const Mode mode = parse_mode(cfg::get<std::string>(st, "mode", where, "kernel"), where);
      if (mode == Mode::kUser) throw Error(ErrorCode::kConfig, where + ": phys_access needs a privileged mode");
      const std::uint64_t pa = target_paddr(cfg::require<std::string>(st, "target", where), core_id,
                                            cfg::get<std::uint64_t>(st, "offset", where, 0), where);
      return fault_name(access_phys(core, m_.gpts(), pa, mode));
    }
    if (op == "trap") {
      cfg::check_keys(st, where, {"op", "core", "expect", "cause"});
      const std::string cause = cfg::get<std::string>(st, "cause", where, "syscall");
      TrapCause c = TrapCause::kSyscall;
      if (cause == "irq") c = TrapCause::kIrq;
      else if (cause == "rng_trap") c = TrapCause::kRngTrap;
      else if (cause != "syscall") throw Error(ErrorCode::kConfig, where + ": unknown trap cause " + cause);
      saved_[core_id] = mon.intercept_trap(core, c);
      return "ok";
    }
    if (op == "resume") {
      cfg::check_keys(st, where, {"op", "core", "expect"});
      auto it = saved_.find(core_id);
      if (it == saved_.end()) throw Error(ErrorCode::kConfig, where + ": resume without a trap");
      try {
        mon.resume_process(core, it->second);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kContextMismatch) return "ContextMismatch";
        throw;
      }
      saved_.erase(it);
      return "ok";
    }
    if (op == "kernel_write_pire" || op == "kernel_write_por") {
      cfg::check_keys(st, where, {"op", "core", "expect", "slot", "enc"});
      require_kernel(core, where);
      const auto slot = cfg::require<unsigned>(st, "slot", where);
      const PermEncoding enc{cfg::require<unsigned>(st, "enc", where)};
      if (op == "kernel_write_pire") core.pire.set(slot, enc);
      else core.por.set(slot, enc);
      return "ok";
    }
    if (op == "kernel_set_features") {
      cfg::check_keys(st, where, {"op", "core", "expect", "poe_on", "pie_on", "gcs_on", "rng_trap_on"});
      require_kernel(core, where);
      Features f = core.features();
      f.poe_on = cfg::get(st, "poe_on", where, f.poe_on);
      f.pie_on = cfg::get(st, "pie_on", where, f.pie_on);
      f.gcs_on = cfg::get(st, "gcs_on", where, f.gcs_on);
      f.rng_trap_on = cfg::get(st, "rng_trap_on", where, f.rng_trap_on);
      core.set_features(Mode::kKernel, f);
      return "ok";
    }
    if (op == "kernel_pte_update") {
      cfg::check_keys(st, where, {"op", "core", "expect", "target", "page", "pie", "poe", "gcs", "phys_page"});
      const std::uint64_t g = m_.config().granule_size;
      const std::uint64_t vp =
          target_vaddr(cfg::require<std::string>(st, "target", where), core_id, 0, where) / g +
          cfg::get<std::uint64_t>(st, "page", where, 0);
      const PageTableEntry* existing = m_.aspace().lookup(vp);
      if (!existing) throw Error(ErrorCode::kConfig, where + ": no existing mapping to update");
      const PageTableEntry old = *existing;
      PageTableEntry next = old;
      next.pie_idx = cfg::get(st, "pie", where, next.pie_idx);
      next.poe_idx = cfg::get(st, "poe", where, next.poe_idx);
      next.is_gcs_page = cfg::get(st, "gcs", where, next.is_gcs_page);
      next.phys_page = cfg::get(st, "phys_page", where, next.phys_page);
      return verdict(mon.validate_pte_update(kProcessPid, old, next));
    }
    if (op == "kernel_mmap") {
      cfg::check_keys(st, where, {"op", "core", "expect", "target", "vpage", "page", "phys_page", "pie"});
      const std::uint64_t g = m_.config().granule_size;
      std::uint64_t vp = 0;
      if (st.contains("vpage")) vp = st.at("vpage").get<std::uint64_t>();
      else vp = target_vaddr(cfg::require<std::string>(st, "target", where), core_id, 0, where) / g +
                cfg::get<std::uint64_t>(st, "page", where, 0);
      // Default backing page: the first kernel-owned free page.
      const std::uint64_t phys = cfg::get<std::uint64_t>(st, "phys_page", where, m_.layout().kernel.start + 1);
      const PageTableEntry next{vp, phys, cfg::get<unsigned>(st, "pie", where, 4), 0, false, true};
      return verdict(mon.validate_pte_update(kProcessPid, std::nullopt, next));
    }
    if (op == "rng_switch") {
      cfg::check_keys(st, where, {"op", "core", "expect", "mode", "domain"});
      const Mode mode = parse_mode(cfg::get<std::string>(st, "mode", where, "user"), where);
      const RngTrap trap = read_rng(core, mode);
      const RngSwitchResult r = mon.rng_trap_switch(core, trap, kProcessPid, domain(st, where));
      return r.ok() ? "ok" : "SwitchRejected(" + std::string(to_string(*r.rejected)) + ")";
    }
    if (op == "zone_mmap") {
      cfg::check_keys(st, where, {"op", "core", "expect", "domain", "page", "pages", "exec"});
      const DomainId& d = domain(st, where);
      const MapStatus ms = mon.zone_mmap(kProcessPid, m_.domain_vpage(d) + cfg::get<std::uint64_t>(st, "page", where, 0),
                                         cfg::get<std::uint64_t>(st, "pages", where, 1), d,
                                         cfg::get(st, "exec", where, false));
      return ms == MapStatus::kOk ? "ok" : std::string(to_string(ms));
    }
    if (op == "delegate") {
      cfg::check_keys(st, where, {"op", "core", "expect", "start", "end"});
      const DelegateResult d = mon.delegate_region(
          kProcessPid, {cfg::require<std::uint64_t>(st, "start", where), cfg::require<std::uint64_t>(st, "end", where)});
      return d.ok ? "ok" : "OverlapRejected";
    }
    if (op == "attest") {
      cfg::check_keys(st, where, {"op", "core", "expect", "image", "digest"});
      return mon.attest_image(cfg::require<std::string>(st, "image", where),
                              cfg::require<std::string>(st, "digest", where))
                 ? "ok"
                 : "Rejected(attest)";
    }
    if (op == "run_program") {
      cfg::check_keys(st, where, {"op", "core", "expect", "instrument", "scan"});
      if (!s_.program) throw Error(ErrorCode::kConfig, where + ": scenario has no program");
      ToyProgram p = *s_.program;
      if (cfg::get(st, "instrument", where, true)) p = instrument(p);
      if (cfg::get(st, "scan", where, true)) p = binary_scan(p);
      const ExecResult r = m_.run(p, core_id);
      return r.status == ExecStatus::kBreached ? "breached: " + r.detail : r.outcome;
    }
    if (op == "expect_register") {
      cfg::check_keys(st, where, {"op", "core", "expect", "reg", "slot", "enc"});
      const std::string reg = cfg::require<std::string>(st, "reg", where);
      const auto slot = cfg::require<unsigned>(st, "slot", where);
      const auto want = cfg::require<unsigned>(st, "enc", where);
      unsigned have = 0;
      if (reg == "pire") have = core.pire.get(slot).value();
      else if (reg == "por") have = core.por.get(slot).value();
      else throw Error(ErrorCode::kConfig, where + ": reg must be pire or por");
      return have == want ? "ok" : "breached: " + reg + "[" + std::to_string(slot) + "] = " + std::to_string(have);
    }
    if (op == "expect_features_on") {
      cfg::check_keys(st, where, {"op", "core", "expect"});
      return core.features() == Features::all_on() ? "ok" : "breached: features left disabled";
    }
    if (op == "check_invariants") {
      cfg::check_keys(st, where, {"op", "core", "expect"});
      auto v = mon.verify_invariants();
      return v ? "breached: " + *v : "ok";
    }
    throw Error(ErrorCode::kConfig, where + ": unknown op '" + op + "'");
  }

  void require_kernel(const CoreState& core, const std::string& where) const {
    if (!saved_.count(core.id())) throw Error(ErrorCode::kConfig, where + ": kernel step outside a trap");
  }

  static std::string verdict(const PteVerdict& v) {
    return v.ok ? "ok" : std::string("Rejected(") + v.rule + ")";
  }

  const Scenario& s_;
  Machine m_;
  std::map<unsigned, SavedContext> saved_;
};

inline ScenarioResult run_scenario(const Scenario& s) { return ScenarioRunner(s).run(); }

// Scenario files in a directory, keyed by scenario name.
class ScenarioLibrary {
 public:
  explicit ScenarioLibrary(const std::filesystem::path& dir) : dir_(dir) {
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kConfig, "no scenario directory " + dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() != ".json" || e.path().filename() == "manifest.json") continue;
      Scenario s = load_scenario_file(e.path());
      const std::string name = s.name;
      if (!scenarios_.emplace(name, std::move(s)).second)
        throw Error(ErrorCode::kConfig, "duplicate scenario name " + name);
    }
    const auto manifest = dir / "manifest.json";
    if (std::filesystem::exists(manifest)) manifest_ = cfg::read_json_file(manifest);
  }

  const Scenario& at(const std::string& name) const {
    auto it = scenarios_.find(name);
    if (it == scenarios_.end()) throw Error(ErrorCode::kUnknownScenario, name);
    return it->second;
  }
  bool contains(const std::string& name) const { return scenarios_.count(name) != 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, s] : scenarios_) out.push_back(n);
    return out;
  }

  // The golden suite as listed in the manifest, in manifest order.
  std::vector<std::string> golden() const {
    std::vector<std::string> out;
    const Json golden = manifest_.value("golden", Json::array());
    for (const auto& e : golden) out.push_back(e.at("scenario").get<std::string>());
    return out;
  }

  const Json& manifest() const { return manifest_; }

  std::vector<ScenarioResult> run(const std::vector<std::string>& names, unsigned jobs = 1) const {
    for (const auto& n : names) at(n);
    std::vector<ScenarioResult> results(names.size());
    if (jobs <= 1) {
      for (std::size_t i = 0; i < names.size(); ++i) results[i] = run_scenario(at(names[i]));
      return results;
    }
    std::size_t next = 0;
    while (next < names.size()) {
      std::vector<std::future<ScenarioResult>> batch;
      const std::size_t first = next;
      for (; next < names.size() && next - first < jobs; ++next)
        batch.push_back(std::async(std::launch::async, [this, n = names[next]] { return run_scenario(at(n)); }));
      for (std::size_t i = 0; i < batch.size(); ++i) results[first + i] = batch[i].get();
    }
    return results;
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, Scenario> scenarios_;
  Json manifest_ = Json::object();
};

}  // namespace nanozone
