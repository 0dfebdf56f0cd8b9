#pragma once

// Brute-force oracle suites. Each compares the simulator against a reference
// written independently of the code under test and stops at the first
// counterexample.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "nanozone/core.hpp"
#include "nanozone/gpt.hpp"
#include "nanozone/machine.hpp"
#include "nanozone/perm.hpp"

namespace nanozone {

struct OracleReport {
  std::string suite;
  std::uint64_t cases = 0;
  std::uint64_t failures = 0;
  std::optional<std::string> counterexample;

  bool passed() const { return failures == 0; }
  void fail(std::string what) {
    ++failures;
    if (!counterexample) counterexample = std::move(what);
  }
};

namespace ref {

// Data-class meaning of each 4-bit encoding, spelled out rather than decoded.
inline constexpr std::array<const char*, 16> kDataPerms = {
    "---", "R--", "--X", "R-X", "-W-", "RW-", "-WX", "RWX",
    "---", "---", "---", "---", "---", "---", "---", "---"};

inline bool has(unsigned enc, char flag) {
  const std::string p = kDataPerms[enc];
  return p.find(flag) != std::string::npos;
}

// The CCA ownership rule: root reaches everything, every world reaches normal
// and full-access memory, secure and realm also reach their own PAS.
inline bool cca_allows(SecurityState s, PasLabel l) {
  if (s == SecurityState::kRootWorld) return true;
  if (l == PasLabel::kNormal || l == PasLabel::kFullAccess) return true;
  if (l == PasLabel::kSecure) return s == SecurityState::kSecureWorld;
  if (l == PasLabel::kRealm) return s == SecurityState::kRealmWorld;
  return false;
}

}  // namespace ref

// Every (base, overlay) encoding pair on a data page and on a GCS page,
// pushed through the full user-mode access pipeline.
inline OracleReport perm_oracle() {
  OracleReport rep;
  rep.suite = "perm";
  GptRegistry gpts;
  gpts.create(GptId{0});
  constexpr unsigned kDataSlot = 6;
  constexpr unsigned kPoeSlot = 3;
  for (unsigned base = 0; base < 16; ++base) {
    for (unsigned overlay = 0; overlay < 16; ++overlay) {
      CoreState core(0, GptId{0});
      core.pire.set(kDataSlot, PermEncoding{base});
      core.pire.set(kGcsPieSlot, PermEncoding{base});
      core.por.set(kPoeSlot, PermEncoding{overlay});
      AddressSpace as(1);
      as.map({0, 0, kDataSlot, kPoeSlot, false, true});
      as.map({1, 1, kGcsPieSlot, kPoeSlot, true, true});
      const std::string tag = "base=" + std::to_string(base) + " overlay=" + std::to_string(overlay);

      const struct {
        AccessKind kind;
        char flag;
      } data_cases[] = {{AccessKind::kRead, 'R'}, {AccessKind::kWrite, 'W'}, {AccessKind::kExec, 'X'}};
      for (const auto& c : data_cases) {
        ++rep.cases;
        const bool want = ref::has(base, c.flag) && ref::has(overlay, c.flag);
        const bool got = access(core, as, gpts, 0x10, c.kind, Mode::kUser).ok();
        if (want != got)
          rep.fail("data page " + tag + " " + std::string(to_string(c.kind)) + ": expected " +
                   (want ? "ok" : "PermFault"));
      }
      ++rep.cases;
      if (access(core, as, gpts, 0x10, AccessKind::kGcsStore, Mode::kUser).ok())
        rep.fail("data page " + tag + ": GCS store allowed");

      const std::uint64_t gva = 0x1000 + 0x10;
      const struct {
        AccessKind kind;
        bool want;
      } gcs_cases[] = {{AccessKind::kRead, true},
                       {AccessKind::kWrite, false},
                       {AccessKind::kExec, false},
                       {AccessKind::kGcsStore, true}};
      for (const auto& c : gcs_cases) {
        ++rep.cases;
        if (access(core, as, gpts, gva, c.kind, Mode::kUser).ok() != c.want)
          rep.fail("GCS page " + tag + " " + std::string(to_string(c.kind)) + ": expected " +
                   (c.want ? "ok" : "PermFault"));
      }
    }
  }
  return rep;
}

// All 24 (state, label) pairs against the CCA ownership rule, plus a window
// override on the owning core only.
inline OracleReport gpc_oracle(const AccessMatrix& matrix = AccessMatrix::standard()) {
  OracleReport rep;
  rep.suite = "gpc";
  Gpt gpt(GptId{0});
  std::uint64_t g = 0;
  for (PasLabel l : kAllPasLabels) {
    gpt.set_pas({g, g + 1}, l, SecurityState::kRootWorld);
    ++g;
  }
  for (SecurityState s : kAllSecurityStates) {
    g = 0;
    for (PasLabel l : kAllPasLabels) {
      ++rep.cases;
      const bool got = gpc_check(gpt, s, g * kDefaultGranuleSize, {}, matrix).ok;
      if (got != ref::cca_allows(s, l))
        rep.fail(std::string(to_string(s)) + " world -> " + std::string(to_string(l)) + ": matrix says " +
                 (got ? "allow" : "deny") + ", ownership rule says " + (got ? "deny" : "allow"));
      ++g;
    }
  }
  // Core A owns a window over a no-access granule; core B does not.
  Gpt closed(GptId{1});
  closed.set_pas({0, 1u << 18}, PasLabel::kNoAccess, SecurityState::kRootWorld);
  const std::vector<BypassWindow> core_a{BypassWindow(0, kGiB / 1024, WindowLimits::scaled(1024))};
  const std::vector<BypassWindow> core_b;
  ++rep.cases;
  if (!gpc_check(closed, SecurityState::kNormalWorld, 0x2000, core_a, matrix).ok)
    rep.fail("window on the owning core did not bypass a no-access granule");
  ++rep.cases;
  if (gpc_check(closed, SecurityState::kNormalWorld, 0x2000, core_b, matrix).ok)
    rep.fail("no-access granule reachable from a core without a window");
  return rep;
}

// 3 PAS x 4 PIE x 7 POE domains, one page each. After entering d, every page
// of every other domain must fault and d's own page must not.
inline OracleReport isolation_oracle(const AccessMatrix& matrix = AccessMatrix::standard()) {
  OracleReport rep;
  rep.suite = "isolation";
  MachineConfig mc;
  mc.cores = 1;
  mc.zones = 3;
  mc.matrix = matrix;
  Machine m(mc);
  const std::uint64_t n = m.domains().size();
  for (std::uint64_t i = 0; i < n; ++i)
    if (m.map_domain(m.domains().at(i)) != MapStatus::kOk) rep.fail("could not map domain " + m.domains().at(i).str());
  for (std::uint64_t i = 0; i < n; ++i) {
    const DomainId d = m.domains().at(i);
    const SwitchOutcome sw = m.trampoline().switch_domain(m.core(0), d);
    if (!sw.ok()) {
      rep.fail("switch into " + d.str() + " rejected");
      continue;
    }
    for (std::uint64_t j = 0; j < n; ++j) {
      const DomainId e = m.domains().at(j);
      ++rep.cases;
      const AccessResult r = m.user_access(0, m.domain_vaddr(e), AccessKind::kRead);
      if (i == j && !r.ok())
        rep.fail("inside " + d.str() + ": own page faulted with " + std::string(to_string(r.fault->kind)));
      if (i != j && r.ok()) rep.fail("inside " + d.str() + ": page of " + e.str() + " readable");
    }
  }
  return rep;
}

}  // namespace nanozone
