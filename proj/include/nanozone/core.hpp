#pragma once

// Per-core machine state and the memory-access pipeline:
// page-table walk -> PIE/POE resolution -> granule protection check.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nanozone/error.hpp"
#include "nanozone/gpt.hpp"
#include "nanozone/perm.hpp"

namespace nanozone {

enum class AccessKind { kRead, kWrite, kExec, kGcsStore };
enum class Mode { kUser, kKernel, kMonitor };

inline std::string_view to_string(AccessKind k) {
  switch (k) {
    case AccessKind::kRead: return "read";
    case AccessKind::kWrite: return "write";
    case AccessKind::kExec: return "exec";
    case AccessKind::kGcsStore: return "gcsstr";
  }
  return "?";
}

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kUser: return "user";
    case Mode::kKernel: return "kernel";
    case Mode::kMonitor: return "monitor";
  }
  return "?";
}

struct Features {
  bool poe_on = true;
  bool pie_on = true;
  bool gcs_on = true;
  bool rng_trap_on = true;

  static constexpr Features all_on() { return {}; }
  friend bool operator==(const Features&, const Features&) = default;
};

class CoreState {
 public:
  explicit CoreState(unsigned core_id = 0, GptId gpt_base = {})
      : gpt_base(gpt_base), pire(PireRegister::standard_profile()), core_id_(core_id) {}

  unsigned id() const { return core_id_; }

  SecurityState security_state = SecurityState::kNormalWorld;
  GptId gpt_base;
  PireRegister pire;
  PorRegister por;
  std::vector<BypassWindow> windows;
  std::uint64_t gcspr = 0;
  double cycles = 0;

  // TPIDRRO_EL0 holds the PIM base; EL0 can read it but never write it.
  std::uint64_t tpidrro() const { return tpidrro_; }
  void write_tpidrro(Mode mode, std::uint64_t value) {
    if (mode == Mode::kUser)
      throw Error(ErrorCode::kInvalidArgument, "TPIDRRO_EL0 is read-only at EL0");
    tpidrro_ = value;
  }

  const Features& features() const { return features_; }
  void set_features(Mode mode, Features f) {
    if (mode == Mode::kUser)
      throw Error(ErrorCode::kInvalidArgument, "feature controls are not writable at EL0");
    features_ = f;
  }

 private:
  unsigned core_id_;
  std::uint64_t tpidrro_ = 0;
  Features features_;
};

class AddressSpace {
 public:
  explicit AddressSpace(unsigned pid = 0, std::uint64_t page_size = kDefaultGranuleSize)
      : pid_(pid), page_size_(page_size) {}

  unsigned pid() const { return pid_; }
  std::uint64_t page_size() const { return page_size_; }

  // Refuses a second valid mapping for the same virtual page.
  bool map(const PageTableEntry& pte) {
    if (!pte.well_formed()) throw Error(ErrorCode::kInvalidPte, "malformed PTE");
    return table_.emplace(pte.virt_page, pte).second;
  }
  void replace(const PageTableEntry& pte) {
    if (!pte.well_formed()) throw Error(ErrorCode::kInvalidPte, "malformed PTE");
    table_[pte.virt_page] = pte;
  }
  bool unmap(std::uint64_t virt_page) { return table_.erase(virt_page) != 0; }

  const PageTableEntry* lookup(std::uint64_t virt_page) const {
    auto it = table_.find(virt_page);
    return it == table_.end() || !it->second.valid ? nullptr : &it->second;
  }

  const std::map<std::uint64_t, PageTableEntry>& entries() const { return table_; }

 private:
  unsigned pid_;
  std::uint64_t page_size_;
  std::map<std::uint64_t, PageTableEntry> table_;
};

enum class FaultKind { kTranslation, kPerm, kGpf };
enum class FaultStage { kWalk, kPerm, kGpc };

inline std::string_view to_string(FaultKind k) {
  switch (k) {
    case FaultKind::kTranslation: return "TranslationFault";
    case FaultKind::kPerm: return "PermFault";
    case FaultKind::kGpf: return "GPF";
  }
  return "?";
}

struct Fault {
  FaultKind kind;
  FaultStage stage;
  std::uint64_t vaddr = 0;
  std::uint64_t granule = 0;
};

struct AccessResult {
  std::optional<Fault> fault;
  std::uint64_t paddr = 0;

  bool ok() const { return !fault.has_value(); }
  static AccessResult failed(FaultKind kind, FaultStage stage, std::uint64_t vaddr,
                             std::uint64_t granule = 0) {
    return {Fault{kind, stage, vaddr, granule}, 0};
  }
};

// User-mode permission decision for one resolved page.
inline bool user_permits(const ResolvedPerm& p, AccessKind kind) {
  if (p.is_gcs()) return kind == AccessKind::kRead || kind == AccessKind::kGcsStore;
  switch (kind) {
    case AccessKind::kRead: return p.perms.read;
    case AccessKind::kWrite: return p.perms.write;
    case AccessKind::kExec: return p.perms.execute;
    case AccessKind::kGcsStore: return false;
  }
  return false;
}

// Effective user permission under the core's current feature flags. With POE
// off no overlay applies; with PIE off every user page falls back to RW.
inline ResolvedPerm resolve_for_core(const CoreState& core, const PageTableEntry& pte) {
  const Features& f = core.features();
  if (pte.is_gcs_page && f.gcs_on) return ResolvedPerm::gcs_class();
  ResolvedPerm base = f.pie_on && !pte.is_gcs_page
                          ? decode_perm(core.pire.get(pte.pie_idx), PageClass::kData)
                          : ResolvedPerm{PageClass::kData, PermSet{true, true, false}};
  if (!f.poe_on) return base;
  return effective_perm(base, decode_perm(core.por.get(pte.poe_idx), PageClass::kData).perms);
}

inline AccessResult gpc_stage(const CoreState& core, const GptRegistry& gpts, std::uint64_t vaddr,
                              std::uint64_t paddr, Mode mode) {
  const SecurityState state =
      mode == Mode::kMonitor ? SecurityState::kRootWorld : core.security_state;
  GpcResult g = gpc_check(gpts.at(core.gpt_base), state, paddr, core.windows, gpts.matrix());
  if (!g.ok) return AccessResult::failed(FaultKind::kGpf, FaultStage::kGpc, vaddr, g.granule);
  return {std::nullopt, paddr};
}

// Permissions are checked before the GPC, so a page failing both reports the
// perm stage. Kernel and monitor accesses skip the EL0 permission registers
// but never the GPC.
inline AccessResult access(const CoreState& core, const AddressSpace& aspace,
                           const GptRegistry& gpts, std::uint64_t vaddr, AccessKind kind,
                           Mode mode) {
  const std::uint64_t page = vaddr / aspace.page_size();
  const PageTableEntry* pte = aspace.lookup(page);
  if (pte == nullptr) return AccessResult::failed(FaultKind::kTranslation, FaultStage::kWalk, vaddr);
  if (mode == Mode::kUser && !user_permits(resolve_for_core(core, *pte), kind))
    return AccessResult::failed(FaultKind::kPerm, FaultStage::kPerm, vaddr);
  const std::uint64_t paddr = pte->phys_page * aspace.page_size() + vaddr % aspace.page_size();
  return gpc_stage(core, gpts, vaddr, paddr, mode);
}

// Privileged access through a linear map, no stage-1 walk.
inline AccessResult access_phys(const CoreState& core, const GptRegistry& gpts,
                                std::uint64_t paddr, Mode mode) {
  if (mode == Mode::kUser)
    throw Error(ErrorCode::kInvalidArgument, "physical access requires a privileged mode");
  return gpc_stage(core, gpts, paddr, paddr, mode);
}

// EL0 write of POR_EL0. Returns false when the write targeted fixed slot 0.
inline bool user_write_por(CoreState& core, unsigned slot, PermEncoding enc) {
  return core.por.set(slot, enc);
}

struct RngTrap {
  unsigned core_id;
  GptId gpt_base;
  Mode mode;
};

// Reading RNDR/RNDRRS never yields a value here; it always traps to the monitor.
inline RngTrap read_rng(const CoreState& core, Mode mode) {
  if (!core.features().rng_trap_on)
    throw Error(ErrorCode::kFeatureDisabled, "RNG trap is disabled on core " + std::to_string(core.id()));
  return {core.id(), core.gpt_base, mode};
}

}  // namespace nanozone
