#pragma once

// Root-world monitor: owns the OS GPT and one proc GPT per protected process,
// delegates memory, intercepts traps, vets page-table updates and services
// privileged domain switches.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nanozone/core.hpp"
#include "nanozone/digest.hpp"
#include "nanozone/domain.hpp"
#include "nanozone/error.hpp"
#include "nanozone/gpt.hpp"
#include "nanozone/perm.hpp"

namespace nanozone {

inline constexpr GptId kOsGpt{0};

struct MonitorConfig {
  std::uint64_t granule_size = kDefaultGranuleSize;
  std::uint64_t window_scale = 1;
  std::uint64_t window_size = kGiB;
  PieSlotRegistry registry;
  PireRegister pire_profile = PireRegister::standard_profile();
  CostModel costs;
  AccessMatrix matrix = AccessMatrix::standard();
};

struct MonitorEvent {
  std::string op;
  int core = -1;
  std::string outcome;
};

enum class TrapCause { kSyscall, kIrq, kRngTrap };

inline std::string_view to_string(TrapCause c) {
  switch (c) {
    case TrapCause::kSyscall: return "syscall";
    case TrapCause::kIrq: return "irq";
    case TrapCause::kRngTrap: return "rng_trap";
  }
  return "?";
}

struct SavedContext {
  unsigned core_id = 0;
  unsigned pid = 0;
  PireRegister pire;
  PorRegister por;
  std::uint64_t gcspr = 0;
  std::uint64_t tpidrro = 0;
  Features features;
  std::vector<BypassWindow> windows;

  static SavedContext capture(const CoreState& core, unsigned pid) {
    return {core.id(), pid, core.pire, core.por, core.gcspr, core.tpidrro(), core.features(), core.windows};
  }
  friend bool operator==(const SavedContext&, const SavedContext&) = default;
};

struct DelegateResult {
  bool ok = true;
  std::optional<GranuleRange> conflict;
};

enum class MapStatus { kOk, kOutOfZone, kCapacityExceeded, kOverlapRejected, kExecRejected };

inline std::string_view to_string(MapStatus s) {
  switch (s) {
    case MapStatus::kOk: return "ok";
    case MapStatus::kOutOfZone: return "OutOfZone";
    case MapStatus::kCapacityExceeded: return "CapacityExceeded";
    case MapStatus::kOverlapRejected: return "OverlapRejected";
    case MapStatus::kExecRejected: return "ExecRejected";
  }
  return "?";
}

// Page-table update rules: (a) no executable mappings, (b) secure mappings and
// their PIE/POE/GCS configuration are immutable, (c) no overlapping mappings.
struct PteVerdict {
  bool ok = true;
  char rule = 0;
};

enum class SwitchRejectReason { kWrongGptBase, kIllegalWindow, kNotTrampoline, kInvalidDomain };

inline std::string_view to_string(SwitchRejectReason r) {
  switch (r) {
    case SwitchRejectReason::kWrongGptBase: return "WrongGptBase";
    case SwitchRejectReason::kIllegalWindow: return "IllegalWindow";
    case SwitchRejectReason::kNotTrampoline: return "NotTrampoline";
    case SwitchRejectReason::kInvalidDomain: return "InvalidDomain";
  }
  return "?";
}

struct RngSwitchResult {
  std::optional<SwitchRejectReason> rejected;
  bool pire_changed = false;
  bool window_changed = false;

  bool ok() const { return !rejected.has_value(); }
};

// One L3-Zone: a window-sized contiguous PAS, mapped at a fixed virtual base.
struct Zone {
  unsigned pas = 0;
  GranuleRange phys;
  std::uint64_t virt_page = 0;
  BypassWindow window;

  std::uint64_t pages() const { return phys.size(); }
  bool covers_vpage(std::uint64_t vp) const { return vp >= virt_page && vp - virt_page < pages(); }
};

struct ProcessRecord {
  unsigned pid = 0;
  GptId proc_gpt;
  AddressSpace aspace;
  std::vector<GranuleRange> delegated;
  std::map<unsigned, Zone> zones;
  std::map<DomainId, std::uint64_t> domain_pages;
};

class Monitor {
 public:
  explicit Monitor(MonitorConfig config = {})
      : config_(std::move(config)),
        limits_(WindowLimits::scaled(config_.window_scale)),
        gpts_(config_.granule_size, config_.matrix) {
    gpts_.create(kOsGpt);
  }
  Monitor(const Monitor&) = delete;
  Monitor& operator=(const Monitor&) = delete;

  const MonitorConfig& config() const { return config_; }
  const GptRegistry& gpts() const { return gpts_; }
  const Gpt& os_gpt() const { return gpts_.at(kOsGpt); }
  const WindowLimits& window_limits() const { return limits_; }
  bool device_gpc_enforced() const { return device_gpc_enforced_; }

  // Domains reachable per PAS is the reusable PIE count times 7 POE slots.
  std::uint64_t domain_capacity_pages() const {
    const std::uint64_t window_pages = config_.window_size / config_.granule_size;
    return window_pages / (kPoeDomainSlots * config_.registry.reusable_slots().size());
  }

  ProcessRecord& register_process(unsigned pid) {
    std::lock_guard lock(gpt_lock_);
    if (pid == 0 || processes_.count(pid))
      throw Error(ErrorCode::kInvalidArgument, "process id must be unique and non-zero");
    const GptId gid{pid};
    gpts_.create(gid);
    auto& rec = processes_[pid];
    rec.pid = pid;
    rec.proc_gpt = gid;
    rec.aspace = AddressSpace(pid, config_.granule_size);
    // Everything other worlds already own stays out of the new proc GPT.
    for (const auto& [range, label] : world_claims_) gpts_.at(gid).set_pas(range, label, kRoot);
    for (const auto& r : shared_buffers_) gpts_.at(gid).set_pas(r, PasLabel::kFullAccess, kRoot);
    log("register_process", -1, "pid " + std::to_string(pid));
    return rec;
  }

  ProcessRecord& process(unsigned pid) {
    auto it = processes_.find(pid);
    if (it == processes_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown pid " + std::to_string(pid));
    return it->second;
  }
  const ProcessRecord& process(unsigned pid) const { return const_cast<Monitor*>(this)->process(pid); }

  // Hands a physical range to a process: the OS GPT loses all access to it.
  DelegateResult delegate_region(unsigned pid, GranuleRange range) {
    std::lock_guard lock(gpt_lock_);
    return delegate_locked(pid, range);
  }

  // Syscall argument buffers shared between OS and process.
  DelegateResult add_shared_buffer(GranuleRange range) {
    std::lock_guard lock(gpt_lock_);
    if (range.empty()) throw Error(ErrorCode::kInvalidRange, "empty shared buffer");
    if (auto c = conflict_with_delegations(range)) return reject("add_shared_buffer", *c);
    for (const auto& s : shared_buffers_)
      if (s.overlaps(range)) return reject("add_shared_buffer", s);
    shared_buffers_.push_back(range);
    set_everywhere(range, PasLabel::kFullAccess);
    log("add_shared_buffer", -1, "ok");
    return {};
  }

  // Another world claims memory; every GPT then labels it with that world's
  // PAS so no isolation domain can reach it. Root claims cover monitor-owned
  // memory such as the page tables.
  DelegateResult claim_for_world(GranuleRange range, SecurityState world) {
    std::lock_guard lock(gpt_lock_);
    if (range.empty()) throw Error(ErrorCode::kInvalidRange, "empty claim");
    PasLabel label;
    switch (world) {
      case SecurityState::kRealmWorld: label = PasLabel::kRealm; break;
      case SecurityState::kSecureWorld: label = PasLabel::kSecure; break;
      case SecurityState::kRootWorld: label = PasLabel::kRoot; break;
      default: throw Error(ErrorCode::kInvalidArgument, "the normal world cannot claim memory");
    }
    if (auto c = conflict_with_delegations(range)) return reject("claim_for_world", *c);
    for (const auto& s : shared_buffers_)
      if (s.overlaps(range)) return reject("claim_for_world", s);
    world_claims_.emplace_back(range, label);
    set_everywhere(range, label);
    log("claim_for_world", -1, std::string(to_string(world)));
    return {};
  }

  // Delegates a window-sized L3-Zone and closes it in the proc GPT; only a
  // monitor-programmed bypass window opens it again.
  DelegateResult setup_zone(unsigned pid, unsigned pas, std::uint64_t phys_base,
                            std::uint64_t virt_base) {
    std::lock_guard lock(gpt_lock_);
    auto& rec = process(pid);
    if (rec.zones.count(pas)) throw Error(ErrorCode::kInvalidArgument, "PAS already configured");
    BypassWindow window(phys_base, config_.window_size, limits_);
    if (virt_base % config_.granule_size != 0)
      throw Error(ErrorCode::kInvalidArgument, "zone virtual base must be page aligned");
    const GranuleRange range{phys_base / config_.granule_size,
                             (phys_base + config_.window_size) / config_.granule_size};
    DelegateResult r = delegate_locked(pid, range);
    if (!r.ok) return r;
    gpts_.at(rec.proc_gpt).set_pas(range, PasLabel::kNoAccess, kRoot);
    rec.zones.emplace(pas, Zone{pas, range, virt_base / config_.granule_size, window});
    log("setup_zone", -1, "pas " + std::to_string(pas));
    return r;
  }

  // Setup-time mapping performed by the monitor itself (code, data, PIM, GCS).
  void setup_mapping(unsigned pid, const PageTableEntry& pte) {
    std::lock_guard lock(gpt_lock_);
    if (!process(pid).aspace.map(pte))
      throw Error(ErrorCode::kInvalidArgument, "setup mapping overlaps an existing page");
  }

  MapStatus zone_mmap(unsigned pid, std::uint64_t first_vpage, std::uint64_t count,
                      const DomainId& domain, bool exec = false) {
    std::lock_guard lock(gpt_lock_);
    if (!config_.registry.reusable(domain.pie_idx) || domain.poe_idx == 0 || domain.poe_idx >= kPorSlots)
      throw Error(ErrorCode::kInvalidArgument, "invalid domain " + domain.str());
    auto& rec = process(pid);
    MapStatus st = MapStatus::kOk;
    auto zit = rec.zones.find(domain.pas);
    if (exec) {
      st = MapStatus::kExecRejected;
    } else if (count == 0 || zit == rec.zones.end() || !zit->second.covers_vpage(first_vpage) ||
               !zit->second.covers_vpage(first_vpage + count - 1)) {
      st = MapStatus::kOutOfZone;
    } else if (rec.domain_pages[domain] + count > domain_capacity_pages()) {
      st = MapStatus::kCapacityExceeded;
    } else {
      for (std::uint64_t vp = first_vpage; vp < first_vpage + count; ++vp)
        if (rec.aspace.lookup(vp)) st = MapStatus::kOverlapRejected;
    }
    if (st == MapStatus::kOk) {
      const Zone& z = zit->second;
      for (std::uint64_t vp = first_vpage; vp < first_vpage + count; ++vp)
        rec.aspace.map({vp, z.phys.start + (vp - z.virt_page), domain.pie_idx, domain.poe_idx, false, true});
      rec.domain_pages[domain] += count;
    }
    log("zone_mmap", -1, std::string(to_string(st)));
    return st;
  }

  // Unmaps domain pages and scrubs them.
  MapStatus zone_munmap(unsigned pid, std::uint64_t first_vpage, std::uint64_t count) {
    std::lock_guard lock(gpt_lock_);
    auto& rec = process(pid);
    for (std::uint64_t vp = first_vpage; vp < first_vpage + count; ++vp) {
      const PageTableEntry* pte = rec.aspace.lookup(vp);
      if (!pte || !in_any_zone(rec, vp)) {
        log("zone_munmap", -1, "OutOfZone");
        return MapStatus::kOutOfZone;
      }
    }
    for (std::uint64_t vp = first_vpage; vp < first_vpage + count; ++vp) {
      const PageTableEntry pte = *rec.aspace.lookup(vp);
      for (auto& [d, n] : rec.domain_pages)
        if (d.pie_idx == pte.pie_idx && d.poe_idx == pte.poe_idx && zone_of(rec, vp) == d.pas && n > 0) {
          --n;
          break;
        }
      rec.aspace.unmap(vp);
      ++scrubbed_pages_;
    }
    log("zone_munmap", -1, "ok");
    return MapStatus::kOk;
  }

  // Points the core at a process: proc GPT, fixed PIE profile, overlays
  // cleared, all features on.
  void bind_core(CoreState& core, unsigned pid, std::uint64_t pim_base, std::uint64_t gcspr) {
    std::lock_guard lock(gpt_lock_);
    const auto& rec = process(pid);
    core.security_state = SecurityState::kNormalWorld;
    core.gpt_base = rec.proc_gpt;
    core.pire = config_.pire_profile;
    core.por.clear();
    core.windows.clear();
    core.gcspr = gcspr;
    core.write_tpidrro(Mode::kMonitor, pim_base);
    core.set_features(Mode::kMonitor, Features::all_on());
    running_[core.id()] = pid;
    log("bind_core", static_cast<int>(core.id()), "pid " + std::to_string(pid));
  }

  std::optional<unsigned> running(unsigned core_id) const {
    auto it = running_.find(core_id);
    if (it == running_.end()) return std::nullopt;
    return it->second;
  }

  // Entry into the kernel: swap to the OS GPT, save and sanitize the
  // sensitive registers.
  SavedContext intercept_trap(CoreState& core, TrapCause cause) {
    std::lock_guard lock(gpt_lock_);
    auto pid = running(core.id());
    if (!pid || core.gpt_base != process(*pid).proc_gpt)
      throw Error(ErrorCode::kContextMismatch, "core is not running a protected process");
    SavedContext ctx = SavedContext::capture(core, *pid);
    saved_[core.id()] = ctx;
    core.pire.clear();
    core.por.clear();
    core.windows.clear();
    core.gpt_base = kOsGpt;
    ++tlb_flushes_;
    core.cycles += config_.costs.hooked_syscall - config_.costs.syscall;
    log("intercept_trap", static_cast<int>(core.id()), std::string(to_string(cause)));
    return ctx;
  }

  // Return to the process: kernel edits to the saved registers are discarded
  // and every isolation feature is forced back on.
  void resume_process(CoreState& core, const SavedContext& saved) {
    std::lock_guard lock(gpt_lock_);
    auto it = saved_.find(core.id());
    if (saved.core_id != core.id() || it == saved_.end() || !(it->second == saved))
      throw Error(ErrorCode::kContextMismatch, "saved context does not belong to core " +
                                                   std::to_string(core.id()));
    const SavedContext& ctx = it->second;
    core.pire = ctx.pire;
    core.por = ctx.por;
    core.gcspr = ctx.gcspr;
    core.write_tpidrro(Mode::kMonitor, ctx.tpidrro);
    core.windows = ctx.windows;
    core.set_features(Mode::kMonitor, Features::all_on());
    core.security_state = SecurityState::kNormalWorld;
    core.gpt_base = process(ctx.pid).proc_gpt;
    ++tlb_flushes_;
    saved_.erase(it);
    log("resume_process", static_cast<int>(core.id()), "ok");
  }

  // L2/L3 switch requested through the RNG trap. Legal only while the core
  // runs under the requesting process's proc GPT, and only into windows the
  // monitor defined for that process.
  RngSwitchResult rng_trap_switch(CoreState& core, const RngTrap& trap, unsigned pid,
                                  const DomainId& target) {
    std::lock_guard lock(gpt_lock_);
    RngSwitchResult r;
    auto pit = processes_.find(pid);
    if (pit == processes_.end() || core.gpt_base != pit->second.proc_gpt ||
        trap.gpt_base != pit->second.proc_gpt || trap.mode != Mode::kUser) {
      r.rejected = SwitchRejectReason::kWrongGptBase;
    } else if (!config_.registry.reusable(target.pie_idx) || target.poe_idx == 0 ||
               target.poe_idx >= kPorSlots) {
      r.rejected = SwitchRejectReason::kInvalidDomain;
    } else if (!pit->second.zones.count(target.pas)) {
      r.rejected = SwitchRejectReason::kIllegalWindow;
    }
    if (!r.ok()) {
      log("rng_trap_switch", static_cast<int>(core.id()), std::string(to_string(*r.rejected)));
      return r;
    }
    PireRegister next = core.pire;
    for (unsigned slot : config_.registry.reusable_slots()) next.set(slot, PermEncoding{kPermNone});
    next.set(target.pie_idx, PermEncoding{kPermRWX});
    r.pire_changed = !(next == core.pire);
    core.pire = next;
    const BypassWindow& w = pit->second.zones.at(target.pas).window;
    if (core.windows.size() != 1 || !(core.windows.front() == w)) {
      core.windows.assign(1, w);
      r.window_changed = true;
      ++tlb_flushes_;
    }
    log("rng_trap_switch", static_cast<int>(core.id()), "ok " + target.str());
    return r;
  }

  // The kernel forwards mapping requests; the monitor performs the update
  // only if it passes rules (a)-(c).
  PteVerdict validate_pte_update(unsigned pid, const std::optional<PageTableEntry>& old,
                                 const PageTableEntry& next) {
    std::lock_guard lock(gpt_lock_);
    auto& rec = process(pid);
    PteVerdict v = judge_pte(rec, old, next);
    if (v.ok) {
      if (old) rec.aspace.replace(next);
      else rec.aspace.map(next);
    }
    log("validate_pte_update", -1, v.ok ? "ok" : std::string("Rejected(") + v.rule + ")");
    return v;
  }

  // Load-time image attestation against an expected SHAKE-128 digest.
  bool attest_image(std::string_view image, std::string_view expected_hex) {
    std::lock_guard lock(gpt_lock_);
    const bool ok = to_hex(shake128(image, 32)) == expected_hex;
    log("attest_image", -1, ok ? "ok" : "mismatch");
    return ok;
  }

  // Dual-GPT complementarity and delegation bookkeeping. Returns a
  // description of the first violated invariant.
  std::optional<std::string> verify_invariants() const {
    std::lock_guard lock(gpt_lock_);
    std::vector<GranuleRange> all;
    for (const auto& [pid, rec] : processes_) {
      for (const auto& r : rec.delegated) {
        if (!gpts_.at(kOsGpt).uniform(r, PasLabel::kNoAccess))
          return "delegated range of pid " + std::to_string(pid) + " is reachable from the OS GPT";
        all.push_back(r);
      }
      for (const auto& [pas, z] : rec.zones)
        if (!gpts_.at(rec.proc_gpt).uniform(z.phys, PasLabel::kNoAccess))
          return "L3-Zone " + std::to_string(pas) + " is open in the proc GPT";
    }
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (std::size_t j = i + 1; j < all.size(); ++j)
        if (all[i].overlaps(all[j])) return std::string("delegated ranges overlap");
      for (const auto& s : shared_buffers_)
        if (all[i].overlaps(s)) return std::string("delegated range overlaps a shared buffer");
    }
    return std::nullopt;
  }

  const std::vector<MonitorEvent>& events() const { return events_; }
  std::uint64_t tlb_flushes() const { return tlb_flushes_; }
  std::uint64_t scrubbed_pages() const { return scrubbed_pages_; }
  std::vector<GranuleRange> delegated_ranges() const {
    std::lock_guard lock(gpt_lock_);
    std::vector<GranuleRange> out;
    for (const auto& [pid, rec] : processes_) out.insert(out.end(), rec.delegated.begin(), rec.delegated.end());
    return out;
  }

 private:
  static constexpr SecurityState kRoot = SecurityState::kRootWorld;

  std::optional<GranuleRange> conflict_with_delegations(GranuleRange range) const {
    for (const auto& [pid, rec] : processes_)
      for (const auto& d : rec.delegated)
        if (d.overlaps(range)) return d;
    return std::nullopt;
  }

  DelegateResult reject(std::string_view op, GranuleRange conflict) {
    log(std::string(op), -1, "OverlapRejected");
    return {false, conflict};
  }

  DelegateResult delegate_locked(unsigned pid, GranuleRange range) {
    if (range.empty()) throw Error(ErrorCode::kInvalidRange, "empty delegation");
    auto& rec = process(pid);
    if (auto c = conflict_with_delegations(range)) return reject("delegate_region", *c);
    for (const auto& s : shared_buffers_)
      if (s.overlaps(range)) return reject("delegate_region", s);
    for (const auto& [r, label] : world_claims_)
      if (r.overlaps(range)) return reject("delegate_region", r);
    gpts_.at(kOsGpt).set_pas(range, PasLabel::kNoAccess, kRoot);
    rec.delegated.push_back(range);
    log("delegate_region", -1, "ok");
    return {};
  }

  void set_everywhere(GranuleRange range, PasLabel label) {
    gpts_.at(kOsGpt).set_pas(range, label, kRoot);
    for (auto& [pid, rec] : processes_) gpts_.at(rec.proc_gpt).set_pas(range, label, kRoot);
  }

  static std::optional<unsigned> zone_of(const ProcessRecord& rec, std::uint64_t vp) {
    for (const auto& [pas, z] : rec.zones)
      if (z.covers_vpage(vp)) return pas;
    return std::nullopt;
  }
  static bool in_any_zone(const ProcessRecord& rec, std::uint64_t vp) { return zone_of(rec, vp).has_value(); }

  bool delegated_phys(const ProcessRecord& rec, std::uint64_t granule) const {
    for (const auto& r : rec.delegated)
      if (r.contains(granule)) return true;
    return false;
  }

  bool secure_config(const ProcessRecord& rec, const PageTableEntry& pte) const {
    return pte.is_gcs_page || pte.poe_idx != 0 || config_.registry.reusable(pte.pie_idx) ||
           config_.registry.kind(pte.pie_idx) == PieSlotKind::kGcs || delegated_phys(rec, pte.phys_page);
  }

  PteVerdict judge_pte(const ProcessRecord& rec, const std::optional<PageTableEntry>& old,
                       const PageTableEntry& next) const {
    if (!next.well_formed() || !next.valid) return {false, 'b'};
    const PageTableEntry* existing = rec.aspace.lookup(next.virt_page);
    if (old && (!existing || !(*existing == *old) || old->virt_page != next.virt_page)) return {false, 'c'};
    if (decode_perm(config_.pire_profile.get(next.pie_idx), PageClass::kData).perms.execute)
      return {false, 'a'};
    if (old && secure_config(rec, *existing) && !(*existing == next)) return {false, 'b'};
    if (!old && existing) return {false, 'c'};
    if (secure_config(rec, next)) return {false, 'b'};
    for (const auto& [vp, pte] : rec.aspace.entries())
      if (vp != next.virt_page && pte.phys_page == next.phys_page) return {false, 'c'};
    return {};
  }

  void log(std::string op, int core, std::string outcome) {
    events_.push_back({std::move(op), core, std::move(outcome)});
  }

  MonitorConfig config_;
  WindowLimits limits_;
  GptRegistry gpts_;
  std::map<unsigned, ProcessRecord> processes_;
  std::vector<GranuleRange> shared_buffers_;
  std::vector<std::pair<GranuleRange, PasLabel>> world_claims_;
  std::map<unsigned, SavedContext> saved_;
  std::map<unsigned, unsigned> running_;
  std::vector<MonitorEvent> events_;
  std::uint64_t tlb_flushes_ = 0;
  std::uint64_t scrubbed_pages_ = 0;
  bool device_gpc_enforced_ = true;
  mutable std::mutex gpt_lock_;
};

}  // namespace nanozone
