#pragma once

// The trampoline: the only code allowed to switch domains. L1 switches are a
// plain POR_EL0 write; L2 and L3 switches trap to the monitor via RNDR.

#include <map>
#include <optional>

#include "nanozone/core.hpp"
#include "nanozone/domain.hpp"
#include "nanozone/monitor.hpp"

namespace nanozone {

enum class SwitchVia { kTrampoline, kRaw };

struct SwitchOutcome {
  std::optional<SwitchRejectReason> rejected;
  std::optional<SwitchRecord> record;

  bool ok() const { return !rejected.has_value(); }
};

class Trampoline {
 public:
  Trampoline(Monitor& monitor, unsigned pid, SwitchTrace& trace)
      : monitor_(&monitor), pid_(pid), trace_(&trace) {}

  SwitchOutcome switch_domain(CoreState& core, const DomainId& target,
                              SwitchVia via = SwitchVia::kTrampoline) {
    if (via == SwitchVia::kRaw) return {SwitchRejectReason::kNotTrampoline, std::nullopt};
    const std::optional<DomainId> from = current(core.id());
    SwitchOutcome out = enter(core, target);
    if (!out.ok()) return out;
    const SwitchRecord& rec = trace_->append(core.id(), from, target);
    core.cycles += rec.cycles;
    out.record = rec;
    return out;
  }

  // Setup-time entry performed while the monitor configures the core;
  // neither traced nor charged.
  SwitchOutcome prime(CoreState& core, const DomainId& target) { return enter(core, target); }

  // Leaving a domain clears every overlay slot. The PIE slot and window stay
  // configured, so the next entry is classified against the last domain.
  void revoke(CoreState& core) {
    for (unsigned slot = 1; slot < kPorSlots; ++slot) core.por.set(slot, PermEncoding{kPermNone});
    core.cycles += trace_->costs().l1_switch;
    ++revocations_;
  }

  std::optional<DomainId> current(unsigned core_id) const {
    auto it = current_.find(core_id);
    if (it == current_.end()) return std::nullopt;
    return it->second;
  }

  // Forgets the core's last domain, e.g. after the monitor reset its registers.
  void forget(unsigned core_id) { current_.erase(core_id); }

  std::uint64_t revocations() const { return revocations_; }
  unsigned pid() const { return pid_; }

 private:
  SwitchOutcome enter(CoreState& core, const DomainId& target) {
    const SwitchLevel level = classify_switch(current(core.id()), target);
    if (level != SwitchLevel::kL1) {
      const RngTrap trap = read_rng(core, Mode::kUser);
      const RngSwitchResult r = monitor_->rng_trap_switch(core, trap, pid_, target);
      if (!r.ok()) return {r.rejected, std::nullopt};
    }
    for (unsigned slot = 1; slot < kPorSlots; ++slot) core.por.set(slot, PermEncoding{kPermNone});
    core.por.set(target.poe_idx, PermEncoding{kPermRWX});
    current_[core.id()] = target;
    return {};
  }

  Monitor* monitor_;
  unsigned pid_;
  SwitchTrace* trace_;
  std::map<unsigned, DomainId> current_;
  std::uint64_t revocations_ = 0;
};

}  // namespace nanozone
