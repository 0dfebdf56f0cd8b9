#pragma once

// Code-pointer integrity: slot-index tagged function pointers backed up in a
// GCS-class pointer-integrity memory (PIM), and the GCS shadow stack.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nanozone/core.hpp"
#include "nanozone/digest.hpp"
#include "nanozone/domain.hpp"
#include "nanozone/error.hpp"

namespace nanozone {

inline constexpr unsigned kTagShift = 48;
inline constexpr std::uint64_t kAddrMask = (std::uint64_t{1} << kTagShift) - 1;
inline constexpr std::uint16_t kUntaggedIndex = 0xFFFF;
inline constexpr std::uint64_t kPimEntryBytes = 16;
inline constexpr std::size_t kDefaultPimCapacity = 4096;

using TaggedFnPtr = std::uint64_t;

constexpr TaggedFnPtr tag_pointer(std::uint64_t addr, std::uint16_t index) {
  return (std::uint64_t{index} << kTagShift) | (addr & kAddrMask);
}
constexpr std::uint64_t untag_pointer(TaggedFnPtr p) { return p & kAddrMask; }
constexpr std::uint16_t tag_index(TaggedFnPtr p) { return static_cast<std::uint16_t>(p >> kTagShift); }

struct PimEntry {
  std::uint64_t fn_addr = 0;
  std::uint64_t type_id = 0;
  friend bool operator==(const PimEntry&, const PimEntry&) = default;
};

enum class CpiViolationKind { kOutOfRange, kAddrMismatch, kTypeMismatch };

inline std::string_view to_string(CpiViolationKind k) {
  switch (k) {
    case CpiViolationKind::kOutOfRange: return "OutOfRange";
    case CpiViolationKind::kAddrMismatch: return "AddrMismatch";
    case CpiViolationKind::kTypeMismatch: return "TypeMismatch";
  }
  return "?";
}

struct PimCheckResult {
  std::optional<CpiViolationKind> violation;
  std::uint64_t fn_addr = 0;

  bool ok() const { return !violation.has_value(); }
};

// Everything a PIM operation touches on the executing thread's core.
struct ThreadContext {
  CoreState& core;
  const AddressSpace& aspace;
  const GptRegistry& gpts;
  const CostModel& costs;
};

// One per thread. Entries live in GCS pages starting at `base`; each is
// written with a GCS store so an ordinary store can never reach them.
class PimRegion {
 public:
  explicit PimRegion(std::uint64_t base = 0, std::size_t capacity = kDefaultPimCapacity)
      : base_(base), capacity_(capacity) {
    if (capacity == 0 || capacity >= kUntaggedIndex)
      throw Error(ErrorCode::kConfig, "PIM capacity must be in [1, 65534]");
  }

  std::uint64_t base() const { return base_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t next_slot() const { return entries_.size(); }
  const std::vector<PimEntry>& entries() const { return entries_; }
  std::uint64_t bytes() const { return capacity_ * kPimEntryBytes; }
  std::uint64_t slot_addr(std::size_t slot) const { return base_ + slot * kPimEntryBytes; }
  bool contains(std::uint64_t vaddr) const { return vaddr >= base_ && vaddr - base_ < bytes(); }

  // A pointer counts as already protected only if its index names a live
  // entry holding the same address; anything else is treated as raw.
  bool is_backed_up(TaggedFnPtr p) const {
    const std::uint16_t idx = tag_index(p);
    return idx != kUntaggedIndex && idx < entries_.size() && entries_[idx].fn_addr == untag_pointer(p);
  }

  TaggedFnPtr backup(ThreadContext& t, TaggedFnPtr fn_ptr, std::string_view sig) {
    t.core.cycles += t.costs.ptr_backup;
    if (is_backed_up(fn_ptr)) return fn_ptr;
    if (entries_.size() >= capacity_)
      throw Error(ErrorCode::kPimFull, "PIM holds " + std::to_string(capacity_) + " entries");
    const std::size_t slot = entries_.size();
    const AccessResult r =
        access(t.core, t.aspace, t.gpts, slot_addr(slot), AccessKind::kGcsStore, Mode::kUser);
    if (!r.ok())
      throw Error(ErrorCode::kGcsStoreFault, std::string(to_string(r.fault->kind)) +
                                                 " storing PIM slot " + std::to_string(slot));
    entries_.push_back({untag_pointer(fn_ptr), type_id(sig)});
    return tag_pointer(fn_ptr, static_cast<std::uint16_t>(slot));
  }

  PimCheckResult check(ThreadContext& t, TaggedFnPtr tagged, std::string_view expected_sig) const {
    t.core.cycles += t.costs.ptr_check;
    return check_only(tagged, type_id(expected_sig));
  }

  PimCheckResult check_only(TaggedFnPtr tagged, std::uint64_t expected_type) const {
    const std::uint16_t idx = tag_index(tagged);
    if (idx == kUntaggedIndex || idx >= entries_.size()) return {CpiViolationKind::kOutOfRange, 0};
    const PimEntry& e = entries_[idx];
    if (e.fn_addr != untag_pointer(tagged)) return {CpiViolationKind::kAddrMismatch, 0};
    if (e.type_id != expected_type) return {CpiViolationKind::kTypeMismatch, 0};
    return {std::nullopt, e.fn_addr};
  }

  // A successful GCS store into the region from outside backup(). Each entry
  // is two 8-byte words: address then type id.
  void raw_store(std::uint64_t vaddr, std::uint64_t value) {
    if (!contains(vaddr)) return;
    const std::size_t slot = (vaddr - base_) / kPimEntryBytes;
    if (slot >= entries_.size()) return;
    if ((vaddr - base_) % kPimEntryBytes < 8) entries_[slot].fn_addr = value & kAddrMask;
    else entries_[slot].type_id = value;
  }

 private:
  std::uint64_t base_;
  std::size_t capacity_;
  std::vector<PimEntry> entries_;
};

// Patches each global function pointer with its tagged form at load time.
struct GlobalFnPtr {
  std::string name;
  TaggedFnPtr value = 0;
  std::string sig;
};

inline void load_globals(PimRegion& pim, ThreadContext& t, std::vector<GlobalFnPtr>& segment) {
  for (auto& g : segment) g.value = pim.backup(t, g.value, g.sig);
}

enum class CfiStatus { kOk, kViolation };

// Hardware-maintained return-address stack. With GCS disabled, pushes and
// returns pass unchecked.
class ShadowStack {
 public:
  void push(std::uint64_t ret_addr, bool gcs_on = true) {
    if (gcs_on) frames_.push_back(ret_addr);
  }

  CfiStatus ret(std::uint64_t lr, bool gcs_on = true) {
    if (!gcs_on) return CfiStatus::kOk;
    if (frames_.empty()) throw Error(ErrorCode::kStackUnderflow, "return with an empty GCS");
    const std::uint64_t top = frames_.back();
    frames_.pop_back();
    return top == lr ? CfiStatus::kOk : CfiStatus::kViolation;
  }

  std::size_t depth() const { return frames_.size(); }

 private:
  std::vector<std::uint64_t> frames_;
};

}  // namespace nanozone
