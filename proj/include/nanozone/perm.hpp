#pragma once

// Indirect (PIE) and overlay (POE) permission encodings and how they compose
// into the effective rights of a user-mode access.
//
// Encoding bit layout for data classes:
//   bit0 = read, bit1 = execute, bit2 = write, bit3 = reserved.
// A data encoding with the reserved bit set grants nothing.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nanozone/error.hpp"

namespace nanozone {

inline constexpr unsigned kPieSlots = 16;
inline constexpr unsigned kPorSlots = 8;
inline constexpr unsigned kGcsPieSlot = 11;
inline constexpr std::uint8_t kPermNone = 0b0000;
inline constexpr std::uint8_t kPermRW = 0b0101;
inline constexpr std::uint8_t kPermRWX = 0b0111;

struct PermSet {
  bool read = false;
  bool write = false;
  bool execute = false;

  static constexpr PermSet none() { return {}; }
  static constexpr PermSet all() { return {true, true, true}; }

  constexpr bool empty() const { return !read && !write && !execute; }

  friend constexpr PermSet operator&(PermSet a, PermSet b) {
    return {a.read && b.read, a.write && b.write, a.execute && b.execute};
  }
  friend constexpr bool operator==(PermSet, PermSet) = default;

  std::string str() const {
    std::string s = "---";
    if (read) s[0] = 'R';
    if (write) s[1] = 'W';
    if (execute) s[2] = 'X';
    return s;
  }
};

class PermEncoding {
 public:
  constexpr PermEncoding() = default;
  constexpr explicit PermEncoding(unsigned value) : value_(check(value)) {}

  constexpr std::uint8_t value() const { return value_; }
  friend constexpr bool operator==(PermEncoding, PermEncoding) = default;

 private:
  static constexpr std::uint8_t check(unsigned v) {
    if (v > 0xF) throw Error(ErrorCode::kInvalidArgument, "permission encoding exceeds 4 bits");
    return static_cast<std::uint8_t>(v);
  }
  std::uint8_t value_ = 0;
};

enum class PageClass { kData, kGcs };

// Decoded permission of a page. GCS-class pages are readable by user code,
// never executable, and writable only through the dedicated GCS store.
struct ResolvedPerm {
  PageClass page_class = PageClass::kData;
  PermSet perms;

  static constexpr ResolvedPerm gcs_class() {
    return {PageClass::kGcs, PermSet{true, false, false}};
  }
  constexpr bool is_gcs() const { return page_class == PageClass::kGcs; }
  friend constexpr bool operator==(const ResolvedPerm&, const ResolvedPerm&) = default;
};

constexpr PermSet decode_data_bits(std::uint8_t v) {
  if (v & 0b1000) return PermSet::none();
  return {(v & 0b0001) != 0, (v & 0b0100) != 0, (v & 0b0010) != 0};
}

constexpr ResolvedPerm decode_perm(PermEncoding encoding, PageClass context) {
  if (context == PageClass::kGcs) return ResolvedPerm::gcs_class();
  return {PageClass::kData, decode_data_bits(encoding.value())};
}

constexpr PermSet effective_perm(PermSet base, PermSet overlay) { return base & overlay; }

// Overlays never apply to GCS pages.
constexpr ResolvedPerm effective_perm(ResolvedPerm base, PermSet overlay) {
  if (base.is_gcs()) return base;
  return {PageClass::kData, base.perms & overlay};
}

enum class PieSlotKind { kFixed, kGcs, kKernel, kReusable };

// Which PIE slots carry fixed semantics and which four are free to act as
// domain base permissions. The default assignment is configurable.
class PieSlotRegistry {
 public:
  PieSlotRegistry()
      : kinds_{PieSlotKind::kFixed,    PieSlotKind::kFixed,    PieSlotKind::kFixed,
               PieSlotKind::kReusable, PieSlotKind::kFixed,    PieSlotKind::kFixed,
               PieSlotKind::kReusable, PieSlotKind::kReusable, PieSlotKind::kFixed,
               PieSlotKind::kReusable, PieSlotKind::kGcs,      PieSlotKind::kGcs,
               PieSlotKind::kKernel,   PieSlotKind::kKernel,   PieSlotKind::kKernel,
               PieSlotKind::kKernel} {}

  explicit PieSlotRegistry(std::vector<unsigned> reusable) : PieSlotRegistry() {
    for (auto& k : kinds_)
      if (k == PieSlotKind::kReusable) k = PieSlotKind::kFixed;
    if (reusable.empty()) throw Error(ErrorCode::kConfig, "reusable PIE slot set is empty");
    for (unsigned slot : reusable) {
      if (slot >= kPieSlots) throw Error(ErrorCode::kConfig, "PIE slot out of range");
      if (kinds_[slot] != PieSlotKind::kFixed)
        throw Error(ErrorCode::kConfig,
                    "PIE slot " + std::to_string(slot) + " is reserved and cannot host domains");
      kinds_[slot] = PieSlotKind::kReusable;
    }
  }

  PieSlotKind kind(unsigned slot) const { return kinds_.at(slot); }
  bool reusable(unsigned slot) const { return slot < kPieSlots && kinds_[slot] == PieSlotKind::kReusable; }

  std::vector<unsigned> reusable_slots() const {
    std::vector<unsigned> out;
    for (unsigned i = 0; i < kPieSlots; ++i)
      if (kinds_[i] == PieSlotKind::kReusable) out.push_back(i);
    return out;
  }

 private:
  std::array<PieSlotKind, kPieSlots> kinds_;
};

class PireRegister {
 public:
  PireRegister() = default;

  // Fixed user profile: 0 none, 1 R, 2 RX, 4 RW (default data), 5 RWX,
  // 8 X-only. Domain, GCS and kernel slots start at zero.
  static PireRegister standard_profile() {
    PireRegister r;
    r.set(1, PermEncoding{0b0001});
    r.set(2, PermEncoding{0b0011});
    r.set(4, PermEncoding{kPermRW});
    r.set(5, PermEncoding{kPermRWX});
    r.set(8, PermEncoding{0b0010});
    return r;
  }

  PermEncoding get(unsigned slot) const { return slots_.at(slot); }
  void set(unsigned slot, PermEncoding enc) { slots_.at(slot) = enc; }
  void clear() { slots_.fill(PermEncoding{}); }

  std::uint64_t raw() const {
    std::uint64_t v = 0;
    for (unsigned i = 0; i < kPieSlots; ++i) v |= std::uint64_t{slots_[i].value()} << (4 * i);
    return v;
  }

  friend bool operator==(const PireRegister&, const PireRegister&) = default;

 private:
  std::array<PermEncoding, kPieSlots> slots_{};
};

class PorRegister {
 public:
  PorRegister() = default;

  PermEncoding get(unsigned slot) const {
    if (slot == 0) return PermEncoding{kPermRWX};
    return slots_.at(slot);
  }

  // Returns false when the write hit the fixed slot 0 and was dropped.
  bool set(unsigned slot, PermEncoding enc) {
    if (slot >= kPorSlots) throw Error(ErrorCode::kInvalidArgument, "POR slot out of range");
    if (slot == 0) {
      ++ignored_writes_;
      return false;
    }
    slots_[slot] = enc;
    return true;
  }

  void clear() { slots_.fill(PermEncoding{}); }
  unsigned ignored_writes() const { return ignored_writes_; }

  std::uint64_t raw() const {
    std::uint64_t v = 0;
    for (unsigned i = 0; i < kPorSlots; ++i) v |= std::uint64_t{get(i).value()} << (4 * i);
    return v;
  }

  friend bool operator==(const PorRegister& a, const PorRegister& b) { return a.raw() == b.raw(); }

 private:
  std::array<PermEncoding, kPorSlots> slots_{};
  unsigned ignored_writes_ = 0;
};

struct PageTableEntry {
  std::uint64_t virt_page = 0;
  std::uint64_t phys_page = 0;
  unsigned pie_idx = 4;
  unsigned poe_idx = 0;
  bool is_gcs_page = false;
  bool valid = true;

  bool well_formed() const {
    return pie_idx < kPieSlots && poe_idx < kPorSlots && (is_gcs_page == (pie_idx == kGcsPieSlot));
  }
  friend bool operator==(const PageTableEntry&, const PageTableEntry&) = default;
};

inline ResolvedPerm resolve_pte(const PageTableEntry& pte, const PireRegister& pire,
                                const PorRegister& por) {
  if (!pte.valid) throw Error(ErrorCode::kInvalidPte, "PTE is not valid");
  if (!pte.well_formed()) throw Error(ErrorCode::kInvalidPte, "PTE indexes are inconsistent");
  if (pte.is_gcs_page) return ResolvedPerm::gcs_class();
  const ResolvedPerm base = decode_perm(pire.get(pte.pie_idx), PageClass::kData);
  return effective_perm(base, decode_perm(por.get(pte.poe_idx), PageClass::kData).perms);
}

}  // namespace nanozone
