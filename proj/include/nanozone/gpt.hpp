#pragma once

// Granule Protection Table: per-granule physical address space labels, the
// granule protection check, and per-core bypass windows.

#include <array>
#include <cstdint>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nanozone/error.hpp"

namespace nanozone {

enum class PasLabel { kNormal, kSecure, kRealm, kRoot, kFullAccess, kNoAccess };
enum class SecurityState { kNormalWorld, kSecureWorld, kRealmWorld, kRootWorld };

inline constexpr std::array kAllPasLabels{PasLabel::kNormal,     PasLabel::kSecure,
                                          PasLabel::kRealm,      PasLabel::kRoot,
                                          PasLabel::kFullAccess, PasLabel::kNoAccess};
inline constexpr std::array kAllSecurityStates{SecurityState::kNormalWorld,
                                               SecurityState::kSecureWorld,
                                               SecurityState::kRealmWorld,
                                               SecurityState::kRootWorld};

inline std::string_view to_string(PasLabel l) {
  switch (l) {
    case PasLabel::kNormal: return "normal";
    case PasLabel::kSecure: return "secure";
    case PasLabel::kRealm: return "realm";
    case PasLabel::kRoot: return "root";
    case PasLabel::kFullAccess: return "full-access";
    case PasLabel::kNoAccess: return "no-access";
  }
  return "?";
}

inline std::string_view to_string(SecurityState s) {
  switch (s) {
    case SecurityState::kNormalWorld: return "normal";
    case SecurityState::kSecureWorld: return "secure";
    case SecurityState::kRealmWorld: return "realm";
    case SecurityState::kRootWorld: return "root";
  }
  return "?";
}

inline std::optional<PasLabel> parse_pas_label(std::string_view s) {
  for (PasLabel l : kAllPasLabels)
    if (to_string(l) == s) return l;
  return std::nullopt;
}

inline std::optional<SecurityState> parse_security_state(std::string_view s) {
  for (SecurityState st : kAllSecurityStates)
    if (to_string(st) == s) return st;
  return std::nullopt;
}

// Rows are security states, columns PAS labels.
class AccessMatrix {
 public:
  static AccessMatrix standard() {
    AccessMatrix m;
    for (PasLabel l : kAllPasLabels) m.set(SecurityState::kRootWorld, l, true);
    for (SecurityState s : kAllSecurityStates) {
      m.set(s, PasLabel::kNormal, true);
      m.set(s, PasLabel::kFullAccess, true);
    }
    m.set(SecurityState::kSecureWorld, PasLabel::kSecure, true);
    m.set(SecurityState::kRealmWorld, PasLabel::kRealm, true);
    return m;
  }

  bool allowed(SecurityState s, PasLabel l) const {
    return cells_[static_cast<unsigned>(s)][static_cast<unsigned>(l)];
  }
  void set(SecurityState s, PasLabel l, bool allow) {
    cells_[static_cast<unsigned>(s)][static_cast<unsigned>(l)] = allow;
  }

  friend bool operator==(const AccessMatrix&, const AccessMatrix&) = default;

 private:
  std::array<std::array<bool, 6>, 4> cells_{};
};

// Half-open range of granule numbers.
struct GranuleRange {
  std::uint64_t start = 0;
  std::uint64_t end = 0;

  bool empty() const { return end <= start; }
  bool contains(std::uint64_t g) const { return start <= g && g < end; }
  bool overlaps(const GranuleRange& o) const { return start < o.end && o.start < end; }
  std::uint64_t size() const { return empty() ? 0 : end - start; }
  friend bool operator==(const GranuleRange&, const GranuleRange&) = default;
};

struct GptId {
  std::uint32_t value = 0;
  friend auto operator<=>(const GptId&, const GptId&) = default;
};

inline constexpr std::uint64_t kDefaultGranuleSize = 4096;

class Gpt {
 public:
  explicit Gpt(GptId id, std::uint64_t granule_size = kDefaultGranuleSize)
      : id_(id), granule_size_(granule_size) {
    if (granule_size == 0 || (granule_size & (granule_size - 1)) != 0)
      throw Error(ErrorCode::kConfig, "granule size must be a power of two");
  }

  GptId id() const { return id_; }
  std::uint64_t granule_size() const { return granule_size_; }
  std::uint64_t granule_of(std::uint64_t paddr) const { return paddr / granule_size_; }

  // Last writer wins on overlapping ranges.
  void set_pas(GranuleRange range, PasLabel label, SecurityState caller) {
    if (caller != SecurityState::kRootWorld)
      throw Error(ErrorCode::kNotRoot, "only the root world may modify a GPT");
    if (range.empty()) throw Error(ErrorCode::kInvalidRange, "empty granule range");
    carve(range);
    if (label != PasLabel::kNormal) segments_.emplace(range.start, Segment{range.end, label});
  }

  PasLabel label_of(std::uint64_t granule) const {
    auto it = segments_.upper_bound(granule);
    if (it == segments_.begin()) return PasLabel::kNormal;
    --it;
    return granule < it->second.end ? it->second.label : PasLabel::kNormal;
  }

  // True iff every granule of `range` carries `label`.
  bool uniform(GranuleRange range, PasLabel label) const {
    std::uint64_t g = range.start;
    while (g < range.end) {
      auto it = segments_.upper_bound(g);
      std::uint64_t next_start = it == segments_.end() ? range.end : it->first;
      PasLabel here = PasLabel::kNormal;
      std::uint64_t here_end = next_start;
      if (it != segments_.begin()) {
        auto prev = std::prev(it);
        if (g < prev->second.end) {
          here = prev->second.label;
          here_end = prev->second.end;
        }
      }
      if (here != label) return false;
      g = here_end;
    }
    return true;
  }

  std::size_t segment_count() const { return segments_.size(); }

 private:
  struct Segment {
    std::uint64_t end;
    PasLabel label;
  };

  // Removes `range` from all segments, splitting at the edges.
  void carve(GranuleRange range) {
    auto it = segments_.upper_bound(range.start);
    if (it != segments_.begin()) {
      auto prev = std::prev(it);
      if (prev->second.end > range.start) {
        Segment tail = prev->second;
        prev->second.end = range.start;
        if (tail.end > range.end) segments_.emplace(range.end, tail);
        if (prev->first == prev->second.end) segments_.erase(prev);
      }
    }
    it = segments_.lower_bound(range.start);
    while (it != segments_.end() && it->first < range.end) {
      if (it->second.end > range.end) {
        Segment tail = it->second;
        segments_.erase(it);
        segments_.emplace(range.end, tail);
        break;
      }
      it = segments_.erase(it);
    }
  }

  GptId id_;
  std::uint64_t granule_size_;
  std::map<std::uint64_t, Segment> segments_;
};

inline constexpr std::uint64_t kGiB = 1ull << 30;

struct WindowLimits {
  std::uint64_t min_size = kGiB;
  std::uint64_t max_size = 64 * kGiB;

  // The scale divides both bounds and keeps their 1:64 ratio.
  static WindowLimits scaled(std::uint64_t scale) {
    if (scale == 0 || (scale & (scale - 1)) != 0 || scale > kGiB)
      throw Error(ErrorCode::kConfig, "window_scale must be a power of two no larger than 2^30");
    return {kGiB / scale, 64 * kGiB / scale};
  }
};

class BypassWindow {
 public:
  BypassWindow(std::uint64_t base, std::uint64_t size, WindowLimits limits = {})
      : base_(base), size_(size) {
    if (size < limits.min_size || size > limits.max_size || (size & (size - 1)) != 0)
      throw Error(ErrorCode::kInvalidWindow, "window size must be a power of two within bounds");
    if (base % size != 0) throw Error(ErrorCode::kInvalidWindow, "window base must be size-aligned");
  }

  std::uint64_t base() const { return base_; }
  std::uint64_t size() const { return size_; }
  bool covers(std::uint64_t paddr) const { return paddr >= base_ && paddr - base_ < size_; }
  friend bool operator==(const BypassWindow&, const BypassWindow&) = default;

 private:
  std::uint64_t base_;
  std::uint64_t size_;
};

inline bool window_covers(std::span<const BypassWindow> windows, std::uint64_t paddr) {
  for (const auto& w : windows)
    if (w.covers(paddr)) return true;
  return false;
}

struct GpcResult {
  bool ok = true;
  bool bypassed = false;
  std::uint64_t granule = 0;
  PasLabel label = PasLabel::kNormal;
};

inline GpcResult gpc_check(const Gpt& gpt, SecurityState state, std::uint64_t paddr,
                           std::span<const BypassWindow> windows,
                           const AccessMatrix& matrix = AccessMatrix::standard()) {
  GpcResult r;
  r.granule = gpt.granule_of(paddr);
  if (window_covers(windows, paddr)) {
    r.bypassed = true;
    return r;
  }
  r.label = gpt.label_of(r.granule);
  r.ok = matrix.allowed(state, r.label);
  return r;
}

// Owns every GPT of the machine plus the access matrix shared by all checks.
class GptRegistry {
 public:
  explicit GptRegistry(std::uint64_t granule_size = kDefaultGranuleSize,
                       AccessMatrix matrix = AccessMatrix::standard())
      : granule_size_(granule_size), matrix_(matrix) {}

  Gpt& create(GptId id) {
    auto [it, inserted] = gpts_.try_emplace(id, id, granule_size_);
    if (!inserted) throw Error(ErrorCode::kInvalidArgument, "GPT id already registered");
    return it->second;
  }

  const Gpt& at(GptId id) const {
    auto it = gpts_.find(id);
    if (it == gpts_.end()) throw Error(ErrorCode::kUnknownGpt, "GPT " + std::to_string(id.value));
    return it->second;
  }
  Gpt& at(GptId id) { return const_cast<Gpt&>(std::as_const(*this).at(id)); }

  bool contains(GptId id) const { return gpts_.count(id) != 0; }
  std::uint64_t granule_size() const { return granule_size_; }
  const AccessMatrix& matrix() const { return matrix_; }
  void set_matrix(const AccessMatrix& m) { matrix_ = m; }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [id, gpt] : gpts_) fn(gpt);
  }

 private:
  std::uint64_t granule_size_;
  AccessMatrix matrix_;
  std::map<GptId, Gpt> gpts_;
};

}  // namespace nanozone
