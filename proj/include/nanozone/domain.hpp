#pragma once

// Three-tier domain identity, switch classification, the cycle-cost model,
// switch traces and the two domain allocation policies.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nanozone/error.hpp"
#include "nanozone/perm.hpp"

namespace nanozone {

inline constexpr unsigned kPoeDomainSlots = kPorSlots - 1;

struct DomainId {
  unsigned pas = 0;
  unsigned pie_idx = 0;
  unsigned poe_idx = 1;

  friend auto operator<=>(const DomainId&, const DomainId&) = default;

  std::string str() const {
    return "<" + std::to_string(pas) + "," + std::to_string(pie_idx) + "," +
           std::to_string(poe_idx) + ">";
  }
};

// Maps dense domain indexes onto <PAS, PIE, POE>. Within a PAS the POE index
// varies fastest, then the PIE slot; each PAS holds 7 x |reusable slots|.
class DomainSpace {
 public:
  explicit DomainSpace(unsigned pas_count = 1, PieSlotRegistry registry = {})
      : registry_(std::move(registry)), pies_(registry_.reusable_slots()), pas_count_(pas_count) {}

  unsigned per_pas() const { return kPoeDomainSlots * static_cast<unsigned>(pies_.size()); }
  unsigned pas_count() const { return pas_count_; }
  std::uint64_t size() const { return std::uint64_t{per_pas()} * pas_count_; }
  const std::vector<unsigned>& pie_slots() const { return pies_; }
  const PieSlotRegistry& registry() const { return registry_; }

  DomainId at(std::uint64_t index) const {
    if (index >= size()) throw Error(ErrorCode::kExhausted, "domain index beyond universe");
    const unsigned in_pas = static_cast<unsigned>(index % per_pas());
    return {static_cast<unsigned>(index / per_pas()), pies_[in_pas / kPoeDomainSlots],
            in_pas % kPoeDomainSlots + 1};
  }

  std::uint64_t index_of(const DomainId& d) const {
    validate(d);
    auto pie_pos = static_cast<unsigned>(std::find(pies_.begin(), pies_.end(), d.pie_idx) - pies_.begin());
    return std::uint64_t{d.pas} * per_pas() + pie_pos * kPoeDomainSlots + (d.poe_idx - 1);
  }

  bool valid(const DomainId& d) const {
    return d.pas < pas_count_ && registry_.reusable(d.pie_idx) && d.poe_idx >= 1 &&
           d.poe_idx < kPorSlots;
  }

  void validate(const DomainId& d) const {
    if (!valid(d)) throw Error(ErrorCode::kInvalidArgument, "invalid domain " + d.str());
  }

 private:
  PieSlotRegistry registry_;
  std::vector<unsigned> pies_;
  unsigned pas_count_;
};

struct CostModel {
  double l1_switch = 74.13;
  double l2_switch = 6169.47;
  double l3_switch = 6173.36;
  double ptr_backup = 18.02;
  double ptr_check = 11.07;
  double syscall = 725.36;
  double hooked_syscall = 6533.63;

  void validate() const {
    for (double v : {l1_switch, l2_switch, l3_switch, ptr_backup, ptr_check, syscall, hooked_syscall})
      if (!(v >= 0)) throw Error(ErrorCode::kConfig, "cost model values must be non-negative");
  }
  friend bool operator==(const CostModel&, const CostModel&) = default;
};

enum class SwitchLevel { kL1 = 0, kL2 = 1, kL3 = 2 };

inline std::string_view to_string(SwitchLevel l) {
  switch (l) {
    case SwitchLevel::kL1: return "L1";
    case SwitchLevel::kL2: return "L2";
    case SwitchLevel::kL3: return "L3";
  }
  return "?";
}

inline double cost_of(const CostModel& c, SwitchLevel l) {
  switch (l) {
    case SwitchLevel::kL1: return c.l1_switch;
    case SwitchLevel::kL2: return c.l2_switch;
    case SwitchLevel::kL3: return c.l3_switch;
  }
  return 0;
}

// A missing source (cold start) must open a window, so it counts as L3.
inline SwitchLevel classify_switch(const std::optional<DomainId>& from, const DomainId& to) {
  if (!from || from->pas != to.pas) return SwitchLevel::kL3;
  if (from->pie_idx != to.pie_idx) return SwitchLevel::kL2;
  return SwitchLevel::kL1;
}

struct SwitchRecord {
  unsigned core_id;
  std::optional<DomainId> from;
  DomainId to;
  SwitchLevel level;
  double cycles;
};

class SwitchTrace {
 public:
  explicit SwitchTrace(CostModel costs = {}) : costs_(costs) {}

  const SwitchRecord& append(unsigned core_id, std::optional<DomainId> from, DomainId to) {
    const SwitchLevel level = classify_switch(from, to);
    records_.push_back({core_id, from, to, level, cost_of(costs_, level)});
    return records_.back();
  }

  const std::vector<SwitchRecord>& records() const { return records_; }
  const CostModel& costs() const { return costs_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

 private:
  CostModel costs_;
  std::vector<SwitchRecord> records_;
};

struct SwitchMetrics {
  std::array<std::uint64_t, 3> counts{};
  std::array<double, 3> rates{};
  double avg_cycles = 0;
  std::uint64_t total = 0;

  double l1_rate() const { return rates[0]; }
  double l2_rate() const { return rates[1]; }
  double l3_rate() const { return rates[2]; }
};

// Exact weighted mean: sum over levels of count * level cost, over the total.
inline SwitchMetrics metrics(const SwitchTrace& trace,
                             std::optional<unsigned> core_filter = std::nullopt) {
  SwitchMetrics m;
  for (const auto& r : trace.records()) {
    if (core_filter && r.core_id != *core_filter) continue;
    ++m.counts[static_cast<unsigned>(r.level)];
    ++m.total;
  }
  if (m.total == 0) throw Error(ErrorCode::kEmptyTrace, "no switches recorded");
  double weighted = 0;
  for (unsigned l = 0; l < 3; ++l) {
    m.rates[l] = static_cast<double>(m.counts[l]) / static_cast<double>(m.total);
    weighted += static_cast<double>(m.counts[l]) * cost_of(trace.costs(), static_cast<SwitchLevel>(l));
  }
  m.avg_cycles = weighted / static_cast<double>(m.total);
  return m;
}

enum class AllocPolicy { kRoundRobin, kAffinity };

inline std::string_view to_string(AllocPolicy p) {
  return p == AllocPolicy::kRoundRobin ? "round_robin" : "affinity";
}

// Hands each connection one domain for its whole lifetime.
class DomainAllocator {
 public:
  virtual ~DomainAllocator() = default;

  DomainId assign(std::uint64_t connection, unsigned worker) {
    if (auto it = live_.find(connection); it != live_.end()) return space_.at(it->second);
    const std::uint64_t index = pick(worker);
    live_.emplace(connection, index);
    return space_.at(index);
  }

  // Frees the connection's domain for reuse.
  void release(std::uint64_t connection) {
    auto it = live_.find(connection);
    if (it == live_.end()) return;
    const std::uint64_t index = it->second;
    live_.erase(it);
    recycle(index);
  }

  const DomainSpace& space() const { return space_; }
  std::size_t live() const { return live_.size(); }

 protected:
  explicit DomainAllocator(DomainSpace space, bool reuse_freed)
      : space_(std::move(space)), reuse_freed_(reuse_freed) {}

  virtual std::uint64_t pick(unsigned worker) = 0;
  virtual void recycle(std::uint64_t index) = 0;

  [[noreturn]] void exhausted() const {
    throw Error(ErrorCode::kExhausted,
                "domain universe of " + std::to_string(space_.size()) + " domains is full");
  }

  DomainSpace space_;
  bool reuse_freed_;

 private:
  std::map<std::uint64_t, std::uint64_t> live_;
};

// Globally lowest unused index, regardless of the requesting worker.
class RoundRobinAllocator final : public DomainAllocator {
 public:
  explicit RoundRobinAllocator(DomainSpace space, bool reuse_freed = true)
      : DomainAllocator(std::move(space), reuse_freed) {}

 protected:
  std::uint64_t pick(unsigned) override {
    if (reuse_freed_ && !freed_.empty()) {
      const std::uint64_t index = *freed_.begin();
      freed_.erase(freed_.begin());
      return index;
    }
    if (next_ >= space_.size()) exhausted();
    return next_++;
  }
  void recycle(std::uint64_t index) override {
    if (reuse_freed_) freed_.insert(index);
  }

 private:
  std::uint64_t next_ = 0;
  std::set<std::uint64_t> freed_;
};

// Each worker owns whole PAS blocks and drains its current block before
// opening the next free one. Freed domains go back to their owner, most
// recently freed first.
class AffinityAllocator final : public DomainAllocator {
 public:
  explicit AffinityAllocator(DomainSpace space, bool reuse_freed = true)
      : DomainAllocator(std::move(space), reuse_freed) {}

  std::optional<unsigned> block_owner(unsigned pas) const {
    auto it = owner_.find(pas);
    if (it == owner_.end()) return std::nullopt;
    return it->second;
  }

 protected:
  std::uint64_t pick(unsigned worker) override {
    Worker& w = workers_[worker];
    if (reuse_freed_ && !w.freed.empty()) {
      const std::uint64_t index = w.freed.back();
      w.freed.pop_back();
      return index;
    }
    if (!w.block || w.used == space_.per_pas()) {
      if (next_block_ >= space_.pas_count()) exhausted();
      w.block = next_block_++;
      w.used = 0;
      owner_[*w.block] = worker;
    }
    return std::uint64_t{*w.block} * space_.per_pas() + w.used++;
  }

  void recycle(std::uint64_t index) override {
    if (!reuse_freed_) return;
    const auto pas = static_cast<unsigned>(index / space_.per_pas());
    workers_[owner_.at(pas)].freed.push_back(index);
  }

 private:
  struct Worker {
    std::optional<unsigned> block;
    unsigned used = 0;
    std::vector<std::uint64_t> freed;
  };
  std::map<unsigned, Worker> workers_;
  std::map<unsigned, unsigned> owner_;
  unsigned next_block_ = 0;
};

}  // namespace nanozone
