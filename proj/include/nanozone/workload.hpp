#pragma once

// Server-shaped workloads: connections dispatched round-robin to workers,
// each connection issuing bursts of requests, every request running inside
// the connection's own domain. simulate() drives a full Machine.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nanozone/domain.hpp"
#include "nanozone/error.hpp"
#include "nanozone/machine.hpp"

namespace nanozone {

enum class Interleave { kRoundRobinArrival, kRandom };

inline std::string_view to_string(Interleave i) {
  return i == Interleave::kRoundRobinArrival ? "round_robin_arrival" : "random";
}

struct WorkloadConfig {
  unsigned workers = 2;
  std::uint64_t connections = 1000;
  unsigned requests_per_connection = 30;
  unsigned domains_per_core = 28;
  // Requests a worker serves from one connection before moving on. The
  // random interleave draws bursts uniformly from [1, 2 * burst_length - 1].
  unsigned burst_length = 5;
  Interleave interleave = Interleave::kRoundRobinArrival;
  std::optional<std::uint64_t> seed;
  AllocPolicy policy = AllocPolicy::kAffinity;
  CostModel costs;
  bool reuse_freed = true;
  std::uint64_t window_scale = 8192;

  void validate() const {
    if (workers == 0 || connections == 0 || requests_per_connection == 0 || domains_per_core == 0 ||
        burst_length == 0)
      throw Error(ErrorCode::kConfig, "workload counts must all be at least 1");
    if (interleave == Interleave::kRandom && !seed)
      throw Error(ErrorCode::kConfig, "random interleave requires a seed");
    costs.validate();
  }
};

enum class EventKind { kOpen, kRequest, kClose };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::kOpen: return "open";
    case EventKind::kRequest: return "request";
    case EventKind::kClose: return "close";
  }
  return "?";
}

struct WorkloadEvent {
  EventKind kind;
  std::uint64_t connection;  // 1-based
  unsigned worker;
  friend bool operator==(const WorkloadEvent&, const WorkloadEvent&) = default;
};

inline unsigned worker_of(std::uint64_t connection, unsigned workers) {
  return static_cast<unsigned>((connection - 1) % workers);
}

// Each worker keeps up to domains_per_core connections open in a ring. A
// finished connection is closed and its ring slot handed to the worker's next
// pending connection. Workers take turns, one burst each.
inline std::vector<WorkloadEvent> generate(const WorkloadConfig& cfg) {
  cfg.validate();
  struct Slot {
    std::uint64_t conn;
    unsigned left;
  };
  struct Worker {
    std::vector<std::uint64_t> pending;
    std::size_t next_pending = 0;
    std::vector<Slot> ring;
    std::size_t cursor = 0;
  };
  std::vector<Worker> workers(cfg.workers);
  for (std::uint64_t c = 1; c <= cfg.connections; ++c) workers[worker_of(c, cfg.workers)].pending.push_back(c);

  std::vector<WorkloadEvent> events;
  events.reserve(cfg.connections * (cfg.requests_per_connection + 2));
  std::mt19937_64 rng(cfg.seed.value_or(0));

  auto open_next = [&](unsigned w) -> std::optional<Slot> {
    Worker& wk = workers[w];
    if (wk.next_pending >= wk.pending.size()) return std::nullopt;
    const std::uint64_t c = wk.pending[wk.next_pending++];
    events.push_back({EventKind::kOpen, c, w});
    return Slot{c, cfg.requests_per_connection};
  };

  // Initial connections open in arrival order across workers.
  for (std::uint64_t c = 1; c <= cfg.connections; ++c) {
    const unsigned w = worker_of(c, cfg.workers);
    if (workers[w].ring.size() < cfg.domains_per_core) workers[w].ring.push_back(*open_next(w));
  }

  bool busy = true;
  while (busy) {
    busy = false;
    for (unsigned w = 0; w < cfg.workers; ++w) {
      Worker& wk = workers[w];
      if (wk.ring.empty()) continue;
      busy = true;
      std::size_t idx;
      unsigned burst;
      if (cfg.interleave == Interleave::kRoundRobinArrival) {
        idx = wk.cursor % wk.ring.size();
        burst = cfg.burst_length;
      } else {
        idx = static_cast<std::size_t>(rng() % wk.ring.size());
        burst = 1 + static_cast<unsigned>(rng() % (2 * cfg.burst_length - 1));
      }
      Slot& s = wk.ring[idx];
      const unsigned n = std::min(burst, s.left);
      for (unsigned i = 0; i < n; ++i) events.push_back({EventKind::kRequest, s.conn, w});
      s.left -= n;
      bool removed = false;
      if (s.left == 0) {
        events.push_back({EventKind::kClose, s.conn, w});
        if (auto next = open_next(w)) {
          s = *next;
        } else {
          wk.ring.erase(wk.ring.begin() + static_cast<std::ptrdiff_t>(idx));
          removed = true;
        }
      }
      if (cfg.interleave == Interleave::kRoundRobinArrival && !removed) ++wk.cursor;
      if (!wk.ring.empty()) wk.cursor %= wk.ring.size();
    }
  }
  return events;
}

// PAS blocks needed so that every open connection can hold its own domain.
inline unsigned universe_pas(const WorkloadConfig& cfg, unsigned per_pas) {
  const auto ceil_div = [](std::uint64_t a, std::uint64_t b) { return static_cast<unsigned>((a + b - 1) / b); };
  if (cfg.policy == AllocPolicy::kAffinity) return cfg.workers * ceil_div(cfg.domains_per_core, per_pas);
  return ceil_div(std::uint64_t{cfg.workers} * cfg.domains_per_core, per_pas);
}

inline std::unique_ptr<DomainAllocator> make_allocator(AllocPolicy policy, DomainSpace space,
                                                       bool reuse_freed) {
  if (policy == AllocPolicy::kAffinity)
    return std::make_unique<AffinityAllocator>(std::move(space), reuse_freed);
  return std::make_unique<RoundRobinAllocator>(std::move(space), reuse_freed);
}

inline constexpr std::size_t kHeatmapLength = 1000;

struct RunReport {
  WorkloadConfig config;
  unsigned pas_count = 0;
  std::uint64_t requests = 0;
  SwitchMetrics overall;
  std::vector<SwitchMetrics> per_core;
  double trace_mean_cycles = 0;
  double total_cycles = 0;
  std::uint64_t revocations = 0;
  std::uint64_t tlb_flushes = 0;
  std::map<std::string, std::uint64_t> monitor_events;
  std::vector<SwitchLevel> heatmap;
};

inline RunReport simulate(const WorkloadConfig& cfg) {
  cfg.validate();
  const PieSlotRegistry registry;
  const unsigned per_pas = DomainSpace(1, registry).per_pas();
  const unsigned pas = universe_pas(cfg, per_pas);

  MachineConfig mc;
  mc.cores = cfg.workers;
  mc.zones = pas;
  mc.costs = cfg.costs;
  mc.window_scale = cfg.window_scale;
  mc.registry = registry;
  Machine m(mc);
  auto alloc = make_allocator(cfg.policy, DomainSpace(pas, registry), cfg.reuse_freed);

  std::vector<bool> primed(cfg.workers, false);
  RunReport rep;
  rep.config = cfg;
  rep.pas_count = pas;
  for (const WorkloadEvent& ev : generate(cfg)) {
    switch (ev.kind) {
      case EventKind::kOpen: {
        const DomainId d = alloc->assign(ev.connection, ev.worker);
        if (!m.domain_mapped(d) && m.map_domain(d) != MapStatus::kOk)
          throw Error(ErrorCode::kExhausted, "could not map domain " + d.str());
        break;
      }
      case EventKind::kRequest: {
        const DomainId d = alloc->assign(ev.connection, ev.worker);
        CoreState& core = m.core(ev.worker);
        const SwitchOutcome out = primed[ev.worker] ? m.trampoline().switch_domain(core, d)
                                                    : m.trampoline().prime(core, d);
        if (!out.ok())
          throw Error(ErrorCode::kInvalidArgument, "switch into " + d.str() + " rejected: " +
                                                       std::string(to_string(*out.rejected)));
        primed[ev.worker] = true;
        const AccessResult r = m.user_access(ev.worker, m.domain_vaddr(d), AccessKind::kWrite);
        if (!r.ok()) throw Error(ErrorCode::kInvalidArgument, "request in " + d.str() + " faulted");
        m.trampoline().revoke(core);
        ++rep.requests;
        break;
      }
      case EventKind::kClose: {
        const DomainId d = alloc->assign(ev.connection, ev.worker);
        alloc->release(ev.connection);
        m.unmap_domain(d);
        break;
      }
    }
  }

  const SwitchTrace& trace = m.trace();
  rep.overall = metrics(trace);
  for (unsigned c = 0; c < cfg.workers; ++c) rep.per_core.push_back(metrics(trace, c));
  double sum = 0;
  for (const auto& r : trace.records()) sum += r.cycles;
  rep.trace_mean_cycles = sum / static_cast<double>(trace.size());
  for (unsigned c = 0; c < cfg.workers; ++c) rep.total_cycles += m.core(c).cycles;
  rep.revocations = m.trampoline().revocations();
  rep.tlb_flushes = m.monitor().tlb_flushes();
  for (const auto& e : m.monitor().events()) ++rep.monitor_events[e.op];
  for (std::size_t i = 0; i < trace.size() && i < kHeatmapLength; ++i)
    rep.heatmap.push_back(trace.records()[i].level);
  return rep;
}

// Comparison scheme that clones the top-level GPT per L3-Zone instead of
// using bypass windows.
struct BaselineMemory {
  std::uint64_t clone_count = 0;
  std::uint64_t extra_gpt_bytes = 0;
  std::uint64_t nanozone_clone_count = 0;
  std::uint64_t nanozone_extra_bytes = 0;
};

inline BaselineMemory baseline_per_pas_gpt(std::uint64_t zones, std::uint64_t l0_table_bytes = 4096) {
  return {zones, zones * l0_table_bytes, 0, 0};
}

}  // namespace nanozone
