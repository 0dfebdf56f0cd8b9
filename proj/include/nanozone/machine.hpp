#pragma once

// A whole simulated machine: monitor, cores, one protected process with its
// L3-Zones, per-thread PIM and shadow stack, the trampoline, and a toy-IR
// interpreter. Workloads, oracles and attack scenarios all run on this.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nanozone/core.hpp"
#include "nanozone/cpi.hpp"
#include "nanozone/domain.hpp"
#include "nanozone/monitor.hpp"
#include "nanozone/toy_ir.hpp"
#include "nanozone/trampoline.hpp"

namespace nanozone {

struct MachineConfig {
  unsigned cores = 2;
  std::uint64_t granule_size = kDefaultGranuleSize;
  // 1 GiB / 8192 = 128 KiB windows: 32 granules, one page per domain.
  std::uint64_t window_scale = 8192;
  unsigned zones = 1;
  std::size_t pim_capacity = kDefaultPimCapacity;
  PieSlotRegistry registry;
  CostModel costs;
  AccessMatrix matrix = AccessMatrix::standard();
  bool rng_trap_on = true;
  std::uint64_t private_pages = 16;
};

inline constexpr unsigned kProcessPid = 1;

// Where things live, in granule (page) numbers.
struct MachineLayout {
  GranuleRange kernel;
  GranuleRange page_tables;
  GranuleRange shared;
  GranuleRange priv;
  std::vector<GranuleRange> pim;
  std::vector<GranuleRange> gcs;
  std::uint64_t window_pages = 0;
  std::uint64_t first_zone_page = 0;

  static constexpr std::uint64_t kPrivVpage = 0x100;
  static constexpr std::uint64_t kSharedVpage = 0x3000;
  static constexpr std::uint64_t kPimVpage = 0x10000;
  static constexpr std::uint64_t kPimVstride = 0x1000;
  static constexpr std::uint64_t kGcsVpage = 0x20000;
  static constexpr std::uint64_t kZoneVpage = 0x100000;

  std::uint64_t zone_phys_page(unsigned pas) const { return first_zone_page + pas * window_pages; }
  std::uint64_t zone_vpage(unsigned pas) const { return kZoneVpage + pas * window_pages; }
};

enum class ExecStatus { kCompleted, kFault, kCpiViolation, kCfiViolation, kBreached };

struct ExecResult {
  ExecStatus status = ExecStatus::kCompleted;
  std::string outcome = "ok";
  std::string detail;
  std::size_t pc = 0;
};

class Machine {
 public:
  explicit Machine(MachineConfig cfg = {})
      : cfg_(cfg), monitor_(monitor_config(cfg)), trace_(cfg.costs),
        trampoline_(monitor_, kProcessPid, trace_), space_(cfg.zones, cfg.registry) {
    cfg_.costs.validate();
    if (cfg_.cores == 0) throw Error(ErrorCode::kConfig, "machine needs at least one core");
    if (cfg_.zones == 0) throw Error(ErrorCode::kConfig, "machine needs at least one L3-Zone");
    build_layout();
    boot();
  }
  Machine(const Machine&) = delete;
  Machine& operator=(const Machine&) = delete;

  const MachineConfig& config() const { return cfg_; }
  const MachineLayout& layout() const { return layout_; }
  Monitor& monitor() { return monitor_; }
  const Monitor& monitor() const { return monitor_; }
  CoreState& core(unsigned id) { return cores_.at(id); }
  const CoreState& core(unsigned id) const { return cores_.at(id); }
  unsigned core_count() const { return static_cast<unsigned>(cores_.size()); }
  SwitchTrace& trace() { return trace_; }
  const SwitchTrace& trace() const { return trace_; }
  Trampoline& trampoline() { return trampoline_; }
  const DomainSpace& domains() const { return space_; }
  const AddressSpace& aspace() const { return monitor_.process(kProcessPid).aspace; }
  const GptRegistry& gpts() const { return monitor_.gpts(); }
  PimRegion& pim(unsigned thread) { return pims_.at(thread); }
  ShadowStack& shadow_stack(unsigned thread) { return stacks_.at(thread); }
  std::uint64_t domain_capacity_pages() const { return monitor_.domain_capacity_pages(); }

  ThreadContext thread(unsigned core_id) {
    return {cores_.at(core_id), aspace(), gpts(), cfg_.costs};
  }

  // First virtual page reserved for a domain inside its zone.
  std::uint64_t domain_vpage(const DomainId& d) const {
    const std::uint64_t in_pas = space_.index_of(d) % space_.per_pas();
    return layout_.zone_vpage(d.pas) + in_pas * domain_capacity_pages();
  }
  std::uint64_t domain_vaddr(const DomainId& d, std::uint64_t offset = 0) const {
    return domain_vpage(d) * cfg_.granule_size + offset;
  }

  MapStatus map_domain(const DomainId& d, std::uint64_t pages = 1) {
    return monitor_.zone_mmap(kProcessPid, domain_vpage(d), pages, d);
  }
  MapStatus unmap_domain(const DomainId& d, std::uint64_t pages = 1) {
    return monitor_.zone_munmap(kProcessPid, domain_vpage(d), pages);
  }
  bool domain_mapped(const DomainId& d) const { return aspace().lookup(domain_vpage(d)) != nullptr; }

  AccessResult user_access(unsigned core_id, std::uint64_t vaddr, AccessKind kind) {
    return access(cores_.at(core_id), aspace(), gpts(), vaddr, kind, Mode::kUser);
  }
  AccessResult access_as(unsigned core_id, std::uint64_t vaddr, AccessKind kind, Mode mode) {
    return access(cores_.at(core_id), aspace(), gpts(), vaddr, kind, mode);
  }

  std::uint64_t priv_vaddr(std::uint64_t page = 0) const {
    return (MachineLayout::kPrivVpage + page) * cfg_.granule_size;
  }
  std::uint64_t shared_vaddr() const { return MachineLayout::kSharedVpage * cfg_.granule_size; }

  // Runs a toy program on one core with that core's PIM and shadow stack.
  // Function addresses are assigned deterministically in order of first use.
  ExecResult run(const ToyProgram& prog, unsigned core_id) { return Interpreter(*this, core_id).run(prog); }

  std::uint64_t fn_addr(const std::string& fn) {
    auto [it, inserted] = fn_addrs_.try_emplace(fn, kCodeBase + fn_addrs_.size() * 0x100);
    return it->second;
  }

 private:
  static constexpr std::uint64_t kCodeBase = 0x401000;

  static MonitorConfig monitor_config(const MachineConfig& cfg) {
    MonitorConfig m;
    m.granule_size = cfg.granule_size;
    m.window_scale = cfg.window_scale;
    m.window_size = WindowLimits::scaled(cfg.window_scale).min_size;
    m.registry = cfg.registry;
    m.costs = cfg.costs;
    m.matrix = cfg.matrix;
    return m;
  }

  void build_layout() {
    const std::uint64_t g = cfg_.granule_size;
    const std::uint64_t window = monitor_.config().window_size;
    if (window < g || window % g != 0)
      throw Error(ErrorCode::kConfig, "window must be a whole number of granules");
    layout_.window_pages = window / g;
    if (layout_.window_pages < space_.per_pas())
      throw Error(ErrorCode::kConfig, "window too small to give every domain a page");
    std::uint64_t next = 0;
    auto take = [&](std::uint64_t n) {
      GranuleRange r{next, next + n};
      next += n;
      return r;
    };
    layout_.kernel = take(8);
    layout_.page_tables = take(4);
    layout_.shared = take(4);
    layout_.priv = take(cfg_.private_pages);
    const std::uint64_t pim_pages = (cfg_.pim_capacity * kPimEntryBytes + g - 1) / g;
    for (unsigned c = 0; c < cfg_.cores; ++c) layout_.pim.push_back(take(pim_pages));
    for (unsigned c = 0; c < cfg_.cores; ++c) layout_.gcs.push_back(take(1));
    layout_.first_zone_page = (next / layout_.window_pages + 1) * layout_.window_pages;
  }

  void boot() {
    const unsigned pid = kProcessPid;
    monitor_.claim_for_world(layout_.page_tables, SecurityState::kRootWorld);
    monitor_.add_shared_buffer(layout_.shared);
    monitor_.register_process(pid);
    monitor_.delegate_region(pid, layout_.priv);
    for (std::uint64_t i = 0; i < layout_.priv.size(); ++i)
      monitor_.setup_mapping(pid, {MachineLayout::kPrivVpage + i, layout_.priv.start + i, 4, 0, false, true});
    for (std::uint64_t i = 0; i < layout_.shared.size(); ++i)
      monitor_.setup_mapping(pid, {MachineLayout::kSharedVpage + i, layout_.shared.start + i, 4, 0, false, true});
    for (unsigned c = 0; c < cfg_.cores; ++c) {
      monitor_.delegate_region(pid, layout_.pim[c]);
      monitor_.delegate_region(pid, layout_.gcs[c]);
      const std::uint64_t pim_v = MachineLayout::kPimVpage + c * MachineLayout::kPimVstride;
      for (std::uint64_t i = 0; i < layout_.pim[c].size(); ++i)
        monitor_.setup_mapping(pid, {pim_v + i, layout_.pim[c].start + i, kGcsPieSlot, 0, true, true});
      monitor_.setup_mapping(pid, {MachineLayout::kGcsVpage + c, layout_.gcs[c].start, kGcsPieSlot, 0, true, true});
      pims_.emplace_back(pim_v * cfg_.granule_size, cfg_.pim_capacity);
      stacks_.emplace_back();
    }
    const std::uint64_t g = cfg_.granule_size;
    for (unsigned p = 0; p < cfg_.zones; ++p)
      monitor_.setup_zone(pid, p, layout_.zone_phys_page(p) * g, layout_.zone_vpage(p) * g);
    for (unsigned c = 0; c < cfg_.cores; ++c) {
      cores_.emplace_back(c, kOsGpt);
      monitor_.bind_core(cores_.back(), pid, pims_[c].base(),
                         (MachineLayout::kGcsVpage + c + 1) * g);
      if (!cfg_.rng_trap_on) {
        Features f = Features::all_on();
        f.rng_trap_on = false;
        cores_.back().set_features(Mode::kMonitor, f);
      }
    }
  }

  // Executes toy-IR instructions against the machine. Program variables are
  // abstract cells; only explicit addresses go through the access pipeline.
  class Interpreter {
   public:
    Interpreter(Machine& m, unsigned core_id) : m_(m), core_id_(core_id), t_(m.thread(core_id)) {}

    ExecResult run(const ToyProgram& prog) {
      std::vector<GlobalFnPtr> segment;
      for (const auto& g : prog.globals) segment.push_back({g.fn, m_.fn_addr(g.fn), g.sig});
      load_globals(m_.pims_.at(core_id_), t_, segment);
      for (std::size_t i = 0; i < segment.size(); ++i) {
        cells_[segment[i].name] = segment[i].value;
        legit_[segment[i].name] = untag_pointer(segment[i].value);
        record_sig(prog.globals[i].fn, prog.globals[i].sig);
      }
      for (std::size_t pc = 0; pc < prog.code.size(); ++pc) {
        ExecResult r = step(prog.code[pc]);
        if (r.status != ExecStatus::kCompleted) {
          r.pc = pc;
          return r;
        }
      }
      return {};
    }

   private:
    static ExecResult fault(const AccessResult& a) {
      return {ExecStatus::kFault, std::string(to_string(a.fault->kind)), "", 0};
    }

    void record_sig(const std::string& fn, const std::string& sig) {
      fn_sigs_.try_emplace(m_.fn_addr(fn), canonical_signature(sig));
    }

    std::uint64_t value_of(const std::string& v) {
      if (v.empty()) throw Error(ErrorCode::kMalformedProgram, "empty operand");
      if (v[0] == '@') return cells_[v.substr(1)];
      if (v[0] == '&') return m_.fn_addr(v.substr(1));
      return parse_number(v);
    }

    static std::uint64_t parse_number(const std::string& v) {
      try {
        std::size_t used = 0;
        const std::uint64_t n = std::stoull(v, &used, 0);
        if (used == v.size()) return n;
      } catch (const std::exception&) {
      }
      throw Error(ErrorCode::kMalformedProgram, "bad number '" + v + "'");
    }

    // Addresses: a number, or pim/gcs/priv/shared/page_tables with an
    // optional +offset.
    std::uint64_t address_of(const std::string& expr) {
      const auto plus = expr.find('+');
      const std::string base = expr.substr(0, plus);
      const std::uint64_t off = plus == std::string::npos ? 0 : parse_number(expr.substr(plus + 1));
      const std::uint64_t g = m_.cfg_.granule_size;
      if (base == "pim") return m_.pims_.at(core_id_).base() + off;
      if (base == "gcs") return (MachineLayout::kGcsVpage + core_id_) * g + off;
      if (base == "priv") return m_.priv_vaddr() + off;
      if (base == "shared") return m_.shared_vaddr() + off;
      return parse_number(base) + off;
    }

    void store_fn(const std::string& dst, const std::string& fn, const std::string& sig) {
      record_sig(fn, sig);
      std::uint64_t v = m_.fn_addr(fn);
      legit_[dst] = v;
      if (auto it = pending_backup_.find(dst); it != pending_backup_.end()) {
        v = m_.pims_.at(core_id_).backup(t_, v, it->second);
        pending_backup_.erase(it);
      }
      cells_[dst] = v;
    }

    ExecResult step(const Instr& in) {
      CoreState& core = m_.cores_.at(core_id_);
      const auto& a = in.args;
      switch (in.op) {
        case Op::kPimBackup: pending_backup_[a[0]] = a[1]; break;
        case Op::kStoreFnPtr:
        case Op::kBitcastStore: store_fn(a[0], a[1], a[2]); break;
        case Op::kMemcpyInit:
          for (std::size_t i = 1; i < a.size(); ++i) {
            const std::string dst = field_name(a[0], i - 1);
            if (a[i] == "_") {
              cells_[dst] = 0;
              continue;
            }
            const auto colon = a[i].find(':');
            store_fn(dst, a[i].substr(0, colon), a[i].substr(colon + 1));
          }
          break;
        case Op::kPimCheck: {
          const PimCheckResult r = m_.pims_.at(core_id_).check(t_, cells_[a[0]], a[1]);
          if (!r.ok())
            return {ExecStatus::kCpiViolation, "CpiViolation(" + std::string(to_string(*r.violation)) + ")",
                    "icall through " + a[0], 0};
          checked_[a[0]] = r.fn_addr;
          break;
        }
        case Op::kIcall: {
          std::uint64_t target = untag_pointer(cells_[a[0]]);
          if (auto it = checked_.find(a[0]); it != checked_.end()) {
            target = it->second;
            checked_.erase(it);
          }
          const auto sig_it = fn_sigs_.find(target);
          const bool legit = legit_.count(a[0]) && legit_[a[0]] == target;
          if (!legit || sig_it == fn_sigs_.end() || sig_it->second != canonical_signature(a[1]))
            return {ExecStatus::kBreached, "breached", "indirect call through " + a[0] + " reached " +
                                                            hex(target), 0};
          break;
        }
        case Op::kCall: {
          const std::uint64_t ret = kCodeBase + 0x80000 + 4 * (++calls_);
          frames_.push_back(ret);
          m_.stacks_.at(core_id_).push(ret, core.features().gcs_on);
          break;
        }
        case Op::kRet: {
          if (frames_.empty()) throw Error(ErrorCode::kStackUnderflow, "ret without a call");
          const std::uint64_t lr = frames_.back();
          const std::uint64_t expected = expected_ret_.back();
          frames_.pop_back();
          expected_ret_.pop_back();
          if (m_.stacks_.at(core_id_).ret(lr, core.features().gcs_on) == CfiStatus::kViolation)
            return {ExecStatus::kCfiViolation, "CfiViolation", "return to " + hex(lr), 0};
          if (lr != expected) return {ExecStatus::kBreached, "breached", "returned to " + hex(lr), 0};
          break;
        }
        case Op::kGcsStore: {
          const std::uint64_t addr = address_of(a[0]);
          const AccessResult r = m_.user_access(core_id_, addr, AccessKind::kGcsStore);
          if (!r.ok()) return fault(r);
          m_.pims_.at(core_id_).raw_store(addr, value_of(a[1]));
          break;
        }
        case Op::kPorWrite:
          user_write_por(core, static_cast<unsigned>(parse_number(a[0])),
                         PermEncoding{static_cast<unsigned>(parse_number(a[1]))});
          break;
        case Op::kPlain: return plain(in);
      }
      // Keep the expected-return mirror in step with the frames.
      if (in.op == Op::kCall) expected_ret_.push_back(frames_.back());
      return {};
    }

    ExecResult plain(const Instr& in) {
      const auto& a = in.args;
      const std::string& op = a[0];
      auto want = [&](std::size_t n) {
        if (a.size() != n + 1) throw Error(ErrorCode::kMalformedProgram, "plain " + op + " takes " +
                                                                           std::to_string(n) + " operands");
      };
      if (op == "nop") return {};
      if (op == "ldr" || op == "str") {
        want(op == "ldr" ? 1 : 2);
        const std::uint64_t addr = address_of(a[1]);
        const AccessResult r =
            m_.user_access(core_id_, addr, op == "ldr" ? AccessKind::kRead : AccessKind::kWrite);
        if (!r.ok()) return fault(r);
        return {};
      }
      if (op == "clobber") {
        want(2);
        cells_[a[1]] = value_of(a[2]);
        return {};
      }
      if (op == "clobber_ret") {
        want(1);
        if (frames_.empty()) throw Error(ErrorCode::kMalformedProgram, "clobber_ret with no frame");
        frames_.back() = value_of(a[1]);
        return {};
      }
      throw Error(ErrorCode::kMalformedProgram, "unknown plain op '" + op + "'");
    }

    static std::string hex(std::uint64_t v) {
      std::ostringstream s;
      s << "0x" << std::hex << v;
      return s.str();
    }

    Machine& m_;
    unsigned core_id_;
    ThreadContext t_;
    std::map<std::string, std::uint64_t> cells_;
    std::map<std::string, std::uint64_t> legit_;
    std::map<std::string, std::string> pending_backup_;
    std::map<std::string, std::uint64_t> checked_;
    std::map<std::uint64_t, std::string> fn_sigs_;
    std::vector<std::uint64_t> frames_;
    std::vector<std::uint64_t> expected_ret_;
    std::uint64_t calls_ = 0;
  };

  MachineConfig cfg_;
  Monitor monitor_;
  SwitchTrace trace_;
  Trampoline trampoline_;
  DomainSpace space_;
  MachineLayout layout_;
  std::vector<CoreState> cores_;
  std::vector<PimRegion> pims_;
  std::vector<ShadowStack> stacks_;
  std::map<std::string, std::uint64_t> fn_addrs_;
};

}  // namespace nanozone
