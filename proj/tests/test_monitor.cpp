#include <gtest/gtest.h>

#include <random>

#include "nanozone/machine.hpp"
#include "test_util.hpp"

using namespace nanozone;

namespace {

MonitorConfig small_monitor() {
  MonitorConfig c;
  c.window_scale = 8192;
  c.window_size = WindowLimits::scaled(8192).min_size;
  return c;
}

}  // namespace

TEST(Monitor, DelegationClosesOsGpt) {
  Monitor m;
  m.register_process(1);
  EXPECT_TRUE(m.delegate_region(1, {10, 20}).ok);
  EXPECT_TRUE(m.os_gpt().uniform({10, 20}, PasLabel::kNoAccess));
  EXPECT_EQ(m.os_gpt().label_of(20), PasLabel::kNormal);
  EXPECT_FALSE(m.verify_invariants().has_value());
}

TEST(Monitor, OverlappingDelegationRejected) {
  Monitor m;
  m.register_process(1);
  m.register_process(2);
  ASSERT_TRUE(m.delegate_region(1, {10, 20}).ok);
  const DelegateResult r = m.delegate_region(2, {15, 25});
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.conflict, (GranuleRange{10, 20}));
  EXPECT_EQ(m.delegated_ranges().size(), 1u);
  EXPECT_EQ(m.events().back().outcome, "OverlapRejected");
}

TEST(Monitor, SharedBuffersAndClaimsExcludeDelegation) {
  Monitor m;
  m.register_process(1);
  ASSERT_TRUE(m.add_shared_buffer({0, 4}).ok);
  EXPECT_FALSE(m.delegate_region(1, {2, 6}).ok);
  ASSERT_TRUE(m.claim_for_world({100, 110}, SecurityState::kRealmWorld).ok);
  EXPECT_FALSE(m.delegate_region(1, {105, 106}).ok);
  EXPECT_EQ(m.gpts().at(GptId{1}).label_of(105), PasLabel::kRealm);
  EXPECT_EQ(m.gpts().at(GptId{1}).label_of(1), PasLabel::kFullAccess);
  EXPECT_ERROR_CODE(m.claim_for_world({0, 1}, SecurityState::kNormalWorld), ErrorCode::kInvalidArgument);
}

TEST(Monitor, ClaimsReachLaterProcesses) {
  Monitor m;
  m.claim_for_world({50, 60}, SecurityState::kSecureWorld);
  m.register_process(3);
  EXPECT_TRUE(m.gpts().at(GptId{3}).uniform({50, 60}, PasLabel::kSecure));
}

TEST(Monitor, ZoneIsClosedInProcGptAndOs) {
  Monitor m(small_monitor());
  m.register_process(1);
  const std::uint64_t wsz = m.config().window_size;
  ASSERT_TRUE(m.setup_zone(1, 0, 4 * wsz, 0x10000000).ok);
  const GranuleRange z{4 * wsz / 4096, 5 * wsz / 4096};
  EXPECT_TRUE(m.gpts().at(GptId{1}).uniform(z, PasLabel::kNoAccess));
  EXPECT_TRUE(m.os_gpt().uniform(z, PasLabel::kNoAccess));
  EXPECT_FALSE(m.verify_invariants());
  EXPECT_ERROR_CODE(m.setup_zone(1, 1, wsz / 2, 0), ErrorCode::kInvalidWindow);
}

TEST(Monitor, DualGptInvariantsUnderRandomOps) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 30; ++trial) {
    Monitor m;
    for (unsigned pid = 1; pid <= 3; ++pid) m.register_process(pid);
    for (int op = 0; op < 40; ++op) {
      const std::uint64_t a = rng() % 2000, b = a + 1 + rng() % 50;
      switch (rng() % 3) {
        case 0: m.delegate_region(1 + rng() % 3, {a, b}); break;
        case 1: m.add_shared_buffer({a, b}); break;
        default: m.claim_for_world({a, b}, SecurityState::kRealmWorld); break;
      }
      ASSERT_FALSE(m.verify_invariants()) << *m.verify_invariants();
    }
    // No granule is reachable from both the OS GPT and a proc GPT as private memory.
    for (const auto& r : m.delegated_ranges())
      for (std::uint64_t g = r.start; g < r.end; ++g) {
        EXPECT_FALSE(m.os_gpt().label_of(g) == PasLabel::kNormal);
        EXPECT_FALSE(m.os_gpt().label_of(g) == PasLabel::kFullAccess);
      }
  }
}

TEST(Monitor, ZoneMmapChecks) {
  Machine mc;
  Monitor& m = mc.monitor();
  const DomainId d{0, 3, 1};
  const std::uint64_t vp = mc.domain_vpage(d);
  EXPECT_EQ(m.zone_mmap(kProcessPid, vp, 1, d, true), MapStatus::kExecRejected);
  EXPECT_EQ(m.zone_mmap(kProcessPid, 0x100, 1, d), MapStatus::kOutOfZone);
  EXPECT_EQ(m.zone_mmap(kProcessPid, vp, 2, d), MapStatus::kCapacityExceeded);
  EXPECT_EQ(m.zone_mmap(kProcessPid, vp, 1, d), MapStatus::kOk);
  EXPECT_EQ(m.zone_mmap(kProcessPid, vp, 1, DomainId{0, 3, 2}), MapStatus::kOverlapRejected);
  EXPECT_EQ(m.zone_mmap(kProcessPid, vp, 1, DomainId{1, 3, 2}), MapStatus::kOutOfZone);
  EXPECT_ERROR_CODE(m.zone_mmap(kProcessPid, vp, 1, DomainId{0, 4, 2}), ErrorCode::kInvalidArgument);
  const std::uint64_t before = m.scrubbed_pages();
  EXPECT_EQ(mc.unmap_domain(d), MapStatus::kOk);
  EXPECT_EQ(m.scrubbed_pages(), before + 1);
  EXPECT_EQ(mc.map_domain(d), MapStatus::kOk);
  EXPECT_EQ(m.zone_munmap(kProcessPid, 0x100, 1), MapStatus::kOutOfZone);
}

TEST(Monitor, DomainCapacityFollowsWindow) {
  MonitorConfig c;
  EXPECT_EQ(c.window_size / 4096, 262144u);
  Monitor m(c);
  EXPECT_EQ(m.domain_capacity_pages(), 262144u / 28);
  Machine mc;
  EXPECT_EQ(mc.domain_capacity_pages(), 1u);
}

TEST(Monitor, TrapSanitizesAndResumeRestores) {
  Machine mc;
  CoreState& core = mc.core(0);
  ASSERT_TRUE(mc.map_domain({0, 6, 3}) == MapStatus::kOk);
  ASSERT_TRUE(mc.trampoline().switch_domain(core, {0, 6, 3}).ok());
  const SavedContext before = SavedContext::capture(core, kProcessPid);
  const double cycles = core.cycles;
  const SavedContext ctx = mc.monitor().intercept_trap(core, TrapCause::kSyscall);
  EXPECT_EQ(ctx, before);
  EXPECT_EQ(core.gpt_base, kOsGpt);
  EXPECT_EQ(core.pire.raw(), 0u);
  EXPECT_EQ(core.por.raw() & ~0xFull, 0u);
  EXPECT_TRUE(core.windows.empty());
  EXPECT_NEAR(core.cycles - cycles, 6533.63 - 725.36, 1e-9);
  mc.monitor().resume_process(core, ctx);
  EXPECT_EQ(SavedContext::capture(core, kProcessPid), before);
  EXPECT_EQ(core.gpt_base, mc.monitor().process(kProcessPid).proc_gpt);
}

TEST(Monitor, KernelTamperingDiscardedOnResume) {
  std::mt19937_64 rng(59);
  Machine mc;
  CoreState& core = mc.core(0);
  for (std::uint64_t i = 0; i < mc.domains().size(); ++i) mc.map_domain(mc.domains().at(i));
  for (int i = 0; i < 1000; ++i) {
    const DomainId d = mc.domains().at(rng() % mc.domains().size());
    ASSERT_TRUE(mc.trampoline().switch_domain(core, d).ok());
    const SavedContext before = SavedContext::capture(core, kProcessPid);
    const SavedContext ctx = mc.monitor().intercept_trap(core, TrapCause::kIrq);
    // The kernel scribbles over everything it can reach.
    for (unsigned s = 0; s < kPieSlots; ++s) core.pire.set(s, PermEncoding{static_cast<unsigned>(rng() % 16)});
    for (unsigned s = 1; s < kPorSlots; ++s) core.por.set(s, PermEncoding{static_cast<unsigned>(rng() % 16)});
    core.gcspr = rng();
    core.write_tpidrro(Mode::kKernel, rng());
    core.set_features(Mode::kKernel, Features{rng() % 2 == 0, rng() % 2 == 0, rng() % 2 == 0, true});
    mc.monitor().resume_process(core, ctx);
    ASSERT_EQ(SavedContext::capture(core, kProcessPid), before) << "round " << i;
    ASSERT_EQ(core.features(), Features::all_on());
  }
}

TEST(Monitor, ResumeWithForgedContextFails) {
  Machine mc;
  CoreState& core = mc.core(0);
  SavedContext ctx = mc.monitor().intercept_trap(core, TrapCause::kSyscall);
  SavedContext forged = ctx;
  forged.pire.set(3, PermEncoding{kPermRWX});
  EXPECT_ERROR_CODE(mc.monitor().resume_process(core, forged), ErrorCode::kContextMismatch);
  EXPECT_ERROR_CODE(mc.monitor().resume_process(mc.core(1), ctx), ErrorCode::kContextMismatch);
  mc.monitor().resume_process(core, ctx);
  EXPECT_ERROR_CODE(mc.monitor().resume_process(core, ctx), ErrorCode::kContextMismatch);
}

TEST(Monitor, RngSwitchRejections) {
  MachineConfig cfg;
  cfg.zones = 2;
  Machine mc(cfg);
  Monitor& m = mc.monitor();
  CoreState& core = mc.core(0);
  const RngTrap good = read_rng(core, Mode::kUser);
  EXPECT_EQ(*m.rng_trap_switch(core, good, kProcessPid, {0, 4, 1}).rejected, SwitchRejectReason::kInvalidDomain);
  EXPECT_EQ(*m.rng_trap_switch(core, good, kProcessPid, {0, 3, 0}).rejected, SwitchRejectReason::kInvalidDomain);
  EXPECT_EQ(*m.rng_trap_switch(core, good, kProcessPid, {5, 3, 1}).rejected, SwitchRejectReason::kIllegalWindow);
  EXPECT_EQ(*m.rng_trap_switch(core, {0, kOsGpt, Mode::kUser}, kProcessPid, {0, 3, 1}).rejected,
            SwitchRejectReason::kWrongGptBase);
  EXPECT_EQ(*m.rng_trap_switch(core, {0, good.gpt_base, Mode::kKernel}, kProcessPid, {0, 3, 1}).rejected,
            SwitchRejectReason::kWrongGptBase);
  const RngSwitchResult ok = m.rng_trap_switch(core, good, kProcessPid, {1, 6, 2});
  ASSERT_TRUE(ok.ok());
  EXPECT_TRUE(ok.window_changed);
  EXPECT_EQ(core.pire.get(6).value(), kPermRWX);
  for (unsigned s : {3u, 7u, 9u}) EXPECT_EQ(core.pire.get(s).value(), 0);
  ASSERT_EQ(core.windows.size(), 1u);
  EXPECT_EQ(core.windows[0].base(), mc.layout().zone_phys_page(1) * 4096);
  // While the kernel runs the core is on the OS GPT; the switch is refused.
  const SavedContext ctx = m.intercept_trap(core, TrapCause::kSyscall);
  EXPECT_EQ(*m.rng_trap_switch(core, read_rng(core, Mode::kKernel), kProcessPid, {0, 3, 1}).rejected,
            SwitchRejectReason::kWrongGptBase);
  m.resume_process(core, ctx);
}

TEST(Monitor, PteRuleA) {
  Machine mc;
  Monitor& m = mc.monitor();
  const PteVerdict v = m.validate_pte_update(kProcessPid, std::nullopt, {0x500, 900, 2, 0, false, true});
  EXPECT_FALSE(v.ok);
  EXPECT_EQ(v.rule, 'a');
  EXPECT_EQ(m.validate_pte_update(kProcessPid, std::nullopt, {0x500, 900, 5, 0, false, true}).rule, 'a');
  EXPECT_TRUE(m.validate_pte_update(kProcessPid, std::nullopt, {0x500, 900, 4, 0, false, true}).ok);
}

TEST(Monitor, PteRuleB) {
  Machine mc;
  Monitor& m = mc.monitor();
  const PageTableEntry secure = *mc.aspace().lookup(MachineLayout::kPrivVpage);
  PageTableEntry next = secure;
  next.pie_idx = 1;
  EXPECT_EQ(m.validate_pte_update(kProcessPid, secure, next).rule, 'b');
  EXPECT_EQ(m.validate_pte_update(kProcessPid, std::nullopt, {0x600, 901, 3, 0, false, true}).rule, 'b');
  EXPECT_EQ(m.validate_pte_update(kProcessPid, std::nullopt, {0x600, 901, 4, 2, false, true}).rule, 'b');
  EXPECT_EQ(m.validate_pte_update(kProcessPid, std::nullopt, {0x600, 901, 11, 0, true, true}).rule, 'b');
  EXPECT_EQ(m.validate_pte_update(kProcessPid, std::nullopt,
                                  {0x600, mc.layout().priv.start, 4, 0, false, true}).rule, 'b');
  EXPECT_EQ(mc.aspace().lookup(MachineLayout::kPrivVpage)->pie_idx, 4u);
}

TEST(Monitor, PteRuleC) {
  Machine mc;
  Monitor& m = mc.monitor();
  ASSERT_TRUE(m.validate_pte_update(kProcessPid, std::nullopt, {0x700, 950, 4, 0, false, true}).ok);
  EXPECT_EQ(m.validate_pte_update(kProcessPid, std::nullopt, {0x700, 951, 4, 0, false, true}).rule, 'c');
  EXPECT_EQ(m.validate_pte_update(kProcessPid, std::nullopt, {0x701, 950, 4, 0, false, true}).rule, 'c');
  const PageTableEntry stale{0x700, 999, 4, 0, false, true};
  EXPECT_EQ(m.validate_pte_update(kProcessPid, stale, {0x700, 952, 4, 0, false, true}).rule, 'c');
  // A legitimate in-place update of a normal page.
  EXPECT_TRUE(m.validate_pte_update(kProcessPid, PageTableEntry{0x700, 950, 4, 0, false, true},
                                    {0x700, 953, 1, 0, false, true}).ok);
}

TEST(Monitor, AttestImage) {
  Monitor m;
  EXPECT_TRUE(m.attest_image("nanozone-demo-image",
                             "eff784ae178cf0cb650c7b35f975a7b1ce652e88232a5c191c28c7126c2828eb"));
  EXPECT_FALSE(m.attest_image("nanozone-demo-imagf",
                              "eff784ae178cf0cb650c7b35f975a7b1ce652e88232a5c191c28c7126c2828eb"));
}

TEST(Trampoline, RawSwitchRejected) {
  Machine mc;
  const SwitchOutcome o = mc.trampoline().switch_domain(mc.core(0), {0, 3, 1}, SwitchVia::kRaw);
  EXPECT_EQ(*o.rejected, SwitchRejectReason::kNotTrampoline);
  EXPECT_TRUE(mc.trace().empty());
}

TEST(Trampoline, SingleOverlaySlotEnabled) {
  std::mt19937_64 rng(61);
  MachineConfig cfg;
  cfg.zones = 3;
  Machine mc(cfg);
  CoreState& core = mc.core(1);
  for (int i = 0; i < 2000; ++i) {
    const DomainId d = mc.domains().at(rng() % mc.domains().size());
    ASSERT_TRUE(mc.trampoline().switch_domain(core, d).ok());
    unsigned enabled = 0;
    for (unsigned s = 1; s < kPorSlots; ++s) enabled += core.por.get(s).value() != 0;
    ASSERT_EQ(enabled, 1u);
    ASSERT_EQ(core.por.get(d.poe_idx).value(), kPermRWX);
    unsigned pie_enabled = 0;
    for (unsigned s : mc.domains().pie_slots()) pie_enabled += core.pire.get(s).value() != 0;
    ASSERT_EQ(pie_enabled, 1u);
    ASSERT_EQ(core.pire.get(d.pie_idx).value(), kPermRWX);
    ASSERT_EQ(core.windows.size(), 1u);
    if (rng() % 2) {
      mc.trampoline().revoke(core);
      ASSERT_EQ(core.por.raw() & ~0xFull, 0u);
    }
  }
}

TEST(Trampoline, TraceClassifiesAndCharges) {
  MachineConfig cfg;
  cfg.zones = 2;
  Machine mc(cfg);
  CoreState& core = mc.core(0);
  Trampoline& t = mc.trampoline();
  EXPECT_EQ(t.switch_domain(core, {0, 3, 1}).record->level, SwitchLevel::kL3);
  EXPECT_EQ(t.switch_domain(core, {0, 3, 2}).record->level, SwitchLevel::kL1);
  EXPECT_EQ(t.switch_domain(core, {0, 7, 2}).record->level, SwitchLevel::kL2);
  EXPECT_EQ(t.switch_domain(core, {1, 7, 2}).record->level, SwitchLevel::kL3);
  EXPECT_NEAR(core.cycles, 6173.36 + 74.13 + 6169.47 + 6173.36, 1e-9);
  EXPECT_EQ(mc.trace().size(), 4u);
  // Primed entries are not traced.
  EXPECT_TRUE(t.prime(mc.core(1), {0, 3, 1}).ok());
  EXPECT_EQ(mc.trace().size(), 4u);
  EXPECT_EQ(t.switch_domain(mc.core(1), {0, 3, 4}).record->level, SwitchLevel::kL1);
}

TEST(Trampoline, RngTrapDisabledRefusesSwitch) {
  Machine mc;
  CoreState& core = mc.core(0);
  Features f;
  f.rng_trap_on = false;
  core.set_features(Mode::kKernel, f);
  EXPECT_ERROR_CODE(mc.trampoline().switch_domain(core, {0, 3, 1}), ErrorCode::kFeatureDisabled);
}
