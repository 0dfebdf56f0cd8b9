#include <gtest/gtest.h>

#include <random>

#include "nanozone/core.hpp"
#include "test_util.hpp"

using namespace nanozone;

namespace {

struct Rig {
  GptRegistry gpts;
  CoreState core{0, GptId{0}};
  AddressSpace as{1};
  Rig() { gpts.create(GptId{0}); }
};

}  // namespace

TEST(Core, UnmappedIsTranslationFault) {
  Rig r;
  const AccessResult a = access(r.core, r.as, r.gpts, 0x5000, AccessKind::kRead, Mode::kUser);
  ASSERT_FALSE(a.ok());
  EXPECT_EQ(a.fault->kind, FaultKind::kTranslation);
  EXPECT_EQ(a.fault->stage, FaultStage::kWalk);
}

TEST(Core, PermCheckedBeforeGpc) {
  Rig r;
  r.as.map({1, 7, 1, 0, false, true});  // R only
  r.gpts.at(GptId{0}).set_pas({7, 8}, PasLabel::kNoAccess, SecurityState::kRootWorld);
  const AccessResult w = access(r.core, r.as, r.gpts, 0x1000, AccessKind::kWrite, Mode::kUser);
  EXPECT_EQ(w.fault->kind, FaultKind::kPerm);
  const AccessResult rd = access(r.core, r.as, r.gpts, 0x1000, AccessKind::kRead, Mode::kUser);
  EXPECT_EQ(rd.fault->kind, FaultKind::kGpf);
  EXPECT_EQ(rd.fault->granule, 7u);
}

TEST(Core, KernelSkipsPermsButNotGpc) {
  Rig r;
  r.as.map({1, 7, 0, 0, false, true});
  EXPECT_TRUE(access(r.core, r.as, r.gpts, 0x1000, AccessKind::kWrite, Mode::kKernel).ok());
  r.gpts.at(GptId{0}).set_pas({7, 8}, PasLabel::kNoAccess, SecurityState::kRootWorld);
  EXPECT_EQ(access(r.core, r.as, r.gpts, 0x1000, AccessKind::kWrite, Mode::kKernel).fault->kind, FaultKind::kGpf);
  EXPECT_TRUE(access(r.core, r.as, r.gpts, 0x1000, AccessKind::kWrite, Mode::kMonitor).ok());
}

TEST(Core, PhysAccessRequiresPrivilege) {
  Rig r;
  EXPECT_ERROR_CODE(access_phys(r.core, r.gpts, 0, Mode::kUser), ErrorCode::kInvalidArgument);
  EXPECT_TRUE(access_phys(r.core, r.gpts, 0, Mode::kKernel).ok());
}

TEST(Core, TpidrroReadOnlyAtEl0) {
  CoreState c;
  c.write_tpidrro(Mode::kKernel, 0x1234);
  EXPECT_ERROR_CODE(c.write_tpidrro(Mode::kUser, 0), ErrorCode::kInvalidArgument);
  EXPECT_EQ(c.tpidrro(), 0x1234u);
}

TEST(Core, FeaturesNotWritableAtEl0) {
  CoreState c;
  EXPECT_ERROR_CODE(c.set_features(Mode::kUser, Features{false, true, true, true}), ErrorCode::kInvalidArgument);
  EXPECT_EQ(c.features(), Features::all_on());
}

TEST(Core, ReadRngTrapsOrRefuses) {
  CoreState c(3, GptId{9});
  const RngTrap t = read_rng(c, Mode::kUser);
  EXPECT_EQ(t.core_id, 3u);
  EXPECT_EQ(t.gpt_base.value, 9u);
  Features f;
  f.rng_trap_on = false;
  c.set_features(Mode::kKernel, f);
  EXPECT_ERROR_CODE(read_rng(c, Mode::kUser), ErrorCode::kFeatureDisabled);
}

TEST(Core, DuplicateMappingRefused) {
  AddressSpace as;
  EXPECT_TRUE(as.map({1, 1, 4, 0, false, true}));
  EXPECT_FALSE(as.map({1, 2, 4, 0, false, true}));
  EXPECT_ERROR_CODE(as.map({2, 2, 11, 0, false, true}), ErrorCode::kInvalidPte);
}

// Randomized tuples against a three-stage reference that decodes nothing
// through library helpers.
TEST(Core, PipelineMatchesReference) {
  std::mt19937_64 rng(23);
  const char* data_perm[16] = {"", "R", "X", "RX", "W", "RW", "WX", "RWX", "", "", "", "", "", "", "", ""};
  const AccessKind kinds[] = {AccessKind::kRead, AccessKind::kWrite, AccessKind::kExec, AccessKind::kGcsStore};
  const char flags[] = {'R', 'W', 'X', 'G'};
  for (int i = 0; i < 10000; ++i) {
    Rig r;
    const unsigned pie_val = rng() % 16, por_val = rng() % 16;
    const bool gcs = rng() % 4 == 0;
    const unsigned pie = gcs ? kGcsPieSlot : 6;
    const unsigned poe = 1 + rng() % 7;
    r.core.pire.set(6, PermEncoding{pie_val});
    r.core.por.set(poe, PermEncoding{por_val});
    const bool mapped = rng() % 8 != 0;
    if (mapped) r.as.map({2, 40, pie, poe, gcs, true});
    const PasLabel label = kAllPasLabels[rng() % 6];
    r.gpts.at(GptId{0}).set_pas({40, 41}, label, SecurityState::kRootWorld);
    const bool windowed = rng() % 5 == 0;
    if (windowed) r.core.windows.emplace_back(0, kGiB);
    const unsigned k = rng() % 4;

    std::optional<FaultKind> want;
    if (!mapped) {
      want = FaultKind::kTranslation;
    } else {
      bool perm_ok;
      if (gcs) {
        perm_ok = flags[k] == 'R' || flags[k] == 'G';
      } else {
        const std::string a = data_perm[pie_val], b = data_perm[por_val];
        perm_ok = flags[k] != 'G' && a.find(flags[k]) != std::string::npos && b.find(flags[k]) != std::string::npos;
      }
      if (!perm_ok)
        want = FaultKind::kPerm;
      else if (!windowed && label != PasLabel::kNormal && label != PasLabel::kFullAccess)
        want = FaultKind::kGpf;
    }
    const AccessResult got = access(r.core, r.as, r.gpts, 0x2000 + rng() % 4096, kinds[k], Mode::kUser);
    ASSERT_EQ(got.ok(), !want.has_value()) << "case " << i;
    if (want) {
      ASSERT_EQ(got.fault->kind, *want) << "case " << i;
    }
  }
}

TEST(Core, FeatureTogglesChangeResolution) {
  Rig r;
  r.as.map({1, 1, 6, 2, false, true});
  r.core.pire.set(6, PermEncoding{kPermRWX});
  EXPECT_FALSE(access(r.core, r.as, r.gpts, 0x1000, AccessKind::kRead, Mode::kUser).ok());
  Features f;
  f.poe_on = false;
  r.core.set_features(Mode::kKernel, f);
  EXPECT_TRUE(access(r.core, r.as, r.gpts, 0x1000, AccessKind::kExec, Mode::kUser).ok());
  f.pie_on = false;
  r.core.set_features(Mode::kKernel, f);
  EXPECT_TRUE(access(r.core, r.as, r.gpts, 0x1000, AccessKind::kWrite, Mode::kUser).ok());
  EXPECT_FALSE(access(r.core, r.as, r.gpts, 0x1000, AccessKind::kExec, Mode::kUser).ok());
}
