#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "nanozone/domain.hpp"
#include "test_util.hpp"

using namespace nanozone;

TEST(Domain, SpaceHas28PerPas) {
  DomainSpace s(3);
  EXPECT_EQ(s.per_pas(), 28u);
  EXPECT_EQ(s.size(), 84u);
  EXPECT_EQ(s.at(0), (DomainId{0, 3, 1}));
  EXPECT_EQ(s.at(6), (DomainId{0, 3, 7}));
  EXPECT_EQ(s.at(7), (DomainId{0, 6, 1}));
  EXPECT_EQ(s.at(27), (DomainId{0, 9, 7}));
  EXPECT_EQ(s.at(28), (DomainId{1, 3, 1}));
  EXPECT_ERROR_CODE(s.at(84), ErrorCode::kExhausted);
}

TEST(Domain, IndexRoundTrip) {
  DomainSpace s(5);
  std::set<DomainId> seen;
  for (std::uint64_t i = 0; i < s.size(); ++i) {
    const DomainId d = s.at(i);
    EXPECT_TRUE(s.valid(d));
    EXPECT_EQ(s.index_of(d), i);
    seen.insert(d);
  }
  EXPECT_EQ(seen.size(), s.size());
  EXPECT_FALSE(s.valid({0, 4, 1}));
  EXPECT_FALSE(s.valid({0, 3, 0}));
  EXPECT_FALSE(s.valid({5, 3, 1}));
}

TEST(Domain, ClassifyExamples) {
  EXPECT_EQ(classify_switch(DomainId{0, 3, 1}, {0, 3, 2}), SwitchLevel::kL1);
  EXPECT_EQ(classify_switch(DomainId{0, 3, 1}, {0, 6, 1}), SwitchLevel::kL2);
  EXPECT_EQ(classify_switch(DomainId{0, 3, 1}, {1, 3, 1}), SwitchLevel::kL3);
  EXPECT_EQ(classify_switch(std::nullopt, {0, 3, 1}), SwitchLevel::kL3);
  EXPECT_EQ(classify_switch(DomainId{0, 3, 1}, {0, 3, 1}), SwitchLevel::kL1);
}

TEST(Domain, ClassifySymmetric) {
  DomainSpace s(3);
  for (std::uint64_t i = 0; i < s.size(); ++i)
    for (std::uint64_t j = 0; j < s.size(); ++j)
      ASSERT_EQ(classify_switch(s.at(i), s.at(j)), classify_switch(s.at(j), s.at(i)));
}

TEST(Domain, MetricsOfSyntheticTrace) {
  SwitchTrace t;
  for (int i = 0; i < 97; ++i) t.append(0, DomainId{0, 3, 1}, {0, 3, 2});
  for (int i = 0; i < 3; ++i) t.append(0, DomainId{0, 3, 1}, {0, 6, 2});
  const SwitchMetrics m = metrics(t);
  EXPECT_EQ(m.total, 100u);
  EXPECT_DOUBLE_EQ(m.l1_rate(), 0.97);
  EXPECT_DOUBLE_EQ(m.l2_rate(), 0.03);
  EXPECT_NEAR(m.avg_cycles, (97 * 74.13 + 3 * 6169.47) / 100, 1e-9);
  EXPECT_NEAR(m.avg_cycles, 256.9902, 1e-9);
}

TEST(Domain, EmptyTraceIsAnError) {
  SwitchTrace t;
  EXPECT_ERROR_CODE(metrics(t), ErrorCode::kEmptyTrace);
  t.append(0, std::nullopt, {0, 3, 1});
  EXPECT_ERROR_CODE(metrics(t, 1u), ErrorCode::kEmptyTrace);
}

TEST(Domain, AverageIsArithmeticMeanOfRecords) {
  std::mt19937_64 rng(31);
  DomainSpace s(4);
  for (int trial = 0; trial < 50; ++trial) {
    SwitchTrace t;
    std::optional<DomainId> cur;
    double sum = 0;
    const int n = 1 + static_cast<int>(rng() % 500);
    for (int i = 0; i < n; ++i) {
      const DomainId next = s.at(rng() % s.size());
      sum += t.append(0, cur, next).cycles;
      cur = next;
    }
    const SwitchMetrics m = metrics(t);
    EXPECT_NEAR(m.avg_cycles, sum / n, 1e-9);
    EXPECT_NEAR(m.rates[0] + m.rates[1] + m.rates[2], 1.0, 1e-12);
  }
}

TEST(Domain, RoundRobinTakesLowestFree) {
  RoundRobinAllocator a(DomainSpace(2));
  EXPECT_EQ(a.assign(1, 0), (DomainId{0, 3, 1}));
  EXPECT_EQ(a.assign(2, 1), (DomainId{0, 3, 2}));
  EXPECT_EQ(a.assign(1, 0), (DomainId{0, 3, 1}));
  a.release(1);
  EXPECT_EQ(a.assign(3, 1), (DomainId{0, 3, 1}));
}

TEST(Domain, AffinityGivesEachWorkerItsOwnBlock) {
  AffinityAllocator a(DomainSpace(4));
  // Connections alternate between two workers; each worker fills its block.
  for (std::uint64_t c = 1; c <= 56; ++c) {
    const DomainId d = a.assign(c, static_cast<unsigned>((c - 1) % 2));
    EXPECT_EQ(d.pas, (c - 1) % 2) << "connection " << c;
  }
  EXPECT_EQ(a.block_owner(0), 0u);
  EXPECT_EQ(a.block_owner(1), 1u);
  // Worker 0's 29th connection opens a fresh block.
  EXPECT_EQ(a.assign(57, 0).pas, 2u);
}

TEST(Domain, AffinityCounterOracle) {
  // Reference: worker w's k-th allocation (0-based) lands in the (k / 28)-th
  // block that worker opened; blocks are handed out in first-request order.
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const unsigned workers = 1 + rng() % 4;
    AffinityAllocator a(DomainSpace(40), false);
    std::vector<unsigned> count(workers, 0);
    std::vector<std::vector<unsigned>> blocks(workers);
    unsigned next_block = 0;
    for (std::uint64_t c = 1; c <= 300; ++c) {
      const unsigned w = rng() % workers;
      if (count[w] % 28 == 0) blocks[w].push_back(next_block++);
      const unsigned want_pas = blocks[w][count[w] / 28];
      const unsigned want_in = count[w] % 28;
      ++count[w];
      const DomainId d = a.assign(c, w);
      ASSERT_EQ(d.pas, want_pas);
      ASSERT_EQ(a.space().index_of(d) % 28, want_in);
    }
  }
}

TEST(Domain, AllocationIsSticky) {
  std::mt19937_64 rng(43);
  AffinityAllocator a(DomainSpace(8));
  std::map<std::uint64_t, DomainId> first;
  for (int i = 0; i < 2000; ++i) {
    const std::uint64_t c = 1 + rng() % 100;
    const DomainId d = a.assign(c, static_cast<unsigned>(c % 3));
    auto [it, fresh] = first.emplace(c, d);
    ASSERT_EQ(it->second, d);
  }
}

TEST(Domain, LiveDomainsNeverShared) {
  std::mt19937_64 rng(47);
  for (bool rr : {false, true}) {
    std::unique_ptr<DomainAllocator> a;
    if (rr)
      a = std::make_unique<RoundRobinAllocator>(DomainSpace(4));
    else
      a = std::make_unique<AffinityAllocator>(DomainSpace(4));
    std::map<std::uint64_t, DomainId> live;
    for (int i = 0; i < 5000; ++i) {
      const std::uint64_t c = 1 + rng() % 60;
      if (live.count(c) && rng() % 3 == 0) {
        a->release(c);
        live.erase(c);
        continue;
      }
      live[c] = a->assign(c, static_cast<unsigned>(c % 2));
      std::set<DomainId> distinct;
      for (const auto& [conn, d] : live) distinct.insert(d);
      ASSERT_EQ(distinct.size(), live.size());
    }
  }
}

TEST(Domain, ExhaustionIsReported) {
  RoundRobinAllocator a(DomainSpace(1), false);
  for (std::uint64_t c = 1; c <= 28; ++c) a.assign(c, 0);
  a.release(1);
  EXPECT_ERROR_CODE(a.assign(29, 0), ErrorCode::kExhausted);
}

TEST(Domain, CostModelDefaults) {
  CostModel c;
  EXPECT_DOUBLE_EQ(c.l1_switch, 74.13);
  EXPECT_DOUBLE_EQ(c.l2_switch, 6169.47);
  EXPECT_DOUBLE_EQ(c.l3_switch, 6173.36);
  EXPECT_DOUBLE_EQ(c.ptr_backup, 18.02);
  EXPECT_DOUBLE_EQ(c.ptr_check, 11.07);
  EXPECT_DOUBLE_EQ(c.syscall, 725.36);
  EXPECT_DOUBLE_EQ(c.hooked_syscall, 6533.63);
  c.l2_switch = -1;
  EXPECT_ERROR_CODE(c.validate(), ErrorCode::kConfig);
}
