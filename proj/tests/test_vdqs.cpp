#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "quantmcu/vdqs.hpp"

using namespace quantmcu;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::vector<int>> random_rankings(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::vector<int>> r(n, {8, 4, 2});
  for (auto& x : r) std::shuffle(x.begin(), x.end(), rng);
  return r;
}

std::vector<FeatureMapShape> random_shapes(std::mt19937_64& rng, std::size_t n) {
  std::vector<FeatureMapShape> s(n);
  for (auto& x : s) x = {oracle::uniform(rng, 1, 12), oracle::uniform(rng, 1, 12), oracle::uniform(rng, 1, 8)};
  return s;
}

double bytes(const FeatureMapShape& s, int b) { return double((s.elements() * b + 7) / 8); }

bool feasible(const std::vector<int>& bits, const std::vector<FeatureMapShape>& s, double m) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    if (bytes(s[i], bits[i]) + bytes(s[i + 1], bits[i + 1]) > m) return false;
  return true;
}

std::vector<float> grid_pool(int levels, int repeat = 1) {
  std::vector<float> v;
  for (int r = 0; r < repeat; ++r)
    for (int i = 0; i < levels; ++i) v.push_back(static_cast<float>(i) / static_cast<float>(levels - 1));
  return v;
}

}  // namespace

TEST(PhiScore, HandArithmetic) {
  std::vector<std::uint64_t> macs{100};
  EXPECT_EQ(phi_score(0, 8, macs).phi, 0.0);
  auto four = phi_score(0, 4, macs);
  EXPECT_EQ(four.delta_b, 3200.0);
  EXPECT_EQ(four.phi, 0.5);
  EXPECT_EQ(phi_score(0, 2, macs).phi, 0.75);
  // The last map has no consumer in the branch.
  EXPECT_EQ(phi_score(1, 2, macs).phi, 0.0);
}

TEST(PhiScore, ZeroB) {
  std::vector<std::uint64_t> macs{0, 0};
  try {
    phi_score(0, 4, macs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroB);
  }
}

TEST(PhiScore, StrictlyMonotone) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::uint64_t> macs(static_cast<std::size_t>(oracle::uniform(rng, 1, 5)));
    for (auto& m : macs) m = static_cast<std::uint64_t>(oracle::uniform(rng, 1, 5000));
    for (std::size_t i = 0; i < macs.size(); ++i) {
      ASSERT_GT(phi_score(i, 2, macs).phi, phi_score(i, 4, macs).phi);
      ASSERT_GT(phi_score(i, 4, macs).phi, phi_score(i, 8, macs).phi);
      ASSERT_EQ(phi_score(i, 8, macs).phi, 0.0);
    }
  }
}

TEST(PhiScore, Fp32BaselineOnlyRescales) {
  std::vector<std::uint64_t> macs{100, 300};
  for (int b : {2, 4})
    EXPECT_DOUBLE_EQ(phi_score(0, b, macs, PhiBaseline::Fp32).phi * 4.0, phi_score(0, b, macs).phi);
}

TEST(OmegaScore, GridPoolLosesNothing) {
  auto pool = grid_pool(16, 3);
  const ValueRange r{0.0, 1.0};
  const double hfp = pool_entropy(pool, 32, r, 256);
  auto o = omega_score(pool, r, 4, 256, hfp, 3.0);
  EXPECT_EQ(o.delta_h, 0.0);
  EXPECT_EQ(o.omega, 0.0);
}

TEST(OmegaScore, UniformEightBitGridToTwoBits) {
  auto pool = grid_pool(256);
  const ValueRange r{0.0, 1.0};
  const double hfp = pool_entropy(pool, 32, r, 256);
  EXPECT_NEAR(hfp, 8.0, 1e-12);
  const double h2 = pool_entropy(pool, 2, r, 256);
  EXPECT_NEAR(h2, oracle::direct_entropy(fake_quantize(pool, 2, r), 256, 0.0, 1.0), 1e-12);
  // Round-to-nearest on i/255 fills the four levels 43, 85, 85, 43.
  const double expect = -2.0 * (43.0 / 256 * std::log2(43.0 / 256) + 85.0 / 256 * std::log2(85.0 / 256));
  EXPECT_NEAR(h2, expect, 1e-12);
  const double last = 5.0;
  EXPECT_NEAR(omega_score(pool, r, 2, 256, hfp, last).omega, (8.0 - expect) / last, 1e-12);
}

TEST(OmegaScore, DegenerateDenominator) {
  auto pool = grid_pool(256);
  EXPECT_EQ(omega_score(pool, {0.0, 1.0}, 2, 256, 8.0, 0.0).omega, 0.0);

  std::vector<std::uint64_t> macs{10};
  std::vector<std::vector<float>> pools{pool, std::vector<float>(5, 0.25f)};
  std::vector<ValueRange> ranges{{0.0, 1.0}, {0.25, 1.25}};
  auto table = build_score_table(macs, pools, ranges, {});
  EXPECT_TRUE(table.degenerate_denominator);
  for (const auto& m : table.maps)
    for (const auto& c : m.cells) EXPECT_EQ(c.omega, 0.0);
}

TEST(QuantScore, Boundaries) {
  EXPECT_DOUBLE_EQ(quant_score(0.5, 0.1, 0.6), 0.14);
  EXPECT_EQ(quant_score(0.37, 0.81, 0.0), 0.37);
  EXPECT_EQ(quant_score(0.37, 0.81, 1.0), -0.81);
}

TEST(RankCandidates, TiesPreferWider) {
  std::vector<ScoreCell> cells(3);
  cells[0].bits = 2;
  cells[1].bits = 8;
  cells[2].bits = 4;
  EXPECT_EQ(rank_candidates(cells), (std::vector<int>{8, 4, 2}));
  cells[0].score = 1.0;
  EXPECT_EQ(rank_candidates(cells), (std::vector<int>{2, 8, 4}));
}

TEST(ScoreTable, ScalingLeavesRankingsAlone) {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<std::uint64_t> macs{400, 900, 100};
  std::vector<std::vector<float>> pools(4);
  std::vector<ValueRange> ranges;
  for (auto& p : pools) {
    p.resize(500);
    for (auto& x : p) x = std::max(0.0f, d(rng));
    auto [mn, mx] = std::minmax_element(p.begin(), p.end());
    ranges.push_back({*mn, *mx});
  }
  for (double lambda : {0.0, 0.3, 0.6, 1.0}) {
    SearchConfig cfg;
    cfg.lambda = lambda;
    auto table = build_score_table(macs, pools, ranges, cfg);
    for (auto& m : table.maps) {
      auto scaled = m.cells;
      for (auto& c : scaled) c.score = quant_score(c.phi * 7.5, c.omega * 7.5, lambda);
      ASSERT_EQ(rank_candidates(scaled), m.ranking);
    }
  }
}

TEST(ScoreTable, LambdaBoundariesExact) {
  std::vector<std::uint64_t> macs{50, 20};
  std::vector<std::vector<float>> pools{grid_pool(100), grid_pool(37), grid_pool(9)};
  std::vector<ValueRange> ranges(3, {0.0, 1.0});
  SearchConfig cfg;
  auto table = build_score_table(macs, pools, ranges, cfg);
  auto t0 = table, t1 = table;
  rescore(t0, 0.0);
  rescore(t1, 1.0);
  for (std::size_t i = 0; i < table.maps.size(); ++i)
    for (std::size_t c = 0; c < table.maps[i].cells.size(); ++c) {
      EXPECT_EQ(t0.maps[i].cells[c].score, t0.maps[i].cells[c].phi);
      EXPECT_EQ(t1.maps[i].cells[c].score, -t1.maps[i].cells[c].omega);
    }
}

TEST(Search, UnboundedTakesTopRank) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto n = static_cast<std::size_t>(oracle::uniform(rng, 1, 6));
    auto r = random_rankings(rng, n);
    auto res = search_bitwidths(r, random_shapes(rng, n), kInf);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(res.bits[i], r[i][0]);
    ASSERT_EQ(res.demotions, 0u);
  }
}

TEST(Search, LowerBoundViolated) {
  std::vector<FeatureMapShape> s{{16, 16, 1}, {16, 16, 1}};
  try {
    search_bitwidths({{8, 4, 2}, {8, 4, 2}}, s, 127.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Infeasible);
  }
}

TEST(Search, ThreeMapExample) {
  std::vector<FeatureMapShape> s(3, {32, 32, 1});
  std::vector<std::vector<int>> r(3, {8, 4, 2});
  auto res = search_bitwidths(r, s, 1536.0);
  EXPECT_TRUE(feasible(res.bits, s, 1536.0));
  EXPECT_TRUE(oracle::exhaustive_feasible(r, s, 1536.0));
  EXPECT_LE(res.demotions, 6u);
}

// The partner can already be at its floor while being the larger map; the
// smaller map must still move.
TEST(Search, DemotesSmallerMapWhenPartnerIsStuck) {
  std::vector<FeatureMapShape> s{{10, 10, 1}, {200, 1, 1}};
  std::vector<std::vector<int>> r{{8, 2}, {8}};
  auto res = search_bitwidths(r, s, 250.0);
  EXPECT_EQ(res.bits, (std::vector<int>{2, 8}));
}

TEST(Search, SingleMapIsAlwaysFeasible) {
  std::vector<FeatureMapShape> s{{64, 64, 8}};
  auto res = search_bitwidths({{8, 4, 2}}, s, 1.0);
  EXPECT_EQ(res.bits, (std::vector<int>{8}));
}

TEST(Search, AgreesWithExhaustiveOracle) {
  std::mt19937_64 rng(4);
  std::size_t infeasible = 0, feasible_count = 0;
  for (int t = 0; t < 2000; ++t) {
    const auto n = static_cast<std::size_t>(oracle::uniform(rng, 1, 5));
    auto r = random_rankings(rng, n);
    auto s = random_shapes(rng, n);
    double lo = 0, hi = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      lo = std::max(lo, bytes(s[i], 2) + bytes(s[i + 1], 2));
      hi = std::max(hi, bytes(s[i], 8) + bytes(s[i + 1], 8));
    }
    const double m = std::floor(std::uniform_real_distribution<double>(0.7 * lo, hi + 1)(rng));
    const bool exists = oracle::exhaustive_feasible(r, s, m);
    try {
      auto res = search_bitwidths(r, s, m);
      ASSERT_TRUE(feasible(res.bits, s, m)) << "trial " << t;
      ASSERT_LE(res.demotions, n * 2) << "trial " << t;
      ++feasible_count;
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::Infeasible);
      ASSERT_FALSE(exists) << "trial " << t << " reported Infeasible but an assignment exists";
      ++infeasible;
    }
  }
  EXPECT_GT(infeasible, 0u);
  EXPECT_GT(feasible_count, 0u);
}

TEST(PlanBranch, Fixed8) {
  std::vector<std::uint64_t> macs{10};
  std::vector<std::vector<float>> pools{grid_pool(10), grid_pool(10)};
  std::vector<ValueRange> ranges(2, {0.0, 1.0});
  std::vector<FeatureMapShape> s(2, {4, 4, 1});
  SearchConfig cfg;
  auto p = plan_branch({3, Policy::Fixed8}, macs, pools, ranges, cfg, s);
  EXPECT_EQ(p.bits, (std::vector<int>{8, 8}));
  EXPECT_FALSE(p.table);
  cfg.mem_limit = 16;
  p = plan_branch({3, Policy::Fixed8}, macs, pools, ranges, cfg, s);
  EXPECT_EQ(p.bits, (std::vector<int>{8, 8}));
  ASSERT_EQ(p.warnings.size(), 1u);
  EXPECT_NE(p.warnings[0].find("MemoryWarning"), std::string::npos);
}

TEST(PlanBranch, LambdaZeroGoesToTwoBits) {
  std::vector<std::uint64_t> macs{10, 20, 30};
  std::vector<std::vector<float>> pools(4, grid_pool(200));
  std::vector<ValueRange> ranges(4, {0.0, 1.0});
  std::vector<FeatureMapShape> s(4, {5, 5, 2});
  SearchConfig cfg;
  cfg.lambda = 0.0;
  auto p = plan_branch({0, Policy::MixedPrecision}, macs, pools, ranges, cfg, s);
  // The last map has no consumer, so every candidate ties and the widest wins.
  EXPECT_EQ(p.bits, (std::vector<int>{2, 2, 2, 8}));
  cfg.lambda = 1.0;
  p = plan_branch({0, Policy::MixedPrecision}, macs, pools, ranges, cfg, s);
  EXPECT_EQ(p.bits, (std::vector<int>{8, 8, 8, 8}));
}

TEST(PlanBranch, InfeasibleNamesBranch) {
  std::vector<std::uint64_t> macs{10};
  std::vector<std::vector<float>> pools(2, grid_pool(50));
  std::vector<ValueRange> ranges(2, {0.0, 1.0});
  std::vector<FeatureMapShape> s(2, {8, 8, 1});
  SearchConfig cfg;
  cfg.mem_limit = 10;
  try {
    plan_branch({5, Policy::MixedPrecision}, macs, pools, ranges, cfg, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Infeasible);
    EXPECT_NE(e.detail().find("branch 5"), std::string::npos);
  }
}

TEST(SearchConfig, Validation) {
  SearchConfig cfg;
  cfg.candidates = {8, 3};
  EXPECT_THROW(validate(cfg), Error);
  cfg.candidates = {8, 8};
  EXPECT_THROW(validate(cfg), Error);
  cfg.candidates = {8, 4, 2};
  cfg.lambda = 1.5;
  EXPECT_THROW(validate(cfg), Error);
}
