#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "quantmcu/pipeline.hpp"
#include "quantmcu/reference.hpp"

using namespace quantmcu;

namespace {

// Calibration pools take a few forward passes; share them across tests.
const PlanContext& reference_context() {
  static const PlanContext ctx = [] {
    auto net = reference::network();
    auto w = synthetic_weights(net, reference::kSeed);
    return prepare_context(net, w, reference::calibration());
  }();
  return ctx;
}

std::uint64_t mem(const FeatureMapShape& s, int b) { return (static_cast<std::uint64_t>(s.elements()) * b + 7) / 8; }

// BitOPs from the plan's bit lists, recomputed layer by layer from the
// region shapes.
double oracle_bitops(const PlanContext& ctx, const QuantPlan& p) {
  const auto& net = ctx.net;
  const std::size_t s = ctx.depth();
  double total = 0.0;
  auto layer_macs = [&](std::size_t l, const FeatureMapShape& in, const FeatureMapShape& out) -> double {
    const auto& L = net.layers[l];
    const double k2 = double(L.kernel) * L.kernel;
    switch (L.kind) {
      case LayerKind::Conv: return double(out.height * out.width * out.channels) * k2 * double(in.channels);
      case LayerKind::DepthwiseConv: return double(out.height * out.width * out.channels) * k2;
      case LayerKind::Fc: return double(in.elements()) * double(out.elements());
      default: return 0.0;
    }
  };
  for (const auto& b : p.branches) {
    const auto& br = ctx.branches[b.id];
    for (std::size_t l = 0; l < s; ++l) {
      FeatureMapShape in{br.regions[l].rows(), br.regions[l].cols(), ctx.shapes[l].channels};
      FeatureMapShape out{br.regions[l + 1].rows(), br.regions[l + 1].cols(), ctx.shapes[l + 1].channels};
      total += layer_macs(l, in, out) * 8.0 * b.bits[l];
    }
  }
  if (s < net.layers.size()) {
    // Layer s reads the stitched map: each tile contributes its share.
    const double m = layer_macs(s, ctx.shapes[s], ctx.shapes[s + 1]);
    double area = 0.0, weighted = 0.0;
    for (const auto& b : p.branches) {
      const double a = double(ctx.branches[b.id].regions[s].area());
      area += a;
      weighted += a * b.bits[s];
    }
    total += std::round(m * 8.0 * weighted / area);
    for (std::size_t l = s + 1; l < net.layers.size(); ++l)
      total += layer_macs(l, ctx.shapes[l], ctx.shapes[l + 1]) * 8.0 * p.post_stage_bits[l - s - 1];
  }
  return total;
}

std::uint64_t oracle_peak(const PlanContext& ctx, const QuantPlan& p) {
  const std::size_t s = ctx.depth();
  std::uint64_t peak = 0;
  for (const auto& b : p.branches) {
    const auto& shapes = ctx.branch_shapes[b.id];
    for (std::size_t i = 0; i + 1 < shapes.size(); ++i)
      peak = std::max(peak, mem(shapes[i], b.bits[i]) + mem(shapes[i + 1], b.bits[i + 1]));
  }
  std::vector<std::uint64_t> post;
  std::uint64_t stitched = 0;
  for (const auto& b : p.branches) stitched += mem(ctx.branch_shapes[b.id][s], b.bits[s]);
  post.push_back(stitched);
  for (std::size_t i = s + 1; i < ctx.shapes.size(); ++i) post.push_back(mem(ctx.shapes[i], p.post_stage_bits[i - s - 1]));
  for (std::size_t i = 0; i + 1 < post.size(); ++i) peak = std::max(peak, post[i] + post[i + 1]);
  return peak;
}

}  // namespace

TEST(Pipeline, ReferencePlanInvariants) {
  const auto& ctx = reference_context();
  auto plan = build_plan(ctx, reference::config());
  ASSERT_EQ(plan.branches.size(), 4u);
  for (std::size_t b = 0; b < plan.branches.size(); ++b) {
    EXPECT_EQ(plan.branches[b].id, b);
    EXPECT_EQ(plan.branches[b].bits.size(), ctx.depth() + 1);
    if (plan.branches[b].cls.label == PatchLabel::OutlierClass) {
      EXPECT_EQ(plan.branches[b].policy.policy, Policy::Fixed8);
      for (int x : plan.branches[b].bits) EXPECT_EQ(x, 8);
    }
  }
  EXPECT_EQ(plan.post_stage_bits.size(), ctx.last_map() - ctx.depth());
  EXPECT_EQ(plan.post_stage_bits.back(), 8);
  const auto& t = plan.totals;
  EXPECT_LE(t.bitops_plan, t.bitops_patch8);
  EXPECT_LE(t.peak_mem_plan, t.peak_mem_patch8);
  EXPECT_LE(static_cast<double>(t.peak_mem_plan), reference::config().search.mem_limit);
  EXPECT_EQ(static_cast<double>(t.bitops_plan), oracle_bitops(ctx, plan));
  EXPECT_EQ(t.peak_mem_plan, oracle_peak(ctx, plan));
  ASSERT_TRUE(plan.fidelity.sqnr_db);
  EXPECT_TRUE(std::isfinite(*plan.fidelity.sqnr_db));
  ASSERT_TRUE(plan.fidelity.agreement);
}

TEST(Pipeline, Patch8Baseline) {
  const auto& ctx = reference_context();
  auto all8 = uniform_patch_bits(ctx, 8);
  std::uint64_t expect = 0;
  for (const auto& m : ctx.branch_macs)
    for (auto x : m) expect += x * 64;
  for (std::size_t l = ctx.depth(); l < ctx.macs.size(); ++l) expect += ctx.macs[l] * 64;
  EXPECT_EQ(patch_bitops(ctx, all8), expect);
  // Patch execution repeats overlapping work.
  std::uint64_t layer = 0;
  for (auto x : ctx.macs) layer += x * 64;
  EXPECT_GE(patch_bitops(ctx, all8), layer);
}

TEST(Pipeline, AllThirtyTwoIsLossless) {
  const auto& ctx = reference_context();
  auto f = evaluate_fidelity(ctx, uniform_patch_bits(ctx, 32), 32);
  EXPECT_EQ(f.sqnr_status, SqnrStatus::Infinite);
  EXPECT_EQ(*f.agreement, 1.0);
}

TEST(Pipeline, LambdaZeroUnboundedUsesTwoBits) {
  const auto& ctx = reference_context();
  auto cfg = reference::config();
  cfg.search.mem_limit = std::numeric_limits<double>::infinity();
  cfg.search.lambda = 0.0;
  cfg.phi = 0.99;
  auto plan = build_plan(ctx, cfg);
  ASSERT_EQ(plan.outlier_fraction(), 0.0);
  // Pure BitOPs scoring: a map whose consumer has MACs in the scoring scope
  // drops to 2 bits; otherwise every candidate ties at zero and the wider one
  // wins. The split map's consumer lies outside its branch.
  const std::size_t s = ctx.depth();
  for (const auto& b : plan.branches)
    for (std::size_t i = 0; i < b.bits.size(); ++i)
      EXPECT_EQ(b.bits[i], i < s && ctx.branch_macs[b.id][i] > 0 ? 2 : 8) << "branch " << b.id << " map " << i;
  for (std::size_t i = 0; i + 1 < plan.post_stage_bits.size(); ++i)
    EXPECT_EQ(plan.post_stage_bits[i], ctx.macs[s + 1 + i] > 0 ? 2 : 8) << "post map " << s + 1 + i;
}

TEST(Pipeline, PhiZeroMakesEveryPatchOutlier) {
  const auto& ctx = reference_context();
  auto cfg = reference::config();
  cfg.phi = 0.0;
  auto plan = build_plan(ctx, cfg);
  EXPECT_EQ(plan.outlier_fraction(), 1.0);
  EXPECT_EQ(plan.totals.bitops_plan, plan.totals.bitops_patch8);
  for (int b : plan.post_stage_bits) EXPECT_EQ(b, 8);
}

TEST(Pipeline, Deterministic) {
  const auto& ctx = reference_context();
  auto a = build_plan(ctx, reference::config());
  auto b = build_plan(ctx, reference::config());
  EXPECT_EQ(a.totals, b.totals);
  EXPECT_EQ(a.fidelity.sqnr_db, b.fidelity.sqnr_db);
}

TEST(Pipeline, DynamicSummary) {
  const auto& ctx = reference_context();
  auto cfg = reference::config();
  cfg.dynamic = true;
  auto plan = build_plan(ctx, cfg);
  ASSERT_TRUE(plan.dynamic);
  EXPECT_GE(plan.dynamic->mean_outlier_fraction, 0.0);
  EXPECT_LE(plan.dynamic->mean_outlier_fraction, 1.0);
  EXPECT_LE(plan.dynamic->mean_bitops, static_cast<double>(plan.totals.bitops_patch8));
  auto stat = build_plan(ctx, reference::config());
  EXPECT_EQ(stat.totals, plan.totals);
}

TEST(Pipeline, InfeasibleMemoryLimit) {
  const auto& ctx = reference_context();
  auto cfg = reference::config();
  cfg.search.mem_limit = 64;
  cfg.phi = 0.99;
  try {
    build_plan(ctx, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Infeasible);
  }
}

TEST(Pipeline, RejectsBadPhi) {
  const auto& ctx = reference_context();
  auto cfg = reference::config();
  cfg.phi = 1.0;
  EXPECT_THROW(build_plan(ctx, cfg), Error);
}

TEST(Sweep, GridValidation) {
  const auto& ctx = reference_context();
  std::vector<double> dec{0.5, 0.4};
  EXPECT_THROW(sweep(ctx, SweepParam::Lambda, dec, reference::config()), Error);
  std::vector<double> out{0.5, 1.0};
  EXPECT_THROW(sweep(ctx, SweepParam::Phi, out, reference::config()), Error);
  std::vector<double> none;
  EXPECT_THROW(sweep(ctx, SweepParam::Phi, none, reference::config()), Error);
}

TEST(Sweep, InfeasibleRowsAreRecorded) {
  const auto& ctx = reference_context();
  auto cfg = reference::config();
  cfg.search.mem_limit = 64;
  std::vector<double> grid{0.0, 0.99};
  auto res = sweep(ctx, SweepParam::Phi, grid, cfg);
  ASSERT_EQ(res.rows.size(), 2u);
  // At phi = 0 every branch is fixed at 8 bits, which only warns.
  EXPECT_TRUE(res.rows[0].ok);
  EXPECT_FALSE(res.rows[1].ok);
  EXPECT_FALSE(res.rows[1].error.empty());
}

TEST(Fidelity, SqnrStatuses) {
  NetworkSpec net{"f", {1, 1, 2}, {{LayerKind::Fc, 1, 1, 0, 2, Activation::None}}, 1, 1, 0};
  std::vector<Tensor> ref{Tensor({1, 1, 2}, std::vector<float>{1.0f, 0.0f})};
  std::vector<Tensor> same = ref;
  EXPECT_EQ(fidelity_from_outputs(net, ref, same).sqnr_status, SqnrStatus::Infinite);
  std::vector<Tensor> noisy{Tensor({1, 1, 2}, std::vector<float>{0.9f, 0.0f})};
  auto f = fidelity_from_outputs(net, ref, noisy);
  EXPECT_EQ(f.sqnr_status, SqnrStatus::Finite);
  EXPECT_NEAR(*f.sqnr_db, 20.0, 1e-5);
  std::vector<Tensor> zero{Tensor({1, 1, 2}, 0.0f)};
  auto z = fidelity_from_outputs(net, zero, zero);
  EXPECT_EQ(z.sqnr_status, SqnrStatus::NotApplicable);
  EXPECT_FALSE(z.sqnr_db);
}
