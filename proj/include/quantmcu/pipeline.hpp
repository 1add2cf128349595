#pragma once

// End-to-end planning: calibrate, fit the input-map Gaussian, classify
// patches, score and search bitwidths per branch, then account BitOPs, peak
// memory and output fidelity against the layer-based and all-8-bit
// patch-based baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quantmcu/actstats.hpp"
#include "quantmcu/error.hpp"
#include "quantmcu/netgraph.hpp"
#include "quantmcu/parallel.hpp"
#include "quantmcu/refengine.hpp"
#include "quantmcu/tensor.hpp"
#include "quantmcu/vdpc.hpp"
#include "quantmcu/vdqs.hpp"

namespace quantmcu {

struct PlanConfig {
  double phi = 0.96;
  OutlierRule outlier_rule = OutlierRule::NormalizedTail;
  SearchConfig search;
  std::optional<std::uint64_t> seed;
  bool strict_grid = false;
  bool dynamic = false;
  int weight_bits = kWeightBits;
};

// Everything derived from the network, weights and calibration set that does
// not depend on phi or lambda. Sweeps reuse one context.
struct PlanContext {
  NetworkSpec net;
  WeightSet weights;
  CalibrationSet cal;
  std::vector<FeatureMapShape> shapes;
  std::vector<std::uint64_t> macs;  // whole-map MACs per layer
  std::vector<DataflowBranch> branches;
  std::vector<std::vector<FeatureMapShape>> branch_shapes;
  std::vector<std::vector<std::uint64_t>> branch_macs;
  CalibrationPools pools;

  std::size_t depth() const noexcept { return static_cast<std::size_t>(net.patch_depth); }
  std::size_t last_map() const noexcept { return shapes.size() - 1; }
};

inline PlanContext prepare_context(NetworkSpec net, WeightSet weights, CalibrationSet cal, bool strict_grid = false) {
  validate(net);
  validate(net, weights);
  if (cal.samples.empty()) throw Error(ErrorCode::EmptyCalibration, "calibration set is empty");
  for (const auto& s : cal.samples)
    if (s.rank() != 3 || s.shape3() != net.input)
      throw Error(ErrorCode::ShapeMismatch, "calibration sample does not match the network input");
  PlanContext ctx;
  ctx.shapes = infer_shapes(net);
  ctx.macs = mac_count(net, ctx.shapes);
  ctx.branches = split_patches(net, strict_grid);
  for (const auto& b : ctx.branches) {
    ctx.branch_shapes.push_back(branch_shapes(b, ctx.shapes));
    ctx.branch_macs.push_back(mac_count(net, ctx.branch_shapes.back()));
  }
  ctx.pools = calibrate(net, weights, cal, ctx.branches);
  ctx.net = std::move(net);
  ctx.weights = std::move(weights);
  ctx.cal = std::move(cal);
  return ctx;
}

enum class SqnrStatus { Finite, Infinite, NotApplicable };

// Reported in place of an infinite SQNR.
inline constexpr double kSqnrCapDb = 300.0;

struct Fidelity {
  std::optional<double> sqnr_db;
  SqnrStatus sqnr_status = SqnrStatus::NotApplicable;
  std::optional<double> agreement;  // fc-terminated nets only
};

struct BranchRecord {
  std::size_t id = 0;
  int patch_row = 0;
  int patch_col = 0;
  PatchClass cls;
  BranchPolicy policy;
  std::size_t outlier_samples = 0;
  std::vector<int> bits;
  std::optional<QuantScoreTable> table;
};

struct PlanTotals {
  std::uint64_t bitops_layer_based = 0;
  std::uint64_t bitops_patch8 = 0;
  std::uint64_t bitops_plan = 0;
  std::uint64_t peak_mem_layer_based = 0;
  std::uint64_t peak_mem_patch8 = 0;
  std::uint64_t peak_mem_plan = 0;
  double redundancy_ratio = 0.0;

  bool operator==(const PlanTotals&) const = default;
};

// Per-sample patch classification: each sample picks Fixed8 or the searched
// assignment per branch according to its own labels.
struct DynamicSummary {
  double mean_bitops = 0.0;
  std::uint64_t max_peak_mem = 0;
  double mean_outlier_fraction = 0.0;
  Fidelity fidelity;
};

struct QuantPlan {
  PlanConfig config;
  std::string network;
  std::vector<BranchRecord> branches;
  std::vector<int> post_stage_bits;  // maps patch_depth + 1 .. L
  std::optional<QuantScoreTable> post_stage_table;
  PlanTotals totals;
  Fidelity fidelity;
  std::optional<DynamicSummary> dynamic;
  std::vector<std::string> warnings;

  double outlier_fraction() const {
    if (branches.empty()) return 0.0;
    const auto n = std::count_if(branches.begin(), branches.end(),
                                 [](const BranchRecord& b) { return b.cls.label == PatchLabel::OutlierClass; });
    return static_cast<double>(n) / static_cast<double>(branches.size());
  }
};

// BitOPs of a patch-based execution. The layer reading the stitched map
// charges each tile's bitwidth in proportion to the tile's area.
inline std::uint64_t patch_bitops(const PlanContext& ctx, const PatchPlanBits& bits) {
  const std::size_t depth = ctx.depth();
  std::uint64_t total = 0;
  for (std::size_t b = 0; b < ctx.branches.size(); ++b)
    total += bitops(ctx.branch_macs[b], kWeightBits, bits.branch_bits[b]);
  if (depth < ctx.macs.size()) {
    std::uint64_t weighted = 0;
    std::uint64_t area = 0;
    for (std::size_t b = 0; b < ctx.branches.size(); ++b) {
      const auto a = static_cast<std::uint64_t>(ctx.branches[b].regions[depth].area());
      weighted += a * static_cast<std::uint64_t>(bits.branch_bits[b][depth]);
      area += a;
    }
    const std::uint64_t num = ctx.macs[depth] * kWeightBits * weighted;
    total += (num + area / 2) / area;
  }
  for (std::size_t l = depth + 1; l < ctx.macs.size(); ++l)
    total += ctx.macs[l] * kWeightBits * static_cast<std::uint64_t>(bits.post_bits[l - depth - 1]);
  return total;
}

// Largest live adjacent pair over every branch and over the merged maps; the
// stitched map counts each tile at its own branch's bitwidth.
inline std::uint64_t patch_peak_memory(const PlanContext& ctx, const PatchPlanBits& bits) {
  const std::size_t depth = ctx.depth();
  std::uint64_t peak = 0;
  for (std::size_t b = 0; b < ctx.branches.size(); ++b)
    peak = std::max(peak, peak_memory(bits.branch_bits[b], ctx.branch_shapes[b]));
  if (depth == ctx.last_map()) return peak;
  std::uint64_t stitched = 0;
  for (std::size_t b = 0; b < ctx.branches.size(); ++b)
    stitched += MemoryModel::mem(ctx.branch_shapes[b][depth], bits.branch_bits[b][depth]);
  std::uint64_t prev = stitched;
  for (std::size_t i = depth + 1; i <= ctx.last_map(); ++i) {
    const auto cur = MemoryModel::mem(ctx.shapes[i], bits.post_bits[i - depth - 1]);
    peak = std::max(peak, prev + cur);
    prev = cur;
  }
  return peak;
}

inline PatchPlanBits uniform_patch_bits(const PlanContext& ctx, int b) {
  PatchPlanBits bits;
  bits.branch_bits.assign(ctx.branches.size(), std::vector<int>(ctx.depth() + 1, b));
  bits.post_bits.assign(ctx.last_map() - ctx.depth(), b);
  return bits;
}

namespace detail {

struct SqnrAccumulator {
  double sum_db = 0.0;
  std::size_t counted = 0;
  std::size_t infinite = 0;
  std::size_t agree = 0;
  std::size_t samples = 0;
};

inline std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::distance(t.data().begin(), std::max_element(t.data().begin(), t.data().end())));
}

}  // namespace detail

// Mean per-sample SQNR of the final output against the float reference, and
// argmax agreement when the network ends in fc. Per-sample SQNR is capped at
// +/- kSqnrCapDb; samples with zero signal and zero error are skipped.
inline Fidelity fidelity_from_outputs(const NetworkSpec& net, std::span<const Tensor> reference,
                                      std::span<const Tensor> quantized) {
  detail::SqnrAccumulator acc;
  for (std::size_t s = 0; s < reference.size(); ++s) {
    double signal = 0.0;
    double noise = 0.0;
    for (std::size_t i = 0; i < reference[s].size(); ++i) {
      const double y = reference[s][i];
      const double e = y - static_cast<double>(quantized[s][i]);
      signal += y * y;
      noise += e * e;
    }
    ++acc.samples;
    if (detail::argmax(reference[s]) == detail::argmax(quantized[s])) ++acc.agree;
    if (noise == 0.0 && signal == 0.0) continue;
    double db = noise == 0.0 ? kSqnrCapDb : (signal == 0.0 ? -kSqnrCapDb : 10.0 * std::log10(signal / noise));
    db = std::clamp(db, -kSqnrCapDb, kSqnrCapDb);
    if (noise == 0.0) ++acc.infinite;
    acc.sum_db += db;
    ++acc.counted;
  }
  Fidelity f;
  if (acc.counted > 0) {
    f.sqnr_db = acc.sum_db / static_cast<double>(acc.counted);
    f.sqnr_status = acc.infinite == acc.counted ? SqnrStatus::Infinite : SqnrStatus::Finite;
  }
  if (!net.layers.empty() && net.layers.back().kind == LayerKind::Fc && acc.samples > 0)
    f.agreement = static_cast<double>(acc.agree) / static_cast<double>(acc.samples);
  return f;
}

// Runs the patch-based quantized pass per calibration sample (or per-sample
// bit layouts when `per_sample` is given) and compares final outputs.
inline Fidelity evaluate_fidelity(const PlanContext& ctx, const PatchPlanBits& bits, int weight_bits,
                                  const std::vector<PatchPlanBits>* per_sample = nullptr) {
  const std::size_t n = ctx.cal.samples.size();
  std::vector<Tensor> quantized(n);
  parallel_for(n, [&](std::size_t s) {
    const auto& b = per_sample ? (*per_sample)[s] : bits;
    quantized[s] = forward_patched(ctx.net, ctx.weights, ctx.cal.samples[s], ctx.branches, b, ctx.pools.ranges,
                                   weight_bits)
                       .back();
  });
  return fidelity_from_outputs(ctx.net, ctx.pools.outputs, quantized);
}

namespace detail {

inline OutlierModel outlier_model(const PlanContext& ctx, const PlanConfig& cfg) {
  return {ctx.pools.map_fits[0], cfg.phi, cfg.outlier_rule};
}

struct PostStage {
  std::vector<int> bits;
  std::optional<QuantScoreTable> table;
};

// Merged maps depth + 1..L searched as one more branch over whole maps.
inline PostStage search_post_stage(const PlanContext& ctx, const SearchConfig& cfg, std::vector<std::string>& warnings) {
  const std::size_t first = ctx.depth() + 1;
  const std::size_t last = ctx.last_map();
  PostStage out;
  if (first > last) return out;
  std::vector<std::uint64_t> macs(ctx.macs.begin() + static_cast<std::ptrdiff_t>(first),
                                  ctx.macs.begin() + static_cast<std::ptrdiff_t>(last));
  std::vector<std::vector<float>> pools(ctx.pools.shared.begin() + static_cast<std::ptrdiff_t>(first),
                                        ctx.pools.shared.end());
  std::vector<ValueRange> ranges(ctx.pools.ranges.begin() + static_cast<std::ptrdiff_t>(first), ctx.pools.ranges.end());
  std::vector<FeatureMapShape> shapes(ctx.shapes.begin() + static_cast<std::ptrdiff_t>(first), ctx.shapes.end());
  BranchPolicy policy{ctx.branches.size(), Policy::MixedPrecision};
  try {
    auto plan = plan_branch(policy, macs, pools, ranges, cfg, shapes);
    for (auto& w : plan.warnings) warnings.push_back("post-stage " + w);
    out.bits = std::move(plan.bits);
    out.table = std::move(plan.table);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Infeasible) throw Error(ErrorCode::Infeasible, "post-stage maps: " + e.detail());
    throw;
  }
  return out;
}

}  // namespace detail

inline QuantPlan build_plan(const PlanContext& ctx, const PlanConfig& cfg) {
  validate(cfg.search);
  if (!(cfg.phi >= 0.0 && cfg.phi < 1.0)) throw Error(ErrorCode::InvalidConfig, "phi must lie in [0, 1)");
  QuantPlan plan;
  plan.config = cfg;
  plan.network = ctx.net.name;
  const std::size_t depth = ctx.depth();

  const auto om = detail::outlier_model(ctx, cfg);
  auto classes = classify_all(ctx.pools.split, om);
  plan.warnings.insert(plan.warnings.end(), classes.warnings.begin(), classes.warnings.end());
  const auto policies = assign_policies(classes.classes);

  // Searched assignment for every branch; Fixed8 branches only need it for
  // the dynamic simulation.
  std::vector<std::optional<BranchPlan>> mixed(ctx.branches.size());
  for (std::size_t b = 0; b < ctx.branches.size(); ++b) {
    const bool needed = policies[b].policy == Policy::MixedPrecision || cfg.dynamic;
    if (!needed) continue;
    const std::vector<ValueRange> ranges(ctx.pools.ranges.begin(),
                                         ctx.pools.ranges.begin() + static_cast<std::ptrdiff_t>(depth + 1));
    const BranchPolicy as_mixed{b, Policy::MixedPrecision};
    try {
      mixed[b] = plan_branch(as_mixed, ctx.branch_macs[b], ctx.pools.branch[b], ranges, cfg.search,
                             ctx.branch_shapes[b]);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Infeasible || policies[b].policy == Policy::MixedPrecision) throw;
      plan.warnings.push_back("dynamic mode: " + e.detail() + "; branch stays at 8 bits");
    }
  }

  PatchPlanBits bits;
  for (std::size_t b = 0; b < ctx.branches.size(); ++b) {
    BranchRecord rec;
    rec.id = b;
    rec.patch_row = ctx.branches[b].patch_row;
    rec.patch_col = ctx.branches[b].patch_col;
    rec.cls = classes.classes[b];
    rec.policy = policies[b];
    rec.outlier_samples = classes.outlier_samples[b];
    if (rec.policy.policy == Policy::Fixed8) {
      rec.bits.assign(depth + 1, 8);
      if (!satisfies_memory(rec.bits, ctx.branch_shapes[b], cfg.search.mem_limit))
        plan.warnings.push_back("branch " + std::to_string(b) + ": MemoryWarning: 8-bit branch exceeds the memory limit");
    } else {
      rec.bits = mixed[b]->bits;
      rec.table = mixed[b]->table;
      for (const auto& w : mixed[b]->warnings) plan.warnings.push_back(w);
    }
    bits.branch_bits.push_back(rec.bits);
    plan.branches.push_back(std::move(rec));
  }

  const bool any_outlier = std::any_of(policies.begin(), policies.end(),
                                       [](const BranchPolicy& p) { return p.policy == Policy::Fixed8; });
  std::optional<detail::PostStage> searched_post;
  if (!any_outlier || cfg.dynamic) searched_post = detail::search_post_stage(ctx, cfg.search, plan.warnings);
  if (any_outlier) {
    plan.post_stage_bits.assign(ctx.last_map() - depth, 8);
  } else {
    plan.post_stage_bits = searched_post->bits;
    plan.post_stage_table = searched_post->table;
  }
  bits.post_bits = plan.post_stage_bits;

  const auto all8 = uniform_patch_bits(ctx, 8);
  const std::vector<int> layer8(ctx.shapes.size(), 8);
  plan.totals.bitops_layer_based = bitops(ctx.macs, kWeightBits, layer8);
  plan.totals.peak_mem_layer_based = peak_memory(layer8, ctx.shapes);
  plan.totals.bitops_patch8 = patch_bitops(ctx, all8);
  plan.totals.peak_mem_patch8 = patch_peak_memory(ctx, all8);
  plan.totals.bitops_plan = patch_bitops(ctx, bits);
  plan.totals.peak_mem_plan = patch_peak_memory(ctx, bits);
  plan.totals.redundancy_ratio = redundancy_ratio(ctx.branches, ctx.shapes[0]);
  plan.fidelity = evaluate_fidelity(ctx, bits, cfg.weight_bits);

  if (cfg.dynamic) {
    DynamicSummary dyn;
    std::vector<PatchPlanBits> per_sample;
    double bitops_sum = 0.0;
    double outlier_sum = 0.0;
    for (const auto& row : classes.per_sample) {
      PatchPlanBits sb;
      bool sample_outlier = false;
      std::size_t outliers = 0;
      for (std::size_t b = 0; b < ctx.branches.size(); ++b) {
        const bool fixed = row[b].label == PatchLabel::OutlierClass || !mixed[b];
        sample_outlier = sample_outlier || row[b].label == PatchLabel::OutlierClass;
        outliers += row[b].label == PatchLabel::OutlierClass ? 1 : 0;
        sb.branch_bits.push_back(fixed ? std::vector<int>(depth + 1, 8) : mixed[b]->bits);
      }
      sb.post_bits = sample_outlier ? std::vector<int>(ctx.last_map() - depth, 8) : searched_post->bits;
      bitops_sum += static_cast<double>(patch_bitops(ctx, sb));
      dyn.max_peak_mem = std::max(dyn.max_peak_mem, patch_peak_memory(ctx, sb));
      outlier_sum += static_cast<double>(outliers) / static_cast<double>(ctx.branches.size());
      per_sample.push_back(std::move(sb));
    }
    const auto n = static_cast<double>(per_sample.size());
    dyn.mean_bitops = bitops_sum / n;
    dyn.mean_outlier_fraction = outlier_sum / n;
    dyn.fidelity = evaluate_fidelity(ctx, bits, cfg.weight_bits, &per_sample);
    plan.dynamic = dyn;
  }
  return plan;
}

inline QuantPlan build_plan(NetworkSpec net, WeightSet weights, CalibrationSet cal, const PlanConfig& cfg) {
  const auto ctx = prepare_context(std::move(net), std::move(weights), std::move(cal), cfg.strict_grid);
  return build_plan(ctx, cfg);
}

enum class SweepParam { Phi, Lambda };

struct SweepRow {
  double value = 0.0;
  bool ok = true;
  std::string error;
  std::optional<QuantPlan> plan;
};

struct SweepResult {
  SweepParam param = SweepParam::Lambda;
  std::vector<double> grid;
  std::vector<SweepRow> rows;
};

// Rebuilds the plan for every grid value on shared calibration pools. An
// infeasible row is recorded rather than aborting the sweep.
inline SweepResult sweep(const PlanContext& ctx, SweepParam param, std::span<const double> grid, const PlanConfig& base) {
  if (grid.empty()) throw Error(ErrorCode::InvalidConfig, "sweep grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid[i];
    const bool in_domain = param == SweepParam::Phi ? (v >= 0.0 && v < 1.0) : (v >= 0.0 && v <= 1.0);
    if (!in_domain) throw Error(ErrorCode::InvalidConfig, "sweep value " + std::to_string(v) + " outside its domain");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw Error(ErrorCode::InvalidConfig, "sweep grid must be strictly increasing");
  }
  SweepResult res;
  res.param = param;
  res.grid.assign(grid.begin(), grid.end());
  for (double v : grid) {
    PlanConfig cfg = base;
    if (param == SweepParam::Phi) cfg.phi = v;
    else cfg.search.lambda = v;
    SweepRow row;
    row.value = v;
    try {
      row.plan = build_plan(ctx, cfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Infeasible) throw;
      row.ok = false;
      row.error = e.detail();
    }
    res.rows.push_back(std::move(row));
  }
  return res;
}

inline std::string_view to_string(SweepParam p) { return p == SweepParam::Phi ? "phi" : "lambda"; }

}  // namespace quantmcu
