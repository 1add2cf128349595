#pragma once

// Bitwidth scoring and search over one dataflow branch.
//
// Every (map, candidate bitwidth) cell gets a score
//   S = -lambda * Omega + (1 - lambda) * Phi
// where Phi is the BitOPs saved relative to the branch's 8-bit total and
// Omega is the entropy lost relative to the entropy of the branch's last map.
// Maps start at their best-scoring candidate; the search then walks the
// branch forward and backward, demoting maps along their score ranking until
// every adjacent pair of maps fits the memory budget.

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
#include "quantmcu/vdpc.hpp"

namespace quantmcu {

enum class PhiBaseline { Int8, Fp32 };

struct SearchConfig {
  double lambda = 0.6;
  std::vector<int> candidates{8, 4, 2};
  std::size_t bins = 256;
  double mem_limit = std::numeric_limits<double>::infinity();
  int b_last = 8;
  PhiBaseline phi_baseline = PhiBaseline::Int8;
};

inline void validate(const SearchConfig& cfg) {
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw Error(ErrorCode::InvalidConfig, "lambda must lie in [0, 1]");
  if (cfg.candidates.empty()) throw Error(ErrorCode::InvalidConfig, "candidate set is empty");
  for (std::size_t i = 0; i < cfg.candidates.size(); ++i) {
    const int b = cfg.candidates[i];
    if (b != 2 && b != 4 && b != 8) throw Error(ErrorCode::UnknownBitwidth, std::to_string(b));
    for (std::size_t j = 0; j < i; ++j)
      if (cfg.candidates[j] == b) throw Error(ErrorCode::InvalidConfig, "duplicate candidate bitwidth");
  }
  if (cfg.b_last != 2 && cfg.b_last != 4 && cfg.b_last != 8)
    throw Error(ErrorCode::UnknownBitwidth, "b_last " + std::to_string(cfg.b_last));
  if (cfg.bins < 1) throw Error(ErrorCode::InvalidConfig, "bins must be >= 1");
  if (std::isnan(cfg.mem_limit) || cfg.mem_limit < 0) throw Error(ErrorCode::InvalidConfig, "memory limit must be >= 0");
}

struct PhiTerm {
  double delta_b = 0.0;
  double phi = 0.0;
};

// Branch BitOPs with every map at 8 bits (or the float baseline), where
// layer l of the branch consumes map l.
inline double branch_baseline_bitops(std::span<const std::uint64_t> macs, PhiBaseline baseline) {
  const double act_bits = baseline == PhiBaseline::Int8 ? 8.0 : 32.0;
  double total = 0.0;
  for (auto m : macs) total += static_cast<double>(m) * kWeightBits * act_bits;
  return total;
}

// BitOPs saved by storing map i at `bits` instead of 8, as a fraction of the
// branch baseline. The branch's last map has no consumer inside the branch.
inline PhiTerm phi_score(std::size_t map, int bits, std::span<const std::uint64_t> macs,
                         PhiBaseline baseline = PhiBaseline::Int8) {
  if (map > macs.size()) throw Error(ErrorCode::InvalidConfig, "map index beyond the branch");
  const double total = branch_baseline_bitops(macs, baseline);
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroB, "branch has no MACs");
  PhiTerm t;
  if (map < macs.size()) t.delta_b = static_cast<double>(macs[map]) * kWeightBits * (8.0 - bits);
  t.phi = t.delta_b / total;
  return t;
}

struct OmegaTerm {
  double entropy = 0.0;     // H(i, b)
  double delta_h = 0.0;     // H_fp(i) - H(i, b); may be negative
  double omega = 0.0;
};

inline double pool_entropy(std::span<const float> pool, int bits, ValueRange range, std::size_t k) {
  if (bits == kNoQuantBits) return histogram_entropy(pool, k, range).entropy;
  const auto q = fake_quantize(pool, bits, range);
  return histogram_entropy(q, k, range).entropy;
}

// `last_entropy` is H(N, b_last); a zero denominator yields Omega = 0.
inline OmegaTerm omega_score(std::span<const float> pool, ValueRange range, int bits, std::size_t k,
                             double entropy_fp, double last_entropy) {
  OmegaTerm t;
  t.entropy = pool_entropy(pool, bits, range, k);
  t.delta_h = entropy_fp - t.entropy;
  t.omega = last_entropy > 0.0 ? t.delta_h / last_entropy : 0.0;
  return t;
}

inline double quant_score(double phi, double omega, double lambda) { return -lambda * omega + (1.0 - lambda) * phi; }

struct ScoreCell {
  int bits = 8;
  double delta_b = 0.0;
  double phi = 0.0;
  double entropy = 0.0;
  double delta_h = 0.0;
  double omega = 0.0;
  double score = 0.0;
};

struct MapScores {
  double entropy_fp = 0.0;
  std::vector<ScoreCell> cells;  // in candidate order
  std::vector<int> ranking;      // bitwidths by descending score
};

struct QuantScoreTable {
  double branch_bitops = 0.0;   // B
  double last_entropy = 0.0;    // H(N, b_last)
  bool degenerate_denominator = false;
  std::vector<MapScores> maps;
};

// Descending score; equal scores prefer the wider bitwidth.
inline std::vector<int> rank_candidates(std::span<const ScoreCell> cells) {
  std::vector<ScoreCell> sorted(cells.begin(), cells.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ScoreCell& a, const ScoreCell& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.bits > b.bits;
  });
  std::vector<int> out;
  out.reserve(sorted.size());
  for (const auto& c : sorted) out.push_back(c.bits);
  return out;
}

// Re-derives S and the rankings for a new lambda without recomputing entropies.
inline void rescore(QuantScoreTable& table, double lambda) {
  for (auto& m : table.maps) {
    for (auto& c : m.cells) c.score = quant_score(c.phi, c.omega, lambda);
    m.ranking = rank_candidates(m.cells);
  }
}

// macs[l]: branch MACs of layer l (consumer of map l). pools[i] / ranges[i]:
// calibration values and range of map i, for i = 0..macs.size().
// A branch without MACs scores Phi = 0 everywhere.
inline QuantScoreTable build_score_table(std::span<const std::uint64_t> macs,
                                         std::span<const std::vector<float>> pools,
                                         std::span<const ValueRange> ranges, const SearchConfig& cfg) {
  validate(cfg);
  const std::size_t n_maps = macs.size() + 1;
  if (pools.size() != n_maps || ranges.size() != n_maps)
    throw Error(ErrorCode::ShapeMismatch, "score table needs one pool and range per map");
  QuantScoreTable table;
  table.branch_bitops = branch_baseline_bitops(macs, cfg.phi_baseline);
  const std::size_t last = n_maps - 1;
  table.last_entropy = pool_entropy(pools[last], cfg.b_last, ranges[last], cfg.bins);
  table.degenerate_denominator = !(table.last_entropy > 0.0);
  for (std::size_t i = 0; i < n_maps; ++i) {
    MapScores ms;
    ms.entropy_fp = pool_entropy(pools[i], kNoQuantBits, ranges[i], cfg.bins);
    for (int b : cfg.candidates) {
      ScoreCell c;
      c.bits = b;
      if (table.branch_bitops > 0.0) {
        const auto p = phi_score(i, b, macs, cfg.phi_baseline);
        c.delta_b = p.delta_b;
        c.phi = p.phi;
      }
      const auto o = omega_score(pools[i], ranges[i], b, cfg.bins, ms.entropy_fp, table.last_entropy);
      c.entropy = o.entropy;
      c.delta_h = o.delta_h;
      c.omega = o.omega;
      c.score = quant_score(c.phi, c.omega, cfg.lambda);
      ms.cells.push_back(c);
    }
    ms.ranking = rank_candidates(ms.cells);
    table.maps.push_back(std::move(ms));
  }
  return table;
}

struct SearchResult {
  std::vector<int> bits;
  std::size_t demotions = 0;
  std::size_t sweeps = 0;
};

namespace detail {

// Walks the chain with explicit per-map rank positions.
class BitwidthSearch {
 public:
  BitwidthSearch(const std::vector<std::vector<int>>& rankings, std::span<const FeatureMapShape> shapes,
                 double mem_limit)
      : rankings_(rankings), shapes_(shapes), limit_(mem_limit), pos_(rankings.size(), 0) {}

  SearchResult run() {
    const std::size_t n = rankings_.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (!fits(min_mem(i) + min_mem(i + 1)))
        throw Error(ErrorCode::Infeasible, "maps " + std::to_string(i) + " and " + std::to_string(i + 1) +
                                               " exceed the memory limit even at their narrowest bitwidths");
    }

    SearchResult res;
    while (!all_fit()) {
      const std::size_t before = res.demotions;
      // Forward: pair (i, i + 1), adjust the downstream map.
      for (std::size_t i = 0; i + 1 < n; ++i) adjust(i + 1, i, res);
      // Backward: pair (i - 1, i), adjust the upstream map.
      for (std::size_t i = n - 1; i >= 1; --i) adjust(i - 1, i, res);
      ++res.sweeps;
      if (res.demotions == before && !all_fit())
        throw Error(ErrorCode::Infeasible, "no demotion can satisfy the memory limit");
    }
    for (std::size_t i = 0; i < n; ++i) res.bits.push_back(bits(i));
    return res;
  }

 private:
  int bits(std::size_t i) const { return rankings_[i][pos_[i]]; }
  std::uint64_t mem(std::size_t i) const { return MemoryModel::mem(shapes_[i], bits(i)); }
  std::uint64_t min_mem(std::size_t i) const {
    std::uint64_t m = std::numeric_limits<std::uint64_t>::max();
    for (int b : rankings_[i]) m = std::min(m, MemoryModel::mem(shapes_[i], b));
    return m;
  }
  bool fits(std::uint64_t bytes) const { return static_cast<double>(bytes) <= limit_; }
  bool pair_fits(std::size_t i) const { return fits(mem(i) + mem(i + 1)); }
  // A single map has no adjacent pair, so it always fits.
  bool all_fit() const {
    for (std::size_t i = 0; i + 1 < rankings_.size(); ++i)
      if (!pair_fits(i)) return false;
    return true;
  }

  // Best-ranked candidate after the current one that strictly shrinks the map.
  std::size_t next_smaller(std::size_t i) const {
    const auto cur = mem(i);
    for (std::size_t p = pos_[i] + 1; p < rankings_[i].size(); ++p)
      if (MemoryModel::mem(shapes_[i], rankings_[i][p]) < cur) return p;
    return rankings_[i].size();
  }
  bool reducible(std::size_t i) const { return next_smaller(i) < rankings_[i].size(); }

  // Demotes `target` while its pair with `partner` is over budget, as long as
  // the target is the larger map of the pair (ties included) or the partner
  // cannot shrink any further.
  void adjust(std::size_t target, std::size_t partner, SearchResult& res) {
    const std::size_t lo = std::min(target, partner);
    while (!pair_fits(lo) && reducible(target) && (mem(target) >= mem(partner) || !reducible(partner))) {
      pos_[target] = next_smaller(target);
      ++res.demotions;
    }
  }

  const std::vector<std::vector<int>>& rankings_;
  std::span<const FeatureMapShape> shapes_;
  double limit_;
  std::vector<std::size_t> pos_;
};

}  // namespace detail

// rankings[i]: candidate bitwidths of map i in descending score order.
inline SearchResult search_bitwidths(const std::vector<std::vector<int>>& rankings,
                                     std::span<const FeatureMapShape> shapes, double mem_limit) {
  if (rankings.empty() || rankings.size() != shapes.size())
    throw Error(ErrorCode::ShapeMismatch, "one ranking per feature map required");
  for (const auto& r : rankings)
    if (r.empty()) throw Error(ErrorCode::InvalidConfig, "empty candidate ranking");
  return detail::BitwidthSearch(rankings, shapes, mem_limit).run();
}

inline SearchResult search_bitwidths(const QuantScoreTable& table, std::span<const FeatureMapShape> shapes,
                                     double mem_limit) {
  std::vector<std::vector<int>> rankings;
  for (const auto& m : table.maps) rankings.push_back(m.ranking);
  return search_bitwidths(rankings, shapes, mem_limit);
}

struct BranchPlan {
  std::vector<int> bits;
  std::optional<QuantScoreTable> table;
  std::size_t demotions = 0;
  std::vector<std::string> warnings;
};

inline bool satisfies_memory(std::span<const int> bits, std::span<const FeatureMapShape> shapes, double mem_limit) {
  if (shapes.size() < 2) return true;
  return static_cast<double>(peak_memory(bits, shapes)) <= mem_limit;
}

// Fixed8 branches keep every map at 8 bits and only warn when over budget;
// MixedPrecision branches are scored and searched.
inline BranchPlan plan_branch(const BranchPolicy& policy, std::span<const std::uint64_t> macs,
                              std::span<const std::vector<float>> pools, std::span<const ValueRange> ranges,
                              const SearchConfig& cfg, std::span<const FeatureMapShape> shapes) {
  validate(cfg);
  if (shapes.size() != macs.size() + 1) throw Error(ErrorCode::ShapeMismatch, "branch shapes and MACs disagree");
  BranchPlan plan;
  const auto tag = "branch " + std::to_string(policy.branch_id) + ": ";
  if (policy.policy == Policy::Fixed8) {
    plan.bits.assign(shapes.size(), 8);
    if (!satisfies_memory(plan.bits, shapes, cfg.mem_limit))
      plan.warnings.push_back(tag + "MemoryWarning: 8-bit branch exceeds the memory limit");
    return plan;
  }
  auto table = build_score_table(macs, pools, ranges, cfg);
  if (!(table.branch_bitops > 0.0)) plan.warnings.push_back(tag + "branch has no MACs; Phi is zero for every map");
  if (table.degenerate_denominator)
    plan.warnings.push_back(tag + "last feature map has zero entropy; Omega is zero for every map");
  try {
    auto res = search_bitwidths(table, shapes, cfg.mem_limit);
    plan.bits = std::move(res.bits);
    plan.demotions = res.demotions;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Infeasible) throw Error(ErrorCode::Infeasible, tag + e.detail());
    throw;
  }
  plan.table = std::move(table);
  return plan;
}

}  // namespace quantmcu
