#pragma once

// Static network model: shape inference, receptive-field arithmetic, patch
// splitting into dataflow branches, and MAC / BitOPs / memory accounting.
//
// Feature maps are indexed along the layer chain: map 0 is the input of
// layer 0 and map j is the output of layer j, so a chain of L layers has
// L + 1 maps. The first `patch_depth` layers run per patch; each patch's
// chain of maps 0..patch_depth is a dataflow branch.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "quantmcu/error.hpp"

namespace quantmcu {

enum class LayerKind { Conv, DepthwiseConv, MaxPool, AvgPool, Fc };
enum class Activation { None, Relu };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int out_channels = 0;  // conv and fc only
  Activation activation = Activation::None;

  bool spatial() const noexcept { return kind != LayerKind::Fc; }
  bool has_weights() const noexcept {
    return kind == LayerKind::Conv || kind == LayerKind::DepthwiseConv || kind == LayerKind::Fc;
  }
};

struct FeatureMapShape {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;

  std::int64_t elements() const noexcept { return height * width * channels; }
  bool operator==(const FeatureMapShape&) const = default;
};

// Half-open pixel rectangle [row_start, row_end) x [col_start, col_end).
struct Region {
  std::int64_t row_start = 0;
  std::int64_t row_end = 0;
  std::int64_t col_start = 0;
  std::int64_t col_end = 0;

  std::int64_t rows() const noexcept { return row_end - row_start; }
  std::int64_t cols() const noexcept { return col_end - col_start; }
  std::int64_t area() const noexcept { return rows() * cols(); }
  bool empty() const noexcept { return rows() <= 0 || cols() <= 0; }
  bool contains(std::int64_t r, std::int64_t c) const noexcept {
    return r >= row_start && r < row_end && c >= col_start && c < col_end;
  }
  bool operator==(const Region&) const = default;

  static Region whole(const FeatureMapShape& s) { return {0, s.height, 0, s.width}; }
};

struct NetworkSpec {
  std::string name;
  FeatureMapShape input;
  std::vector<LayerSpec> layers;
  int grid_rows = 1;
  int grid_cols = 1;
  int patch_depth = 0;

  std::size_t map_count() const noexcept { return layers.size() + 1; }
};

struct DataflowBranch {
  std::size_t id = 0;
  int patch_row = 0;
  int patch_col = 0;
  // regions[d] is the part of feature map d this branch reads (d = 0) or
  // computes (d > 0); d runs 0..patch_depth.
  std::vector<Region> regions;
  // Elements of map d this branch shares with other branches, attributed in
  // proportion to region size.
  std::vector<double> overlap_elements;

  std::size_t depth() const noexcept { return regions.size() - 1; }
};

inline constexpr int kWeightBits = 8;

inline bool is_supported_bitwidth(int bits) noexcept {
  return bits == 2 || bits == 4 || bits == 8 || bits == 32;
}

// Bytes needed to store `elements` values at `bits` each.
inline std::uint64_t memory_bytes(std::int64_t elements, int bits) {
  const auto total_bits = static_cast<std::uint64_t>(elements) * static_cast<std::uint64_t>(bits);
  return (total_bits + 7) / 8;
}

struct MemoryModel {
  double mem_limit = std::numeric_limits<double>::infinity();

  bool unbounded() const noexcept { return !(mem_limit < std::numeric_limits<double>::infinity()); }
  static std::uint64_t mem(const FeatureMapShape& shape, int bits) {
    return memory_bytes(shape.elements(), bits);
  }
  bool fits(std::uint64_t bytes) const noexcept { return static_cast<double>(bytes) <= mem_limit; }
};

namespace detail {

inline std::int64_t conv_out(std::int64_t in, const LayerSpec& l) {
  const std::int64_t span = in + 2 * l.padding - l.kernel;
  if (span < 0) return 0;
  return span / l.stride + 1;
}

inline void validate_layer(const LayerSpec& l, std::size_t idx) {
  const auto where = "layer " + std::to_string(idx) + ": ";
  if (l.kernel < 1) throw Error(ErrorCode::InvalidNetwork, where + "kernel must be >= 1");
  if (l.stride < 1) throw Error(ErrorCode::InvalidNetwork, where + "stride must be >= 1");
  if (l.padding < 0) throw Error(ErrorCode::InvalidNetwork, where + "padding must be >= 0");
  if (l.kind == LayerKind::Fc) {
    if (l.kernel != 1 || l.stride != 1 || l.padding != 0)
      throw Error(ErrorCode::InvalidNetwork, where + "fc takes no kernel/stride/padding");
  } else if (l.padding >= l.kernel) {
    // Keeps every window anchored on at least one real pixel.
    throw Error(ErrorCode::InvalidNetwork, where + "padding must be smaller than kernel");
  }
  const bool needs_channels = l.kind == LayerKind::Conv || l.kind == LayerKind::Fc;
  if (needs_channels && l.out_channels < 1)
    throw Error(ErrorCode::InvalidNetwork, where + "out_channels must be >= 1");
  if (!needs_channels && l.out_channels != 0)
    throw Error(ErrorCode::InvalidNetwork, where + "out_channels only applies to conv and fc");
}

inline FeatureMapShape layer_output(const LayerSpec& l, const FeatureMapShape& in) {
  switch (l.kind) {
    case LayerKind::Conv:
      return {conv_out(in.height, l), conv_out(in.width, l), l.out_channels};
    case LayerKind::DepthwiseConv:
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      return {conv_out(in.height, l), conv_out(in.width, l), in.channels};
    case LayerKind::Fc:
      return {1, 1, l.out_channels};
  }
  return {};
}

// Input rows touched by output rows [start, end) of one layer, clipped to
// the input extent.
inline std::pair<std::int64_t, std::int64_t> inverse_span(const LayerSpec& l, std::int64_t start,
                                                          std::int64_t end, std::int64_t in_extent) {
  const std::int64_t lo = start * l.stride - l.padding;
  const std::int64_t hi = (end - 1) * l.stride - l.padding + l.kernel;
  return {std::max<std::int64_t>(lo, 0), std::min(hi, in_extent)};
}

}  // namespace detail

// Shapes of maps 0..L. Throws NonPositiveShape when any map degenerates.
inline std::vector<FeatureMapShape> infer_shapes(const NetworkSpec& net) {
  if (net.input.height <= 0 || net.input.width <= 0 || net.input.channels <= 0)
    throw Error(ErrorCode::NonPositiveShape, "input shape must be positive");
  std::vector<FeatureMapShape> shapes{net.input};
  shapes.reserve(net.layers.size() + 1);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto out = detail::layer_output(net.layers[i], shapes.back());
    if (out.height <= 0 || out.width <= 0 || out.channels <= 0)
      throw Error(ErrorCode::NonPositiveShape,
                  "layer " + std::to_string(i) + " produces an empty feature map");
    shapes.push_back(out);
  }
  return shapes;
}

inline void validate(const NetworkSpec& net) {
  if (net.layers.empty()) throw Error(ErrorCode::InvalidNetwork, "network has no layers");
  if (net.grid_rows < 1 || net.grid_cols < 1)
    throw Error(ErrorCode::InvalidNetwork, "patch grid must be at least 1x1");
  if (net.patch_depth < 0 || static_cast<std::size_t>(net.patch_depth) > net.layers.size())
    throw Error(ErrorCode::InvalidNetwork, "patch depth out of range");
  bool seen_fc = false;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    detail::validate_layer(net.layers[i], i);
    if (net.layers[i].kind == LayerKind::Fc) {
      seen_fc = true;
    } else if (seen_fc) {
      throw Error(ErrorCode::InvalidNetwork,
                  "layer " + std::to_string(i) + ": spatial layer after fc");
    }
  }
  for (int i = 0; i < net.patch_depth; ++i)
    if (!net.layers[static_cast<std::size_t>(i)].spatial())
      throw Error(ErrorCode::SpatialOnly, "fc layer inside the patch stage");
  (void)infer_shapes(net);
}

// Minimal depth-0 region whose values determine `out` on map `depth`.
inline Region receptive_region(const NetworkSpec& net, int depth, const Region& out) {
  if (depth < 0 || static_cast<std::size_t>(depth) > net.layers.size())
    throw Error(ErrorCode::InvalidConfig, "depth out of range");
  for (int i = 0; i < depth; ++i)
    if (!net.layers[static_cast<std::size_t>(i)].spatial())
      throw Error(ErrorCode::SpatialOnly, "receptive region crosses an fc layer");
  const auto shapes = infer_shapes(net);
  const auto& target = shapes[static_cast<std::size_t>(depth)];
  if (out.empty() || out.row_start < 0 || out.col_start < 0 || out.row_end > target.height ||
      out.col_end > target.width)
    throw Error(ErrorCode::InvalidConfig, "output region outside its feature map");
  Region r = out;
  for (int i = depth - 1; i >= 0; --i) {
    const auto& layer = net.layers[static_cast<std::size_t>(i)];
    const auto& in = shapes[static_cast<std::size_t>(i)];
    auto [r0, r1] = detail::inverse_span(layer, r.row_start, r.row_end, in.height);
    auto [c0, c1] = detail::inverse_span(layer, r.col_start, r.col_end, in.width);
    r = {r0, r1, c0, c1};
  }
  return r;
}

// Per-branch regions for every depth in the patch stage. The last grid row
// and column absorb any remainder unless `strict_grid` is set.
inline std::vector<DataflowBranch> split_patches(const NetworkSpec& net, bool strict_grid = false) {
  validate(net);
  const auto shapes = infer_shapes(net);
  const int depth = net.patch_depth;
  const auto& split = shapes[static_cast<std::size_t>(depth)];
  if (split.height < net.grid_rows || split.width < net.grid_cols)
    throw Error(ErrorCode::UnevenGrid, "patch grid finer than the split feature map");
  if (strict_grid && (split.height % net.grid_rows != 0 || split.width % net.grid_cols != 0))
    throw Error(ErrorCode::UnevenGrid, "patch grid does not divide the split feature map");

  const std::int64_t tile_h = split.height / net.grid_rows;
  const std::int64_t tile_w = split.width / net.grid_cols;
  std::vector<DataflowBranch> branches;
  for (int pr = 0; pr < net.grid_rows; ++pr) {
    for (int pc = 0; pc < net.grid_cols; ++pc) {
      DataflowBranch b;
      b.id = branches.size();
      b.patch_row = pr;
      b.patch_col = pc;
      Region tile{pr * tile_h, pr + 1 == net.grid_rows ? split.height : (pr + 1) * tile_h,
                  pc * tile_w, pc + 1 == net.grid_cols ? split.width : (pc + 1) * tile_w};
      b.regions.assign(static_cast<std::size_t>(depth) + 1, Region{});
      b.regions[static_cast<std::size_t>(depth)] = tile;
      Region r = tile;
      for (int i = depth - 1; i >= 0; --i) {
        const auto& layer = net.layers[static_cast<std::size_t>(i)];
        const auto& in = shapes[static_cast<std::size_t>(i)];
        auto [r0, r1] = detail::inverse_span(layer, r.row_start, r.row_end, in.height);
        auto [c0, c1] = detail::inverse_span(layer, r.col_start, r.col_end, in.width);
        r = {r0, r1, c0, c1};
        b.regions[static_cast<std::size_t>(i)] = r;
      }
      branches.push_back(std::move(b));
    }
  }

  for (int d = 0; d <= depth; ++d) {
    const auto du = static_cast<std::size_t>(d);
    double total = 0.0;
    for (const auto& b : branches) total += static_cast<double>(b.regions[du].area());
    const double unique = static_cast<double>(shapes[du].height * shapes[du].width);
    const double overlap = (total - unique) * static_cast<double>(shapes[du].channels);
    for (auto& b : branches) {
      const double share = static_cast<double>(b.regions[du].area()) / total;
      b.overlap_elements.push_back(overlap * share);
    }
  }
  return branches;
}

// Branch-local map shapes for depths 0..patch_depth.
inline std::vector<FeatureMapShape> branch_shapes(const DataflowBranch& branch,
                                                  std::span<const FeatureMapShape> full) {
  std::vector<FeatureMapShape> out;
  out.reserve(branch.regions.size());
  for (std::size_t d = 0; d < branch.regions.size(); ++d)
    out.push_back({branch.regions[d].rows(), branch.regions[d].cols(), full[d].channels});
  return out;
}

// Extra input elements read because branch receptive fields overlap, as a
// fraction of the input map: sum(|region_b(0)|) / |map 0| - 1.
inline double redundancy_ratio(std::span<const DataflowBranch> branches,
                               const FeatureMapShape& input) {
  if (branches.empty()) return 0.0;
  double total = 0.0;
  for (const auto& b : branches) total += static_cast<double>(b.regions.front().area());
  return total / static_cast<double>(input.height * input.width) - 1.0;
}

// MACs of layers 0..shapes.size()-2, where shapes[l] and shapes[l + 1] are
// the (full or branch-local) input and output of layer l.
inline std::vector<std::uint64_t> mac_count(const NetworkSpec& net,
                                            std::span<const FeatureMapShape> shapes) {
  if (shapes.empty() || shapes.size() - 1 > net.layers.size())
    throw Error(ErrorCode::ShapeMismatch, "shape list does not match the layer chain");
  std::vector<std::uint64_t> macs;
  macs.reserve(shapes.size() - 1);
  for (std::size_t l = 0; l + 1 < shapes.size(); ++l) {
    const auto& layer = net.layers[l];
    const auto& in = shapes[l];
    const auto& out = shapes[l + 1];
    if (in.elements() <= 0 || out.elements() <= 0)
      throw Error(ErrorCode::NonPositiveShape, "layer " + std::to_string(l) + " has an empty map");
    const auto k2 = static_cast<std::uint64_t>(layer.kernel) * static_cast<std::uint64_t>(layer.kernel);
    const auto out_pixels = static_cast<std::uint64_t>(out.height * out.width);
    switch (layer.kind) {
      case LayerKind::Conv:
        macs.push_back(out_pixels * static_cast<std::uint64_t>(out.channels) * k2 *
                       static_cast<std::uint64_t>(in.channels));
        break;
      case LayerKind::DepthwiseConv:
        macs.push_back(out_pixels * static_cast<std::uint64_t>(out.channels) * k2);
        break;
      case LayerKind::Fc:
        macs.push_back(static_cast<std::uint64_t>(in.elements()) *
                       static_cast<std::uint64_t>(out.elements()));
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        macs.push_back(0);
        break;
    }
  }
  return macs;
}

// Sum over layers of MACs * weight_bits * bits of the layer's input map.
inline std::uint64_t bitops(std::span<const std::uint64_t> macs, int weight_bits,
                            std::span<const int> act_bits) {
  if (act_bits.size() < macs.size())
    throw Error(ErrorCode::ShapeMismatch, "fewer activation bitwidths than layers");
  if (!is_supported_bitwidth(weight_bits))
    throw Error(ErrorCode::UnknownBitwidth, std::to_string(weight_bits));
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < macs.size(); ++l) {
    if (!is_supported_bitwidth(act_bits[l]))
      throw Error(ErrorCode::UnknownBitwidth, std::to_string(act_bits[l]));
    total += macs[l] * static_cast<std::uint64_t>(weight_bits) * static_cast<std::uint64_t>(act_bits[l]);
  }
  return total;
}

// Largest live pair Mem(i, b_i) + Mem(i + 1, b_{i+1}); a single map counts alone.
inline std::uint64_t peak_memory(std::span<const int> bits, std::span<const FeatureMapShape> shapes) {
  if (bits.size() != shapes.size())
    throw Error(ErrorCode::ShapeMismatch, "bitwidth and shape lists differ in length");
  if (shapes.empty()) return 0;
  if (shapes.size() == 1) return MemoryModel::mem(shapes[0], bits[0]);
  std::uint64_t peak = 0;
  for (std::size_t i = 0; i + 1 < shapes.size(); ++i)
    peak = std::max(peak, MemoryModel::mem(shapes[i], bits[i]) + MemoryModel::mem(shapes[i + 1], bits[i + 1]));
  return peak;
}

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DepthwiseConv: return "depthwise_conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Fc: return "fc";
  }
  return "?";
}

inline std::string_view to_string(Activation a) { return a == Activation::Relu ? "relu" : "none"; }

}  // namespace quantmcu
