#pragma once

// Reference interpreter: float and fake-quantized forward passes over the
// layer chain, region-restricted (patch) execution, and calibration pooling.
//
// Accumulation is double precision and storage is float. Every layer goes
// through the same per-pixel kernel whether it computes a whole map or one
// branch's region, so stitched patch outputs match layer-based outputs
// bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "quantmcu/actstats.hpp"
#include "quantmcu/error.hpp"
#include "quantmcu/netgraph.hpp"
#include "quantmcu/parallel.hpp"
#include "quantmcu/tensor.hpp"

namespace quantmcu {

// Kernel layouts: conv (Cout, k, k, Cin); depthwise (k, k, C); fc (out, in).
// Biases are (Cout). Pooling layers carry empty tensors.
struct LayerWeights {
  Tensor kernel;
  Tensor bias;
};

struct WeightSet {
  std::vector<LayerWeights> layers;
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline std::vector<std::size_t> kernel_dims(const LayerSpec& l, const FeatureMapShape& in) {
  const auto k = static_cast<std::size_t>(l.kernel);
  switch (l.kind) {
    case LayerKind::Conv:
      return {static_cast<std::size_t>(l.out_channels), k, k, static_cast<std::size_t>(in.channels)};
    case LayerKind::DepthwiseConv:
      return {k, k, static_cast<std::size_t>(in.channels)};
    case LayerKind::Fc:
      return {static_cast<std::size_t>(l.out_channels), static_cast<std::size_t>(in.elements())};
    default:
      return {};
  }
}

inline std::size_t fan_in(const LayerSpec& l, const FeatureMapShape& in) {
  const auto k2 = static_cast<std::size_t>(l.kernel * l.kernel);
  switch (l.kind) {
    case LayerKind::Conv: return k2 * static_cast<std::size_t>(in.channels);
    case LayerKind::DepthwiseConv: return k2;
    case LayerKind::Fc: return static_cast<std::size_t>(in.elements());
    default: return 0;
  }
}

}  // namespace detail

inline void validate(const NetworkSpec& net, const WeightSet& w) {
  const auto shapes = infer_shapes(net);
  if (w.layers.size() != net.layers.size())
    throw Error(ErrorCode::ShapeMismatch, "weight set does not cover every layer");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& spec = net.layers[l];
    const auto& lw = w.layers[l];
    if (!spec.has_weights()) {
      if (!lw.kernel.empty() || !lw.bias.empty())
        throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " takes no weights");
      continue;
    }
    const auto out_c = static_cast<std::size_t>(shapes[l + 1].channels);
    if (lw.kernel.dims() != detail::kernel_dims(spec, shapes[l]) || lw.bias.dims() != std::vector<std::size_t>{out_c})
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " weight dims do not match");
  }
}

// Gaussian(0, 1/fan_in) kernels and zero biases from a fixed seed.
inline WeightSet synthetic_weights(const NetworkSpec& net, std::uint64_t seed) {
  const auto shapes = infer_shapes(net);
  std::mt19937_64 rng(seed);
  WeightSet w;
  w.seed = seed;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& spec = net.layers[l];
    LayerWeights lw;
    if (spec.has_weights()) {
      lw.kernel = Tensor(detail::kernel_dims(spec, shapes[l]));
      std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(detail::fan_in(spec, shapes[l]))));
      for (auto& v : lw.kernel.data()) v = static_cast<float>(dist(rng));
      lw.bias = Tensor({static_cast<std::size_t>(shapes[l + 1].channels)}, 0.0f);
    }
    w.layers.push_back(std::move(lw));
  }
  return w;
}

// Pack order: kernel then bias for every weighted layer, in layer order.
inline std::vector<Tensor> weights_to_pack(const WeightSet& w) {
  std::vector<Tensor> out;
  for (const auto& lw : w.layers) {
    if (lw.kernel.empty()) continue;
    out.push_back(lw.kernel);
    out.push_back(lw.bias);
  }
  return out;
}

inline WeightSet weights_from_pack(const NetworkSpec& net, std::vector<Tensor> pack) {
  WeightSet w;
  std::size_t next = 0;
  for (const auto& spec : net.layers) {
    LayerWeights lw;
    if (spec.has_weights()) {
      if (next + 2 > pack.size()) throw Error(ErrorCode::ShapeMismatch, "weight pack has too few tensors");
      lw.kernel = std::move(pack[next++]);
      lw.bias = std::move(pack[next++]);
    }
    w.layers.push_back(std::move(lw));
  }
  if (next != pack.size()) throw Error(ErrorCode::ShapeMismatch, "weight pack has extra tensors");
  validate(net, w);
  return w;
}

// Per-tensor min-max fake quantization of every kernel; biases stay float.
inline WeightSet quantize_weights(const WeightSet& w, int bits) {
  if (bits == kNoQuantBits) return w;
  WeightSet out = w;
  for (auto& lw : out.layers) {
    if (lw.kernel.empty()) continue;
    const auto [mn, mx] = std::minmax_element(lw.kernel.data().begin(), lw.kernel.data().end());
    const ValueRange r{*mn, *mx};
    if (!r.valid()) continue;
    FakeQuantizer(bits, r).apply(lw.kernel.data());
  }
  return out;
}

namespace detail {

// Computes `out_region` of a layer's output from `in`, which holds
// `in_region` of the full input map `in_full`. Positions outside `in_full`
// are zero padding (ignored by max pooling).
inline Tensor run_layer(const LayerSpec& l, const LayerWeights& w, const Tensor& in, const Region& in_region,
                        const FeatureMapShape& in_full, const Region& out_region, const FeatureMapShape& out_full) {
  const bool relu = l.activation == Activation::Relu;
  auto act = [relu](double v) { return static_cast<float>(relu ? std::max(0.0, v) : v); };

  if (l.kind == LayerKind::Fc) {
    if (in_region != Region::whole(in_full)) throw Error(ErrorCode::SpatialOnly, "fc needs the whole input map");
    Tensor out = Tensor::feature_map(out_full);
    const auto n_in = in.size();
    for (std::int64_t o = 0; o < out_full.channels; ++o) {
      double acc = w.bias[static_cast<std::size_t>(o)];
      const std::size_t row = static_cast<std::size_t>(o) * n_in;
      for (std::size_t i = 0; i < n_in; ++i) acc += static_cast<double>(w.kernel[row + i]) * in[i];
      out[static_cast<std::size_t>(o)] = act(acc);
    }
    return out;
  }

  const std::int64_t k = l.kernel;
  const std::int64_t cin = in_full.channels;
  const std::int64_t cout = out_full.channels;
  Tensor out = Tensor::feature_map({out_region.rows(), out_region.cols(), cout});
  for (std::int64_t orow = out_region.row_start; orow < out_region.row_end; ++orow) {
    for (std::int64_t ocol = out_region.col_start; ocol < out_region.col_end; ++ocol) {
      const std::int64_t r0 = orow * l.stride - l.padding;
      const std::int64_t c0 = ocol * l.stride - l.padding;
      auto inside = [&](std::int64_t r, std::int64_t c) { return r >= 0 && r < in_full.height && c >= 0 && c < in_full.width; };
      auto value = [&](std::int64_t r, std::int64_t c, std::int64_t ch) {
        return static_cast<double>(in.at(r - in_region.row_start, c - in_region.col_start, ch));
      };
      for (std::int64_t oc = 0; oc < cout; ++oc) {
        double acc = 0.0;
        switch (l.kind) {
          case LayerKind::Conv: {
            acc = w.bias[static_cast<std::size_t>(oc)];
            for (std::int64_t kh = 0; kh < k; ++kh)
              for (std::int64_t kw = 0; kw < k; ++kw) {
                if (!inside(r0 + kh, c0 + kw)) continue;
                const auto base = static_cast<std::size_t>(((oc * k + kh) * k + kw) * cin);
                for (std::int64_t ic = 0; ic < cin; ++ic)
                  acc += static_cast<double>(w.kernel[base + static_cast<std::size_t>(ic)]) * value(r0 + kh, c0 + kw, ic);
              }
            break;
          }
          case LayerKind::DepthwiseConv: {
            acc = w.bias[static_cast<std::size_t>(oc)];
            for (std::int64_t kh = 0; kh < k; ++kh)
              for (std::int64_t kw = 0; kw < k; ++kw) {
                if (!inside(r0 + kh, c0 + kw)) continue;
                acc += static_cast<double>(w.kernel[static_cast<std::size_t>((kh * k + kw) * cin + oc)]) *
                       value(r0 + kh, c0 + kw, oc);
              }
            break;
          }
          case LayerKind::MaxPool: {
            acc = -std::numeric_limits<double>::infinity();
            for (std::int64_t kh = 0; kh < k; ++kh)
              for (std::int64_t kw = 0; kw < k; ++kw)
                if (inside(r0 + kh, c0 + kw)) acc = std::max(acc, value(r0 + kh, c0 + kw, oc));
            break;
          }
          case LayerKind::AvgPool: {
            for (std::int64_t kh = 0; kh < k; ++kh)
              for (std::int64_t kw = 0; kw < k; ++kw)
                if (inside(r0 + kh, c0 + kw)) acc += value(r0 + kh, c0 + kw, oc);
            acc /= static_cast<double>(k * k);
            break;
          }
          case LayerKind::Fc:
            break;
        }
        out.at(orow - out_region.row_start, ocol - out_region.col_start, oc) = act(acc);
      }
    }
  }
  return out;
}

inline void check_input(const NetworkSpec& net, const Tensor& input) {
  if (input.rank() != 3 || input.shape3() != net.input)
    throw Error(ErrorCode::ShapeMismatch, "input tensor does not match the network input shape");
}

}  // namespace detail

// All feature maps 0..L of a float forward pass; map 0 is the input itself.
inline std::vector<Tensor> forward_fp(const NetworkSpec& net, const WeightSet& weights, const Tensor& input) {
  detail::check_input(net, input);
  const auto shapes = infer_shapes(net);
  std::vector<Tensor> maps{input};
  maps.reserve(shapes.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    maps.push_back(detail::run_layer(net.layers[l], weights.layers[l], maps.back(), Region::whole(shapes[l]),
                                     shapes[l], Region::whole(shapes[l + 1]), shapes[l + 1]));
  }
  return maps;
}

// Layer-based fake-quantized pass: map i is quantized to bits[i] over
// ranges[i] before anything reads it (the final map included). Kernels are
// quantized per tensor to `weight_bits`; 32 disables either.
inline std::vector<Tensor> forward_quant(const NetworkSpec& net, const WeightSet& weights, const Tensor& input,
                                         std::span<const int> bits, std::span<const ValueRange> ranges,
                                         int weight_bits = kWeightBits) {
  detail::check_input(net, input);
  const auto shapes = infer_shapes(net);
  if (bits.size() != shapes.size()) throw Error(ErrorCode::ShapeMismatch, "plan length differs from map count");
  const bool needs_ranges = std::any_of(bits.begin(), bits.end(), [](int b) { return b != kNoQuantBits; });
  if (needs_ranges && ranges.size() != shapes.size()) throw Error(ErrorCode::MissingRange, "one range per map required");
  const WeightSet qw = quantize_weights(weights, weight_bits);
  auto quantize = [&](Tensor& t, std::size_t i) {
    if (bits[i] == kNoQuantBits) return;
    FakeQuantizer(bits[i], ranges[i]).apply(t.data());
  };
  std::vector<Tensor> maps{input};
  quantize(maps[0], 0);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    maps.push_back(detail::run_layer(net.layers[l], qw.layers[l], maps.back(), Region::whole(shapes[l]), shapes[l],
                                     Region::whole(shapes[l + 1]), shapes[l + 1]));
    quantize(maps.back(), l + 1);
  }
  return maps;
}

// Per-branch bitwidths for maps 0..patch_depth plus the bitwidths of the
// merged maps patch_depth + 1..L.
struct PatchPlanBits {
  std::vector<std::vector<int>> branch_bits;
  std::vector<int> post_bits;
};

// Patch-based pass: each branch runs the patch stage on its own regions with
// its own bitwidths, the branch tiles are stitched into map patch_depth, and
// the remaining layers run on whole maps. Returns maps patch_depth..L.
inline std::vector<Tensor> forward_patched(const NetworkSpec& net, const WeightSet& weights, const Tensor& input,
                                           std::span<const DataflowBranch> branches, const PatchPlanBits& plan,
                                           std::span<const ValueRange> ranges, int weight_bits = kWeightBits) {
  detail::check_input(net, input);
  const auto shapes = infer_shapes(net);
  const auto depth = static_cast<std::size_t>(net.patch_depth);
  if (plan.branch_bits.size() != branches.size() || plan.post_bits.size() != shapes.size() - depth - 1)
    throw Error(ErrorCode::ShapeMismatch, "patch plan does not match the branch layout");
  const WeightSet qw = quantize_weights(weights, weight_bits);
  auto quantize = [&](Tensor& t, std::size_t map, int bits) {
    if (bits == kNoQuantBits) return;
    if (ranges.size() != shapes.size()) throw Error(ErrorCode::MissingRange, "one range per map required");
    FakeQuantizer(bits, ranges[map]).apply(t.data());
  };

  Tensor stitched = Tensor::feature_map(shapes[depth]);
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const auto& br = branches[b];
    const auto& bits = plan.branch_bits[b];
    if (bits.size() != depth + 1) throw Error(ErrorCode::ShapeMismatch, "branch bit list has the wrong length");
    Tensor cur = crop(input, br.regions[0]);
    quantize(cur, 0, bits[0]);
    for (std::size_t l = 0; l < depth; ++l) {
      cur = detail::run_layer(net.layers[l], qw.layers[l], cur, br.regions[l], shapes[l], br.regions[l + 1],
                              shapes[l + 1]);
      quantize(cur, l + 1, bits[l + 1]);
    }
    const auto& tile = br.regions[depth];
    for (std::int64_t y = 0; y < tile.rows(); ++y)
      for (std::int64_t x = 0; x < tile.cols(); ++x)
        for (std::int64_t ch = 0; ch < shapes[depth].channels; ++ch)
          stitched.at(tile.row_start + y, tile.col_start + x, ch) = cur.at(y, x, ch);
  }

  std::vector<Tensor> maps{std::move(stitched)};
  for (std::size_t l = depth; l < net.layers.size(); ++l) {
    maps.push_back(detail::run_layer(net.layers[l], qw.layers[l], maps.back(), Region::whole(shapes[l]), shapes[l],
                                     Region::whole(shapes[l + 1]), shapes[l + 1]));
    quantize(maps.back(), l + 1, plan.post_bits[l - depth]);
  }
  return maps;
}

struct CalibrationSet {
  std::vector<Tensor> samples;
  std::vector<std::filesystem::path> sources;
};

// Loads every *.qmtn file in lexicographic order.
inline CalibrationSet load_calibration_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::Io, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".qmtn") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::EmptyCalibration, "no .qmtn files in " + dir.string());
  CalibrationSet cal;
  for (const auto& f : files) {
    cal.samples.push_back(load_tensor(f));
    cal.sources.push_back(f);
  }
  return cal;
}

struct CalibrationPools {
  std::size_t sample_count = 0;
  std::size_t patch_depth = 0;
  // Whole-map value range of every map 0..L over all samples. Constant maps
  // get a unit-width range so quantization stays defined.
  std::vector<ValueRange> ranges;
  // Whole-map Gaussian statistics per map.
  std::vector<GaussianFit> map_fits;
  // branch[b][d]: values of branch b's region of map d (d <= patch_depth)
  // concatenated over samples.
  std::vector<std::vector<std::vector<float>>> branch;
  // shared[i]: whole-map values for maps i > patch_depth; empty otherwise.
  std::vector<std::vector<float>> shared;
  // split[s][b]: branch b's region of map 0 for sample s alone.
  std::vector<std::vector<std::vector<float>>> split;
  // Float final outputs per sample.
  std::vector<Tensor> outputs;
};

namespace detail {

inline void append_region(std::vector<float>& pool, const Tensor& map, const Region& r) {
  const auto s = map.shape3();
  for (std::int64_t y = r.row_start; y < r.row_end; ++y) {
    const auto* row = &map.data()[static_cast<std::size_t>((y * s.width + r.col_start) * s.channels)];
    pool.insert(pool.end(), row, row + r.cols() * s.channels);
  }
}

}  // namespace detail

inline CalibrationPools calibrate(const NetworkSpec& net, const WeightSet& weights, const CalibrationSet& cal,
                                  std::span<const DataflowBranch> branches) {
  if (cal.samples.empty()) throw Error(ErrorCode::EmptyCalibration, "calibration set is empty");
  const auto shapes = infer_shapes(net);
  const auto depth = static_cast<std::size_t>(net.patch_depth);
  const std::size_t n_maps = shapes.size();

  std::vector<std::vector<Tensor>> runs(cal.samples.size());
  parallel_for(cal.samples.size(), [&](std::size_t s) { runs[s] = forward_fp(net, weights, cal.samples[s]); });

  CalibrationPools pools;
  pools.sample_count = cal.samples.size();
  pools.patch_depth = depth;
  pools.branch.assign(branches.size(), std::vector<std::vector<float>>(depth + 1));
  pools.shared.assign(n_maps, {});
  pools.split.assign(cal.samples.size(), std::vector<std::vector<float>>(branches.size()));
  std::vector<double> lo(n_maps, std::numeric_limits<double>::infinity());
  std::vector<double> hi(n_maps, -std::numeric_limits<double>::infinity());
  std::vector<GaussianAccumulator> acc(n_maps);

  for (std::size_t s = 0; s < runs.size(); ++s) {
    const auto& maps = runs[s];
    for (std::size_t i = 0; i < n_maps; ++i) {
      const auto [mn, mx] = std::minmax_element(maps[i].data().begin(), maps[i].data().end());
      lo[i] = std::min<double>(lo[i], *mn);
      hi[i] = std::max<double>(hi[i], *mx);
      acc[i].add(maps[i].data());
      if (i > depth) pools.shared[i].insert(pools.shared[i].end(), maps[i].data().begin(), maps[i].data().end());
    }
    for (std::size_t b = 0; b < branches.size(); ++b) {
      for (std::size_t d = 0; d <= depth; ++d) detail::append_region(pools.branch[b][d], maps[d], branches[b].regions[d]);
      detail::append_region(pools.split[s][b], maps[0], branches[b].regions[0]);
    }
    pools.outputs.push_back(maps.back());
  }
  for (std::size_t i = 0; i < n_maps; ++i) {
    pools.ranges.push_back(hi[i] > lo[i] ? ValueRange{lo[i], hi[i]} : ValueRange{lo[i], lo[i] + 1.0});
    pools.map_fits.push_back(shapes[i].elements() * static_cast<std::int64_t>(runs.size()) >= 2
                                 ? acc[i].fit()
                                 : GaussianFit{lo[i], 0.0, 1});
  }
  return pools;
}

}  // namespace quantmcu
