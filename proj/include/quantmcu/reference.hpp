#pragma once

// Desk-scale reference workload: a small MobileNet-flavoured chain (six
// spatial layers and a classifier) on 32x32x3 inputs, split 2x2 over its
// first three layers, plus a synthetic calibration set.
//
// Calibration images sit on a 16-level intensity grid. Background pixels
// take levels 4..11; some samples also carry a small saturated object
// (levels 0 and 15) in the top-left patch, which is where outlier values
// come from.

#include <cstdint>
#include <random>
#include <vector>

#include "quantmcu/netgraph.hpp"
#include "quantmcu/pipeline.hpp"
#include "quantmcu/refengine.hpp"
#include "quantmcu/tensor.hpp"

namespace quantmcu::reference {

inline constexpr std::uint64_t kSeed = 42;
inline constexpr std::size_t kCalibrationSamples = 8;

inline NetworkSpec network() {
  NetworkSpec net;
  net.name = "reference-32x32";
  net.input = {32, 32, 3};
  net.layers = {
      {LayerKind::Conv, 5, 1, 2, 24, Activation::Relu},
      {LayerKind::DepthwiseConv, 3, 2, 1, 0, Activation::Relu},
      {LayerKind::Conv, 1, 1, 0, 16, Activation::Relu},
      {LayerKind::Conv, 3, 2, 1, 16, Activation::Relu},
      {LayerKind::DepthwiseConv, 3, 1, 1, 0, Activation::Relu},
      {LayerKind::AvgPool, 8, 8, 0, 0, Activation::None},
      {LayerKind::Fc, 1, 1, 0, 10, Activation::None},
  };
  net.grid_rows = 2;
  net.grid_cols = 2;
  net.patch_depth = 3;
  return net;
}

// Every third sample carries the object.
inline bool has_object(std::size_t sample) { return sample % 3 == 0; }

inline Tensor calibration_image(std::mt19937_64& rng, bool object) {
  Tensor t = Tensor::feature_map({32, 32, 3});
  std::uniform_int_distribution<int> level(4, 11);
  for (auto& v : t.data()) v = static_cast<float>(level(rng)) / 15.0f;
  if (object) {
    std::uniform_int_distribution<int> jitter(0, 2);
    const std::int64_t r0 = 2 + jitter(rng);
    const std::int64_t c0 = 2 + jitter(rng);
    for (std::int64_t y = 0; y < 3; ++y)
      for (std::int64_t x = 0; x < 3; ++x)
        for (std::int64_t ch = 0; ch < 3; ++ch) {
          t.at(r0 + y, c0 + x, ch) = 1.0f;
          t.at(r0 + y + 3, c0 + x, ch) = 0.0f;
        }
  }
  return t;
}

inline CalibrationSet calibration(std::uint64_t seed = kSeed, std::size_t count = kCalibrationSamples) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  CalibrationSet cal;
  for (std::size_t s = 0; s < count; ++s) cal.samples.push_back(calibration_image(rng, has_object(s)));
  return cal;
}

// Defaults plus the reference device budget.
inline PlanConfig config() {
  PlanConfig cfg;
  cfg.seed = kSeed;
  cfg.search.mem_limit = 6144;
  return cfg;
}

}  // namespace quantmcu::reference
