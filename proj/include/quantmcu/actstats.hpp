#pragma once

// Activation statistics: Gaussian fits, outlier-value tests, uniform
// fake quantization and k-bin histogram entropy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <span>
#include <vector>

#include "quantmcu/error.hpp"

namespace quantmcu {

struct GaussianFit {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
  std::size_t sample_count = 0;

  bool degenerate() const noexcept { return !(sigma > 0.0); }
};

// Welford accumulation; mergeable so pooled fits do not need the raw values.
class GaussianAccumulator {
 public:
  void add(double x) noexcept {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  void add(std::span<const float> xs) noexcept {
    for (float x : xs) add(x);
  }
  GaussianFit fit() const {
    if (n_ < 2) throw Error(ErrorCode::TooFewSamples, "need at least two samples for a Gaussian fit");
    return {mean_, std::sqrt(std::max(0.0, m2_ / static_cast<double>(n_))), n_};
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline GaussianFit fit_gaussian(std::span<const float> samples) {
  GaussianAccumulator acc;
  for (float x : samples) {
    if (!std::isfinite(x)) throw Error(ErrorCode::BadRange, "non-finite sample");
    acc.add(x);
  }
  return acc.fit();
}

enum class ValueClass { NonOutlier, Outlier };

enum class OutlierRule {
  // Outlier iff pdf(x) / pdf(mu) <= 1 - phi, i.e. a two-sided tail test.
  NormalizedTail,
  // Outlier iff the raw density pdf(x) exceeds phi.
  Eq1Literal,
};

struct OutlierModel {
  GaussianFit fit;
  double phi = 0.96;
  OutlierRule rule = OutlierRule::NormalizedTail;

  // |x - mu| at or beyond which a value is an outlier under NormalizedTail.
  double outlier_distance() const {
    return fit.sigma * std::sqrt(-2.0 * std::log1p(-phi));
  }
};

inline void validate(const OutlierModel& om) {
  if (!(om.phi >= 0.0 && om.phi < 1.0)) throw Error(ErrorCode::InvalidConfig, "phi must lie in [0, 1)");
}

inline ValueClass classify_value(double x, const OutlierModel& om) {
  validate(om);
  if (om.fit.degenerate()) throw Error(ErrorCode::DegenerateSigma, "sigma is zero");
  const double d = std::abs(x - om.fit.mu);
  if (om.rule == OutlierRule::Eq1Literal) {
    const double s = om.fit.sigma;
    const double pdf = std::exp(-(d * d) / (2.0 * s * s)) / (std::sqrt(2.0 * std::numbers::pi) * s);
    return pdf > om.phi ? ValueClass::Outlier : ValueClass::NonOutlier;
  }
  return d >= om.outlier_distance() ? ValueClass::Outlier : ValueClass::NonOutlier;
}

inline constexpr int kNoQuantBits = 32;

struct ValueRange {
  double lo = 0.0;
  double hi = 0.0;

  bool valid() const noexcept { return std::isfinite(lo) && std::isfinite(hi) && lo < hi; }
  bool operator==(const ValueRange&) const = default;
};

// Asymmetric min-max affine quantizer, round half away from zero. bits == 32
// is the "no quantization" sentinel.
class FakeQuantizer {
 public:
  FakeQuantizer(int bits, ValueRange range) : bits_(bits), range_(range) {
    if (bits == kNoQuantBits) return;
    if (bits != 2 && bits != 4 && bits != 8)
      throw Error(ErrorCode::UnknownBitwidth, std::to_string(bits));
    if (!range.valid()) throw Error(ErrorCode::BadRange, "quantization range needs lo < hi");
    levels_ = static_cast<double>((1u << bits) - 1u);
    scale_ = (range.hi - range.lo) / levels_;
  }

  bool identity() const noexcept { return bits_ == kNoQuantBits; }

  float operator()(float x) const noexcept {
    if (identity()) return x;
    const double q = std::clamp(std::round((static_cast<double>(x) - range_.lo) / scale_), 0.0, levels_);
    return static_cast<float>(q * scale_ + range_.lo);
  }

  void apply(std::span<float> values) const noexcept {
    if (identity()) return;
    for (auto& v : values) v = (*this)(v);
  }

 private:
  int bits_;
  ValueRange range_;
  double levels_ = 0.0;
  double scale_ = 1.0;
};

inline std::vector<float> fake_quantize(std::span<const float> values, int bits, ValueRange range) {
  const FakeQuantizer q(bits, range);
  std::vector<float> out(values.begin(), values.end());
  q.apply(out);
  return out;
}

struct HistogramStats {
  std::size_t k = 0;
  ValueRange range;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;
  double entropy = 0.0;  // bits
};

// Uniform bin index over [lo, hi]; out-of-range values clamp to the edge bins.
// With k = 256 every point of the 8-bit grid over the same range owns one bin.
inline std::size_t bin_index(double x, ValueRange range, std::size_t k) noexcept {
  const double pos = std::floor((x - range.lo) / (range.hi - range.lo) * static_cast<double>(k));
  if (!(pos > 0.0)) return 0;
  if (pos >= static_cast<double>(k)) return k - 1;
  return static_cast<std::size_t>(pos);
}

inline double entropy_bits(std::span<const std::uint64_t> counts, std::uint64_t total) noexcept {
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

inline HistogramStats histogram_entropy(std::span<const float> values, std::size_t k, ValueRange range) {
  if (values.empty()) throw Error(ErrorCode::EmptyValues, "histogram of an empty pool");
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "histogram needs at least one bin");
  if (!range.valid()) throw Error(ErrorCode::BadRange, "histogram range needs lo < hi");
  HistogramStats h{k, range, std::vector<std::uint64_t>(k, 0), values.size(), 0.0};
  for (float v : values) ++h.counts[bin_index(v, range, k)];
  h.entropy = std::max(0.0, entropy_bits(h.counts, h.total));
  return h;
}

}  // namespace quantmcu
