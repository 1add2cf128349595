#pragma once

// Patch classification from activation values. A patch whose input values contain
// at least one outlier is OutlierClass and keeps 8-bit feature maps along its
// whole dataflow branch; every other patch is searched for mixed precision.

#include <span>
#include <string>
#include <vector>

#include "quantmcu/actstats.hpp"
#include "quantmcu/error.hpp"

namespace quantmcu {

enum class PatchLabel { NonOutlierClass, OutlierClass };
enum class Policy { Fixed8, MixedPrecision };

struct PatchClass {
  std::size_t branch_id = 0;
  PatchLabel label = PatchLabel::NonOutlierClass;
  std::size_t outlier_count = 0;
  double fraction_outlier_values = 0.0;
};

struct BranchPolicy {
  std::size_t branch_id = 0;
  Policy policy = Policy::MixedPrecision;
};

// A zero-sigma fit means no value deviates from the mean, so nothing is an outlier.
inline PatchClass classify_patch(std::span<const float> values, const OutlierModel& om, std::size_t branch_id = 0) {
  if (values.empty()) throw Error(ErrorCode::EmptyPatch, "patch " + std::to_string(branch_id) + " has no values");
  validate(om);
  PatchClass pc;
  pc.branch_id = branch_id;
  if (!om.fit.degenerate()) {
    for (float v : values)
      if (classify_value(v, om) == ValueClass::Outlier) ++pc.outlier_count;
  }
  pc.fraction_outlier_values = static_cast<double>(pc.outlier_count) / static_cast<double>(values.size());
  pc.label = pc.outlier_count > 0 ? PatchLabel::OutlierClass : PatchLabel::NonOutlierClass;
  return pc;
}

struct ClassificationResult {
  // Static planning label per branch: OutlierClass unless a strict majority
  // of samples saw the patch as NonOutlierClass.
  std::vector<PatchClass> classes;
  // per_sample[s][b]: the patch of branch b under calibration sample s.
  std::vector<std::vector<PatchClass>> per_sample;
  // outlier_samples[b]: samples in which branch b was OutlierClass.
  std::vector<std::size_t> outlier_samples;
  std::vector<std::string> warnings;
};

// split[s][b] holds branch b's input-patch values (its map-0 region) for sample s.
inline ClassificationResult classify_all(const std::vector<std::vector<std::vector<float>>>& split,
                                         const OutlierModel& om) {
  if (split.empty()) throw Error(ErrorCode::EmptyCalibration, "no calibration samples to classify");
  const std::size_t n_branches = split.front().size();
  ClassificationResult res;
  if (om.fit.degenerate())
    res.warnings.push_back("input feature map has zero variance; every patch is NonOutlierClass");
  res.outlier_samples.assign(n_branches, 0);
  std::vector<std::size_t> value_totals(n_branches, 0);
  std::vector<std::size_t> outlier_totals(n_branches, 0);
  for (const auto& sample : split) {
    if (sample.size() != n_branches) throw Error(ErrorCode::ShapeMismatch, "branch count differs between samples");
    std::vector<PatchClass> row;
    row.reserve(n_branches);
    for (std::size_t b = 0; b < n_branches; ++b) {
      row.push_back(classify_patch(sample[b], om, b));
      if (row.back().label == PatchLabel::OutlierClass) ++res.outlier_samples[b];
      value_totals[b] += sample[b].size();
      outlier_totals[b] += row.back().outlier_count;
    }
    res.per_sample.push_back(std::move(row));
  }
  for (std::size_t b = 0; b < n_branches; ++b) {
    PatchClass pc;
    pc.branch_id = b;
    const bool majority_clean = 2 * (split.size() - res.outlier_samples[b]) > split.size();
    pc.label = majority_clean ? PatchLabel::NonOutlierClass : PatchLabel::OutlierClass;
    // The static record counts outliers only when it carries the outlier label.
    pc.outlier_count = majority_clean ? 0 : outlier_totals[b];
    pc.fraction_outlier_values =
        static_cast<double>(outlier_totals[b]) / static_cast<double>(std::max<std::size_t>(1, value_totals[b]));
    res.classes.push_back(pc);
  }
  return res;
}

inline BranchPolicy assign_policy(const PatchClass& pc) {
  return {pc.branch_id, pc.label == PatchLabel::OutlierClass ? Policy::Fixed8 : Policy::MixedPrecision};
}

inline std::vector<BranchPolicy> assign_policies(std::span<const PatchClass> classes) {
  std::vector<BranchPolicy> out;
  out.reserve(classes.size());
  for (const auto& pc : classes) out.push_back(assign_policy(pc));
  return out;
}

inline std::string_view to_string(PatchLabel l) {
  return l == PatchLabel::OutlierClass ? "outlier" : "non_outlier";
}
inline std::string_view to_string(Policy p) { return p == Policy::Fixed8 ? "fixed8" : "mixed_precision"; }

}  // namespace quantmcu
