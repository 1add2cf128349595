#pragma once

// JSON plan report: config, branches (class, policy, bits, score tables),
// post_stage_bits, totals, fidelity, warnings, and the optional dynamic
// summary. plan_from_json reverses plan_to_json.

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include <json.hpp>

#include "quantmcu/error.hpp"
#include "quantmcu/pipeline.hpp"

namespace quantmcu {

namespace detail {

using nlohmann::json;

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> read_optional(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline std::string_view to_string(SqnrStatus s) {
  switch (s) {
    case SqnrStatus::Finite: return "finite";
    case SqnrStatus::Infinite: return "infinite";
    case SqnrStatus::NotApplicable: return "not_applicable";
  }
  return "?";
}

inline SqnrStatus parse_sqnr_status(const std::string& s) {
  if (s == "finite") return SqnrStatus::Finite;
  if (s == "infinite") return SqnrStatus::Infinite;
  if (s == "not_applicable") return SqnrStatus::NotApplicable;
  throw Error(ErrorCode::Parse, "unknown sqnr_status '" + s + "'");
}

inline json fidelity_to_json(const Fidelity& f) {
  return {{"sqnr_db", optional_number(f.sqnr_db)},
          {"sqnr_status", std::string(to_string(f.sqnr_status))},
          {"agreement", optional_number(f.agreement)}};
}

inline Fidelity fidelity_from_json(const json& j) {
  return {read_optional(j.at("sqnr_db")), parse_sqnr_status(j.at("sqnr_status").get<std::string>()),
          read_optional(j.at("agreement"))};
}

inline json table_to_json(const std::optional<QuantScoreTable>& t) {
  if (!t) return nullptr;
  json maps = json::array();
  for (std::size_t i = 0; i < t->maps.size(); ++i) {
    const auto& m = t->maps[i];
    json cells = json::array();
    for (const auto& c : m.cells)
      cells.push_back({{"bits", c.bits},
                       {"delta_b", c.delta_b},
                       {"phi", c.phi},
                       {"entropy", c.entropy},
                       {"delta_h", c.delta_h},
                       {"omega", c.omega},
                       {"score", c.score},
                       {"entropy_gain", c.delta_h < 0.0}});
    maps.push_back({{"map", i}, {"entropy_fp", m.entropy_fp}, {"ranking", m.ranking}, {"cells", std::move(cells)}});
  }
  return {{"branch_bitops", t->branch_bitops},
          {"last_entropy", t->last_entropy},
          {"degenerate_denominator", t->degenerate_denominator},
          {"maps", std::move(maps)}};
}

inline std::optional<QuantScoreTable> table_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  QuantScoreTable t;
  t.branch_bitops = j.at("branch_bitops").get<double>();
  t.last_entropy = j.at("last_entropy").get<double>();
  t.degenerate_denominator = j.at("degenerate_denominator").get<bool>();
  for (const auto& mj : j.at("maps")) {
    MapScores m;
    m.entropy_fp = mj.at("entropy_fp").get<double>();
    m.ranking = mj.at("ranking").get<std::vector<int>>();
    for (const auto& cj : mj.at("cells")) {
      ScoreCell c;
      c.bits = cj.at("bits").get<int>();
      c.delta_b = cj.at("delta_b").get<double>();
      c.phi = cj.at("phi").get<double>();
      c.entropy = cj.at("entropy").get<double>();
      c.delta_h = cj.at("delta_h").get<double>();
      c.omega = cj.at("omega").get<double>();
      c.score = cj.at("score").get<double>();
      m.cells.push_back(c);
    }
    t.maps.push_back(std::move(m));
  }
  return t;
}

inline std::string_view to_string(OutlierRule r) { return r == OutlierRule::Eq1Literal ? "raw_density" : "normalized_tail"; }
inline std::string_view to_string(PhiBaseline b) { return b == PhiBaseline::Fp32 ? "fp32" : "int8"; }

}  // namespace detail

inline nlohmann::json config_to_json(const PlanConfig& c) {
  using nlohmann::json;
  const auto& s = c.search;
  return {{"phi", c.phi},
          {"lambda", s.lambda},
          {"k", s.bins},
          {"M", s.mem_limit < std::numeric_limits<double>::infinity() ? json(s.mem_limit) : json(nullptr)},
          {"candidates", s.candidates},
          {"seed", c.seed ? json(*c.seed) : json(nullptr)},
          {"b_last", s.b_last},
          {"phi_baseline", std::string(detail::to_string(s.phi_baseline))},
          {"outlier_rule", std::string(detail::to_string(c.outlier_rule))},
          {"strict_grid", c.strict_grid},
          {"dynamic", c.dynamic},
          {"weight_bits", c.weight_bits}};
}

inline PlanConfig config_from_json(const nlohmann::json& j) {
  PlanConfig c;
  c.phi = j.at("phi").get<double>();
  c.search.lambda = j.at("lambda").get<double>();
  c.search.bins = j.at("k").get<std::size_t>();
  c.search.mem_limit = j.at("M").is_null() ? std::numeric_limits<double>::infinity() : j.at("M").get<double>();
  c.search.candidates = j.at("candidates").get<std::vector<int>>();
  if (!j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
  c.search.b_last = j.at("b_last").get<int>();
  c.search.phi_baseline = j.at("phi_baseline").get<std::string>() == "fp32" ? PhiBaseline::Fp32 : PhiBaseline::Int8;
  c.outlier_rule = j.at("outlier_rule").get<std::string>() == "raw_density" ? OutlierRule::Eq1Literal
                                                                             : OutlierRule::NormalizedTail;
  c.strict_grid = j.at("strict_grid").get<bool>();
  c.dynamic = j.at("dynamic").get<bool>();
  c.weight_bits = j.at("weight_bits").get<int>();
  return c;
}

inline nlohmann::json totals_to_json(const PlanTotals& t) {
  return {{"bitops_layer_based", t.bitops_layer_based},
          {"bitops_patch8", t.bitops_patch8},
          {"bitops_plan", t.bitops_plan},
          {"peak_mem_layer_based", t.peak_mem_layer_based},
          {"peak_mem_patch8", t.peak_mem_patch8},
          {"peak_mem_plan", t.peak_mem_plan},
          {"redundancy_ratio", t.redundancy_ratio}};
}

inline nlohmann::json plan_to_json(const QuantPlan& p) {
  using nlohmann::json;
  json branches = json::array();
  for (const auto& b : p.branches) {
    branches.push_back({{"patch_id", {b.patch_row, b.patch_col}},
                        {"class", std::string(to_string(b.cls.label))},
                        {"policy", std::string(to_string(b.policy.policy))},
                        {"outlier_count", b.cls.outlier_count},
                        {"fraction_outlier_values", b.cls.fraction_outlier_values},
                        {"outlier_samples", b.outlier_samples},
                        {"bits", b.bits},
                        {"score_table", detail::table_to_json(b.table)}});
  }
  json doc{{"network", p.network},
           {"config", config_to_json(p.config)},
           {"branches", std::move(branches)},
           {"post_stage_bits", p.post_stage_bits},
           {"post_stage_score_table", detail::table_to_json(p.post_stage_table)},
           {"totals", totals_to_json(p.totals)},
           {"fidelity", detail::fidelity_to_json(p.fidelity)},
           {"warnings", p.warnings}};
  if (p.dynamic) {
    doc["dynamic"] = {{"mean_bitops", p.dynamic->mean_bitops},
                      {"max_peak_mem", p.dynamic->max_peak_mem},
                      {"mean_outlier_fraction", p.dynamic->mean_outlier_fraction},
                      {"fidelity", detail::fidelity_to_json(p.dynamic->fidelity)}};
  }
  return doc;
}

inline QuantPlan plan_from_json(const nlohmann::json& j) {
  try {
    QuantPlan p;
    p.network = j.at("network").get<std::string>();
    p.config = config_from_json(j.at("config"));
    std::size_t id = 0;
    for (const auto& bj : j.at("branches")) {
      BranchRecord b;
      b.id = id++;
      b.patch_row = bj.at("patch_id").at(0).get<int>();
      b.patch_col = bj.at("patch_id").at(1).get<int>();
      b.cls.branch_id = b.id;
      b.cls.label = bj.at("class").get<std::string>() == "outlier" ? PatchLabel::OutlierClass
                                                                   : PatchLabel::NonOutlierClass;
      b.cls.outlier_count = bj.at("outlier_count").get<std::size_t>();
      b.cls.fraction_outlier_values = bj.at("fraction_outlier_values").get<double>();
      b.policy = {b.id, bj.at("policy").get<std::string>() == "fixed8" ? Policy::Fixed8 : Policy::MixedPrecision};
      b.outlier_samples = bj.at("outlier_samples").get<std::size_t>();
      b.bits = bj.at("bits").get<std::vector<int>>();
      b.table = detail::table_from_json(bj.at("score_table"));
      p.branches.push_back(std::move(b));
    }
    p.post_stage_bits = j.at("post_stage_bits").get<std::vector<int>>();
    p.post_stage_table = detail::table_from_json(j.at("post_stage_score_table"));
    const auto& t = j.at("totals");
    p.totals.bitops_layer_based = t.at("bitops_layer_based").get<std::uint64_t>();
    p.totals.bitops_patch8 = t.at("bitops_patch8").get<std::uint64_t>();
    p.totals.bitops_plan = t.at("bitops_plan").get<std::uint64_t>();
    p.totals.peak_mem_layer_based = t.at("peak_mem_layer_based").get<std::uint64_t>();
    p.totals.peak_mem_patch8 = t.at("peak_mem_patch8").get<std::uint64_t>();
    p.totals.peak_mem_plan = t.at("peak_mem_plan").get<std::uint64_t>();
    p.totals.redundancy_ratio = t.at("redundancy_ratio").get<double>();
    p.fidelity = detail::fidelity_from_json(j.at("fidelity"));
    p.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("dynamic")) {
      const auto& d = j.at("dynamic");
      DynamicSummary dyn;
      dyn.mean_bitops = d.at("mean_bitops").get<double>();
      dyn.max_peak_mem = d.at("max_peak_mem").get<std::uint64_t>();
      dyn.mean_outlier_fraction = d.at("mean_outlier_fraction").get<double>();
      dyn.fidelity = detail::fidelity_from_json(d.at("fidelity"));
      p.dynamic = dyn;
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("plan report: ") + e.what());
  }
}

// Sweep rows carry the summary columns plus each row's full plan.
inline nlohmann::json sweep_to_json(const SweepResult& s) {
  using nlohmann::json;
  json rows = json::array();
  for (const auto& r : s.rows) {
    json row{{"value", r.value}, {"ok", r.ok}};
    if (r.ok) {
      const auto& p = *r.plan;
      row["bitops_plan"] = p.totals.bitops_plan;
      row["peak_mem_plan"] = p.totals.peak_mem_plan;
      row["outlier_fraction"] = p.outlier_fraction();
      row["sqnr_db"] = detail::optional_number(p.fidelity.sqnr_db);
      row["agreement"] = detail::optional_number(p.fidelity.agreement);
      if (p.dynamic) row["dynamic_outlier_fraction"] = p.dynamic->mean_outlier_fraction;
      row["plan"] = plan_to_json(p);
    } else {
      row["error"] = r.error;
    }
    rows.push_back(std::move(row));
  }
  return {{"param", std::string(to_string(s.param))}, {"grid", s.grid}, {"rows", std::move(rows)}};
}

}  // namespace quantmcu
