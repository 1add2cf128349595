// quantmcu: inspect / plan / simulate / sweep.
//
// Exit codes: 0 success, 2 bad input (flags, files, validation), 3 when the
// memory limit cannot be met. Reports are written to a temp file and renamed,
// so a failed run never leaves a partial report behind.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "quantmcu/network_io.hpp"
#include "quantmcu/pipeline.hpp"
#include "quantmcu/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace quantmcu;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitInfeasible = 3;

struct Options {
  std::string net;
  std::string calib;
  std::string weights;
  std::uint64_t seed = 42;
  std::string out;
  double phi = 0.96;
  double lambda = 0.6;
  std::size_t k = 256;
  std::string mem_limit = "inf";
  std::vector<int> candidates{8, 4, 2};
  bool strict_grid = false;
  bool eq1_literal = false;
  std::string phi_baseline = "int8";
  bool dynamic = false;
  std::string param = "lambda";
  std::vector<double> values;
};

void write_report(const std::string& path, const json& doc) {
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    os << doc.dump(2) << '\n';
    os.flush();
    if (!os) {
      os.close();
      fs::remove(tmp);
      throw Error(ErrorCode::Io, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(ErrorCode::Io, "cannot move report into place: " + ec.message());
  }
}

double parse_mem_limit(const std::string& s) {
  if (s == "inf" || s == "none") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !(v > 0.0)) throw Error(ErrorCode::InvalidConfig, "--mem-limit must be a positive byte count or 'inf'");
  return v;
}

PlanConfig plan_config(const Options& o) {
  PlanConfig cfg;
  cfg.phi = o.phi;
  cfg.outlier_rule = o.eq1_literal ? OutlierRule::Eq1Literal : OutlierRule::NormalizedTail;
  cfg.search.lambda = o.lambda;
  cfg.search.bins = o.k;
  cfg.search.mem_limit = parse_mem_limit(o.mem_limit);
  cfg.search.candidates = o.candidates;
  cfg.search.phi_baseline = o.phi_baseline == "fp32" ? PhiBaseline::Fp32 : PhiBaseline::Int8;
  cfg.strict_grid = o.strict_grid;
  cfg.dynamic = o.dynamic;
  if (o.weights.empty()) cfg.seed = o.seed;
  return cfg;
}

PlanContext load_context(const Options& o, const PlanConfig& cfg) {
  NetworkSpec net = load_network(o.net);
  validate(net);
  WeightSet weights = o.weights.empty() ? synthetic_weights(net, o.seed)
                                        : weights_from_pack(net, load_tensor_pack(o.weights));
  CalibrationSet cal = load_calibration_dir(o.calib);
  return prepare_context(std::move(net), std::move(weights), std::move(cal), cfg.strict_grid);
}

std::string shape_str(const FeatureMapShape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

std::string region_str(const Region& r) {
  return "[" + std::to_string(r.row_start) + "," + std::to_string(r.row_end) + ")x[" + std::to_string(r.col_start) +
         "," + std::to_string(r.col_end) + ")";
}

std::string factor(std::uint64_t base, std::uint64_t value) {
  if (value == 0) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fx", static_cast<double>(base) / static_cast<double>(value));
  return buf;
}

std::string sqnr_str(const Fidelity& f) {
  if (f.sqnr_status == SqnrStatus::Infinite) return "inf dB";
  if (!f.sqnr_db) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f dB", *f.sqnr_db);
  return buf;
}

int cmd_inspect(const Options& o) {
  NetworkSpec net = load_network(o.net);
  validate(net);
  const auto shapes = infer_shapes(net);
  const auto macs = mac_count(net, shapes);
  const auto branches = split_patches(net, o.strict_grid);
  const double ratio = redundancy_ratio(branches, shapes[0]);

  std::ostringstream os;
  os << "network " << net.name << "  grid " << net.grid_rows << "x" << net.grid_cols << "  patch depth "
     << net.patch_depth << "\n\n";
  os << "map  layer       k  s  p  output        MACs\n";
  os << "  0  input                " << shape_str(shapes[0]) << "\n";
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    char line[160];
    std::snprintf(line, sizeof line, "%3zu  %-10s %2d %2d %2d  %-12s %llu\n", i + 1, std::string(to_string(l.kind)).c_str(),
                  l.kernel, l.stride, l.padding, shape_str(shapes[i + 1]).c_str(),
                  static_cast<unsigned long long>(macs[i]));
    os << line;
  }
  os << "\nbranches\n";
  json jb = json::array();
  for (const auto& b : branches) {
    os << "  (" << b.patch_row << "," << b.patch_col << ")";
    json regions = json::array();
    for (std::size_t d = 0; d < b.regions.size(); ++d) {
      os << "  d" << d << " " << region_str(b.regions[d]);
      const auto& r = b.regions[d];
      regions.push_back({r.row_start, r.row_end, r.col_start, r.col_end});
    }
    os << "\n";
    jb.push_back({{"patch_id", {b.patch_row, b.patch_col}}, {"regions", regions}, {"overlap_elements", b.overlap_elements}});
  }
  char rr[64];
  std::snprintf(rr, sizeof rr, "%.4g", ratio);
  os << "\nredundancy ratio " << rr << "\n";

  if (!o.out.empty()) {
    json shapes_j = json::array();
    for (const auto& s : shapes) shapes_j.push_back({s.height, s.width, s.channels});
    write_report(o.out, {{"network", network_to_json(net)},
                         {"shapes", shapes_j},
                         {"macs", macs},
                         {"branches", jb},
                         {"redundancy_ratio", ratio}});
  }
  std::cout << os.str();
  return kExitOk;
}

void print_plan_summary(std::ostream& os, const QuantPlan& p) {
  std::size_t outliers = 0;
  for (const auto& b : p.branches) outliers += b.cls.label == PatchLabel::OutlierClass ? 1 : 0;
  os << "patches: " << p.branches.size() << " (" << outliers << " outlier, " << p.branches.size() - outliers
     << " non-outlier)\n";

  // Consumed maps only: the network output keeps b_last.
  std::map<int, std::size_t> hist;
  std::size_t maps = 0;
  for (const auto& b : p.branches)
    for (int bits : b.bits) ++hist[bits], ++maps;
  for (std::size_t i = 0; i + 1 < p.post_stage_bits.size(); ++i) ++hist[p.post_stage_bits[i]], ++maps;
  os << "bitwidths:";
  for (auto it = hist.rbegin(); it != hist.rend(); ++it) {
    char buf[48];
    std::snprintf(buf, sizeof buf, " %d-bit %.1f%%", it->first, 100.0 * static_cast<double>(it->second) / static_cast<double>(maps));
    os << buf;
  }
  os << "\n";

  const auto& t = p.totals;
  os << "BitOPs: plan " << t.bitops_plan << "  patch-8bit " << t.bitops_patch8 << " ("
     << factor(t.bitops_patch8, t.bitops_plan) << ")  layer-8bit " << t.bitops_layer_based << " ("
     << factor(t.bitops_layer_based, t.bitops_plan) << ")\n";
  os << "peak memory: plan " << t.peak_mem_plan << " B  patch-8bit " << t.peak_mem_patch8 << " B ("
     << factor(t.peak_mem_patch8, t.peak_mem_plan) << ")  layer-8bit " << t.peak_mem_layer_based << " B ("
     << factor(t.peak_mem_layer_based, t.peak_mem_plan) << ")\n";
  os << "SQNR: " << sqnr_str(p.fidelity);
  if (p.fidelity.agreement) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "  top-1 agreement %.1f%%", 100.0 * *p.fidelity.agreement);
    os << buf;
  }
  os << "\n";
  if (p.dynamic) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "dynamic: mean BitOPs %.0f  max peak %llu B  outlier fraction %.3f  SQNR %s\n",
                  p.dynamic->mean_bitops, static_cast<unsigned long long>(p.dynamic->max_peak_mem),
                  p.dynamic->mean_outlier_fraction, sqnr_str(p.dynamic->fidelity).c_str());
    os << buf;
  }
  for (const auto& w : p.warnings) os << "warning: " << w << "\n";
}

int cmd_plan(const Options& o, bool simulate) {
  PlanConfig cfg = plan_config(o);
  if (simulate) cfg.dynamic = true;
  const auto ctx = load_context(o, cfg);
  const auto plan = build_plan(ctx, cfg);
  write_report(o.out, plan_to_json(plan));
  std::ostringstream os;
  print_plan_summary(os, plan);
  std::cout << os.str();
  return kExitOk;
}

int cmd_sweep(const Options& o) {
  const PlanConfig cfg = plan_config(o);
  const auto ctx = load_context(o, cfg);
  const SweepParam param = o.param == "phi" ? SweepParam::Phi : SweepParam::Lambda;
  const auto res = sweep(ctx, param, o.values, cfg);
  write_report(o.out, sweep_to_json(res));

  std::ostringstream os;
  os << o.param << "       BitOPs        peak B   outlier  SQNR\n";
  for (const auto& r : res.rows) {
    char buf[160];
    if (!r.ok) {
      std::snprintf(buf, sizeof buf, "%-8.3g  infeasible: %s\n", r.value, r.error.c_str());
    } else {
      const auto& p = *r.plan;
      std::snprintf(buf, sizeof buf, "%-8.3g  %-12llu  %-7llu  %-7.3f  %s\n", r.value,
                    static_cast<unsigned long long>(p.totals.bitops_plan),
                    static_cast<unsigned long long>(p.totals.peak_mem_plan), p.outlier_fraction(),
                    sqnr_str(p.fidelity).c_str());
    }
    os << buf;
  }
  std::cout << os.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantmcu: per-patch bitwidth planner for tiled CNN inference on small devices"};
  app.require_subcommand(1);
  Options o;

  auto add_net = [&](CLI::App* sub) {
    sub->add_option("--net", o.net, "network description (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "report path (JSON)");
    sub->add_flag("--strict-grid", o.strict_grid, "reject grids that do not divide the patch-stage output");
  };
  auto add_plan = [&](CLI::App* sub) {
    add_net(sub);
    sub->get_option("--out")->required();
    sub->add_option("--calib", o.calib, "calibration directory of .qmtn tensors")->required()->check(CLI::ExistingDirectory);
    auto* w = sub->add_option("--weights", o.weights, "weight pack (.qmtn records in layer order)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "synthetic weight seed")->excludes(w);
    sub->add_option("--phi", o.phi, "outlier threshold")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--lambda", o.lambda, "entropy/BitOPs trade-off")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--k", o.k, "histogram bins")->check(CLI::PositiveNumber);
    sub->add_option("--mem-limit", o.mem_limit, "device memory budget in bytes, or 'inf'");
    sub->add_option("--candidates", o.candidates, "candidate bitwidths")->delimiter(',');
    sub->add_flag("--eq1-literal", o.eq1_literal, "outlier iff the raw Gaussian density exceeds phi");
    sub->add_option("--phi-baseline", o.phi_baseline, "BitOPs baseline for the savings term")
        ->check(CLI::IsMember({"int8", "fp32"}));
    sub->add_flag("--dynamic", o.dynamic, "also simulate per-sample patch classification");
  };

  auto* inspect = app.add_subcommand("inspect", "shapes, MACs, branch regions and redundancy");
  add_net(inspect);
  auto* plan = app.add_subcommand("plan", "build a static quantization plan");
  add_plan(plan);
  auto* simulate = app.add_subcommand("simulate", "plan, then compare static and per-sample policies");
  add_plan(simulate);
  auto* sw = app.add_subcommand("sweep", "rebuild the plan over a phi or lambda grid");
  add_plan(sw);
  sw->add_option("--param", o.param, "swept parameter")->check(CLI::IsMember({"phi", "lambda"}))->required();
  sw->add_option("--values", o.values, "strictly increasing grid")->delimiter(',')->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (o.phi >= 1.0) throw Error(ErrorCode::InvalidConfig, "--phi must be below 1");
    if (*inspect) return cmd_inspect(o);
    if (*plan) return cmd_plan(o, false);
    if (*simulate) return cmd_plan(o, true);
    return cmd_sweep(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::Infeasible ? kExitInfeasible : kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
