#pragma once

// JSON network description:
//   {"name": ..., "input": {"height","width","channels"},
//    "layers": [{"kind","kernel","stride","padding","out_channels","activation"}],
//    "patch": {"grid": [rows, cols], "depth": s}}
// Unknown keys are rejected.

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <json.hpp>

#include "quantmcu/error.hpp"
#include "quantmcu/netgraph.hpp"

namespace quantmcu {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(ErrorCode::Parse, where + ": unknown key '" + it.key() + "'");
  }
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorCode::Parse, where + ": missing key '" + key + "'");
  return *it;
}

inline std::int64_t as_int(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number_integer()) throw Error(ErrorCode::Parse, where + ": expected an integer");
  return v.get<std::int64_t>();
}

inline std::string as_string(const nlohmann::json& v, const std::string& where) {
  if (!v.is_string()) throw Error(ErrorCode::Parse, where + ": expected a string");
  return v.get<std::string>();
}

inline LayerKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "depthwise_conv") return LayerKind::DepthwiseConv;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "avgpool") return LayerKind::AvgPool;
  if (s == "fc") return LayerKind::Fc;
  throw Error(ErrorCode::Parse, where + ": unknown layer kind '" + s + "'");
}

inline std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace detail

inline NetworkSpec network_from_json(const nlohmann::json& doc) {
  using namespace detail;
  if (!doc.is_object()) throw Error(ErrorCode::Parse, "top level must be an object");
  reject_unknown_keys(doc, {"name", "input", "layers", "patch"}, "network");
  NetworkSpec net;
  net.name = as_string(require(doc, "name", "network"), "name");

  const auto& input = require(doc, "input", "network");
  if (!input.is_object()) throw Error(ErrorCode::Parse, "input: expected an object");
  reject_unknown_keys(input, {"height", "width", "channels"}, "input");
  net.input.height = as_int(require(input, "height", "input"), "input.height");
  net.input.width = as_int(require(input, "width", "input"), "input.width");
  net.input.channels = as_int(require(input, "channels", "input"), "input.channels");

  const auto& layers = require(doc, "layers", "network");
  if (!layers.is_array()) throw Error(ErrorCode::Parse, "layers: expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto where = "layers[" + std::to_string(i) + "]";
    const auto& lj = layers[i];
    if (!lj.is_object()) throw Error(ErrorCode::Parse, where + ": expected an object");
    reject_unknown_keys(lj, {"kind", "kernel", "stride", "padding", "out_channels", "activation"}, where);
    LayerSpec l;
    l.kind = parse_kind(as_string(require(lj, "kind", where), where + ".kind"), where + ".kind");
    if (lj.contains("kernel")) l.kernel = static_cast<int>(as_int(lj["kernel"], where + ".kernel"));
    if (lj.contains("stride")) l.stride = static_cast<int>(as_int(lj["stride"], where + ".stride"));
    if (lj.contains("padding")) l.padding = static_cast<int>(as_int(lj["padding"], where + ".padding"));
    if (lj.contains("out_channels"))
      l.out_channels = static_cast<int>(as_int(lj["out_channels"], where + ".out_channels"));
    if (lj.contains("activation")) {
      const auto a = as_string(lj["activation"], where + ".activation");
      if (a == "relu") l.activation = Activation::Relu;
      else if (a != "none") throw Error(ErrorCode::Parse, where + ".activation: unknown value '" + a + "'");
    }
    net.layers.push_back(l);
  }

  const auto& patch = require(doc, "patch", "network");
  if (!patch.is_object()) throw Error(ErrorCode::Parse, "patch: expected an object");
  reject_unknown_keys(patch, {"grid", "depth"}, "patch");
  const auto& grid = require(patch, "grid", "patch");
  if (!grid.is_array() || grid.size() != 2) throw Error(ErrorCode::Parse, "patch.grid: expected [rows, cols]");
  net.grid_rows = static_cast<int>(as_int(grid[0], "patch.grid[0]"));
  net.grid_cols = static_cast<int>(as_int(grid[1], "patch.grid[1]"));
  net.patch_depth = static_cast<int>(as_int(require(patch, "depth", "patch"), "patch.depth"));

  validate(net);
  return net;
}

inline NetworkSpec parse_network(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Parse, "line " + std::to_string(detail::line_of(text, e.byte)) + ": " + e.what());
  }
  return network_from_json(doc);
}

inline NetworkSpec load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str());
}

inline nlohmann::json network_to_json(const NetworkSpec& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json lj{{"kind", std::string(to_string(l.kind))}};
    if (l.kind != LayerKind::Fc) {
      lj["kernel"] = l.kernel;
      lj["stride"] = l.stride;
      lj["padding"] = l.padding;
    }
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Fc) lj["out_channels"] = l.out_channels;
    lj["activation"] = std::string(to_string(l.activation));
    layers.push_back(std::move(lj));
  }
  return {{"name", net.name},
          {"input", {{"height", net.input.height}, {"width", net.input.width}, {"channels", net.input.channels}}},
          {"layers", std::move(layers)},
          {"patch", {{"grid", {net.grid_rows, net.grid_cols}}, {"depth", net.patch_depth}}}};
}

}  // namespace quantmcu
