#pragma once

// Dense row-major float tensor and the QMTN binary container.
//
// QMTN record (little-endian):
//   "QMTN" | u8 version = 1 | u8 dtype = 0 (float32) | u8 rank | u8 pad
//   | rank x u32 dims | row-major float32 payload

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "quantmcu/error.hpp"
#include "quantmcu/netgraph.hpp"

namespace quantmcu {

static_assert(std::endian::native == std::endian::little, "QMTN I/O assumes a little-endian host");

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, float fill = 0.0f)
      : dims_(std::move(dims)), data_(element_count(dims_), fill) {}
  Tensor(std::vector<std::size_t> dims, std::vector<float> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != element_count(dims_))
      throw Error(ErrorCode::ShapeMismatch, "tensor payload does not match its dims");
  }

  static Tensor feature_map(const FeatureMapShape& s, float fill = 0.0f) {
    return Tensor({static_cast<std::size_t>(s.height), static_cast<std::size_t>(s.width),
                   static_cast<std::size_t>(s.channels)},
                  fill);
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::vector<float>& data() noexcept { return data_; }
  const std::vector<float>& data() const noexcept { return data_; }
  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // Activation tensors are (height, width, channels).
  FeatureMapShape shape3() const {
    if (dims_.size() != 3) throw Error(ErrorCode::ShapeMismatch, "expected a rank-3 feature map");
    return {static_cast<std::int64_t>(dims_[0]), static_cast<std::int64_t>(dims_[1]),
            static_cast<std::int64_t>(dims_[2])};
  }
  float& at(std::int64_t r, std::int64_t c, std::int64_t ch) noexcept {
    return data_[static_cast<std::size_t>((r * static_cast<std::int64_t>(dims_[1]) + c) *
                                              static_cast<std::int64_t>(dims_[2]) + ch)];
  }
  float at(std::int64_t r, std::int64_t c, std::int64_t ch) const noexcept {
    return data_[static_cast<std::size_t>((r * static_cast<std::int64_t>(dims_[1]) + c) *
                                              static_cast<std::int64_t>(dims_[2]) + ch)];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor&) const = default;

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<float> data_;
};

// Copies the region of a rank-3 map into its own tensor.
inline Tensor crop(const Tensor& map, const Region& r) {
  const auto s = map.shape3();
  Tensor out = Tensor::feature_map({r.rows(), r.cols(), s.channels});
  for (std::int64_t y = 0; y < r.rows(); ++y)
    for (std::int64_t x = 0; x < r.cols(); ++x)
      for (std::int64_t ch = 0; ch < s.channels; ++ch)
        out.at(y, x, ch) = map.at(r.row_start + y, r.col_start + x, ch);
  return out;
}

inline constexpr std::array<char, 4> kQmtnMagic{'Q', 'M', 'T', 'N'};

inline void write_qmtn(std::ostream& os, const Tensor& t) {
  if (t.rank() > 255) throw Error(ErrorCode::Io, "tensor rank too large for QMTN");
  os.write(kQmtnMagic.data(), 4);
  const std::uint8_t header[4] = {1, 0, static_cast<std::uint8_t>(t.rank()), 0};
  os.write(reinterpret_cast<const char*>(header), 4);
  for (auto d : t.dims()) {
    const auto d32 = static_cast<std::uint32_t>(d);
    os.write(reinterpret_cast<const char*>(&d32), 4);
  }
  os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!os) throw Error(ErrorCode::Io, "failed writing QMTN record");
}

// Reads one record; returns false on clean end of stream.
inline bool read_qmtn(std::istream& is, Tensor& out) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (is.gcount() == 0 && is.eof()) return false;
  if (is.gcount() != 4 || magic != kQmtnMagic) throw Error(ErrorCode::Io, "bad QMTN magic");
  std::uint8_t header[4];
  is.read(reinterpret_cast<char*>(header), 4);
  if (!is) throw Error(ErrorCode::Io, "truncated QMTN header");
  if (header[0] != 1) throw Error(ErrorCode::Io, "unsupported QMTN version " + std::to_string(header[0]));
  if (header[1] != 0) throw Error(ErrorCode::Io, "unsupported QMTN dtype " + std::to_string(header[1]));
  std::vector<std::size_t> dims(header[2]);
  for (auto& d : dims) {
    std::uint32_t d32 = 0;
    is.read(reinterpret_cast<char*>(&d32), 4);
    d = d32;
  }
  if (!is) throw Error(ErrorCode::Io, "truncated QMTN dims");
  std::vector<float> data(Tensor::element_count(dims));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!is) throw Error(ErrorCode::Io, "truncated QMTN payload");
  out = Tensor(std::move(dims), std::move(data));
  return true;
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_qmtn(os, t);
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open " + path.string());
  Tensor t;
  if (!read_qmtn(is, t)) throw Error(ErrorCode::Io, path.string() + " is empty");
  return t;
}

inline std::vector<Tensor> load_tensor_pack(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<Tensor> out;
  Tensor t;
  while (read_qmtn(is, t)) out.push_back(std::move(t));
  return out;
}

inline void save_tensor_pack(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& t : tensors) write_qmtn(os, t);
}

}  // namespace quantmcu
