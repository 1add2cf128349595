#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "quantmcu/tensor.hpp"

using namespace quantmcu;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::vector<std::size_t> dims) {
  Tensor t(std::move(dims));
  std::normal_distribution<float> d;
  for (auto& v : t.data()) v = d(rng);
  return t;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("quantmcu_test_" + name); }

}  // namespace

TEST(Tensor, FeatureMapIndexing) {
  auto t = Tensor::feature_map({2, 3, 4});
  t.at(1, 2, 3) = 5.0f;
  EXPECT_EQ(t[t.size() - 1], 5.0f);
  EXPECT_EQ(t.shape3(), (FeatureMapShape{2, 3, 4}));
}

TEST(Tensor, PayloadMismatch) { EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), Error); }

TEST(Tensor, Crop) {
  auto t = Tensor::feature_map({4, 4, 1});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  auto c = crop(t, {1, 3, 2, 4});
  EXPECT_EQ(c.shape3(), (FeatureMapShape{2, 2, 1}));
  EXPECT_EQ(c.at(0, 0, 0), 6.0f);
  EXPECT_EQ(c.at(1, 1, 0), 11.0f);
}

TEST(Qmtn, RecordLayout) {
  Tensor t({2}, std::vector<float>{1.0f, -2.0f});
  std::ostringstream os;
  write_qmtn(os, t);
  const auto s = os.str();
  ASSERT_EQ(s.size(), 4u + 4u + 4u + 8u);
  EXPECT_EQ(s.substr(0, 4), "QMTN");
  EXPECT_EQ(s[4], 1);
  EXPECT_EQ(s[5], 0);
  EXPECT_EQ(s[6], 1);
  EXPECT_EQ(static_cast<unsigned char>(s[8]), 2u);
}

TEST(Qmtn, RoundTripRandom) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> dims(static_cast<std::size_t>(rng() % 4 + 1));
    for (auto& d : dims) d = rng() % 5 + 1;
    auto a = random_tensor(rng, dims);
    std::stringstream ss;
    write_qmtn(ss, a);
    Tensor b;
    ASSERT_TRUE(read_qmtn(ss, b));
    ASSERT_EQ(a, b);
    Tensor c;
    ASSERT_FALSE(read_qmtn(ss, c));
  }
}

TEST(Qmtn, PackRoundTrip) {
  std::mt19937_64 rng(2);
  std::vector<Tensor> pack{random_tensor(rng, {3, 3, 2}), random_tensor(rng, {4}), random_tensor(rng, {2, 5})};
  const auto path = temp_path("pack.qmtn");
  save_tensor_pack(path, pack);
  EXPECT_EQ(load_tensor_pack(path), pack);
  fs::remove(path);
}

TEST(Qmtn, BadMagic) {
  std::stringstream ss("QMTX\x01\x00\x01\x00");
  Tensor t;
  EXPECT_THROW(read_qmtn(ss, t), Error);
}

TEST(Qmtn, Truncated) {
  Tensor a({4}, std::vector<float>{1, 2, 3, 4});
  std::ostringstream os;
  write_qmtn(os, a);
  auto s = os.str();
  std::stringstream cut(s.substr(0, s.size() - 3));
  Tensor t;
  try {
    read_qmtn(cut, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
}

TEST(Qmtn, EmptyFile) {
  const auto path = temp_path("empty.qmtn");
  std::ofstream(path).close();
  EXPECT_THROW(load_tensor(path), Error);
  fs::remove(path);
}
