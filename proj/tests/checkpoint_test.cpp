#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "affconv/checkpoint.hpp"
#include "affconv/testing/random_graphs.hpp"

using namespace affconv;

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint ck;
  ck.meta = {{"model", "aff-monet"}, {"epoch", "3"}};
  ck.tensors.push_back({"conv0.theta0", testkit::random_tensor<double>(3, 4, 1)});
  ck.tensors.push_back({"conv0.bias", Tensor<double>::from_rows({{-0.0, 1e-310, 0.1}})});
  const std::string bytes = serialize_checkpoint(ck);
  const auto back = deserialize_checkpoint(bytes);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_EQ(back.meta, ck.meta);
  EXPECT_EQ(back.tensors[0].value, ck.tensors[0].value);
  EXPECT_TRUE(std::signbit(back.tensors[1].value[0]));
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, PayloadIsLittleEndianFp64) {
  Checkpoint ck;
  ck.tensors.push_back({"x", Tensor<double>::scalar(1.0)});
  const std::string bytes = serialize_checkpoint(ck);
  const std::string header = "affconv-checkpoint 1\ntensors 1\nx 1 1\nend\n";
  ASSERT_EQ(bytes.size(), header.size() + 8);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  // 1.0 = 0x3FF0000000000000
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 6]), 0xF0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 7]), 0x3F);
}

TEST(Checkpoint, RejectsCorruptInput) {
  Checkpoint ck;
  ck.tensors.push_back({"x", Tensor<double>(2, 2, 1.0)});
  std::string bytes = serialize_checkpoint(ck);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), Error);
  EXPECT_THROW(deserialize_checkpoint("not a checkpoint\n"), Error);
}

TEST(Checkpoint, LoadsParamsByName) {
  ad::Param<double> a("a", Tensor<double>(2, 3, 1.5));
  ad::Param<double> b("b", Tensor<double>(1, 3, -1.0));
  const auto ck = checkpoint_from_params<double>({&a, &b});
  const auto path = (std::filesystem::temp_directory_path() / "affconv_ck_test.bin").string();
  save_checkpoint(path, ck);
  ad::Param<float> fa("a", Tensor<float>(2, 3));
  ad::Param<float> fb("b", Tensor<float>(1, 3));
  load_params<float>(load_checkpoint(path), {&fb, &fa});
  EXPECT_EQ(fa.value(1, 2), 1.5f);
  EXPECT_EQ(fb.value(0, 0), -1.0f);
  std::filesystem::remove(path);

  ad::Param<double> wrong("a", Tensor<double>(3, 3));
  try {
    load_params<double>(ck, {&wrong});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  ad::Param<double> missing("zz", Tensor<double>(1, 1));
  EXPECT_THROW(load_params<double>(ck, {&missing}), Error);
}
