// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "carmen/model_io.hpp"
#include "test_util.hpp"

using namespace carmen;
using carmen::testing::f32_blob;

namespace {

const char* kDense2 = R"({
  "name": "tiny",
  "input_shape": [2],
  "layers": [
    {
      "name": "fc",
      "kind": "dense",
      "dims": {"in": 2, "out": 2},
      "activation": "relu",
      "weight_offset": 0,
      "bias_offset": 4
    }
  ]
})";

ModelErrorCode code_of(const std::string& text, const std::vector<std::uint8_t>& blob) {
  try {
    (void)load_manifest(text, blob);
  } catch (const ModelError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return ModelErrorCode::malformed;
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto p = s.find(from);
  EXPECT_NE(p, std::string::npos) << from;
  return s.replace(p, from.size(), to);
}

}  // namespace

TEST(Manifest, LoadsDense) {
  const Model m = load_manifest(kDense2, f32_blob({1, 2, 3, 4, 0.5, -0.5}));
  ASSERT_EQ(m.layers.size(), 1U);
  const LayerSpec& l = m.layers[0];
  EXPECT_EQ(m.name, "tiny");
  EXPECT_EQ(l.id, "fc");
  EXPECT_EQ(l.line, 5);
  EXPECT_EQ(l.weight_count(), 4U);
  EXPECT_EQ(l.dot_count(), 2U);
  EXPECT_EQ(l.dot_length(), 2U);
  EXPECT_EQ(m.tensors[0].bias, (std::vector<double>{0.5, -0.5}));
  EXPECT_EQ(m.layer_widths(), (std::vector<std::size_t>{2, 2}));
}

TEST(Manifest, ErrorCodes) {
  const auto ok = f32_blob({1, 2, 3, 4, 0.5, -0.5});
  EXPECT_EQ(code_of("{\"input_shape\": [2], ", ok), ModelErrorCode::malformed);
  EXPECT_EQ(code_of(R"({"input_shape": [2], "layers": []})", ok), ModelErrorCode::no_layers);
  EXPECT_EQ(code_of(replace(kDense2, "\"activation\": \"relu\",", ""), ok),
            ModelErrorCode::missing_field);
  EXPECT_EQ(code_of(replace(kDense2, "\"relu\"", "\"mish\""), ok), ModelErrorCode::bad_value);
  EXPECT_EQ(code_of(replace(kDense2, "\"out\": 2", "\"out\": -2"), ok), ModelErrorCode::bad_value);
  EXPECT_EQ(code_of(kDense2, f32_blob({1, 2, 3, 4, 0.5})), ModelErrorCode::offset_out_of_range);
  EXPECT_EQ(code_of(kDense2, f32_blob({1, 2, 3, 4, 0.5, -0.5, 9})),
            ModelErrorCode::length_mismatch);
  EXPECT_EQ(code_of(replace(kDense2, "\"in\": 2", "\"in\": 3"), ok),
            ModelErrorCode::shape_mismatch);
  EXPECT_EQ(code_of(kDense2, f32_blob({1, 2, NAN, 4, 0.5, -0.5})), ModelErrorCode::bad_value);
}

TEST(Manifest, ErrorsCarryLineAndLayer) {
  const std::string two = R"({
  "input_shape": [2],
  "layers": [
    {"kind": "dense", "dims": {"in": 2, "out": 2}, "activation": "relu",
     "weight_offset": 0},
    {"kind": "dense", "dims": {"in": 2, "out": 1}, "activation": "tanh",
     "weight_offset": 99}
  ]
})";
  try {
    (void)load_manifest(two, f32_blob({1, 2, 3, 4, 5, 6}));
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_EQ(e.code(), ModelErrorCode::offset_out_of_range);
    EXPECT_EQ(e.line(), 6);
    EXPECT_EQ(e.layer(), "layer1");
    EXPECT_NE(std::string(e.what()).find("line 6"), std::string::npos);
  }
}

TEST(Manifest, ConvPoolNorm) {
  const std::string text = R"({
  "input_shape": [1, 4, 4],
  "layers": [
    {"name": "c1", "kind": "conv2d",
     "dims": {"in_channels": 1, "out_channels": 2, "kernel": [3, 3], "padding": [1, 1]},
     "activation": "relu", "weight_offset": 0, "bias_offset": 18,
     "pool": {"kind": "aad", "window": [2, 2]},
     "norm": {"scale_offset": 20, "shift_offset": 22},
     "mode_hint": "approximate"},
    {"name": "fc", "kind": "dense", "dims": {"in": 8, "out": 3},
     "activation": "softmax", "weight_offset": 24}
  ]
})";
  std::vector<double> w(48, 0.25);
  const Model m = load_manifest(text, f32_blob(w));
  EXPECT_EQ(m.layers[0].mac_shape, (Shape{2, 4, 4}));
  EXPECT_EQ(m.layers[0].out_shape, (Shape{2, 2, 2}));
  EXPECT_EQ(m.layers[0].pool->stride_h, 2);
  EXPECT_EQ(m.layers[0].mode_hint, MacKind::approximate);
  EXPECT_EQ(m.layers[0].dot_length(), 9U);
  EXPECT_EQ(m.layer_widths(), (std::vector<std::size_t>{16, 8, 3}));
  EXPECT_EQ(m.tensors[0].norm_scale.size(), 2U);
}

TEST(Manifest, Mnist) {
  const Model& m = carmen::testing::mnist().raw;
  EXPECT_EQ(m.layer_widths(), (std::vector<std::size_t>{196, 64, 32, 32, 10}));
  EXPECT_EQ(m.layers.back().activation, AfKind::softmax);
}

TEST(TensorFile, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "carmen_tensor_rt.bin";
  const std::vector<double> v{0.5, -1.25, 3.0, 0.0, 7.5, -0.125};
  write_tensor_file(path.string(), {2, 3}, v);
  const TensorFile t = read_tensor_file(path.string());
  EXPECT_EQ(t.samples(), 2U);
  EXPECT_EQ(t.sample_size(), 3U);
  EXPECT_EQ(t.sample(1), (std::vector<double>{0.0, 7.5, -0.125}));
  std::filesystem::remove(path);
}

TEST(TensorFile, BadHeaders) {
  auto blob = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_THROW(parse_tensor_blob(blob("no newline")), IoError);
  EXPECT_THROW(parse_tensor_blob(blob("dims 1\n1234")), IoError);
  EXPECT_THROW(parse_tensor_blob(blob("shape 2\n1234")), IoError);
  EXPECT_THROW(parse_tensor_blob(blob("shape 0\n")), IoError);
  EXPECT_THROW(read_tensor_file("/nonexistent/x.bin"), IoError);
}

TEST(Labels, Parse) {
  const auto path = std::filesystem::temp_directory_path() / "carmen_labels.txt";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("3\n7\n\n1\n", f);
    std::fclose(f);
  }
  EXPECT_EQ(read_labels(path.string()), (std::vector<int>{3, 7, 1}));
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("3\nseven\n", f);
    std::fclose(f);
  }
  EXPECT_THROW(read_labels(path.string()), IoError);
  std::filesystem::remove(path);
}

TEST(Calibration, FormatRule) {
  // tools/oracle_values.py
  EXPECT_EQ(calibrated_format(3.2, 8), (FxPFormat{8, 5}));
  EXPECT_EQ(calibrated_format(1.0, 8), (FxPFormat{8, 6}));
  EXPECT_EQ(calibrated_format(0.99, 8), (FxPFormat{8, 7}));
  EXPECT_EQ(calibrated_format(0.0, 16), (FxPFormat{16, 15}));
  EXPECT_EQ(calibrated_format(1e9, 16), (FxPFormat{16, 0}));
  // 0.999 rounds to 128 at Q8.7, one past the largest code
  EXPECT_EQ(calibrated_format(0.999, 8), (FxPFormat{8, 6}));
}

TEST(Calibration, Rejects) {
  const Model m = load_manifest(kDense2, f32_blob({1, 2, 3, 4, 0.5, -0.5}));
  const std::vector<std::vector<double>> one{{0.5, 0.5}};
  EXPECT_THROW(calibrate_formats(m, one, 12), ContractViolation);
  EXPECT_THROW(calibrate_formats(m, std::span<const std::vector<double>>{}, 16),
               ContractViolation);
}

TEST(Oracle, DenseRelu) {
  const Model m = load_manifest(kDense2, f32_blob({1, 2, 3, 4, 0.5, -0.5}));
  const std::vector<double> y = oracle_infer(m, std::vector<double>{1.0, -1.0});
  EXPECT_DOUBLE_EQ(y[0], 0.0);  // 1 - 2 + 0.5 < 0
  EXPECT_DOUBLE_EQ(y[1], 0.0);
  const std::vector<double> z = oracle_infer(m, std::vector<double>{1.0, 1.0});
  EXPECT_DOUBLE_EQ(z[0], 3.5);
  EXPECT_DOUBLE_EQ(z[1], 6.5);
  EXPECT_THROW(oracle_infer(m, std::vector<double>{1.0}), ModelError);
}

TEST(Oracle, MnistSoftmaxSums) {
  const auto& d = carmen::testing::mnist();
  for (std::size_t i = 0; i < 20; ++i) {
    const std::vector<double> y = oracle_infer(d.raw, d.test.sample(i));
    EXPECT_NEAR(std::accumulate(y.begin(), y.end(), 0.0), 1.0, 1e-12);
  }
}

// Properties.

TEST(CalibrationProperty, CalibratedDataQuantizesWithinHalfUlp) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> scale(-6, 6);
  for (int w : {8, 16}) {
    for (int t = 0; t < 2000; ++t) {
      const double s = std::exp2(scale(rng));
      std::uniform_real_distribution<double> u(-s, s);
      std::vector<double> v(17);
      double mx = 0.0;
      for (double& x : v) {
        x = u(rng);
        mx = std::max(mx, std::fabs(x));
      }
      const FxPFormat f = calibrated_format(mx, w);
      for (double x : v) {
        const Narrowed n = quantize_checked(x, f);
        ASSERT_FALSE(n.saturated) << x << " " << f.to_string();
        ASSERT_LE(std::fabs(n.word.value() - x), f.ulp() / 2 + 1e-18);
      }
    }
  }
}

TEST(ManifestProperty, MutationsNeverCrash) {
  // Every single-byte corruption either loads or raises ModelError.
  const std::string base = kDense2;
  const auto blob = f32_blob({1, 2, 3, 4, 0.5, -0.5});
  const std::string junk = "{}[]\",:0-9ax \n";
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (char c : junk) {
      std::string s = base;
      s[i] = c;
      try {
        (void)load_manifest(s, blob);
      } catch (const ModelError&) {
      }
    }
    std::string cut = base.substr(0, i);
    try {
      (void)load_manifest(cut, blob);
    } catch (const ModelError&) {
    }
  }
}
