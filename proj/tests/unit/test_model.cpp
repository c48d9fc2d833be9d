#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cytocon/checkpoint.hpp"
#include "cytocon/error.hpp"
#include "cytocon/model.hpp"
#include "cytocon/rng.hpp"

using namespace cytocon;

namespace {

EncoderConfig desk_encoder() {
  EncoderConfig e;
  e.stem_stride = 2;
  e.input_side = 64;
  return e;
}

Tensor random_batch(std::size_t n, int side, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, 1, static_cast<std::size_t>(side), static_cast<std::size_t>(side)});
  for (auto& v : t.storage()) v = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace

TEST(Encoder, CanonicalTrace) {
  EncoderConfig e;
  e.input_side = 1129;
  EXPECT_EQ(encoder_spatial_trace(e, 1129), (std::vector<int>{283, 141, 70, 35, 17, 8}));
  EXPECT_EQ(encoder_spatial_trace(e, 128), (std::vector<int>{32, 16, 8, 4, 2, 1}));
  EXPECT_EQ(encoder_spatial_trace(desk_encoder(), 64), (std::vector<int>{32, 16, 8, 4, 2, 1}));
  EXPECT_EQ(e.feature_dim(), 128);
}

TEST(Encoder, IncompatibleSideReportsTrace) {
  EncoderConfig e;
  try {
    encoder_spatial_trace(e, 64);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& err) {
    const std::string msg = err.what();
    EXPECT_NE(msg.find("16 -> 8 -> 4 -> 2 -> 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("block 5"), std::string::npos) << msg;
  }
}

TEST(Encoder, CanonicalForwardShape) {
  // One full-size patch through the canonical network.
  EncoderConfig e;
  e.input_side = 1129;
  const ModelConfig mc{e, {}, 0};
  const auto params = init_params<float>(mc, 3);
  const auto h = encoder_forward(params, e, random_batch(1, 1129, 1), {nn::Mode::kEval});
  EXPECT_EQ(h.shape(), (Shape{1, 128}));
  EXPECT_TRUE(h.all_finite());
}

TEST(Params, CountIndependentOfInputSide) {
  ModelConfig a{EncoderConfig{}, {}, 5};
  ModelConfig b = a;
  b.encoder.input_side = 1129;
  ModelConfig c = a;
  c.encoder = desk_encoder();
  const auto pa = init_params<float>(a, 1);
  EXPECT_EQ(pa.parameter_count(), init_params<float>(b, 1).parameter_count());
  EXPECT_EQ(pa.parameter_count(), init_params<float>(c, 1).parameter_count());
}

TEST(Params, InitDeterministicWithUnitAffine) {
  const ModelConfig mc{desk_encoder(), {}, 5};
  const auto p = init_params<float>(mc, 9);
  EXPECT_EQ(p, init_params<float>(mc, 9));
  EXPECT_NE(p.hash(), init_params<float>(mc, 10).hash());
  for (const auto& e : p.entries()) {
    const bool gamma = e.name.ends_with(".gamma");
    const bool zero = e.name.ends_with(".beta") || e.name.ends_with(".bias") ||
                      e.name.ends_with(".running_mean");
    for (const float v : e.value.values()) {
      if (gamma || e.name.ends_with(".running_var")) EXPECT_EQ(v, 1.0f) << e.name;
      if (zero) EXPECT_EQ(v, 0.0f) << e.name;
    }
    EXPECT_EQ(e.trainable, !e.name.ends_with(".running_mean") && !e.name.ends_with(".running_var"));
  }
}

TEST(Encoder, TrainForwardFiniteAtEveryLayer) {
  const EncoderConfig e = desk_encoder();
  const auto params = init_params<float>({e, {}, 0}, 2);
  EncoderTape<float> tape;
  std::vector<NamedStats> stats;
  const auto h = encoder_forward(params, e, random_batch(4, 64, 2), {nn::Mode::kTrain}, &tape, &stats);
  EXPECT_TRUE(h.all_finite());
  for (const auto& u : tape.units) EXPECT_TRUE(u.bn.normalized.all_finite());
  EXPECT_EQ(stats.size(), 12u);
  const auto zero = encoder_forward(params, e, Tensor({2, 1, 64, 64}), {nn::Mode::kEval});
  EXPECT_TRUE(zero.all_finite());
}

TEST(Encoder, EvalModeIsPerSample) {
  const EncoderConfig e = desk_encoder();
  auto params = init_params<float>({e, {}, 0}, 4);
  // Non-trivial running statistics.
  Rng rng(5);
  for (auto& entry : params.entries()) {
    if (entry.name.ends_with(".running_mean")) {
      for (auto& v : entry.value.storage()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
  }
  const auto both = random_batch(3, 64, 6);
  const Tensor first(Shape{1, 1, 64, 64},
                     std::vector<float>(both.storage().begin(), both.storage().begin() + 64 * 64));
  const auto h_all = encoder_forward(params, e, both, {nn::Mode::kEval});
  const auto h_one = encoder_forward(params, e, first, {nn::Mode::kEval});
  for (std::size_t k = 0; k < 128; ++k) EXPECT_NEAR(h_all.at(0, k), h_one.at(0, k), 1e-6);
}

TEST(Projection, RowsUnitNormAndSingleEvalRow) {
  const ModelConfig mc{desk_encoder(), {}, 0};
  const auto params = init_params<float>(mc, 7);
  Rng rng(8);
  Tensor h({16, 128});
  for (auto& v : h.storage()) v = static_cast<float>(rng.normal());
  const auto z = projection_forward(params, h, {nn::Mode::kTrain});
  for (std::size_t i = 0; i < 16; ++i) {
    double n = 0.0;
    for (std::size_t k = 0; k < 128; ++k) n += double(z.at(i, k)) * z.at(i, k);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  }
  const Tensor one({1, 128}, std::vector<float>(h.storage().begin(), h.storage().begin() + 128));
  EXPECT_TRUE(projection_forward(params, one, {nn::Mode::kEval}).all_finite());
}

TEST(LinearHead, ZeroAndIdentityWeights) {
  BasicParams<float> p;
  init_linear_head(p, 4, 4, 1);
  p["head.weight"].fill(0.0f);
  Tensor h({2, 4}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(linear_head_forward(p, h), Tensor({2, 4}));
  for (std::size_t i = 0; i < 4; ++i) p["head.weight"].at(i, i) = 1.0f;
  EXPECT_EQ(linear_head_forward(p, h), h);
  for (auto& v : p["head.bias"].storage()) v += 3.0f;
  const auto shifted = linear_head_forward(p, h);
  EXPECT_EQ(shifted.at(1, 3), 11.0f);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ModelConfig mc{desk_encoder(), {}, 5};
  const auto params = init_params<float>(mc, 11);
  const auto path = std::filesystem::temp_directory_path() / "cytocon_model_roundtrip.ckpt";
  write_checkpoint(Checkpoint{{{"seed", "11"}}, params}, path);
  const auto back = read_checkpoint(path);
  EXPECT_EQ(back.tensors, params);
  EXPECT_EQ(back.meta("seed"), "11");
  const auto x = random_batch(2, 64, 12);
  EXPECT_EQ(encoder_forward(back.tensors, mc.encoder, x, {nn::Mode::kEval}),
            encoder_forward(params, mc.encoder, x, {nn::Mode::kEval}));
}

TEST(Checkpoint, CorruptHeaderIsRejected) {
  const auto path = std::filesystem::temp_directory_path() / "cytocon_model_bad.ckpt";
  {
    std::ofstream out(path);
    out << "NOT-A-CHECKPOINT\n";
  }
  EXPECT_THROW(read_checkpoint(path), Error);
}
