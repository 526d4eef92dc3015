#include <gtest/gtest.h>

#include <bit>
#include <filesystem>

#include "oracles.hpp"
#include "pwseg/pwseg.hpp"
#include "test_util.hpp"

using namespace pwseg;

namespace {

Architecture small_arch() {
  Architecture a;
  a.grid = {16, 16, 16};
  a.patch = 8;
  a.embed = 16;
  a.heads = 2;
  a.layers = 2;
  a.score_hidden = 8;
  a.mlp_hidden = 32;
  return a;
}

VolumeGrid sphere_image(const Dims& d, double r, std::uint64_t seed) {
  return render_phantom(sphere_phantom(d, r, 0.1, seed)).intensity;
}

std::uint64_t fnv1a(const std::vector<double>& v) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double x : v) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFF;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

TrainingPair sphere_pair(std::uint64_t seed) {
  const Phantom ph = render_phantom(sphere_phantom({16, 16, 16}, 5, 0.1, seed));
  Rng r(seed + 1);
  const PointSet pts = sample_annotation(ph.truth, 10, r);
  return {ph.intensity, generate_pseudo_label(pts, ph.truth.dims(), default_kernel_variance(pts))};
}

}  // namespace

TEST(Patchify, WholeVolumeIsOneToken) {
  const VolumeGrid v = sphere_image({16, 16, 16}, 5, 1);
  const PatchSequence s = patchify(v, 16);
  EXPECT_EQ(s.tokens.rows, 1u);
  EXPECT_EQ(s.tokens.data, v.data());
}

TEST(Patchify, TokenCountAndRoundTrip) {
  const VolumeGrid v = sphere_image({32, 32, 32}, 8, 1);
  const PatchSequence s = patchify(v, 16);
  EXPECT_EQ(s.tokens.rows, 8u);
  EXPECT_EQ(s.tokens.cols, 4096u);
  EXPECT_EQ(unpatchify(s), v);
  const VolumeGrid w = sphere_image({8, 4, 12}, 1, 2);
  EXPECT_EQ(unpatchify(patchify(w, 4)), w);
  EXPECT_EQ(patchify(w, 4).tokens(2, 1 + 4 * (2 + 4 * 3)), w.at(1, 2, 4 + 3));
  EXPECT_EQ(kind_of([&] { patchify(w, 3); }), ErrorKind::shape);
}

TEST(Embed, Examples) {
  Rng r(1);
  PatchSequence s{oracle::random_matrix(r, 3, 4), 1, {3, 1, 1}};
  Matrix e(4, 6);
  for (std::size_t i = 0; i < 4; ++i) e(i, i) = 1.0;
  const Matrix out = embed(s, e, Matrix(3, 6));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out(i, c), s.tokens(i, c));
    EXPECT_EQ(out(i, 5), 0.0);
  }
  const Matrix pos = oracle::random_matrix(r, 3, 6);
  EXPECT_EQ(embed(PatchSequence{Matrix(3, 4), 1, {3, 1, 1}}, e, pos), pos);
  const Matrix er = oracle::random_matrix(r, 4, 6);
  Matrix want = oracle::matmul(s.tokens, er);
  for (std::size_t i = 0; i < want.size(); ++i) want.data[i] += pos.data[i];
  const Matrix got = embed(s, er, pos);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-14);
  EXPECT_EQ(kind_of([&] { embed(s, Matrix(5, 6), pos); }), ErrorKind::shape);
}

TEST(Encoder, ZeroLayersIsIdentity) {
  Architecture a = small_arch();
  a.layers = 0;
  const ModelParams p = init_params(a, 3);
  Rng r(2);
  const Matrix z0 = oracle::random_matrix(r, 8, 16);
  EXPECT_EQ(encoder_forward(z0, p, Rng(1)), z0);
}

TEST(Encoder, ZeroSigmaSampledEqualsMean) {
  ModelParams p = init_params(small_arch(), 4);
  for (auto& l : p.weights.layers) {
    l.score.w2 = Matrix(l.score.w2.rows, 2);
    l.score.b2 = Matrix(1, 2, std::vector<double>{0.0, -800.0});  // softplus underflows to 0
  }
  Rng r(2);
  const Matrix z0 = oracle::random_matrix(r, 8, 16);
  const Matrix mean = encoder_forward(z0, p, Rng(1), ScoreMode::mean);
  EXPECT_EQ(encoder_forward(z0, p, Rng(1), ScoreMode::sampled), mean);
  EXPECT_EQ(encoder_forward(z0, p, Rng(99), ScoreMode::sampled), mean);
}

TEST(Encoder, GoldenHash) {
  Architecture a = small_arch();
  a.embed = 64;
  a.heads = 4;
  const ModelParams p = init_params(a, 2024);
  const VolumeGrid v = sphere_image({16, 16, 16}, 5, 7);
  const VolumeGrid out = predict(p, v, Rng(11));
  EXPECT_EQ(fnv1a(out.data()), fnv1a(predict(p, v, Rng(11)).data()));
  EXPECT_EQ(fnv1a(out.data()), 3810040988942315784ULL);
}

TEST(Encoder, NonFiniteActivationNamesLayer) {
  ModelParams p = init_params(small_arch(), 5);
  p.weights.layers[1].mlp_b2.data[0] = std::numeric_limits<double>::infinity();
  try {
    predict(p, sphere_image({16, 16, 16}, 5, 1), Rng(0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(SegHead, ZeroWeightsGiveHalf) {
  ModelParams p = init_params(small_arch(), 6);
  p.weights.head_w = Matrix(p.weights.head_w.rows, p.weights.head_w.cols);
  const VolumeGrid prob = predict(p, sphere_image({16, 16, 16}, 5, 1), Rng(0));
  for (double v : prob.data()) EXPECT_EQ(v, 0.5);
}

TEST(SegHead, OneHotRowCopiesFeature) {
  const ModelParams p0 = zero_params(small_arch());
  ModelParams p = p0;
  p.weights.head_w(3, 5) = 1.0;  // feature 3 to voxel 5 of each patch
  Rng r(3);
  const Matrix tokens = oracle::random_matrix(r, 8, 16);
  const VolumeGrid logits = seg_head(tokens, p);
  for (std::size_t t = 0; t < 8; ++t) {
    const std::size_t gx = t % 2, gy = (t / 2) % 2, gz = t / 4;
    EXPECT_EQ(logits.at(gx * 8 + 5, gy * 8, gz * 8), tokens(t, 3));
    EXPECT_EQ(logits.at(gx * 8 + 4, gy * 8, gz * 8), 0.0);
  }
}

TEST(Params, InitIsSeededAndNamed) {
  const ModelParams a = init_params(small_arch(), 1), b = init_params(small_arch(), 1), c = init_params(small_arch(), 2);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  std::vector<std::string> names;
  a.for_each([&](const std::string& n, const Matrix&) { names.push_back(n); });
  EXPECT_EQ(names.front(), "patch_embed");
  EXPECT_NE(std::find(names.begin(), names.end(), "layer1.score.w1q"), names.end());
  EXPECT_EQ(a.weights.layers[0].ln1_g.data, std::vector<double>(16, 1.0));
  EXPECT_GT(a.parameter_count(), 0u);
}

TEST(Train, ZeroIterationsAndZeroLrLeaveParams) {
  const TrainingPair pair = sphere_pair(1);
  const ModelParams init = init_params(small_arch(), 9);
  PipelineConfig c = toy_preset();
  c.iterations = 0;
  EXPECT_TRUE(train({pair}, c, init, Rng(1)).params == init);
  c.iterations = 3;
  c.learning_rate = 0.0;
  const TrainResult r = train({pair}, c, init, Rng(1));
  EXPECT_TRUE(r.params == init);
  EXPECT_EQ(r.trace.size(), 3u);
}

TEST(Train, LossDecreasesOnSpherePhantom) {
  const TrainingPair pair = sphere_pair(2);
  PipelineConfig c = toy_preset();
  c.iterations = 200;
  const Architecture a = Architecture::from_config(c, {16, 16, 16});
  const TrainResult r = train({pair}, c, init_params(a, 3), Rng(4));
  ASSERT_EQ(r.trace.size(), 200u);
  EXPECT_LT(r.trace.back().total, r.trace.front().total);
}

TEST(Train, Deterministic) {
  const TrainingPair pair = sphere_pair(3);
  PipelineConfig c = toy_preset();
  c.iterations = 5;
  const ModelParams init = init_params(small_arch(), 9);
  EXPECT_TRUE(train({pair}, c, init, Rng(5)).params == train({pair}, c, init, Rng(5)).params);
}

TEST(Train, ShapeMismatchRejected) {
  const TrainingPair pair = sphere_pair(1);
  Architecture a = small_arch();
  a.grid = {32, 16, 16};
  EXPECT_EQ(kind_of([&] { train({pair}, toy_preset(), init_params(a, 1), Rng(1)); }), ErrorKind::shape);
}

TEST(McInfer, SinglePassAndSeeding) {
  const ModelParams p = init_params(small_arch(), 10);
  const VolumeGrid v = sphere_image({16, 16, 16}, 5, 1);
  const Rng rng(6);
  EXPECT_EQ(mc_infer(v, p, 1, rng).probability, predict(p, v, rng.split(0)));
  const Segmentation s = mc_infer(v, p, 4, rng);
  std::vector<double> mean(v.size(), 0.0);
  for (std::size_t m = 0; m < 4; ++m) {
    const VolumeGrid q = predict(p, v, rng.split(m));
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += q[i];
  }
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(s.probability[i], mean[i] / 4, 1e-15);
  EXPECT_EQ(s.mask, threshold_label(s.probability, 0.5));
  EXPECT_EQ(kind_of([&] { mc_infer(v, p, 0, rng); }), ErrorKind::parameter);
}

TEST(McInfer, ZeroSigmaIndependentOfM) {
  const ModelParams p = init_params(small_arch(), 11);
  const VolumeGrid v = sphere_image({16, 16, 16}, 5, 1);
  const Segmentation mean = mc_infer(v, p, 1, Rng(0), {ScoreMode::mean, false});
  for (std::size_t m : {1, 3, 6}) {
    const Segmentation s = mc_infer(v, p, m, Rng(m), {ScoreMode::sampled, true});
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_NEAR(s.probability[i], mean.probability[i], 1e-15);
    EXPECT_EQ(s.mask, mean.mask);
  }
}

TEST(McInfer, MeanModeIgnoresSeed) {
  const ModelParams p = init_params(small_arch(), 12);
  const VolumeGrid v = sphere_image({16, 16, 16}, 5, 1);
  EXPECT_EQ(predict(p, v, Rng(1), {ScoreMode::mean, false}), predict(p, v, Rng(2), {ScoreMode::mean, false}));
}

TEST(SlidingWindow, Starts) {
  EXPECT_EQ(window_starts(48, 32, 0.5), (std::vector<std::size_t>{0, 16}));
  EXPECT_EQ(window_starts(32, 32, 0.5), (std::vector<std::size_t>{0}));
  EXPECT_EQ(window_starts(40, 16, 0.5), (std::vector<std::size_t>{0, 8, 16, 24}));
  EXPECT_EQ(window_starts(41, 16, 0.5), (std::vector<std::size_t>{0, 8, 16, 24, 25}));
  EXPECT_EQ(window_starts(40, 16, 0.0), (std::vector<std::size_t>{0, 16, 24}));
  EXPECT_EQ(kind_of([] { window_starts(8, 16, 0.5); }), ErrorKind::shape);
  EXPECT_EQ(kind_of([] { window_starts(32, 16, 1.0); }), ErrorKind::parameter);
}

TEST(SlidingWindow, EqualSizeMatchesMcInfer) {
  const ModelParams p = init_params(small_arch(), 13);
  const VolumeGrid v = sphere_image({16, 16, 16}, 5, 1);
  EXPECT_EQ(sliding_window_infer(v, p, 2, 0.5, Rng(3)), mc_infer(v, p, 2, Rng(3)).probability);
}

TEST(SlidingWindow, ConstantModelGivesConstantField) {
  ModelParams p = init_params(small_arch(), 14);
  p.weights.head_w = Matrix(p.weights.head_w.rows, p.weights.head_w.cols);
  for (auto& b : p.weights.head_b.data) b = 0.7;
  const VolumeGrid v = sphere_image({24, 40, 16}, 6, 1);
  const VolumeGrid out = sliding_window_infer(v, p, 2, 0.5, Rng(3));
  const double want = 1.0 / (1.0 + std::exp(-0.7));
  for (double x : out.data()) EXPECT_NEAR(x, want, 1e-15);
  EXPECT_EQ(kind_of([&] { sliding_window_infer(sphere_image({8, 16, 16}, 2, 1), p, 1, 0.5, Rng(0)); }),
            ErrorKind::shape);
}

TEST(Checkpoint, BitExactRoundTrip) {
  ModelParams p = init_params(small_arch(), 15);
  p.weights.head_b.data[0] = 0.1 + 0.2;
  p.weights.pos_embed.data[1] = -0.0;
  const auto path = (std::filesystem::temp_directory_path() / "pwseg_net_test.pckp").string();
  write_checkpoint(path, p);
  const ModelParams q = read_checkpoint(path);
  EXPECT_TRUE(q == p);
  EXPECT_EQ(q.arch, p.arch);
  EXPECT_EQ(encode_checkpoint(q), encode_checkpoint(p));
  EXPECT_TRUE(std::signbit(q.weights.pos_embed.data[1]));
}

TEST(Checkpoint, MalformedIsFormatError) {
  const auto good = encode_checkpoint(init_params(small_arch(), 16));
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(kind_of([&] { decode_checkpoint(magic); }), ErrorKind::format);
  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_EQ(kind_of([&] { decode_checkpoint(truncated); }), ErrorKind::format);
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(kind_of([&] { decode_checkpoint(version); }), ErrorKind::format);
  EXPECT_EQ(kind_of([] { decode_checkpoint({}); }), ErrorKind::format);
  EXPECT_EQ(kind_of([] { read_checkpoint("/nonexistent/model.pckp"); }), ErrorKind::io);
}
