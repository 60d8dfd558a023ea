#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "scrl/errors.hpp"
#include "scrl/nn.hpp"

namespace scrl::nn {
namespace {

namespace fs = std::filesystem;

env::ObsSpec vec_obs(size_t dim) { return {env::ObsKind::features, dim, 0, 0, 0}; }
env::ObsSpec img_obs(size_t side, size_t channels) {
  return {env::ObsKind::image, side * side * channels, side, side, channels};
}

Tensor<double> random_matrix(size_t r, size_t c, Rng& rng) {
  auto m = Tensor<double>::matrix(r, c);
  std::normal_distribution<double> n;
  for (auto& v : m.storage()) v = n(rng);
  return m;
}

BasicNetwork<double> make_net(const Architecture& arch, uint64_t seed) {
  BasicNetwork<double> net(arch);
  Rng rng = make_rng(seed);
  fan_in_init(net, rng);
  return net;
}

TEST(BuildEncoder, Defaults) {
  const EncoderSpec spec;
  EXPECT_EQ(spec.mlp_width, 1024u);
  EXPECT_EQ(spec.mlp_depth, 4u);
  const auto a = build_encoder(spec, vec_obs(10), 3, 16);
  EXPECT_EQ(a.output_dim(), 16u);
  // concat, 4 x (dense, norm, relu), dense
  ASSERT_EQ(a.layers.size(), 14u);
  EXPECT_TRUE(std::holds_alternative<ConcatSide>(a.layers[0]));
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(std::holds_alternative<Dense>(a.layers[1 + 3 * i]));
    EXPECT_TRUE(std::holds_alternative<LayerNorm>(a.layers[2 + 3 * i]));
    EXPECT_TRUE(std::holds_alternative<Relu>(a.layers[3 + 3 * i]));
  }
  EXPECT_EQ(std::get<Dense>(a.layers[1]).in, 13u);
}

TEST(BuildEncoder, CnnGeometryOn48Pixels) {
  const auto a = build_encoder({true, {}, 64, 1, true}, img_obs(48, 1), 0, 16);
  std::vector<kernels::ConvGeometry> convs;
  for (const auto& l : a.layers)
    if (const auto* c = std::get_if<Conv>(&l)) convs.push_back(c->geom);
  ASSERT_EQ(convs.size(), 3u);
  // (H + 2p - k) / s + 1 per layer
  size_t h = 48;
  const size_t k[3] = {8, 4, 3}, s[3] = {4, 2, 1}, p[3] = {2, 1, 1}, c[3] = {32, 64, 64};
  for (size_t i = 0; i < 3; ++i) {
    h = (h + 2 * p[i] - k[i]) / s[i] + 1;
    EXPECT_EQ(convs[i].out_h(), h);
    EXPECT_EQ(convs[i].out_c, c[i]);
  }
  EXPECT_EQ(convs[0].out_h(), 12u);
  EXPECT_EQ(convs[1].out_h(), 6u);
  EXPECT_EQ(convs[2].out_h(), 6u);
  EXPECT_EQ(std::get<Dense>(a.layers[9]).in, 6u * 6u * 64u);
}

TEST(BuildEncoder, DepthZeroIsLinearHead) {
  EncoderSpec spec;
  spec.mlp_depth = 0;
  const auto a = build_encoder(spec, vec_obs(5), 0, 4);
  ASSERT_EQ(a.layers.size(), 1u);
  EXPECT_EQ(std::get<Dense>(a.layers[0]).in, 5u);
}

TEST(BuildEncoder, RejectsMismatchedInputs) {
  EXPECT_THROW(build_encoder({false, {}, 8, 1, true}, img_obs(48, 1), 0, 4), InvalidArgument);
  EXPECT_THROW(build_encoder({true, {}, 8, 1, true}, vec_obs(4), 0, 4), InvalidArgument);
}

TEST(Network, ParamsAndGradsMatch) {
  const auto a = build_encoder({false, {}, 7, 2, true}, vec_obs(3), 2, 4);
  BasicNetwork<float> net(a);
  EXPECT_EQ(net.params().size(), net.grads().size());
  // 5x7 + 7, 2 x 7 norm, 7x7 + 7, 2 x 7 norm, 7x4 + 4
  EXPECT_EQ(net.num_params(), 42u + 14 + 56 + 14 + 32);
}

TEST(Network, ForwardIsDeterministic) {
  const auto net = make_net(build_encoder({false, {}, 16, 2, true}, vec_obs(6), 0, 5), 1);
  Rng rng = make_rng(2);
  const auto x = random_matrix(9, 6, rng);
  EXPECT_EQ(net.forward(x), net.forward(x));
}

TEST(Network, DenseLayerComputesAffineMap) {
  BasicNetwork<double> net(Architecture{2, 0, {Dense{2, 3}}});
  // W [in, out] then b.
  const double w[] = {1, 2, 3, 4, 5, 6, 0.5, -0.5, 1};
  std::copy(std::begin(w), std::end(w), net.params().begin());
  const Tensor<double> x({1, 2}, {1.0, -1.0});
  const auto y = net.forward(x);
  EXPECT_DOUBLE_EQ(y(0, 0), 1 - 4 + 0.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 2 - 5 - 0.5);
  EXPECT_DOUBLE_EQ(y(0, 2), 3 - 6 + 1);
}

TEST(Network, ZeroUpstreamGivesZeroGradient) {
  auto net = make_net(build_encoder({false, {}, 8, 2, true}, vec_obs(4), 2, 3), 5);
  Rng rng = make_rng(3);
  const auto x = random_matrix(6, 4, rng), side = random_matrix(6, 2, rng);
  BasicNetwork<double>::Tape tape;
  net.forward(x, &side, &tape);
  net.zero_grad();
  const auto g = net.backward(tape, Tensor<double>::matrix(6, 3));
  for (double v : net.grads()) EXPECT_EQ(v, 0.0);
  for (double v : g.input.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.side.values()) EXPECT_EQ(v, 0.0);
}

TEST(Network, LinearNetworkBackwardIsLinearInUpstream) {
  auto net = make_net(Architecture{4, 0, {Dense{4, 5}, Dense{5, 3}}}, 7);
  Rng rng = make_rng(4);
  const auto x = random_matrix(5, 4, rng);
  const auto d1 = random_matrix(5, 3, rng), d2 = random_matrix(5, 3, rng);
  auto d12 = d1;
  for (size_t i = 0; i < d12.size(); ++i) d12[i] += d2[i];
  BasicNetwork<double>::Tape tape;
  net.forward(x, nullptr, &tape);
  auto grads_of = [&](const Tensor<double>& dy) {
    net.zero_grad();
    net.backward(tape, dy);
    return std::vector<double>(net.grads().begin(), net.grads().end());
  };
  const auto g1 = grads_of(d1), g2 = grads_of(d2), g12 = grads_of(d12);
  for (size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-12);
}

TEST(Network, BackwardAccumulatesUntilZeroGrad) {
  auto net = make_net(Architecture{3, 0, {Dense{3, 2}}}, 1);
  Rng rng = make_rng(5);
  const auto x = random_matrix(4, 3, rng), dy = random_matrix(4, 2, rng);
  BasicNetwork<double>::Tape tape;
  net.forward(x, nullptr, &tape);
  net.zero_grad();
  net.backward(tape, dy);
  const std::vector<double> once(net.grads().begin(), net.grads().end());
  net.backward(tape, dy);
  for (size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(net.grads()[i], 2 * once[i], 1e-12);
}

TEST(Network, LayerNormLayerMatchesScalarReference) {
  auto net = make_net(Architecture{6, 0, {LayerNorm{6}}}, 1);
  Rng rng = make_rng(6);
  for (size_t j = 0; j < 6; ++j) {
    net.params()[j] = 0.5 + uniform01(rng);
    net.params()[6 + j] = uniform01(rng) - 0.5;
  }
  const auto x = random_matrix(3, 6, rng);
  const auto y = net.forward(x);
  const std::vector<double> gain(net.params().begin(), net.params().begin() + 6);
  const std::vector<double> bias(net.params().begin() + 6, net.params().end());
  for (size_t r = 0; r < 3; ++r) {
    std::vector<double> row(x.row(r).begin(), x.row(r).end());
    const auto ref = layer_norm_forward(row, gain, bias);
    for (size_t j = 0; j < 6; ++j) EXPECT_NEAR(y(r, j), ref[j], 1e-12);
  }
}

TEST(Network, ShapeMismatchThrows) {
  auto net = make_net(Architecture{3, 0, {Dense{3, 2}}}, 1);
  EXPECT_THROW(net.forward(Tensor<double>::matrix(2, 4)), InvalidArgument);
  BasicNetwork<double>::Tape tape;
  net.forward(Tensor<double>::matrix(2, 3), nullptr, &tape);
  EXPECT_THROW(net.backward(tape, Tensor<double>::matrix(2, 3)), InvalidArgument);
}

TEST(LayerNormForward, ConstantInputGivesBias) {
  const std::vector<double> x(5, 3.7), gain{1, 2, 3, 4, 5}, bias{0.1, 0.2, 0.3, 0.4, 0.5};
  const auto y = layer_norm_forward(x, gain, bias);
  for (size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(y[i], bias[i]);
}

TEST(LayerNormForward, TwoPointExample) {
  const auto y = layer_norm_forward(std::vector<double>{1, -1}, std::vector<double>{1, 1},
                                    std::vector<double>{0, 0});
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], expect, 1e-15);
  EXPECT_NEAR(y[1], -expect, 1e-15);
  EXPECT_NEAR(y[0], 0.999995, 1e-6);
}

TEST(LayerNormForward, NormalizesMoments) {
  Rng rng = make_rng(8);
  std::normal_distribution<double> n(3.0, 5.0);
  std::vector<double> x(256);
  for (auto& v : x) v = n(rng);
  const std::vector<double> gain(256, 2.0), bias(256, 0.7);
  const auto y = layer_norm_forward(x, gain, bias);
  double m = 0, s = 0;
  for (double v : y) m += v;
  m /= 256;
  for (double v : y) s += (v - m) * (v - m);
  EXPECT_NEAR(m, 0.7, 1e-12);
  EXPECT_NEAR(std::sqrt(s / 256), 2.0, 1e-5);
  EXPECT_THROW(layer_norm_forward(std::vector<double>{}, std::vector<double>{}, std::vector<double>{}),
               InvalidArgument);
}

TEST(Init, FanInBounds) {
  const auto a = build_encoder({false, {}, 32, 2, true}, vec_obs(10), 0, 8);
  BasicNetwork<float> net(a);
  Rng rng = make_rng(1);
  fan_in_init(net, rng);
  for (size_t i = 0; i < a.layers.size(); ++i) {
    const float* p = net.params().data() + net.param_offset(i);
    if (const auto* d = std::get_if<Dense>(&a.layers[i])) {
      const double bound = std::sqrt(1.0 / d->in);
      for (size_t k = 0; k < (d->in + 1) * d->out; ++k) EXPECT_LE(std::abs(p[k]), bound);
    } else if (const auto* l = std::get_if<LayerNorm>(&a.layers[i])) {
      for (size_t k = 0; k < l->dim; ++k) {
        EXPECT_EQ(p[k], 1.0f);
        EXPECT_EQ(p[l->dim + k], 0.0f);
      }
    }
  }
}

TEST(Init, ColdInitBoundsFinalWeights) {
  for (double eps : {1e-12, 1e-4}) {
    const auto a = build_encoder({false, {}, 32, 2, true}, vec_obs(10), 0, 8);
    BasicNetwork<float> net(a);
    Rng rng = make_rng(1);
    fan_in_init(net, rng);
    const std::vector<float> before(net.params().begin(), net.params().end());
    cold_init(net, eps, rng);
    const size_t off = net.param_offset(static_cast<size_t>(net.last_dense()));
    float max_w = 0;
    for (size_t k = 0; k < 32 * 8; ++k) max_w = std::max(max_w, std::abs(net.params()[off + k]));
    EXPECT_LE(max_w, eps);
    EXPECT_GT(max_w, eps / 2);
    // Earlier layers and the final bias are untouched.
    for (size_t k = 0; k < off; ++k) EXPECT_EQ(net.params()[k], before[k]);
    for (size_t k = off + 32 * 8; k < before.size(); ++k) EXPECT_EQ(net.params()[k], before[k]);
  }
  BasicNetwork<float> no_dense(Architecture{3, 0, {Relu{3}}});
  Rng rng = make_rng(0);
  EXPECT_THROW(cold_init(no_dense, 1e-12, rng), InvalidArgument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<float> p{1.0f, -2.0f, 0.5f}, g{0.3f, -4.0f, 1e-3f};
  AdamState st(3);
  adam_step<float>(p, g, st, {0.01});
  EXPECT_NEAR(p[0], 1.0f - 0.01f, 1e-6);
  EXPECT_NEAR(p[1], -2.0f + 0.01f, 1e-6);
  EXPECT_NEAR(p[2], 0.5f - 0.01f, 1e-4);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, ZeroLearningRateLeavesParams) {
  std::vector<float> p{1.0f, -2.0f}, g{0.3f, -4.0f};
  AdamState st(2);
  adam_step<float>(p, g, st, {0.0});
  EXPECT_EQ(p, (std::vector<float>{1.0f, -2.0f}));
  EXPECT_DOUBLE_EQ(AdamOptions{}.lr, 3e-4);
}

TEST(Adam, MatchesScalarReference) {
  Rng rng = make_rng(3);
  std::vector<double> p(4), m(4, 0), v(4, 0);
  for (auto& x : p) x = uniform01(rng);
  std::vector<double> ref = p;
  AdamState st(4);
  const AdamOptions o{0.05, 0.9, 0.999, 1e-8};
  for (int step = 1; step <= 20; ++step) {
    std::vector<double> g(4);
    for (auto& x : g) x = uniform01(rng) - 0.5;
    adam_step<double>(p, g, st, o);
    for (size_t i = 0; i < 4; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  // Moments are stored in float.
  for (size_t i = 0; i < 4; ++i) EXPECT_NEAR(p[i], ref[i], 1e-5);
}

TEST(Adam, NonFiniteGradientDiverges) {
  std::vector<float> p{1.0f}, g{std::nanf("")};
  AdamState st(1);
  EXPECT_THROW(adam_step<float>(p, g, st, {}), TrainingDivergence);
  std::vector<float> g2{INFINITY};
  EXPECT_THROW(adam_step<float>(p, g2, st, {}), TrainingDivergence);
}

TEST(Cosine, Conventions) {
  const std::vector<float> zero(3, 0.0f), a{1, 2, 3}, b{2, 4, 6}, c{-1, -2, -3}, d{3, 0, -1};
  EXPECT_EQ(cosine_similarity(zero, zero), 1.0);
  EXPECT_EQ(cosine_similarity(zero, a), 0.0);
  EXPECT_NEAR(cosine_similarity(a, b), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(a, c), -1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(a, d), 0.0, 1e-12);
  // Tiny but nonzero vectors are not floored.
  const std::vector<float> t1{1e-30f, 0, 0}, t2{0, 1e-30f, 0};
  EXPECT_NEAR(cosine_similarity(t1, t2), 0.0, 1e-12);
}

TEST(Checkpoint, RoundTrip) {
  Checkpoint c{"arch v1", 1234, {{"phi", {1.5f, -2.0f, 3.25f}}, {"psi", {}}, {"t", {0.0f, 7.0f}}}};
  const auto path = fs::temp_directory_path() / "scrl_nn_ckpt.bin";
  save_checkpoint(c, path);
  EXPECT_EQ(load_checkpoint(path), c);
  EXPECT_EQ(load_checkpoint(path).blob("phi"), (std::vector<float>{1.5f, -2.0f, 3.25f}));
  EXPECT_THROW(c.blob("missing"), IncompatibleCheckpoint);
}

TEST(Checkpoint, CorruptionDetected) {
  Checkpoint c{"arch", 3, {{"w", std::vector<float>(100, 0.5f)}}};
  const auto path = fs::temp_directory_path() / "scrl_nn_ckpt_bad.bin";
  save_checkpoint(c, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(60);
    f.put('\x01');
  }
  EXPECT_THROW(load_checkpoint(path), CorruptFile);
  save_checkpoint(c, path);
  fs::resize_file(path, fs::file_size(path) / 2);
  EXPECT_THROW(load_checkpoint(path), CorruptFile);
  EXPECT_THROW(load_checkpoint(fs::temp_directory_path() / "scrl_no_such_ckpt"), IoError);
}

TEST(Checkpoint, LoadParamsChecksSize) {
  BasicNetwork<float> net(Architecture{3, 0, {Dense{3, 2}}});
  EXPECT_THROW(net.load_params(std::vector<float>(7)), IncompatibleCheckpoint);
  std::vector<float> v(8);
  for (size_t i = 0; i < 8; ++i) v[i] = static_cast<float>(i);
  net.load_params(v);
  EXPECT_EQ(std::vector<float>(net.params().begin(), net.params().end()), v);
}

TEST(Network, CastPreservesValues) {
  const auto net = make_net(build_encoder({false, {}, 8, 1, true}, vec_obs(3), 0, 2), 3);
  const auto f = net.cast<float>();
  for (size_t i = 0; i < net.num_params(); ++i) {
    EXPECT_EQ(f.params()[i], static_cast<float>(net.params()[i]));
  }
  EXPECT_EQ(f.arch().describe(), net.arch().describe());
}

}  // namespace
}  // namespace scrl::nn
