#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ddr/fcnn.hpp"
#include "support.hpp"

using namespace ddr;

namespace {

NetworkConfig small2d() {
  NetworkConfig c;
  c.spatial_rank = 2;
  c.in_channels = 2;
  c.stages = 2;
  c.channels_per_stage = {3, 4};
  c.skip_links = {1};
  c.kernel_size = 3;
  c.seed = 9;
  return c;
}

// Gives the zero-initialized output layer random weights so every parameter influences h.
void randomize_final(Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  auto& b = net.mutable_params().blocks[net.final_block()];
  for (double& w : b.weight) w = u(rng);
  for (double& w : b.bias) w = u(rng);
}

bool same_kinks(const ActivationCache& a, const ActivationCache& b) {
  for (std::size_t s = 0; s < a.relu_pre.size(); ++s) {
    for (std::size_t i = 0; i < a.relu_pre[s].data.size(); ++i)
      if ((a.relu_pre[s].data[i] > 0) != (b.relu_pre[s].data[i] > 0)) return false;
    if (a.pool_argmax[s] != b.pool_argmax[s]) return false;
  }
  return true;
}

// Checks every parameter against central differences of sum(a2 * h) dV.
void check_param_gradients(NetworkConfig cfg, const Grid& g, std::uint64_t seed) {
  cfg.seed = seed;
  Network net = build_network(cfg);
  randomize_final(net, seed + 1);
  std::vector<Volume> in;
  for (int c = 0; c < cfg.in_channels; ++c) in.push_back(test::random_volume(g, seed + 10 + c));
  const Volume a2 = test::random_volume(g, seed + 20, -1.0, 1.0);
  const ForwardResult base = forward(net, in);
  const std::vector<double> grad = backward(net, base.cache, a2).flatten();
  const double step = 1e-4;
  std::size_t idx = 0, checked = 0;
  for (std::size_t b = 0; b < net.params().blocks.size(); ++b) {
    for (int part = 0; part < 2; ++part) {
      const std::size_t n = part == 0 ? net.params().blocks[b].weight.size() : net.params().blocks[b].bias.size();
      for (std::size_t i = 0; i < n; ++i, ++idx) {
        auto at = [&](Network& m) -> double& {
          auto& blk = m.mutable_params().blocks[b];
          return part == 0 ? blk.weight[i] : blk.bias[i];
        };
        const double keep = at(net);
        at(net) = keep + step;
        const ForwardResult up = forward(net, in);
        at(net) = keep - step;
        const ForwardResult dn = forward(net, in);
        at(net) = keep;
        if (!same_kinks(base.cache, up.cache) || !same_kinks(base.cache, dn.cache)) continue;
        double fd = 0.0;
        for (std::size_t k = 0; k < a2.size(); ++k) fd += a2[k] * (up.h[k] - dn.h[k]);
        fd *= g.voxel_volume() / (2 * step);
        const double scale = std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
        EXPECT_LT(std::abs(fd - grad[idx]) / scale, 1e-4) << "block " << b << " part " << part << " index " << i;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, net.params().count() / 2);
}

}  // namespace

TEST(Network, ConfigValidation) {
  NetworkConfig c = small2d();
  c.channels_per_stage = {3};
  EXPECT_THROW(build_network(c), InvalidInput);
  c = small2d();
  c.skip_links = {2};
  EXPECT_THROW(build_network(c), InvalidInput);
  c = small2d();
  c.kernel_size = 2;
  EXPECT_THROW(build_network(c), InvalidInput);
  c = small2d();
  c.spatial_rank = 1;
  EXPECT_THROW(build_network(c), InvalidInput);
}

TEST(Network, ParameterLayoutAndCount) {
  const Network net = build_network(small2d());
  // enc: 3x2x9+3, 4x3x9+4; skip: 4x3+4; up: 2 x 4x4x16; final: 4+1
  const std::size_t expect = (54 + 3) + (108 + 4) + (12 + 4) + 2 * 256 + 5;
  EXPECT_EQ(net.params().count(), expect);
  EXPECT_EQ(net.params().blocks.size(), 6u);
  EXPECT_EQ(net.final_block(), 5u);
  EXPECT_EQ(net.skip_index(1), 0);
  EXPECT_EQ(net.skip_index(2), -1);
}

TEST(Network, FreshNetworkOutputsZero) {
  const Network net = build_network(small2d());
  const Grid g({8, 12});
  const Volume h = forward(net, {test::random_volume(g, 1), test::random_volume(g, 2)}).h;
  EXPECT_TRUE(h.grid().same_dims(g));
  for (double x : h.values()) EXPECT_EQ(x, 0.0);
}

TEST(Network, DeterministicPerSeed) {
  NetworkConfig c = small2d();
  EXPECT_TRUE(build_network(c).params() == build_network(c).params());
  c.seed = 10;
  EXPECT_FALSE(build_network(c).params() == build_network(small2d()).params());
}

TEST(Network, ForwardRejectsBadInput) {
  const Network net = build_network(small2d());
  const Grid g({8, 8});
  EXPECT_THROW(forward(net, {Volume(g)}), InvalidInput);
  EXPECT_THROW(forward(net, {Volume(Grid({8, 6})), Volume(Grid({8, 6}))}), InvalidInput);
  EXPECT_THROW(forward(net, {Volume(Grid({4, 4, 4})), Volume(Grid({4, 4, 4}))}), InvalidInput);
  EXPECT_THROW(forward(net, {Volume(g), Volume(Grid({8, 12}))}), InvalidInput);
}

TEST(Layers, UpsamplingInitIsLinearInterpolation) {
  const auto geom = layers::UpsampleGeometry::for_rank(2);
  const ParamBlock p = detail::bilinear_block(1, geom);
  Tensor in(1, {1, 4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) in.data[i * 4 + j] = 2.0 * double(i) + double(j);
  const Tensor out = layers::upsample_forward(in, p, 1, geom);
  ASSERT_EQ(out.ext[1], 8u);
  ASSERT_EQ(out.ext[2], 8u);
  // interior outputs lie on the linear ramp sampled at half-voxel offsets
  for (std::size_t i = 1; i < 7; ++i)
    for (std::size_t j = 1; j < 7; ++j) {
      const double x = (double(i) - 0.5) / 2.0, y = (double(j) - 0.5) / 2.0;
      EXPECT_NEAR(out.data[i * 8 + j], 2.0 * x + y, 1e-12);
    }
}

TEST(Backward, ParameterGradients2D) { check_param_gradients(small2d(), Grid({8, 8}, {1.0, 0.5}), 3); }

TEST(Backward, ParameterGradients2DNoSkip) {
  NetworkConfig c = small2d();
  c.skip_links = {};
  c.in_channels = 1;
  check_param_gradients(c, Grid({8, 4}), 4);
}

TEST(Backward, ParameterGradients3D) {
  NetworkConfig c = small2d();
  c.spatial_rank = 3;
  c.channels_per_stage = {2, 3};
  check_param_gradients(c, Grid({4, 4, 8}), 5);
}

TEST(Backward, StaleCacheIsRejected) {
  Network net = build_network(small2d());
  const Grid g({8, 8});
  const ForwardResult r = forward(net, {Volume(g), Volume(g)});
  net.mutable_params();
  EXPECT_THROW(backward(net, r.cache, Volume(g)), StateError);
  EXPECT_THROW(backward(build_network(small2d()), r.cache, Volume(g)), StateError);
}

TEST(Sgd, MomentumUpdate) {
  Network net = build_network(small2d());
  ParamGradients g = net.params().zeros_like();
  g.blocks[0].weight[0] = 0.5;
  const double w0 = net.params().blocks[0].weight[0];
  net = sgd_step(std::move(net), g, 0.1, 0.9, 10.0);
  EXPECT_NEAR(net.params().blocks[0].weight[0], w0 - 0.05, 1e-15);
  net = sgd_step(std::move(net), g, 0.1, 0.9, 10.0);
  // v = 0.9 * 0.5 + 0.5
  EXPECT_NEAR(net.params().blocks[0].weight[0], w0 - 0.05 - 0.095, 1e-15);
}

TEST(Sgd, ClipsTheGlobalNorm) {
  Network net = build_network(small2d());
  ParamGradients g = net.params().zeros_like();
  g.blocks[0].weight[0] = 3.0;
  g.blocks[1].weight[0] = 4.0;
  const double a = net.params().blocks[0].weight[0], b = net.params().blocks[1].weight[0];
  net = sgd_step(std::move(net), g, 1.0, 0.0, 1.0);
  EXPECT_NEAR(net.params().blocks[0].weight[0], a - 0.6, 1e-15);
  EXPECT_NEAR(net.params().blocks[1].weight[0], b - 0.8, 1e-15);
}

TEST(Sgd, RejectsNonFiniteOrMismatchedGradients) {
  Network net = build_network(small2d());
  ParamGradients g = net.params().zeros_like();
  g.blocks[2].bias[0] = NAN;
  EXPECT_THROW(sgd_step(net, g, 0.1, 0.0, 1.0), InvalidInput);
  ParamGradients short_g = net.params().zeros_like();
  short_g.blocks.pop_back();
  EXPECT_THROW(sgd_step(net, short_g, 0.1, 0.0, 1.0), InvalidInput);
  EXPECT_THROW(sgd_step(net, net.params().zeros_like(), -1.0, 0.0, 1.0), InvalidInput);
}

TEST(Checkpoint, RoundTripsThroughFloat32) {
  Network net = build_network(small2d());
  randomize_final(net, 77);
  const auto bytes = serialize_network(net);
  const Network back = deserialize_network(bytes);
  EXPECT_EQ(back.config(), net.config());
  Parameters q = net.params();
  q.for_each([](double& v) { v = static_cast<float>(v); });
  EXPECT_TRUE(back.params() == q);
  EXPECT_EQ(serialize_network(back), bytes);

  const std::string dir = test::temp_dir("checkpoint");
  save_network(net, dir + "/net.bin");
  EXPECT_TRUE(load_network(dir + "/net.bin").params() == q);
  EXPECT_THROW(load_network(dir + "/missing.bin"), IoError);
}

TEST(Checkpoint, RejectsCorruptBytes) {
  const auto bytes = serialize_network(build_network(small2d()));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_network(bad), InvalidInput);
  auto version = bytes;
  version[8] = 7;
  EXPECT_THROW(deserialize_network(version), InvalidInput);
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(deserialize_network(truncated), InvalidInput);
}
