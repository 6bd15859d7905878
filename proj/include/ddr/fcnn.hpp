#pragma once

// Small fully convolutional network producing a single-channel heatmap the
// size of its input. Encoder: S stages of (conv k, ReLU, 2x max-pool).
// Decoder: S transposed convolutions (kernel 4, stride 2) initialized to
// multilinear upsampling, with optional additive skip fusion of encoder
// stages through 1x1 convolutions. A final 1x1 convolution maps to one
// channel and starts at zero, so a fresh network outputs h == 0.
//
// No skip links gives the 32s-style variant; a single link at stage S-1
// gives the 16s-style one.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ddr/error.hpp"
#include "ddr/grid.hpp"

namespace ddr {

/// Channels x (three-axis spatial extent), channel-major.
struct Tensor {
  std::size_t channels = 0;
  std::array<std::size_t, 3> ext{1, 1, 1};
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t c, const std::array<std::size_t, 3>& e) : channels(c), ext(e), data(c * e[0] * e[1] * e[2]) {}

  std::size_t spatial() const noexcept { return ext[0] * ext[1] * ext[2]; }
  double* channel(std::size_t c) noexcept { return data.data() + c * spatial(); }
  const double* channel(std::size_t c) const noexcept { return data.data() + c * spatial(); }
};

struct ParamBlock {
  std::vector<double> weight;
  std::vector<double> bias;
};

/// Parameter (or gradient, or momentum) storage in a fixed block order.
struct Parameters {
  std::vector<ParamBlock> blocks;

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.weight.size() + b.bias.size();
    return n;
  }

  template <class Fn>
  void for_each(Fn&& fn) {
    for (auto& b : blocks) {
      for (double& w : b.weight) fn(w);
      for (double& w : b.bias) fn(w);
    }
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    for (const auto& b : blocks) {
      for (double w : b.weight) fn(w);
      for (double w : b.bias) fn(w);
    }
  }

  double norm() const {
    double s = 0.0;
    for_each([&](double v) { s += v * v; });
    return std::sqrt(s);
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](double v) { ok = ok && std::isfinite(v); });
    return ok;
  }

  Parameters zeros_like() const {
    Parameters z = *this;
    z.for_each([](double& v) { v = 0.0; });
    return z;
  }

  /// Flat view in block order: weights then bias per block.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(count());
    for_each([&](double v) { out.push_back(v); });
    return out;
  }

  bool operator==(const Parameters& o) const {
    if (blocks.size() != o.blocks.size()) return false;
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (blocks[i].weight != o.blocks[i].weight || blocks[i].bias != o.blocks[i].bias) return false;
    return true;
  }
};

using ParamGradients = Parameters;

struct NetworkConfig {
  int spatial_rank = 2;
  int in_channels = 2;
  int stages = 2;
  std::vector<int> channels_per_stage{8, 16};
  std::vector<int> skip_links{1};  // encoder stages fused into the decoder, each in [1, stages-1]
  int kernel_size = 3;
  std::uint64_t seed = 0;

  std::size_t divisor() const noexcept { return std::size_t{1} << stages; }

  void validate() const {
    detail::require(spatial_rank == 2 || spatial_rank == 3, "network: spatial_rank must be 2 or 3");
    detail::require(in_channels >= 1, "network: in_channels must be >= 1");
    detail::require(stages >= 1 && stages <= 8, "network: stages must be in [1, 8]");
    detail::require(static_cast<int>(channels_per_stage.size()) == stages,
                    "network: channels_per_stage needs one entry per stage");
    for (int c : channels_per_stage) detail::require(c >= 1, "network: channel counts must be >= 1");
    detail::require(kernel_size >= 1 && kernel_size % 2 == 1, "network: kernel_size must be odd");
    for (std::size_t i = 0; i < skip_links.size(); ++i) {
      detail::require(skip_links[i] >= 1 && skip_links[i] <= stages - 1,
                      "network: skip link " + std::to_string(skip_links[i]) + " outside [1, stages-1]");
      detail::require(i == 0 || skip_links[i] > skip_links[i - 1], "network: skip links must be strictly increasing");
    }
  }

  bool operator==(const NetworkConfig&) const = default;
};

namespace layers {

inline std::array<std::size_t, 3> kernel_ext(int rank, std::size_t k) {
  return {rank == 3 ? k : 1, k, k};
}

/// Same-size convolution with zero padding. Weight layout [out][in][kd][kh][kw].
inline Tensor conv_forward(const Tensor& in, const ParamBlock& p, std::size_t cout,
                           const std::array<std::size_t, 3>& k) {
  Tensor out(cout, in.ext);
  const auto& e = in.ext;
  const std::size_t ksz = k[0] * k[1] * k[2];
  for (std::size_t o = 0; o < cout; ++o) {
    double* op = out.channel(o);
    std::fill(op, op + out.spatial(), p.bias[o]);
    for (std::size_t i = 0; i < in.channels; ++i) {
      const double* ip = in.channel(i);
      const double* w = p.weight.data() + (o * in.channels + i) * ksz;
      for (std::size_t a = 0; a < k[0]; ++a)
        for (std::size_t b = 0; b < k[1]; ++b)
          for (std::size_t c = 0; c < k[2]; ++c) {
            const double wv = w[(a * k[1] + b) * k[2] + c];
            const long da = long(a) - long(k[0] / 2), db = long(b) - long(k[1] / 2), dc = long(c) - long(k[2] / 2);
            const long z0 = std::max(0L, -da), z1 = std::min(long(e[0]), long(e[0]) - da);
            const long y0 = std::max(0L, -db), y1 = std::min(long(e[1]), long(e[1]) - db);
            const long x0 = std::max(0L, -dc), x1 = std::min(long(e[2]), long(e[2]) - dc);
            for (long z = z0; z < z1; ++z)
              for (long y = y0; y < y1; ++y) {
                double* orow = op + (z * long(e[1]) + y) * long(e[2]);
                const double* irow = ip + ((z + da) * long(e[1]) + (y + db)) * long(e[2]) + dc;
                for (long x = x0; x < x1; ++x) orow[x] += wv * irow[x];
              }
          }
    }
  }
  return out;
}

/// Accumulates parameter gradients into `g`; writes input gradient to `gin` when non-null.
inline void conv_backward(const Tensor& in, const ParamBlock& p, const Tensor& gout,
                          const std::array<std::size_t, 3>& k, ParamBlock& g, Tensor* gin) {
  const auto& e = in.ext;
  const std::size_t ksz = k[0] * k[1] * k[2];
  if (gin) *gin = Tensor(in.channels, in.ext);
  for (std::size_t o = 0; o < gout.channels; ++o) {
    const double* gp = gout.channel(o);
    double sb = 0.0;
    for (std::size_t v = 0; v < gout.spatial(); ++v) sb += gp[v];
    g.bias[o] += sb;
    for (std::size_t i = 0; i < in.channels; ++i) {
      const double* ip = in.channel(i);
      double* gip = gin ? gin->channel(i) : nullptr;
      const double* w = p.weight.data() + (o * in.channels + i) * ksz;
      double* gw = g.weight.data() + (o * in.channels + i) * ksz;
      for (std::size_t a = 0; a < k[0]; ++a)
        for (std::size_t b = 0; b < k[1]; ++b)
          for (std::size_t c = 0; c < k[2]; ++c) {
            const std::size_t wi = (a * k[1] + b) * k[2] + c;
            const long da = long(a) - long(k[0] / 2), db = long(b) - long(k[1] / 2), dc = long(c) - long(k[2] / 2);
            const long z0 = std::max(0L, -da), z1 = std::min(long(e[0]), long(e[0]) - da);
            const long y0 = std::max(0L, -db), y1 = std::min(long(e[1]), long(e[1]) - db);
            const long x0 = std::max(0L, -dc), x1 = std::min(long(e[2]), long(e[2]) - dc);
            double acc = 0.0;
            for (long z = z0; z < z1; ++z)
              for (long y = y0; y < y1; ++y) {
                const long orow = (z * long(e[1]) + y) * long(e[2]);
                const long irow = ((z + da) * long(e[1]) + (y + db)) * long(e[2]) + dc;
                for (long x = x0; x < x1; ++x) {
                  acc += gp[orow + x] * ip[irow + x];
                  if (gip) gip[irow + x] += w[wi] * gp[orow + x];
                }
              }
            gw[wi] += acc;
          }
    }
  }
}

inline Tensor relu_forward(const Tensor& z) {
  Tensor a = z;
  for (double& v : a.data) v = v > 0.0 ? v : 0.0;
  return a;
}

inline Tensor relu_backward(const Tensor& gout, const Tensor& pre) {
  Tensor g = gout;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (!(pre.data[i] > 0.0)) g.data[i] = 0.0;
  return g;
}

/// Max-pool by `f` per axis. argmax holds, per output element, the input
/// spatial index that won; ties go to the lowest linear index.
inline Tensor maxpool_forward(const Tensor& in, const std::array<std::size_t, 3>& f, std::vector<std::size_t>& argmax) {
  const std::array<std::size_t, 3> oe{in.ext[0] / f[0], in.ext[1] / f[1], in.ext[2] / f[2]};
  Tensor out(in.channels, oe);
  argmax.assign(out.data.size(), 0);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* ip = in.channel(c);
    double* op = out.channel(c);
    std::size_t ol = 0;
    for (std::size_t z = 0; z < oe[0]; ++z)
      for (std::size_t y = 0; y < oe[1]; ++y)
        for (std::size_t x = 0; x < oe[2]; ++x, ++ol) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t bi = 0;
          for (std::size_t a = 0; a < f[0]; ++a)
            for (std::size_t b = 0; b < f[1]; ++b)
              for (std::size_t d = 0; d < f[2]; ++d) {
                const std::size_t il = ((z * f[0] + a) * in.ext[1] + (y * f[1] + b)) * in.ext[2] + (x * f[2] + d);
                if (ip[il] > best) {
                  best = ip[il];
                  bi = il;
                }
              }
          op[ol] = best;
          argmax[c * out.spatial() + ol] = bi;
        }
  }
  return out;
}

inline Tensor maxpool_backward(const Tensor& gout, const std::vector<std::size_t>& argmax,
                               const std::array<std::size_t, 3>& in_ext) {
  Tensor gin(gout.channels, in_ext);
  for (std::size_t c = 0; c < gout.channels; ++c)
    for (std::size_t ol = 0; ol < gout.spatial(); ++ol)
      gin.channel(c)[argmax[c * gout.spatial() + ol]] += gout.channel(c)[ol];
  return gin;
}

/// Transposed convolution, kernel 2s per upsampled axis, stride s, padding s/2:
/// output extent is exactly s * input extent. Weight layout [in][out][kd][kh][kw].
struct UpsampleGeometry {
  std::array<std::size_t, 3> stride{1, 2, 2};
  std::array<std::size_t, 3> kernel{1, 4, 4};
  std::array<long, 3> pad{0, 1, 1};

  static UpsampleGeometry for_rank(int rank) {
    UpsampleGeometry g;
    if (rank == 3) {
      g.stride[0] = 2;
      g.kernel[0] = 4;
      g.pad[0] = 1;
    }
    return g;
  }
  std::size_t kernel_size() const { return kernel[0] * kernel[1] * kernel[2]; }
};

inline Tensor upsample_forward(const Tensor& in, const ParamBlock& p, std::size_t cout, const UpsampleGeometry& g) {
  const std::array<std::size_t, 3> oe{in.ext[0] * g.stride[0], in.ext[1] * g.stride[1], in.ext[2] * g.stride[2]};
  Tensor out(cout, oe);
  const std::size_t ksz = g.kernel_size();
  for (std::size_t i = 0; i < in.channels; ++i) {
    const double* ip = in.channel(i);
    for (std::size_t o = 0; o < cout; ++o) {
      const double* w = p.weight.data() + (i * cout + o) * ksz;
      double* op = out.channel(o);
      for (std::size_t a = 0; a < g.kernel[0]; ++a)
        for (std::size_t b = 0; b < g.kernel[1]; ++b)
          for (std::size_t c = 0; c < g.kernel[2]; ++c) {
            const double wv = w[(a * g.kernel[1] + b) * g.kernel[2] + c];
            if (wv == 0.0) continue;
            for (std::size_t z = 0; z < in.ext[0]; ++z) {
              const long oz = long(z * g.stride[0] + a) - g.pad[0];
              if (oz < 0 || oz >= long(oe[0])) continue;
              for (std::size_t y = 0; y < in.ext[1]; ++y) {
                const long oy = long(y * g.stride[1] + b) - g.pad[1];
                if (oy < 0 || oy >= long(oe[1])) continue;
                const double* irow = ip + (z * in.ext[1] + y) * in.ext[2];
                double* orow = op + (std::size_t(oz) * oe[1] + std::size_t(oy)) * oe[2];
                for (std::size_t x = 0; x < in.ext[2]; ++x) {
                  const long ox = long(x * g.stride[2] + c) - g.pad[2];
                  if (ox < 0 || ox >= long(oe[2])) continue;
                  orow[ox] += wv * irow[x];
                }
              }
            }
          }
    }
  }
  return out;
}

inline void upsample_backward(const Tensor& in, const ParamBlock& p, const Tensor& gout, const UpsampleGeometry& g,
                              ParamBlock& grad, Tensor* gin) {
  const auto& oe = gout.ext;
  const std::size_t cout = gout.channels;
  const std::size_t ksz = g.kernel_size();
  if (gin) *gin = Tensor(in.channels, in.ext);
  for (std::size_t i = 0; i < in.channels; ++i) {
    const double* ip = in.channel(i);
    double* gip = gin ? gin->channel(i) : nullptr;
    for (std::size_t o = 0; o < cout; ++o) {
      const double* w = p.weight.data() + (i * cout + o) * ksz;
      double* gw = grad.weight.data() + (i * cout + o) * ksz;
      const double* gp = gout.channel(o);
      for (std::size_t a = 0; a < g.kernel[0]; ++a)
        for (std::size_t b = 0; b < g.kernel[1]; ++b)
          for (std::size_t c = 0; c < g.kernel[2]; ++c) {
            const std::size_t wi = (a * g.kernel[1] + b) * g.kernel[2] + c;
            double acc = 0.0;
            for (std::size_t z = 0; z < in.ext[0]; ++z) {
              const long oz = long(z * g.stride[0] + a) - g.pad[0];
              if (oz < 0 || oz >= long(oe[0])) continue;
              for (std::size_t y = 0; y < in.ext[1]; ++y) {
                const long oy = long(y * g.stride[1] + b) - g.pad[1];
                if (oy < 0 || oy >= long(oe[1])) continue;
                const std::size_t irow = (z * in.ext[1] + y) * in.ext[2];
                const std::size_t orow = (std::size_t(oz) * oe[1] + std::size_t(oy)) * oe[2];
                for (std::size_t x = 0; x < in.ext[2]; ++x) {
                  const long ox = long(x * g.stride[2] + c) - g.pad[2];
                  if (ox < 0 || ox >= long(oe[2])) continue;
                  acc += gp[orow + std::size_t(ox)] * ip[irow + x];
                  if (gip) gip[irow + x] += w[wi] * gp[orow + std::size_t(ox)];
                }
              }
            }
            gw[wi] += acc;
          }
    }
  }
}

inline void add_into(Tensor& acc, const Tensor& t) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += t.data[i];
}

}  // namespace layers

class Network;

struct ActivationCache {
  std::uint64_t version = 0;
  Grid grid;  // spatial grid of the input and of h
  Tensor input;
  std::vector<Tensor> relu_pre;  // per encoder stage, conv output before ReLU
  std::vector<Tensor> pool_in;   // per encoder stage, ReLU output
  std::vector<std::vector<std::size_t>> pool_argmax;
  std::vector<Tensor> pooled;    // pooled[s] lives at level s+1
  std::vector<Tensor> up_in;     // input of the upsampling layer that produces level s
  Tensor final_in;
};

class Network {
 public:
  const NetworkConfig& config() const noexcept { return config_; }
  const Parameters& params() const noexcept { return params_; }
  const Parameters& momentum() const noexcept { return momentum_; }
  std::uint64_t version() const noexcept { return version_; }

  /// Mutable access invalidates every activation cache taken from this network.
  Parameters& mutable_params() {
    version_ = next_version();
    return params_;
  }

  std::size_t enc_block(int s) const { return static_cast<std::size_t>(s); }
  std::size_t skip_block(int link_index) const { return static_cast<std::size_t>(config_.stages + link_index); }
  std::size_t up_block(int s) const {
    return static_cast<std::size_t>(config_.stages + static_cast<int>(config_.skip_links.size()) + s);
  }
  std::size_t final_block() const { return params_.blocks.size() - 1; }
  std::size_t decoder_channels() const { return static_cast<std::size_t>(config_.channels_per_stage.back()); }

  int skip_index(int level) const {
    const auto& l = config_.skip_links;
    const auto it = std::find(l.begin(), l.end(), level);
    return it == l.end() ? -1 : static_cast<int>(it - l.begin());
  }

 private:
  friend Network build_network(const NetworkConfig& config);
  friend Network sgd_step(Network net, const ParamGradients& grads, double lr, double momentum, double clip_norm);

  static std::uint64_t next_version() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  NetworkConfig config_;
  Parameters params_;
  Parameters momentum_;
  std::uint64_t version_ = 0;
};

namespace detail {

// SplitMix64; a fixed generator so parameters do not depend on the standard library.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

inline ParamBlock fan_in_block(std::size_t cout, std::size_t cin, std::size_t ksz, SplitMix64& rng) {
  ParamBlock b;
  b.weight.resize(cout * cin * ksz);
  const double bound = std::sqrt(6.0 / static_cast<double>(cin * ksz));
  for (double& w : b.weight) w = (2.0 * rng.uniform() - 1.0) * bound;
  b.bias.assign(cout, 0.0);
  return b;
}

inline ParamBlock bilinear_block(std::size_t channels, const layers::UpsampleGeometry& g) {
  ParamBlock b;
  const std::size_t ksz = g.kernel_size();
  b.weight.assign(channels * channels * ksz, 0.0);
  auto tap = [](std::size_t k, std::size_t i) {
    if (k == 1) return 1.0;
    // factor-2 linear interpolation taps: 0.25 0.75 0.75 0.25
    static constexpr double t[4] = {0.25, 0.75, 0.75, 0.25};
    return t[i];
  };
  for (std::size_t c = 0; c < channels; ++c) {
    double* w = b.weight.data() + (c * channels + c) * ksz;
    for (std::size_t a = 0; a < g.kernel[0]; ++a)
      for (std::size_t q = 0; q < g.kernel[1]; ++q)
        for (std::size_t r = 0; r < g.kernel[2]; ++r)
          w[(a * g.kernel[1] + q) * g.kernel[2] + r] = tap(g.kernel[0], a) * tap(g.kernel[1], q) * tap(g.kernel[2], r);
  }
  return b;
}

}  // namespace detail

inline Network build_network(const NetworkConfig& config) {
  config.validate();
  Network net;
  net.config_ = config;
  detail::SplitMix64 rng(config.seed);
  const auto k3 = layers::kernel_ext(config.spatial_rank, static_cast<std::size_t>(config.kernel_size));
  const std::size_t ksz = k3[0] * k3[1] * k3[2];
  const auto& ch = config.channels_per_stage;
  const auto dec = static_cast<std::size_t>(ch.back());
  for (int s = 0; s < config.stages; ++s) {
    const auto cin = static_cast<std::size_t>(s == 0 ? config.in_channels : ch[s - 1]);
    net.params_.blocks.push_back(detail::fan_in_block(static_cast<std::size_t>(ch[s]), cin, ksz, rng));
  }
  for (int link : config.skip_links)
    net.params_.blocks.push_back(detail::fan_in_block(dec, static_cast<std::size_t>(ch[link - 1]), 1, rng));
  const auto geom = layers::UpsampleGeometry::for_rank(config.spatial_rank);
  for (int s = 0; s < config.stages; ++s) net.params_.blocks.push_back(detail::bilinear_block(dec, geom));
  ParamBlock final_block;
  final_block.weight.assign(dec, 0.0);
  final_block.bias.assign(1, 0.0);
  net.params_.blocks.push_back(std::move(final_block));
  net.momentum_ = net.params_.zeros_like();
  net.version_ = Network::next_version();
  return net;
}

struct ForwardResult {
  Volume h;
  ActivationCache cache;
};

/// Evaluates the heatmap. Every input channel must share the same grid, whose
/// rank matches the network and whose dims are divisible by 2^stages.
inline ForwardResult forward(const Network& net, std::span<const Volume> input) {
  const auto& cfg = net.config();
  detail::require(static_cast<int>(input.size()) == cfg.in_channels,
                  "forward: expected " + std::to_string(cfg.in_channels) + " input channels, got " +
                      std::to_string(input.size()));
  const Grid& grid = input.front().grid();
  detail::require(grid.rank() == cfg.spatial_rank, "forward: input rank does not match network");
  for (const auto& v : input) detail::require_same_dims(grid, v.grid(), "forward");
  for (int a = 0; a < grid.rank(); ++a)
    detail::require(grid.dim(a) % cfg.divisor() == 0, "forward: input dim " + std::to_string(grid.dim(a)) +
                                                           " not divisible by " + std::to_string(cfg.divisor()));

  ForwardResult res;
  ActivationCache& c = res.cache;
  c.version = net.version();
  c.grid = grid;
  c.input = Tensor(input.size(), grid.ext3());
  for (std::size_t i = 0; i < input.size(); ++i)
    std::copy(input[i].values().begin(), input[i].values().end(), c.input.channel(i));

  const auto& P = net.params().blocks;
  const auto k3 = layers::kernel_ext(cfg.spatial_rank, static_cast<std::size_t>(cfg.kernel_size));
  const std::array<std::size_t, 3> pool_f{cfg.spatial_rank == 3 ? 2u : 1u, 2, 2};
  const auto geom = layers::UpsampleGeometry::for_rank(cfg.spatial_rank);
  const int S = cfg.stages;

  const Tensor* x = &c.input;
  for (int s = 0; s < S; ++s) {
    c.relu_pre.push_back(
        layers::conv_forward(*x, P[net.enc_block(s)], static_cast<std::size_t>(cfg.channels_per_stage[s]), k3));
    c.pool_in.push_back(layers::relu_forward(c.relu_pre.back()));
    c.pool_argmax.emplace_back();
    c.pooled.push_back(layers::maxpool_forward(c.pool_in.back(), pool_f, c.pool_argmax.back()));
    x = &c.pooled.back();
  }
  c.up_in.resize(static_cast<std::size_t>(S));
  Tensor d = c.pooled.back();
  for (int s = S - 1; s >= 0; --s) {
    c.up_in[static_cast<std::size_t>(s)] = std::move(d);
    d = layers::upsample_forward(c.up_in[static_cast<std::size_t>(s)], P[net.up_block(s)], net.decoder_channels(), geom);
    if (const int j = net.skip_index(s); j >= 0) {
      const Tensor fused = layers::conv_forward(c.pooled[static_cast<std::size_t>(s - 1)], P[net.skip_block(j)],
                                                net.decoder_channels(), {1, 1, 1});
      layers::add_into(d, fused);
    }
  }
  c.final_in = std::move(d);
  const Tensor out = layers::conv_forward(c.final_in, P[net.final_block()], 1, {1, 1, 1});
  res.h = Volume(grid, out.data);
  return res;
}

inline ForwardResult forward(const Network& net, const std::vector<Volume>& input) {
  return forward(net, std::span<const Volume>(input));
}

/// Gradients of C_U with respect to every parameter, given alpha2 = dC_U/dh per unit voxel volume.
inline ParamGradients backward(const Network& net, const ActivationCache& cache, const Volume& a2) {
  if (cache.version != net.version())
    throw StateError("backward: activation cache is stale (network parameters changed since forward)");
  detail::require_same_dims(cache.grid, a2.grid(), "backward");

  const auto& cfg = net.config();
  const auto& P = net.params().blocks;
  ParamGradients G = net.params().zeros_like();
  const auto k3 = layers::kernel_ext(cfg.spatial_rank, static_cast<std::size_t>(cfg.kernel_size));
  const auto geom = layers::UpsampleGeometry::for_rank(cfg.spatial_rank);
  const int S = cfg.stages;

  Tensor dh(1, cache.grid.ext3());
  const double dv = cache.grid.voxel_volume();
  for (std::size_t i = 0; i < a2.size(); ++i) dh.data[i] = a2[i] * dv;

  Tensor dd;
  layers::conv_backward(cache.final_in, P[net.final_block()], dh, {1, 1, 1}, G.blocks[net.final_block()], &dd);

  std::vector<Tensor> dpooled(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) dpooled[static_cast<std::size_t>(s)] = Tensor(cache.pooled[s].channels, cache.pooled[s].ext);

  for (int s = 0; s < S; ++s) {
    if (const int j = net.skip_index(s); j >= 0) {
      Tensor gskip;
      layers::conv_backward(cache.pooled[static_cast<std::size_t>(s - 1)], P[net.skip_block(j)], dd, {1, 1, 1},
                            G.blocks[net.skip_block(j)], &gskip);
      layers::add_into(dpooled[static_cast<std::size_t>(s - 1)], gskip);
    }
    Tensor next;
    layers::upsample_backward(cache.up_in[static_cast<std::size_t>(s)], P[net.up_block(s)], dd, geom,
                              G.blocks[net.up_block(s)], &next);
    dd = std::move(next);
  }
  layers::add_into(dpooled.back(), dd);

  for (int s = S - 1; s >= 0; --s) {
    const auto us = static_cast<std::size_t>(s);
    const Tensor da = layers::maxpool_backward(dpooled[us], cache.pool_argmax[us], cache.pool_in[us].ext);
    const Tensor dz = layers::relu_backward(da, cache.relu_pre[us]);
    const Tensor& in = s == 0 ? cache.input : cache.pooled[us - 1];
    Tensor gin;
    layers::conv_backward(in, P[net.enc_block(s)], dz, k3, G.blocks[net.enc_block(s)], s > 0 ? &gin : nullptr);
    if (s > 0) layers::add_into(dpooled[us - 1], gin);
  }
  return G;
}

/// One SGD-with-momentum step on a clipped gradient; returns the successor network.
inline Network sgd_step(Network net, const ParamGradients& grads, double lr, double momentum, double clip_norm) {
  detail::require(lr > 0.0, "sgd_step: lr must be positive");
  detail::require(momentum >= 0.0 && momentum < 1.0, "sgd_step: momentum must be in [0, 1)");
  detail::require(clip_norm > 0.0, "sgd_step: clip_norm must be positive");
  detail::require(grads.count() == net.params_.count() && grads.blocks.size() == net.params_.blocks.size(),
                  "sgd_step: gradient shape does not match network");
  detail::require(grads.all_finite(), "sgd_step: non-finite gradient");
  const double norm = grads.norm();
  const double scale = norm > clip_norm ? clip_norm / norm : 1.0;
  for (std::size_t b = 0; b < grads.blocks.size(); ++b) {
    auto step = [&](std::vector<double>& p, std::vector<double>& buf, const std::vector<double>& g) {
      detail::require(p.size() == g.size(), "sgd_step: gradient block size mismatch");
      for (std::size_t i = 0; i < p.size(); ++i) {
        buf[i] = momentum * buf[i] + scale * g[i];
        p[i] -= lr * buf[i];
      }
    };
    step(net.params_.blocks[b].weight, net.momentum_.blocks[b].weight, grads.blocks[b].weight);
    step(net.params_.blocks[b].bias, net.momentum_.blocks[b].bias, grads.blocks[b].bias);
  }
  net.version_ = Network::next_version();
  return net;
}

// Checkpoint format, all integers little-endian:
//   "DDRNET\0\0" | u32 format=1 | u32 rank | u32 in_channels | u32 stages |
//   u32 kernel | u32 channels[stages] | u32 n_links | u32 links[n_links] |
//   u64 seed | u64 param_count | f32 params[param_count]
namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t get(int n, const char* field) {
    if (pos_ + static_cast<std::size_t>(n) > b_.size())
      throw InvalidInput(std::string("network checkpoint truncated reading ") + field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline constexpr char kNetMagic[8] = {'D', 'D', 'R', 'N', 'E', 'T', 0, 0};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_network(const Network& net) {
  const auto& c = net.config();
  std::vector<std::uint8_t> out(detail::kNetMagic, detail::kNetMagic + 8);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(c.spatial_rank));
  detail::put_u32(out, static_cast<std::uint32_t>(c.in_channels));
  detail::put_u32(out, static_cast<std::uint32_t>(c.stages));
  detail::put_u32(out, static_cast<std::uint32_t>(c.kernel_size));
  for (int ch : c.channels_per_stage) detail::put_u32(out, static_cast<std::uint32_t>(ch));
  detail::put_u32(out, static_cast<std::uint32_t>(c.skip_links.size()));
  for (int l : c.skip_links) detail::put_u32(out, static_cast<std::uint32_t>(l));
  detail::put_u64(out, c.seed);
  detail::put_u64(out, net.params().count());
  net.params().for_each([&](double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32(out, bits);
  });
  return out;
}

inline Network deserialize_network(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), detail::kNetMagic, 8) != 0)
    throw InvalidInput("network checkpoint: bad magic");
  detail::ByteReader r(bytes.subspan(8));
  const auto format = r.get(4, "format");
  if (format != 1) throw InvalidInput("network checkpoint: unsupported format version " + std::to_string(format));
  NetworkConfig c;
  c.spatial_rank = static_cast<int>(r.get(4, "rank"));
  c.in_channels = static_cast<int>(r.get(4, "in_channels"));
  c.stages = static_cast<int>(r.get(4, "stages"));
  c.kernel_size = static_cast<int>(r.get(4, "kernel_size"));
  detail::require(c.stages >= 1 && c.stages <= 8, "network checkpoint: invalid stage count");
  c.channels_per_stage.clear();
  for (int s = 0; s < c.stages; ++s) c.channels_per_stage.push_back(static_cast<int>(r.get(4, "channels")));
  const auto nlinks = r.get(4, "skip link count");
  detail::require(nlinks <= 8, "network checkpoint: invalid skip link count");
  c.skip_links.clear();
  for (std::uint64_t i = 0; i < nlinks; ++i) c.skip_links.push_back(static_cast<int>(r.get(4, "skip_links")));
  c.seed = r.get(8, "seed");
  Network net = build_network(c);
  const auto count = r.get(8, "param_count");
  if (count != net.params().count())
    throw InvalidInput("network checkpoint: param_count " + std::to_string(count) + " does not match config (" +
                       std::to_string(net.params().count()) + ")");
  if (r.remaining() != count * 4) throw InvalidInput("network checkpoint: truncated parameter payload");
  net.mutable_params().for_each([&](double& v) {
    const auto bits = static_cast<std::uint32_t>(r.get(4, "params"));
    float f;
    std::memcpy(&f, &bits, 4);
    v = f;
  });
  return net;
}

inline void save_network(const Network& net, const std::string& path) {
  const auto bytes = serialize_network(net);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline Network load_network(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_network(bytes);
}

}  // namespace ddr
