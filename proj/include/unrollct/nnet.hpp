#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rng.hpp"
#include "types.hpp"

namespace unrollct {

/// Channel-major stack of equally sized 2D planes.
struct Planes {
  std::size_t channels = 0, height = 0, width = 0;
  Vec data;

  Planes() = default;
  Planes(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  [[nodiscard]] std::size_t plane_size() const { return height * width; }
  std::span<double> plane(std::size_t c) { return {data.data() + c * plane_size(), plane_size()}; }
  [[nodiscard]] std::span<const double> plane(std::size_t c) const {
    return {data.data() + c * plane_size(), plane_size()};
  }
  void set_plane(std::size_t c, std::span<const double> v) {
    if (v.size() != plane_size()) throw DimensionError("Planes::set_plane: size mismatch");
    std::copy(v.begin(), v.end(), data.begin() + static_cast<std::ptrdiff_t>(c * plane_size()));
  }
};

struct ConvLayerShape {
  std::size_t out_ch, in_ch, k;
  [[nodiscard]] std::size_t kernel_count() const { return out_ch * in_ch * k * k; }
  [[nodiscard]] std::size_t param_count() const { return kernel_count() + out_ch; }
};

inline constexpr double kLeakySlope = 0.1;

/// Recorded activations of one forward pass. acts[0] is the input,
/// pre[l] the pre-activation of layer l, acts[l + 1] its output.
struct Tape {
  std::vector<Planes> acts;
  std::vector<Planes> pre;
};

/// Small convolutional subnet: zero-padded "same" convolutions, leaky
/// rectifier between layers, linear last layer with one output channel,
/// optional skip connection adding input channel 0 to the output.
///
/// Parameters live in one flat vector, layer by layer: kernels laid out
/// (out, in, ky, kx) followed by the biases.
class ConvSubnet {
 public:
  ConvSubnet() = default;

  ConvSubnet(std::vector<ConvLayerShape> layers, bool skip) : layers_(std::move(layers)), skip_(skip) {
    if (layers_.empty()) throw ConfigError("subnet: needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].k % 2 == 0) throw ConfigError("subnet: kernel sizes must be odd");
      if (l > 0 && layers_[l].in_ch != layers_[l - 1].out_ch) throw ConfigError("subnet: channel mismatch");
    }
    if (layers_.back().out_ch != 1) throw ConfigError("subnet: last layer must have one output channel");
    std::size_t n = 0;
    for (const auto& s : layers_) {
      offsets_.push_back(n);
      n += s.param_count();
    }
    params_.assign(n, 0.0);
  }

  /// in_ch -> hidden x (depth - 1) -> 1, all with the same odd kernel size.
  static ConvSubnet make(std::size_t in_ch, std::size_t hidden, std::size_t depth, std::size_t k, bool skip) {
    std::vector<ConvLayerShape> ls;
    std::size_t c = in_ch;
    for (std::size_t l = 0; l + 1 < depth; ++l) {
      ls.push_back({hidden, c, k});
      c = hidden;
    }
    ls.push_back({1, c, k});
    return ConvSubnet(std::move(ls), skip);
  }

  /// Kernels uniform in +-1/sqrt(fan_in), biases zero.
  void init_uniform(SplitMix64& rng) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& s = layers_[l];
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.in_ch * s.k * s.k));
      for (std::size_t q = 0; q < s.kernel_count(); ++q) params_[offsets_[l] + q] = bound * (2.0 * rng.uniform() - 1.0);
      for (std::size_t q = 0; q < s.out_ch; ++q) params_[offsets_[l] + s.kernel_count() + q] = 0.0;
    }
  }

  [[nodiscard]] const std::vector<ConvLayerShape>& layers() const { return layers_; }
  [[nodiscard]] bool skip() const { return skip_; }
  [[nodiscard]] std::size_t in_channels() const { return layers_.front().in_ch; }
  [[nodiscard]] std::size_t param_count() const { return params_.size(); }
  [[nodiscard]] std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  [[nodiscard]] double kernel(std::size_t l, std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    const auto& s = layers_[l];
    return params_[offsets_[l] + ((o * s.in_ch + i) * s.k + ky) * s.k + kx];
  }
  [[nodiscard]] double bias(std::size_t l, std::size_t o) const {
    return params_[offsets_[l] + layers_[l].kernel_count() + o];
  }

  /// Forward pass; the returned plane stack has one channel.
  Planes forward(const Planes& input, Tape* tape = nullptr) const {
    if (input.channels != in_channels()) throw DimensionError("subnet: input channel count mismatch");
    Planes a = input;
    if (tape) {
      tape->acts.clear();
      tape->pre.clear();
      tape->acts.push_back(a);
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Planes z = conv(l, a);
      const bool last = l + 1 == layers_.size();
      if (tape) tape->pre.push_back(z);
      if (!last)
        for (double& v : z.data) v = v > 0.0 ? v : kLeakySlope * v;
      a = std::move(z);
      if (tape && !last) tape->acts.push_back(a);
    }
    if (skip_) {
      auto src = input.plane(0);
      auto dst = a.plane(0);
      for (std::size_t q = 0; q < dst.size(); ++q) dst[q] += src[q];
    }
    return a;
  }

  /// Reverse pass. Accumulates into `param_grad` (length param_count()) and
  /// returns the input cotangent.
  Planes backward(const Tape& tape, const Planes& out_grad, std::span<double> param_grad) const {
    if (tape.pre.size() != layers_.size() || tape.acts.size() != layers_.size())
      throw std::invalid_argument("subnet: tape does not match this network");
    if (param_grad.size() != params_.size()) throw DimensionError("subnet: gradient buffer size");
    const Planes& input = tape.acts.front();
    if (out_grad.channels != 1 || out_grad.plane_size() != input.plane_size())
      throw DimensionError("subnet: output cotangent shape");

    Planes g = out_grad;
    Planes gin;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const bool last = l + 1 == layers_.size();
      if (!last) {
        const auto& z = tape.pre[l].data;
        for (std::size_t q = 0; q < g.data.size(); ++q) g.data[q] *= z[q] > 0.0 ? 1.0 : kLeakySlope;
      }
      g = conv_backward(l, tape.acts[l], g, param_grad);
    }
    if (skip_) {
      auto dst = g.plane(0);
      auto src = out_grad.plane(0);
      for (std::size_t q = 0; q < dst.size(); ++q) dst[q] += src[q];
    }
    return g;
  }

 private:
  Planes conv(std::size_t l, const Planes& a) const {
    const auto& s = layers_[l];
    const std::size_t H = a.height, W = a.width, k = s.k;
    const long p = static_cast<long>(k / 2);
    const double* K = params_.data() + offsets_[l];
    const double* B = K + s.kernel_count();
    Planes z(s.out_ch, H, W);
    for (std::size_t o = 0; o < s.out_ch; ++o) {
      double* zo = z.data.data() + o * H * W;
      for (std::size_t q = 0; q < H * W; ++q) zo[q] = B[o];
      for (std::size_t i = 0; i < s.in_ch; ++i) {
        const double* ai = a.data.data() + i * H * W;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double w = K[((o * s.in_ch + i) * k + ky) * k + kx];
            const long dy = static_cast<long>(ky) - p, dx = static_cast<long>(kx) - p;
            const std::size_t y0 = static_cast<std::size_t>(std::max(0L, -dy));
            const std::size_t y1 = static_cast<std::size_t>(std::min<long>(static_cast<long>(H), static_cast<long>(H) - dy));
            const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -dx));
            const std::size_t x1 = static_cast<std::size_t>(std::min<long>(static_cast<long>(W), static_cast<long>(W) - dx));
            for (std::size_t y = y0; y < y1; ++y) {
              const double* src = ai + (static_cast<long>(y) + dy) * static_cast<long>(W) + dx;
              double* dst = zo + y * W;
              for (std::size_t x = x0; x < x1; ++x) dst[x] += w * src[x];
            }
          }
      }
    }
    return z;
  }

  Planes conv_backward(std::size_t l, const Planes& a, const Planes& gz, std::span<double> param_grad) const {
    const auto& s = layers_[l];
    const std::size_t H = a.height, W = a.width, k = s.k;
    const long p = static_cast<long>(k / 2);
    const double* K = params_.data() + offsets_[l];
    double* gK = param_grad.data() + offsets_[l];
    double* gB = gK + s.kernel_count();
    Planes ga(s.in_ch, H, W);
    for (std::size_t o = 0; o < s.out_ch; ++o) {
      const double* go = gz.data.data() + o * H * W;
      double bsum = 0.0;
      for (std::size_t q = 0; q < H * W; ++q) bsum += go[q];
      gB[o] += bsum;
      for (std::size_t i = 0; i < s.in_ch; ++i) {
        const double* ai = a.data.data() + i * H * W;
        double* gai = ga.data.data() + i * H * W;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t widx = ((o * s.in_ch + i) * k + ky) * k + kx;
            const double w = K[widx];
            const long dy = static_cast<long>(ky) - p, dx = static_cast<long>(kx) - p;
            const std::size_t y0 = static_cast<std::size_t>(std::max(0L, -dy));
            const std::size_t y1 = static_cast<std::size_t>(std::min<long>(static_cast<long>(H), static_cast<long>(H) - dy));
            const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -dx));
            const std::size_t x1 = static_cast<std::size_t>(std::min<long>(static_cast<long>(W), static_cast<long>(W) - dx));
            double acc = 0.0;
            for (std::size_t y = y0; y < y1; ++y) {
              const long off = (static_cast<long>(y) + dy) * static_cast<long>(W) + dx;
              const double* src = ai + off;
              double* dst = gai + off;
              const double* g = go + y * W;
              for (std::size_t x = x0; x < x1; ++x) {
                acc += g[x] * src[x];
                dst[x] += w * g[x];
              }
            }
            gK[widx] += acc;
          }
      }
    }
    return ga;
  }

  std::vector<ConvLayerShape> layers_;
  std::vector<std::size_t> offsets_;
  bool skip_ = false;
  Vec params_;
};

}  // namespace unrollct
