#pragma once

#include <algorithm>
#include <cmath>

#include "types.hpp"

namespace unrollct {

// Fixed up/down-sampling pair used by the sketched operators.
//
//   downsample2: out(i, j) = mean of the 2x2 block {2i, 2i+1} x {2j, 2j+1}
//   upsample2:   bilinear, output (i, j) samples the input at
//                ((i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5), clamped to the border.
//
// Along one axis the upsampler weights are therefore
//   even output 2k:   0.25 * in[k-1] + 0.75 * in[k]   (k = 0 clamps to in[0])
//   odd output 2k+1:  0.75 * in[k]   + 0.25 * in[k+1] (last k clamps to in[k])
// Interpolation is evaluated as a + t * (b - a) so constants pass through exactly.
// The upsampler is not the adjoint of the downsampler.

namespace detail {

struct Tap {
  std::size_t lo, hi;
  double t;  // weight of hi
};

// 1D upsampling taps for output index o of an axis of coarse length n.
inline Tap upsample2_tap(std::size_t o, std::size_t n) {
  const double u = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
  if (u <= 0.0) return {0, 0, 0.0};
  const double maxu = static_cast<double>(n - 1);
  if (u >= maxu) return {n - 1, n - 1, 0.0};
  const auto lo = static_cast<std::size_t>(std::floor(u));
  return {lo, lo + 1, u - static_cast<double>(lo)};
}

}  // namespace detail

inline Image downsample2(const Image& x) {
  if (x.width % 2 != 0 || x.height % 2 != 0) throw DimensionError("downsample2: dims must be even");
  Image out(x.width / 2, x.height / 2, x.pixel_size * 2.0);
  for (std::size_t i = 0; i < out.height; ++i)
    for (std::size_t j = 0; j < out.width; ++j) {
      const double top = x(2 * i, 2 * j) + x(2 * i, 2 * j + 1);
      const double bot = x(2 * i + 1, 2 * j) + x(2 * i + 1, 2 * j + 1);
      out(i, j) = 0.25 * (top + bot);
    }
  return out;
}

/// Transpose of downsample2: each fine pixel receives a quarter of its block.
inline Image downsample2_adjoint(const Image& g) {
  Image out(g.width * 2, g.height * 2, g.pixel_size / 2.0);
  for (std::size_t i = 0; i < out.height; ++i)
    for (std::size_t j = 0; j < out.width; ++j) out(i, j) = 0.25 * g(i / 2, j / 2);
  return out;
}

inline Image upsample2(const Image& x) {
  Image out(x.width * 2, x.height * 2, x.pixel_size / 2.0);
  for (std::size_t i = 0; i < out.height; ++i) {
    const auto r = detail::upsample2_tap(i, x.height);
    for (std::size_t j = 0; j < out.width; ++j) {
      const auto c = detail::upsample2_tap(j, x.width);
      const double a = x(r.lo, c.lo) + c.t * (x(r.lo, c.hi) - x(r.lo, c.lo));
      const double b = x(r.hi, c.lo) + c.t * (x(r.hi, c.hi) - x(r.hi, c.lo));
      out(i, j) = a + r.t * (b - a);
    }
  }
  return out;
}

/// Transpose of upsample2 (scatter of the bilinear weights).
inline Image upsample2_adjoint(const Image& g) {
  if (g.width % 2 != 0 || g.height % 2 != 0) throw DimensionError("upsample2_adjoint: dims must be even");
  Image out(g.width / 2, g.height / 2, g.pixel_size * 2.0);
  for (std::size_t i = 0; i < g.height; ++i) {
    const auto r = detail::upsample2_tap(i, out.height);
    for (std::size_t j = 0; j < g.width; ++j) {
      const auto c = detail::upsample2_tap(j, out.width);
      const double v = g(i, j);
      out(r.lo, c.lo) += (1.0 - r.t) * (1.0 - c.t) * v;
      out(r.lo, c.hi) += (1.0 - r.t) * c.t * v;
      out(r.hi, c.lo) += r.t * (1.0 - c.t) * v;
      out(r.hi, c.hi) += r.t * c.t * v;
    }
  }
  return out;
}

// Factor-generic wrappers; factor 1 is the identity (exact copy).

inline Image sketch_down(const Image& x, std::size_t factor) {
  if (factor == 1) return x;
  if (factor == 2) return downsample2(x);
  throw ConfigError("sketch factor must be 1 or 2");
}
inline Image sketch_down_adjoint(const Image& g, std::size_t factor) {
  if (factor == 1) return g;
  if (factor == 2) return downsample2_adjoint(g);
  throw ConfigError("sketch factor must be 1 or 2");
}
inline Image sketch_up(const Image& x, std::size_t factor) {
  if (factor == 1) return x;
  if (factor == 2) return upsample2(x);
  throw ConfigError("sketch factor must be 1 or 2");
}
inline Image sketch_up_adjoint(const Image& g, std::size_t factor) {
  if (factor == 1) return g;
  if (factor == 2) return upsample2_adjoint(g);
  throw ConfigError("sketch factor must be 1 or 2");
}

}  // namespace unrollct
