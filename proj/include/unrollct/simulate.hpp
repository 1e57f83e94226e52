#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "projector.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace unrollct {

// ---------------------------------------------------------------------------
// Phantoms
// ---------------------------------------------------------------------------

struct Ellipse {
  double value;
  double a, b;    // semi-axes, unit-square coordinates
  double x0, y0;  // center
  double phi_deg;
};

/// Ten-ellipse Shepp-Logan table with the higher-contrast intensities
/// (values fall in [0, 1]).
inline const std::array<Ellipse, 10>& shepp_logan_ellipses() {
  static const std::array<Ellipse, 10> table{{
      {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
      {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
      {-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0},
      {-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0},
      {0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0},
      {0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0},
      {0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0},
      {0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0},
      {0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0},
      {0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0},
  }};
  return table;
}

inline bool ellipse_contains(const Ellipse& e, double x, double y) {
  const double phi = e.phi_deg * std::numbers::pi / 180.0;
  const double c = std::cos(phi), s = std::sin(phi);
  const double dx = x - e.x0, dy = y - e.y0;
  const double u = dx * c + dy * s, v = -dx * s + dy * c;
  return (u * u) / (e.a * e.a) + (v * v) / (e.b * e.b) <= 1.0;
}

/// Rasterize ellipses at pixel centers of a size x size grid spanning
/// [-1, 1]^2 (row 0 at the top).
inline Image rasterize_ellipses(std::span<const Ellipse> ellipses, std::size_t size, double pixel_size = 1.0) {
  Image img(size, size, pixel_size);
  const double half = (static_cast<double>(size) - 1.0) / 2.0;
  const double scale = 2.0 / static_cast<double>(size);
  for (std::size_t r = 0; r < size; ++r) {
    const double y = (half - static_cast<double>(r)) * scale;
    for (std::size_t c = 0; c < size; ++c) {
      const double x = (static_cast<double>(c) - half) * scale;
      double v = 0.0;
      for (const auto& e : ellipses)
        if (ellipse_contains(e, x, y)) v += e.value;
      img(r, c) = v;
    }
  }
  return img;
}

inline Image shepp_logan(std::size_t size, double pixel_size = 1.0) {
  if (size < 16) throw ConfigError("shepp_logan: size must be >= 16");
  const auto& t = shepp_logan_ellipses();
  return rasterize_ellipses(t, size, pixel_size);
}

/// Random head-like phantom: an outer shell with a softer interior and a few
/// random inner ellipses. Values are clamped to [0, 1].
inline Image random_phantom(std::size_t size, SplitMix64& rng, double pixel_size = 1.0) {
  std::vector<Ellipse> es;
  const double a = 0.6 + 0.25 * rng.uniform(), b = 0.7 + 0.22 * rng.uniform();
  const double phi = 30.0 * (2.0 * rng.uniform() - 1.0);
  es.push_back({1.0, a, b, 0.0, 0.0, phi});
  es.push_back({-0.8, 0.92 * a, 0.94 * b, 0.0, 0.0, phi});
  const std::size_t n_inner = 3 + static_cast<std::size_t>(rng.below(5));
  for (std::size_t k = 0; k < n_inner; ++k) {
    const double r = 0.55 * std::sqrt(rng.uniform()), th = 2.0 * std::numbers::pi * rng.uniform();
    Ellipse e;
    e.x0 = r * a * std::cos(th);
    e.y0 = r * b * std::sin(th);
    e.a = 0.04 + 0.2 * rng.uniform();
    e.b = 0.04 + 0.2 * rng.uniform();
    e.phi_deg = 180.0 * rng.uniform();
    e.value = (rng.uniform() < 0.3 ? -1.0 : 1.0) * (0.05 + 0.25 * rng.uniform());
    es.push_back(e);
  }
  Image img = rasterize_ellipses(es, size, pixel_size);
  for (double& v : img.values) v = std::clamp(v, 0.0, 1.0);
  return img;
}

// ---------------------------------------------------------------------------
// Measurements
// ---------------------------------------------------------------------------

enum class NoiseMode { Poisson, None };

struct MeasurementSimConfig {
  double I0 = 7e4;
  NoiseMode noise = NoiseMode::Poisson;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(I0 > 0.0) || !std::isfinite(I0)) throw ConfigError("simulation: I0 must be positive");
  }
};

struct Measurement {
  Sinogram counts;
  Sinogram b;  // log data
};

/// counts ~ Poisson(I0 exp(-A x)); b = -ln(max(counts, 1) / I0). Without
/// noise b is A x exactly and counts hold the expected values.
inline Measurement simulate_measurements(const Image& x, const LinearOperator& a, const MeasurementSimConfig& cfg) {
  cfg.validate();
  const Sinogram ax = a.forward(x);
  Measurement m{ax, ax};
  SplitMix64 rng(cfg.seed);
  for (std::size_t r = 0; r < ax.values.size(); ++r) {
    const double mean = cfg.I0 * std::exp(-ax.values[r]);
    if (cfg.noise == NoiseMode::None) {
      m.counts.values[r] = mean;
      continue;
    }
    const double c = rng.poisson(mean);
    m.counts.values[r] = c;
    m.b.values[r] = -std::log(std::max(c, 1.0) / cfg.I0);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Filtered back-projection
// ---------------------------------------------------------------------------

/// Spatial Ram-Lak kernel tap at offset k for detector spacing delta.
inline double ramlak_tap(long k, double delta) {
  if (k == 0) return 1.0 / (4.0 * delta * delta);
  if (k % 2 == 0) return 0.0;
  const double kk = static_cast<double>(k);
  return -1.0 / (std::numbers::pi * std::numbers::pi * kk * kk * delta * delta);
}

/// Per-angle discrete ramp filtering, q(n) = delta * sum_k h(n - k) p(k).
/// The kernel is symmetric so this map is its own transpose.
inline Sinogram ramp_filter(const Sinogram& s) {
  const std::size_t nd = s.geometry.n_detectors;
  const double delta = s.geometry.detector_spacing;
  std::vector<double> h(2 * nd - 1);
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = ramlak_tap(static_cast<long>(j) - static_cast<long>(nd - 1), delta);
  Sinogram out = s;
  for (std::size_t r = 0; r < s.rows(); ++r)
    for (std::size_t n = 0; n < nd; ++n) {
      double acc = 0.0;
      for (std::size_t k = 0; k < nd; ++k) acc += h[n + nd - 1 - k] * s(r, k);
      out(r, n) = delta * acc;
    }
  return out;
}

/// Back-projection weight: angular step 2 pi / n_angles halved because the
/// angles cover a full turn, times delta / pixel_size^2 so the ray-driven
/// transpose acts like a unit interpolating back-projector.
inline double fbp_scale(const LinearOperator& a) {
  const auto& g = a.geometry();
  const double px = a.pixel_size();
  return std::numbers::pi / static_cast<double>(g.n_angles) * g.detector_spacing / (px * px);
}

inline Image fbp(const Sinogram& b, const LinearOperator& a) {
  if (!(b.geometry == a.geometry()) || !b.is_full()) throw DimensionError("fbp: sinogram geometry mismatch");
  Image x = a.adjoint(ramp_filter(b));
  for (double& v : x.values) v *= fbp_scale(a);
  return x;
}

/// Transpose of fbp (image cotangent to sinogram cotangent).
inline Sinogram fbp_adjoint(const Image& g, const LinearOperator& a) {
  Sinogram s = a.forward(g);
  for (double& v : s.values) v *= fbp_scale(a);
  return ramp_filter(s);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double data_range(const Image& ref) {
  const auto [lo, hi] = std::minmax_element(ref.values.begin(), ref.values.end());
  return *hi - *lo;
}

/// PSNR in dB; +inf when the images agree exactly.
inline double psnr(const Image& x, const Image& ref, std::optional<double> range = std::nullopt) {
  if (!x.same_grid(ref)) throw DimensionError("psnr: dims mismatch");
  const double rng = range.value_or(data_range(ref));
  if (!(rng > 0.0)) throw std::invalid_argument("psnr: data range must be positive");
  double mse = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) mse += (x.values[j] - ref.values[j]) * (x.values[j] - ref.values[j]);
  mse /= static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(rng * rng / mse);
}

/// Mean SSIM over all fully overlapping 11x11 Gaussian windows (sigma 1.5).
inline double ssim(const Image& x, const Image& ref, std::optional<double> range = std::nullopt) {
  if (!x.same_grid(ref)) throw DimensionError("ssim: dims mismatch");
  constexpr std::size_t win = 11;
  if (x.width < win || x.height < win) throw DimensionError("ssim: image smaller than the window");
  const double rng = range.value_or(data_range(ref));
  if (!(rng > 0.0)) throw std::invalid_argument("ssim: data range must be positive");
  const double c1 = (0.01 * rng) * (0.01 * rng), c2 = (0.03 * rng) * (0.03 * rng);
  std::array<double, win> g1{};
  double gs = 0.0;
  for (std::size_t k = 0; k < win; ++k) {
    const double d = static_cast<double>(k) - 5.0;
    g1[k] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    gs += g1[k];
  }
  for (double& v : g1) v /= gs;

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r0 = 0; r0 + win <= x.height; ++r0)
    for (std::size_t c0 = 0; c0 + win <= x.width; ++c0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double w = g1[i] * g1[j];
          const double a = x(r0 + i, c0 + j), b = ref(r0 + i, c0 + j);
          mx += w * a;
          my += w * b;
          sxx += w * a * a;
          syy += w * b * b;
          sxy += w * a * b;
        }
      sxx -= mx * mx;
      syy -= my * my;
      sxy -= mx * my;
      total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace unrollct
