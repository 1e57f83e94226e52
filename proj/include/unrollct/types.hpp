#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unrollct {

using Vec = std::vector<double>;

// Error taxonomy. The CLI maps these onto exit codes.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense real image, row-major. Row 0 is the top of the field of view.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  double pixel_size = 1.0;
  Vec values;

  Image() = default;
  Image(std::size_t w, std::size_t h, double px = 1.0, double fill = 0.0)
      : width(w), height(h), pixel_size(px), values(w * h, fill) {}

  [[nodiscard]] std::size_t size() const { return values.size(); }
  double& operator()(std::size_t row, std::size_t col) { return values[row * width + col]; }
  double operator()(std::size_t row, std::size_t col) const { return values[row * width + col]; }

  [[nodiscard]] bool same_grid(const Image& o) const {
    return width == o.width && height == o.height;
  }
};

/// Parallel-beam acquisition. Angle a sits at 2*pi*a/n_angles.
struct Geometry {
  std::size_t n_angles = 1;
  std::size_t n_detectors = 1;
  double detector_spacing = 1.0;

  void validate() const {
    if (n_angles < 1 || n_detectors < 1) throw ConfigError("geometry: n_angles and n_detectors must be >= 1");
    if (!(detector_spacing > 0.0) || !std::isfinite(detector_spacing))
      throw ConfigError("geometry: detector_spacing must be positive");
  }
  [[nodiscard]] std::size_t n_rays() const { return n_angles * n_detectors; }
  bool operator==(const Geometry&) const = default;
};

/// Measurements indexed (angle, detector). Partial sinograms from a subset
/// keep the full geometry but carry only `angles.size()` rows.
struct Sinogram {
  Geometry geometry;
  std::vector<std::size_t> angles;  // angle index of each stored row
  Vec values;

  Sinogram() = default;
  explicit Sinogram(const Geometry& g, double fill = 0.0) : geometry(g), angles(g.n_angles), values(g.n_rays(), fill) {
    std::iota(angles.begin(), angles.end(), std::size_t{0});
  }
  Sinogram(const Geometry& g, std::vector<std::size_t> rows, double fill = 0.0)
      : geometry(g), angles(std::move(rows)), values(angles.size() * g.n_detectors, fill) {}

  [[nodiscard]] std::size_t rows() const { return angles.size(); }
  [[nodiscard]] std::size_t cols() const { return geometry.n_detectors; }
  [[nodiscard]] bool is_full() const { return angles.size() == geometry.n_angles; }
  double& operator()(std::size_t row, std::size_t det) { return values[row * geometry.n_detectors + det]; }
  double operator()(std::size_t row, std::size_t det) const { return values[row * geometry.n_detectors + det]; }
};

// Small vector helpers shared across modules.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double dist2(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dist2: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace unrollct
