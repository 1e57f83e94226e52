#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "types.hpp"

namespace unrollct {

/// Interleaved partition of the projection angles: angle j lives in subset j mod m.
struct SubsetScheme {
  std::size_t m = 1;
  std::vector<std::vector<std::size_t>> assignment;

  static SubsetScheme interleaved(std::size_t n_angles, std::size_t m) {
    if (m < 1) throw ConfigError("subset scheme: m must be >= 1");
    if (n_angles % m != 0) throw ConfigError("subset scheme: m must divide n_angles");
    SubsetScheme s;
    s.m = m;
    s.assignment.resize(m);
    for (std::size_t j = 0; j < n_angles; ++j) s.assignment[j % m].push_back(j);
    return s;
  }

  [[nodiscard]] const std::vector<std::size_t>& angles(std::size_t i) const {
    if (i >= m) throw std::out_of_range("subset index out of range");
    return assignment[i];
  }
  [[nodiscard]] std::size_t angles_per_subset() const { return assignment.empty() ? 0 : assignment[0].size(); }
};

enum class OpKind { Forward, Adjoint };

/// One application of A or A^T. `row_fraction` is the share of projection
/// angles touched; `grid_cost` the relative cost of the image grid it ran on.
struct OperatorCall {
  OpKind kind;
  double row_fraction;
  double grid_cost;
};

using CallTrace = std::vector<OperatorCall>;

/// Full-operator-equivalent number of A / A^T applications.
inline double count_operator_calls(const CallTrace& trace) {
  double total = 0.0;
  for (const auto& c : trace) total += c.row_fraction * c.grid_cost;
  return total;
}

/// Exact direction cosines for angle index a out of n over [0, 2pi). When n is
/// a multiple of 4 the quarter-turn symmetry is exact: angle a + n/4 yields
/// precisely the 90 degree rotation of angle a's direction.
inline void angle_direction(std::size_t a, std::size_t n, double& c, double& s) {
  if (n % 4 == 0) {
    const std::size_t quarter = n / 4;
    const std::size_t q = a / quarter;
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(a - q * quarter) / static_cast<double>(n);
    double cc = std::cos(theta), ss = std::sin(theta);
    for (std::size_t r = 0; r < q; ++r) {
      const double t = cc;
      cc = -ss;
      ss = t;
    }
    c = cc;
    s = ss;
    return;
  }
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(a) / static_cast<double>(n);
  c = std::cos(theta);
  s = std::sin(theta);
}

/// Linear map from an image grid to (a row subset of) a sinogram, with its
/// exact transpose. Rows are grouped by "angle"; subset schemes act on those
/// groups. Implementations are immutable after construction.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;

  [[nodiscard]] virtual const Geometry& geometry() const = 0;
  [[nodiscard]] virtual std::size_t width() const = 0;
  [[nodiscard]] virtual std::size_t height() const = 0;
  [[nodiscard]] virtual double pixel_size() const = 0;
  /// Relative compute cost of one full application, used for call accounting.
  [[nodiscard]] virtual double grid_cost() const = 0;

  /// Rows of A restricted to the listed angles, in list order.
  [[nodiscard]] virtual Sinogram forward_rows(const Image& x, const std::vector<std::size_t>& angles,
                                              CallTrace* trace = nullptr) const = 0;
  /// A^T y for a full or partial sinogram; rows absent from y act as zeros.
  [[nodiscard]] virtual Image adjoint(const Sinogram& y, CallTrace* trace = nullptr) const = 0;
  /// Dense row-major n_rays x n_pixels materialization (small grids only).
  [[nodiscard]] virtual Vec dense() const = 0;

  [[nodiscard]] Sinogram forward(const Image& x, CallTrace* trace = nullptr) const {
    std::vector<std::size_t> all(geometry().n_angles);
    for (std::size_t a = 0; a < all.size(); ++a) all[a] = a;
    return forward_rows(x, all, trace);
  }
  [[nodiscard]] std::size_t n_pixels() const { return width() * height(); }
  [[nodiscard]] Image blank_image(double fill = 0.0) const { return Image(width(), height(), pixel_size(), fill); }

 protected:
  void check_image(const Image& x) const {
    if (x.width != width() || x.height != height() || x.values.size() != n_pixels())
      throw DimensionError("operator: image dims do not match the grid");
  }
  void check_sinogram(const Sinogram& y) const {
    if (!(y.geometry == geometry())) throw DimensionError("adjoint: sinogram geometry mismatch");
    if (y.values.size() != y.angles.size() * geometry().n_detectors)
      throw DimensionError("adjoint: sinogram length mismatch");
    for (std::size_t a : y.angles)
      if (a >= geometry().n_angles) throw std::out_of_range("operator: angle index out of range");
  }
  void record(CallTrace* trace, OpKind kind, std::size_t rows) const {
    if (trace)
      trace->push_back({kind, static_cast<double>(rows) / static_cast<double>(geometry().n_angles), grid_cost()});
  }
};

/// Parallel-beam ray-driven projector with exact pixel intersection lengths.
///
/// Ray (a, t) is the line { p : <p, (cos th_a, sin th_a)> = t_d } with detector
/// offsets t_d = (d - (n_det - 1) / 2) * spacing. The image grid is centered on
/// the rotation axis. Weights are stored as a CSR matrix so that forward and
/// adjoint are an exact transposed pair. A ray running exactly along a grid
/// line splits its length equally between the two neighbouring pixels.
class Projector final : public LinearOperator {
 public:
  Projector() = default;

  Projector(const Geometry& geometry, std::size_t width, std::size_t height, double pixel_size, double grid_cost = 1.0)
      : geometry_(geometry), width_(width), height_(height), pixel_size_(pixel_size), grid_cost_(grid_cost) {
    geometry_.validate();
    if (width < 1 || height < 1) throw ConfigError("projector: image dims must be >= 1");
    if (!(pixel_size > 0.0)) throw ConfigError("projector: pixel_size must be positive");
    build();
  }

  [[nodiscard]] const Geometry& geometry() const override { return geometry_; }
  [[nodiscard]] std::size_t width() const override { return width_; }
  [[nodiscard]] std::size_t height() const override { return height_; }
  [[nodiscard]] double pixel_size() const override { return pixel_size_; }
  [[nodiscard]] double grid_cost() const override { return grid_cost_; }
  [[nodiscard]] std::size_t nnz() const { return cols_.size(); }

  [[nodiscard]] Sinogram forward_rows(const Image& x, const std::vector<std::size_t>& angles,
                                      CallTrace* trace = nullptr) const override {
    check_image(x);
    Sinogram out(geometry_, angles);
    const std::size_t nd = geometry_.n_detectors;
    for (std::size_t r = 0; r < angles.size(); ++r) {
      if (angles[r] >= geometry_.n_angles) throw std::out_of_range("projector: angle index out of range");
      for (std::size_t d = 0; d < nd; ++d) {
        const std::size_t ray = angles[r] * nd + d;
        double acc = 0.0;
        for (std::size_t k = row_ptr_[ray]; k < row_ptr_[ray + 1]; ++k) acc += vals_[k] * x.values[cols_[k]];
        out.values[r * nd + d] = acc;
      }
    }
    record(trace, OpKind::Forward, angles.size());
    return out;
  }

  [[nodiscard]] Image adjoint(const Sinogram& y, CallTrace* trace = nullptr) const override {
    check_sinogram(y);
    Image out = blank_image();
    const std::size_t nd = geometry_.n_detectors;
    for (std::size_t r = 0; r < y.angles.size(); ++r) {
      for (std::size_t d = 0; d < nd; ++d) {
        const std::size_t ray = y.angles[r] * nd + d;
        const double v = y.values[r * nd + d];
        if (v == 0.0) continue;
        for (std::size_t k = row_ptr_[ray]; k < row_ptr_[ray + 1]; ++k) out.values[cols_[k]] += vals_[k] * v;
      }
    }
    record(trace, OpKind::Adjoint, y.angles.size());
    return out;
  }

  [[nodiscard]] Vec dense() const override {
    Vec m(geometry_.n_rays() * n_pixels(), 0.0);
    for (std::size_t ray = 0; ray < geometry_.n_rays(); ++ray)
      for (std::size_t k = row_ptr_[ray]; k < row_ptr_[ray + 1]; ++k) m[ray * n_pixels() + cols_[k]] += vals_[k];
    return m;
  }

  /// Nonzero weights of one ray as (pixel, length) pairs.
  [[nodiscard]] std::vector<std::pair<std::size_t, double>> ray_weights(std::size_t angle, std::size_t det) const {
    const std::size_t ray = angle * geometry_.n_detectors + det;
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t k = row_ptr_[ray]; k < row_ptr_[ray + 1]; ++k) out.emplace_back(cols_[k], vals_[k]);
    return out;
  }

 private:
  void build() {
    const std::size_t nd = geometry_.n_detectors;
    row_ptr_.assign(geometry_.n_rays() + 1, 0);
    std::vector<std::pair<std::size_t, double>> buf;
    for (std::size_t a = 0; a < geometry_.n_angles; ++a) {
      double c, s;
      angle_direction(a, geometry_.n_angles, c, s);
      for (std::size_t d = 0; d < nd; ++d) {
        const double t = (static_cast<double>(d) - 0.5 * static_cast<double>(nd - 1)) * geometry_.detector_spacing;
        buf.clear();
        trace_ray(c, s, t, buf);
        std::sort(buf.begin(), buf.end());
        // merge duplicate pixels (split rays and segment boundaries)
        std::size_t w = 0;
        for (std::size_t k = 0; k < buf.size(); ++k) {
          if (w > 0 && buf[w - 1].first == buf[k].first)
            buf[w - 1].second += buf[k].second;
          else
            buf[w++] = buf[k];
        }
        buf.resize(w);
        for (const auto& [pix, len] : buf) {
          if (len <= 0.0) continue;
          cols_.push_back(static_cast<std::uint32_t>(pix));
          vals_.push_back(len);
        }
        row_ptr_[a * nd + d + 1] = cols_.size();
      }
    }
  }

  // Siddon traversal of the ray p(u) = t * (c, s) + u * (-s, c).
  void trace_ray(double c, double s, double t, std::vector<std::pair<std::size_t, double>>& out) const {
    const double px = pixel_size_;
    const double x0 = -0.5 * static_cast<double>(width_) * px;
    const double x1 = -x0;
    const double ytop = 0.5 * static_cast<double>(height_) * px;
    const double ybot = -ytop;
    const double ox = t * c, oy = t * s;
    const double dx = -s, dy = c;

    double umin = -INFINITY, umax = INFINITY;
    auto clip = [&](double o, double dir, double lo, double hi) -> bool {
      if (dir == 0.0) return o >= lo && o <= hi;
      double ua = (lo - o) / dir, ub = (hi - o) / dir;
      if (ua > ub) std::swap(ua, ub);
      umin = std::max(umin, ua);
      umax = std::min(umax, ub);
      return true;
    };
    if (!clip(ox, dx, x0, x1) || !clip(oy, dy, ybot, ytop)) return;
    if (!(umax > umin)) return;

    std::vector<double> us;
    us.reserve(width_ + height_ + 4);
    us.push_back(umin);
    us.push_back(umax);
    if (dx != 0.0)
      for (std::size_t i = 0; i <= width_; ++i) {
        const double u = (x0 + static_cast<double>(i) * px - ox) / dx;
        if (u > umin && u < umax) us.push_back(u);
      }
    if (dy != 0.0)
      for (std::size_t i = 0; i <= height_; ++i) {
        const double u = (ytop - static_cast<double>(i) * px - oy) / dy;
        if (u > umin && u < umax) us.push_back(u);
      }
    std::sort(us.begin(), us.end());

    const auto W = static_cast<long>(width_), H = static_cast<long>(height_);
    for (std::size_t k = 0; k + 1 < us.size(); ++k) {
      const double len = us[k + 1] - us[k];
      if (!(len > 0.0)) continue;
      const double um = 0.5 * (us[k] + us[k + 1]);
      const double mx = ox + um * dx, my = oy + um * dy;
      const double fc = (mx - x0) / px;
      const double fr = (ytop - my) / px;
      // Axis-aligned ray lying exactly on a grid line: split between neighbours.
      std::vector<std::pair<long, double>> cols_w, rows_w;
      if (dx == 0.0 && fc == std::floor(fc)) {
        const long cl = static_cast<long>(fc);
        if (cl - 1 >= 0) cols_w.emplace_back(cl - 1, 0.5);
        if (cl < W) cols_w.emplace_back(cl, 0.5);
      } else {
        cols_w.emplace_back(std::clamp(static_cast<long>(std::floor(fc)), 0L, W - 1), 1.0);
      }
      if (dy == 0.0 && fr == std::floor(fr)) {
        const long rl = static_cast<long>(fr);
        if (rl - 1 >= 0) rows_w.emplace_back(rl - 1, 0.5);
        if (rl < H) rows_w.emplace_back(rl, 0.5);
      } else {
        rows_w.emplace_back(std::clamp(static_cast<long>(std::floor(fr)), 0L, H - 1), 1.0);
      }
      for (const auto& [r, wr] : rows_w)
        for (const auto& [cc, wc] : cols_w)
          out.emplace_back(static_cast<std::size_t>(r) * width_ + static_cast<std::size_t>(cc), len * wr * wc);
    }
  }

  Geometry geometry_;
  std::size_t width_ = 0, height_ = 0;
  double pixel_size_ = 1.0;
  double grid_cost_ = 1.0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> cols_;
  Vec vals_;
};

/// Explicit matrix operator. Rows are grouped into `geometry.n_angles` views
/// of `geometry.n_detectors` rows each; the image is a 1 x d row vector
/// unless another grid shape is given.
class DenseOperator final : public LinearOperator {
 public:
  DenseOperator(Vec matrix, std::size_t rows, std::size_t cols, std::size_t rows_per_view = 1)
      : DenseOperator(std::move(matrix), Geometry{rows / rows_per_view, rows_per_view, 1.0}, cols, 1) {
    if (rows % rows_per_view != 0) throw ConfigError("dense operator: rows_per_view must divide rows");
  }

  DenseOperator(Vec matrix, const Geometry& geometry, std::size_t width, std::size_t height)
      : geometry_(geometry), width_(width), height_(height), m_(std::move(matrix)) {
    geometry_.validate();
    if (m_.size() != geometry_.n_rays() * width_ * height_) throw DimensionError("dense operator: matrix size");
  }

  [[nodiscard]] const Geometry& geometry() const override { return geometry_; }
  [[nodiscard]] std::size_t width() const override { return width_; }
  [[nodiscard]] std::size_t height() const override { return height_; }
  [[nodiscard]] double pixel_size() const override { return 1.0; }
  [[nodiscard]] double grid_cost() const override { return 1.0; }

  [[nodiscard]] Sinogram forward_rows(const Image& x, const std::vector<std::size_t>& angles,
                                      CallTrace* trace = nullptr) const override {
    check_image(x);
    Sinogram out(geometry_, angles);
    const std::size_t nd = geometry_.n_detectors, d = n_pixels();
    for (std::size_t r = 0; r < angles.size(); ++r) {
      if (angles[r] >= geometry_.n_angles) throw std::out_of_range("operator: angle index out of range");
      for (std::size_t t = 0; t < nd; ++t) {
        const double* row = m_.data() + (angles[r] * nd + t) * d;
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * x.values[j];
        out.values[r * nd + t] = acc;
      }
    }
    record(trace, OpKind::Forward, angles.size());
    return out;
  }

  [[nodiscard]] Image adjoint(const Sinogram& y, CallTrace* trace = nullptr) const override {
    check_sinogram(y);
    Image out = blank_image();
    const std::size_t nd = geometry_.n_detectors, d = n_pixels();
    for (std::size_t r = 0; r < y.angles.size(); ++r)
      for (std::size_t t = 0; t < nd; ++t) {
        const double v = y.values[r * nd + t];
        const double* row = m_.data() + (y.angles[r] * nd + t) * d;
        for (std::size_t j = 0; j < d; ++j) out.values[j] += row[j] * v;
      }
    record(trace, OpKind::Adjoint, y.angles.size());
    return out;
  }

  [[nodiscard]] Vec dense() const override { return m_; }

 private:
  Geometry geometry_;
  std::size_t width_, height_;
  Vec m_;
};

/// Full-resolution projector. `require_square` is set when rotation
/// equivariance is needed downstream.
inline Projector build_projector(const Geometry& geometry, std::size_t width, std::size_t height, double pixel_size,
                                 bool require_square = false) {
  if (require_square && width != height)
    throw ConfigError("build_projector: equivariance features need a square grid");
  if (require_square && geometry.n_angles % 4 != 0)
    throw ConfigError("build_projector: equivariance features need n_angles divisible by 4");
  return Projector(geometry, width, height, pixel_size);
}

/// Projector on the coarse grid (dims / factor, pixel size * factor). Its
/// cost weight is 1 / factor: ray-driven work scales with the number of
/// pixels crossed per ray, i.e. with the grid side length.
inline Projector build_sketched_projector(const Geometry& geometry, std::size_t width, std::size_t height,
                                          double pixel_size, std::size_t factor) {
  if (factor < 1) throw ConfigError("sketch factor must be >= 1");
  if (width % factor != 0 || height % factor != 0) throw ConfigError("sketch factor must divide image dims");
  if (factor == 1) return Projector(geometry, width, height, pixel_size);
  return Projector(geometry, width / factor, height / factor, pixel_size * static_cast<double>(factor),
                   1.0 / static_cast<double>(factor));
}

/// Convenience: restricted forward / adjoint for subset i.
inline Sinogram subset_forward(const LinearOperator& p, const SubsetScheme& scheme, std::size_t i, const Image& x,
                               CallTrace* trace = nullptr) {
  return p.forward_rows(x, scheme.angles(i), trace);
}

inline Image subset_adjoint(const LinearOperator& p, const SubsetScheme& scheme, std::size_t i, const Sinogram& y,
                            CallTrace* trace = nullptr) {
  if (y.angles != scheme.angles(i)) throw DimensionError("subset_adjoint: rows do not match subset");
  return p.adjoint(y, trace);
}

/// Extract / scatter the rows of subset i from a full sinogram.
inline Sinogram restrict_rows(const Sinogram& full, const std::vector<std::size_t>& angles) {
  if (!full.is_full()) throw DimensionError("restrict_rows: expected a full sinogram");
  Sinogram out(full.geometry, angles);
  const std::size_t nd = full.geometry.n_detectors;
  for (std::size_t r = 0; r < angles.size(); ++r)
    std::copy_n(full.values.begin() + static_cast<std::ptrdiff_t>(angles[r] * nd), nd,
                out.values.begin() + static_cast<std::ptrdiff_t>(r * nd));
  return out;
}

inline void scatter_add_rows(const Sinogram& part, Sinogram& full) {
  const std::size_t nd = full.geometry.n_detectors;
  for (std::size_t r = 0; r < part.angles.size(); ++r)
    for (std::size_t d = 0; d < nd; ++d) full.values[part.angles[r] * nd + d] += part.values[r * nd + d];
}

}  // namespace unrollct
