#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <variant>
#include <vector>

#include "types.hpp"

namespace unrollct {

// ---------------------------------------------------------------------------
// Weighted least-squares dual prox
// ---------------------------------------------------------------------------

/// Step size and per-subset diagonal weights of f_{b,W}(z) = 1/2 ||W^{1/2}(z - b)||^2.
struct DualProxParams {
  double sigma = 1.0;
  std::vector<Vec> weights;  // one diagonal per subset

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("dual prox: sigma must be positive");
    for (const auto& w : weights)
      for (double v : w)
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("dual prox: weights must be finite and >= 0");
  }
};

struct HJ {
  Vec h, j;
};

/// Diagonals of H = I - (I + W/sigma)^{-1} and J = (I + W/sigma)^{-1} W:
/// h = w / (sigma + w), j = sigma * w / (sigma + w).
inline HJ hj_diagonals(std::span<const double> w, double sigma) {
  HJ out{Vec(w.size()), Vec(w.size())};
  for (std::size_t k = 0; k < w.size(); ++k) {
    out.h[k] = w[k] / (sigma + w[k]);
    out.j[k] = sigma * out.h[k];
  }
  return out;
}

inline HJ hj_diagonals(const DualProxParams& p, std::size_t i) {
  if (i >= p.weights.size()) throw std::out_of_range("hj_diagonals: subset index out of range");
  return hj_diagonals(p.weights[i], p.sigma);
}

/// prox_{sigma f*}(y + sigma z) for the weighted least-squares fidelity:
/// y' = h.y + sigma h.z - j.b (coordinate-wise).
inline Vec dual_prox_step(std::span<const double> y, std::span<const double> z, std::span<const double> b,
                          std::span<const double> w, double sigma) {
  if (y.size() != z.size() || y.size() != b.size() || y.size() != w.size())
    throw DimensionError("dual_prox_step: length mismatch");
  Vec out(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double h = w[k] / (sigma + w[k]);
    out[k] = h * y[k] + sigma * h * z[k] - sigma * h * b[k];
  }
  return out;
}

inline Vec dual_prox_step(std::span<const double> y, std::span<const double> z, std::span<const double> b,
                          const DualProxParams& p, std::size_t i) {
  if (i >= p.weights.size()) throw std::out_of_range("dual_prox_step: subset index out of range");
  return dual_prox_step(y, z, b, p.weights[i], p.sigma);
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

inline Vec soft_threshold(std::span<const double> v, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("soft_threshold: lambda must be >= 0");
  Vec out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double m = std::max(std::abs(v[k]) - lambda, 0.0);
    out[k] = v[k] < 0.0 ? -m : (v[k] > 0.0 ? m : 0.0);
  }
  return out;
}

/// Indices of the s largest magnitudes; ties keep the lower index.
inline std::vector<std::size_t> top_support(std::span<const double> v, std::size_t s) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(v[a]) > std::abs(v[b]); });
  idx.resize(std::min(s, v.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Vec project_sparse(std::span<const double> v, std::size_t s) {
  if (s < 1) throw std::invalid_argument("project_sparse: s must be >= 1");
  Vec out(v.size(), 0.0);
  for (std::size_t k : top_support(v, s)) out[k] = v[k];
  return out;
}

/// Threshold of the l1-ball projection (0 when v is already inside).
inline double l1ball_threshold(std::span<const double> v, double radius) {
  double l1 = 0.0;
  for (double x : v) l1 += std::abs(x);
  if (l1 <= radius) return 0.0;
  Vec mag(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) mag[k] = std::abs(v[k]);
  std::sort(mag.begin(), mag.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    cum += mag[k];
    const double t = (cum - radius) / static_cast<double>(k + 1);
    if (mag[k] > t) theta = t;
    else
      break;
  }
  return theta;
}

inline Vec project_l1ball(std::span<const double> v, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("project_l1ball: radius must be positive");
  const double theta = l1ball_threshold(v, radius);
  if (theta == 0.0) return Vec(v.begin(), v.end());
  return soft_threshold(v, theta);
}

inline Vec project_box(std::span<const double> v, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("project_box: lo > hi");
  Vec out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = std::clamp(v[k], lo, hi);
  return out;
}

/// Orthonormal basis vectors of a subspace, plus an anchor point it passes
/// through (zero for a linear subspace).
struct SubspaceBasis {
  std::vector<Vec> vectors;
  Vec anchor;
};

inline Vec project_subspace(std::span<const double> v, const SubspaceBasis& basis) {
  const bool anchored = !basis.anchor.empty();
  if (anchored && basis.anchor.size() != v.size()) throw DimensionError("project_subspace: anchor length");
  Vec centered(v.begin(), v.end());
  if (anchored) axpy(-1.0, basis.anchor, centered);
  Vec out = anchored ? basis.anchor : Vec(v.size(), 0.0);
  for (const auto& b : basis.vectors) {
    if (b.size() != v.size()) throw DimensionError("project_subspace: basis length");
    axpy(dot(b, centered), b, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constraint-set priors
// ---------------------------------------------------------------------------

struct SparseSet {
  std::size_t s = 1;
};
struct L1Ball {
  double radius = 1.0;
};
struct Box {
  double lo = 0.0, hi = 1.0;
};
struct Subspace {
  SubspaceBasis basis;
};
struct AllSpace {};

using PriorDescriptor = std::variant<SparseSet, L1Ball, Box, Subspace, AllSpace>;

/// Constraint set M with its projection. `perturbation`, when set, is added
/// after the exact projection and must have norm <= eps0; it exists to model
/// approximate projections in the theory harness.
struct ManifoldPrior {
  PriorDescriptor descriptor = AllSpace{};
  double eps0 = 0.0;
  std::function<Vec(std::span<const double>)> perturbation;

  [[nodiscard]] bool convex() const { return !std::holds_alternative<SparseSet>(descriptor); }

  void validate() const {
    std::visit(
        [](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, SparseSet>) {
            if (d.s < 1) throw ConfigError("prior: sparse set needs s >= 1");
          } else if constexpr (std::is_same_v<T, L1Ball>) {
            if (!(d.radius > 0.0)) throw ConfigError("prior: l1 ball radius must be positive");
          } else if constexpr (std::is_same_v<T, Box>) {
            if (d.lo > d.hi) throw ConfigError("prior: box needs lo <= hi");
          } else if constexpr (std::is_same_v<T, Subspace>) {
            const auto& vs = d.basis.vectors;
            for (std::size_t a = 0; a < vs.size(); ++a)
              for (std::size_t b = a; b < vs.size(); ++b) {
                const double g = dot(vs[a], vs[b]);
                if (std::abs(g - (a == b ? 1.0 : 0.0)) > 1e-12) throw ConfigError("prior: basis not orthonormal");
              }
          }
        },
        descriptor);
    if (eps0 < 0.0) throw ConfigError("prior: eps0 must be >= 0");
  }
};

/// Exact Euclidean projection onto the prior's set.
inline Vec project_exact(const ManifoldPrior& prior, std::span<const double> v) {
  return std::visit(
      [&](const auto& d) -> Vec {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, SparseSet>) return project_sparse(v, d.s);
        else if constexpr (std::is_same_v<T, L1Ball>) return project_l1ball(v, d.radius);
        else if constexpr (std::is_same_v<T, Box>) return project_box(v, d.lo, d.hi);
        else if constexpr (std::is_same_v<T, Subspace>) return project_subspace(v, d.basis);
        else return Vec(v.begin(), v.end());
      },
      prior.descriptor);
}

/// P(v) = P_M(v) + e(v).
inline Vec apply_prior(const ManifoldPrior& prior, std::span<const double> v) {
  Vec out = project_exact(prior, v);
  if (prior.perturbation) {
    const Vec e = prior.perturbation(v);
    if (e.size() != out.size()) throw DimensionError("apply_prior: perturbation length");
    if (norm2(e) > prior.eps0 * (1.0 + 1e-12)) throw NumericError("apply_prior: perturbation exceeds eps0");
    axpy(1.0, e, out);
  }
  return out;
}

/// Vector-Jacobian product of the exact projection at v (almost-everywhere
/// derivative). Used when a projection sits in the primal slot of an unrolled
/// network. The perturbation term is treated as constant.
inline Vec project_exact_vjp(const ManifoldPrior& prior, std::span<const double> v, std::span<const double> g) {
  if (g.size() != v.size()) throw DimensionError("project_exact_vjp: length mismatch");
  return std::visit(
      [&](const auto& d) -> Vec {
        using T = std::decay_t<decltype(d)>;
        Vec out(v.size(), 0.0);
        if constexpr (std::is_same_v<T, SparseSet>) {
          for (std::size_t k : top_support(v, d.s)) out[k] = g[k];
        } else if constexpr (std::is_same_v<T, L1Ball>) {
          const double theta = l1ball_threshold(v, d.radius);
          if (theta == 0.0) return Vec(g.begin(), g.end());
          double acc = 0.0;
          std::size_t n = 0;
          for (std::size_t k = 0; k < v.size(); ++k)
            if (std::abs(v[k]) > theta) {
              acc += (v[k] > 0 ? 1.0 : -1.0) * g[k];
              ++n;
            }
          for (std::size_t k = 0; k < v.size(); ++k)
            if (std::abs(v[k]) > theta) out[k] = g[k] - (v[k] > 0 ? 1.0 : -1.0) * acc / static_cast<double>(n);
        } else if constexpr (std::is_same_v<T, Box>) {
          for (std::size_t k = 0; k < v.size(); ++k) out[k] = (v[k] > d.lo && v[k] < d.hi) ? g[k] : 0.0;
        } else if constexpr (std::is_same_v<T, Subspace>) {
          for (const auto& b : d.basis.vectors) axpy(dot(b, g), b, out);
        } else {
          out.assign(g.begin(), g.end());
        }
        return out;
      },
      prior.descriptor);
}

}  // namespace unrollct
