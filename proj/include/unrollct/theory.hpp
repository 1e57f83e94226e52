#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "unrolling.hpp"

namespace unrollct {

// ---------------------------------------------------------------------------
// Cones
// ---------------------------------------------------------------------------

/// Union of all k-sparse coordinate subspaces.
struct SparseCone {
  std::size_t k = 1;
};
struct SubspaceCone {
  std::vector<Vec> basis;  // orthonormal
};
struct FullCone {};

using Cone = std::variant<SparseCone, SubspaceCone, FullCone>;

/// Cone of differences M - x_true used by the restricted constants. Sparse
/// sets give the 2s-sparse union; balls and boxes are not supported.
inline Cone cone_of(const ManifoldPrior& prior, std::size_t d) {
  if (const auto* s = std::get_if<SparseSet>(&prior.descriptor)) return SparseCone{std::min(2 * s->s, d)};
  if (const auto* s = std::get_if<Subspace>(&prior.descriptor)) return SubspaceCone{s->basis.vectors};
  if (std::holds_alternative<AllSpace>(prior.descriptor)) return FullCone{};
  throw ConfigError("theory: no cone oracle for this prior (use sparse, subspace or all)");
}

/// sup over unit vectors v in the cone of v^T g.
inline double cone_sup(std::span<const double> g, const Cone& cone) {
  if (const auto* c = std::get_if<SparseCone>(&cone)) {
    Vec sq(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) sq[j] = g[j] * g[j];
    const std::size_t k = std::min(c->k, sq.size());
    std::partial_sort(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(k), sq.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += sq[j];
    return std::sqrt(s);
  }
  if (const auto* c = std::get_if<SubspaceCone>(&cone)) {
    double s = 0.0;
    for (const auto& b : c->basis) {
      const double t = dot(b, g);
      s += t * t;
    }
    return std::sqrt(s);
  }
  return norm2(g);
}

inline double cone_sup(std::span<const double> g, const ManifoldPrior& prior) {
  return cone_sup(g, cone_of(prior, g.size()));
}

// ---------------------------------------------------------------------------
// Restricted constants
// ---------------------------------------------------------------------------

using Mat = Eigen::MatrixXd;

inline Mat to_eigen(const LinearOperator& a) {
  const Vec m = a.dense();
  const auto n = static_cast<Eigen::Index>(a.geometry().n_rays());
  const auto d = static_cast<Eigen::Index>(a.n_pixels());
  Mat out(n, d);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < d; ++c) out(r, c) = m[static_cast<std::size_t>(r * d + c)];
  return out;
}

inline Mat subset_rows(const Mat& a, const LinearOperator& op, const SubsetScheme& scheme, std::size_t i) {
  const std::size_t nd = op.geometry().n_detectors;
  const auto& angles = scheme.angles(i);
  Mat out(static_cast<Eigen::Index>(angles.size() * nd), a.cols());
  for (std::size_t r = 0; r < angles.size(); ++r)
    for (std::size_t t = 0; t < nd; ++t)
      out.row(static_cast<Eigen::Index>(r * nd + t)) = a.row(static_cast<Eigen::Index>(angles[r] * nd + t));
  return out;
}

struct RestrictedConstants {
  double mu_c = 0.0, L_c = 0.0, L_s = 0.0;
  std::size_t n = 0, q = 0;
};

namespace detail {

inline std::pair<double, double> gram_extremes(const Mat& m) {
  if (m.cols() == 0) return {0.0, 0.0};
  Eigen::SelfAdjointEigenSolver<Mat> es(m.transpose() * m, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

template <class F>
void for_each_support(std::size_t d, std::size_t k, F&& f) {
  std::vector<std::size_t> idx(k);
  for (std::size_t j = 0; j < k; ++j) idx[j] = j;
  while (true) {
    f(idx);
    std::size_t j = k;
    while (j > 0 && idx[j - 1] == d - k + j - 1) --j;
    if (j == 0) return;
    ++idx[j - 1];
    for (std::size_t t = j; t < k; ++t) idx[t] = idx[t - 1] + 1;
  }
}

inline Mat columns(const Mat& a, const std::vector<std::size_t>& cols) {
  Mat out(a.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = a.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

}  // namespace detail

/// mu_c = min over the cone of (1/n)||A v||^2 / ||v||^2, L_c the same max
/// over the cone and subsets with 1/q, L_s the max over all of R^d.
inline RestrictedConstants restricted_constants(const LinearOperator& op, const Cone& cone, const SubsetScheme& scheme) {
  const Mat a = to_eigen(op);
  RestrictedConstants rc;
  rc.n = static_cast<std::size_t>(a.rows());
  rc.q = rc.n / scheme.m;
  const auto d = static_cast<std::size_t>(a.cols());
  const double n = static_cast<double>(rc.n), q = static_cast<double>(rc.q);
  std::vector<Mat> subs;
  for (std::size_t i = 0; i < scheme.m; ++i) subs.push_back(subset_rows(a, op, scheme, i));
  for (const auto& s : subs) rc.L_s = std::max(rc.L_s, detail::gram_extremes(s).second / q);

  rc.mu_c = INFINITY;
  auto visit = [&](const Mat& a_c, const std::vector<Mat>& subs_c) {
    rc.mu_c = std::min(rc.mu_c, detail::gram_extremes(a_c).first / n);
    for (const auto& s : subs_c) rc.L_c = std::max(rc.L_c, detail::gram_extremes(s).second / q);
  };
  if (const auto* c = std::get_if<SparseCone>(&cone)) {
    if (d > 24 || c->k > 8) throw ConfigError("restricted_constants: support enumeration too large");
    detail::for_each_support(d, std::min(c->k, d), [&](const std::vector<std::size_t>& t) {
      std::vector<Mat> st;
      for (const auto& s : subs) st.push_back(detail::columns(s, t));
      visit(detail::columns(a, t), st);
    });
  } else if (const auto* c = std::get_if<SubspaceCone>(&cone)) {
    Mat b(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c->basis.size()));
    for (std::size_t j = 0; j < c->basis.size(); ++j)
      for (std::size_t r = 0; r < d; ++r) b(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = c->basis[j][r];
    std::vector<Mat> st;
    for (const auto& s : subs) st.push_back(s * b);
    visit(a * b, st);
  } else {
    visit(a, subs);
  }
  return rc;
}

/// Spectral norm of S_i A.
inline double subset_spectral_norm(const LinearOperator& op, const SubsetScheme& scheme, std::size_t i) {
  const Mat s = subset_rows(to_eigen(op), op, scheme, i);
  return std::sqrt(std::max(detail::gram_extremes(s).second, 0.0));
}

// ---------------------------------------------------------------------------
// Error terms
// ---------------------------------------------------------------------------

/// Diagonal of the weighting mismatch (I + W/sigma)^{-1} (I - W); zero when W = I.
inline Vec weight_mismatch(std::span<const double> w, double sigma) {
  Vec out(w.size());
  for (std::size_t r = 0; r < w.size(); ++r) out[r] = sigma / (sigma + w[r]) * (1.0 - w[r]);
  return out;
}

namespace detail {

inline const Vec* weights_for(const UnrollParams& p, std::size_t i) {
  if (p.weights.empty()) return nullptr;
  return p.weights.size() == 1 ? &p.weights[0] : &p.weights[i];
}

/// A^T S_i^T diag(s) (partial sinogram v).
inline Vec back_subset(const LinearOperator& a, const std::vector<std::size_t>& angles, Vec v,
                       const Vec* diag = nullptr) {
  if (diag)
    for (std::size_t r = 0; r < v.size(); ++r) v[r] *= (*diag)[r];
  Sinogram s(a.geometry(), angles);
  s.values = std::move(v);
  return a.adjoint(s).values;
}

}  // namespace detail

/// 2 tau sigma * mean_i cone_sup(A^T S_i^T J_i S_i w). Without dual weights
/// (gradient form) J_i = I and the sigma factor is dropped.
inline double estimate_delta(const Operators& ops, const Sinogram& w, const UnrollParams& p, const Cone& cone) {
  const LinearOperator& a = *ops.full;
  double acc = 0.0;
  const double tau = *std::max_element(p.tau.begin(), p.tau.end());
  const double sigma = *std::max_element(p.sigma.begin(), p.sigma.end());
  for (std::size_t i = 0; i < ops.m(); ++i) {
    const auto& angles = ops.scheme.angles(i);
    Vec wi = restrict_rows(w, angles).values;
    const Vec* wt = detail::weights_for(p, i);
    if (wt) {
      const HJ hj = hj_diagonals(*wt, sigma);
      acc += 2.0 * tau * cone_sup(detail::back_subset(a, angles, std::move(wi), &hj.j), cone);
    } else {
      acc += 2.0 * tau * cone_sup(detail::back_subset(a, angles, std::move(wi)), cone);
    }
  }
  return acc / static_cast<double>(ops.m());
}

struct Epsilons {
  double e0 = 0, e1 = 0, e2 = 0, e3 = 0, e4 = 0;
  double eps = 0, eps_star = 0;
};

/// Error terms measured on recorded trajectories (sup over layers and runs).
inline Epsilons measure_epsilons(const std::vector<const Trajectory*>& trajs, const Operators& ops,
                                 const UnrollParams& p, const Image& x_true) {
  if (trajs.empty()) throw std::invalid_argument("measure_epsilons: no trajectory");
  const LinearOperator& a = *ops.full;
  Epsilons e;
  e.e0 = p.primal_prior ? p.primal_prior->eps0 : 0.0;
  const double tau = *std::max_element(p.tau.begin(), p.tau.end());
  const double sigma = *std::max_element(p.sigma.begin(), p.sigma.end());
  const bool weighted = !p.weights.empty();

  std::vector<double> sub_norm(ops.m(), -1.0);
  for (const Trajectory* tr : trajs) {
    if (tr->layers.empty()) throw std::invalid_argument("measure_epsilons: empty trajectory");
    for (const auto& rec : tr->layers) {
      const std::size_t i = rec.subset;
      const auto& angles = ops.scheme.angles(i);
      if (weighted) {
        const HJ hj = hj_diagonals(*detail::weights_for(p, i), sigma);
        e.e1 = std::max(e.e1, 2.0 * tau * norm2(detail::back_subset(a, angles, rec.y_in, &hj.h)));
      }
      if (rec.factor == 1) continue;
      const LinearOperator& as = *ops.sketched;
      if (sub_norm[i] < 0.0) sub_norm[i] = std::sqrt(subset_norm2(as, angles));
      const Vec full_fwd = a.forward_rows(rec.x_in, angles).values;
      const Vec sk_fwd = as.forward_rows(sketch_down(rec.x_in, rec.factor), angles).values;
      e.e3 = std::max(e.e3, sub_norm[i] * dist2(sk_fwd, full_fwd));
      Sinogram y(a.geometry(), angles);
      y.values = rec.y_out;
      const Image up = sketch_up(as.adjoint(y), rec.factor);
      e.e4 = std::max(e.e4, dist2(up.values, a.adjoint(y).values));
    }
  }
  if (weighted)
    for (std::size_t i = 0; i < ops.m(); ++i) {
      const auto& angles = ops.scheme.angles(i);
      const Vec dm = weight_mismatch(*detail::weights_for(p, i), sigma);
      const Vec ax = a.forward_rows(x_true, angles).values;
      e.e2 = std::max(e.e2, 2.0 * tau * sigma * norm2(detail::back_subset(a, angles, ax, &dm)));
    }
  e.eps = e.e0 + e.e1 + e.e2 + tau * e.e3 + tau * sigma * e.e4;
  e.eps_star = e.e0 + tau * e.e3 + tau * e.e4;
  return e;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct BoundRow {
  std::size_t k = 0;
  double observed = 0.0;  // Monte-Carlo mean of ||x_k - x_true||
  double se = 0.0;
  double bound = 0.0;
  bool pass = true;
};

struct StepRow {
  std::size_t k = 0;   // checks step k -> k+1
  double lhs = 0.0;    // E||x_{k+1} - x_true|| - alpha E||x_k - x_true||
  double rhs = 0.0;    // eps + delta
  double se = 0.0;
  bool pass = true;
};

struct TheoryReport {
  std::string kind;  // "upper" or "lower"
  double mu_c = 0, L_c = 0, L_s = 0;
  double v_a = 1, v_b = 1;
  double kappa = 1, alpha = 0;
  Epsilons eps;
  double delta = 0;
  double gamma = 0;
  bool vacuous = false;
  std::vector<BoundRow> rows;
  std::vector<StepRow> steps;
  bool passed = true;

  [[nodiscard]] std::string summary() const {
    std::ostringstream os;
    os.precision(10);
    os << "check: " << kind << "\n"
       << "mu_c: " << mu_c << "\nL_c: " << L_c << "\nL_s: " << L_s << "\nv_a: " << v_a << "\nv_b: " << v_b
       << "\nkappa: " << kappa << "\nalpha: " << alpha << "\neps0: " << eps.e0 << "\neps1: " << eps.e1
       << "\neps2: " << eps.e2 << "\neps3: " << eps.e3 << "\neps4: " << eps.e4 << "\neps: " << eps.eps
       << "\neps_star: " << eps.eps_star << "\ndelta: " << delta << "\n";
    if (kind == "lower") os << "gamma: " << gamma << "\n";
    os << "vacuous: " << (vacuous ? "yes" : "no") << "\npassed: " << (passed ? "yes" : "no") << "\n";
    return os.str();
  }
};

struct MonteCarloErrors {
  std::vector<std::vector<double>> runs;  // runs x (K+1)
  std::vector<Trajectory> sample;         // first few trajectories, for epsilon measurement
};

/// Independent runs with uniform random subset order; run r uses a stream
/// split from `seed` by r.
inline MonteCarloErrors monte_carlo(const Problem& prob, UnrollConfig cfg, const UnrollParams& p, const Image& x0,
                                    const Image& x_true, std::size_t n_runs, std::uint64_t seed,
                                    std::size_t keep = 8) {
  MonteCarloErrors mc;
  const SplitMix64 root(seed);
  for (std::size_t r = 0; r < n_runs; ++r) {
    cfg.subset_seed = root.split(r).next();
    Trajectory tr = unroll_forward(prob, cfg, p, x0);
    std::vector<double> errs;
    for (const auto& x : tr.x) errs.push_back(dist2(x.values, x_true.values));
    mc.runs.push_back(std::move(errs));
    if (mc.sample.size() < keep) mc.sample.push_back(std::move(tr));
  }
  return mc;
}

namespace detail {

/// Comparisons allow float roundoff on top of the 3-SE Monte-Carlo margin.
inline double roundoff(double scale) { return 1e-12 * std::max(1.0, scale); }

inline std::pair<double, double> mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / (n - 1.0) / n)};
}

}  // namespace detail

/// Step-size rules of the bounds: tau = 1/(q L_s) for the gradient form,
/// tau * sigma = 1/(q L_s) for the weighted form.
inline UnrollParams theory_params(const UnrollConfig& cfg, const Operators& ops, const ManifoldPrior& prior,
                                  double qLs, double sigma = 1.0) {
  UnrollParams p;
  if (cfg.variant == Variant::SkLSGD || cfg.variant == Variant::LSGD) {
    p.tau.assign(cfg.K, 1.0 / qLs);
    p.sigma.assign(cfg.K, 1.0);
  } else if (cfg.variant == Variant::SkLSPD_LW) {
    p.sigma.assign(cfg.K, sigma);
    p.tau.assign(cfg.K, 1.0 / (qLs * sigma));
    p.weights.assign(1, Vec(ops.rows_per_subset(), 1.0));
  } else {
    throw ConfigError("theory: bounds cover the gradient and light-weight variants only");
  }
  p.primal_prior = prior;
  return p;
}

/// Monte-Carlo check of the K-step upper bound and the per-step inequality.
inline TheoryReport upper_bound_check(const Problem& prob, UnrollConfig cfg, const UnrollParams& p,
                                      const Image& x_true, const Image& x0, std::size_t n_runs, std::uint64_t seed) {
  if (!p.primal_prior) throw ConfigError("upper_bound_check: needs a projection prior in the primal slot");
  const Operators& ops = prob.ops;
  const ManifoldPrior& prior = *p.primal_prior;
  const Cone cone = cone_of(prior, ops.full->n_pixels());
  cfg.order = SubsetOrder::UniformRandom;
  TheoryReport rep;
  rep.kind = "upper";
  const RestrictedConstants rc = restricted_constants(*ops.full, cone, ops.scheme);
  rep.mu_c = rc.mu_c;
  rep.L_c = rc.L_c;
  rep.L_s = rc.L_s;
  const double qLs = static_cast<double>(rc.q) * rc.L_s;
  const bool weighted = dual_kind(cfg.variant) == DualKind::WeightedProx;
  for (std::size_t k = 0; k < cfg.K; ++k) {
    const double step = weighted ? p.tau[k] * p.sigma[k] : p.tau[k];
    if (std::abs(step * qLs - 1.0) > 1e-9) throw ConfigError("upper_bound_check: step sizes must satisfy the 1/(q L_s) rule");
  }
  if (weighted) {
    rep.v_a = INFINITY;
    rep.v_b = 0.0;
    for (std::size_t i = 0; i < ops.m(); ++i)
      for (double h : hj_diagonals(*detail::weights_for(p, i), p.sigma[0]).h) {
        rep.v_a = std::min(rep.v_a, h);
        rep.v_b = std::max(rep.v_b, h);
      }
  }
  rep.kappa = prior.convex() ? 1.0 : 2.0;
  // conservative orientation: smallest over largest diagonal of H
  rep.alpha = rep.kappa * (1.0 - (rep.v_a / rep.v_b) * rc.mu_c / rc.L_s);

  Sinogram w = prob.b;
  axpy(-1.0, ops.full->forward(x_true).values, w.values);
  rep.delta = estimate_delta(ops, w, p, cone);

  const MonteCarloErrors mc = monte_carlo(prob, cfg, p, x0, x_true, n_runs, seed);
  std::vector<const Trajectory*> trs;
  for (const auto& t : mc.sample) trs.push_back(&t);
  rep.eps = measure_epsilons(trs, ops, p, x_true);
  const double eps = weighted ? rep.eps.eps : rep.eps.eps_star;
  const double e0 = dist2(x0.values, x_true.values);
  rep.vacuous = !(rep.alpha < 1.0);

  for (std::size_t k = 0; k <= cfg.K; ++k) {
    std::vector<double> col;
    for (const auto& r : mc.runs) col.push_back(r[k]);
    const auto [m, se] = detail::mean_se(col);
    BoundRow row{k, m, se, INFINITY, true};
    if (!rep.vacuous) {
      const double ak = std::pow(rep.alpha, static_cast<double>(k));
      row.bound = weighted ? ak * e0 + (1.0 - ak) / (1.0 - rep.alpha) * (eps + rep.delta)
                           : ak * e0 + (eps + rep.delta) / (1.0 - rep.alpha);
      row.pass = m <= row.bound + 3.0 * se + detail::roundoff(e0);
    }
    rep.passed = rep.passed && row.pass;
    rep.rows.push_back(row);
  }
  for (std::size_t k = 0; k < cfg.K; ++k) {
    std::vector<double> diff;
    for (const auto& r : mc.runs) diff.push_back(r[k + 1] - rep.alpha * r[k]);
    const auto [m, se] = detail::mean_se(diff);
    StepRow s{k, m, eps + rep.delta, se, m <= eps + rep.delta + 3.0 * se + detail::roundoff(e0)};
    rep.passed = rep.passed && s.pass;
    rep.steps.push_back(s);
  }
  return rep;
}

/// Lower bound (1-gamma)^k (1 - L_c/L_s)^k ||x0 - x_true|| - (L_s/L_c) eps_star
/// against the observed mean error of the gradient-form network.
inline TheoryReport lower_bound_check(const Problem& prob, UnrollConfig cfg, const UnrollParams& p,
                                      const Image& x_true, const Image& x0, double gamma, std::size_t n_runs = 1,
                                      std::uint64_t seed = 0) {
  if (!p.primal_prior) throw ConfigError("lower_bound_check: needs a projection prior in the primal slot");
  const ManifoldPrior& prior = *p.primal_prior;
  if (!prior.convex()) throw ConfigError("lower_bound_check: prior must be convex");
  if (cfg.variant != Variant::SkLSGD && cfg.variant != Variant::LSGD)
    throw ConfigError("lower_bound_check: applies to the gradient-form network");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("lower_bound_check: gamma must be in (0, 1]");
  const Operators& ops = prob.ops;
  const Cone cone = cone_of(prior, ops.full->n_pixels());
  TheoryReport rep;
  rep.kind = "lower";
  rep.gamma = gamma;
  rep.kappa = 1.0;
  const RestrictedConstants rc = restricted_constants(*ops.full, cone, ops.scheme);
  rep.mu_c = rc.mu_c;
  rep.L_c = rc.L_c;
  rep.L_s = rc.L_s;
  rep.alpha = 1.0 - rc.L_c / rc.L_s;
  if (ops.m() > 1) cfg.order = SubsetOrder::UniformRandom;
  const MonteCarloErrors mc = monte_carlo(prob, cfg, p, x0, x_true, n_runs, seed);
  std::vector<const Trajectory*> trs;
  for (const auto& t : mc.sample) trs.push_back(&t);
  rep.eps = measure_epsilons(trs, ops, p, x_true);
  const double e0 = dist2(x0.values, x_true.values);
  const double slack = rc.L_c > 0.0 ? rc.L_s / rc.L_c * rep.eps.eps_star : 0.0;
  for (std::size_t k = 0; k <= cfg.K; ++k) {
    std::vector<double> col;
    for (const auto& r : mc.runs) col.push_back(r[k]);
    const auto [m, se] = detail::mean_se(col);
    const double kk = static_cast<double>(k);
    BoundRow row{k, m, se, std::pow(1.0 - gamma, kk) * std::pow(rep.alpha, kk) * e0 - slack, true};
    row.pass = m + 3.0 * se + detail::roundoff(e0) >= row.bound;
    rep.passed = rep.passed && row.pass;
    rep.rows.push_back(row);
  }
  return rep;
}

/// max over samples of E_i ||A^T S_i^T S_i A e||^2 / ((q^2 L_s / n) ||A e||^2).
/// Values <= 1 confirm the expected-smoothness inequality.
inline double expected_smoothness_ratio(const Operators& ops, double L_s, std::size_t n_samples, std::uint64_t seed) {
  const LinearOperator& a = *ops.full;
  const double n = static_cast<double>(a.geometry().n_rays());
  const double q = static_cast<double>(ops.rows_per_subset());
  SplitMix64 rng(seed);
  double worst = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    Image e = a.blank_image();
    for (double& v : e.values) v = rng.normal();
    const Vec ae = a.forward(e).values;
    double lhs = 0.0;
    for (std::size_t i = 0; i < ops.m(); ++i) {
      const Vec g = a.adjoint(a.forward_rows(e, ops.scheme.angles(i))).values;
      lhs += dot(g, g);
    }
    lhs /= static_cast<double>(ops.m());
    worst = std::max(worst, lhs / (q * q * L_s / n * dot(ae, ae)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

/// [Q; Q] with Q^T Q = c^2 I, as two views of d rows each (m = 2 splits the blocks).
inline std::shared_ptr<DenseOperator> stacked_orthogonal(std::size_t d, double c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Mat g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index k = 0; k < g.cols(); ++k) g(r, k) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  const Mat q = Mat(qr.householderQ()) * c;
  Vec m(2 * d * d);
  for (std::size_t blk = 0; blk < 2; ++blk)
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t k = 0; k < d; ++k)
        m[(blk * d + r) * d + k] = q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
  return std::make_shared<DenseOperator>(std::move(m), 2 * d, d, d);
}

/// n x d matrix with i.i.d. standard normal entries, one row per view.
inline std::shared_ptr<DenseOperator> gaussian_operator(std::size_t n, std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Vec m(n * d);
  for (double& v : m) v = rng.normal();
  return std::make_shared<DenseOperator>(std::move(m), n, d, 1);
}

/// s-sparse vector with normal nonzeros on a uniformly drawn support.
inline Image sparse_signal(std::size_t d, std::size_t s, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Image x(d, 1);
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t j = 0; j < s; ++j) {
    std::swap(idx[j], idx[j + rng.below(d - j)]);
    double v = rng.normal();
    x.values[idx[j]] = v + (v >= 0 ? 0.5 : -0.5);
  }
  return x;
}

}  // namespace unrollct
