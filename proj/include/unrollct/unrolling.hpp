#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nnet.hpp"
#include "projector.hpp"
#include "proximal.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "types.hpp"

namespace unrollct {

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

enum class Variant { PDHG, LPD, LSPD, LSGD, SkLPD, SkLSPD1, SkLSPD2, SkLSPD_LW, SkLSGD };

enum class DualKind { Learned, WeightedProx, Residual };
enum class PrimalKind { Learned, GradientStep };

inline constexpr std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::PDHG: return "PDHG";
    case Variant::LPD: return "LPD";
    case Variant::LSPD: return "LSPD";
    case Variant::LSGD: return "LSGD";
    case Variant::SkLPD: return "SkLPD";
    case Variant::SkLSPD1: return "SkLSPD1";
    case Variant::SkLSPD2: return "SkLSPD2";
    case Variant::SkLSPD_LW: return "SkLSPD_LW";
    case Variant::SkLSGD: return "SkLSGD";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::PDHG, Variant::LPD, Variant::LSPD, Variant::LSGD, Variant::SkLPD, Variant::SkLSPD1,
                    Variant::SkLSPD2, Variant::SkLSPD_LW, Variant::SkLSGD})
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown variant: " + std::string(s));
}

inline constexpr DualKind dual_kind(Variant v) {
  switch (v) {
    case Variant::PDHG:
    case Variant::SkLSPD_LW: return DualKind::WeightedProx;
    case Variant::LSGD:
    case Variant::SkLSGD: return DualKind::Residual;
    default: return DualKind::Learned;
  }
}

inline constexpr PrimalKind primal_kind(Variant v) {
  switch (v) {
    case Variant::PDHG:
    case Variant::LSGD:
    case Variant::SkLSPD_LW:
    case Variant::SkLSGD: return PrimalKind::GradientStep;
    default: return PrimalKind::Learned;
  }
}

inline constexpr bool is_sketched(Variant v) {
  return v == Variant::SkLPD || v == Variant::SkLSPD1 || v == Variant::SkLSPD2 || v == Variant::SkLSPD_LW ||
         v == Variant::SkLSGD;
}

/// Full-batch variants that only make sense with a single subset.
inline constexpr bool is_full_batch(Variant v) {
  return v == Variant::PDHG || v == Variant::LPD || v == Variant::SkLPD;
}

enum class SubsetOrder { Cyclic, UniformRandom };
enum class DualMode { Shared, PerSubset };

struct UnrollConfig {
  std::size_t K = 12;
  Variant variant = Variant::LSPD;
  SubsetOrder order = SubsetOrder::Cyclic;
  std::optional<std::size_t> k_switch;  // layers k >= k_switch use the full operator
  DualMode dual_mode = DualMode::Shared;
  std::uint64_t subset_seed = 0;

  /// K - ceil(K/3): the last third of the layers runs unsketched.
  [[nodiscard]] std::size_t resolved_k_switch() const {
    if (k_switch) return *k_switch;
    return K - (K + 2) / 3;
  }
};

// ---------------------------------------------------------------------------
// Problem
// ---------------------------------------------------------------------------

/// Full operator, its sketched counterpart and the subset partition.
struct Operators {
  std::shared_ptr<const LinearOperator> full;
  std::shared_ptr<const LinearOperator> sketched;  // same object when factor == 1
  std::size_t factor = 1;
  SubsetScheme scheme;

  [[nodiscard]] std::size_t m() const { return scheme.m; }
  [[nodiscard]] std::size_t rows_per_subset() const {
    return scheme.angles_per_subset() * full->geometry().n_detectors;
  }
};

inline Operators make_tomo_operators(const Geometry& g, std::size_t size, double pixel_size, std::size_t m,
                                     std::size_t factor = 1, bool equivariant = false) {
  Operators ops;
  ops.full = std::make_shared<Projector>(build_projector(g, size, size, pixel_size, equivariant));
  ops.factor = factor;
  if (factor == 1)
    ops.sketched = ops.full;
  else
    ops.sketched = std::make_shared<Projector>(build_sketched_projector(g, size, size, pixel_size, factor));
  ops.scheme = SubsetScheme::interleaved(g.n_angles, m);
  return ops;
}

inline Operators make_dense_operators(std::shared_ptr<const LinearOperator> a, std::size_t m) {
  Operators ops;
  ops.full = a;
  ops.sketched = a;
  ops.factor = 1;
  ops.scheme = SubsetScheme::interleaved(a->geometry().n_angles, m);
  return ops;
}

struct Problem {
  Operators ops;
  Sinogram b;  // full measurement
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct UnrollParams {
  Vec tau, sigma;  // one per layer
  double beta = 0.0;  // PDHG over-relaxation
  std::vector<ConvSubnet> primal;  // K nets, 1 shared net, or empty (projection primal)
  std::vector<ConvSubnet> dual;    // K nets for learned-dual variants, else empty
  std::vector<Vec> weights;        // W_i diagonals: m entries, or 1 in shared-W mode
  std::optional<ManifoldPrior> primal_prior;

  [[nodiscard]] std::size_t param_count() const {
    std::size_t n = tau.size() + sigma.size() + 1;
    for (const auto& net : primal) n += net.param_count();
    for (const auto& net : dual) n += net.param_count();
    for (const auto& w : weights) n += w.size();
    return n;
  }

  /// Flat layout: tau | sigma | beta | primal nets | dual nets | weights.
  [[nodiscard]] Vec flatten() const {
    Vec out;
    out.reserve(param_count());
    out.insert(out.end(), tau.begin(), tau.end());
    out.insert(out.end(), sigma.begin(), sigma.end());
    out.push_back(beta);
    for (const auto& net : primal) out.insert(out.end(), net.params().begin(), net.params().end());
    for (const auto& net : dual) out.insert(out.end(), net.params().begin(), net.params().end());
    for (const auto& w : weights) out.insert(out.end(), w.begin(), w.end());
    return out;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != param_count()) throw DimensionError("UnrollParams::unflatten: size mismatch");
    std::size_t o = 0;
    auto take = [&](std::span<double> dst) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(o), dst.size(), dst.begin());
      o += dst.size();
    };
    take(tau);
    take(sigma);
    beta = flat[o++];
    for (auto& net : primal) take(net.params());
    for (auto& net : dual) take(net.params());
    for (auto& w : weights) take(w);
  }
};

/// Which parameter groups an optimizer may move.
struct TrainMask {
  bool tau = true, sigma = true, beta = false, primal = true, dual = true, weights = true;

  [[nodiscard]] Vec expand(const UnrollParams& p) const {
    Vec m;
    m.reserve(p.param_count());
    m.insert(m.end(), p.tau.size(), tau ? 1.0 : 0.0);
    m.insert(m.end(), p.sigma.size(), sigma ? 1.0 : 0.0);
    m.push_back(beta ? 1.0 : 0.0);
    for (const auto& net : p.primal) m.insert(m.end(), net.param_count(), primal ? 1.0 : 0.0);
    for (const auto& net : p.dual) m.insert(m.end(), net.param_count(), dual ? 1.0 : 0.0);
    for (const auto& w : p.weights) m.insert(m.end(), w.size(), weights ? 1.0 : 0.0);
    return m;
  }
};

struct NetSpec {
  std::size_t hidden = 8;
  std::size_t depth = 2;
  std::size_t kernel = 3;
};

/// Largest eigenvalue of A_i^T A_i by power iteration from a fixed start.
inline double subset_norm2(const LinearOperator& a, const std::vector<std::size_t>& angles, int iters = 100) {
  Image x = a.blank_image(1.0);
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    const double nx = norm2(x.values);
    if (nx == 0.0) return 0.0;
    for (double& v : x.values) v /= nx;
    Image z = a.adjoint(a.forward_rows(x, angles));
    lambda = dot(x.values, z.values);
    x = std::move(z);
  }
  return lambda;
}

/// max_i ||S_i A||^2 = q * L_s.
inline double max_subset_norm2(const Operators& ops) {
  double best = 0.0;
  for (std::size_t i = 0; i < ops.m(); ++i) best = std::max(best, subset_norm2(*ops.full, ops.scheme.angles(i)));
  return best;
}

/// Default parameters: step sizes from the subset operator norm
/// (tau * sigma = 1 / max_i ||S_i A||^2, split evenly; residual-dual variants
/// take tau = 1 / max_i ||S_i A||^2), W_i = I, uniformly initialised subnets.
/// Gradient-step variants get a learned one-channel primal net unless `prior`
/// is given, in which case the primal slot is that projection.
inline UnrollParams init_params(const UnrollConfig& cfg, const Operators& ops, const NetSpec& net,
                                std::uint64_t seed, std::optional<ManifoldPrior> prior = std::nullopt,
                                bool shared_weights = false) {
  UnrollParams p;
  const std::size_t K = cfg.K;
  const double L = max_subset_norm2(ops);
  const DualKind dk = dual_kind(cfg.variant);
  const PrimalKind pk = primal_kind(cfg.variant);
  if (dk == DualKind::Residual) {
    p.tau.assign(K, 1.0 / L);
    p.sigma.assign(K, 1.0);
  } else {
    p.tau.assign(K, 1.0 / std::sqrt(L));
    p.sigma.assign(K, 1.0 / std::sqrt(L));
  }
  SplitMix64 root(seed);
  if (pk == PrimalKind::Learned) {
    for (std::size_t k = 0; k < K; ++k) {
      auto n = ConvSubnet::make(2, net.hidden, net.depth, net.kernel, true);
      auto r = root.split(2 * k);
      n.init_uniform(r);
      p.primal.push_back(std::move(n));
    }
  } else if (prior) {
    p.primal_prior = std::move(prior);
  } else if (cfg.variant == Variant::PDHG) {
    p.primal_prior = ManifoldPrior{};  // r = 0
  } else {
    // recurrent variants (LW) share one primal net across layers
    const std::size_t count = cfg.variant == Variant::SkLSPD_LW ? 1 : K;
    for (std::size_t k = 0; k < count; ++k) {
      auto n = ConvSubnet::make(1, net.hidden, net.depth, net.kernel, true);
      auto r = root.split(2 * k);
      n.init_uniform(r);
      p.primal.push_back(std::move(n));
    }
  }
  if (dk == DualKind::Learned)
    for (std::size_t k = 0; k < K; ++k) {
      auto n = ConvSubnet::make(3, net.hidden, net.depth, net.kernel, true);
      auto r = root.split(2 * k + 1);
      n.init_uniform(r);
      p.dual.push_back(std::move(n));
    }
  if (dk == DualKind::WeightedProx) p.weights.assign(shared_weights ? 1 : ops.m(), Vec(ops.rows_per_subset(), 1.0));
  return p;
}

inline void validate(const UnrollConfig& cfg, const Operators& ops, const UnrollParams& p) {
  if (cfg.K < 1) throw ConfigError("unroll: K must be >= 1");
  if (is_full_batch(cfg.variant) && ops.m() != 1)
    throw ConfigError(std::string("unroll: ") + std::string(variant_name(cfg.variant)) + " requires m = 1");
  if (cfg.resolved_k_switch() > cfg.K) throw ConfigError("unroll: k_switch must be <= K");
  if (p.tau.size() != cfg.K || p.sigma.size() != cfg.K) throw ConfigError("unroll: need one tau/sigma per layer");
  for (std::size_t k = 0; k < cfg.K; ++k)
    if (!(p.tau[k] > 0.0) || !(p.sigma[k] > 0.0)) throw ConfigError("unroll: tau and sigma must be positive");
  const DualKind dk = dual_kind(cfg.variant);
  const PrimalKind pk = primal_kind(cfg.variant);
  if (dk == DualKind::Learned && p.dual.size() != cfg.K) throw ConfigError("unroll: need K dual subnets");
  if (dk != DualKind::Learned && !p.dual.empty()) throw ConfigError("unroll: variant has no dual subnet");
  if (dk == DualKind::WeightedProx) {
    if (p.weights.size() != 1 && p.weights.size() != ops.m()) throw ConfigError("unroll: need 1 or m weight sets");
    for (const auto& w : p.weights)
      if (w.size() != ops.rows_per_subset()) throw ConfigError("unroll: weight length must match subset rows");
  }
  if (pk == PrimalKind::Learned) {
    if (p.primal.size() != cfg.K && p.primal.size() != 1) throw ConfigError("unroll: need K (or 1 shared) primal nets");
    for (const auto& n : p.primal)
      if (n.in_channels() != 2) throw ConfigError("unroll: primal subnet must take 2 channels");
  } else {
    if (p.primal.empty() && !p.primal_prior) throw ConfigError("unroll: gradient-step primal needs a net or a prior");
    if (!p.primal.empty() && p.primal.size() != cfg.K && p.primal.size() != 1)
      throw ConfigError("unroll: need K (or 1 shared) primal nets");
    for (const auto& n : p.primal)
      if (n.in_channels() != 1) throw ConfigError("unroll: gradient-step primal subnet must take 1 channel");
  }
  for (const auto& n : p.dual)
    if (n.in_channels() != 3) throw ConfigError("unroll: dual subnet must take 3 channels");
}

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

struct LayerRecord {
  std::size_t subset = 0;
  std::size_t slot = 0;    // dual state slot read and written
  std::size_t factor = 1;  // 1 when this layer used the full operator
  Image x_in;              // x_k
  Image xs;                // down-sampled primal input of the forward term
  Vec fwd;                 // S_i A_s S(x_k)
  Vec b_i;
  Vec y_in, y_out;
  Image adj_c;  // (S_i A_s)^T y_{k+1} on the operator grid
  Image adj;    // up-sampled adjoint term (fine grid)
  Image v;      // gradient-step argument x_k - tau U(adj_c)
  Image p_in;   // Option-2 coarse primal input S(x_k)
  Tape dual_tape, primal_tape;
};

struct Trajectory {
  std::vector<Image> x;              // x_0 .. x_K
  std::vector<std::size_t> subsets;  // i_k
  std::vector<LayerRecord> layers;
  std::vector<Vec> final_duals;
  CallTrace trace;
};

namespace detail {

inline Image image_like(const Image& ref, Vec values) {
  Image out(ref.width, ref.height, ref.pixel_size);
  out.values = std::move(values);
  return out;
}

inline Planes stack(std::size_t h, std::size_t w, std::initializer_list<std::span<const double>> planes) {
  Planes p(planes.size(), h, w);
  std::size_t c = 0;
  for (auto s : planes) p.set_plane(c++, s);
  return p;
}

inline Vec scaled(std::span<const double> v, double a) {
  Vec out(v.size());
  for (std::size_t q = 0; q < v.size(); ++q) out[q] = a * v[q];
  return out;
}

inline const ConvSubnet& layer_net(const std::vector<ConvSubnet>& nets, std::size_t k) {
  return nets.size() == 1 ? nets[0] : nets[k];
}

inline std::size_t net_offset(const std::vector<ConvSubnet>& nets, std::size_t k) {
  const std::size_t idx = nets.size() == 1 ? 0 : k;
  std::size_t o = 0;
  for (std::size_t j = 0; j < idx; ++j) o += nets[j].param_count();
  return o;
}

}  // namespace detail

/// Subset sequence for a run: cyclic i = k mod m, or uniform draws from the
/// config seed.
inline std::vector<std::size_t> subset_sequence(const UnrollConfig& cfg, std::size_t m) {
  std::vector<std::size_t> seq(cfg.K);
  SplitMix64 rng(cfg.subset_seed);
  for (std::size_t k = 0; k < cfg.K; ++k)
    seq[k] = cfg.order == SubsetOrder::Cyclic ? k % m : static_cast<std::size_t>(rng.below(m));
  return seq;
}

/// Runs the K-layer network. y0, when given, seeds every dual slot.
inline Trajectory unroll_forward(const Problem& prob, const UnrollConfig& cfg, const UnrollParams& p, const Image& x0,
                                 std::optional<Vec> y0 = std::nullopt) {
  const Operators& ops = prob.ops;
  validate(cfg, ops, p);
  if (!prob.b.is_full() || !(prob.b.geometry == ops.full->geometry()))
    throw DimensionError("unroll: measurement must be a full sinogram of the operator geometry");
  if (x0.width != ops.full->width() || x0.height != ops.full->height()) throw DimensionError("unroll: x0 dims");

  const Variant var = cfg.variant;
  const DualKind dk = dual_kind(var);
  const PrimalKind pk = primal_kind(var);
  const std::size_t m = ops.m();
  const std::size_t q = ops.rows_per_subset();
  const std::size_t nd = ops.full->geometry().n_detectors;
  const std::size_t k_switch = cfg.resolved_k_switch();
  const bool pdhg = var == Variant::PDHG;

  Trajectory tr;
  tr.subsets = subset_sequence(cfg, m);
  const std::size_t n_slots = cfg.dual_mode == DualMode::PerSubset ? m : 1;
  std::vector<Vec> duals(n_slots, y0 ? *y0 : Vec(q, 0.0));
  for (const auto& y : duals)
    if (y.size() != q) throw DimensionError("unroll: y0 length must match subset rows");

  Image x = x0;
  Image xbar = x0;
  tr.x.push_back(x);
  for (std::size_t k = 0; k < cfg.K; ++k) {
    LayerRecord rec;
    const std::size_t i = tr.subsets[k];
    const auto& angles = ops.scheme.angles(i);
    const bool sk = is_sketched(var) && k < k_switch;
    const std::size_t f = sk ? ops.factor : 1;
    const LinearOperator& A = sk ? *ops.sketched : *ops.full;
    rec.subset = i;
    rec.slot = n_slots == 1 ? 0 : i;
    rec.factor = f;
    rec.x_in = x;
    const double tau = p.tau[k], sigma = p.sigma[k];

    // dual step
    rec.xs = sketch_down(pdhg ? xbar : x, f);
    rec.fwd = A.forward_rows(rec.xs, angles, &tr.trace).values;
    rec.b_i = restrict_rows(prob.b, angles).values;
    rec.y_in = duals[rec.slot];
    if (dk == DualKind::Learned) {
      const Planes in = detail::stack(angles.size(), nd, {rec.y_in, detail::scaled(rec.fwd, sigma), rec.b_i});
      rec.y_out = p.dual[k].forward(in, &rec.dual_tape).data;
    } else if (dk == DualKind::WeightedProx) {
      const Vec& w = p.weights.size() == 1 ? p.weights[0] : p.weights[i];
      rec.y_out = dual_prox_step(rec.y_in, rec.fwd, rec.b_i, w, sigma);
    } else {
      rec.y_out.resize(q);
      for (std::size_t r = 0; r < q; ++r) rec.y_out[r] = rec.fwd[r] - rec.b_i[r];
    }
    duals[rec.slot] = rec.y_out;

    // primal step
    Sinogram ys(ops.full->geometry(), angles);
    ys.values = rec.y_out;
    rec.adj_c = A.adjoint(ys, &tr.trace);
    Image x_next;
    if (pk == PrimalKind::Learned) {
      const ConvSubnet& net = detail::layer_net(p.primal, k);
      if (var == Variant::SkLSPD2 && f > 1) {
        rec.p_in = sketch_down(x, f);
        const Planes in = detail::stack(rec.p_in.height, rec.p_in.width, {rec.p_in.values, detail::scaled(rec.adj_c.values, tau)});
        const Planes out = net.forward(in, &rec.primal_tape);
        x_next = sketch_up(detail::image_like(rec.p_in, out.data), f);
      } else {
        rec.adj = sketch_up(rec.adj_c, f);
        const Planes in = detail::stack(x.height, x.width, {x.values, detail::scaled(rec.adj.values, tau)});
        x_next = detail::image_like(x, net.forward(in, &rec.primal_tape).data);
      }
    } else {
      rec.adj = sketch_up(rec.adj_c, f);
      rec.v = x;
      axpy(-tau, rec.adj.values, rec.v.values);
      if (!p.primal.empty()) {
        const Planes in = detail::stack(x.height, x.width, {rec.v.values});
        x_next = detail::image_like(x, detail::layer_net(p.primal, k).forward(in, &rec.primal_tape).data);
      } else {
        x_next = detail::image_like(x, apply_prior(*p.primal_prior, rec.v.values));
      }
    }
    if (pdhg) {
      xbar = x_next;
      for (std::size_t j = 0; j < xbar.values.size(); ++j) xbar.values[j] += p.beta * (x_next.values[j] - x.values[j]);
    }
    x = std::move(x_next);
    tr.x.push_back(x);
    tr.layers.push_back(std::move(rec));
  }
  tr.final_duals = std::move(duals);
  return tr;
}

struct UnrollGradients {
  Vec params;  // flat, UnrollParams::flatten layout
  Image x0;
  Vec b;  // cotangent of the full measurement, angle-major
};

/// Reverse-mode derivative of a recorded trajectory given dL/dx_K. Subset
/// choices are replayed from the trajectory and treated as constants.
inline UnrollGradients unroll_backward(const Problem& prob, const UnrollConfig& cfg, const UnrollParams& p,
                                       const Trajectory& tr, const Image& grad_xK) {
  const Operators& ops = prob.ops;
  validate(cfg, ops, p);
  if (tr.layers.size() != cfg.K || tr.x.size() != cfg.K + 1) throw std::invalid_argument("unroll_backward: trajectory incomplete");
  const Variant var = cfg.variant;
  const DualKind dk = dual_kind(var);
  const PrimalKind pk = primal_kind(var);
  const std::size_t K = cfg.K;
  const std::size_t q = ops.rows_per_subset();
  const std::size_t nd = ops.full->geometry().n_detectors;
  const bool pdhg = var == Variant::PDHG;

  UnrollGradients out;
  out.params.assign(p.param_count(), 0.0);
  out.b.assign(prob.b.values.size(), 0.0);
  const std::size_t o_tau = 0, o_sigma = K, o_beta = 2 * K, o_primal = 2 * K + 1;
  std::size_t o_dual = o_primal;
  for (const auto& n : p.primal) o_dual += n.param_count();
  std::size_t o_weights = o_dual;
  for (const auto& n : p.dual) o_weights += n.param_count();

  Image gx = grad_xK;
  Image gxbar = ops.full->blank_image();
  const std::size_t n_slots = tr.final_duals.size();
  std::vector<Vec> gy(n_slots, Vec(q, 0.0));

  for (std::size_t k = K; k-- > 0;) {
    const LayerRecord& rec = tr.layers[k];
    const auto& angles = ops.scheme.angles(rec.subset);
    const std::size_t f = rec.factor;
    const LinearOperator& A = f > 1 ? *ops.sketched : *ops.full;
    const double tau = p.tau[k], sigma = p.sigma[k];
    const Image& xk = tr.x[k];
    const Image& xk1 = tr.x[k + 1];

    // PDHG over-relaxation: xbar_{k+1} = x_{k+1} + beta (x_{k+1} - x_k)
    if (pdhg) {
      out.params[o_beta] += dot(gxbar.values, xk1.values) - dot(gxbar.values, xk.values);
      axpy(1.0 + p.beta, gxbar.values, gx.values);
    }
    Image gx_prev = ops.full->blank_image();
    if (pdhg) axpy(-p.beta, gxbar.values, gx_prev.values);

    // primal step
    Image g_adj_c;
    if (pk == PrimalKind::Learned) {
      const ConvSubnet& net = detail::layer_net(p.primal, k);
      std::span<double> gnet(out.params.data() + o_primal + detail::net_offset(p.primal, k), net.param_count());
      if (var == Variant::SkLSPD2 && f > 1) {
        const Image gp = sketch_up_adjoint(gx, f);
        Planes go(1, gp.height, gp.width);
        go.data = gp.values;
        const Planes gin = net.backward(rec.primal_tape, go, gnet);
        const Image gxs = detail::image_like(rec.p_in, Vec(gin.plane(0).begin(), gin.plane(0).end()));
        axpy(1.0, sketch_down_adjoint(gxs, f).values, gx_prev.values);
        const auto g1 = gin.plane(1);
        out.params[o_tau + k] += dot(g1, rec.adj_c.values);
        g_adj_c = detail::image_like(rec.adj_c, detail::scaled(g1, tau));
      } else {
        Planes go(1, gx.height, gx.width);
        go.data = gx.values;
        const Planes gin = net.backward(rec.primal_tape, go, gnet);
        axpy(1.0, gin.plane(0), gx_prev.values);
        const auto g1 = gin.plane(1);
        out.params[o_tau + k] += dot(g1, rec.adj.values);
        g_adj_c = sketch_up_adjoint(detail::image_like(rec.adj, detail::scaled(g1, tau)), f);
      }
    } else {
      Vec gv;
      if (!p.primal.empty()) {
        const ConvSubnet& net = detail::layer_net(p.primal, k);
        std::span<double> gnet(out.params.data() + o_primal + detail::net_offset(p.primal, k), net.param_count());
        Planes go(1, gx.height, gx.width);
        go.data = gx.values;
        gv = net.backward(rec.primal_tape, go, gnet).data;
      } else {
        gv = project_exact_vjp(*p.primal_prior, rec.v.values, gx.values);
      }
      axpy(1.0, gv, gx_prev.values);
      out.params[o_tau + k] -= dot(gv, rec.adj.values);
      g_adj_c = sketch_up_adjoint(detail::image_like(rec.adj, detail::scaled(gv, -tau)), f);
    }

    // adj_c = (S_i A)^T y_{k+1}  =>  dy_{k+1} += S_i A g
    Vec gyk1 = gy[rec.slot];
    axpy(1.0, A.forward_rows(g_adj_c, angles).values, gyk1);

    // dual step
    Vec gfwd(q, 0.0), gbi(q, 0.0), gyk(q, 0.0);
    if (dk == DualKind::Learned) {
      std::span<double> gnet(out.params.data() + o_dual + detail::net_offset(p.dual, k), p.dual[k].param_count());
      Planes go(1, angles.size(), nd);
      go.data = gyk1;
      const Planes gin = p.dual[k].backward(rec.dual_tape, go, gnet);
      gyk.assign(gin.plane(0).begin(), gin.plane(0).end());
      out.params[o_sigma + k] += dot(gin.plane(1), rec.fwd);
      gfwd = detail::scaled(gin.plane(1), sigma);
      gbi.assign(gin.plane(2).begin(), gin.plane(2).end());
    } else if (dk == DualKind::WeightedProx) {
      const std::size_t widx = p.weights.size() == 1 ? 0 : rec.subset;
      const Vec& w = p.weights[widx];
      std::size_t o_w = o_weights + widx * q;
      double gs = 0.0;
      for (std::size_t r = 0; r < q; ++r) {
        const double h = w[r] / (sigma + w[r]);
        const double resid = rec.fwd[r] - rec.b_i[r];
        const double arg = rec.y_in[r] + sigma * resid;
        const double g = gyk1[r];
        gyk[r] = h * g;
        gfwd[r] = sigma * h * g;
        gbi[r] = -sigma * h * g;
        gs += g * (-h / (sigma + w[r]) * arg + h * resid);
        out.params[o_w + r] += g * sigma / ((sigma + w[r]) * (sigma + w[r])) * arg;
      }
      out.params[o_sigma + k] += gs;
    } else {
      gfwd = gyk1;
      for (std::size_t r = 0; r < q; ++r) gbi[r] = -gyk1[r];
    }
    gy[rec.slot] = std::move(gyk);

    // fwd = S_i A_s S(xin)
    Sinogram gs_fwd(ops.full->geometry(), angles);
    gs_fwd.values = std::move(gfwd);
    const Image gxin = sketch_down_adjoint(A.adjoint(gs_fwd), f);
    if (pdhg)
      gxbar = gxin;
    else
      axpy(1.0, gxin.values, gx_prev.values);
    for (std::size_t r = 0; r < angles.size(); ++r)
      for (std::size_t d = 0; d < nd; ++d) out.b[angles[r] * nd + d] += gbi[r * nd + d];

    gx = std::move(gx_prev);
  }
  if (pdhg) axpy(1.0, gxbar.values, gx.values);
  out.x0 = std::move(gx);
  return out;
}

struct PdhgResult {
  std::vector<Image> x;  // x_0 .. x_K
  Sinogram y;            // final dual
};

/// Plain PDHG on the full operator. `prox_r(v, tau)` is prox of tau*r;
/// `prox_fconj(v, sigma)` is prox of sigma*f^* on full sinograms.
template <class ProxR, class ProxFconj>
PdhgResult pdhg_solve(const LinearOperator& a, ProxR&& prox_r, ProxFconj&& prox_fconj, double tau, double sigma,
                      double beta, std::size_t K, const Image& x0, CallTrace* trace = nullptr) {
  if (!(tau > 0.0) || !(sigma > 0.0)) throw ConfigError("pdhg: tau and sigma must be positive");
  PdhgResult r;
  r.y = Sinogram(a.geometry());
  r.x.push_back(x0);
  Image x = x0, xbar = x0;
  for (std::size_t k = 0; k < K; ++k) {
    Sinogram v = a.forward(xbar, trace);
    for (std::size_t q = 0; q < v.values.size(); ++q) v.values[q] = r.y.values[q] + sigma * v.values[q];
    r.y.values = prox_fconj(std::as_const(v.values), sigma);
    Image g = a.adjoint(r.y, trace);
    Vec u = x.values;
    axpy(-tau, g.values, u);
    Image xn = detail::image_like(x, prox_r(std::as_const(u), tau));
    xbar = xn;
    for (std::size_t j = 0; j < xbar.values.size(); ++j) xbar.values[j] += beta * (xn.values[j] - x.values[j]);
    x = std::move(xn);
    r.x.push_back(x);
  }
  return r;
}

/// prox of sigma f^* for f = 1/2 ||W^{1/2}(. - b)||^2 applied to y + sigma z,
/// written on the combined argument v = y + sigma z.
inline Vec weighted_ls_conj_prox(std::span<const double> v, std::span<const double> b, std::span<const double> w,
                                 double sigma) {
  if (v.size() != b.size() || v.size() != w.size()) throw DimensionError("weighted_ls_conj_prox: length mismatch");
  Vec out(v.size());
  for (std::size_t q = 0; q < v.size(); ++q) out[q] = w[q] / (sigma + w[q]) * (v[q] - sigma * b[q]);
  return out;
}

/// Convenience: trajectory output.
inline const Image& output(const Trajectory& tr) { return tr.x.back(); }

}  // namespace unrollct
