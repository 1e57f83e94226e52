#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "simulate.hpp"
#include "unrolling.hpp"

namespace unrollct {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::uint64_t t = 0;
  Vec m, v;

  AdamState() = default;
  AdamState(const AdamConfig& c, std::size_t n) : cfg(c), m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update. `mask`, when non-empty, freezes entries
/// with mask 0 (their moments are left untouched).
inline void adam_step(AdamState& s, std::span<double> params, std::span<const double> grad,
                      std::span<const double> mask = {}) {
  if (params.size() != grad.size() || s.m.size() != params.size() || (!mask.empty() && mask.size() != params.size()))
    throw DimensionError("adam_step: shape mismatch");
  ++s.t;
  const double bc1 = 1.0 - std::pow(s.cfg.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.cfg.beta2, static_cast<double>(s.t));
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (!mask.empty() && mask[j] == 0.0) continue;
    s.m[j] = s.cfg.beta1 * s.m[j] + (1.0 - s.cfg.beta1) * grad[j];
    s.v[j] = s.cfg.beta2 * s.v[j] + (1.0 - s.cfg.beta2) * grad[j] * grad[j];
    const double mhat = s.m[j] / bc1, vhat = s.v[j] / bc2;
    params[j] -= s.cfg.lr * mhat / (std::sqrt(vhat) + s.cfg.eps);
  }
}

/// Keeps step sizes positive and weights non-negative after an update.
inline void clamp_feasible(UnrollParams& p, double min_step = 1e-8) {
  for (double& t : p.tau) t = std::max(t, min_step);
  for (double& s : p.sigma) s = std::max(s, min_step);
  for (auto& w : p.weights)
    for (double& v : w) v = std::max(v, 0.0);
}

// ---------------------------------------------------------------------------
// Supervised training
// ---------------------------------------------------------------------------

struct DataItem {
  Sinogram b;
  Image x_true;
  Image x0;
};

struct Dataset {
  std::vector<DataItem> items;
};

/// Simulates one noisy measurement per phantom (stream `seed` split per item)
/// and precomputes the FBP start.
inline Dataset make_dataset(const std::vector<Image>& phantoms, const LinearOperator& a, MeasurementSimConfig sim) {
  if (phantoms.empty()) throw ConfigError("dataset: needs at least one item");
  Dataset ds;
  const SplitMix64 root(sim.seed);
  for (std::size_t k = 0; k < phantoms.size(); ++k) {
    MeasurementSimConfig c = sim;
    c.seed = root.split(k).next();
    Measurement m = simulate_measurements(phantoms[k], a, c);
    Image x0 = fbp(m.b, a);
    ds.items.push_back({std::move(m.b), phantoms[k], std::move(x0)});
  }
  return ds;
}

struct LossGrad {
  double loss = 0.0;
  Vec grad;  // flat, UnrollParams layout
};

/// ||x_true - x_K||^2 and its parameter gradient.
inline LossGrad supervised_loss(const Operators& ops, const UnrollConfig& cfg, const UnrollParams& p,
                                const DataItem& item) {
  const Problem prob{ops, item.b};
  const Trajectory tr = unroll_forward(prob, cfg, p, item.x0);
  const Image& xk = output(tr);
  Image g = xk;
  double loss = 0.0;
  for (std::size_t j = 0; j < g.values.size(); ++j) {
    const double d = xk.values[j] - item.x_true.values[j];
    loss += d * d;
    g.values[j] = 2.0 * d;
  }
  if (!std::isfinite(loss)) throw NumericError("supervised_loss: non-finite loss");
  return {loss, unroll_backward(prob, cfg, p, tr, g).params};
}

struct TrainConfig {
  std::size_t epochs = 10;
  AdamConfig adam;
  TrainMask mask;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct LossRecord {
  std::size_t epoch, item;
  double loss;
};

struct TrainResult {
  UnrollParams params;
  std::vector<LossRecord> curve;

  [[nodiscard]] std::vector<double> epoch_means() const {
    std::vector<double> out;
    std::vector<std::size_t> counts;
    for (const auto& r : curve) {
      if (r.epoch >= out.size()) {
        out.resize(r.epoch + 1, 0.0);
        counts.resize(r.epoch + 1, 0);
      }
      out[r.epoch] += r.loss;
      ++counts[r.epoch];
    }
    for (std::size_t e = 0; e < out.size(); ++e) out[e] /= static_cast<double>(std::max<std::size_t>(counts[e], 1));
    return out;
  }
};

/// Batch-size-1 Adam over the dataset; item order is reshuffled each epoch
/// from the seed. The loss recorded is the one evaluated before each step.
inline TrainResult train(const Dataset& ds, const Operators& ops, const UnrollConfig& cfg, UnrollParams init,
                         const TrainConfig& tc) {
  TrainResult res{std::move(init), {}};
  const Vec mask = tc.mask.expand(res.params);
  AdamState st(tc.adam, res.params.param_count());
  SplitMix64 rng(tc.seed);
  std::vector<std::size_t> order(ds.items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    if (tc.shuffle)
      for (std::size_t j = order.size(); j > 1; --j) std::swap(order[j - 1], order[rng.below(j)]);
    for (std::size_t idx : order) {
      const LossGrad lg = supervised_loss(ops, cfg, res.params, ds.items[idx]);
      if (!all_finite(lg.grad)) throw NumericError("train: non-finite gradient");
      Vec flat = res.params.flatten();
      adam_step(st, flat, lg.grad, mask);
      res.params.unflatten(flat);
      clamp_feasible(res.params);
      res.curve.push_back({e, idx, lg.loss});
    }
  }
  return res;
}

inline double mean_loss(const Dataset& ds, const Operators& ops, const UnrollConfig& cfg, const UnrollParams& p) {
  double s = 0.0;
  for (const auto& it : ds.items) {
    const Trajectory tr = unroll_forward(Problem{ops, it.b}, cfg, p, it.x0);
    const double d = dist2(output(tr).values, it.x_true.values);
    s += d * d;
  }
  return s / static_cast<double>(ds.items.size());
}

// ---------------------------------------------------------------------------
// Rotation group
// ---------------------------------------------------------------------------

/// Counter-clockwise rotation by r quarter turns.
inline Image rotate90(const Image& x, int r) {
  if (x.width != x.height) throw DimensionError("rotate90: image must be square");
  const std::size_t n = x.width;
  const int q = ((r % 4) + 4) % 4;
  Image cur = x;
  for (int k = 0; k < q; ++k) {
    Image nxt(n, n, x.pixel_size);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) nxt(i, j) = cur(j, n - 1 - i);
    cur = std::move(nxt);
  }
  return cur;
}

/// out[a] = s[(a - shift) mod n_angles] on a full sinogram.
inline Sinogram shift_angles(const Sinogram& s, long shift) {
  if (!s.is_full()) throw DimensionError("shift_angles: expected a full sinogram");
  const auto n = static_cast<long>(s.geometry.n_angles);
  const std::size_t nd = s.geometry.n_detectors;
  Sinogram out(s.geometry);
  for (long a = 0; a < n; ++a) {
    const long src = (((a - shift) % n) + n) % n;
    std::copy_n(s.values.begin() + src * static_cast<long>(nd), nd, out.values.begin() + a * static_cast<long>(nd));
  }
  return out;
}

/// Angle shift matching r quarter turns of the image.
inline Sinogram rotate_sinogram(const Sinogram& s, int r) {
  if (s.geometry.n_angles % 4 != 0) throw ConfigError("rotate_sinogram: n_angles must be divisible by 4");
  return shift_angles(s, static_cast<long>(r) * static_cast<long>(s.geometry.n_angles / 4));
}

// ---------------------------------------------------------------------------
// Instance adaptation
// ---------------------------------------------------------------------------

struct AdaptConfig {
  double lambda = 1.0;
  std::size_t steps = 30;
  AdamConfig adam{1e-4};
  TrainMask mask;

  void validate() const {
    if (lambda < 0.0) throw ConfigError("adapt: lambda must be >= 0");
  }
};

struct AdaptObjective {
  double value = 0.0;
  double fidelity = 0.0;
  double equivariance = 0.0;
  Vec grad;
  Image x;  // F(b_in)
};

/// ||b - A F(b)||^2 + lambda * mean_r ||T_r F(b) - F(A T_r F(b))||^2 over the
/// four quarter turns. F(s) runs the network on measurement s from fbp(s).
inline AdaptObjective adaptation_objective(const Operators& ops, const UnrollConfig& cfg, const UnrollParams& p,
                                           const Sinogram& b_in, double lambda, bool with_grad = true) {
  const LinearOperator& A = *ops.full;
  AdaptObjective out;
  const Problem prob{ops, b_in};
  const Trajectory tr = unroll_forward(prob, cfg, p, fbp(b_in, A));
  out.x = output(tr);
  const Sinogram ax = A.forward(out.x);
  Sinogram resid = b_in;
  for (std::size_t q = 0; q < resid.values.size(); ++q) resid.values[q] -= ax.values[q];
  out.fidelity = dot(resid.values, resid.values);
  Image gx = A.adjoint(resid);
  for (double& v : gx.values) v *= -2.0;
  if (with_grad) out.grad.assign(p.param_count(), 0.0);

  const double wgt = lambda / 4.0;
  for (int r = 0; r < 4; ++r) {
    const Image tx = rotate90(out.x, r);
    const Sinogram br = A.forward(tx);
    const Problem pr{ops, br};
    const Trajectory trr = unroll_forward(pr, cfg, p, fbp(br, A));
    const Image& xr = output(trr);
    Image diff = tx;
    for (std::size_t j = 0; j < diff.values.size(); ++j) diff.values[j] -= xr.values[j];
    out.equivariance += wgt * dot(diff.values, diff.values);
    if (!with_grad || wgt == 0.0) continue;

    Image g_tx = diff;
    for (double& v : g_tx.values) v *= 2.0 * wgt;
    Image g_xr = diff;
    for (double& v : g_xr.values) v *= -2.0 * wgt;
    const UnrollGradients gr = unroll_backward(pr, cfg, p, trr, g_xr);
    axpy(1.0, gr.params, out.grad);
    Sinogram g_br(A.geometry());
    g_br.values = gr.b;
    axpy(1.0, fbp_adjoint(gr.x0, A).values, g_br.values);
    axpy(1.0, A.adjoint(g_br).values, g_tx.values);
    axpy(1.0, rotate90(g_tx, 4 - r).values, gx.values);
  }
  out.value = out.fidelity + out.equivariance;
  if (!std::isfinite(out.value)) throw NumericError("adaptation objective is not finite");
  if (with_grad) axpy(1.0, unroll_backward(prob, cfg, p, tr, gx).params, out.grad);
  return out;
}

struct AdaptResult {
  UnrollParams params;
  Image x;
  std::vector<double> objective;  // value at steps 0..steps
};

/// Adam on the adaptation objective from the pretrained parameters; returns
/// the adapted network's reconstruction of b_in.
inline AdaptResult adapt_instance(UnrollParams init, const Sinogram& b_in, const Operators& ops,
                                  const UnrollConfig& cfg, const AdaptConfig& ac) {
  ac.validate();
  if (ops.full->width() != ops.full->height() || ops.full->geometry().n_angles % 4 != 0)
    throw ConfigError("adapt: needs a square grid and n_angles divisible by 4");
  AdaptResult res{std::move(init), {}, {}};
  const Vec mask = ac.mask.expand(res.params);
  AdamState st(ac.adam, res.params.param_count());
  for (std::size_t s = 0; s < ac.steps; ++s) {
    const AdaptObjective obj = adaptation_objective(ops, cfg, res.params, b_in, ac.lambda);
    res.objective.push_back(obj.value);
    Vec flat = res.params.flatten();
    adam_step(st, flat, obj.grad, mask);
    res.params.unflatten(flat);
    clamp_feasible(res.params);
  }
  const AdaptObjective fin = adaptation_objective(ops, cfg, res.params, b_in, ac.lambda, false);
  res.objective.push_back(fin.value);
  res.x = fin.x;
  return res;
}

}  // namespace unrollct
