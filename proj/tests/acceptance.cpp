// Acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "unrollct/array_io.hpp"
#include "unrollct/theory.hpp"
#include "unrollct/training.hpp"

using namespace unrollct;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

UnrollConfig config(Variant v, std::size_t K) {
  UnrollConfig c;
  c.K = K;
  c.variant = v;
  return c;
}

ManifoldPrior prior_of(PriorDescriptor d) {
  ManifoldPrior p;
  p.descriptor = std::move(d);
  return p;
}

double qls(const Operators& ops, const ManifoldPrior& prior) {
  const auto rc = restricted_constants(*ops.full, cone_of(prior, ops.full->n_pixels()), ops.scheme);
  return static_cast<double>(rc.q) * rc.L_s;
}

// Desk-scale geometry: the image spans [-1, 1]^2 so line integrals stay O(1).
constexpr std::size_t kN = 64;
constexpr double kPx = 2.0 / kN;
const Geometry kGeom{64, 92, kPx};

/// Largest relative central-difference error over all coordinates; entries
/// far below the gradient's scale are compared against 1e-3 * max|grad|.
double fd_max_rel(const Vec& x, const Vec& grad, const std::function<double(const Vec&)>& f) {
  const double h = 1e-7;
  double gmax = 0.0;
  for (double v : grad) gmax = std::max(gmax, std::abs(v));
  double worst = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const double fd = (f(xp) - f(xm)) / (2.0 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[j]), 1e-3 * gmax, 1e-300});
    worst = std::max(worst, std::abs(fd - grad[j]) / scale);
  }
  return worst;
}

void jitter(UnrollParams& p, SplitMix64& rng) {
  for (auto& n : p.primal)
    for (double& v : n.params()) v += 0.05 * rng.normal();
  for (auto& n : p.dual)
    for (double& v : n.params()) v += 0.05 * rng.normal();
  for (auto& w : p.weights)
    for (double& v : w) v = 0.5 + rng.uniform();
}

// ---------------------------------------------------------------------------

Outcome operator_calls() {
  const Geometry g{16, 23, 1.0};
  auto calls = [&](Variant v, std::size_t m, std::size_t factor) {
    Problem prob{make_tomo_operators(g, 16, 1.0, m, factor), Sinogram(g)};
    const UnrollConfig cfg = config(v, 12);
    const UnrollParams p = init_params(cfg, prob.ops, NetSpec{2, 2, 3}, 0);
    return count_operator_calls(unroll_forward(prob, cfg, p, Image(16, 16)).trace);
  };
  const double lpd = calls(Variant::LPD, 1, 1), lspd = calls(Variant::LSPD, 4, 1), sk = calls(Variant::SkLSPD1, 4, 2);
  return {lpd == 24.0 && lspd == 6.0 && sk == 4.0,
          "LPD " + num(lpd) + ", LSPD " + num(lspd) + ", SkLSPD " + num(sk) + " (want 24, 6, 4)"};
}

struct TrainedPair {
  Operators lpd_ops, lspd_ops;
  UnrollParams lpd, lspd;
};

TrainedPair train_pair() {
  const NetSpec net{16, 3, 3};
  SplitMix64 rng(2024);
  std::vector<Image> ph;
  for (int k = 0; k < 20; ++k) ph.push_back(random_phantom(kN, rng, kPx));
  TrainConfig tc;
  tc.epochs = 15;
  tc.adam.lr = 1e-3;
  tc.seed = 7;
  TrainedPair out;
  out.lpd_ops = make_tomo_operators(kGeom, kN, kPx, 1, 1, true);
  out.lspd_ops = make_tomo_operators(kGeom, kN, kPx, 4, 1, true);
  const MeasurementSimConfig sim{7e4, NoiseMode::Poisson, 11};
  const UnrollConfig a = config(Variant::LPD, 6), b = config(Variant::LSPD, 6);
  out.lpd = train(make_dataset(ph, *out.lpd_ops.full, sim), out.lpd_ops, a, init_params(a, out.lpd_ops, net, 3), tc).params;
  out.lspd =
      train(make_dataset(ph, *out.lspd_ops.full, sim), out.lspd_ops, b, init_params(b, out.lspd_ops, net, 3), tc).params;
  return out;
}

Outcome subset_quality(const TrainedPair& tp) {
  const Image sl = shepp_logan(kN, kPx);
  const UnrollConfig a = config(Variant::LPD, 6), b = config(Variant::LSPD, 6);
  double pa = 0.0, pb = 0.0, sa = 0.0, sb = 0.0, ca = 0.0, cb = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Measurement m = simulate_measurements(sl, *tp.lpd_ops.full, {7e4, NoiseMode::Poisson, 500 + k});
    const Image x0 = fbp(m.b, *tp.lpd_ops.full);
    const Trajectory ta = unroll_forward({tp.lpd_ops, m.b}, a, tp.lpd, x0);
    const Trajectory tb = unroll_forward({tp.lspd_ops, m.b}, b, tp.lspd, x0);
    pa += psnr(output(ta), sl) / 20.0;
    pb += psnr(output(tb), sl) / 20.0;
    sa += ssim(output(ta), sl) / 20.0;
    sb += ssim(output(tb), sl) / 20.0;
    ca = count_operator_calls(ta.trace) / 6.0;
    cb = count_operator_calls(tb.trace) / 6.0;
  }
  const bool same_budget = tp.lpd.param_count() == tp.lspd.param_count();
  return {pb >= pa - 1.0 && cb == 0.25 * ca && same_budget,
          "mean PSNR LPD " + num(pa) + " dB, LSPD " + num(pb) + " dB (SSIM " + num(sa) + " / " + num(sb) +
              "); calls per layer " + num(ca) + " vs " + num(cb) + "; params " + std::to_string(tp.lpd.param_count()) +
              " each"};
}

Outcome adjoint_identities() {
  SplitMix64 rng(3);
  const Projector full = build_projector(kGeom, kN, kN, kPx);
  const Projector coarse = build_sketched_projector(kGeom, kN, kN, kPx, 2);
  const SubsetScheme sch = SubsetScheme::interleaved(kGeom.n_angles, 4);
  double worst = 0.0;
  auto dot_test = [&](const LinearOperator& a, const std::vector<std::size_t>* angles) {
    for (int rep = 0; rep < 100; ++rep) {
      Image x = a.blank_image();
      for (double& v : x.values) v = rng.normal();
      Sinogram y = angles ? Sinogram(a.geometry(), *angles) : Sinogram(a.geometry());
      for (double& v : y.values) v = rng.normal();
      const Sinogram ax = angles ? a.forward_rows(x, *angles) : a.forward(x);
      const double l = dot(ax.values, y.values), r = dot(x.values, a.adjoint(y).values);
      worst = std::max(worst, std::abs(l - r) / std::max(std::abs(l), std::abs(r)));
    }
  };
  dot_test(full, nullptr);
  dot_test(full, &sch.angles(1));
  dot_test(coarse, nullptr);
  dot_test(coarse, &sch.angles(2));
  double part = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    Image x = full.blank_image();
    for (double& v : x.values) v = rng.normal();
    const Vec whole = full.adjoint(full.forward(x)).values;
    Vec sum(whole.size(), 0.0);
    for (std::size_t i = 0; i < sch.m; ++i) axpy(1.0, full.adjoint(full.forward_rows(x, sch.angles(i))).values, sum);
    part = std::max(part, dist2(sum, whole) / norm2(whole));
  }
  return {worst <= 1e-10 && part <= 1e-12,
          "worst dot-test rel err " + num(worst) + " (<= 1e-10); partition identity rel err " + num(part) + " (<= 1e-12)"};
}

Outcome gradients() {
  std::ostringstream d;
  bool ok = true;
  SplitMix64 rng(4);
  {  // subnet
    auto net = ConvSubnet::make(2, 4, 3, 3, true);
    net.init_uniform(rng);
    for (double& v : net.params()) v += 0.05 * rng.normal();
    Planes in(2, 8, 8);
    for (double& v : in.data) v = rng.normal();
    Vec c(64);
    for (double& v : c) v = rng.normal();
    Tape tape;
    const Planes out = net.forward(in, &tape);
    Vec gp(net.param_count(), 0.0);
    Planes cot(1, 8, 8);
    cot.data = c;
    const Planes gin = net.backward(tape, cot, gp);
    Vec flat(net.params().begin(), net.params().end());
    const double ep = fd_max_rel(flat, gp, [&](const Vec& v) {
      ConvSubnet q = net;
      std::copy(v.begin(), v.end(), q.params().begin());
      return dot(q.forward(in).data, c);
    });
    const double ei = fd_max_rel(in.data, gin.data, [&](const Vec& v) {
      Planes q = in;
      q.data = v;
      return dot(net.forward(q).data, c);
    });
    ok = ok && ep <= 1e-5 && ei <= 1e-5;
    d << "subnet " << num(std::max(ep, ei));
  }
  // unrolled networks, K = 3 on 16x16
  const Geometry g{8, 23, 1.0};
  Image disc(16, 16);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) {
      const double u = static_cast<double>(c) - 7.5, v = static_cast<double>(r) - 7.5;
      disc(r, c) = u * u + v * v < 36.0 ? 1.0 : 0.0;
    }
  struct Case {
    Variant v;
    std::size_t m, factor;
  };
  double unroll_worst = 0.0;
  for (const Case cs : {Case{Variant::PDHG, 1, 1}, Case{Variant::LPD, 1, 1}, Case{Variant::LSPD, 4, 1},
                        Case{Variant::LSGD, 4, 1}, Case{Variant::SkLPD, 1, 2}, Case{Variant::SkLSPD1, 4, 2},
                        Case{Variant::SkLSPD2, 4, 2}, Case{Variant::SkLSPD_LW, 4, 2}, Case{Variant::SkLSGD, 4, 2}}) {
    const Operators ops = make_tomo_operators(g, 16, 1.0, cs.m, cs.factor);
    Problem prob{ops, ops.full->forward(disc)};
    for (double& v : prob.b.values) v += 0.05 * rng.normal();
    const UnrollConfig cfg = config(cs.v, 3);
    UnrollParams p = init_params(cfg, ops, NetSpec{2, 2, 3}, 5);
    jitter(p, rng);
    if (cs.v == Variant::PDHG) p.beta = 0.5;
    Image x0(16, 16), c(16, 16);
    for (double& v : x0.values) v = 0.3 * rng.uniform();
    for (double& v : c.values) v = rng.normal();
    const UnrollGradients gr = unroll_backward(prob, cfg, p, unroll_forward(prob, cfg, p, x0), c);
    const double e = fd_max_rel(p.flatten(), gr.params, [&](const Vec& v) {
      UnrollParams q = p;
      q.unflatten(v);
      return dot(output(unroll_forward(prob, cfg, q, x0)).values, c.values);
    });
    unroll_worst = std::max(unroll_worst, e);
  }
  ok = ok && unroll_worst <= 1e-5;
  d << ", unroll (9 variants) " << num(unroll_worst);

  {  // supervised loss
    const Operators ops = make_tomo_operators(Geometry{8, 13, 1.0}, 8, 1.0, 2, 2);
    const Dataset ds = make_dataset({random_phantom(8, rng)}, *ops.full, {2e3, NoiseMode::Poisson, 4});
    const UnrollConfig cfg = config(Variant::SkLSPD2, 2);
    UnrollParams p = init_params(cfg, ops, NetSpec{2, 2, 3}, 6);
    jitter(p, rng);
    const LossGrad lg = supervised_loss(ops, cfg, p, ds.items[0]);
    const double e = fd_max_rel(p.flatten(), lg.grad, [&](const Vec& v) {
      UnrollParams q = p;
      q.unflatten(v);
      return supervised_loss(ops, cfg, q, ds.items[0]).loss;
    });
    ok = ok && e <= 1e-5;
    d << ", supervised loss " << num(e);
  }
  {  // adaptation objective
    const Operators ops = make_tomo_operators(Geometry{8, 13, 1.0}, 8, 1.0, 2, 1, true);
    const Measurement m = simulate_measurements(random_phantom(8, rng), *ops.full, {3e3, NoiseMode::Poisson, 5});
    const UnrollConfig cfg = config(Variant::LSPD, 2);
    UnrollParams p = init_params(cfg, ops, NetSpec{2, 2, 3}, 3);
    jitter(p, rng);
    const AdaptObjective obj = adaptation_objective(ops, cfg, p, m.b, 0.7);
    const double e = fd_max_rel(p.flatten(), obj.grad, [&](const Vec& v) {
      UnrollParams q = p;
      q.unflatten(v);
      return adaptation_objective(ops, cfg, q, m.b, 0.7, false).value;
    });
    ok = ok && e <= 1e-4;
    d << ", adaptation objective " << num(e) << " (<= 1e-4)";
  }
  return {ok, "max rel err: " + d.str()};
}

Outcome upper_bounds() {
  std::ostringstream d;
  bool ok = true;
  {  // (a) stacked orthogonal, alpha = 0
    const auto a = stacked_orthogonal(16, 1.0, 1);
    const Operators ops = make_dense_operators(a, 2);
    const ManifoldPrior prior = prior_of(SparseSet{1});
    const Image xt = sparse_signal(16, 1, 2);
    const UnrollConfig cfg = config(Variant::SkLSGD, 5);
    const TheoryReport rep = upper_bound_check({ops, a->forward(xt)}, cfg, theory_params(cfg, ops, prior, qls(ops, prior)),
                                               xt, Image(16, 1), 100, 3);
    const bool pa = std::abs(rep.alpha) <= 1e-12 && rep.rows[1].observed <= 1e-10;
    ok = ok && pa;
    d << "(a) alpha " << num(rep.alpha) << ", ||x1 - x*|| " << num(rep.rows[1].observed);
  }
  {  // (b) Gaussian d=16, s=1, n=32, m=2, noiseless
    const auto a = gaussian_operator(32, 16, 4);
    const Operators ops = make_dense_operators(a, 2);
    const ManifoldPrior prior = prior_of(SparseSet{1});
    const Image xt = sparse_signal(16, 1, 5);
    const UnrollConfig cfg = config(Variant::SkLSGD, 10);
    const TheoryReport rep = upper_bound_check({ops, a->forward(xt)}, cfg, theory_params(cfg, ops, prior, qls(ops, prior)),
                                               xt, Image(16, 1), 1000, 6);
    bool steps = true;
    for (const auto& s : rep.steps) steps = steps && s.pass;
    bool ksteps = true;
    if (!rep.vacuous)
      for (const auto& r : rep.rows) ksteps = ksteps && r.pass;
    ok = ok && steps && ksteps;
    d << "; (b) alpha " << num(rep.alpha) << (rep.vacuous ? " (K-step bound vacuous)" : "") << ", per-step "
      << (steps ? "ok" : "violated") << " at all " << rep.steps.size() << " steps";
  }
  {  // (c) noisy plateaus
    struct Noisy {
      std::shared_ptr<DenseOperator> a;
      ManifoldPrior prior;
      Image xt;
      std::size_t K;
      const char* name;
    };
    SplitMix64 rng(7);
    Image g6(6, 1);
    for (double& v : g6.values) v = rng.normal();
    const std::vector<Noisy> cases{{stacked_orthogonal(16, 1.0, 8), prior_of(SparseSet{1}), sparse_signal(16, 1, 9), 10,
                                    "stacked"},
                                   {gaussian_operator(60, 6, 10), prior_of(AllSpace{}), g6, 30, "gaussian"}};
    for (const auto& cs : cases) {
      const Operators ops = make_dense_operators(cs.a, 2);
      Sinogram b = cs.a->forward(cs.xt);
      for (double& v : b.values) v += 0.1 * rng.normal();
      const UnrollConfig cfg = config(Variant::SkLSGD, cs.K);
      const TheoryReport rep = upper_bound_check({ops, b}, cfg, theory_params(cfg, ops, cs.prior, qls(ops, cs.prior)),
                                                 cs.xt, Image(cs.xt.width, 1), 1000, 11);
      const double floor = (rep.eps.eps_star + rep.delta) / (1.0 - rep.alpha);
      const auto& last = rep.rows.back();
      const bool pc = !rep.vacuous && last.observed <= floor + 3.0 * last.se;
      ok = ok && pc;
      d << "; (c) " << cs.name << " plateau " << num(last.observed) << " <= floor " << num(floor);
    }
  }
  return {ok, d.str()};
}

Outcome lower_bound() {
  const auto a = std::make_shared<DenseOperator>(Vec{2, 0, 0, 1}, 2, 2, 1);
  const Operators ops = make_dense_operators(a, 1);
  Image xt(2, 1);
  xt.values = {0.5, -0.25};
  SubspaceBasis line;
  line.vectors = {Vec{0, 1}};
  line.anchor = xt.values;
  const ManifoldPrior prior = prior_of(Subspace{line});
  Image x0 = xt;
  x0.values[1] += 1.0;
  const UnrollConfig cfg = config(Variant::LSGD, 10);
  const UnrollParams p = theory_params(cfg, ops, prior, qls(ops, prior));
  bool ok = true;
  double worst = 0.0;
  for (double gamma : {0.1, 0.5, 1.0}) {
    const TheoryReport rep = lower_bound_check({ops, a->forward(xt)}, cfg, p, xt, x0, gamma);
    for (const auto& r : rep.rows) {
      worst = std::max(worst, std::abs(r.observed - std::pow(0.75, static_cast<double>(r.k))));
      ok = ok && r.observed >= r.bound;
    }
  }
  ok = ok && worst <= 1e-12;
  return {ok, "max |observed - (3/4)^k| " + num(worst) + ", bound dominated for gamma in {0.1, 0.5, 1}"};
}

Outcome sketch_errors() {
  const Image sl = shepp_logan(kN, kPx);
  double e3[2], e4[2];
  bool bit_equal = true;
  for (std::size_t f : {1, 2}) {
    const Operators ops = make_tomo_operators(kGeom, kN, kPx, 4, f);
    const Measurement m = simulate_measurements(sl, *ops.full, {7e4, NoiseMode::Poisson, 3});
    const UnrollConfig cfg = config(Variant::SkLSPD1, 6);
    const UnrollParams p = init_params(cfg, ops, NetSpec{4, 2, 3}, 1);
    const Image x0 = fbp(m.b, *ops.full);
    const Trajectory tr = unroll_forward({ops, m.b}, cfg, p, x0);
    const Epsilons e = measure_epsilons({&tr}, ops, p, sl);
    e3[f - 1] = e.e3;
    e4[f - 1] = e.e4;
    if (f == 1) {
      const UnrollConfig lc = config(Variant::LSPD, 6);
      const Trajectory tl = unroll_forward({ops, m.b}, lc, init_params(lc, ops, NetSpec{4, 2, 3}, 1), x0);
      for (std::size_t k = 0; k < tr.x.size(); ++k) bit_equal = bit_equal && tr.x[k].values == tl.x[k].values;
    }
  }
  const bool ok = e3[1] > e3[0] && e4[1] > e4[0] && e3[0] == 0.0 && e4[0] == 0.0 && bit_equal;
  return {ok, "eps3 " + num(e3[1]) + " -> " + num(e3[0]) + ", eps4 " + num(e4[1]) + " -> " + num(e4[0]) +
                  " (factor 2 -> 1); SkLSPD(factor 1) == LSPD bitwise: " + (bit_equal ? "yes" : "no")};
}

Outcome equivariance(const TrainedPair& tp) {
  SplitMix64 rng(12);
  const LinearOperator& a = *tp.lspd_ops.full;
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    Image x(kN, kN, kPx);
    for (double& v : x.values) v = rng.normal();
    const Sinogram ax = a.forward(x);
    for (int r = 1; r < 4; ++r)
      worst = std::max(worst, dist2(rotate_sinogram(ax, r).values, a.forward(rotate90(x, r)).values) / norm2(ax.values));
  }
  const Image sl = shepp_logan(kN, kPx);
  const Measurement m = simulate_measurements(sl, a, {7e3, NoiseMode::Poisson, 99});
  AdaptConfig ac;
  ac.steps = 30;
  const AdaptResult ar = adapt_instance(tp.lspd, m.b, tp.lspd_ops, config(Variant::LSPD, 6), ac);
  const bool ok = worst <= 1e-10 && ar.objective.back() <= ar.objective.front();
  return {ok, "max relative equivariance defect " + num(worst) + " (<= 1e-10); adaptation objective " +
                  num(ar.objective.front()) + " -> " + num(ar.objective.back()) + " over 30 steps"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(UNROLLCT_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "unrollct_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "geometry.n_angles = 32\ngeometry.n_detectors = 46\ngeometry.image_size = 32\n"
                                    "geometry.pixel_size = 0.0625\ngeometry.detector_spacing = 0.0625\n"
                                    "unroll.variant = SkLSPD2\nunroll.K = 4\nunroll.m = 4\ntrain.items = 3\n"
                                    "train.epochs = 2\nadapt.steps = 3\ntheory.n_runs = 50\n";
  std::ofstream(dir / "metrics.cfg") << "metrics.recon = " << (dir / "a_rec/recon.arr").string()
                                     << "\nmetrics.ref = " << (dir / "a_sim/phantom.arr").string() << "\n";
  const std::string cfg = " --config " + (dir / "run.cfg").string() + " --seed 17";
  const std::vector<std::pair<std::string, std::string>> cmds{
      {"sim", "simulate" + cfg},
      {"rec", "reconstruct" + cfg},
      {"train", "train" + cfg},
      {"adapt", "adapt" + cfg + " --checkpoint " + (dir / "a_train/checkpoint").string()},
      {"verify", "verify" + cfg},
      {"metrics", "metrics --config " + (dir / "metrics.cfg").string()}};
  std::size_t files = 0;
  for (const auto& [name, args] : cmds) {
    std::map<std::string, std::string> snaps[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = dir / (std::string(rep ? "b_" : "a_") + name);
      if (run_cli(args + " --out " + out.string()) != 0) return {false, name + " exited nonzero"};
      for (const auto& e : fs::recursive_directory_iterator(out))
        if (e.is_regular_file()) snaps[rep][fs::relative(e.path(), out).string()] = read_file(e.path());
    }
    if (snaps[0] != snaps[1]) return {false, name + " outputs differ between runs"};
    files += snaps[0].size();
  }
  return {true, "6 commands run twice, " + std::to_string(files) + " output files byte-identical"};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail << " [" << num(secs) << " s]"
              << std::endl;
    failures += o.pass ? 0 : 1;
  };
  report(1, operator_calls);
  std::optional<TrainedPair> tp;
  report(2, [&] {
    tp = train_pair();
    return subset_quality(*tp);
  });
  report(3, adjoint_identities);
  report(4, gradients);
  report(5, upper_bounds);
  report(6, lower_bound);
  report(7, sketch_errors);
  report(8, [&] {
    if (!tp) tp = train_pair();
    return equivariance(*tp);
  });
  report(9, determinism);
  return failures == 0 ? 0 : 1;
}
