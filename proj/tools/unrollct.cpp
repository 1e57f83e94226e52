// Experiment runner: simulate | reconstruct | train | adapt | verify | metrics.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "unrollct/array_io.hpp"
#include "unrollct/config.hpp"
#include "unrollct/theory.hpp"
#include "unrollct/training.hpp"

namespace fs = std::filesystem;
using namespace unrollct;

namespace {

constexpr int kExitConfig = 2, kExitNumeric = 3, kExitIo = 4;

struct Options {
  std::string config_path;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
};

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

Config load_config(const Options& o) {
  Config c(experiment_schema());
  if (!o.config_path.empty()) c.parse(read_file(o.config_path));
  if (o.seed)
    for (const auto& k : c.schema())
      if (k.name.ends_with(".seed")) c.set(k.name, std::to_string(*o.seed));
  return c;
}

Geometry geometry_of(const Config& c) {
  Geometry g{c.count("geometry.n_angles"), c.count("geometry.n_detectors"), c.real("geometry.detector_spacing")};
  if (g.n_angles == 0 || g.n_detectors == 0 || !(g.detector_spacing > 0.0)) throw ConfigError("geometry: bad sizes");
  return g;
}

UnrollConfig unroll_config(const Config& c) {
  UnrollConfig u;
  u.variant = parse_variant(c.str("unroll.variant"));
  u.K = c.count("unroll.K");
  if (c.str("unroll.k_switch") != "auto") u.k_switch = c.count("unroll.k_switch");
  const std::string& order = c.str("unroll.order");
  if (order == "random")
    u.order = SubsetOrder::UniformRandom;
  else if (order != "cyclic")
    throw ConfigError("unroll.order: expected cyclic or random");
  const std::string& dm = c.str("unroll.dual_mode");
  if (dm == "per_subset")
    u.dual_mode = DualMode::PerSubset;
  else if (dm != "shared")
    throw ConfigError("unroll.dual_mode: expected shared or per_subset");
  u.subset_seed = c.seed("unroll.subset_seed");
  return u;
}

NetSpec net_spec(const Config& c) { return {c.count("net.hidden"), c.count("net.depth"), c.count("net.kernel")}; }

std::size_t subsets_of(const Config& c, Variant v) { return is_full_batch(v) ? 1 : c.count("unroll.m"); }
std::size_t factor_of(const Config& c, Variant v) { return is_sketched(v) ? c.count("unroll.factor") : 1; }

Operators operators_of(const Config& c, Variant v) {
  const Geometry g = geometry_of(c);
  return make_tomo_operators(g, c.count("geometry.image_size"), c.real("geometry.pixel_size"), subsets_of(c, v),
                             factor_of(c, v), g.n_angles % 4 == 0);
}

Image phantom_of(const Config& c) {
  const std::size_t n = c.count("geometry.image_size");
  const double px = c.real("geometry.pixel_size");
  const std::string& kind = c.str("phantom.kind");
  if (kind == "shepp_logan") return shepp_logan(n, px);
  if (kind == "random") {
    SplitMix64 rng(c.seed("phantom.seed"));
    return random_phantom(n, rng, px);
  }
  throw ConfigError("phantom.kind: expected shepp_logan or random");
}

MeasurementSimConfig sim_of(const Config& c, const std::string& i0_key = "sim.I0", const std::string& seed_key = "sim.seed") {
  MeasurementSimConfig s;
  s.I0 = c.real(i0_key);
  s.seed = c.seed(seed_key);
  const std::string& noise = c.str("sim.noise");
  if (noise == "none")
    s.noise = NoiseMode::None;
  else if (noise != "poisson")
    throw ConfigError("sim.noise: expected poisson or none");
  return s;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

struct Csv {
  std::string text;
  explicit Csv(const std::string& header) : text(header + "\n") {}
  template <class... T>
  void row(const T&... cols) {
    std::string line;
    ((line += cell(cols) + ","), ...);
    line.back() = '\n';
    text += line;
  }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(double v) { return std::isinf(v) ? (v > 0 ? "inf" : "-inf") : fmt_double(v); }
  template <class I>
    requires std::is_integral_v<I>
  static std::string cell(I v) {
    return std::to_string(v);
  }
};

void write_text(const fs::path& p, const std::string& s) { write_file_atomic(p, s); }

void echo_config(const fs::path& out, const Config& c) { write_text(out / "config.resolved", c.resolved()); }

void require_finite(std::span<const double> v, const std::string& what) {
  if (!all_finite(v)) throw NumericError(what + ": non-finite values");
}

constexpr const char* kMetricsHeader = "item_id,method,K,m,factor,calls,psnr_db,ssim,seed";

// ---------------------------------------------------------------------------
// Checkpoints: manifest.txt plus one array per parameter group
// ---------------------------------------------------------------------------

const std::vector<std::string> kCheckpointKeys{"unroll.variant", "unroll.K",      "unroll.m",    "unroll.factor",
                                               "unroll.k_switch", "unroll.dual_mode", "net.hidden", "net.depth",
                                               "net.kernel",     "net.shared_weights"};

fs::path manifest_of(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.txt" : p; }

void save_checkpoint(const fs::path& dir, const Config& c, const UnrollParams& p) {
  Meta m;
  m["format"] = "unrollct-checkpoint";
  m["version"] = "1";
  for (const auto& k : kCheckpointKeys) m[k] = c.str(k);
  m["beta"] = fmt_double(p.beta);
  m["n_params"] = std::to_string(p.param_count());
  m["n_primal"] = std::to_string(p.primal.size());
  m["n_dual"] = std::to_string(p.dual.size());
  m["n_weights"] = std::to_string(p.weights.size());
  write_array(dir / "tau.arr", {{p.tau.size()}, p.tau});
  write_array(dir / "sigma.arr", {{p.sigma.size()}, p.sigma});
  auto put = [&](const std::string& name, std::span<const double> v) {
    write_array(dir / name, {{v.size()}, Vec(v.begin(), v.end())});
  };
  for (std::size_t k = 0; k < p.primal.size(); ++k) put("primal_" + std::to_string(k) + ".arr", p.primal[k].params());
  for (std::size_t k = 0; k < p.dual.size(); ++k) put("dual_" + std::to_string(k) + ".arr", p.dual[k].params());
  for (std::size_t k = 0; k < p.weights.size(); ++k) put("weights_" + std::to_string(k) + ".arr", p.weights[k]);
  write_file_atomic(dir / "manifest.txt", encode_meta(m));
}

/// Copies the structural keys of a checkpoint into the config.
Meta adopt_checkpoint(const fs::path& path, Config& c) {
  const Meta m = decode_meta(read_file(manifest_of(path)));
  if (auto it = m.find("format"); it == m.end() || it->second != "unrollct-checkpoint")
    throw IoError("not a checkpoint manifest: " + path.string());
  for (const auto& k : kCheckpointKeys) {
    const auto it = m.find(k);
    if (it == m.end()) throw IoError("checkpoint manifest lacks " + k);
    c.set(k, it->second);
  }
  return m;
}

void fill_checkpoint(const fs::path& path, const Meta& m, UnrollParams& p) {
  const fs::path dir = manifest_of(path).parent_path();
  auto load = [&](const std::string& name, std::span<double> dst) {
    const NdArray a = read_array(dir / name);
    if (a.data.size() != dst.size()) throw IoError("checkpoint array size mismatch: " + name);
    std::copy(a.data.begin(), a.data.end(), dst.begin());
  };
  if (std::to_string(p.primal.size()) != m.at("n_primal") || std::to_string(p.dual.size()) != m.at("n_dual") ||
      std::to_string(p.weights.size()) != m.at("n_weights"))
    throw IoError("checkpoint layout does not match its manifest");
  load("tau.arr", p.tau);
  load("sigma.arr", p.sigma);
  p.beta = std::stod(m.at("beta"));
  for (std::size_t k = 0; k < p.primal.size(); ++k) load("primal_" + std::to_string(k) + ".arr", p.primal[k].params());
  for (std::size_t k = 0; k < p.dual.size(); ++k) load("dual_" + std::to_string(k) + ".arr", p.dual[k].params());
  for (std::size_t k = 0; k < p.weights.size(); ++k) load("weights_" + std::to_string(k) + ".arr", p.weights[k]);
}

/// Run context shared by the network commands.
struct Setup {
  Config cfg;
  UnrollConfig ucfg;
  Operators ops;
  UnrollParams params;
};

Setup network_setup(const Options& o) {
  Config c = load_config(o);
  std::optional<Meta> manifest;
  if (!o.checkpoint.empty()) manifest = adopt_checkpoint(o.checkpoint, c);
  const UnrollConfig u = unroll_config(c);
  Operators ops = operators_of(c, u.variant);
  UnrollParams p = init_params(u, ops, net_spec(c), c.seed("net.seed"), std::nullopt, c.boolean("net.shared_weights"));
  if (u.variant == Variant::PDHG) p.beta = c.real("unroll.beta");
  if (manifest) fill_checkpoint(o.checkpoint, *manifest, p);
  validate(u, ops, p);
  return {std::move(c), u, std::move(ops), std::move(p)};
}

std::string method_name(const UnrollConfig& u) { return std::string(variant_name(u.variant)); }

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_simulate(const Options& o) {
  const Config c = load_config(o);
  const fs::path out = o.out;
  const Image x = phantom_of(c);
  const Projector a = build_projector(geometry_of(c), x.width, x.height, x.pixel_size, geometry_of(c).n_angles % 4 == 0);
  const Measurement m = simulate_measurements(x, a, sim_of(c));
  const Image rec = fbp(m.b, a);
  require_finite(rec.values, "fbp");
  write_image(out / "phantom.arr", x);
  write_sinogram(out / "counts.arr", m.counts, {{"quantity", "counts"}});
  write_sinogram(out / "sinogram.arr", m.b, {{"quantity", "log"}});
  write_image(out / "fbp.arr", rec, {{"method", "FBP"}});
  Csv csv(kMetricsHeader);
  csv.row(0, "FBP", 0, 0, 1, 1.0, psnr(rec, x), ssim(rec, x), c.seed("sim.seed"));
  write_text(out / "metrics.csv", csv.text);
  echo_config(out, c);
  return 0;
}

int cmd_reconstruct(const Options& o) {
  const Setup s = network_setup(o);
  const fs::path out = o.out;
  const Image x = phantom_of(s.cfg);
  const Measurement m = simulate_measurements(x, *s.ops.full, sim_of(s.cfg));
  const Trajectory tr = unroll_forward(Problem{s.ops, m.b}, s.ucfg, s.params, fbp(m.b, *s.ops.full));
  const Image& rec = output(tr);
  require_finite(rec.values, "reconstruct");
  const double calls = count_operator_calls(tr.trace);

  Csv traj("layer,subset,factor,error_norm,residual_norm");
  for (std::size_t k = 0; k < tr.x.size(); ++k) {
    Sinogram r = s.ops.full->forward(tr.x[k]);
    axpy(-1.0, m.b.values, r.values);
    const bool layer = k > 0;
    traj.row(k, layer ? std::to_string(tr.layers[k - 1].subset) : std::string(""),
             layer ? std::to_string(tr.layers[k - 1].factor) : std::string(""), dist2(tr.x[k].values, x.values),
             norm2(r.values));
    write_image(out / "trajectory" / ("x_" + std::to_string(k) + ".arr"), tr.x[k], {{"layer", std::to_string(k)}});
  }
  const std::string method = method_name(s.ucfg);
  write_image(out / "recon.arr", rec,
              {{"method", method},
               {"K", std::to_string(s.ucfg.K)},
               {"m", std::to_string(s.ops.m())},
               {"factor", std::to_string(s.ops.factor)},
               {"calls", fmt_double(calls)}});
  write_text(out / "trajectory.csv", traj.text);
  Csv csv(kMetricsHeader);
  csv.row(0, method, s.ucfg.K, s.ops.m(), s.ops.factor, calls, psnr(rec, x), ssim(rec, x), s.cfg.seed("sim.seed"));
  write_text(out / "metrics.csv", csv.text);
  echo_config(out, s.cfg);
  return 0;
}

Dataset training_set(const Config& c, const Operators& ops) {
  SplitMix64 rng(c.seed("train.seed"));
  std::vector<Image> ph;
  for (std::size_t k = 0; k < c.count("train.items"); ++k)
    ph.push_back(random_phantom(c.count("geometry.image_size"), rng, c.real("geometry.pixel_size")));
  return make_dataset(ph, *ops.full, sim_of(c));
}

int cmd_train(const Options& o) {
  const Setup s = network_setup(o);
  const fs::path out = o.out;
  const Dataset ds = training_set(s.cfg, s.ops);
  TrainConfig tc;
  tc.epochs = s.cfg.count("train.epochs");
  tc.adam.lr = s.cfg.real("train.lr");
  tc.seed = s.cfg.seed("train.seed");
  const TrainResult tr = train(ds, s.ops, s.ucfg, s.params, tc);
  require_finite(tr.params.flatten(), "train");

  Csv curve("epoch,item,loss");
  for (const auto& r : tr.curve) curve.row(r.epoch, r.item, r.loss);
  write_text(out / "loss_curve.csv", curve.text);
  save_checkpoint(out / "checkpoint", s.cfg, tr.params);

  // held-out Shepp-Logan instance
  const Image x = shepp_logan(s.cfg.count("geometry.image_size"), s.cfg.real("geometry.pixel_size"));
  const Measurement m = simulate_measurements(x, *s.ops.full, sim_of(s.cfg));
  const Trajectory t = unroll_forward(Problem{s.ops, m.b}, s.ucfg, tr.params, fbp(m.b, *s.ops.full));
  require_finite(output(t).values, "train evaluation");
  Csv csv(kMetricsHeader);
  csv.row(0, method_name(s.ucfg), s.ucfg.K, s.ops.m(), s.ops.factor, count_operator_calls(t.trace),
          psnr(output(t), x), ssim(output(t), x), s.cfg.seed("sim.seed"));
  write_text(out / "metrics.csv", csv.text);
  echo_config(out, s.cfg);
  return 0;
}

int cmd_adapt(const Options& o) {
  const Setup s = network_setup(o);
  const fs::path out = o.out;
  const Image x = shepp_logan(s.cfg.count("geometry.image_size"), s.cfg.real("geometry.pixel_size"));
  const Measurement m = simulate_measurements(x, *s.ops.full, sim_of(s.cfg, "adapt.I0", "adapt.seed"));
  AdaptConfig ac;
  ac.lambda = s.cfg.real("adapt.lambda");
  ac.steps = s.cfg.count("adapt.steps");
  ac.adam.lr = s.cfg.real("adapt.lr");
  const Trajectory before = unroll_forward(Problem{s.ops, m.b}, s.ucfg, s.params, fbp(m.b, *s.ops.full));
  const AdaptResult ar = adapt_instance(s.params, m.b, s.ops, s.ucfg, ac);
  require_finite(ar.x.values, "adapt");
  require_finite(ar.objective, "adapt objective");

  Csv curve("epoch,item,loss");
  for (std::size_t k = 0; k < ar.objective.size(); ++k) curve.row(k, 0, ar.objective[k]);
  write_text(out / "adapt_curve.csv", curve.text);
  save_checkpoint(out / "checkpoint", s.cfg, ar.params);
  write_image(out / "recon.arr", ar.x, {{"method", method_name(s.ucfg) + "+adapt"}});

  const double calls = count_operator_calls(before.trace);
  const std::uint64_t seed = s.cfg.seed("adapt.seed");
  Csv csv(kMetricsHeader);
  csv.row(0, method_name(s.ucfg), s.ucfg.K, s.ops.m(), s.ops.factor, calls, psnr(output(before), x),
          ssim(output(before), x), seed);
  csv.row(0, method_name(s.ucfg) + "+adapt", s.ucfg.K, s.ops.m(), s.ops.factor, calls, psnr(ar.x, x), ssim(ar.x, x),
          seed);
  write_text(out / "metrics.csv", csv.text);
  echo_config(out, s.cfg);
  return 0;
}

int cmd_verify(const Options& o) {
  const Config c = load_config(o);
  const fs::path out = o.out;
  const std::string inst = c.str("theory.instance");
  const std::uint64_t seed = c.seed("theory.seed");
  const std::size_t d = c.count("theory.d"), s = c.count("theory.s");
  UnrollConfig u;
  u.K = c.count("theory.K");

  std::shared_ptr<DenseOperator> a;
  ManifoldPrior prior;
  Image xt, x0;
  std::size_t m = c.count("theory.m");
  bool lower = false;
  if (inst == "stacked" || inst == "gaussian") {
    a = inst == "stacked" ? stacked_orthogonal(d, 1.0, seed) : gaussian_operator(c.count("theory.n"), d, seed);
    if (inst == "stacked") m = 2;
    prior.descriptor = SparseSet{s};
    xt = sparse_signal(d, s, seed + 1);
    x0 = Image(d, 1);
    u.variant = parse_variant(c.str("theory.variant"));
  } else if (inst == "diag_line") {
    a = std::make_shared<DenseOperator>(Vec{2, 0, 0, 1}, 2, 2, 1);
    m = 1;
    xt = Image(2, 1);
    xt.values = {0.5, -0.25};
    SubspaceBasis line;
    line.vectors = {Vec{0, 1}};
    line.anchor = xt.values;
    prior.descriptor = Subspace{line};
    x0 = xt;
    x0.values[1] += 1.0;
    u.variant = Variant::LSGD;
    lower = true;
  } else {
    throw ConfigError("theory.instance: expected stacked, gaussian or diag_line");
  }
  const Operators ops = make_dense_operators(a, m);
  Sinogram b = a->forward(xt);
  if (const double sd = c.real("theory.noise_std"); sd > 0.0) {
    SplitMix64 rng = SplitMix64(seed).split(7);
    for (double& v : b.values) v += sd * rng.normal();
  }
  const Problem prob{ops, b};
  const RestrictedConstants rc = restricted_constants(*a, cone_of(prior, d), ops.scheme);
  const UnrollParams p =
      theory_params(u, ops, prior, static_cast<double>(rc.q) * rc.L_s, c.real("theory.sigma"));
  const TheoryReport rep = lower ? lower_bound_check(prob, u, p, xt, x0, c.real("theory.gamma"))
                                 : upper_bound_check(prob, u, p, xt, x0, c.count("theory.n_runs"), seed);

  Csv rows("k,observed,se,bound,pass");
  for (const auto& r : rep.rows) rows.row(r.k, r.observed, r.se, r.bound, r.pass ? 1 : 0);
  write_text(out / "theory_report.csv", rows.text);
  if (!lower) {
    Csv steps("k,lhs,rhs,se,pass");
    for (const auto& r : rep.steps) steps.row(r.k, r.lhs, r.rhs, r.se, r.pass ? 1 : 0);
    write_text(out / "theory_steps.csv", steps.text);
  }
  write_text(out / "theory_summary.txt", "instance: " + inst + "\n" + rep.summary());
  echo_config(out, c);
  return 0;
}

int cmd_metrics(const Options& o) {
  const Config c = load_config(o);
  const fs::path out = o.out;
  if (c.str("metrics.recon").empty() || c.str("metrics.ref").empty())
    throw ConfigError("metrics: metrics.recon and metrics.ref are required");
  Meta meta;
  if (const fs::path mp = meta_path(c.str("metrics.recon")); fs::exists(mp)) meta = decode_meta(read_file(mp));
  const Image x = read_image(c.str("metrics.recon")), ref = read_image(c.str("metrics.ref"));
  auto get = [&](const std::string& k, const std::string& fallback) {
    const auto it = meta.find(k);
    return it == meta.end() ? fallback : it->second;
  };
  const std::string method = c.str("metrics.method").empty() ? get("method", "unknown") : c.str("metrics.method");
  Csv csv(kMetricsHeader);
  csv.row(0, method, get("K", ""), get("m", ""), get("factor", ""), get("calls", ""), psnr(x, ref), ssim(x, ref),
          c.seed("sim.seed"));
  write_text(out / "metrics.csv", csv.text);
  echo_config(out, c);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unrolled CT reconstruction experiments"};
  app.require_subcommand(1);
  Options opt;
  std::function<int(const Options&)> action;
  auto add = [&](const std::string& name, const std::string& help, int (*fn)(const Options&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "key=value config file");
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--seed", opt.seed, "overrides every *.seed key");
    sub->add_option("--checkpoint", opt.checkpoint, "checkpoint directory or manifest");
    sub->callback([&action, fn] { action = fn; });
  };
  add("simulate", "phantom, counts, log sinogram and FBP", cmd_simulate);
  add("reconstruct", "run an unrolled network on a simulated instance", cmd_reconstruct);
  add("train", "supervised training on random phantoms", cmd_train);
  add("adapt", "instance adaptation on a mismatched measurement", cmd_adapt);
  add("verify", "Monte-Carlo check of the estimation-error bounds", cmd_verify);
  add("metrics", "PSNR and SSIM of an image against a reference", cmd_metrics);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  try {
    return action(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
