#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "types.hpp"

namespace unrollct {

/// Flat key=value configuration with dotted section prefixes. Keys must be
/// declared in a schema; the schema supplies defaults so that `resolved()`
/// lists every setting a run used.
class Config {
 public:
  struct Key {
    std::string name;
    std::string default_value;
    std::string help;
  };

  explicit Config(std::vector<Key> schema) {
    for (auto& k : schema) {
      values_[k.name] = k.default_value;
      schema_.push_back(std::move(k));
    }
  }

  /// Parses `text`; '#' starts a comment, blank lines are ignored.
  void parse(std::string_view text) {
    std::map<std::string, bool> seen;
    std::size_t lineno = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (seen[key]) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " + key);
      seen[key] = true;
      set(key, val);
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) throw ConfigError("unknown config key: " + key);
    values_[key] = value;
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.contains(key); }

  [[nodiscard]] const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  [[nodiscard]] double real(const std::string& key) const {
    const std::string& s = str(key);
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": not a number: " + s);
    return v;
  }

  [[nodiscard]] std::int64_t integer(const std::string& key) const {
    const std::string& s = str(key);
    std::int64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": not an integer: " + s);
    return v;
  }

  [[nodiscard]] std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw ConfigError(key + ": must be >= 0");
    return static_cast<std::size_t>(v);
  }

  [[nodiscard]] std::uint64_t seed(const std::string& key) const {
    const std::string& s = str(key);
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": not a seed: " + s);
    return v;
  }

  [[nodiscard]] bool boolean(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true/false: " + s);
  }

  /// One key=value line per schema key, sorted by key.
  [[nodiscard]] std::string resolved() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  [[nodiscard]] const std::vector<Key>& schema() const { return schema_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::vector<Key> schema_;
  std::map<std::string, std::string> values_;
};

/// Settings understood by the experiment runner.
inline std::vector<Config::Key> experiment_schema() {
  return {
      {"geometry.n_angles", "64", "projection angles over [0, 2pi)"},
      {"geometry.n_detectors", "92", "detector bins"},
      {"geometry.detector_spacing", "0.03125", "detector bin width"},
      {"geometry.image_size", "64", "square image side in pixels"},
      {"geometry.pixel_size", "0.03125", "pixel side length; the default image spans [-1, 1]^2"},
      {"phantom.kind", "shepp_logan", "shepp_logan | random"},
      {"phantom.seed", "0", "seed for random phantoms"},
      {"sim.I0", "70000", "source intensity"},
      {"sim.noise", "poisson", "poisson | none"},
      {"sim.seed", "0", "measurement noise seed"},
      {"unroll.variant", "LSPD", "PDHG LPD LSPD LSGD SkLPD SkLSPD1 SkLSPD2 SkLSPD_LW SkLSGD"},
      {"unroll.K", "6", "layers"},
      {"unroll.m", "4", "subsets"},
      {"unroll.factor", "2", "sketch factor (1 or 2)"},
      {"unroll.k_switch", "auto", "first unsketched layer, or auto"},
      {"unroll.order", "cyclic", "cyclic | random"},
      {"unroll.dual_mode", "shared", "shared | per_subset"},
      {"unroll.subset_seed", "0", "seed for random subset order"},
      {"unroll.beta", "1.0", "PDHG over-relaxation"},
      {"net.hidden", "8", "hidden channels"},
      {"net.depth", "2", "conv layers per subnet"},
      {"net.kernel", "3", "kernel size"},
      {"net.seed", "0", "initialisation seed"},
      {"net.shared_weights", "false", "one W for all subsets"},
      {"train.items", "8", "training phantoms"},
      {"train.epochs", "5", "epochs"},
      {"train.lr", "0.001", "Adam learning rate"},
      {"train.seed", "0", "shuffle and phantom seed"},
      {"adapt.lambda", "1.0", "equivariance weight"},
      {"adapt.steps", "30", "Adam steps"},
      {"adapt.lr", "0.0001", "Adam learning rate"},
      {"adapt.I0", "10000", "source intensity of the mismatched instance"},
      {"adapt.seed", "1", "noise seed of the mismatched instance"},
      {"theory.instance", "stacked", "stacked | gaussian | diag_line"},
      {"theory.variant", "SkLSGD", "SkLSGD | SkLSPD_LW"},
      {"theory.d", "16", "signal length"},
      {"theory.n", "32", "measurements (gaussian)"},
      {"theory.m", "2", "subsets"},
      {"theory.s", "1", "sparsity"},
      {"theory.K", "10", "layers"},
      {"theory.n_runs", "1000", "Monte-Carlo runs"},
      {"theory.noise_std", "0", "measurement noise std"},
      {"theory.sigma", "1e-9", "dual step of the weighted variant; small sigma makes tau*sigma*H the 1/(q L_s) step"},
      {"theory.gamma", "0.5", "lower-bound gamma"},
      {"theory.seed", "0", "instance and Monte-Carlo seed"},
      {"metrics.recon", "", "reconstruction image path"},
      {"metrics.ref", "", "reference image path"},
      {"metrics.method", "", "method label"},
  };
}

}  // namespace unrollct
