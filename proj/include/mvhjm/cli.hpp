#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvhjm/calibrate.hpp"
#include "mvhjm/contracts.hpp"
#include "mvhjm/errors.hpp"
#include "mvhjm/io.hpp"
#include "mvhjm/measures.hpp"
#include "mvhjm/models.hpp"
#include "mvhjm/moments.hpp"
#include "mvhjm/riccati.hpp"
#include "mvhjm/simulate.hpp"

namespace mvhjm::cli {

/// Sectioned key = value config. Keys are flattened to "section.key";
/// top-level keys keep their bare name. '#' and ';' start comments.
class IniConfig {
 public:
  static IniConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    IniConfig cfg;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = io::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed section header");
        section = io::trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = io::trim(line.substr(0, eq));
      const std::string value = io::trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
      cfg.kv_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  /// Accepts "--section.key=value" or "--key=value".
  void apply_override(const std::string& token) {
    if (token.rfind("--", 0) != 0)
      throw ConfigError("override must look like --section.key=value: " + token);
    const auto eq = token.find('=');
    if (eq == std::string::npos || eq == 2)
      throw ConfigError("override must look like --section.key=value: " + token);
    kv_[token.substr(2, eq - 2)] = token.substr(eq + 1);
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback = "") const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::string require_str(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return io::parse_double(it->second, "config key " + key);
  }

  int get_int(const std::string& key, int fallback) const {
    return static_cast<int>(get_double(key, fallback));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return static_cast<std::uint64_t>(std::stoull(it->second));
  }

  std::vector<double> get_list(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return {};
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = io::trim(cell);
      if (!cell.empty()) out.push_back(io::parse_double(cell, "config key " + key));
    }
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
};

/// Writes `fit.csv` (strike, market, model) and `errors.csv`
/// (strike, abs, rel, sq) for a finished calibration.
inline void emit_figures(const CalibrationResult& report, const std::filesystem::path& out_dir) {
  if (report.errors.empty()) {
    std::cerr << "warning: empty calibration report, no figure data written\n";
    return;
  }
  std::vector<std::vector<double>> fit_rows, err_rows;
  for (const StrikeErrorRow& r : report.errors) {
    fit_rows.push_back({r.strike, r.market, r.model});
    err_rows.push_back({r.strike, r.abs_err, r.rel_err, r.sq_err});
  }
  io::write_csv((out_dir / "fit.csv").string(), {"strike", "market", "model"}, fit_rows);
  io::write_csv((out_dir / "errors.csv").string(), {"strike", "abs", "rel", "sq"}, err_rows);
}

namespace detail {

inline void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) throw ConfigError(what + " not found: " + path);
}

inline AlphaFunction alpha_from_config(const IniConfig& cfg, double horizon) {
  const std::string kind = cfg.get_str("model.alpha", "constant");
  if (kind == "constant") {
    return AlphaFunction::constant(horizon, cfg.get_double("model.alpha_value", 1.0));
  }
  if (kind == "grid") {
    return AlphaFunction::piecewise_linear(horizon, cfg.get_list("model.alpha_grid"),
                                           cfg.get_list("model.alpha_values"));
  }
  if (kind == "file") {
    const std::string path = cfg.require_str("model.alpha_file");
    require_file(path, "alpha file");
    return io::alpha_from_json(io::load_json(path));
  }
  throw ConfigError("model.alpha must be constant, grid or file");
}

inline BSKernels kernels_from_config(const IniConfig& cfg, double horizon) {
  const std::string beta_kind = cfg.get_str("model.beta", "gaussian");
  const double level = cfg.get_double("model.beta_level", 1.0);
  const double scale = cfg.get_double("model.beta_scale", 0.5);
  BSKernels::Kernel beta;
  if (beta_kind == "gaussian") {
    beta = [level, scale](double x, double y) {
      const double d = (x - y) / scale;
      return level * std::exp(-d * d);
    };
  } else if (beta_kind == "constant") {
    beta = [level](double, double) { return level; };
  } else if (beta_kind == "indefinite") {
    beta = [level](double x, double y) { return -level * (x - y) * (x - y); };
  } else {
    throw ConfigError("model.beta must be gaussian, constant or indefinite");
  }
  const std::string pi_kind = cfg.get_str("model.pi", "zero");
  if (pi_kind == "zero") return BSKernels(horizon, std::move(beta));
  const double pi_level = cfg.get_double("model.pi_level", 0.1);
  if (pi_kind == "offdiag") {
    return BSKernels(horizon, std::move(beta), [pi_level](double x, double y) {
      return x == y ? 0.0 : pi_level;
    });
  }
  if (pi_kind == "diagonal_violation") {
    return BSKernels(horizon, std::move(beta), [pi_level](double, double) { return pi_level; });
  }
  throw ConfigError("model.pi must be zero, offdiag or diagonal_violation");
}

inline TestFunction phi_from_config(const std::string& name) {
  if (name == "one")
    return TestFunction::d1([](double) { return 1.0; }, [](double) { return 0.0; });
  if (name == "quadratic")
    return TestFunction::d1([](double x) { return x * x; }, [](double x) { return 2.0 * x; });
  if (name == "cosine")
    return TestFunction::d1([](double x) { return std::cos(2.0 * x); },
                            [](double x) { return -2.0 * std::sin(2.0 * x); });
  throw ConfigError("phi must be one, quadratic or cosine");
}

inline FutureContract contract_from_config(const IniConfig& cfg) {
  const double tau1 = cfg.get_double("contract.tau1", 1.33 / 12.0);
  const double tau2 = cfg.get_double("contract.tau2", 2.33 / 12.0);
  const std::string weight = cfg.get_str("contract.weight", "uniform");
  if (weight != "uniform") throw ConfigError("contract.weight: only 'uniform' is supported");
  return FutureContract(tau1, tau2);
}

inline FourierConfig fourier_from_config(const IniConfig& cfg, double damping) {
  const double lmax = cfg.get_double("fourier.lambda_max", 100.0);
  const int n = cfg.get_int("fourier.n_lambda", 4001);
  return FourierConfig(damping, -lmax, lmax, n);
}

inline std::filesystem::path ensure_out_dir(const IniConfig& cfg) {
  const std::filesystem::path dir = cfg.get_str("io.out_dir", ".");
  std::filesystem::create_directories(dir);
  return dir;
}

inline int run_price(const IniConfig& cfg) {
  if (cfg.get_str("model.type", "affine") != "affine")
    throw ConfigError("price requires model.type = affine");
  const double horizon = cfg.get_double("model.horizon", 1.0);
  const std::string curve_path = cfg.require_str("io.forward_curve");
  require_file(curve_path, "forward curve");
  const DiscreteMeasure mu0 = io::load_forward_curve_csv(curve_path, horizon);
  const AlphaFunction alpha = alpha_from_config(cfg, horizon);
  const FutureContract contract = contract_from_config(cfg);
  const double damping = cfg.get_double("option.damping", 1.0);
  const double exercise = cfg.get_double("option.exercise", contract.tau1());
  std::vector<double> strikes = cfg.get_list("option.strikes");
  if (strikes.empty() && cfg.has("io.quotes")) {
    require_file(cfg.require_str("io.quotes"), "quotes");
    for (const auto& q : io::load_quotes_csv(cfg.require_str("io.quotes")))
      strikes.push_back(q.strike);
  }
  if (strikes.empty()) throw ConfigError("price: provide option.strikes or io.quotes");
  const FourierConfig fc = fourier_from_config(cfg, damping);
  std::vector<std::vector<double>> rows;
  for (double K : strikes) {
    const OptionSpec spec(K, exercise, damping);
    rows.push_back({K, fourier_call_price(mu0, contract, spec, alpha, fc)});
  }
  const auto out = ensure_out_dir(cfg) / "prices.csv";
  io::write_csv(out.string(), {"strike", "price"}, rows);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

inline int run_simulate(const IniConfig& cfg) {
  const std::string type = cfg.get_str("model.type", "affine");
  const double horizon = cfg.get_double("model.horizon", 1.0);
  const int n_paths = cfg.get_int("simulate.n_paths", 10);
  const int n_steps = cfg.get_int("simulate.n_steps", 50);
  const double t_end = cfg.get_double("simulate.t_end", 0.5);
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const int threads = cfg.get_int("threads", 0);
  const auto out_dir = ensure_out_dir(cfg);
  if (type == "discrete") {
    const int T = cfg.get_int("model.T", 12);
    const DiscreteHJMConfig dcfg(T, cfg.get_double("model.gamma", 0.0));
    const AlphaFunction alpha = alpha_from_config(cfg, static_cast<double>(T));
    std::vector<double> mu0(static_cast<std::size_t>(T) + 1, 1.0);
    if (cfg.has("simulate.mu0")) mu0 = cfg.get_list("simulate.mu0");
    const int steps = std::min(n_steps, T);
    for (int p = 0; p < n_paths; ++p) {
      auto rng = make_rng(seed, RngStream::DiscretePath, static_cast<std::uint64_t>(p));
      const auto path = discrete_hjm_path(mu0, steps, dcfg, alpha, rng);
      std::vector<std::vector<double>> rows;
      for (std::size_t t = 0; t < path.size(); ++t) {
        for (std::size_t i = 0; i < path[t].size(); ++i)
          rows.push_back({static_cast<double>(t), static_cast<double>(i), path[t][i]});
      }
      char name[32];
      std::snprintf(name, sizeof(name), "path_%05d.csv", p);
      io::write_csv((out_dir / name).string(), {"t", "x", "weight"}, rows);
    }
    std::cout << "wrote " << n_paths << " paths to " << out_dir.string() << "\n";
    return 0;
  }
  const std::string curve_path = cfg.require_str("io.forward_curve");
  require_file(curve_path, "forward curve");
  const DiscreteMeasure mu0 = io::load_forward_curve_csv(curve_path, horizon);
  const PathGrid grid = PathGrid::uniform(t_end, n_steps);
  std::vector<MeasurePath> paths;
  if (type == "affine") {
    const AlphaFunction alpha = alpha_from_config(cfg, horizon);
    paths = simulate_affine_ensemble(mu0, grid, alpha, seed, n_paths, threads);
  } else if (type == "bs") {
    const BSKernels kernels = kernels_from_config(cfg, horizon);
    paths.reserve(static_cast<std::size_t>(n_paths));
    for (int p = 0; p < n_paths; ++p) {
      auto rng = make_rng(seed, RngStream::BsPath, static_cast<std::uint64_t>(p));
      MeasurePath mp{grid, {mu0}};
      for (std::size_t k = 0; k + 1 < grid.times.size(); ++k) {
        mp.states.push_back(logeuler_bs_step(mp.states.back(),
                                             grid.times[k + 1] - grid.times[k], kernels, rng));
      }
      paths.push_back(std::move(mp));
    }
  } else {
    throw ConfigError("simulate: model.type must be affine, bs or discrete");
  }
  for (int p = 0; p < n_paths; ++p) {
    char name[32];
    std::snprintf(name, sizeof(name), "path_%05d.csv", p);
    io::write_path_csv((out_dir / name).string(), paths[static_cast<std::size_t>(p)]);
  }
  std::cout << "wrote " << n_paths << " paths to " << out_dir.string() << "\n";
  return 0;
}

inline int run_moments(const IniConfig& cfg) {
  const std::string type = cfg.get_str("model.type", "affine");
  const double horizon = cfg.get_double("model.horizon", 1.0);
  const std::string curve_path = cfg.require_str("io.forward_curve");
  require_file(curve_path, "forward curve");
  const DiscreteMeasure mu0 = io::load_forward_curve_csv(curve_path, horizon);
  const int order = cfg.get_int("moments.order", 2);
  const double t = cfg.get_double("moments.t", 0.5);
  const TestFunction phi = phi_from_config(cfg.get_str("moments.phi", "quadratic"));
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  if (type == "affine") {
    const AlphaFunction alpha = alpha_from_config(cfg, horizon);
    labels.push_back("first_moment");
    rows.push_back({first_moment(mu0, phi, t), 0.0});
    if (order >= 2) {
      labels.push_back("second_moment");
      rows.push_back({second_moment_affine(mu0, phi, alpha, t), 0.0});
    }
  } else if (type == "bs") {
    const BSKernels kernels = kernels_from_config(cfg, horizon);
    const int n_paths = cfg.get_int("moments.n_paths", 100000);
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const int threads = cfg.get_int("threads", 0);
    for (int m = 1; m <= order; ++m) {
      const MomentEstimate est = particle_moment_bs(mu0, phi, m, t, kernels, n_paths, seed, threads);
      labels.push_back("particle_moment_m" + std::to_string(m));
      rows.push_back({est.estimate, est.std_error});
    }
  } else {
    throw ConfigError("moments: model.type must be affine or bs");
  }
  const auto out = ensure_out_dir(cfg) / "moments.csv";
  std::ofstream f(out);
  if (!f) throw DataError("cannot open for writing: " + out.string());
  f << "quantity,estimate,std_error\n";
  char buf[64];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", rows[i][0], rows[i][1]);
    f << labels[i] << "," << buf << "\n";
  }
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

inline int run_check_drift(const IniConfig& cfg) {
  if (cfg.get_str("model.type", "affine") != "affine")
    throw ConfigError("check-drift requires model.type = affine");
  const double horizon = cfg.get_double("model.horizon", 1.0);
  const std::string curve_path = cfg.require_str("io.forward_curve");
  require_file(curve_path, "forward curve");
  const DiscreteMeasure mu0 = io::load_forward_curve_csv(curve_path, horizon);
  const AlphaFunction alpha = alpha_from_config(cfg, horizon);
  const int n_paths = cfg.get_int("drift.n_paths", 2000);
  const int n_steps = cfg.get_int("drift.n_steps", 50);
  const double t_end = cfg.get_double("drift.t_end", 0.5);
  const double gamma = cfg.get_double("drift.gamma", 0.0);
  const TestFunction phi = phi_from_config(cfg.get_str("drift.phi", "quadratic"));
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const int threads = cfg.get_int("threads", 0);
  const PathGrid grid = PathGrid::uniform(t_end, n_steps);
  const auto paths = simulate_affine_ensemble(mu0, grid, alpha, seed, n_paths, threads);
  const MartingaleTestReport report = martingale_drift_test(paths, phi, gamma);
  nlohmann::json j;
  j["pass"] = report.pass;
  j["max_abs_z"] = report.max_abs_z;
  j["threshold"] = report.threshold;
  j["n_paths"] = n_paths;
  j["gamma"] = gamma;
  j["grid_spacing_warning"] = report.grid_spacing_warning;
  j["z"] = report.z;
  const auto out = ensure_out_dir(cfg) / "drift_report.json";
  io::save_json(out.string(), j);
  std::cout << "wrote " << out.string() << " (pass=" << (report.pass ? "true" : "false") << ")\n";
  return 0;
}

inline int run_check_admissibility(const IniConfig& cfg) {
  const double horizon = cfg.get_double("model.horizon", 1.0);
  const BSKernels kernels = kernels_from_config(cfg, horizon);
  const int n_samples = cfg.get_int("admissibility.n_samples", 50);
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const AdmissibilityReport report = check_admissibility(kernels, n_samples, seed);
  nlohmann::json j;
  j["pass"] = report.pass;
  j["trials"] = report.trials;
  nlohmann::json issues = nlohmann::json::array();
  for (const auto& issue : report.issues) {
    issues.push_back({{"kind", issue.kind}, {"points", issue.points}, {"value", issue.value}});
  }
  j["issues"] = issues;
  const auto out = ensure_out_dir(cfg) / "admissibility_report.json";
  io::save_json(out.string(), j);
  std::cout << "wrote " << out.string() << " (pass=" << (report.pass ? "true" : "false") << ")\n";
  return 0;
}

inline int run_calibrate(const IniConfig& cfg) {
  if (cfg.get_str("model.type", "affine") != "affine")
    throw ConfigError("calibrate requires model.type = affine");
  const double horizon = cfg.get_double("model.horizon", 1.0);
  const std::string curve_path = cfg.require_str("io.forward_curve");
  const std::string quotes_path = cfg.require_str("io.quotes");
  require_file(curve_path, "forward curve");
  require_file(quotes_path, "quotes");
  const double day_ahead = cfg.get_double("calib.day_ahead", 1.0);
  const FutureContract contract = contract_from_config(cfg);
  const double exercise = cfg.get_double("option.exercise", 35.0 / 365.0);
  const MarketDataset data =
      load_market_csv(curve_path, quotes_path, day_ahead, horizon, contract, exercise);

  CalibrationConfig ccfg;
  ccfg.learning_rate = cfg.get_double("calib.learning_rate", 0.01);
  ccfg.max_iters = cfg.get_int("calib.max_iters", 300);
  ccfg.damping = cfg.get_double("option.damping", 1.0);
  ccfg.fourier = fourier_from_config(cfg, ccfg.damping);
  ccfg.seed = cfg.get_u64("seed", 1);
  const std::string grad = cfg.get_str("calib.grad", "backprop");
  if (grad == "backprop") {
    ccfg.grad_mode = BackpropMode{};
  } else if (grad == "fd") {
    ccfg.grad_mode = FiniteDifferenceMode{cfg.get_double("calib.fd_h", 1e-4)};
  } else {
    throw ConfigError("calib.grad must be backprop or fd");
  }

  AlphaFunction init = [&]() {
    const std::string kind = cfg.get_str("calib.init", "neural");
    if (kind == "neural") {
      const int width = cfg.get_int("calib.width", 32);
      const double alpha0 = cfg.get_double("calib.pretrain_alpha0", 0.01);
      const int steps = cfg.get_int("calib.pretrain_steps", 100);
      return AlphaFunction::neural(
          MLPAlpha::near_constant(horizon, width, alpha0, ccfg.seed, steps));
    }
    if (kind == "grid" || kind == "constant" || kind == "file")
      return detail::alpha_from_config(cfg, horizon);
    throw ConfigError("calib.init must be neural, grid, constant or file");
  }();

  const CalibrationResult result = calibrate(data, init, ccfg);
  const auto out_dir = ensure_out_dir(cfg);
  nlohmann::json j;
  j["loss_trace"] = result.loss_trace;
  j["best_iteration"] = result.best_iteration;
  j["mean_abs_error"] = result.mean_abs_error;
  j["mean_rel_error"] = result.mean_rel_error;
  j["mean_sq_error"] = result.mean_sq_error;
  j["strikes_rescaled"] = data.strikes_rescaled;
  nlohmann::json per_strike = nlohmann::json::array();
  for (const StrikeErrorRow& r : result.errors) {
    per_strike.push_back({{"strike", r.strike},
                          {"market", r.market},
                          {"model", r.model},
                          {"abs", r.abs_err},
                          {"rel", r.rel_err},
                          {"sq", r.sq_err}});
  }
  j["per_strike"] = per_strike;
  io::save_json((out_dir / "calibration_report.json").string(), j);
  io::save_json((out_dir / "alpha_fitted.json").string(), io::alpha_to_json(result.fitted));
  emit_figures(result, out_dir);
  std::cout << "wrote calibration_report.json, alpha_fitted.json, fit.csv, errors.csv to "
            << out_dir.string() << "\n";
  std::cout << "mean_abs_error=" << result.mean_abs_error << " after "
            << result.loss_trace.size() - 1 << " iterations (best at " << result.best_iteration
            << ")\n";
  return 0;
}

}  // namespace detail

/// Executes the command named in the config. Exit codes: 0 success,
/// 1 validation/configuration error, 2 numerical failure.
inline int run(const std::string& config_path, std::span<const std::string> overrides = {}) {
  try {
    IniConfig cfg = IniConfig::parse_file(config_path);
    for (const std::string& o : overrides) cfg.apply_override(o);
    const std::string command = cfg.require_str("command");
    if (command == "price") return detail::run_price(cfg);
    if (command == "simulate") return detail::run_simulate(cfg);
    if (command == "moments") return detail::run_moments(cfg);
    if (command == "calibrate") return detail::run_calibrate(cfg);
    if (command == "check-drift") return detail::run_check_drift(cfg);
    if (command == "check-admissibility") return detail::run_check_admissibility(cfg);
    throw ConfigError("unknown command: " + command);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run_main(int argc, const char* const* argv) {
  if (argc < 2 || std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h") {
    std::cout << "usage: mvhjm <config-file> [--section.key=value ...]\n"
                 "commands (set via 'command = ...' in the config): price, simulate,\n"
                 "moments, calibrate, check-drift, check-admissibility.\n"
                 "See docs/config.md for the full key reference.\n";
    return argc < 2 ? 1 : 0;
  }
  std::vector<std::string> overrides;
  for (int i = 2; i < argc; ++i) overrides.emplace_back(argv[i]);
  return run(argv[1], overrides);
}

}  // namespace mvhjm::cli
