#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvhjm/errors.hpp"
#include "mvhjm/measures.hpp"
#include "mvhjm/models.hpp"
#include "mvhjm/parallel.hpp"
#include "mvhjm/rng.hpp"

namespace mvhjm {

struct PathGrid {
  std::vector<double> times;

  explicit PathGrid(std::vector<double> t) : times(std::move(t)) {
    if (times.size() < 2) throw DomainError("PathGrid: need at least two times");
    if (times.front() != 0.0) throw DomainError("PathGrid: first time must be 0");
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
      if (!(times[i] < times[i + 1])) throw DomainError("PathGrid: times must be increasing");
    }
  }

  static PathGrid uniform(double t_end, int n_steps) {
    if (n_steps < 1 || !(t_end > 0.0)) throw DomainError("PathGrid: bad uniform grid request");
    std::vector<double> t(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i) t[static_cast<std::size_t>(i)] = t_end * i / n_steps;
    return PathGrid(std::move(t));
  }

  double max_spacing() const {
    double m = 0.0;
    for (std::size_t i = 0; i + 1 < times.size(); ++i) m = std::max(m, times[i + 1] - times[i]);
    return m;
  }

  bool operator==(const PathGrid& o) const { return times == o.times; }
};

struct MeasurePath {
  PathGrid grid;
  std::vector<DiscreteMeasure> states;
};

/// Poisson sum of exponentials: W' ~ Gamma(N, theta/2) with N ~ Poisson(2w/theta),
/// W' = 0 when N = 0. This is the exact zero-drift branching transition:
/// E[exp(-u W')] = exp(-u w / (1 + u theta / 2)), so E[W'] = w and Var = w theta.
inline double branching_draw(double w, double theta, std::mt19937_64& rng) {
  if (w <= 0.0 || theta <= 0.0) return w;
  std::poisson_distribution<long> pois(2.0 * w / theta);
  const long n = pois(rng);
  if (n == 0) return 0.0;
  std::gamma_distribution<double> gamma(static_cast<double>(n), theta / 2.0);
  return gamma(rng);
}

/// One exact step of the affine model: transport each atom by (x - dt)^+ and
/// redraw its weight from the branching transition with
/// theta = int_0^dt alpha((x - s)^+) ds (alpha along the transported path).
inline DiscreteMeasure exact_affine_step(const DiscreteMeasure& mu, double dt,
                                         const AlphaFunction& alpha, std::mt19937_64& rng) {
  if (!(dt > 0.0)) throw DomainError("exact_affine_step: dt must be > 0");
  std::vector<Atom> out;
  out.reserve(mu.size());
  for (const Atom& a : mu.atoms()) {
    const double theta = alpha.transported_integral(a.location, dt);
    out.push_back({std::max(a.location - dt, 0.0), branching_draw(a.weight, theta, rng)});
  }
  return DiscreteMeasure(mu.horizon(), std::move(out)).normalized();
}

inline MeasurePath simulate_affine_path(const DiscreteMeasure& mu0, const PathGrid& grid,
                                        const AlphaFunction& alpha, std::mt19937_64& rng) {
  if (grid.times.back() > mu0.horizon() + 1e-12)
    throw DomainError("simulate_affine_path: grid exceeds the horizon");
  MeasurePath path{grid, {}};
  path.states.reserve(grid.times.size());
  path.states.push_back(mu0);
  for (std::size_t i = 0; i + 1 < grid.times.size(); ++i) {
    const double dt = grid.times[i + 1] - grid.times[i];
    path.states.push_back(exact_affine_step(path.states.back(), dt, alpha, rng));
  }
  return path;
}

/// Independent paths with per-path substreams (deterministic in (seed, index)).
inline std::vector<MeasurePath> simulate_affine_ensemble(const DiscreteMeasure& mu0,
                                                         const PathGrid& grid,
                                                         const AlphaFunction& alpha,
                                                         std::uint64_t seed, int n_paths,
                                                         int threads = 1) {
  if (n_paths < 1) throw DomainError("simulate_affine_ensemble: n_paths must be >= 1");
  std::vector<MeasurePath> out(static_cast<std::size_t>(n_paths), MeasurePath{grid, {}});
  parallel_for(static_cast<std::size_t>(n_paths), threads, [&](std::size_t p) {
    auto rng = make_rng(seed, RngStream::AffinePath, p);
    out[p] = simulate_affine_path(mu0, grid, alpha, rng);
  });
  return out;
}

struct LogEulerDiagnostics {
  bool covariance_clipped = false;
  double min_eigenvalue = 0.0;
};

/// Log-Euler step for the Black-Scholes-type model with pi == 0: transport
/// atoms, multiply weights by correlated lognormals with covariance
/// beta(x_i, x_j) dt. The compensator uses the factorized covariance actually
/// sampled, so each weight keeps conditional mean w exactly even if clipping
/// repaired the matrix.
inline DiscreteMeasure logeuler_bs_step(const DiscreteMeasure& mu, double dt,
                                        const BSKernels& kernels, std::mt19937_64& rng,
                                        LogEulerDiagnostics* diag = nullptr) {
  if (!(dt > 0.0)) throw DomainError("logeuler_bs_step: dt must be > 0");
  if (!kernels.pi_is_zero())
    throw DomainError("logeuler_bs_step: scheme requires pi == 0; use particle_moment_bs");
  const auto atoms = mu.atoms();
  const int n = static_cast<int>(atoms.size());
  if (n == 0) return mu;
  Eigen::MatrixXd cov(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      cov(i, j) = kernels.beta(atoms[static_cast<std::size_t>(i)].location,
                               atoms[static_cast<std::size_t>(j)].location) *
                  dt;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  const Eigen::VectorXd& evals = es.eigenvalues();
  if (diag) {
    diag->min_eigenvalue = evals.minCoeff();
    diag->covariance_clipped = evals.minCoeff() < -1e-12 * std::max(1.0, evals.cwiseAbs().maxCoeff());
  }
  Eigen::MatrixXd factor = es.eigenvectors();
  for (int j = 0; j < n; ++j) {
    const double lam = std::max(evals(j), 0.0);
    factor.col(j) *= std::sqrt(lam);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd xi(n);
  for (int j = 0; j < n; ++j) xi(j) = normal(rng);
  const Eigen::VectorXd gauss = factor * xi;
  std::vector<Atom> out;
  out.reserve(atoms.size());
  for (int i = 0; i < n; ++i) {
    const double used_var = factor.row(i).squaredNorm();
    const double w = atoms[static_cast<std::size_t>(i)].weight *
                     std::exp(gauss(i) - 0.5 * used_var);
    out.push_back({std::max(atoms[static_cast<std::size_t>(i)].location - dt, 0.0), w});
  }
  return DiscreteMeasure(mu.horizon(), std::move(out)).normalized();
}

/// Discrete-maturity scheme: deterministic part nu = (I + beta) mu, then each
/// component i < T is redrawn by the exact branching transition with
/// theta = alpha(i + 1) (alpha at the source node) over a unit step.
inline std::vector<std::vector<double>> discrete_hjm_path(std::span<const double> mu0,
                                                          int steps,
                                                          const DiscreteHJMConfig& cfg,
                                                          const AlphaFunction& alpha,
                                                          std::mt19937_64& rng) {
  const int T = cfg.horizon;
  if (static_cast<int>(mu0.size()) != T + 1)
    throw DomainError("discrete_hjm_path: state vector must have length T + 1");
  if (steps < 0 || steps > T) throw DomainError("discrete_hjm_path: need 0 <= steps <= T");
  for (double v : mu0) {
    if (!std::isfinite(v) || v < 0.0)
      throw DomainError("discrete_hjm_path: components must be non-negative");
  }
  const Eigen::MatrixXd beta = build_beta_matrix(cfg);
  const Eigen::MatrixXd prop = Eigen::MatrixXd::Identity(T + 1, T + 1) + beta;
  std::vector<std::vector<double>> path;
  path.reserve(static_cast<std::size_t>(steps) + 1);
  path.emplace_back(mu0.begin(), mu0.end());
  Eigen::VectorXd state = Eigen::Map<const Eigen::VectorXd>(mu0.data(), T + 1);
  for (int s = 0; s < steps; ++s) {
    Eigen::VectorXd nu = prop * state;
    for (int i = 0; i < T; ++i) {
      const double theta = alpha.eval(static_cast<double>(i + 1));
      nu(i) = branching_draw(nu(i), theta, rng);
    }
    nu(T) = std::max(nu(T), 0.0);
    state = nu;
    path.emplace_back(state.data(), state.data() + T + 1);
  }
  return path;
}

struct MartingaleTestReport {
  bool pass = false;
  double max_abs_z = 0.0;
  double threshold = 4.0;
  std::vector<double> z;               // per grid time t_k, k >= 1
  std::vector<double> mean_increment;  // mean of M_{t_k} - M_0
  std::vector<double> std_error;       // effective SE used in z
  bool grid_spacing_warning = false;
};

/// Tests the drift condition: M_t = <phi, mu_t> + int_0^t (<phi', mu_s> +
/// gamma phi(0) mu_s({0})) ds should have mean-zero increments. Cumulative
/// increments M_{t_k} - M_0 are z-scored against the cross-path standard
/// error, floored by a Richardson estimate of the trapezoid quadrature error
/// so that deterministic paths are judged against quadrature accuracy rather
/// than zero variance.
inline MartingaleTestReport martingale_drift_test(std::span<const MeasurePath> paths,
                                                  const TestFunction& phi, double gamma) {
  phi.require_d1("martingale_drift_test");
  if (paths.empty()) throw DomainError("martingale_drift_test: no paths");
  const PathGrid& grid = paths.front().grid;
  const std::size_t n = grid.times.size();
  for (const MeasurePath& p : paths) {
    if (!(p.grid == grid)) throw DomainError("martingale_drift_test: paths must share a grid");
    if (p.states.size() != n) throw DomainError("martingale_drift_test: ragged path");
  }
  const std::size_t np = paths.size();
  if (np < 2) throw DomainError("martingale_drift_test: need at least 2 paths");
  const double phi0 = phi.value(0.0);

  // Per path: M_k and its coarse-grid (every second point) variant.
  std::vector<std::vector<double>> D(n - 1, std::vector<double>(np));
  std::vector<std::vector<double>> quad_err(n - 1, std::vector<double>(np, 0.0));
  for (std::size_t p = 0; p < np; ++p) {
    std::vector<double> f(n), g(n);
    for (std::size_t k = 0; k < n; ++k) {
      const DiscreteMeasure& mu = paths[p].states[k];
      f[k] = pair(phi, mu);
      g[k] = pair_with([&phi](double x) { return phi.derivative(x); }, mu) +
             gamma * phi0 * mu.mass_at_zero();
    }
    double integral = 0.0;
    std::vector<double> fine(n, 0.0);
    for (std::size_t k = 1; k < n; ++k) {
      integral += 0.5 * (g[k - 1] + g[k]) * (grid.times[k] - grid.times[k - 1]);
      fine[k] = integral;
      D[k - 1][p] = (f[k] + integral) - f[0];
    }
    // Richardson: trapezoid over pairs of intervals, same samples.
    double coarse = 0.0;
    std::size_t last_even = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if (k % 2 == 0) {
        coarse += 0.5 * (g[k - 2] + g[k]) * (grid.times[k] - grid.times[k - 2]);
        last_even = k;
        quad_err[k - 1][p] = (fine[k] - coarse) / 3.0;
      } else {
        const double coarse_k =
            coarse + 0.5 * (g[last_even] + g[k]) * (grid.times[k] - grid.times[last_even]);
        quad_err[k - 1][p] = (fine[k] - coarse_k) / 3.0;
      }
    }
  }

  MartingaleTestReport report;
  report.z.resize(n - 1);
  report.mean_increment.resize(n - 1);
  report.std_error.resize(n - 1);
  double m0_scale = 0.0;
  for (std::size_t p = 0; p < np; ++p) m0_scale += std::abs(pair(phi, paths[p].states[0]));
  m0_scale = 1.0 + m0_scale / static_cast<double>(np);
  // A single quadrature floor across all grid points: the estimate at early
  // points can degenerate (at k = 1 the coarse trapezoid coincides with the
  // fine one) while the cumulative error is bounded by the largest estimate.
  double qf_max = 0.0;
  std::vector<double> means(n - 1), ses(n - 1);
  for (std::size_t k = 0; k < n - 1; ++k) {
    double mean = 0.0, qf = 0.0;
    for (std::size_t p = 0; p < np; ++p) {
      mean += D[k][p];
      qf += std::abs(quad_err[k][p]);
    }
    mean /= static_cast<double>(np);
    qf /= static_cast<double>(np);
    qf_max = std::max(qf_max, qf);
    double var = 0.0;
    for (std::size_t p = 0; p < np; ++p) var += (D[k][p] - mean) * (D[k][p] - mean);
    var /= static_cast<double>(np - 1);
    means[k] = mean;
    ses[k] = std::sqrt(var / static_cast<double>(np));
  }
  for (std::size_t k = 0; k < n - 1; ++k) {
    const double floor = std::max(2.0 * qf_max, 1e-12 * m0_scale);
    const double se_eff = std::max(ses[k], floor);
    report.mean_increment[k] = means[k];
    report.std_error[k] = se_eff;
    report.z[k] = means[k] / se_eff;
    report.max_abs_z = std::max(report.max_abs_z, std::abs(report.z[k]));
  }
  report.pass = report.max_abs_z < report.threshold;
  const double horizon = paths.front().states.front().horizon();
  report.grid_spacing_warning = grid.max_spacing() > 1e-2 * horizon * (1.0 + 1e-9);
  return report;
}

}  // namespace mvhjm
