#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mvhjm/errors.hpp"
#include "mvhjm/measures.hpp"
#include "mvhjm/models.hpp"
#include "mvhjm/parallel.hpp"
#include "mvhjm/rng.hpp"

namespace mvhjm {

/// Rank-one coefficient tensor g^{(x) m}, represented by g and the order m.
struct RankOneCoefficient {
  int order;
  TestFunction g;

  RankOneCoefficient(int m, TestFunction fn) : order(m), g(std::move(fn)) {
    if (m < 0) throw DomainError("RankOneCoefficient: order must be >= 0");
    if (m > 4) throw DomainError("RankOneCoefficient: order capped at 4");
    g.require_d1("RankOneCoefficient");
  }
};

/// E[<phi, mu_{s+dt}> | mu_s] = <phi((. - dt)^+), mu_s>. Model-free.
inline double first_moment(const DiscreteMeasure& mu_s, const TestFunction& phi, double dt) {
  phi.require_d1("first_moment");
  if (!std::isfinite(dt) || dt < 0.0) throw DomainError("first_moment: dt must be >= 0");
  return pair_with([&](double x) { return phi.value(std::max(x - dt, 0.0)); }, mu_s);
}

/// E[<g, mu_t>^2] for the affine model:
///   <S_t g, mu_0>^2 + int_0^t <S_{t-s}(alpha (S_s g)^2), mu_0> ds,
/// with S_u h = h((. - u)^+); the integral by composite Simpson on n_quad points.
inline double second_moment_affine(const DiscreteMeasure& mu0, const TestFunction& g,
                                   const AlphaFunction& alpha, double t, int n_quad = 201) {
  g.require_d1("second_moment_affine");
  if (!std::isfinite(t) || t < 0.0 || t > alpha.horizon())
    throw DomainError("second_moment_affine: t outside [0, horizon]");
  if (n_quad < 3) throw DomainError("second_moment_affine: n_quad must be >= 3");
  const double mean = pair_with([&](double x) { return g.value(std::max(x - t, 0.0)); }, mu0);
  if (t == 0.0) return mean * mean;
  auto integrand = [&](double s) {
    double acc = 0.0;
    for (const Atom& a : mu0.atoms()) {
      const double y = std::max(a.location - (t - s), 0.0);
      const double gv = g.value(std::max(y - s, 0.0));
      acc += a.weight * alpha.eval(y) * gv * gv;
    }
    return acc;
  };
  int pts = n_quad | 1;  // composite Simpson needs an odd point count
  const double h = t / (pts - 1);
  double sum = integrand(0.0) + integrand(t);
  for (int j = 1; j < pts - 1; ++j) sum += integrand(h * j) * ((j % 2 == 1) ? 4.0 : 2.0);
  return mean * mean + sum * h / 3.0;
}

// --- interacting particle system for BS-type dual moments --------------------

/// Positions of the m dual particles and the accumulated interaction
/// potential int_0^t 1/2 sum_{i != j} (pi + beta)(Z^i_s, Z^j_s) ds. The
/// path weight is exp(potential_integral).
struct ParticleState {
  std::vector<double> positions;
  double potential_integral = 0.0;
};

namespace detail {

// 8-point Gauss-Legendre on [0, 1].
inline constexpr double kGlNodes[8] = {0.01985507175123188, 0.10166676129318664,
                                       0.2372337950418355,  0.40828267875217505,
                                       0.59171732124782495, 0.7627662049581645,
                                       0.89833323870681336, 0.98014492824876812};
inline constexpr double kGlWeights[8] = {0.05061426814518813, 0.11119051722668723,
                                         0.15685332293894364, 0.18134189168918097,
                                         0.18134189168918097, 0.15685332293894364,
                                         0.11119051722668723, 0.05061426814518813};

inline double pair_potential(const BSKernels& k, std::span<const double> z, double s) {
  // 1/2 sum_{i != j} (pi + beta) evaluated along the decayed positions.
  const std::size_t m = z.size();
  double v = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double zi = std::max(z[i] - s, 0.0);
    for (std::size_t j = i + 1; j < m; ++j) {
      const double zj = std::max(z[j] - s, 0.0);
      v += k.pi(zi, zj) + k.pi(zj, zi) + 2.0 * k.beta(zi, zj);
    }
  }
  return 0.5 * v;
}

/// Integral of the pair potential over a decay segment of length dt, split at
/// the absorption times of each coordinate (kinks of (z - s)^+).
inline double segment_potential_integral(const BSKernels& k, std::span<const double> z,
                                         double dt) {
  if (z.size() < 2 || dt <= 0.0) return 0.0;
  std::vector<double> cuts;
  cuts.push_back(0.0);
  for (double zi : z) {
    if (zi > 0.0 && zi < dt) cuts.push_back(zi);
  }
  cuts.push_back(dt);
  std::sort(cuts.begin(), cuts.end());
  double acc = 0.0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double a = cuts[c], b = cuts[c + 1];
    if (b - a <= 0.0) continue;
    for (int q = 0; q < 8; ++q) {
      const double s = a + (b - a) * kGlNodes[q];
      acc += (b - a) * kGlWeights[q] * pair_potential(k, z, s);
    }
  }
  return acc;
}

}  // namespace detail

/// Runs the interacting particle system to time t: linear decay with slope -1
/// absorbed at 0, and component j jumping onto component i's position with
/// intensity 1/2 pi(Z^i, Z^j) (Poisson thinning against pi_sup_bound).
inline ParticleState simulate_interacting_particles(std::vector<double> z0, double t,
                                                    const BSKernels& kernels,
                                                    std::mt19937_64& rng,
                                                    double pi_bound = -1.0) {
  const std::size_t m = z0.size();
  if (m == 0) throw DomainError("simulate_interacting_particles: need at least one particle");
  if (pi_bound < 0.0) pi_bound = kernels.pi_sup_bound();
  ParticleState state{std::move(z0), 0.0};
  const double rate = 0.5 * pi_bound * static_cast<double>(m) * static_cast<double>(m - 1);
  std::exponential_distribution<double> exp_dist(rate > 0.0 ? rate : 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double s = 0.0;
  while (s < t) {
    double seg = t - s;
    bool proposal = false;
    if (rate > 0.0) {
      const double gap = exp_dist(rng);
      if (gap < seg) {
        seg = gap;
        proposal = true;
      }
    }
    state.potential_integral +=
        detail::segment_potential_integral(kernels, state.positions, seg);
    for (double& z : state.positions) z = std::max(z - seg, 0.0);
    s += seg;
    if (proposal) {
      // ordered pair (i, j), i != j: j jumps onto i
      const std::size_t pairs = m * (m - 1);
      const std::size_t pick = std::min<std::size_t>(
          static_cast<std::size_t>(uni(rng) * static_cast<double>(pairs)), pairs - 1);
      const std::size_t i = pick / (m - 1);
      std::size_t j = pick % (m - 1);
      if (j >= i) ++j;
      const double intensity = 0.5 * kernels.pi(state.positions[i], state.positions[j]);
      if (uni(rng) * (0.5 * pi_bound) < intensity) state.positions[j] = state.positions[i];
    }
  }
  return state;
}

struct MomentEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Feynman-Kac particle estimator of E[<g^{(x) m}, mu_t^m>]:
/// mass^m * mean of exp(int potential) * prod_j g(Z^j_t) with Z_0^j iid from
/// mu_0 / mass. The potential 1/2 sum_{i != j}(pi + beta) is the
/// multiplicative part of the m-th dual operator.
inline MomentEstimate particle_moment_bs(const DiscreteMeasure& mu0, const TestFunction& g,
                                         int m, double t, const BSKernels& kernels,
                                         int n_paths, std::uint64_t seed, int threads = 1) {
  g.require_d1("particle_moment_bs");
  if (m < 1) throw DomainError("particle_moment_bs: m must be >= 1");
  if (m > 4) throw DomainError("particle_moment_bs: m capped at 4");
  if (n_paths < 2) throw DomainError("particle_moment_bs: need at least 2 paths");
  const double mass = mu0.total_mass();
  if (!(mass > 0.0)) throw DomainError("particle_moment_bs: mu_0 must have positive mass");
  const double pi_bound = kernels.pi_sup_bound();

  const auto atoms = mu0.atoms();
  std::vector<double> cdf(atoms.size());
  double run = 0.0;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    run += atoms[i].weight;
    cdf[i] = run / mass;
  }
  std::vector<double> values(static_cast<std::size_t>(n_paths));
  parallel_for(static_cast<std::size_t>(n_paths), threads, [&](std::size_t p) {
    auto rng = make_rng(seed, RngStream::Particle, p);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> z0(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const double u = uni(rng);
      const std::size_t idx = static_cast<std::size_t>(
          std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      z0[static_cast<std::size_t>(j)] = atoms[std::min(idx, atoms.size() - 1)].location;
    }
    const ParticleState st = simulate_interacting_particles(std::move(z0), t, kernels, rng, pi_bound);
    double prod = 1.0;
    for (double z : st.positions) prod *= g.value(z);
    values[p] = std::exp(st.potential_integral) * prod;
  });
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n_paths;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= (n_paths - 1);
  const double scale = std::pow(mass, m);
  return {scale * mean, scale * std::sqrt(var / n_paths)};
}

// --- control variates --------------------------------------------------------

struct ControlVariateResult {
  double price = 0.0;
  double variance_ratio = 1.0;
  double c = 0.0;
};

/// mean(theta) - c (mean(p) - E[p]) with c = Cov(theta, p) / Var(p); the
/// variance reduction factor is 1 - Corr^2(theta, p).
inline ControlVariateResult control_variate_price(std::span<const double> payoff_samples,
                                                  std::span<const double> poly_samples,
                                                  double poly_expectation,
                                                  std::optional<double> c_override = std::nullopt) {
  if (payoff_samples.size() != poly_samples.size())
    throw ShapeError("control_variate_price: sample vectors differ in length");
  const std::size_t n = payoff_samples.size();
  if (n < 2) throw ShapeError("control_variate_price: need at least 2 samples");
  double mt = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mt += payoff_samples[i];
    mp += poly_samples[i];
  }
  mt /= static_cast<double>(n);
  mp /= static_cast<double>(n);
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt_ = payoff_samples[i] - mt;
    const double dp_ = poly_samples[i] - mp;
    cov += dt_ * dp_;
    vp += dp_ * dp_;
    vt += dt_ * dt_;
  }
  cov /= static_cast<double>(n - 1);
  vp /= static_cast<double>(n - 1);
  vt /= static_cast<double>(n - 1);
  if (!(vp > 0.0)) throw DegenerateControl("control_variate_price: control has zero variance");
  const double c = c_override.value_or(cov / vp);
  const double corr2 = vt > 0.0 ? (cov * cov) / (vp * vt) : 1.0;
  return {mt - c * (mp - poly_expectation), 1.0 - corr2, c};
}

// --- dual operators -----------------------------------------------------------

struct AffineDual {
  const AlphaFunction* alpha;
};
struct BSDual {
  const BSKernels* kernels;
};
using DualModel = std::variant<AffineDual, BSDual>;

/// Pointwise action of (L_m^m, L_m^{m-1}) on the rank-one tensor g^{(x) m}.
/// top acts on E^m tuples, sub on E^{m-1} tuples (zero for BS-type).
struct DualAction {
  std::function<double(std::span<const double>)> top;
  std::function<double(std::span<const double>)> sub;
};

inline MomentEstimate particle_moment_bs(const DiscreteMeasure& mu0,
                                         const RankOneCoefficient& coeff, double t,
                                         const BSKernels& kernels, int n_paths,
                                         std::uint64_t seed, int threads = 1) {
  return particle_moment_bs(mu0, coeff.g, coeff.order, t, kernels, n_paths, seed, threads);
}

inline DualAction dual_apply(int m, const TestFunction& g, const DualModel& model) {
  if (m < 1) throw DomainError("dual_apply: m must be >= 1");
  if (m > 4) throw DomainError("dual_apply: m capped at 4");
  auto transport_part = [g, m](std::span<const double> x) {
    // -m (g' (x) g^{(x)(m-1)}) symmetrized = -sum_i g'(x_i) prod_{j != i} g(x_j)
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      double prod = g.derivative(x[static_cast<std::size_t>(i)]);
      for (int j = 0; j < m; ++j) {
        if (j != i) prod *= g.value(x[static_cast<std::size_t>(j)]);
      }
      acc -= prod;
    }
    return acc;
  };
  if (std::holds_alternative<AffineDual>(model)) {
    const AlphaFunction* alpha = std::get<AffineDual>(model).alpha;
    DualAction act;
    act.top = transport_part;
    act.sub = [g, m, alpha](std::span<const double> y) {
      if (m < 2) return 0.0;
      // (m(m-1)/2) (alpha g^2 (x) g^{(x)(m-2)}) symmetrized over m-1 slots
      double acc = 0.0;
      for (int i = 0; i < m - 1; ++i) {
        const double yi = y[static_cast<std::size_t>(i)];
        const double gv = g.value(yi);
        double prod = alpha->eval(yi) * gv * gv;
        for (int j = 0; j < m - 1; ++j) {
          if (j != i) prod *= g.value(y[static_cast<std::size_t>(j)]);
        }
        acc += prod;
      }
      return 0.5 * m * acc;
    };
    return act;
  }
  const BSKernels* k = std::get<BSDual>(model).kernels;
  DualAction act;
  act.top = [g, m, k, transport_part](std::span<const double> x) {
    double acc = transport_part(x);
    // + sum_{i < j} Q2(g (x) g)(x_i, x_j) prod_{l != i,j} g(x_l)
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) {
        const double xi = x[static_cast<std::size_t>(i)];
        const double xj = x[static_cast<std::size_t>(j)];
        const double gi = g.value(xi), gj = g.value(xj);
        double q2 = 0.5 * (k->pi(xi, xj) * gi * gi + k->pi(xj, xi) * gj * gj +
                           2.0 * k->beta(xi, xj) * gi * gj);
        for (int l = 0; l < m; ++l) {
          if (l != i && l != j) q2 *= g.value(x[static_cast<std::size_t>(l)]);
        }
        acc += q2;
      }
    }
    return acc;
  };
  act.sub = [](std::span<const double>) { return 0.0; };
  return act;
}

inline DualAction dual_apply(const RankOneCoefficient& coeff, const DualModel& model) {
  return dual_apply(coeff.order, coeff.g, model);
}

}  // namespace mvhjm
