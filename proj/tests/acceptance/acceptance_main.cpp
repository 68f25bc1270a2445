// Acceptance suite: one line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mvhjm/calibrate.hpp"
#include "mvhjm/contracts.hpp"
#include "mvhjm/measures.hpp"
#include "mvhjm/moments.hpp"
#include "mvhjm/riccati.hpp"
#include "mvhjm/simulate.hpp"

using namespace mvhjm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct MeanSe {
  double mean;
  double se;
};

MeanSe mean_se(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(v.size() - 1);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

TestFunction square_fn() {
  return TestFunction::d1([](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

TestFunction one_fn() {
  return TestFunction::d1([](double) { return 1.0; }, [](double) { return 0.0; });
}

TestFunction cos_fn() {
  return TestFunction::d1([](double x) { return std::cos(2.0 * x); },
                          [](double x) { return -2.0 * std::sin(2.0 * x); });
}

TestFunction quad_plus_one_fn() {
  return TestFunction::d1([](double x) { return 1.0 + x * x; }, [](double x) { return 2.0 * x; });
}

DiscreteMeasure flat_daily_curve(int days = 71) {
  std::vector<Atom> atoms;
  for (int i = 0; i < days; ++i) atoms.push_back({i / 365.0, 1.0 / 365.0});
  return DiscreteMeasure(1.0, atoms);
}

const double kTau1 = 1.33 / 12.0;
const double kTau2 = 2.33 / 12.0;
const double kExercise = 35.0 / 365.0;

// ---------------------------------------------------------------------------
// 1. Riccati PDE residual <= 1e-6 on a 50x50 grid away from the kink x = t.
Outcome criterion_riccati_residual() {
  const AlphaFunction a0 = AlphaFunction::constant(1.0, 0.0);
  const AlphaFunction a2 = AlphaFunction::constant(1.0, 2.0);
  const AlphaFunction apwl = AlphaFunction::piecewise_linear(
      1.0, {0.0, 0.25, 0.5, 0.75, 1.0}, {1.0, 2.0, 0.5, 1.5, 1.0});
  const std::function<double(double)> gs[2] = {[](double) { return -1.0; },
                                               [](double x) { return -(x * x + 1.0); }};
  const double h = 1e-4;
  double worst = 0.0;
  int points = 0;
  for (const AlphaFunction* a : {&a0, &a2, &apwl}) {
    for (const auto& g : gs) {
      for (int i = 0; i < 50; ++i) {
        for (int j = 0; j < 50; ++j) {
          const double t = 0.0103 + (0.9871 - 0.0103) * i / 49.0;
          const double x = 0.0117 + (0.9843 - 0.0117) * j / 49.0;
          if (std::abs(x - t) < 0.04) continue;
          const double dpsi_dt =
              (riccati_psi(g, *a, t + h, x) - riccati_psi(g, *a, t - h, x)) / (2.0 * h);
          const double dpsi_dx =
              (riccati_psi(g, *a, t, x + h) - riccati_psi(g, *a, t, x - h)) / (2.0 * h);
          const double psi = riccati_psi(g, *a, t, x);
          worst = std::max(worst, std::abs(dpsi_dt + dpsi_dx - 0.5 * a->eval(x) * psi * psi));
          ++points;
        }
      }
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max residual %.3e over %d points (tol 1e-6)", worst, points);
  return {worst <= 1e-6, buf};
}

// ---------------------------------------------------------------------------
// 2. Laplace matching: empirical E[exp<g, mu_t>] vs exp<psi_t, mu_0>, 1e5 paths.
Outcome criterion_laplace_matching() {
  const DiscreteMeasure mu0(1.0, {{0.5, 1.0}, {0.8, 0.5}});
  struct Combo {
    std::function<double(double)> g;
    double t;
    AlphaFunction alpha;
    const char* name;
  };
  const std::vector<Combo> combos = {
      {[](double) { return -0.5; }, 0.3, AlphaFunction::constant(1.0, 2.0), "g=-0.5,a=2"},
      {[](double x) { return -(1.0 + x * x); }, 0.5,
       AlphaFunction::piecewise_linear(1.0, {0.0, 0.5, 1.0}, {0.6, 2.2, 0.4}), "g=-(1+x^2),pwl"},
      {[](double) { return -1.0; }, 0.25, AlphaFunction::constant(1.0, 0.5), "g=-1,a=0.5"},
  };
  const int n = 100000;
  std::string detail;
  bool pass = true;
  int combo_idx = 0;
  for (const Combo& c : combos) {
    const double closed = laplace_transform(mu0, c.g, c.alpha, c.t);
    const PathGrid grid = PathGrid::uniform(c.t, 4);
    std::vector<double> vals(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), 4, [&](std::size_t p) {
      auto rng = make_rng(9000 + static_cast<std::uint64_t>(combo_idx), RngStream::AffinePath, p);
      const MeasurePath path = simulate_affine_path(mu0, grid, c.alpha, rng);
      vals[p] = std::exp(pair_with(c.g, path.states.back()));
    });
    const auto [m, se] = mean_se(vals);
    const double gap = std::abs(m - closed);
    pass = pass && gap <= 3.0 * se;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s|gap/se=%.2f ", c.name, gap / se);
    detail += buf;
    ++combo_idx;
  }
  return {pass, detail + "(each <= 3)"};
}

// ---------------------------------------------------------------------------
// 3 + 4. Fourier pricing vs Monte Carlo on the one-month contract, and the
// zero-strike identity.
Outcome criterion_fourier_vs_mc() {
  const DiscreteMeasure mu0 = flat_daily_curve();
  const FutureContract contract(kTau1, kTau2);
  const AlphaFunction alpha = AlphaFunction::constant(1.0, 0.004);
  const FourierConfig fc(1.0, -100.0, 100.0, 4001);

  // Only delivery-window atoms enter the payoff: atoms starting outside
  // (tau1, tau2] are transported below tau1 at exercise and the branching is
  // independent across atoms, so they are not simulated.
  std::vector<Atom> delivery;
  for (const Atom& a : mu0.atoms()) {
    if (contract.in_delivery(a.location)) delivery.push_back(a);
  }
  const DiscreteMeasure mu_delivery(1.0, delivery);
  const int n = 1000000;
  std::vector<double> forwards(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), 4, [&](std::size_t p) {
    auto rng = make_rng(4242, RngStream::AffinePath, p);
    const DiscreteMeasure mu_tau = exact_affine_step(mu_delivery, kExercise, alpha, rng);
    forwards[p] = future_price(mu_tau, kExercise, contract);
  });

  bool pass = true;
  std::string detail;
  for (double K : {0.9, 0.95, 1.0, 1.05, 1.1}) {
    const double price =
        fourier_call_price(mu0, contract, OptionSpec(K, kExercise, 1.0), alpha, fc);
    std::vector<double> payoff(forwards.size());
    for (std::size_t i = 0; i < forwards.size(); ++i) payoff[i] = std::max(forwards[i] - K, 0.0);
    const auto [m, se] = mean_se(payoff);
    const double gap = std::abs(price - m);
    const bool ok = gap <= 2.576 * se;  // 99% confidence interval
    pass = pass && ok;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "K=%.2f|gap/se=%.2f ", K, gap / se);
    detail += buf;
  }
  return {pass, detail + "(each <= 2.576)"};
}

Outcome criterion_zero_strike() {
  const DiscreteMeasure mu0 = flat_daily_curve();
  const FutureContract contract(kTau1, kTau2);
  const AlphaFunction alpha = AlphaFunction::constant(1.0, 0.004);
  const double forward = future_price(mu0, 0.0, contract);
  const double price = fourier_call_price(mu0, contract, OptionSpec(0.0, kExercise, 1.0), alpha,
                                          FourierConfig(1.0, -100.0, 100.0, 4001));
  const double rel = std::abs(price - forward) / forward;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "price %.8f vs forward %.8f, rel err %.2e (tol 1e-4)", price,
                forward, rel);
  return {rel <= 1e-4, buf};
}

// ---------------------------------------------------------------------------
// 5. Moment oracles vs Monte Carlo at 1e5 paths.
Outcome criterion_moment_oracles() {
  const DiscreteMeasure mu0(1.0, {{0.45, 1.0}, {0.8, 0.6}});
  const AlphaFunction alpha =
      AlphaFunction::piecewise_linear(1.0, {0.0, 0.5, 1.0}, {1.0, 2.5, 0.5});
  const auto g = quad_plus_one_fn();
  const double t = 0.35;
  const int n = 100000;
  const PathGrid grid = PathGrid::uniform(t, 4);
  std::vector<double> firsts(static_cast<std::size_t>(n)), seconds(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), 4, [&](std::size_t p) {
    auto rng = make_rng(1, RngStream::AffinePath, p);
    const MeasurePath path = simulate_affine_path(mu0, grid, alpha, rng);
    const double v = pair(g, path.states.back());
    firsts[p] = v;
    seconds[p] = v * v;
  });
  const auto [m1, se1] = mean_se(firsts);
  const double z1 = std::abs(m1 - first_moment(mu0, g, t)) / se1;
  const auto [m2, se2] = mean_se(seconds);
  const double z2 = std::abs(m2 - second_moment_affine(mu0, g, alpha, t)) / se2;

  // Mass variance a t m0 for constant alpha.
  const double a = 1.7, tm = 0.45;
  const AlphaFunction ca = AlphaFunction::constant(1.0, a);
  const double m0 = mu0.total_mass();
  std::vector<double> sq(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), 4, [&](std::size_t p) {
    auto rng = make_rng(606, RngStream::AffinePath, p);
    const double mass = exact_affine_step(mu0, tm, ca, rng).total_mass();
    sq[p] = mass * mass;
  });
  const auto [ms, ses] = mean_se(sq);
  const double z3 = std::abs(ms - (m0 * m0 + a * tm * m0)) / ses;

  char buf[128];
  std::snprintf(buf, sizeof(buf), "z(first)=%.2f z(second)=%.2f z(mass var)=%.2f (each <= 3)", z1,
                z2, z3);
  return {z1 <= 3.0 && z2 <= 3.0 && z3 <= 3.0, buf};
}

// ---------------------------------------------------------------------------
// 6. Drift-condition harness: pass for 3 test functions, reject injected drift.
Outcome criterion_drift_test() {
  const DiscreteMeasure mu0(1.0, {{0.7, 1.0}, {0.9, 0.8}});
  const AlphaFunction two = AlphaFunction::constant(1.0, 2.0);
  const PathGrid grid = PathGrid::uniform(0.5, 50);
  const auto paths = simulate_affine_ensemble(mu0, grid, two, 881, 4000, 4);
  const TestFunction phis[3] = {square_fn(), cos_fn(), one_fn()};
  bool pass = true;
  std::string detail;
  for (const auto& phi : phis) {
    const auto report = martingale_drift_test(paths, phi, 0.0);
    pass = pass && report.pass;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "max|z|=%.2f ", report.max_abs_z);
    detail += buf;
  }
  std::vector<MeasurePath> drifted;
  drifted.reserve(paths.size());
  for (const auto& p : paths) {
    MeasurePath out{p.grid, {}};
    for (std::size_t k = 0; k < p.states.size(); ++k) {
      std::vector<Atom> atoms(p.states[k].atoms().begin(), p.states[k].atoms().end());
      const double t = p.grid.times[k];
      if (t > 0.0) atoms.push_back({0.9, 0.1 * t});
      out.states.emplace_back(1.0, std::move(atoms));
    }
    drifted.push_back(std::move(out));
  }
  const auto bad = martingale_drift_test(drifted, square_fn(), 0.0);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "| injected drift max|z|=%.1f (> 4 required)", bad.max_abs_z);
  detail += buf;
  pass = pass && !bad.pass && bad.max_abs_z > 4.0;
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 7. Discrete-time scheme at T = 12.
Outcome criterion_discrete_scheme() {
  const int T = 12;
  const DiscreteHJMConfig cfg(T, 0.0);
  const AlphaFunction alpha = AlphaFunction::piecewise_linear(
      static_cast<double>(T), {0.0, 12.0}, {0.25, 0.55});
  const std::vector<double> mu0(static_cast<std::size_t>(T) + 1, 1.0);
  auto phi = [](int i) { return static_cast<double>(i) * i; };
  auto dphi = [&](int i) { return i > 0 ? phi(i) - phi(i - 1) : 0.0; };
  const int n = 10000;
  std::vector<std::vector<double>> mart(static_cast<std::size_t>(T) + 1,
                                        std::vector<double>(static_cast<std::size_t>(n)));
  std::vector<std::vector<double>> mass(static_cast<std::size_t>(T) + 1,
                                        std::vector<double>(static_cast<std::size_t>(n)));
  parallel_for(static_cast<std::size_t>(n), 4, [&](std::size_t p) {
    auto rng = make_rng(771, RngStream::DiscretePath, p);
    const auto path = discrete_hjm_path(mu0, T, cfg, alpha, rng);
    double compensator = 0.0;
    for (int t = 0; t <= T; ++t) {
      double paired = 0.0, total = 0.0;
      for (int i = 0; i <= T; ++i) {
        paired += phi(i) * path[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
        total += path[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
      }
      if (t > 0) {
        for (int i = 0; i <= T; ++i)
          compensator +=
              dphi(i) * path[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i)];
      }
      mart[static_cast<std::size_t>(t)][p] = paired + compensator;
      mass[static_cast<std::size_t>(t)][p] = total;
    }
  });
  double worst_mart = 0.0, worst_mass = 0.0;
  for (int t = 1; t <= T; ++t) {
    const auto [mm, sem] = mean_se(mart[static_cast<std::size_t>(t)]);
    worst_mart = std::max(worst_mart, std::abs(mm - mart[0][0]) / sem);
    const auto [mq, seq] = mean_se(mass[static_cast<std::size_t>(t)]);
    worst_mass = std::max(worst_mass, std::abs(mq - mass[0][0]) / seq);
  }

  // Exact matrix identity.
  const Eigen::MatrixXd beta = build_beta_matrix(DiscreteHJMConfig(2, 0.0));
  Eigen::Vector3d v(1.0, 2.0, 3.0);
  const Eigen::Vector3d out = (Eigen::Matrix3d::Identity() + beta) * v;
  const bool exact = out(0) == 3.0 && out(1) == 3.0 && out(2) == 0.0;

  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "max z(statistic)=%.2f max z(mass)=%.2f (each <= 3), (I+beta)(1,2,3)=(3,3,0): %s",
                worst_mart, worst_mass, exact ? "exact" : "FAILED");
  return {worst_mart <= 3.0 && worst_mass <= 3.0 && exact, buf};
}

// ---------------------------------------------------------------------------
// 8. Particle estimator vs the dual system.
Outcome criterion_particle_dual() {
  const DiscreteMeasure mu0(1.0, {{0.6, 0.7}, {0.2, 0.5}});
  const auto g = quad_plus_one_fn();
  const double b = 0.8, t = 0.5;
  const BSKernels kernels(1.0, [b](double, double) { return b; });
  const double st = first_moment(mu0, g, t);
  const double expected = std::exp(b * t) * st * st;
  const auto est = particle_moment_bs(mu0, g, 2, t, kernels, 200000, 4141, 4);
  const double z = std::abs(est.estimate - expected) / est.std_error;

  // Generator-level check of the interaction potential convention at m = 2.
  const BSKernels mixed(
      1.0, [](double x, double y) { return 0.5 + 0.3 * x * y; },
      [](double x, double y) { return 0.8 * (x - y) * (x - y); });
  const auto act = dual_apply(2, g, BSDual{&mixed});
  const double z0[2] = {0.4, 0.7};
  const double h0 = g.value(z0[0]) * g.value(z0[1]);
  const double dt = 1e-3;
  const int n = 2000000;
  const double pi_bound = mixed.pi_sup_bound();
  std::vector<double> vals(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), 4, [&](std::size_t p) {
    auto rng = make_rng(5353, RngStream::Particle, p);
    ParticleState ps = simulate_interacting_particles({z0[0], z0[1]}, dt, mixed, rng, pi_bound);
    vals[p] = (std::exp(ps.potential_integral) * g.value(ps.positions[0]) *
                   g.value(ps.positions[1]) -
               h0) /
              dt;
  });
  const auto [m, se] = mean_se(vals);
  const double zgen = std::abs(m - act.top({z0, 2})) / se;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "z(e^{bt} closed form)=%.2f z(generator)=%.2f (each <= 3)", z,
                zgen);
  return {z <= 3.0 && zgen <= 3.0, buf};
}

// ---------------------------------------------------------------------------
// 9. Synthetic calibration recovery.
Outcome criterion_calibration_recovery() {
  const double horizon = 2.0;
  MarketDataset d;
  d.day_ahead_price = 1.0;
  d.contract = FutureContract(1.0, 2.0);
  d.exercise = 0.01;
  d.forward_curve = DiscreteMeasure(horizon, {{1.5, 1.0}});
  const AlphaFunction truth = AlphaFunction::piecewise_linear(
      horizon, {0.0, 1.0, 2.0}, {0.09, 0.11, 0.09});
  CalibrationConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.max_iters = 500;
  const auto legs = make_delivery_legs(d.forward_curve, d.contract, d.exercise, truth);
  std::vector<double> strikes;
  for (int i = 0; i < 10; ++i) strikes.push_back(0.9 + 0.2 * i / 9.0);
  std::vector<double> quotes(strikes.size());
  fourier_prices_core(legs, strikes, cfg.damping, cfg.fourier, quotes);
  for (std::size_t i = 0; i < strikes.size(); ++i) d.quotes.push_back({strikes[i], quotes[i]});

  const AlphaFunction init = AlphaFunction::piecewise_linear(
      horizon, {0.0, 1.0, 2.0}, {0.075, 0.095, 0.075});
  const CalibrationResult result = calibrate(d, init, cfg);
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "MAE %.2e after %zu iterations, best at %d (init loss %.2e, tol 1e-4)",
                result.mean_abs_error, result.loss_trace.size() - 1, result.best_iteration,
                result.loss_trace.front());
  return {result.mean_abs_error <= 1e-4 &&
              static_cast<int>(result.loss_trace.size()) - 1 <= 500,
          buf};
}

// ---------------------------------------------------------------------------
// 10. Control variate: strict reduction; zero ratio for the perfect control.
Outcome criterion_control_variate() {
  const DiscreteMeasure mu0 = DiscreteMeasure::dirac(1.0, 0.5, 1.0);
  const AlphaFunction alpha = AlphaFunction::constant(1.0, 0.4);
  const FutureContract c(0.4, 0.6);
  const double tau = 0.2, K = 5.0;  // at the money: F_0 = 5
  const int n = 10000;
  std::vector<double> payoff(static_cast<std::size_t>(n)), poly(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), 4, [&](std::size_t p) {
    auto rng = make_rng(616, RngStream::AffinePath, p);
    const double f = future_price(exact_affine_step(mu0, tau, alpha, rng), tau, c);
    payoff[p] = std::max(f - K, 0.0);
    poly[p] = f;
  });
  const double f0 = future_price(mu0, 0.0, c);
  const auto cv = control_variate_price(payoff, poly, f0);
  const auto perfect = control_variate_price(payoff, payoff, cv.price);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "variance ratio %.4f (< 1), perfect-control ratio %.1e (= 0)",
                cv.variance_ratio, perfect.variance_ratio);
  return {cv.variance_ratio < 1.0 && cv.variance_ratio > 0.0 &&
              std::abs(perfect.variance_ratio) <= 1e-12,
          buf};
}

struct Criterion {
  int number;
  const char* name;
  double time_limit_s;
  std::function<Outcome()> fn;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "riccati-residual", 5.0, criterion_riccati_residual},
      {2, "laplace-matching", 60.0, criterion_laplace_matching},
      {3, "fourier-vs-monte-carlo", 120.0, criterion_fourier_vs_mc},
      {4, "zero-strike-identity", 0.0, criterion_zero_strike},
      {5, "moment-oracles", 0.0, criterion_moment_oracles},
      {6, "drift-condition-test", 60.0, criterion_drift_test},
      {7, "discrete-scheme", 0.0, criterion_discrete_scheme},
      {8, "particle-dual-consistency", 0.0, criterion_particle_dual},
      {9, "calibration-recovery", 600.0, criterion_calibration_recovery},
      {10, "control-variate", 0.0, criterion_control_variate},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.fn();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = outcome.pass;
    std::string note = outcome.detail;
    if (c.time_limit_s > 0.0 && secs > c.time_limit_s) {
      pass = false;
      note += " [exceeded time limit]";
    }
    std::printf("[%s] %2d %-26s %s [%.1fs]\n", pass ? "PASS" : "FAIL", c.number, c.name,
                note.c_str(), secs);
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  if (failures == 0) {
    std::printf("all %zu acceptance criteria passed\n", criteria.size());
  } else {
    std::printf("%d acceptance criteria FAILED\n", failures);
  }
  return failures;
}
