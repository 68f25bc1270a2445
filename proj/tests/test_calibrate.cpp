#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mvhjm/calibrate.hpp"
#include "mvhjm/contracts.hpp"
#include "mvhjm/measures.hpp"

using namespace mvhjm;
using Catch::Approx;

namespace {

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "mvhjm_calibrate_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string write_file(const std::string& name, const std::string& content) {
  const auto path = temp_dir() / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

std::string flat_daily_curve_csv(double level, int days = 71) {
  std::string s = "date,value\n";
  // 2022-03-22 plus consecutive days; spans March, April, May.
  const int month_len[3] = {31, 30, 31};
  int month = 0, day = 22;
  const int months[3] = {3, 4, 5};
  for (int i = 0; i < days; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "2022-%02d-%02d,%.6f\n", months[month], day, level);
    s += buf;
    if (++day > month_len[month]) {
      day = 1;
      ++month;
    }
  }
  return s;
}

/// Synthetic recovery fixture: a single-atom curve with unit-width delivery
/// keeps the parameter scale O(1).
struct RecoverySetup {
  MarketDataset data;
  AlphaFunction truth;
  CalibrationConfig cfg;
};

RecoverySetup make_recovery_setup(double true_level, double slope) {
  const double horizon = 2.0;
  const FutureContract contract(1.0, 2.0);
  const double exercise = 0.01;
  MarketDataset d;
  d.day_ahead_price = 1.0;
  d.contract = contract;
  d.exercise = exercise;
  d.forward_curve = DiscreteMeasure(horizon, {{1.5, 1.0}});
  AlphaFunction truth = AlphaFunction::piecewise_linear(
      horizon, {0.0, 1.0, 2.0}, {true_level, true_level + slope, true_level});
  CalibrationConfig cfg;
  cfg.max_iters = 500;
  cfg.learning_rate = 0.01;
  const auto legs = make_delivery_legs(d.forward_curve, contract, exercise, truth);
  std::vector<double> strikes;
  for (int i = 0; i < 10; ++i) strikes.push_back(0.9 + 0.2 * i / 9.0);
  std::vector<double> prices(strikes.size());
  fourier_prices_core(legs, strikes, cfg.damping, cfg.fourier, prices);
  for (std::size_t i = 0; i < strikes.size(); ++i) d.quotes.push_back({strikes[i], prices[i]});
  return {std::move(d), std::move(truth), cfg};
}

}  // namespace

TEST_CASE("load_market_csv: normalization to a level-1 curve") {
  const std::string curve = write_file("curve_flat.csv", flat_daily_curve_csv(236.49));
  const std::string quotes = write_file("quotes_ok.csv",
                                        "strike,price\n0.9,0.09\n1.0,0.02\n1.1,0.005\n");
  const MarketDataset d = load_market_csv(curve, quotes, 236.49);
  CHECK(d.forward_curve.size() == 71);
  for (const Atom& a : d.forward_curve.atoms()) {
    CHECK(a.weight == Approx(1.0 / 365.0));
  }
  // A flat level-1 curve prices the one-month future near 1.
  const double f = future_price(d.forward_curve, 0.0, d.contract);
  CHECK(f == Approx(1.0).epsilon(0.02));
  CHECK_FALSE(d.strikes_rescaled);
  CHECK(d.quotes.front().price == Approx(0.09 / 236.49));
}

TEST_CASE("load_market_csv: strike rescaling heuristic") {
  const std::string curve = write_file("curve_flat2.csv", flat_daily_curve_csv(236.49));
  const std::string quotes = write_file(
      "quotes_raw.csv", "strike,price\n215,21.0\n236.49,9.5\n260,2.4\n");
  const MarketDataset d = load_market_csv(curve, quotes, 236.49);
  CHECK(d.strikes_rescaled);
  CHECK(d.quotes[1].strike == Approx(1.0));
}

TEST_CASE("load_market_csv: error paths") {
  const std::string curve = write_file("curve_flat3.csv", flat_daily_curve_csv(100.0));
  const std::string empty_quotes = write_file("quotes_empty.csv", "strike,price\n");
  CHECK_THROWS_AS(load_market_csv(curve, empty_quotes, 100.0), DataError);

  const std::string neg_quotes = write_file("quotes_neg.csv", "strike,price\n1.0,-0.5\n");
  CHECK_THROWS_AS(load_market_csv(curve, neg_quotes, 100.0), DataError);

  const std::string malformed = write_file("quotes_bad.csv", "strike,price\n1.0,zebra\n");
  CHECK_THROWS_AS(load_market_csv(curve, malformed, 100.0), ParseError);

  const std::string bad_header = write_file("curve_bad.csv", "a,b\n0.0,1.0\n");
  CHECK_THROWS_AS(load_market_csv(bad_header, malformed, 100.0), ParseError);

  CHECK_THROWS_AS(load_market_csv(curve, empty_quotes, -1.0), DataError);
}

TEST_CASE("l1_loss") {
  const std::vector<double> a{0.1, 0.2, 0.3};
  CHECK(l1_loss(a, a) == 0.0);
  const std::vector<double> b{0.1, 0.21, 0.3};
  CHECK(l1_loss(a, b) == Approx(0.01));
  std::vector<double> mkt(10), mdl(10);
  for (int i = 0; i < 10; ++i) {
    mkt[static_cast<std::size_t>(i)] = 0.05 + 0.001 * i;
    mdl[static_cast<std::size_t>(i)] = mkt[static_cast<std::size_t>(i)] +
                                       ((i % 2) ? 0.00096 : -0.00096);
  }
  CHECK(l1_loss(mdl, mkt) == Approx(0.0096));  // mean absolute error 0.00096
  const std::vector<double> wrong{0.1};
  CHECK_THROWS_AS(l1_loss(a, wrong), ShapeError);
}

TEST_CASE("price_vector: deterministic limit and monotonicity") {
  RecoverySetup setup = make_recovery_setup(0.0, 0.0);  // alpha* = 0
  // The near-deterministic integrand needs a wider lambda window.
  setup.cfg.fourier = FourierConfig(1.0, -2000.0, 2000.0, 80001);
  const double f = future_price(setup.data.forward_curve, 0.0, setup.data.contract);
  const AlphaFunction tiny = AlphaFunction::constant(2.0, 1e-9);
  const auto prices = price_vector(tiny, setup.data, setup.cfg);
  REQUIRE(prices.size() == setup.data.quotes.size());
  for (std::size_t i = 0; i < prices.size(); ++i) {
    const double intrinsic = std::max(f - setup.data.quotes[i].strike, 0.0);
    CHECK(prices[i] == Approx(intrinsic).margin(2e-4));
    if (i > 0) CHECK(prices[i] <= prices[i - 1] + 1e-4);
  }
}

TEST_CASE("price_vector: zero strike appended recovers the forward") {
  RecoverySetup setup = make_recovery_setup(0.09, 0.0);
  MarketDataset with_zero = setup.data;
  with_zero.quotes.insert(with_zero.quotes.begin(), Quote{0.0, 1.0});
  const AlphaFunction a = AlphaFunction::constant(2.0, 0.09);
  const auto prices = price_vector(a, with_zero, setup.cfg);
  const double f = future_price(setup.data.forward_curve, 0.0, setup.data.contract);
  CHECK(prices.front() == Approx(f).epsilon(1e-4));
}

TEST_CASE("calibration report exposes the mean abs/rel/sq error triple") {
  // Format fixture: per-strike absolute errors pinned at 0.00096 so the
  // report fields can be checked against hand-computed means.
  RecoverySetup setup = make_recovery_setup(0.09, 0.0);
  MarketDataset shifted = setup.data;
  for (auto& q : shifted.quotes) q.price += 0.00096;
  setup.cfg.max_iters = 1;
  setup.cfg.learning_rate = 1e-12;  // hold the parameters at the truth
  const auto result = calibrate(shifted, setup.truth, setup.cfg);
  CHECK(result.mean_abs_error == Approx(0.00096).epsilon(1e-9));
  double rel = 0.0, sq = 0.0;
  for (const auto& q : shifted.quotes) rel += 0.00096 / q.price;
  rel /= static_cast<double>(shifted.quotes.size());
  sq = 0.00096 * 0.00096;
  CHECK(result.mean_rel_error == Approx(rel).epsilon(1e-9));
  CHECK(result.mean_sq_error == Approx(sq).epsilon(1e-9));
  REQUIRE(result.errors.size() == 10);
  for (const auto& row : result.errors) CHECK(row.abs_err == Approx(0.00096).epsilon(1e-9));
}

TEST_CASE("gradient check: finite differences vs backprop") {
  RecoverySetup setup = make_recovery_setup(0.09, 0.02);
  // Evaluate at parameters away from the optimum so no |.| kink is crossed.
  const AlphaFunction base = AlphaFunction::neural(MLPAlpha::near_constant(2.0, 4, 0.07, 5));
  const std::vector<double> params = base.parameters();
  std::vector<double> g_bp(params.size()), g_fd(params.size());
  // h small enough that relu kink crossings inside the network (an O(h)
  // effect on the central difference) stay below the comparison tolerance.
  const double loss_bp =
      loss_gradient_backprop(base, params, setup.data, setup.cfg, g_bp);
  const double loss_fd =
      loss_gradient_fd(base, params, setup.data, setup.cfg, 1e-6, g_fd);
  CHECK(loss_bp == Approx(loss_fd).epsilon(1e-12));
  double n_bp = 0.0, n_fd = 0.0, diff = 0.0;
  for (std::size_t j = 0; j < params.size(); ++j) {
    n_bp += g_bp[j] * g_bp[j];
    n_fd += g_fd[j] * g_fd[j];
    diff += (g_bp[j] - g_fd[j]) * (g_bp[j] - g_fd[j]);
  }
  n_bp = std::sqrt(n_bp);
  n_fd = std::sqrt(n_fd);
  diff = std::sqrt(diff);
  CHECK(n_bp > 0.0);
  CHECK(diff <= 1e-4 * std::max(n_bp, n_fd));

  // Same check for the grid representation.
  const AlphaFunction grid_base =
      AlphaFunction::piecewise_linear(2.0, {0.0, 0.7, 1.4, 2.0}, {0.08, 0.1, 0.07, 0.09});
  const std::vector<double> gp = grid_base.parameters();
  std::vector<double> gg_bp(gp.size()), gg_fd(gp.size());
  loss_gradient_backprop(grid_base, gp, setup.data, setup.cfg, gg_bp);
  loss_gradient_fd(grid_base, gp, setup.data, setup.cfg, 1e-6, gg_fd);
  for (std::size_t j = 0; j < gp.size(); ++j) {
    CHECK(gg_bp[j] == Approx(gg_fd[j]).margin(1e-6).epsilon(1e-4));
  }
}

TEST_CASE("calibrate: already-optimal initialization stops at zero loss") {
  RecoverySetup setup = make_recovery_setup(0.09, 0.0);
  setup.cfg.max_iters = 50;
  const auto result = calibrate(setup.data, setup.truth, setup.cfg);
  CHECK(result.loss_trace.front() == 0.0);
  CHECK(result.best_iteration == 0);
  CHECK(result.mean_abs_error == 0.0);
}

TEST_CASE("calibrate: synthetic recovery with a grid alpha") {
  RecoverySetup setup = make_recovery_setup(0.09, 0.02);
  const AlphaFunction init = AlphaFunction::piecewise_linear(
      2.0, {0.0, 1.0, 2.0}, {0.075, 0.095, 0.075});
  const auto result = calibrate(setup.data, init, setup.cfg);
  INFO("final MAE " << result.mean_abs_error << " best at " << result.best_iteration);
  CHECK(result.mean_abs_error <= 1e-4);
  CHECK(result.loss_trace.size() <= 501 + 1);
  for (double l : result.loss_trace) CHECK(std::isfinite(l));
  // Fitted alpha stays non-negative.
  for (int i = 0; i <= 40; ++i) {
    CHECK(result.fitted.eval(2.0 * i / 40.0) >= 0.0);
  }
  // Genuine descent, not just a good start.
  CHECK(result.mean_abs_error < 0.2 * result.loss_trace.front() / 10.0);
}

TEST_CASE("calibrate: deterministic given seed, config and data") {
  RecoverySetup setup = make_recovery_setup(0.09, 0.02);
  setup.cfg.max_iters = 40;
  const AlphaFunction init =
      AlphaFunction::neural(MLPAlpha::near_constant(2.0, 8, 0.08, setup.cfg.seed));
  const auto r1 = calibrate(setup.data, init, setup.cfg);
  const auto r2 = calibrate(setup.data, init, setup.cfg);
  REQUIRE(r1.loss_trace.size() == r2.loss_trace.size());
  for (std::size_t i = 0; i < r1.loss_trace.size(); ++i) {
    CHECK(r1.loss_trace[i] == r2.loss_trace[i]);
  }
  CHECK(r1.mean_abs_error == r2.mean_abs_error);
}

TEST_CASE("calibrate: divergence is reported") {
  RecoverySetup setup = make_recovery_setup(0.09, 0.02);
  setup.cfg.learning_rate = 1e9;
  setup.cfg.max_iters = 50;
  setup.cfg.clip_norm = 0.0;
  const AlphaFunction init =
      AlphaFunction::neural(MLPAlpha::near_constant(2.0, 8, 0.08, 3));
  CHECK_THROWS_AS(calibrate(setup.data, init, setup.cfg), DivergenceError);
}
