#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mvhjm/contracts.hpp"
#include "mvhjm/errors.hpp"
#include "mvhjm/io.hpp"
#include "mvhjm/measures.hpp"
#include "mvhjm/models.hpp"
#include "mvhjm/riccati.hpp"

namespace mvhjm {

struct Quote {
  double strike;
  double price;
};

/// Market snapshot normalized by the day-ahead price so forwards start near 1.
struct MarketDataset {
  std::string quote_date;
  double day_ahead_price = 0.0;
  DiscreteMeasure forward_curve = DiscreteMeasure::empty(1.0);
  std::vector<Quote> quotes;
  FutureContract contract{1.33 / 12.0, 2.33 / 12.0};
  double exercise = 35.0 / 365.0;
  bool strikes_rescaled = false;

  void validate() const {
    if (!(day_ahead_price > 0.0)) throw DataError("MarketDataset: day-ahead price must be > 0");
    if (quotes.empty()) throw DataError("MarketDataset: no quotes");
    for (std::size_t i = 0; i < quotes.size(); ++i) {
      if (quotes[i].price < 0.0) throw DataError("MarketDataset: negative quote price");
      if (i > 0 && !(quotes[i].strike > quotes[i - 1].strike))
        throw DataError("MarketDataset: strikes must be ascending");
    }
  }
};

/// Loads curve and quote CSVs and normalizes prices by the day-ahead level.
/// Strikes are assumed already normalized when max strike <= 2, otherwise they
/// are divided as well and the heuristic is flagged on the dataset.
inline MarketDataset load_market_csv(const std::string& path_curve, const std::string& path_quotes,
                                     double day_ahead, double horizon = 1.0,
                                     FutureContract contract = FutureContract(1.33 / 12.0,
                                                                              2.33 / 12.0),
                                     double exercise = 35.0 / 365.0) {
  if (!(day_ahead > 0.0)) throw DataError("load_market_csv: day-ahead price must be > 0");
  MarketDataset d;
  d.day_ahead_price = day_ahead;
  d.contract = contract;
  d.exercise = exercise;
  const DiscreteMeasure raw = io::load_forward_curve_csv(path_curve, horizon);
  std::vector<Atom> scaled(raw.atoms().begin(), raw.atoms().end());
  for (Atom& a : scaled) a.weight /= day_ahead;
  d.forward_curve = DiscreteMeasure(horizon, std::move(scaled));
  const auto quotes = io::load_quotes_csv(path_quotes);
  if (quotes.empty()) throw DataError("load_market_csv: quotes file has no rows");
  double max_strike = 0.0;
  for (const auto& q : quotes) max_strike = std::max(max_strike, q.strike);
  d.strikes_rescaled = max_strike > 2.0;
  for (const auto& q : quotes) {
    const double k = d.strikes_rescaled ? q.strike / day_ahead : q.strike;
    d.quotes.push_back({k, q.price / day_ahead});
  }
  std::sort(d.quotes.begin(), d.quotes.end(),
            [](const Quote& a, const Quote& b) { return a.strike < b.strike; });
  d.validate();
  return d;
}

struct FiniteDifferenceMode {
  double h = 1e-4;
};
struct BackpropMode {};

struct CalibrationConfig {
  double learning_rate = 0.01;
  int max_iters = 300;
  std::variant<FiniteDifferenceMode, BackpropMode> grad_mode = BackpropMode{};
  double damping = 1.0;
  FourierConfig fourier{};
  std::uint64_t seed = 0;
  double clip_norm = 10.0;  // <= 0 disables clipping

  void validate() const {
    if (!(learning_rate > 0.0)) throw DomainError("CalibrationConfig: learning_rate must be > 0");
    if (max_iters < 1) throw DomainError("CalibrationConfig: max_iters must be >= 1");
    if (!(damping > 0.0)) throw DomainError("CalibrationConfig: damping must be > 0");
    fourier.validate();
  }
};

/// Model call prices for every quoted strike on the shared lambda grid.
inline std::vector<double> price_vector(const AlphaFunction& alpha, const MarketDataset& d,
                                        const CalibrationConfig& cfg) {
  cfg.validate();
  d.validate();
  const auto legs = make_delivery_legs(d.forward_curve, d.contract, d.exercise, alpha);
  std::vector<double> strikes;
  strikes.reserve(d.quotes.size());
  for (const auto& q : d.quotes) strikes.push_back(q.strike);
  std::vector<double> prices(strikes.size());
  fourier_prices_core(legs, strikes, cfg.damping, cfg.fourier, prices);
  return prices;
}

/// L1 criterion: sum_K |pi_mkt(K) - pi_model(K)|.
inline double l1_loss(std::span<const double> model_prices, std::span<const double> market_prices) {
  if (model_prices.size() != market_prices.size())
    throw ShapeError("l1_loss: price vectors differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < model_prices.size(); ++i)
    acc += std::abs(market_prices[i] - model_prices[i]);
  return acc;
}

struct StrikeErrorRow {
  double strike;
  double market;
  double model;
  double abs_err;
  double rel_err;
  double sq_err;
};

struct CalibrationResult {
  AlphaFunction fitted;
  std::vector<double> loss_trace;
  std::vector<StrikeErrorRow> errors;
  double mean_abs_error = 0.0;
  double mean_rel_error = 0.0;
  double mean_sq_error = 0.0;
  int best_iteration = 0;
  std::vector<double> model_prices;
};

namespace detail {

inline std::vector<double> prices_for_params(const AlphaFunction& base,
                                             std::span<const double> params,
                                             const MarketDataset& d,
                                             const CalibrationConfig& cfg,
                                             std::vector<DeliveryLeg>* legs_out = nullptr,
                                             std::vector<double>* dprice_dDA = nullptr) {
  const AlphaFunction a = base.with_parameters(params);
  const auto legs = make_delivery_legs(d.forward_curve, d.contract, d.exercise, a);
  std::vector<double> strikes;
  strikes.reserve(d.quotes.size());
  for (const auto& q : d.quotes) strikes.push_back(q.strike);
  std::vector<double> prices(strikes.size());
  fourier_prices_core(legs, strikes, cfg.damping, cfg.fourier, prices, nullptr, dprice_dDA);
  if (legs_out) *legs_out = legs;
  return prices;
}

}  // namespace detail

/// L1 loss and its analytic gradient: the Fourier quadrature is differentiated
/// in the per-atom integrals delta_A_i and chained through the cached
/// primitive of alpha. Returns the loss; prices_out receives the model prices.
inline double loss_gradient_backprop(const AlphaFunction& base, std::span<const double> params,
                                     const MarketDataset& d, const CalibrationConfig& cfg,
                                     std::span<double> grad,
                                     std::vector<double>* prices_out = nullptr) {
  if (static_cast<int>(grad.size()) != base.param_count())
    throw ShapeError("loss_gradient_backprop: gradient buffer has wrong length");
  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<DeliveryLeg> legs;
  std::vector<double> dprice_dDA;
  const std::vector<double> prices =
      detail::prices_for_params(base, params, d, cfg, &legs, &dprice_dDA);
  double loss = 0.0;
  for (std::size_t kq = 0; kq < d.quotes.size(); ++kq)
    loss += std::abs(d.quotes[kq].price - prices[kq]);
  const std::size_t nl = legs.size();
  std::vector<std::pair<double, double>> points;
  points.reserve(2 * nl);
  const AlphaFunction a = base.with_parameters(params);
  for (std::size_t i = 0; i < nl; ++i) {
    double s = 0.0;
    for (std::size_t kq = 0; kq < d.quotes.size(); ++kq) {
      const double e = d.quotes[kq].price - prices[kq];
      const double sign = e > 0.0 ? -1.0 : (e < 0.0 ? 1.0 : 0.0);
      s += sign * dprice_dDA[kq * nl + i];
    }
    if (s == 0.0) continue;
    points.emplace_back(legs[i].x, s);
    points.emplace_back(legs[i].x - d.exercise, -s);
  }
  a.accumulate_primitive_grad(points, grad);
  if (prices_out) *prices_out = prices;
  return loss;
}

/// Central-difference gradient of the L1 loss, h per parameter.
inline double loss_gradient_fd(const AlphaFunction& base, std::span<const double> params,
                               const MarketDataset& d, const CalibrationConfig& cfg, double h,
                               std::span<double> grad,
                               std::vector<double>* prices_out = nullptr) {
  if (static_cast<int>(grad.size()) != base.param_count())
    throw ShapeError("loss_gradient_fd: gradient buffer has wrong length");
  std::vector<double> market;
  market.reserve(d.quotes.size());
  for (const auto& q : d.quotes) market.push_back(q.price);
  const std::vector<double> prices = detail::prices_for_params(base, params, d, cfg);
  const double loss = l1_loss(prices, market);
  std::vector<double> bumped(params.begin(), params.end());
  for (std::size_t j = 0; j < bumped.size(); ++j) {
    const double old = bumped[j];
    bumped[j] = old + h;
    const double lp = l1_loss(detail::prices_for_params(base, bumped, d, cfg), market);
    bumped[j] = old - h;
    const double lm = l1_loss(detail::prices_for_params(base, bumped, d, cfg), market);
    bumped[j] = old;
    grad[j] = (lp - lm) / (2.0 * h);
  }
  if (prices_out) *prices_out = prices;
  return loss;
}

/// Plain gradient descent on the L1 criterion with a fixed learning rate.
/// FiniteDifference mode uses central differences per parameter; Backprop mode
/// differentiates the Fourier quadrature analytically and chains through the
/// cached primitive of alpha. Returns the best iterate seen.
inline CalibrationResult calibrate(const MarketDataset& d, const AlphaFunction& init,
                                   const CalibrationConfig& cfg) {
  cfg.validate();
  d.validate();
  std::vector<double> params = init.parameters();
  std::vector<double> best_params = params;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_iter = 0;
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.max_iters) + 1);
  const int P = init.param_count();
  std::vector<double> grad(static_cast<std::size_t>(P));
  const bool use_backprop = std::holds_alternative<BackpropMode>(cfg.grad_mode);
  const double fd_h = use_backprop ? 0.0 : std::get<FiniteDifferenceMode>(cfg.grad_mode).h;

  for (int it = 0; it <= cfg.max_iters; ++it) {
    double loss;
    try {
      loss = use_backprop ? loss_gradient_backprop(init, params, d, cfg, grad)
                          : loss_gradient_fd(init, params, d, cfg, fd_h, grad);
    } catch (const Error& e) {
      if (it == 0) throw;  // the initialization itself is not priceable
      throw DivergenceError(std::string("calibrate: pricing failed during descent (") +
                            e.what() + "); try another initialization");
    }
    if (!std::isfinite(loss))
      throw DivergenceError("calibrate: non-finite loss; try another initialization");
    trace.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_params = params;
      best_iter = it;
    }
    if (it == cfg.max_iters || loss == 0.0) break;

    if (cfg.clip_norm > 0.0) {
      double norm = 0.0;
      for (double gj : grad) norm += gj * gj;
      norm = std::sqrt(norm);
      if (norm > cfg.clip_norm) {
        const double s = cfg.clip_norm / norm;
        for (double& gj : grad) gj *= s;
      }
    }
    for (int j = 0; j < P; ++j)
      params[static_cast<std::size_t>(j)] -= cfg.learning_rate * grad[static_cast<std::size_t>(j)];
  }

  CalibrationResult result{init.with_parameters(best_params), std::move(trace), {},
                           0.0,  0.0, 0.0, best_iter, {}};
  result.model_prices = detail::prices_for_params(init, best_params, d, cfg);
  for (std::size_t i = 0; i < d.quotes.size(); ++i) {
    const double mkt = d.quotes[i].price;
    const double mod = result.model_prices[i];
    const double abs_err = std::abs(mkt - mod);
    const double rel_err = abs_err / std::max(std::abs(mkt), 1e-12);
    StrikeErrorRow row{d.quotes[i].strike, mkt, mod, abs_err, rel_err, abs_err * abs_err};
    result.mean_abs_error += abs_err;
    result.mean_rel_error += rel_err;
    result.mean_sq_error += row.sq_err;
    result.errors.push_back(row);
  }
  const double nq = static_cast<double>(d.quotes.size());
  result.mean_abs_error /= nq;
  result.mean_rel_error /= nq;
  result.mean_sq_error /= nq;
  return result;
}

}  // namespace mvhjm
