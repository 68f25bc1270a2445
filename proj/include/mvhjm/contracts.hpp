#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>

#include "mvhjm/errors.hpp"
#include "mvhjm/measures.hpp"

namespace mvhjm {

/// Snaps a time to a 1e-12 grid so that membership in (tau1, tau2] is
/// deterministic at floating-point boundaries.
inline double snap_time(double u) { return std::round(u * 1e12) / 1e12; }

/// Delivery-period future over (tau1, tau2] with a weight function w(u).
/// UniformAverage means w = 1 / (tau2 - tau1).
class FutureContract {
 public:
  FutureContract(double tau1, double tau2) : tau1_(tau1), tau2_(tau2) { validate(); }

  FutureContract(double tau1, double tau2, std::function<double(double)> weight)
      : tau1_(tau1), tau2_(tau2), custom_(std::move(weight)) {
    validate();
  }

  double tau1() const { return tau1_; }
  double tau2() const { return tau2_; }
  bool uniform_average() const { return !custom_; }

  double weight(double u) const {
    if (!custom_) return 1.0 / (tau2_ - tau1_);
    const double w = custom_(u);
    if (!std::isfinite(w))
      throw EvaluationError("FutureContract: weight function non-finite at u = " +
                            std::to_string(u));
    return w;
  }

  /// Left-open, right-closed membership of the delivery window, on the snap grid.
  bool in_delivery(double u) const {
    const double us = snap_time(u);
    return us > snap_time(tau1_) && us <= snap_time(tau2_);
  }

 private:
  void validate() const {
    if (!std::isfinite(tau1_) || !std::isfinite(tau2_) || tau1_ < 0.0 || tau1_ >= tau2_)
      throw DomainError("FutureContract: need 0 <= tau1 < tau2");
  }

  double tau1_;
  double tau2_;
  std::function<double(double)> custom_;
};

/// European option on a future: strike, exercise time, Fourier damping.
struct OptionSpec {
  double strike;
  double exercise;
  double damping = 1.0;

  OptionSpec(double K, double tau, double C = 1.0) : strike(K), exercise(tau), damping(C) {
    if (!std::isfinite(K) || K < 0.0) throw DomainError("OptionSpec: strike must be >= 0");
    if (!std::isfinite(tau) || tau < 0.0) throw DomainError("OptionSpec: exercise must be >= 0");
    if (!std::isfinite(C) || C <= 0.0) throw DomainError("OptionSpec: damping must be > 0");
  }

  void require_exercisable(const FutureContract& c) const {
    if (exercise > c.tau1())
      throw DomainError("OptionSpec: exercise must not exceed the contract's tau1");
  }
};

/// F(t, tau1, tau2) = sum_i w(t + x_i) 1_{(tau1,tau2]}(t + x_i) weight_i.
inline double future_price(const DiscreteMeasure& mu, double t, const FutureContract& c) {
  if (t > c.tau1()) throw ContractExpired("future_price: t exceeds tau1");
  double acc = 0.0;
  for (const Atom& a : mu.atoms()) {
    const double u = t + a.location;
    if (c.in_delivery(u)) acc += c.weight(u) * a.weight;
  }
  return acc;
}

/// Discrete-maturity version on E = {0, 1, ..., T}.
inline double future_price_discrete(std::span<const double> mu, int t, int tau1, int tau2,
                                    const std::function<double(int)>& w) {
  const int T = static_cast<int>(mu.size()) - 1;
  if (T < 0) throw DomainError("future_price_discrete: empty state vector");
  if (t < 0 || tau1 < t || tau2 <= tau1 || tau2 > T)
    throw DomainError("future_price_discrete: need 0 <= t <= tau1 < tau2 <= T");
  for (double v : mu) {
    if (!std::isfinite(v) || v < 0.0)
      throw DomainError("future_price_discrete: components must be non-negative");
  }
  double acc = 0.0;
  for (int i = 0; i <= T; ++i) {
    const int u = t + i;
    if (u > tau1 && u <= tau2) acc += w(u) * mu[static_cast<std::size_t>(i)];
  }
  return acc;
}

/// Sums per-period delivery integrals, all taken with the overall contract's
/// weight w(.; tau1, tau_n). Breakpoints must partition (tau1, tau_n].
inline double cumulative_delivery(const DiscreteMeasure& mu, double t,
                                  const FutureContract& overall,
                                  std::span<const double> breakpoints) {
  if (breakpoints.size() < 2) throw PartitionError("cumulative_delivery: need >= 2 breakpoints");
  if (snap_time(breakpoints.front()) != snap_time(overall.tau1()) ||
      snap_time(breakpoints.back()) != snap_time(overall.tau2()))
    throw PartitionError("cumulative_delivery: breakpoints must span (tau1, tau2]");
  for (std::size_t k = 0; k + 1 < breakpoints.size(); ++k) {
    if (!(breakpoints[k] < breakpoints[k + 1]))
      throw PartitionError("cumulative_delivery: breakpoints must be strictly increasing");
  }
  if (t > overall.tau1()) throw ContractExpired("cumulative_delivery: t exceeds tau1");
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < breakpoints.size(); ++k) {
    const double lo = snap_time(breakpoints[k]);
    const double hi = snap_time(breakpoints[k + 1]);
    for (const Atom& a : mu.atoms()) {
      const double u = snap_time(t + a.location);
      if (u > lo && u <= hi) acc += overall.weight(t + a.location) * a.weight;
    }
  }
  return acc;
}

}  // namespace mvhjm
