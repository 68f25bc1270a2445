#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvhjm/errors.hpp"

namespace mvhjm {

/// The state space is the compact interval [0, horizon] of times to maturity.
struct DomainConfig {
  double horizon;

  explicit DomainConfig(double T) : horizon(T) {
    if (!std::isfinite(T) || T <= 0.0) throw DomainError("DomainConfig: horizon must be positive");
  }
};

struct Atom {
  double location;
  double weight;
};

/// Atomic non-negative measure on [0, horizon]. Immutable after construction;
/// duplicate locations are allowed and merged by normalized().
class DiscreteMeasure {
 public:
  DiscreteMeasure(double horizon, std::vector<Atom> atoms)
      : horizon_(horizon), atoms_(std::move(atoms)) {
    if (!std::isfinite(horizon_) || horizon_ <= 0.0)
      throw DomainError("DiscreteMeasure: horizon must be positive");
    for (const Atom& a : atoms_) {
      if (!std::isfinite(a.location) || a.location < 0.0 || a.location > horizon_)
        throw DomainError("DiscreteMeasure: atom location outside [0, horizon]");
      if (!std::isfinite(a.weight) || a.weight < 0.0)
        throw DomainError("DiscreteMeasure: atom weight must be non-negative");
    }
  }

  DiscreteMeasure(const DomainConfig& domain, std::vector<Atom> atoms)
      : DiscreteMeasure(domain.horizon, std::move(atoms)) {}

  static DiscreteMeasure empty(double horizon) { return DiscreteMeasure(horizon, {}); }

  static DiscreteMeasure dirac(double horizon, double location, double weight) {
    return DiscreteMeasure(horizon, {{location, weight}});
  }

  double horizon() const { return horizon_; }
  std::span<const Atom> atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }

  double total_mass() const {
    double m = 0.0;
    for (const Atom& a : atoms_) m += a.weight;
    return m;
  }

  /// Mass of the singleton {0}.
  double mass_at_zero(double tol = 1e-12) const {
    double m = 0.0;
    for (const Atom& a : atoms_) {
      if (a.location <= tol) m += a.weight;
    }
    return m;
  }

  /// Merges atoms whose locations coincide within tol. Total mass unchanged.
  DiscreteMeasure normalized(double tol = 1e-12) const {
    if (atoms_.size() < 2) return *this;
    std::vector<Atom> sorted(atoms_.begin(), atoms_.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const Atom& a, const Atom& b) { return a.location < b.location; });
    std::vector<Atom> merged;
    merged.reserve(sorted.size());
    for (const Atom& a : sorted) {
      if (!merged.empty() && a.location - merged.back().location <= tol) {
        merged.back().weight += a.weight;
      } else {
        merged.push_back(a);
      }
    }
    return DiscreteMeasure(horizon_, std::move(merged));
  }

 private:
  double horizon_;
  std::vector<Atom> atoms_;
};

/// Smooth test function with its derivative. Membership in D1 (vanishing
/// derivative at 0) is certified at construction time; operations that rely
/// on the drift condition reject uncertified functions.
class TestFunction {
 public:
  using Fn = std::function<double(double)>;

  /// Certifies D1 membership by checking |phi'(0)| <= 1e-12.
  static TestFunction d1(Fn value, Fn derivative) {
    const double d0 = derivative(0.0);
    if (!std::isfinite(d0) || std::abs(d0) > 1e-12)
      throw D1Error("TestFunction: derivative at 0 is " + std::to_string(d0) +
                    ", not within 1e-12 of 0");
    return TestFunction(std::move(value), std::move(derivative), true);
  }

  static TestFunction uncertified(Fn value, Fn derivative) {
    return TestFunction(std::move(value), std::move(derivative), false);
  }

  double value(double x) const { return value_(x); }
  double derivative(double x) const { return derivative_(x); }
  double operator()(double x) const { return value_(x); }
  bool certified_d1() const { return certified_; }

  void require_d1(const char* op) const {
    if (!certified_) throw D1Error(std::string(op) + ": test function not certified in D1");
  }

 private:
  TestFunction(Fn value, Fn derivative, bool certified)
      : value_(std::move(value)), derivative_(std::move(derivative)), certified_(certified) {}

  Fn value_;
  Fn derivative_;
  bool certified_;
};

/// <phi, mu> = sum_i w_i phi(x_i).
template <class F>
double pair_with(F&& phi, const DiscreteMeasure& mu) {
  double acc = 0.0;
  for (const Atom& a : mu.atoms()) {
    const double v = phi(a.location);
    if (!std::isfinite(v))
      throw EvaluationError("pair: non-finite function value at atom location " +
                            std::to_string(a.location));
    acc += a.weight * v;
  }
  return acc;
}

inline double pair(const TestFunction& phi, const DiscreteMeasure& mu) {
  return pair_with([&phi](double x) { return phi.value(x); }, mu);
}

/// Transport with absorption: each atom (x, w) |-> ((x - t)^+, w).
inline DiscreteMeasure shift_absorb(const DiscreteMeasure& mu, double t) {
  if (!std::isfinite(t) || t < 0.0 || t > mu.horizon())
    throw DomainError("shift_absorb: t outside [0, horizon]");
  std::vector<Atom> out;
  out.reserve(mu.size());
  for (const Atom& a : mu.atoms()) {
    out.push_back({std::max(a.location - t, 0.0), a.weight});
  }
  return DiscreteMeasure(mu.horizon(), std::move(out));
}

inline double total_mass(const DiscreteMeasure& mu) { return mu.total_mass(); }

/// Spot proxy S = mu((0, tau*]) / tau*; mass exactly at 0 is excluded.
inline double spot_proxy(const DiscreteMeasure& mu, double tau_star) {
  if (!std::isfinite(tau_star) || tau_star <= 0.0 || tau_star > mu.horizon())
    throw DomainError("spot_proxy: tau* must lie in (0, horizon]");
  double m = 0.0;
  for (const Atom& a : mu.atoms()) {
    if (a.location > 0.0 && a.location <= tau_star) m += a.weight;
  }
  return m / tau_star;
}

}  // namespace mvhjm
