#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvhjm/contracts.hpp"
#include "mvhjm/errors.hpp"
#include "mvhjm/measures.hpp"
#include "mvhjm/models.hpp"

namespace mvhjm {

/// psi_t(x) = g((x-t)^+) / (1 - g((x-t)^+) * 1/2 int_0^t alpha((x-s)^+) ds).
/// g may be real- or complex-valued; the denominator must stay away from 0.
template <class G>
auto riccati_psi(const G& g, const AlphaFunction& alpha, double t, double x)
    -> decltype(g(0.0)) {
  using Scalar = decltype(g(0.0));
  const double xs = std::max(x - t, 0.0);
  const Scalar g0 = g(xs);
  const double half_int = 0.5 * alpha.transported_integral(x, t);
  const Scalar den = Scalar(1.0) - g0 * half_int;
  if (std::abs(den) <= 1e-10)
    throw RiccatiBlowup("riccati_psi: denominator vanished at (t, x) = (" + std::to_string(t) +
                        ", " + std::to_string(x) + ")");
  return g0 / den;
}

/// Closed-form Riccati solution as an evaluable object; equals g at t = 0.
template <class Scalar>
class BasicRiccatiSolution {
 public:
  using Fn = std::function<Scalar(double)>;

  BasicRiccatiSolution(Fn g, AlphaFunction alpha)
      : g_(std::move(g)), alpha_(std::move(alpha)) {}

  Scalar operator()(double t, double x) const { return riccati_psi(g_, alpha_, t, x); }
  const AlphaFunction& alpha() const { return alpha_; }

 private:
  Fn g_;
  AlphaFunction alpha_;
};

using RiccatiSolution = BasicRiccatiSolution<double>;
using ComplexRiccatiSolution = BasicRiccatiSolution<std::complex<double>>;

/// E[exp(<g, mu_{s+dt}>) | mu_s] = exp(<psi_dt, mu_s>).
template <class G>
auto laplace_transform(const DiscreteMeasure& mu_s, const G& g, const AlphaFunction& alpha,
                       double dt) -> decltype(g(0.0)) {
  using Scalar = decltype(g(0.0));
  Scalar acc(0.0);
  for (const Atom& a : mu_s.atoms()) acc += a.weight * riccati_psi(g, alpha, dt, a.location);
  return std::exp(acc);
}

/// Quadrature grid for the damped Fourier integral; symmetric about 0.
struct FourierConfig {
  double damping = 1.0;
  double lambda_min = -100.0;
  double lambda_max = 100.0;
  int n_lambda = 4001;

  FourierConfig() = default;
  FourierConfig(double C, double lmin, double lmax, int n)
      : damping(C), lambda_min(lmin), lambda_max(lmax), n_lambda(n) {
    validate();
  }

  void validate() const {
    if (!(damping > 0.0)) throw DomainError("FourierConfig: damping must be > 0");
    if (n_lambda < 2) throw DomainError("FourierConfig: n_lambda must be >= 2");
    if (std::abs(lambda_min + lambda_max) > 1e-9 * std::max(1.0, std::abs(lambda_max)))
      throw DomainError("FourierConfig: lambda grid must be symmetric about 0");
    if (!(lambda_max > 0.0)) throw DomainError("FourierConfig: lambda_max must be > 0");
  }
};

struct FourierDiagnostics {
  double imag_residual = 0.0;
  bool quadrature_warning = false;
};

/// psi at exercise for the damped payoff transform:
///   2 z w(x) / (2 - z w(x) (A(x) - A(x - tau)))  on (tau1, tau2], else 0,
/// with z = damping + i lambda.
inline std::complex<double> psi_fourier_damped(double lambda, double damping, double tau,
                                               const FutureContract& c,
                                               const AlphaFunction& alpha, double x) {
  if (!c.in_delivery(x)) return {0.0, 0.0};
  const std::complex<double> z(damping, lambda);
  const double w = c.weight(x);
  const double dA = alpha.transported_integral(x, tau);
  const std::complex<double> den = 2.0 - z * w * dA;
  if (std::abs(den) <= 1e-10) throw RiccatiBlowup("psi_fourier: denominator vanished");
  return 2.0 * z * w / den;
}

inline std::complex<double> psi_fourier(double lambda, const OptionSpec& spec,
                                        const FutureContract& c, const AlphaFunction& alpha,
                                        double x) {
  if (!std::isfinite(x) || x < 0.0 || x > alpha.horizon())
    throw DomainError("psi_fourier: x outside [0, horizon]");
  return psi_fourier_damped(lambda, spec.damping, spec.exercise, c, alpha, x);
}

/// One delivery-window atom prepared for pricing.
struct DeliveryLeg {
  double atom_weight;  // weight of the atom in mu_0
  double wfun;         // contract weight w(x)
  double delta_A;      // int_0^tau alpha((x - s)^+) ds
  double x;            // atom location (= maturity, at t = 0)
};

inline std::vector<DeliveryLeg> make_delivery_legs(const DiscreteMeasure& mu0,
                                                   const FutureContract& c, double tau,
                                                   const AlphaFunction& alpha) {
  std::vector<DeliveryLeg> legs;
  for (const Atom& a : mu0.atoms()) {
    if (!c.in_delivery(a.location)) continue;
    legs.push_back({a.weight, c.weight(a.location), alpha.transported_integral(a.location, tau),
                    a.location});
  }
  return legs;
}

/// Damped-Fourier prices for several strikes sharing one lambda grid.
/// The integrand is theta_hat(lambda) exp(sum_i w_i psi_i) with
/// theta_hat = exp(-z K) / (2 pi z^2); trapezoid over [lambda_min, lambda_max].
/// Positive damping prices calls, negative damping prices puts.
/// When grad is non-null it receives d price_k / d delta_A_i, size
/// strikes.size() * legs.size(), row-major by strike.
inline void fourier_prices_core(std::span<const DeliveryLeg> legs, std::span<const double> strikes,
                                double damping, const FourierConfig& cfg,
                                std::span<double> prices, FourierDiagnostics* diag = nullptr,
                                std::vector<double>* grad = nullptr) {
  if (prices.size() != strikes.size())
    throw ShapeError("fourier_prices_core: price buffer size mismatch");
  if (damping == 0.0 || !std::isfinite(damping))
    throw DomainError("fourier_prices_core: damping must be nonzero");
  // Exponential-moment validity: C w(x) (A(x) - A(x - tau)) / 2 < 1 - 1e-6.
  for (const DeliveryLeg& leg : legs) {
    if (damping * leg.wfun * 0.5 * leg.delta_A >= 1.0 - 1e-6)
      throw DampingTooLarge("fourier price: damping violates the exponential moment bound at x = " +
                            std::to_string(leg.x));
  }
  const std::size_t nk = strikes.size();
  const std::size_t nl = legs.size();
  if (grad) grad->assign(nk * nl, 0.0);
  const int n = cfg.n_lambda;
  const double h = (cfg.lambda_max - cfg.lambda_min) / (n - 1);
  std::vector<std::complex<double>> acc(nk, {0.0, 0.0});
  std::vector<std::complex<double>> psi(nl);
  const double two_pi = 2.0 * M_PI;
  for (int j = 0; j < n; ++j) {
    const double lambda = cfg.lambda_min + h * j;
    const std::complex<double> z(damping, lambda);
    std::complex<double> S(0.0, 0.0);
    for (std::size_t i = 0; i < nl; ++i) {
      const std::complex<double> den = 2.0 - z * legs[i].wfun * legs[i].delta_A;
      if (std::abs(den) <= 1e-10) throw RiccatiBlowup("fourier price: psi denominator vanished");
      psi[i] = 2.0 * z * legs[i].wfun / den;
      S += legs[i].atom_weight * psi[i];
    }
    const double tw = (j == 0 || j == n - 1) ? 0.5 * h : h;
    const std::complex<double> base = std::exp(S) / (two_pi * z * z);
    for (std::size_t k = 0; k < nk; ++k) {
      const std::complex<double> e = base * std::exp(-z * strikes[k]);
      acc[k] += tw * e;
      if (grad) {
        for (std::size_t i = 0; i < nl; ++i) {
          // d psi / d delta_A = psi^2 / 2
          (*grad)[k * nl + i] +=
              tw * (e * legs[i].atom_weight * 0.5 * psi[i] * psi[i]).real();
        }
      }
    }
  }
  double worst_resid = 0.0;
  for (std::size_t k = 0; k < nk; ++k) {
    const double re = acc[k].real();
    const double im = std::abs(acc[k].imag());
    worst_resid = std::max(worst_resid, im / (1.0 + std::abs(re)));
    prices[k] = std::max(re, 0.0);
    if (grad && re <= 0.0) {
      // the floor is active: the returned price has zero slope
      for (std::size_t i = 0; i < nl; ++i) (*grad)[k * nl + i] = 0.0;
    }
  }
  if (diag) {
    diag->imag_residual = worst_resid;
    diag->quadrature_warning = worst_resid > 1e-6;
  }
}

/// Call price by damped Fourier inversion; returns the real part floored at 0.
inline double fourier_call_price(const DiscreteMeasure& mu0, const FutureContract& c,
                                 const OptionSpec& spec, const AlphaFunction& alpha,
                                 const FourierConfig& cfg, FourierDiagnostics* diag = nullptr) {
  cfg.validate();
  spec.require_exercisable(c);
  const auto legs = make_delivery_legs(mu0, c, spec.exercise, alpha);
  double price = 0.0;
  const double K = spec.strike;
  fourier_prices_core(legs, {&K, 1}, spec.damping, cfg, {&price, 1}, diag);
  return price;
}

/// Put price via a second run with negative damping -C (the validity bound is
/// then automatic since forwards are non-negative).
inline double fourier_put_price(const DiscreteMeasure& mu0, const FutureContract& c,
                                const OptionSpec& spec, const AlphaFunction& alpha,
                                const FourierConfig& cfg, FourierDiagnostics* diag = nullptr) {
  cfg.validate();
  spec.require_exercisable(c);
  const auto legs = make_delivery_legs(mu0, c, spec.exercise, alpha);
  double price = 0.0;
  const double K = spec.strike;
  fourier_prices_core(legs, {&K, 1}, -spec.damping, cfg, {&price, 1}, diag);
  return price;
}

}  // namespace mvhjm
