#pragma once

#include <Eigen/Dense>
#include <algorithm>
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
#include "mvhjm/rng.hpp"

namespace mvhjm {

/// Three dense layers, activations tanh / relu / relu, scalar input scaled to
/// [0, 1], scalar output. The final relu guarantees a non-negative output.
class MLPAlpha {
 public:
  MLPAlpha(double horizon, int width) : horizon_(horizon), width_(width) {
    if (!(horizon > 0.0)) throw DomainError("MLPAlpha: horizon must be positive");
    if (width < 1) throw DomainError("MLPAlpha: width must be >= 1");
    params_.assign(static_cast<std::size_t>(param_count()), 0.0);
  }

  double horizon() const { return horizon_; }
  int width() const { return width_; }

  /// Layout: W1(w) b1(w) W2(w*w) b2(w) W3(w) b3(1).
  int param_count() const { return width_ * width_ + 4 * width_ + 1; }

  std::span<const double> params() const { return params_; }

  void set_params(std::span<const double> p) {
    if (static_cast<int>(p.size()) != param_count())
      throw ShapeError("MLPAlpha: parameter vector has wrong length");
    params_.assign(p.begin(), p.end());
  }

  double eval(double x) const {
    const int w = width_;
    const double u = x / horizon_;
    const double* P = params_.data();
    const double* W1 = P;
    const double* b1 = P + w;
    const double* W2 = P + 2 * w;
    const double* b2 = P + 2 * w + w * w;
    const double* W3 = P + 3 * w + w * w;
    const double b3 = P[4 * w + w * w];
    double a3 = b3;
    scratch_h1_.resize(static_cast<std::size_t>(w));
    for (int k = 0; k < w; ++k) scratch_h1_[static_cast<std::size_t>(k)] = std::tanh(W1[k] * u + b1[k]);
    for (int j = 0; j < w; ++j) {
      double a2 = b2[j];
      const double* row = W2 + j * w;
      for (int k = 0; k < w; ++k) a2 += row[k] * scratch_h1_[static_cast<std::size_t>(k)];
      a3 += W3[j] * std::max(a2, 0.0);
    }
    return std::max(a3, 0.0);
  }

  /// grad += coeff * d eval(x) / d params. Relu subgradient at 0 is 0.
  void accumulate_output_grad(double x, double coeff, std::span<double> grad) const {
    const int w = width_;
    if (static_cast<int>(grad.size()) != param_count())
      throw ShapeError("MLPAlpha: gradient buffer has wrong length");
    const double u = x / horizon_;
    const double* P = params_.data();
    const double* W1 = P;
    const double* b1 = P + w;
    const double* W2 = P + 2 * w;
    const double* b2 = P + 2 * w + w * w;
    const double* W3 = P + 3 * w + w * w;
    const double b3 = P[4 * w + w * w];

    std::vector<double> h1(static_cast<std::size_t>(w)), a2(static_cast<std::size_t>(w)),
        h2(static_cast<std::size_t>(w));
    double a3 = b3;
    for (int k = 0; k < w; ++k) h1[static_cast<std::size_t>(k)] = std::tanh(W1[k] * u + b1[k]);
    for (int j = 0; j < w; ++j) {
      double s = b2[j];
      const double* row = W2 + j * w;
      for (int k = 0; k < w; ++k) s += row[k] * h1[static_cast<std::size_t>(k)];
      a2[static_cast<std::size_t>(j)] = s;
      h2[static_cast<std::size_t>(j)] = std::max(s, 0.0);
      a3 += W3[j] * h2[static_cast<std::size_t>(j)];
    }
    if (a3 <= 0.0) return;
    const double g3 = coeff;
    double* gW1 = grad.data();
    double* gb1 = grad.data() + w;
    double* gW2 = grad.data() + 2 * w;
    double* gb2 = grad.data() + 2 * w + w * w;
    double* gW3 = grad.data() + 3 * w + w * w;
    double* gb3 = grad.data() + 4 * w + w * w;
    *gb3 += g3;
    std::vector<double> g1(static_cast<std::size_t>(w), 0.0);
    for (int j = 0; j < w; ++j) {
      gW3[j] += g3 * h2[static_cast<std::size_t>(j)];
      if (a2[static_cast<std::size_t>(j)] <= 0.0) continue;
      const double g2 = g3 * W3[j];
      gb2[j] += g2;
      double* row = gW2 + j * w;
      const double* W2row = W2 + j * w;
      for (int k = 0; k < w; ++k) {
        row[k] += g2 * h1[static_cast<std::size_t>(k)];
        g1[static_cast<std::size_t>(k)] += g2 * W2row[k];
      }
    }
    for (int k = 0; k < w; ++k) {
      const double t = h1[static_cast<std::size_t>(k)];
      const double gk = g1[static_cast<std::size_t>(k)] * (1.0 - t * t);
      gW1[k] += gk * u;
      gb1[k] += gk;
    }
  }

  /// Gradient steps on mean squared deviation from target over a uniform grid.
  void pretrain(const std::function<double(double)>& target, int steps, double lr,
                int grid_points = 65) {
    std::vector<double> xs(static_cast<std::size_t>(grid_points));
    for (int i = 0; i < grid_points; ++i)
      xs[static_cast<std::size_t>(i)] = horizon_ * static_cast<double>(i) / (grid_points - 1);
    std::vector<double> grad(static_cast<std::size_t>(param_count()));
    for (int s = 0; s < steps; ++s) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (double x : xs) {
        const double e = eval(x) - target(x);
        accumulate_output_grad(x, 2.0 * e / grid_points, grad);
      }
      for (int i = 0; i < param_count(); ++i)
        params_[static_cast<std::size_t>(i)] -= lr * grad[static_cast<std::size_t>(i)];
    }
  }

  /// Random init with the final bias at alpha0, then a short pretraining pass
  /// toward the constant. Initialization quality matters downstream.
  static MLPAlpha near_constant(double horizon, int width, double alpha0, std::uint64_t seed,
                                int pretrain_steps = 100, double pretrain_lr = 0.2) {
    if (!(alpha0 >= 0.0)) throw DomainError("MLPAlpha: alpha0 must be >= 0");
    MLPAlpha net(horizon, width);
    auto rng = make_rng(seed, RngStream::NetworkInit);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    const int w = width;
    std::vector<double> p(static_cast<std::size_t>(net.param_count()), 0.0);
    double* W1 = p.data();
    double* b1 = p.data() + w;
    double* W2 = p.data() + 2 * w;
    double* b2 = p.data() + 2 * w + w * w;
    double* W3 = p.data() + 3 * w + w * w;
    double* b3 = p.data() + 4 * w + w * w;
    const double out_scale = 0.1 * std::max(alpha0, 0.05) / std::sqrt(static_cast<double>(w));
    for (int k = 0; k < w; ++k) {
      W1[k] = 3.0 * uni(rng);
      b1[k] = 1.5 * uni(rng);
    }
    for (int j = 0; j < w * w; ++j) W2[j] = uni(rng) / std::sqrt(static_cast<double>(w));
    for (int j = 0; j < w; ++j) b2[j] = 0.05;
    for (int j = 0; j < w; ++j) W3[j] = out_scale * uni(rng);
    *b3 = alpha0;
    net.set_params(p);
    if (pretrain_steps > 0)
      net.pretrain([alpha0](double) { return alpha0; }, pretrain_steps, pretrain_lr);
    return net;
  }

 private:
  double horizon_;
  int width_;
  std::vector<double> params_;
  mutable std::vector<double> scratch_h1_;
};

/// Diffusion function alpha >= 0 on [0, T] with its cached primitive A,
/// A(0) = 0. Grid representation interpolates linearly (primitive exact);
/// neural representation caches A by composite Simpson over 2048 panels.
class AlphaFunction {
 public:
  static AlphaFunction piecewise_linear(double horizon, std::vector<double> grid,
                                        std::vector<double> values) {
    AlphaFunction a;
    a.horizon_ = horizon;
    if (!(horizon > 0.0)) throw DomainError("AlphaFunction: horizon must be positive");
    if (grid.size() != values.size() || grid.empty())
      throw ShapeError("AlphaFunction: grid/values size mismatch");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!std::isfinite(grid[i]) || grid[i] < 0.0 || grid[i] > horizon)
        throw DomainError("AlphaFunction: grid point outside [0, horizon]");
      if (i > 0 && !(grid[i] > grid[i - 1]))
        throw DomainError("AlphaFunction: grid must be strictly ascending");
      if (!std::isfinite(values[i]) || values[i] < 0.0)
        throw DomainError("AlphaFunction: values must be non-negative");
    }
    a.grid_ = std::move(grid);
    a.values_ = std::move(values);
    a.build_pwl_primitive();
    return a;
  }

  static AlphaFunction constant(double horizon, double value) {
    return piecewise_linear(horizon, {0.0, horizon}, {value, value});
  }

  static AlphaFunction neural(MLPAlpha net) {
    AlphaFunction a;
    a.horizon_ = net.horizon();
    a.net_ = std::move(net);
    a.build_neural_primitive();
    return a;
  }

  double horizon() const { return horizon_; }
  bool is_neural() const { return net_.has_value(); }
  const MLPAlpha& network() const {
    if (!net_) throw DomainError("AlphaFunction: not a neural representation");
    return *net_;
  }
  std::span<const double> grid() const { return grid_; }
  std::span<const double> values() const { return values_; }

  /// alpha(x), clamped at 0 by construction.
  double eval(double x) const {
    check_domain(x, "AlphaFunction::eval");
    if (net_) return net_->eval(x);
    return pwl_value(x);
  }

  /// A(x) = int_0^x alpha(u) du.
  double primitive(double x) const {
    check_domain(x, "AlphaFunction::primitive");
    if (net_) return neural_primitive(x);
    return pwl_primitive(x);
  }

  /// int_0^t alpha((x - s)^+) ds  =  A(x) - A(x - t)          if t <= x
  ///                              =  A(x) + alpha(0) (t - x)   if t > x.
  double transported_integral(double x, double t) const {
    check_domain(x, "AlphaFunction::transported_integral");
    if (!std::isfinite(t) || t < 0.0 || t > horizon_)
      throw DomainError("AlphaFunction::transported_integral: t outside [0, horizon]");
    if (t <= x) return primitive(x) - primitive(x - t);
    return primitive(x) + eval(0.0) * (t - x);
  }

  // --- calibration support -------------------------------------------------

  int param_count() const {
    if (net_) return net_->param_count();
    return static_cast<int>(values_.size());
  }

  std::vector<double> parameters() const {
    if (net_) {
      auto p = net_->params();
      return std::vector<double>(p.begin(), p.end());
    }
    return values_;
  }

  /// New function with updated parameters; caches are rebuilt. Grid values
  /// are clamped at 0 to preserve alpha >= 0.
  AlphaFunction with_parameters(std::span<const double> p) const {
    if (net_) {
      MLPAlpha net = *net_;
      net.set_params(p);
      return neural(std::move(net));
    }
    if (p.size() != values_.size())
      throw ShapeError("AlphaFunction::with_parameters: wrong length");
    std::vector<double> v(p.begin(), p.end());
    for (double& x : v) x = std::max(x, 0.0);
    return piecewise_linear(horizon_, grid_, std::move(v));
  }

  /// grad += sum_p coeff_p * d A(x_p) / d params, matching primitive() exactly
  /// (same quadrature and interpolation path).
  void accumulate_primitive_grad(std::span<const std::pair<double, double>> points,
                                 std::span<double> grad) const {
    if (net_) {
      accumulate_neural_primitive_grad(points, grad);
    } else {
      for (const auto& [x, coeff] : points) accumulate_pwl_primitive_grad(x, coeff, grad);
    }
  }

 private:
  AlphaFunction() = default;

  void check_domain(double x, const char* who) const {
    if (!std::isfinite(x) || x < 0.0 || x > horizon_ + 1e-12)
      throw DomainError(std::string(who) + ": x outside [0, horizon]");
  }

  // piecewise linear --------------------------------------------------------

  double pwl_value(double x) const {
    if (x <= grid_.front()) return values_.front();
    if (x >= grid_.back()) return values_.back();
    const auto it = std::upper_bound(grid_.begin(), grid_.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - grid_.begin()) - 1;
    const double f = (x - grid_[j]) / (grid_[j + 1] - grid_[j]);
    return values_[j] + f * (values_[j + 1] - values_[j]);
  }

  void build_pwl_primitive() {
    pwl_A_.assign(grid_.size(), 0.0);
    // A at the first grid node accounts for the constant extension on [0, x0).
    pwl_A_[0] = grid_.front() * values_.front();
    for (std::size_t j = 0; j + 1 < grid_.size(); ++j) {
      pwl_A_[j + 1] =
          pwl_A_[j] + 0.5 * (grid_[j + 1] - grid_[j]) * (values_[j] + values_[j + 1]);
    }
  }

  double pwl_primitive(double x) const {
    if (x <= 0.0) return 0.0;
    if (x <= grid_.front()) return values_.front() * x;
    if (x >= grid_.back())
      return pwl_A_.back() + values_.back() * (x - grid_.back());
    const auto it = std::upper_bound(grid_.begin(), grid_.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - grid_.begin()) - 1;
    const double ax = pwl_value(x);
    return pwl_A_[j] + 0.5 * (x - grid_[j]) * (values_[j] + ax);
  }

  void accumulate_pwl_primitive_grad(double x, double coeff, std::span<double> grad) const {
    if (static_cast<std::size_t>(grad.size()) != values_.size())
      throw ShapeError("AlphaFunction: gradient buffer has wrong length");
    if (x <= 0.0) return;
    if (x <= grid_.front()) {
      grad[0] += coeff * x;
      return;
    }
    grad[0] += coeff * grid_.front();  // constant extension piece
    std::size_t j = 0;
    while (j + 1 < grid_.size() && grid_[j + 1] <= x) {
      const double h = grid_[j + 1] - grid_[j];
      grad[j] += coeff * 0.5 * h;
      grad[j + 1] += coeff * 0.5 * h;
      ++j;
    }
    if (j + 1 >= grid_.size()) {
      grad[grid_.size() - 1] += coeff * (x - grid_.back());
      return;
    }
    if (x > grid_[j]) {
      const double dx = x - grid_[j];
      const double f = dx / (grid_[j + 1] - grid_[j]);
      // 0.5 dx (a_j + a_j + f (a_{j+1} - a_j))
      grad[j] += coeff * 0.5 * dx * (2.0 - f);
      grad[j + 1] += coeff * 0.5 * dx * f;
    }
  }

  // neural -------------------------------------------------------------------

  static constexpr int kPanels = 2048;

  void build_neural_primitive() {
    const double h = horizon_ / kPanels;
    neural_A_.assign(kPanels + 1, 0.0);
    neural_nodes_.assign(2 * kPanels + 1, 0.0);
    for (int k = 0; k <= 2 * kPanels; ++k)
      neural_nodes_[static_cast<std::size_t>(k)] = 0.5 * h * k;
    for (int p = 0; p < kPanels; ++p) {
      const double fa = net_->eval(neural_nodes_[static_cast<std::size_t>(2 * p)]);
      const double fm = net_->eval(neural_nodes_[static_cast<std::size_t>(2 * p + 1)]);
      const double fb = net_->eval(neural_nodes_[static_cast<std::size_t>(2 * p + 2)]);
      double inc = h / 6.0 * (fa + 4.0 * fm + fb);
      if (inc < 0.0) inc = 0.0;  // monotone rounding; alpha >= 0 makes this a no-op
      neural_A_[static_cast<std::size_t>(p + 1)] = neural_A_[static_cast<std::size_t>(p)] + inc;
    }
  }

  double neural_primitive(double x) const {
    if (x <= 0.0) return 0.0;
    const double h = horizon_ / kPanels;
    double pos = x / h;
    int p = static_cast<int>(pos);
    if (p >= kPanels) return neural_A_.back();
    const double f = pos - p;
    return neural_A_[static_cast<std::size_t>(p)] +
           f * (neural_A_[static_cast<std::size_t>(p + 1)] - neural_A_[static_cast<std::size_t>(p)]);
  }

  void accumulate_neural_primitive_grad(std::span<const std::pair<double, double>> points,
                                        std::span<double> grad) const {
    const double h = horizon_ / kPanels;
    // Coefficient of each Simpson node in the requested combination of A(x_p).
    std::vector<double> node_coeff(neural_nodes_.size(), 0.0);
    auto add_panels = [&](int upto, double c) {
      // c * (A contribution of panels [0, upto))
      for (int q = 0; q < upto; ++q) {
        node_coeff[static_cast<std::size_t>(2 * q)] += c * h / 6.0;
        node_coeff[static_cast<std::size_t>(2 * q + 1)] += c * 4.0 * h / 6.0;
        node_coeff[static_cast<std::size_t>(2 * q + 2)] += c * h / 6.0;
      }
    };
    for (const auto& [x, coeff] : points) {
      if (x <= 0.0 || coeff == 0.0) continue;
      const double pos = std::min(x, horizon_) / h;
      int p = static_cast<int>(pos);
      if (p >= kPanels) {
        add_panels(kPanels, coeff);
        continue;
      }
      const double f = pos - p;
      add_panels(p, coeff * (1.0 - f));
      add_panels(p + 1, coeff * f);
    }
    for (std::size_t k = 0; k < node_coeff.size(); ++k) {
      if (node_coeff[k] != 0.0)
        net_->accumulate_output_grad(neural_nodes_[k], node_coeff[k], grad);
    }
  }

  double horizon_ = 1.0;
  std::vector<double> grid_;
  std::vector<double> values_;
  std::vector<double> pwl_A_;
  std::optional<MLPAlpha> net_;
  std::vector<double> neural_A_;
  std::vector<double> neural_nodes_;
};

inline double alpha_eval(const AlphaFunction& a, double x) { return a.eval(x); }

inline double alpha_transported_integral(const AlphaFunction& a, double x, double t) {
  return a.transported_integral(x, t);
}

/// Symmetric kernel beta and jump kernel pi of the (beta, pi)-representation.
class BSKernels {
 public:
  using Kernel = std::function<double(double, double)>;

  /// pi == 0 (pure kernel case).
  BSKernels(double horizon, Kernel beta)
      : horizon_(horizon), beta_(std::move(beta)), pi_zero_(true) {
    if (!(horizon > 0.0)) throw DomainError("BSKernels: horizon must be positive");
  }

  BSKernels(double horizon, Kernel beta, Kernel pi)
      : horizon_(horizon), beta_(std::move(beta)), pi_(std::move(pi)), pi_zero_(false) {
    if (!(horizon > 0.0)) throw DomainError("BSKernels: horizon must be positive");
  }

  double horizon() const { return horizon_; }
  bool pi_is_zero() const { return pi_zero_; }
  double beta(double x, double y) const { return beta_(x, y); }
  double pi(double x, double y) const { return pi_zero_ ? 0.0 : pi_(x, y); }

  /// Upper bound for Poisson thinning: 1.5 * max pi over a 64x64 probe grid.
  double pi_sup_bound(int grid = 64, double safety = 1.5) const {
    if (pi_zero_) return 0.0;
    double m = 0.0;
    for (int i = 0; i < grid; ++i) {
      for (int j = 0; j < grid; ++j) {
        const double x = horizon_ * (i + 0.5) / grid;
        const double y = horizon_ * (j + 0.5) / grid;
        const double v = pi_(x, y);
        if (!std::isfinite(v))
          throw KernelBoundError("BSKernels: pi is non-finite on the probe grid");
        m = std::max(m, v);
      }
    }
    return safety * m;
  }

 private:
  double horizon_;
  Kernel beta_;
  Kernel pi_;
  bool pi_zero_;
};

struct AdmissibilityIssue {
  std::string kind;
  std::vector<double> points;
  double value = 0.0;
};

struct AdmissibilityReport {
  bool pass = true;
  int trials = 0;
  std::vector<AdmissibilityIssue> issues;
};

/// Probabilistic admissibility check: symmetry of beta, beta(x,x) >= 0,
/// pi >= 0 with pi(x,x) = 0, and positive semidefiniteness of
/// A = beta_n + diag(sum_j (c_j/c_i) pi(x_i, x_j)) at sampled points.
inline AdmissibilityReport check_admissibility(const BSKernels& k, int n_samples,
                                               std::uint64_t seed) {
  if (n_samples < 1) throw DomainError("check_admissibility: n_samples must be >= 1");
  auto rng = make_rng(seed, RngStream::Admissibility);
  std::uniform_real_distribution<double> ux(0.0, k.horizon());
  std::uniform_real_distribution<double> uc(0.1, 10.0);
  std::uniform_int_distribution<int> un(1, 8);
  AdmissibilityReport report;
  report.trials = n_samples;
  auto fail = [&report](std::string kind, std::vector<double> pts, double v) {
    report.pass = false;
    report.issues.push_back({std::move(kind), std::move(pts), v});
  };
  for (int trial = 0; trial < n_samples; ++trial) {
    const int n = un(rng);
    std::vector<double> x(static_cast<std::size_t>(n)), c(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      x[static_cast<std::size_t>(i)] = ux(rng);
      c[static_cast<std::size_t>(i)] = uc(rng);
    }
    Eigen::MatrixXd A(n, n);
    bool usable = true;
    for (int i = 0; i < n && usable; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      const double pii = k.pi(xi, xi);
      if (!std::isfinite(pii) || std::abs(pii) > 1e-12) {
        fail("pi_diagonal_nonzero", {xi}, pii);
      }
      const double bii = k.beta(xi, xi);
      if (!std::isfinite(bii) || bii < 0.0) fail("beta_diagonal_negative", {xi}, bii);
      double diag = 0.0;
      for (int j = 0; j < n; ++j) {
        const double xj = x[static_cast<std::size_t>(j)];
        const double bij = k.beta(xi, xj);
        const double bji = k.beta(xj, xi);
        if (!std::isfinite(bij) || !std::isfinite(bji)) {
          fail("beta_non_finite", {xi, xj}, bij);
          usable = false;
          break;
        }
        if (std::abs(bij - bji) > 1e-9 * (1.0 + std::abs(bij)))
          fail("beta_asymmetric", {xi, xj}, bij - bji);
        const double pij = k.pi(xi, xj);
        if (!std::isfinite(pij)) {
          fail("pi_non_finite", {xi, xj}, pij);
          usable = false;
          break;
        }
        if (pij < 0.0) fail("pi_negative", {xi, xj}, pij);
        A(i, j) = bij;
        diag += c[static_cast<std::size_t>(j)] / c[static_cast<std::size_t>(i)] * pij;
      }
      if (usable) A(i, i) += diag;
    }
    if (!usable) continue;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
    const double lmin = es.eigenvalues().minCoeff();
    if (lmin < -1e-9) fail("matrix_not_psd", x, lmin);
  }
  return report;
}

/// Discrete-maturity setup on E = {0, ..., T} with killing rate gamma at 0.
struct DiscreteHJMConfig {
  int horizon;
  double gamma = 0.0;

  DiscreteHJMConfig(int T, double g) : horizon(T), gamma(g) {
    if (T < 1) throw DomainError("DiscreteHJMConfig: horizon must be >= 1");
    if (!std::isfinite(g) || g < 0.0) throw DomainError("DiscreteHJMConfig: gamma must be >= 0");
  }
};

/// Generator-style increment matrix: mu_t - mu_{t-1} = beta mu_{t-1} + noise.
/// Row 0 is (-gamma, 1, 0, ...), rows 1..T-1 carry -1 / +1, row T is all
/// zeros except -1 on the diagonal.
inline Eigen::MatrixXd build_beta_matrix(const DiscreteHJMConfig& cfg) {
  const int T = cfg.horizon;
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(T + 1, T + 1);
  beta(0, 0) = -cfg.gamma;
  beta(0, 1) = 1.0;
  for (int i = 1; i < T; ++i) {
    beta(i, i) = -1.0;
    beta(i, i + 1) = 1.0;
  }
  beta(T, T) = -1.0;
  return beta;
}

}  // namespace mvhjm
