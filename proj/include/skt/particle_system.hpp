#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "skt/core_model.hpp"
#include "skt/grid.hpp"
#include "skt/noise.hpp"

namespace skt {

// ---------------------------------------------------------------------------
// Mollifier rho(x) = exp(-1/(1 - x^2)) / Z on (-1, 1).

namespace detail {
inline double bump_shape(double x) {
  const double y = 1.0 - x * x;
  return y > 0.0 ? std::exp(-1.0 / y) : 0.0;
}
}  // namespace detail

inline double mollifier_normalization() {
  static const double Z = [] {
    using boost::math::quadrature::gauss_kronrod;
    return gauss_kronrod<double, 61>::integrate(detail::bump_shape, -1.0, 1.0, 15, 1e-15);
  }();
  return Z;
}

inline double mollifier(double x) { return detail::bump_shape(x) / mollifier_normalization(); }

/// B^eta(x) = mass * eta^{-1} rho(x / eta); integrates to `mass`, support [-eta, eta].
struct MollifiedKernel {
  double mass = 0.0;
  double eta = 0.1;

  double operator()(double x) const { return mass / eta * mollifier(x / eta); }
  double support() const { return eta; }
};

/// f_eta(x) = min(max(f(x), 0), eta^{-alpha}) with f the identity unless replaced.
struct LipschitzTruncation {
  double cap = 1.0;
  std::function<double(double)> base;

  static LipschitzTruncation from_eta(double eta, double alpha) {
    if (!(eta > 0.0)) throw std::invalid_argument("LipschitzTruncation: eta must be positive");
    return {std::pow(eta, -alpha), {}};
  }

  double operator()(double x) const {
    const double y = base ? base(x) : x;
    return std::clamp(y, 0.0, cap);
  }
};

// ---------------------------------------------------------------------------

struct ParticleParams {
  Eigen::MatrixXd a;   ///< n x n interaction masses a_ij
  Vector sigma;        ///< per-species diffusion sigma_i
  double eta = 0.05;
  double alpha = 1.0;
  double delta_c = 1.0;
  /// grad U_i(x); empty means no potential
  std::function<double(int, double)> potential_gradient;

  int n() const { return static_cast<int>(sigma.size()); }

  void validate() const {
    if (sigma.size() < 1) throw std::invalid_argument("ParticleParams: need at least one species");
    if (a.rows() != sigma.size() || a.cols() != sigma.size()) {
      throw std::invalid_argument("ParticleParams: interaction matrix must be n x n");
    }
    if ((a.array() < 0.0).any()) throw std::invalid_argument("ParticleParams: a must be nonnegative");
    if ((sigma.array() < 0.0).any()) {
      throw std::invalid_argument("ParticleParams: sigma must be nonnegative");
    }
    if (!(eta > 0.0)) throw std::invalid_argument("ParticleParams: eta must be positive");
    if (!(alpha > 0.0)) throw std::invalid_argument("ParticleParams: alpha must be positive");
    if (!(delta_c > 0.0)) throw std::invalid_argument("ParticleParams: delta_c must be positive");
  }
};

/// Smallest eta with eta^{-(d+1+alpha)} <= sqrt(delta_c log N). Throws when it exceeds eta_max.
inline double eta_from_N(double N, double alpha, double delta_c, int d = 1,
                         double eta_max = std::numeric_limits<double>::infinity()) {
  if (!(N > 1.0)) {
    throw std::domain_error("eta_from_N: log N must be positive, got N = " + std::to_string(N));
  }
  const double eta = std::pow(delta_c * std::log(N), -1.0 / (2.0 * (d + 1 + alpha)));
  if (eta > eta_max) {
    throw std::domain_error("eta_from_N: N = " + std::to_string(N) + " requires eta >= " +
                            std::to_string(eta) + ", above the requested " +
                            std::to_string(eta_max) + "; increase N or delta_c");
  }
  return eta;
}

inline bool eta_scaling_holds(double N, double eta, double alpha, double delta_c, int d = 1) {
  return N > 1.0 && std::pow(eta, -(d + 1 + alpha)) <= std::sqrt(delta_c * std::log(N));
}

/**
 * @brief N particles per species on the real line.
 *
 * positions(i, k) is particle k of species i. The interaction kernel of pair
 * (i, j) is MollifiedKernel{a_ij, eta}; f_eta caps each local density at eta^{-alpha}.
 */
class ParticleEnsemble {
 public:
  ParticleEnsemble(Eigen::MatrixXd positions, ParticleParams params)
      : X_(std::move(positions)), prm_(std::move(params)), f_(LipschitzTruncation::from_eta(prm_.eta, prm_.alpha)) {
    prm_.validate();
    if (X_.rows() != prm_.n()) throw std::invalid_argument("ParticleEnsemble: species mismatch");
    if (X_.cols() < 1) throw std::invalid_argument("ParticleEnsemble: need N >= 1");
    if (!X_.allFinite()) throw std::invalid_argument("ParticleEnsemble: non-finite position");
  }

  int species() const { return static_cast<int>(X_.rows()); }
  int size() const { return static_cast<int>(X_.cols()); }
  const Eigen::MatrixXd& positions() const { return X_; }
  Eigen::MatrixXd& positions() { return X_; }
  const ParticleParams& params() const { return prm_; }
  MollifiedKernel kernel(int i, int j) const { return {prm_.a(i, j), prm_.eta}; }
  const LipschitzTruncation& truncation() const { return f_; }
  void set_truncation(LipschitzTruncation f) { f_ = std::move(f); }

 private:
  Eigen::MatrixXd X_;
  ParticleParams prm_;
  LipschitzTruncation f_;
};

/// Gaussian initial draws, species i ~ N(mean_i, sd_i^2).
inline Eigen::MatrixXd gaussian_positions(Rng& rng, const Vector& mean, const Vector& sd, int N) {
  Eigen::MatrixXd X(mean.size(), N);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < mean.size(); ++i) {
    for (int k = 0; k < N; ++k) X(i, k) = mean[i] + sd[i] * normal(rng);
  }
  return X;
}

/// (1/N) sum over particles l of species j, excluding (k, i) itself, of B_ij(X_ik - X_jl). Direct sum.
inline double local_density(const ParticleEnsemble& ens, int i, int j, int k) {
  const MollifiedKernel B = ens.kernel(i, j);
  const auto& X = ens.positions();
  double s = 0.0;
  for (int l = 0; l < ens.size(); ++l) {
    if (j == i && l == k) continue;
    s += B(X(i, k) - X(j, l));
  }
  return s / ens.size();
}

/**
 * All local densities of pair (i, j) at once. Species j is sorted and the
 * support window [x - eta, x + eta] located by binary search, so the cost is
 * O(N log N + N * neighbours) and the result equals the direct sum up to
 * summation order.
 */
inline Vector local_densities(const ParticleEnsemble& ens, int i, int j) {
  const int N = ens.size();
  Vector out = Vector::Zero(N);
  const MollifiedKernel B = ens.kernel(i, j);
  if (B.mass == 0.0) return out;
  const auto& X = ens.positions();
  std::vector<double> sorted(N);
  for (int l = 0; l < N; ++l) sorted[l] = X(j, l);
  std::sort(sorted.begin(), sorted.end());
  const double r = B.support();
  for (int k = 0; k < N; ++k) {
    const double x = X(i, k);
    auto lo = std::lower_bound(sorted.begin(), sorted.end(), x - r);
    auto hi = std::upper_bound(lo, sorted.end(), x + r);
    double s = 0.0;
    for (auto it = lo; it != hi; ++it) s += B(x - *it);
    if (j == i) s -= B(0.0);  // self term
    out[k] = std::max(s, 0.0) / N;
  }
  return out;
}

/// Increments of one Euler-Maruyama step, kept for the martingale estimator.
struct ParticleIncrement {
  Eigen::MatrixXd before;  ///< positions at the start of the step
  Eigen::MatrixXd coeff;   ///< sqrt(2 sigma_i + 2 sum_j f_eta(local density))
  Eigen::MatrixXd dW;      ///< N(0, dt)
  double dt = 0.0;
};

/// Diffusion coefficients sqrt(2 sigma_i + 2 sum_j f_eta(rho_ij)) from the current configuration.
inline Eigen::MatrixXd diffusion_coefficients(const ParticleEnsemble& ens) {
  const int n = ens.species();
  const int N = ens.size();
  Eigen::MatrixXd arg(n, N);
  for (int i = 0; i < n; ++i) {
    arg.row(i).setConstant(2.0 * ens.params().sigma[i]);
    for (int j = 0; j < n; ++j) {
      if (ens.params().a(i, j) == 0.0) continue;
      const Vector rho = local_densities(ens, i, j);
      for (int k = 0; k < N; ++k) arg(i, k) += 2.0 * ens.truncation()(rho[k]);
    }
  }
  return arg.array().sqrt().matrix();
}

/// X <- X - grad U(X) dt + coeff(X) dW, all coefficients from the pre-step configuration.
inline ParticleIncrement particle_step(ParticleEnsemble& ens, double dt, Rng& rng) {
  if (!(dt > 0.0)) throw std::invalid_argument("particle_step: dt must be positive");
  ParticleIncrement inc;
  inc.dt = dt;
  inc.before = ens.positions();
  inc.coeff = diffusion_coefficients(ens);
  inc.dW.resize(ens.species(), ens.size());
  std::normal_distribution<double> normal(0.0, std::sqrt(dt));
  for (int i = 0; i < ens.species(); ++i) {
    for (int k = 0; k < ens.size(); ++k) inc.dW(i, k) = normal(rng);
  }
  Eigen::MatrixXd& X = ens.positions();
  X += inc.coeff.cwiseProduct(inc.dW);
  if (const auto& gradU = ens.params().potential_gradient) {
    for (int i = 0; i < ens.species(); ++i) {
      for (int k = 0; k < ens.size(); ++k) X(i, k) -= gradU(i, inc.before(i, k)) * dt;
    }
  }
  if (!X.allFinite()) throw std::runtime_error("particle_step: non-finite particle position");
  return inc;
}

// ---------------------------------------------------------------------------
// Test functions and the fluctuation martingale.

/// Smooth bump exp(-1/(1 - ((x - c)/r)^2)) supported on (c - r, c + r).
struct BumpTestFunction {
  double center = 0.0;
  double radius = 1.0;

  double operator()(double x) const { return detail::bump_shape((x - center) / radius); }
  double derivative(double x) const {
    const double y = (x - center) / radius;
    const double q = 1.0 - y * y;
    if (q <= 0.0) return 0.0;
    return std::exp(-1.0 / q) * (-2.0 * y / (q * q)) / radius;
  }
};

/// Increment of M_i(t, phi): (1/sqrt N) sum_k phi'(X_ik) coeff_ik dW_ik.
template <class Derivative>
double martingale_increment(const ParticleIncrement& inc, int species, Derivative&& dphi) {
  const int N = static_cast<int>(inc.before.cols());
  double s = 0.0;
  for (int k = 0; k < N; ++k) {
    s += dphi(inc.before(species, k)) * inc.coeff(species, k) * inc.dW(species, k);
  }
  return s / std::sqrt(static_cast<double>(N));
}

/// Running M_i(t, phi_j) for every species i and test function j.
class MartingaleAccumulator {
 public:
  MartingaleAccumulator(int species, std::vector<BumpTestFunction> tests)
      : tests_(std::move(tests)), M_(Eigen::MatrixXd::Zero(species, static_cast<int>(tests_.size()))) {}

  void accumulate(const ParticleIncrement& inc) {
    for (int i = 0; i < M_.rows(); ++i) {
      for (int j = 0; j < M_.cols(); ++j) {
        const BumpTestFunction& phi = tests_[j];
        M_(i, j) += martingale_increment(inc, i, [&](double x) { return phi.derivative(x); });
      }
    }
  }

  const Eigen::MatrixXd& values() const { return M_; }
  const std::vector<BumpTestFunction>& tests() const { return tests_; }

 private:
  std::vector<BumpTestFunction> tests_;
  Eigen::MatrixXd M_;
};

/**
 * int_0^t <u_i, phi' psi' (2 sigma_i + 2 sum_j f(a_ij u_j))> dr from a recorded
 * density history: midpoint rule in space, trapezoid rule in time.
 */
template <class DPhi, class DPsi>
double analytic_covariance(const Grid& grid, const std::vector<double>& times,
                           const std::vector<Field>& u, const Eigen::MatrixXd& a,
                           const Vector& sigma, int species, DPhi&& dphi, DPsi&& dpsi,
                           const std::function<double(double)>& f = {}) {
  if (times.size() != u.size() || times.size() < 2) {
    throw std::invalid_argument("analytic_covariance: need at least two matching time records");
  }
  auto integrand = [&](const Field& uf) {
    double s = 0.0;
    for (int m = 0; m < uf.cells(); ++m) {
      const double x = grid.center(m);
      double coeff = 2.0 * sigma[species];
      for (int j = 0; j < uf.species(); ++j) {
        const double arg = a(species, j) * uf.values(j, m);
        coeff += 2.0 * (f ? f(arg) : arg);
      }
      s += uf.values(species, m) * dphi(x) * dpsi(x) * coeff;
    }
    return s * grid.dx();
  };
  double total = 0.0;
  double prev = integrand(u[0]);
  for (std::size_t r = 1; r < times.size(); ++r) {
    const double cur = integrand(u[r]);
    total += 0.5 * (times[r] - times[r - 1]) * (prev + cur);
    prev = cur;
  }
  return total;
}

/**
 * Same integral for a density given in closed form, u(r, x), with adaptive
 * Gauss-Kronrod in both variables over [0, t] x [lo, hi]. `coeff(r, x)` is the
 * full factor 2 sigma_i + 2 sum_j f(a_ij u_j).
 */
template <class Density, class Coeff, class DPhi, class DPsi>
double analytic_covariance(Density&& u, Coeff&& coeff, DPhi&& dphi, DPsi&& dpsi, double t, double lo,
                           double hi, double tol = 1e-12) {
  using boost::math::quadrature::gauss_kronrod;
  auto inner = [&](double r) {
    auto g = [&](double x) { return u(r, x) * dphi(x) * dpsi(x) * coeff(r, x); };
    return gauss_kronrod<double, 61>::integrate(g, lo, hi, 12, tol);
  };
  return gauss_kronrod<double, 61>::integrate(inner, 0.0, t, 12, tol);
}

/// Sample variance with its delta-method standard error sqrt((m4 - s^4) / R).
struct VarianceEstimate {
  double mean = 0.0;
  double variance = 0.0;
  double stderr_variance = 0.0;
  double stderr_mean = 0.0;
};

inline VarianceEstimate estimate_variance(const std::vector<double>& x) {
  const double R = static_cast<double>(x.size());
  if (x.size() < 2) throw std::invalid_argument("estimate_variance: need at least two samples");
  VarianceEstimate e;
  for (double v : x) e.mean += v;
  e.mean /= R;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - e.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  e.variance = m2 / (R - 1.0);
  m2 /= R;
  m4 /= R;
  e.stderr_variance = std::sqrt(std::max(m4 - m2 * m2, 0.0) / R);
  e.stderr_mean = std::sqrt(e.variance / R);
  return e;
}

}  // namespace skt
