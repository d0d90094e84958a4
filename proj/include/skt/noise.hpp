#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "skt/core_model.hpp"
#include "skt/grid.hpp"

namespace skt {

// ---------------------------------------------------------------------------
// C^1 regularization of the square root.
//
//   g(x) = x / sqrt(d)                                               0 <= x <= d/2
//   g(x) = -(2 sqrt(d)/d^3) x^3 + (4/(d sqrt(d))) x^2 - (3/(2 sqrt(d))) x + sqrt(d)/2
//                                                                  d/2 <= x <= d
//   g(x) = sqrt(x)                                                       x >= d
//   g(x) = 0                                                             x < 0

inline double g_delta(double x, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("g_delta: delta must be positive");
  if (x < 0.0) return 0.0;
  const double sd = std::sqrt(delta);
  if (x <= 0.5 * delta) return x / sd;
  if (x <= delta) {
    // in y = x / delta the cubic has dyadic coefficients, so both joins are exact
    const double y = x / delta;
    return sd * (((-2.0 * y + 4.0) * y - 1.5) * y + 0.5);
  }
  return std::sqrt(x);
}

inline double g_delta_prime(double x, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("g_delta_prime: delta must be positive");
  if (x < 0.0) return 0.0;
  const double sd = std::sqrt(delta);
  if (x <= 0.5 * delta) return 1.0 / sd;
  if (x <= delta) {
    const double y = x / delta;
    return ((-6.0 * y + 8.0) * y - 1.5) / sd;
  }
  return 0.5 / std::sqrt(x);
}

// ---------------------------------------------------------------------------

/**
 * @brief Truncated smooth noise family e_k = phi_k (1 + lambda_k)^{-s/2}.
 *
 * phi_k are the Neumann cosine modes of the grid, so the family is orthonormal
 * in the spectral H^s norm. The same family is used for every (species,
 * direction) pair. Values and x-derivatives are tabulated at cell centres and
 * at faces; the flux-form operators below use the face tables.
 */
class NoiseBasis {
 public:
  /// Modes k = 0..K-1.
  NoiseBasis(const Grid& grid, int K, double s) : NoiseBasis(grid, first_modes(K), s) {}

  NoiseBasis(const Grid& grid, std::vector<int> modes, double s)
      : grid_(grid), modes_(std::move(modes)), s_(s) {
    if (modes_.empty()) throw std::invalid_argument("NoiseBasis: need at least one mode");
    if (!(s > 1.5)) throw std::invalid_argument("NoiseBasis: smoothness s must exceed 3/2");
    const NeumannEigenbasis eig(grid);
    const int K = size();
    const int M = grid.cells();
    center_.resize(K, M);
    face_.resize(K, M + 1);
    face_grad_.resize(K, M + 1);
    center_grad_.resize(K, M);
    for (int q = 0; q < K; ++q) {
      const int k = modes_[q];
      if (k < 0) throw std::invalid_argument("NoiseBasis: negative mode index");
      const double weight = std::pow(1.0 + std::pow(eig.wavenumber(k), 2), -0.5 * s);
      for (int m = 0; m < M; ++m) {
        center_(q, m) = weight * eig.mode(k, grid.center(m));
        center_grad_(q, m) = weight * eig.mode_derivative(k, grid.center(m));
      }
      for (int f = 0; f <= M; ++f) {
        face_(q, f) = weight * eig.mode(k, grid.face(f));
        face_grad_(q, f) = weight * eig.mode_derivative(k, grid.face(f));
      }
    }
    e_squared_ = face_.array().square().colwise().sum().transpose();
    e_grad_ = (face_.array() * face_grad_.array()).colwise().sum().transpose();

    norms_.sup_sq = 0.0;
    norms_.grad_sup_sq = 0.0;
    for (int q = 0; q < K; ++q) {
      const double sup = std::max(center_.row(q).cwiseAbs().maxCoeff(),
                                  face_.row(q).cwiseAbs().maxCoeff());
      const double gsup = std::max(center_grad_.row(q).cwiseAbs().maxCoeff(),
                                   face_grad_.row(q).cwiseAbs().maxCoeff());
      norms_.sup_sq += sup * sup;
      norms_.grad_sup_sq += gsup * gsup;
    }
    const int kmax = *std::max_element(modes_.begin(), modes_.end());
    norms_.sup_sq_tail = tail_bound(kmax + 1, 0);
    norms_.grad_sup_sq_tail = tail_bound(kmax + 1, 2);
  }

  const Grid& grid() const { return grid_; }
  int size() const { return static_cast<int>(modes_.size()); }
  const std::vector<int>& modes() const { return modes_; }
  double smoothness() const { return s_; }

  /// (q, m): e_q at cell centre m.
  const Eigen::MatrixXd& centers() const { return center_; }
  const Eigen::MatrixXd& center_gradients() const { return center_grad_; }
  /// (q, f): e_q at face f.
  const Eigen::MatrixXd& faces() const { return face_; }
  const Eigen::MatrixXd& face_gradients() const { return face_grad_; }

  /// sum_k e_k^2 at faces.
  const Vector& face_e_squared() const { return e_squared_; }
  /// sum_k e_k d_x e_k at faces.
  const Vector& face_e_grad() const { return e_grad_; }

  const BasisNorms& norms() const { return norms_; }

  /// sum_k ||d_x e_k||_{L^2}^2 over the stored modes (exact: ||phi_k'||^2 = lambda_k).
  double grad_l2_sq() const {
    double total = 0.0;
    for (int k : modes_) {
      const double lam = std::pow(k * std::numbers::pi / grid_.length(), 2);
      total += lam * std::pow(1.0 + lam, -s_);
    }
    return total;
  }

  /**
   * Analytic bound on sum_{k >= k0} c_k^2 (k pi/L)^{p} (1 + (k pi/L)^2)^{-s}
   * (p = 0 for values, p = 2 for derivatives), using
   * (1 + lambda)^{-s} <= lambda^{-s} and an integral comparison.
   */
  double tail_bound(int k0, int p) const {
    const double L = grid_.length();
    const double expo = 2.0 * s_ - p;  // decay exponent of the summand in k
    if (!(expo > 1.0)) return std::numeric_limits<double>::infinity();
    const double c2 = 2.0 / L;
    if (k0 <= 0) {
      return (p == 0 ? 1.0 / L : 0.0) + tail_bound(1, p);
    }
    const double first = c2 * std::pow(k0 * std::numbers::pi / L, -expo);
    const double integral = c2 * std::pow(std::numbers::pi / L, -expo) * std::pow(k0, 1.0 - expo) /
                            (expo - 1.0);
    return first + integral;
  }

 private:
  static std::vector<int> first_modes(int K) {
    if (K < 1) throw std::invalid_argument("NoiseBasis: truncation K must be at least 1");
    std::vector<int> m(K);
    for (int k = 0; k < K; ++k) m[k] = k;
    return m;
  }

  Grid grid_;
  std::vector<int> modes_;
  double s_;
  Eigen::MatrixXd center_, center_grad_, face_, face_grad_;
  Vector e_squared_, e_grad_;
  BasisNorms norms_;
};

inline A4Report check_A4(const Coefficients& c, const BalanceWeights& w, const NoiseBasis& basis,
                         const A4Params& prm, double N) {
  return check_A4(c, w, basis.norms(), prm, N);
}

/// Independent N(0, dt) increments, one row per species, one column per noise mode.
struct WienerIncrement {
  Eigen::MatrixXd dW;
  double dt = 0.0;
};

using Rng = std::mt19937_64;

inline WienerIncrement sample_increment(Rng& rng, const NoiseBasis& basis, int species, double dt) {
  if (dt < 0.0) throw std::invalid_argument("sample_increment: negative time step");
  WienerIncrement inc{Eigen::MatrixXd::Zero(species, basis.size()), dt};
  if (dt == 0.0) return inc;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = std::sqrt(dt);
  for (int i = 0; i < species; ++i) {
    for (int k = 0; k < basis.size(); ++k) inc.dW(i, k) = scale * normal(rng);
  }
  return inc;
}

// ---------------------------------------------------------------------------

/// Diagonal noise coefficient sigma_ii = g_delta(u_i A~_i(u)), cell values.
inline Field sigma_delta(const Coefficients& c, const Field& u, double delta) {
  const Field At = tilde_A(c, u);
  Field out(u.species(), u.cells(), FieldKind::generic);
  for (int i = 0; i < u.species(); ++i) {
    for (int m = 0; m < u.cells(); ++m) {
      out.values(i, m) = g_delta(u.values(i, m) * At.values(i, m), delta);
    }
  }
  return out;
}

/// Unregularized sigma_ii = sqrt(u_i A~_i(u)).
inline Field sigma_exact(const Coefficients& c, const Field& u) {
  const Field At = tilde_A(c, u);
  Field out(u.species(), u.cells(), FieldKind::generic);
  out.values = (u.values.array() * At.values.array()).max(0.0).sqrt().matrix();
  return out;
}

/**
 * @brief sqrt(1/N) sum_k d_x(sigma_ii e_k) dW_k^i, per species.
 *
 * sigma is face-averaged; the flux sigma e_k dW_k is assembled at faces and
 * differenced with Grid::divergence, so each species integrates to zero.
 */
inline Field noise_divergence_term(const Grid& grid, const NoiseBasis& basis, const Field& sigma,
                                   const WienerIncrement& inc, double population) {
  if (inc.dW.cols() != basis.size()) {
    throw std::invalid_argument("noise_divergence_term: increment has " +
                                std::to_string(inc.dW.cols()) + " modes, basis has " +
                                std::to_string(basis.size()));
  }
  if (inc.dW.rows() != sigma.species()) {
    throw std::invalid_argument("noise_divergence_term: species mismatch");
  }
  if (!(population > 0.0)) throw std::invalid_argument("noise_divergence_term: N must be positive");
  Field out(sigma.species(), sigma.cells(), FieldKind::generic);
  const double amp = std::sqrt(1.0 / population);
  for (int i = 0; i < sigma.species(); ++i) {
    const Vector sf = grid.face_average(sigma.row(i));
    const Vector noise = basis.faces().transpose() * inc.dW.row(i).transpose();
    out.set_row(i, amp * grid.divergence(sf.cwiseProduct(noise)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ito-Stratonovich type correction
//
//   T_i = sum_k d_x( (d_{u_i} sigma_ii) e_k e_k d_x sigma_ii + (d_{u_i} sigma_ii) e_k d_x e_k sigma_ii )
//
// evaluated in flux form at faces. With q_i = u_i A~_i(u):
//   d_{u_i} sigma_ii = g'(q_i) (A~_i + a_ii u_i)
//   d_x sigma_ii     = g'(q_i) ((A~_i + a_ii u_i) d_x u_i + sum_{j != i} a_ij u_i d_x u_j)

enum class SigmaModel { regularized, exact };

namespace detail {

inline Field correction_flux_impl(const Grid& grid, const Coefficients& c, const NoiseBasis& basis,
                                  const Field& u, double delta, SigmaModel model) {
  const int n = u.species();
  const int F = grid.faces();
  FieldMatrix uf(n, F), dux(n, F);
  for (int i = 0; i < n; ++i) {
    uf.row(i) = grid.face_average(u.row(i)).transpose();
    dux.row(i) = grid.gradient(u.row(i)).transpose();
  }
  const Eigen::MatrixXd inter = c.interaction();
  Field flux(n, F, FieldKind::generic);
  for (int f = 1; f < F - 1; ++f) {
    const Vector up = uf.col(f);
    const Vector At = tilde_A_point(c, up);
    for (int i = 0; i < n; ++i) {
      const double q = up[i] * At[i];
      double sigma, gp;
      if (model == SigmaModel::regularized) {
        sigma = g_delta(q, delta);
        gp = g_delta_prime(q, delta);
      } else {
        if (!(q > 0.0)) {
          throw std::domain_error("correction_T: unregularized sigma is singular at u = 0");
        }
        sigma = std::sqrt(q);
        gp = 0.5 / sigma;
      }
      const double du_i = At[i] + inter(i, i) * up[i];
      double dq_dx = du_i * dux(i, f);
      for (int j = 0; j < n; ++j) {
        if (j != i) dq_dx += inter(i, j) * up[i] * dux(j, f);
      }
      const double d_sigma_du = gp * du_i;
      const double d_sigma_dx = gp * dq_dx;
      flux.values(i, f) = d_sigma_du * (basis.face_e_squared()[f] * d_sigma_dx +
                                        basis.face_e_grad()[f] * sigma);
    }
  }
  return flux;
}

}  // namespace detail

/// Face flux whose divergence is correction_T (boundary faces are zero).
inline Field correction_flux(const Grid& grid, const Coefficients& c, const NoiseBasis& basis,
                             const Field& u, double delta) {
  return detail::correction_flux_impl(grid, c, basis, u, delta, SigmaModel::regularized);
}

inline Field correction_T(const Grid& grid, const Coefficients& c, const NoiseBasis& basis,
                          const Field& u, double delta, SigmaModel model = SigmaModel::regularized) {
  detail::require_species(c, u.species(), "correction_T");
  if (model == SigmaModel::regularized && !(delta > 0.0)) {
    throw std::invalid_argument("correction_T: delta must be positive");
  }
  const Field flux = detail::correction_flux_impl(grid, c, basis, u, delta, model);
  Field out(u.species(), u.cells(), FieldKind::generic);
  for (int i = 0; i < u.species(); ++i) out.set_row(i, grid.divergence(flux.row(i)));
  return out;
}

}  // namespace skt
