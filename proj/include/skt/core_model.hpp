#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "skt/grid.hpp"

namespace skt {

/// n x M storage, one species per row.
using FieldMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FieldKind { density, entropy_variable, regularized_state, generic };

inline const char* to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::density: return "density";
    case FieldKind::entropy_variable: return "entropy_variable";
    case FieldKind::regularized_state: return "regularized_state";
    case FieldKind::generic: return "generic";
  }
  return "unknown";
}

struct Field {
  FieldMatrix values;
  FieldKind kind = FieldKind::generic;

  Field() = default;
  Field(FieldMatrix v, FieldKind k) : values(std::move(v)), kind(k) {}
  Field(int species, int cells, FieldKind k)
      : values(FieldMatrix::Zero(species, cells)), kind(k) {}

  int species() const { return static_cast<int>(values.rows()); }
  int cells() const { return static_cast<int>(values.cols()); }

  Vector row(int i) const { return values.row(i).transpose(); }
  void set_row(int i, VectorRef r) { values.row(i) = r.transpose(); }
  Vector point(int m) const { return values.col(m); }

  bool finite() const { return values.allFinite(); }
};

/**
 * SKT parameter set: a(i, 0) is the diffusion coefficient a_{i0}, a(i, j) for
 * j >= 1 the self/cross-diffusion coefficient a_{ij} (1-based species index j).
 */
struct Coefficients {
  Eigen::MatrixXd a;

  Coefficients() = default;
  explicit Coefficients(Eigen::MatrixXd matrix) : a(std::move(matrix)) { validate(); }

  int n() const { return static_cast<int>(a.rows()); }
  double diffusion(int i) const { return a(i, 0); }
  /// 0-based species indices.
  double cross(int i, int j) const { return a(i, j + 1); }

  /// n x n block of (self/cross) coefficients.
  Eigen::MatrixXd interaction() const { return a.rightCols(n()); }

  void validate() const {
    if (a.rows() < 1) throw std::invalid_argument("Coefficients: need at least one species");
    if (a.cols() != a.rows() + 1) {
      throw std::invalid_argument("Coefficients: matrix must be n x (n+1), got " +
                                  std::to_string(a.rows()) + " x " + std::to_string(a.cols()));
    }
    if (!a.allFinite() || (a.array() < 0.0).any()) {
      throw std::invalid_argument("Coefficients: entries must be finite and nonnegative");
    }
  }

  /// Hypothesis of the solver path: a_{i0} > 0 and a_{ii} > 0.
  bool solver_admissible() const {
    for (int i = 0; i < n(); ++i) {
      if (!(diffusion(i) > 0.0) || !(cross(i, i) > 0.0)) return false;
    }
    return true;
  }
};

struct BalanceWeights {
  Vector pi;
  int n() const { return static_cast<int>(pi.size()); }
};

namespace detail {

inline void require_species(const Coefficients& c, Eigen::Index n, const char* what) {
  if (n != c.n()) {
    throw std::invalid_argument(std::string(what) + ": species mismatch, coefficients have " +
                                std::to_string(c.n()) + ", input has " + std::to_string(n));
  }
}

inline void require_weights(const BalanceWeights& w, Eigen::Index n, const char* what) {
  if (w.pi.size() != n) {
    throw std::invalid_argument(std::string(what) + ": weight vector has length " +
                                std::to_string(w.pi.size()) + ", expected " + std::to_string(n));
  }
  if ((w.pi.array() <= 0.0).any()) {
    throw std::invalid_argument(std::string(what) + ": weights must be strictly positive");
  }
}

}  // namespace detail

/// A~_i(u) = a_{i0} + sum_k a_{ik} u_k at a single point.
inline Vector tilde_A_point(const Coefficients& c, VectorRef u) {
  detail::require_species(c, u.size(), "tilde_A");
  return c.a.col(0) + c.interaction() * u;
}

inline Field tilde_A(const Coefficients& c, const Field& u) {
  detail::require_species(c, u.species(), "tilde_A");
  Field out(u.species(), u.cells(), FieldKind::generic);
  out.values = (c.interaction() * u.values).colwise() + c.a.col(0);
  return out;
}

/// A_{ij}(u) = delta_{ij} A~_i(u) + a_{ij} u_i.
inline Eigen::MatrixXd diffusion_matrix(const Coefficients& c, VectorRef u) {
  detail::require_species(c, u.size(), "diffusion_matrix");
  const Vector At = tilde_A_point(c, u);
  Eigen::MatrixXd A = u.asDiagonal() * c.interaction();
  A.diagonal() += At;
  return A;
}

/// sum_i pi_i (u_i (log u_i - 1) + 1); the summand at u_i = 0 is pi_i.
inline double entropy_density(const BalanceWeights& w, VectorRef u) {
  detail::require_weights(w, u.size(), "entropy_density");
  double h = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double ui = u[i];
    if (ui < 0.0 || std::isnan(ui)) {
      throw std::domain_error("entropy_density: negative or NaN density");
    }
    h += w.pi[i] * (ui > 0.0 ? ui * (std::log(ui) - 1.0) + 1.0 : 1.0);
  }
  return h;
}

/// Integral of the entropy density over the grid (midpoint rule).
inline double entropy_functional(const BalanceWeights& w, const Field& u, const Grid& grid) {
  if (u.cells() != grid.cells()) throw std::invalid_argument("entropy_functional: grid mismatch");
  double total = 0.0;
  for (int m = 0; m < u.cells(); ++m) total += entropy_density(w, u.point(m));
  return total * grid.dx();
}

/// w_i = pi_i log u_i; requires u > 0.
inline Field w_of_u(const BalanceWeights& w, const Field& u) {
  detail::require_weights(w, u.species(), "w_of_u");
  if ((u.values.array() <= 0.0).any() || !u.finite()) {
    throw std::domain_error("w_of_u: density must be strictly positive and finite");
  }
  Field out(u.species(), u.cells(), FieldKind::entropy_variable);
  out.values = w.pi.asDiagonal() * u.values.array().log().matrix();
  return out;
}

/// u_i = exp(w_i / pi_i).
inline Field u_of_w(const BalanceWeights& w, const Field& ent) {
  detail::require_weights(w, ent.species(), "u_of_w");
  Field out(ent.species(), ent.cells(), FieldKind::density);
  out.values = (w.pi.cwiseInverse().asDiagonal() * ent.values).array().exp().matrix();
  return out;
}

/// B = A(u) h''(u)^{-1}, i.e. B_{ij} = A_{ij}(u) u_j / pi_j.
inline Eigen::MatrixXd mobility(const Coefficients& c, const BalanceWeights& w, VectorRef u) {
  detail::require_weights(w, u.size(), "mobility");
  if ((u.array() <= 0.0).any()) {
    throw std::domain_error("mobility: h''(u) is singular for a vanishing density");
  }
  const Vector scale = u.cwiseQuotient(w.pi);
  return diffusion_matrix(c, u) * scale.asDiagonal();
}

/// z . h''(u) A(u) z
inline double entropy_quadratic_form(const Coefficients& c, const BalanceWeights& w, VectorRef u,
                                     VectorRef z) {
  const Vector hz = w.pi.cwiseQuotient(u).cwiseProduct(z);
  return hz.dot(diffusion_matrix(c, u) * z);
}

/// Lower bound sum_i pi_i (a_{i0} z_i^2/u_i + 2 a_{ii} z_i^2), cross terms dropped.
inline double entropy_quadratic_lower_bound(const Coefficients& c, const BalanceWeights& w,
                                            VectorRef u, VectorRef z) {
  double lb = 0.0;
  for (int i = 0; i < c.n(); ++i) {
    lb += w.pi[i] * (c.diffusion(i) * z[i] * z[i] / u[i] + 2.0 * c.cross(i, i) * z[i] * z[i]);
  }
  return lb;
}

class DetailedBalanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * @brief Reversible weights pi with pi_i a_{ij} = pi_j a_{ji}.
 *
 * Species form a graph with an edge wherever a_{ij} a_{ji} > 0. Weights are
 * propagated along a BFS spanning tree of each component via
 * pi_j = pi_i a_{ij} / a_{ji}; every remaining edge is then checked (Kolmogorov
 * cycle condition). The result is normalized so that min_i pi_i = 1.
 */
inline BalanceWeights solve_balance_weights(const Coefficients& c, double rel_tol = 1e-12) {
  c.validate();
  const int n = c.n();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if ((c.cross(i, j) > 0.0) != (c.cross(j, i) > 0.0)) {
        throw DetailedBalanceError("detailed balance impossible: a_{" + std::to_string(i + 1) +
                                   "," + std::to_string(j + 1) + "} and a_{" +
                                   std::to_string(j + 1) + "," + std::to_string(i + 1) +
                                   "} must be both zero or both positive");
      }
    }
  }

  Vector pi = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::vector<bool>> tree(n, std::vector<bool>(n, false));
  for (int root = 0; root < n; ++root) {
    if (!std::isnan(pi[root])) continue;
    pi[root] = 1.0;
    std::queue<int> frontier;
    frontier.push(root);
    while (!frontier.empty()) {
      const int i = frontier.front();
      frontier.pop();
      for (int j = 0; j < n; ++j) {
        if (j == i || !(c.cross(i, j) > 0.0) || !std::isnan(pi[j])) continue;
        pi[j] = pi[i] * c.cross(i, j) / c.cross(j, i);
        tree[i][j] = tree[j][i] = true;
        frontier.push(j);
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (tree[i][j] || !(c.cross(i, j) > 0.0)) continue;
      const double lhs = pi[i] * c.cross(i, j);
      const double rhs = pi[j] * c.cross(j, i);
      if (std::abs(lhs - rhs) > rel_tol * std::max(lhs, rhs)) {
        throw DetailedBalanceError("detailed balance violated on a cycle through species " +
                                   std::to_string(i + 1) + " and " + std::to_string(j + 1));
      }
    }
  }
  pi /= pi.minCoeff();
  return BalanceWeights{pi};
}

/// max_{ij} |pi_i a_{ij} - pi_j a_{ji}| relative to max_{ij} pi_i a_{ij}.
inline double balance_residual(const Coefficients& c, const BalanceWeights& w) {
  double worst = 0.0;
  double scale = 0.0;
  for (int i = 0; i < c.n(); ++i) {
    for (int j = 0; j < c.n(); ++j) {
      worst = std::max(worst, std::abs(w.pi[i] * c.cross(i, j) - w.pi[j] * c.cross(j, i)));
      scale = std::max(scale, w.pi[i] * c.cross(i, j));
    }
  }
  return scale > 0.0 ? worst / scale : worst;
}

// ---------------------------------------------------------------------------
// Smallness condition on the correction factor 1/N.

/// Series norms of the noise family, sup over (i, l).
struct BasisNorms {
  double sup_sq = 0.0;             ///< sup_{i,l} sum_k ||e_k^{il}||_inf^2
  double grad_sup_sq = 0.0;        ///< sup_{i,l} sum_k ||d_x e_k^{il}||_inf^2
  double sup_sq_tail = 0.0;        ///< bound on the omitted k >= K part of sup_sq
  double grad_sup_sq_tail = 0.0;   ///< bound on the omitted part of grad_sup_sq
};

struct A4Params {
  double lambda = 1.0;
  double p = 3.0;
  double kappa = 0.5;
  /// Evaluate the inequalities even for lambda <= 1/2 (outside the guaranteed regime).
  bool allow_small_lambda = false;
};

struct A4Inequality {
  double lhs = 0.0;
  double rhs = 0.0;
  double margin() const { return rhs - lhs; }
  bool holds() const { return lhs < rhs; }
};

struct A4Report {
  double population = 0.0;
  A4Inequality noise_amplitude;   ///< sqrt(1/N) 3^{(p-1)/p} (p/(p-1)) sqrt(2) sqrt(S0) < 1
  A4Inequality diffusion;         ///< worst species of the a_{i0} inequality
  A4Inequality self_diffusion;    ///< worst species of the a_{ii} inequality
  bool lambda_in_regime = true;
  std::optional<double> minimal_population;
  bool pass() const {
    return lambda_in_regime && noise_amplitude.holds() && diffusion.holds() &&
           self_diffusion.holds();
  }
};

namespace detail {

inline A4Inequality worst(const std::vector<A4Inequality>& all) {
  return *std::min_element(all.begin(), all.end(), [](const A4Inequality& x, const A4Inequality& y) {
    return x.margin() < y.margin();
  });
}

inline void evaluate_a4(const Coefficients& c, const BalanceWeights& w, const BasisNorms& norms,
                        const A4Params& prm, double N, A4Report& r) {
  const int n = c.n();
  const double cp = std::pow(3.0, (prm.p - 1.0) / prm.p);
  const double S0 = norms.sup_sq;
  const double S1 = norms.grad_sup_sq;
  const double lam = prm.lambda;

  r.population = N;
  r.noise_amplitude.lhs =
      std::sqrt(1.0 / N) * cp * (prm.p / (prm.p - 1.0)) * std::sqrt(2.0) * std::sqrt(S0);
  r.noise_amplitude.rhs = 1.0;

  std::vector<A4Inequality> diff(n), self(n);
  for (int i = 0; i < n; ++i) {
    const double aii = c.cross(i, i);
    const double bracket =
        0.5 * n * (18.0 * std::abs(lam - 1.0) / prm.kappa + 0.5 + 0.5 * lam * aii) * S0 +
        0.5 * lam * aii * S1;
    diff[i] = {cp * bracket / N, 4.0 * w.pi[i] * c.diffusion(i)};
    self[i] = {cp * (lam / 3.0 + n / 4.0) * S0 / N, 2.0 * w.pi[i] * aii};
  }
  r.diffusion = worst(diff);
  r.self_diffusion = worst(self);
}

}  // namespace detail

/**
 * @brief Evaluates the three smallness inequalities on 1/N at population N.
 *
 * Sup norms come from the truncated basis (BasisNorms::sup_sq etc.); the tail
 * bounds are reported alongside but not added in. minimal_population is the
 * smallest integer N for which all three hold (exponential search followed by
 * bisection), or empty when no N works (e.g. a_{i0} = 0).
 */
inline A4Report check_A4(const Coefficients& c, const BalanceWeights& w, const BasisNorms& norms,
                         const A4Params& prm, double N) {
  if (!(prm.p > 2.0)) throw std::invalid_argument("check_A4: p must exceed 2");
  if (!(prm.kappa > 0.0 && prm.kappa <= 0.5)) {
    throw std::invalid_argument("check_A4: kappa must lie in (0, 1/2]");
  }
  if (!(N > 0.0)) throw std::invalid_argument("check_A4: population must be positive");
  detail::require_weights(w, c.n(), "check_A4");

  A4Report r;
  r.lambda_in_regime = prm.lambda > 0.5 || prm.allow_small_lambda;
  detail::evaluate_a4(c, w, norms, prm, N, r);

  auto passes = [&](double trial) {
    A4Report t;
    detail::evaluate_a4(c, w, norms, prm, trial, t);
    return t.noise_amplitude.holds() && t.diffusion.holds() && t.self_diffusion.holds();
  };
  constexpr double kMaxPopulation = 9.0e15;  // exact integers in double
  double hi = 1.0;
  while (!passes(hi) && hi < kMaxPopulation) hi *= 2.0;
  if (passes(hi)) {
    double lo = std::floor(hi / 2.0);  // fails (or is zero)
    if (hi == 1.0) lo = 0.0;
    while (hi - lo > 1.0) {
      const double mid = std::floor(0.5 * (lo + hi));
      (passes(mid) ? hi : lo) = mid;
    }
    r.minimal_population = hi;
  }
  return r;
}

}  // namespace skt
