#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "skt/core_model.hpp"
#include "skt/grid.hpp"

namespace skt {

/**
 * @brief Spectral realization of L : H^m_N -> L^2.
 *
 * L multiplies the k-th Neumann cosine coefficient by mu_k = (1 + lambda_k)^{m/2},
 * so ||L v||_{L^2} is the spectral H^m norm of v, L is self-adjoint and mu_k >= 1.
 * The dual norm on D(L)' weights coefficients by 1/mu_k.
 */
class OperatorL {
 public:
  OperatorL(const Grid& grid, int order) : basis_(grid), order_(order) {
    if (order < 1) throw std::invalid_argument("OperatorL: order m must be at least 1");
    mu_ = (1.0 + basis_.eigenvalues().array()).pow(0.5 * order).matrix();
  }

  const NeumannEigenbasis& basis() const { return basis_; }
  const Grid& grid() const { return basis_.grid(); }
  int order() const { return order_; }
  const Vector& multipliers() const { return mu_; }

  Vector apply_L(VectorRef v) const {
    return basis_.from_spectral(basis_.to_spectral(v).cwiseProduct(mu_));
  }
  Vector apply_LstarL(VectorRef v) const {
    return basis_.from_spectral(basis_.to_spectral(v).cwiseProduct(mu_.cwiseAbs2()));
  }
  Field apply_L(const Field& v) const { return rowwise(v, [&](VectorRef r) { return apply_L(r); }); }
  Field apply_LstarL(const Field& v) const {
    return rowwise(v, [&](VectorRef r) { return apply_LstarL(r); });
  }

  /// ||L v||_{L^2}
  double norm(VectorRef v) const { return basis_.to_spectral(v).cwiseProduct(mu_).norm(); }
  /// ||v||_{D(L)'} = ||L^{-1} v||_{L^2}
  double dual_norm(VectorRef v) const {
    return basis_.to_spectral(v).cwiseQuotient(mu_).norm();
  }
  double norm(const Field& v) const { return std::sqrt(sum_sq(v, [&](VectorRef r) { return norm(r); })); }
  double dual_norm(const Field& v) const {
    return std::sqrt(sum_sq(v, [&](VectorRef r) { return dual_norm(r); }));
  }

 private:
  template <class Fn>
  static Field rowwise(const Field& v, Fn&& fn) {
    Field out(v.species(), v.cells(), v.kind);
    for (int i = 0; i < v.species(); ++i) out.set_row(i, fn(v.row(i)));
    return out;
  }
  template <class Fn>
  static double sum_sq(const Field& v, Fn&& fn) {
    double s = 0.0;
    for (int i = 0; i < v.species(); ++i) s += std::pow(fn(v.row(i)), 2);
    return s;
  }

  NeumannEigenbasis basis_;
  int order_;
  Vector mu_;
};

struct RegularizationConfig {
  double epsilon = 1e-3;
  double newton_tol = 1e-10;   ///< absolute, in the D(L)' norm
  int max_iter = 50;
  int max_backtracks = 20;
  double exponent_cap = 700.0;
  double init_floor = 1e-12;
  double cg_rel_tol = 1e-12;

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("RegularizationConfig: epsilon must be positive");
    if (!(newton_tol > 0.0)) throw std::invalid_argument("RegularizationConfig: newton_tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("RegularizationConfig: max_iter must be positive");
  }
};

/// Q_eps(w) = u(w) + eps L*L w
inline Field Q_eps(const BalanceWeights& w, const Field& ent, double eps, const OperatorL& L) {
  Field out = u_of_w(w, ent);
  out.values += eps * L.apply_LstarL(ent).values;
  out.kind = FieldKind::regularized_state;
  return out;
}

class NewtonFailure : public std::runtime_error {
 public:
  NewtonFailure(const std::string& what, std::vector<double> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

struct RegularizationResult {
  Field w;
  int iterations = 0;         ///< max over species
  double residual = 0.0;      ///< max over species, D(L)' norm
  bool exponent_capped = false;
  std::vector<std::vector<double>> history;  ///< residual history per species
};

namespace detail {

/**
 * Solves (diag(d) + eps L*L) x = b for one species. PCG runs on the cosine
 * coefficients with the preconditioner diag(mean(d) + eps mu_k^2); if it stalls
 * the dense grid-space Cholesky factorization is used instead.
 */
inline Vector solve_newton_system(const OperatorL& L, const Vector& d, double eps, const Vector& b,
                                  double rel_tol) {
  const NeumannEigenbasis& B = L.basis();
  const Eigen::MatrixXd& Phi = B.table();
  const double dx = B.grid().dx();
  const Vector mu2 = L.multipliers().cwiseAbs2();
  const int M = static_cast<int>(d.size());

  auto apply = [&](const Vector& c) -> Vector {
    const Vector grid_vals = Phi * c;
    return dx * (Phi.transpose() * d.cwiseProduct(grid_vals)) + eps * mu2.cwiseProduct(c);
  };
  const Vector precond = (d.mean() + eps * mu2.array()).matrix();

  const Vector bh = B.to_spectral(b);
  const double bnorm = bh.norm();
  if (bnorm == 0.0) return Vector::Zero(M);

  Vector x = bh.cwiseQuotient(precond);
  Vector r = bh - apply(x);
  Vector z = r.cwiseQuotient(precond);
  Vector p = z;
  double rz = r.dot(z);
  for (int it = 0; it < 2 * M; ++it) {
    if (r.norm() <= rel_tol * bnorm) return B.from_spectral(x);
    const Vector Ap = apply(p);
    const double alpha = rz / p.dot(Ap);
    x += alpha * p;
    r -= alpha * Ap;
    z = r.cwiseQuotient(precond);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  if (r.norm() <= rel_tol * bnorm) return B.from_spectral(x);

  Eigen::MatrixXd J = dx * Phi * mu2.asDiagonal() * Phi.transpose() * eps;
  J.diagonal() += d;
  Eigen::LLT<Eigen::MatrixXd> llt(J);
  return llt.solve(b);
}

}  // namespace detail

/**
 * @brief R_eps = Q_eps^{-1}, computed by damped Newton per species.
 *
 * Species decouple because u(w) acts pointwise and L acts per species. The
 * Jacobian u'(w) + eps L*L is symmetric positive definite; steps are halved
 * until the D(L)'-norm residual decreases. The default starting point is
 * w_of_u(max(v, init_floor)); pass `initial` to warm-start.
 */
inline RegularizationResult R_eps(const BalanceWeights& w, const Field& v,
                                  const RegularizationConfig& cfg, const OperatorL& L,
                                  const Field* initial = nullptr) {
  cfg.validate();
  detail::require_weights(w, v.species(), "R_eps");
  if (v.cells() != L.grid().cells()) throw std::invalid_argument("R_eps: grid mismatch");
  if (!v.finite()) throw std::domain_error("R_eps: input contains NaN or Inf");
  if (initial && (initial->species() != v.species() || initial->cells() != v.cells())) {
    throw std::invalid_argument("R_eps: initial guess has the wrong shape");
  }

  const double eps = cfg.epsilon;
  RegularizationResult res;
  res.w = Field(v.species(), v.cells(), FieldKind::entropy_variable);
  res.history.resize(v.species());

  for (int i = 0; i < v.species(); ++i) {
    const double pi = w.pi[i];
    const Vector vi = v.row(i);
    Vector wi;
    if (initial && initial->finite()) {
      wi = initial->row(i);
    } else {
      wi = pi * vi.array().max(cfg.init_floor).log().matrix();
    }

    bool capped = false;
    auto density = [&](const Vector& x) -> Vector {
      Vector e = x / pi;
      if ((e.array() > cfg.exponent_cap).any()) {
        capped = true;
        e = e.array().min(cfg.exponent_cap).matrix();
      }
      return e.array().exp().matrix();
    };
    auto residual = [&](const Vector& x, const Vector& u) -> Vector {
      return u + eps * L.apply_LstarL(x) - vi;
    };

    std::vector<double>& hist = res.history[i];
    Vector u = density(wi);
    Vector r = residual(wi, u);
    double rnorm = L.dual_norm(r);
    hist.push_back(rnorm);
    int it = 0;
    while (rnorm > cfg.newton_tol) {
      if (it >= cfg.max_iter) {
        throw NewtonFailure("R_eps: Newton did not converge for species " + std::to_string(i + 1) +
                                " (residual " + std::to_string(rnorm) + ")",
                            hist);
      }
      ++it;
      const Vector d = u / pi;
      const Vector step = detail::solve_newton_system(L, d, eps, -r, cfg.cg_rel_tol);
      if (!step.allFinite()) throw NewtonFailure("R_eps: NaN in Newton step", hist);

      double t = 1.0;
      bool accepted = false;
      for (int b = 0; b <= cfg.max_backtracks; ++b, t *= 0.5) {
        const Vector trial = wi + t * step;
        const Vector ut = density(trial);
        const Vector rt = residual(trial, ut);
        const double nt = L.dual_norm(rt);
        if (std::isfinite(nt) && nt < rnorm) {
          wi = trial;
          u = ut;
          r = rt;
          rnorm = nt;
          accepted = true;
          break;
        }
      }
      hist.push_back(rnorm);
      if (!accepted) {
        throw NewtonFailure("R_eps: line search failed for species " + std::to_string(i + 1) +
                                " (residual " + std::to_string(rnorm) + ")",
                            hist);
      }
    }
    res.w.set_row(i, wi);
    res.iterations = std::max(res.iterations, it);
    res.residual = std::max(res.residual, rnorm);
    res.exponent_capped = res.exponent_capped || capped;
  }
  return res;
}

}  // namespace skt
