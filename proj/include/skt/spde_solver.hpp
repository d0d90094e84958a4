#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "skt/core_model.hpp"
#include "skt/grid.hpp"
#include "skt/noise.hpp"
#include "skt/parallel.hpp"
#include "skt/regularization.hpp"

namespace skt {

struct SolverConfig {
  double epsilon = 1e-3;
  std::optional<double> delta;  ///< defaults to epsilon
  double lambda = 1.0;
  double population = 1e4;      ///< N, noise amplitude sqrt(1/N)
  double dt = 1e-5;
  double t_end = 0.1;
  std::uint64_t seed = 1;
  bool deterministic = false;
  int record_every = 100;

  int sobolev_order = 2;        ///< m of D(L) = H^m_N
  int noise_modes = 0;          ///< K; 0 selects M/2
  double noise_smoothness = 2.5;

  double cfl_safety = 0.5;
  bool substep_on_cfl = true;
  double blowup_threshold = 1e8;

  double newton_tol = 1e-10;
  int newton_max_iter = 50;

  double delta_value() const { return delta.value_or(epsilon); }

  RegularizationConfig regularization() const {
    RegularizationConfig r;
    r.epsilon = epsilon;
    r.newton_tol = newton_tol;
    r.max_iter = newton_max_iter;
    return r;
  }

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("SolverConfig: epsilon must be positive");
    if (!(delta_value() > 0.0)) throw std::invalid_argument("SolverConfig: delta must be positive");
    if (!(lambda >= 0.0)) throw std::invalid_argument("SolverConfig: lambda must be nonnegative");
    if (!(population > 0.0)) throw std::invalid_argument("SolverConfig: population must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("SolverConfig: dt must be positive");
    if (!(t_end >= 0.0)) throw std::invalid_argument("SolverConfig: t_end must be nonnegative");
    if (record_every < 1) throw std::invalid_argument("SolverConfig: record_every must be >= 1");
    if (!(cfl_safety > 0.0)) throw std::invalid_argument("SolverConfig: cfl_safety must be positive");
  }
};

/// Entropy diagnostics of a single state plus quantities accumulated up to it.
struct EntropyReport {
  double t = 0.0;
  double entropy = 0.0;              ///< H = int h(u) + (eps/2) ||L w||^2
  double entropy_density_part = 0.0; ///< int h(u)
  double regularization_part = 0.0;  ///< (eps/2) ||L w||^2
  double dissipation = 0.0;          ///< D = int grad w : B(w) grad w
  double dissipation_lb = 0.0;       ///< quadratic-form lower bound with z = grad u
  Vector mass;                       ///< int v_i, conserved by the scheme
  Vector mass_u;                     ///< int u_i(w_i)
  double min_u = 0.0;
  double max_u = 0.0;

  double dissipation_integral = 0.0; ///< sum of D dt over completed steps
  double noise_work = 0.0;           ///< sum of <w, noise increment>
  double correction_work = 0.0;      ///< sum of <w, (lambda/N) T> dt
  double ito_correction = 0.0;       ///< sum of (1/2N) sum_k int (d_x(sigma e_k))^2 pi/u dt
};

struct Snapshot {
  double t = 0.0;
  Field v, w, u;
};

struct Trajectory {
  std::vector<EntropyReport> reports;  ///< one per step, including t = 0
  std::vector<Snapshot> snapshots;     ///< every record_every steps and the final state
  std::vector<std::string> warnings;
  double dt = 0.0;
  std::uint64_t seed = 0;
  int max_newton_iterations = 0;
  int substeps_taken = 0;
};

class ComputeAbort : public std::runtime_error {
 public:
  ComputeAbort(const std::string& what, std::int64_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

// ---------------------------------------------------------------------------

/// Mobility B_ij = A_ij(u) u_j / pi_j at each cell, as n*n rows of an (n*n) x M matrix.
inline Eigen::MatrixXd cell_mobility(const Coefficients& c, const BalanceWeights& w, const Field& u) {
  const int n = u.species();
  const int M = u.cells();
  const Eigen::MatrixXd inter = c.interaction();
  Eigen::MatrixXd B(n * n, M);
  for (int m = 0; m < M; ++m) {
    for (int i = 0; i < n; ++i) {
      double At = c.diffusion(i);
      for (int k = 0; k < n; ++k) At += inter(i, k) * u.values(k, m);
      for (int j = 0; j < n; ++j) {
        const double Aij = (i == j ? At : 0.0) + inter(i, j) * u.values(i, m);
        B(i * n + j, m) = Aij * u.values(j, m) / w.pi[j];
      }
    }
  }
  return B;
}

/// Face flux sum_j B_ij grad w_j with arithmetic face averages of the cell mobility.
inline Field drift_flux(const Grid& grid, const Coefficients& c, const BalanceWeights& w,
                        const Field& ent) {
  detail::require_species(c, ent.species(), "drift_flux");
  const int n = ent.species();
  const int M = ent.cells();
  const Field u = u_of_w(w, ent);
  const Eigen::MatrixXd B = cell_mobility(c, w, u);
  Field flux(n, M + 1, FieldKind::generic);
  for (int f = 1; f < M; ++f) {
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) {
        const double Bf = 0.5 * (B(i * n + j, f - 1) + B(i * n + j, f));
        acc += Bf * (ent.values(j, f) - ent.values(j, f - 1)) / grid.dx();
      }
      flux.values(i, f) = acc;
    }
  }
  return flux;
}

/// div(B(w) grad w), zero flux at the boundary.
inline Field drift_term(const Grid& grid, const Coefficients& c, const BalanceWeights& w,
                        const Field& ent) {
  const Field flux = drift_flux(grid, c, w, ent);
  Field out(ent.species(), ent.cells(), FieldKind::generic);
  for (int i = 0; i < ent.species(); ++i) out.set_row(i, grid.divergence(flux.row(i)));
  return out;
}

/// int grad w : B grad w over interior faces, consistent with drift_term.
inline double dissipation(const Grid& grid, const Coefficients& c, const BalanceWeights& w,
                          const Field& ent) {
  const Field flux = drift_flux(grid, c, w, ent);
  double D = 0.0;
  for (int i = 0; i < ent.species(); ++i) {
    const Vector g = grid.gradient(ent.row(i));
    D += grid.integrate_faces(g.cwiseProduct(flux.row(i)));
  }
  return D;
}

/**
 * sum_i pi_i (4 a_i0 |grad sqrt u_i|^2 + 2 a_ii |grad u_i|^2)
 *   + 2 sum_{i != j} pi_i a_ij |grad sqrt(u_i u_j)|^2,
 * with face differences. Against dissipation() this is an exact discrete
 * inequality: the arithmetic face average dominates the logarithmic mean.
 */
inline double dissipation_lower_bound(const Grid& grid, const Coefficients& c,
                                      const BalanceWeights& w, const Field& u) {
  const int n = u.species();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector ui = u.row(i);
    const Vector gs = grid.gradient(ui.cwiseSqrt());
    const Vector gu = grid.gradient(ui);
    total += w.pi[i] * grid.integrate_faces(4.0 * c.diffusion(i) * gs.cwiseAbs2() +
                                            2.0 * c.cross(i, i) * gu.cwiseAbs2());
    for (int j = 0; j < n; ++j) {
      if (j == i || c.cross(i, j) == 0.0) continue;
      const Vector gp = grid.gradient(ui.cwiseProduct(u.row(j)).cwiseSqrt());
      total += 2.0 * w.pi[i] * c.cross(i, j) * grid.integrate_faces(gp.cwiseAbs2());
    }
  }
  return total;
}

/// Instantaneous part of the entropy report (accumulated fields are left at zero).
inline EntropyReport entropy_report(const Grid& grid, const Coefficients& c, const BalanceWeights& w,
                                    const Field& v, const Field& ent, double eps, const OperatorL& L) {
  const Field u = u_of_w(w, ent);
  EntropyReport r;
  r.entropy_density_part = entropy_functional(w, u, grid);
  r.regularization_part = 0.5 * eps * std::pow(L.norm(ent), 2);
  r.entropy = r.entropy_density_part + r.regularization_part;
  r.dissipation = dissipation(grid, c, w, ent);
  r.dissipation_lb = dissipation_lower_bound(grid, c, w, u);
  r.mass.resize(u.species());
  r.mass_u.resize(u.species());
  for (int i = 0; i < u.species(); ++i) {
    r.mass[i] = grid.integrate(v.row(i));
    r.mass_u[i] = grid.integrate(u.row(i));
  }
  r.min_u = u.values.minCoeff();
  r.max_u = u.values.maxCoeff();
  return r;
}

/**
 * Heuristic explicit stability limit. Freezing coefficients, a cosine mode k
 * of the drift relaxes at rate |A| lambda_k / (1 + eps mu_k^2 pi/u), where
 * lambda_k is the eigenvalue of the discrete Neumann Laplacian; the step is
 * limited to safety * 2 / max_k rate.
 */
inline double stable_dt(const Grid& grid, const Coefficients& c, const BalanceWeights& w,
                        const Field& u, const OperatorL& L, double eps, double safety) {
  double normA = 0.0;
  double min_ratio = std::numeric_limits<double>::infinity();
  for (int m = 0; m < u.cells(); ++m) {
    const Eigen::MatrixXd A = diffusion_matrix(c, u.point(m));
    normA = std::max(normA, A.cwiseAbs().rowwise().sum().maxCoeff());
    for (int i = 0; i < u.species(); ++i) min_ratio = std::min(min_ratio, w.pi[i] / u.values(i, m));
  }
  const int M = grid.cells();
  double rate = 0.0;
  for (int k = 1; k < M; ++k) {
    const double lam = std::pow(2.0 / grid.dx() * std::sin(k * std::numbers::pi / (2.0 * M)), 2);
    const double mu2 = std::pow(L.multipliers()[k], 2);
    rate = std::max(rate, normA * lam / (1.0 + eps * mu2 * min_ratio));
  }
  return rate > 0.0 ? safety * 2.0 / rate : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------

/**
 * @brief Explicit Euler-Maruyama integrator for the regularized SPDE
 *
 *   dv = div(B(w) grad w) dt + sqrt(1/N) div(sigma_delta(u) dW) + (lambda/N) T(u) dt,
 *   w = R_eps(v),  u = exp(w / pi).
 *
 * Positivity of u holds by construction. Every term is an exact discrete
 * divergence, so int v_i is conserved pathwise. The solver object is immutable
 * once constructed; randomness enters only through the Rng passed to step().
 */
class SpdeSolver {
 public:
  struct State {
    Field v;
    Field w;
    double t = 0.0;
    std::int64_t step = 0;
  };

  struct StepWork {
    double noise_work = 0.0;
    double correction_work = 0.0;
    double ito_correction = 0.0;
    int newton_iterations = 0;
    int substeps = 1;
  };

  SpdeSolver(const Grid& grid, Coefficients coeffs, BalanceWeights weights, SolverConfig cfg)
      : grid_(grid),
        coeffs_(std::move(coeffs)),
        weights_(std::move(weights)),
        cfg_(std::move(cfg)),
        L_(grid, cfg_.sobolev_order),
        basis_(grid, cfg_.noise_modes > 0 ? cfg_.noise_modes : grid.cells() / 2,
               cfg_.noise_smoothness) {
    cfg_.validate();
    coeffs_.validate();
    detail::require_weights(weights_, coeffs_.n(), "SpdeSolver");
  }

  const Grid& grid() const { return grid_; }
  const Coefficients& coefficients() const { return coeffs_; }
  const BalanceWeights& weights() const { return weights_; }
  const SolverConfig& config() const { return cfg_; }
  const OperatorL& L() const { return L_; }
  const NoiseBasis& basis() const { return basis_; }

  Field drift(const Field& ent) const { return drift_term(grid_, coeffs_, weights_, ent); }

  RegularizationResult regularize(const Field& v, const Field* warm = nullptr) const {
    return R_eps(weights_, v, cfg_.regularization(), L_, warm);
  }

  State initial_state(const Field& u0) const {
    if (u0.species() != coeffs_.n() || u0.cells() != grid_.cells()) {
      throw std::invalid_argument("SpdeSolver: initial datum has the wrong shape");
    }
    if (!u0.finite() || (u0.values.array() < 0.0).any()) {
      throw std::invalid_argument("SpdeSolver: initial datum must be finite and nonnegative");
    }
    State s;
    s.v = Field(u0.values, FieldKind::regularized_state);
    try {
      s.w = regularize(s.v).w;
    } catch (const NewtonFailure& e) {
      throw ComputeAbort(e.what(), 0);
    }
    return s;
  }

  EntropyReport report(const State& s) const {
    EntropyReport r = entropy_report(grid_, coeffs_, weights_, s.v, s.w, cfg_.epsilon, L_);
    r.t = s.t;
    return r;
  }

  double stable_step(const Field& u) const {
    return stable_dt(grid_, coeffs_, weights_, u, L_, cfg_.epsilon, cfg_.cfl_safety);
  }

  /// Advances s by dt; returns the work terms of this step.
  StepWork step(State& s, double dt, Rng& rng) const {
    StepWork work;
    const Field u = u_of_w(weights_, s.w);
    Field dv(s.v.species(), s.v.cells(), FieldKind::generic);

    if (!cfg_.deterministic) {
      const double delta = cfg_.delta_value();
      const double N = cfg_.population;
      const Field sigma = sigma_delta(coeffs_, u, delta);
      const WienerIncrement inc = sample_increment(rng, basis_, coeffs_.n(), dt);
      const Field noise = noise_divergence_term(grid_, basis_, sigma, inc, N);
      const Field T = correction_T(grid_, coeffs_, basis_, u, delta);
      dv.values = noise.values + (dt * cfg_.lambda / N) * T.values;
      for (int i = 0; i < s.v.species(); ++i) {
        work.noise_work += grid_.inner(s.w.row(i), noise.row(i));
        work.correction_work += (dt * cfg_.lambda / N) * grid_.inner(s.w.row(i), T.row(i));
      }
      work.ito_correction = dt * ito_correction_density(sigma, u) / N;
    }

    int substeps = 1;
    if (cfg_.substep_on_cfl) {
      const double limit = stable_step(u);
      if (dt > limit) substeps = static_cast<int>(std::ceil(dt / limit));
    }
    work.substeps = substeps;
    const double h = dt / substeps;
    const std::int64_t target = s.step + 1;
    try {
      Field w = s.w;
      for (int k = 0; k < substeps; ++k) {
        s.v.values += h * drift(w).values;
        if (k + 1 < substeps) {
          auto res = regularize(s.v, &w);
          w = std::move(res.w);
          work.newton_iterations = std::max(work.newton_iterations, res.iterations);
        }
      }
      s.v.values += dv.values;
      s.t += dt;
      ++s.step;
      auto res = regularize(s.v, &s.w);
      s.w = std::move(res.w);
      work.newton_iterations = std::max(work.newton_iterations, res.iterations);
    } catch (const NewtonFailure& e) {
      throw ComputeAbort(e.what(), target);
    }
    const double umax = (s.w.values.array().colwise() / weights_.pi.array()).exp().maxCoeff();
    if (!(umax <= cfg_.blowup_threshold)) {
      throw ComputeAbort("blow-up: max u = " + std::to_string(umax) + " exceeds threshold", s.step);
    }
    return work;
  }

  /// Full run from v(0) = u0.
  Trajectory run(const Field& u0) const {
    Rng rng(cfg_.seed);
    return run(u0, rng);
  }

  Trajectory run(const Field& u0, Rng& rng) const {
    Trajectory traj;
    traj.seed = cfg_.seed;
    State s = initial_state(u0);

    double dt = cfg_.dt;
    std::int64_t steps = static_cast<std::int64_t>(std::llround(cfg_.t_end / dt));
    if (steps < 1 && cfg_.t_end > 0.0) steps = 1;
    if (steps > 0) dt = cfg_.t_end / steps;
    const double limit = stable_step(u_of_w(weights_, s.w));
    if (dt > limit) {
      traj.warnings.push_back("dt = " + std::to_string(dt) + " exceeds the stability estimate " +
                              std::to_string(limit) + "; step size reduced");
      steps = static_cast<std::int64_t>(std::ceil(cfg_.t_end / limit));
      dt = cfg_.t_end / steps;
    }
    traj.dt = dt;

    EntropyReport acc = report(s);
    traj.reports.push_back(acc);
    record(traj, s);
    for (std::int64_t k = 0; k < steps; ++k) {
      const double D = acc.dissipation;
      const StepWork work = step(s, dt, rng);
      traj.max_newton_iterations = std::max(traj.max_newton_iterations, work.newton_iterations);
      traj.substeps_taken += work.substeps - 1;
      EntropyReport next = report(s);
      next.dissipation_integral = acc.dissipation_integral + D * dt;
      next.noise_work = acc.noise_work + work.noise_work;
      next.correction_work = acc.correction_work + work.correction_work;
      next.ito_correction = acc.ito_correction + work.ito_correction;
      if (!(next.min_u > 0.0)) throw ComputeAbort("positivity lost", s.step);
      acc = std::move(next);
      traj.reports.push_back(acc);
      if (s.step % cfg_.record_every == 0 || k + 1 == steps) record(traj, s);
    }
    if (traj.substeps_taken > 0) {
      traj.warnings.push_back("drift sub-stepping was used on " +
                              std::to_string(traj.substeps_taken) + " extra sub-steps");
    }
    return traj;
  }

 private:
  /// (1/2) sum_k int (d_x(sigma e_k))^2 pi / u dx, without the 1/N and dt factors.
  double ito_correction_density(const Field& sigma, const Field& u) const {
    double total = 0.0;
    for (int i = 0; i < sigma.species(); ++i) {
      const Vector sf = grid_.face_average(sigma.row(i));
      const Vector weight = weights_.pi[i] * u.row(i).cwiseInverse();
      for (int q = 0; q < basis_.size(); ++q) {
        const Vector flux = sf.cwiseProduct(basis_.faces().row(q).transpose());
        total += 0.5 * grid_.inner(grid_.divergence(flux).cwiseAbs2(), weight);
      }
    }
    return total;
  }

  void record(Trajectory& traj, const State& s) const {
    if (!traj.snapshots.empty() && traj.snapshots.back().t == s.t) return;
    traj.snapshots.push_back({s.t, s.v, s.w, u_of_w(weights_, s.w)});
  }

  Grid grid_;
  Coefficients coeffs_;
  BalanceWeights weights_;
  SolverConfig cfg_;
  OperatorL L_;
  NoiseBasis basis_;
};

/**
 * Rate C in the budget E[H(t)] <= H(0) + C t, assembled from the noise and
 * correction constants of the stochastic entropy estimate with the cached
 * basis norms. The gradient terms are taken as absorbed by the dissipation
 * (which is what the smallness condition on 1/N guarantees); `log_entropy_bound`
 * bounds sup_t max_i int (u_i log u_i - u_i + 2) dx.
 */
inline double entropy_budget_rate(const Coefficients& c, const BalanceWeights& w,
                                  const NoiseBasis& basis, double lambda, double kappa,
                                  double kappa3, double population, double log_entropy_bound) {
  const BasisNorms& nrm = basis.norms();
  double C = 0.0;
  for (int i = 0; i < c.n(); ++i) {
    C += w.pi[i] * (((32.0 * lambda + 1.0) / (2.0 * kappa) + 0.5) * nrm.grad_sup_sq *
                        log_entropy_bound +
                    (lambda / (2.0 * kappa) + 1.0 / (2.0 * kappa3)) * basis.grad_l2_sq());
  }
  return C / population;
}

}  // namespace skt
