// Command-line driver: simulate-spde, simulate-particles, verify-entropy,
// verify-covariance, check-assumptions.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "skt/skt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kPass = 0, kUsage = 1, kCheckFailed = 2, kComputeAbort = 3 };

int verbosity = 0;

void log(int level, const std::string& msg) {
  if (verbosity >= level) std::cerr << "[skt] " << msg << "\n";
}

struct Context {
  skt::RunConfig cfg;
  json resolved;
  fs::path out;
  std::string command;
};

std::ofstream open_output(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << std::setprecision(17);
  return f;
}

void write_csv_header(std::ofstream& f, const Context& ctx, std::uint64_t seed) {
  f << "# schemaVersion: " << skt::kSchemaVersion << "\n";
  f << "# command: " << ctx.command << "\n";
  f << "# seed: " << seed << "\n";
  f << "# config: " << ctx.resolved.dump() << "\n";
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f = open_output(p);
  f << j.dump(2) << "\n";
}

json base_summary(const Context& ctx, std::uint64_t seed) {
  return {{"schemaVersion", skt::kSchemaVersion},
          {"command", ctx.command},
          {"seed", seed},
          {"config", ctx.resolved}};
}

std::vector<double> to_std(const skt::Vector& v) { return {v.data(), v.data() + v.size()}; }

// ---------------------------------------------------------------------------

struct SpdeOutcome {
  skt::Trajectory traj;
  double relative_balance_error = 0.0;
  double mass_drift = 0.0;
  bool positive = true;
};

SpdeOutcome run_spde(const Context& ctx, const skt::SolverConfig& solver_cfg) {
  const skt::RunConfig& cfg = ctx.cfg;
  const skt::Grid grid = cfg.make_grid();
  const skt::BalanceWeights w = cfg.weights();
  skt::SpdeSolver solver(grid, cfg.coefficients, w, solver_cfg);
  log(1, "running SPDE: " + std::to_string(grid.cells()) + " cells, t_end " +
             std::to_string(solver_cfg.t_end) + (solver_cfg.deterministic ? ", deterministic" : ""));
  const auto t0 = std::chrono::steady_clock::now();
  SpdeOutcome out;
  out.traj = solver.run(cfg.initial_density());
  log(1, "SPDE finished in " +
             std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
             " s");
  for (const auto& msg : out.traj.warnings) log(0, "warning: " + msg);

  const auto& r0 = out.traj.reports.front();
  const auto& r1 = out.traj.reports.back();
  out.relative_balance_error =
      std::abs(r1.entropy - r0.entropy + r1.dissipation_integral) / std::max(r0.entropy, 1e-300);
  for (const auto& r : out.traj.reports) {
    out.positive = out.positive && r.min_u > 0.0;
    for (int i = 0; i < r.mass.size(); ++i) {
      out.mass_drift = std::max(out.mass_drift, std::abs(r.mass[i] - r0.mass[i]) / std::abs(r0.mass[i]));
    }
  }
  return out;
}

void write_spde_outputs(const Context& ctx, const skt::SolverConfig& scfg, const SpdeOutcome& o,
                        json extra) {
  const int n = ctx.cfg.species();
  const skt::Grid grid = ctx.cfg.make_grid();
  {
    std::ofstream f = open_output(ctx.out / "trajectory.csv");
    write_csv_header(f, ctx, scfg.seed);
    f << "t";
    for (int i = 1; i <= n; ++i) f << ",mass_" << i;
    f << ",H,D,D_lb,min_u,max_u,int_D,noise_work,correction_work,ito_correction\n";
    for (const auto& r : o.traj.reports) {
      f << r.t;
      for (int i = 0; i < n; ++i) f << "," << r.mass[i];
      f << "," << r.entropy << "," << r.dissipation << "," << r.dissipation_lb << "," << r.min_u
        << "," << r.max_u << "," << r.dissipation_integral << "," << r.noise_work << ","
        << r.correction_work << "," << r.ito_correction << "\n";
    }
  }
  {
    std::ofstream f = open_output(ctx.out / "snapshots.csv");
    write_csv_header(f, ctx, scfg.seed);
    f << "t,species,x,v,w,u\n";
    for (const auto& s : o.traj.snapshots) {
      for (int i = 0; i < n; ++i) {
        for (int m = 0; m < grid.cells(); ++m) {
          f << s.t << "," << (i + 1) << "," << (ctx.cfg.grid.origin + grid.center(m)) << ","
            << s.v.values(i, m) << "," << s.w.values(i, m) << "," << s.u.values(i, m) << "\n";
        }
      }
    }
  }
  const auto& r0 = o.traj.reports.front();
  const auto& r1 = o.traj.reports.back();
  double min_gap = std::numeric_limits<double>::infinity();
  for (const auto& r : o.traj.reports) min_gap = std::min(min_gap, r.dissipation - r.dissipation_lb);
  json summary = base_summary(ctx, scfg.seed);
  summary["dt_used"] = o.traj.dt;
  summary["steps"] = o.traj.reports.size() - 1;
  summary["warnings"] = o.traj.warnings;
  summary["max_newton_iterations"] = o.traj.max_newton_iterations;
  summary["final"] = {{"t", r1.t},
                      {"H", r1.entropy},
                      {"D", r1.dissipation},
                      {"D_lb", r1.dissipation_lb},
                      {"mass", to_std(r1.mass)},
                      {"min_u", r1.min_u},
                      {"max_u", r1.max_u}};
  summary["entropy_balance"] = {{"H0", r0.entropy},
                                {"H_end", r1.entropy},
                                {"int_D", r1.dissipation_integral},
                                {"noise_work", r1.noise_work},
                                {"correction_work", r1.correction_work},
                                {"ito_correction", r1.ito_correction},
                                {"relative_error", o.relative_balance_error}};
  summary["mass_drift_relative"] = o.mass_drift;
  summary["positivity"] = o.positive;
  summary["min_dissipation_gap"] = min_gap;
  for (auto& [k, v] : extra.items()) summary[k] = v;
  write_json(ctx.out / "summary.json", summary);
}

int cmd_simulate_spde(const Context& ctx) {
  const SpdeOutcome o = run_spde(ctx, ctx.cfg.solver);
  write_spde_outputs(ctx, ctx.cfg.solver, o, json::object());
  return kPass;
}

int cmd_verify_entropy(const Context& ctx) {
  skt::SolverConfig scfg = ctx.cfg.solver;
  scfg.deterministic = true;
  const SpdeOutcome o = run_spde(ctx, scfg);
  const bool ok = o.relative_balance_error <= ctx.cfg.entropy_tolerance;
  write_spde_outputs(ctx, scfg, o,
                     {{"check",
                       {{"name", "entropy_balance"},
                        {"tolerance", ctx.cfg.entropy_tolerance},
                        {"relative_error", o.relative_balance_error},
                        {"passed", ok}}}});
  std::cout << "entropy balance |H(T) - H(0) + int D| / H(0) = " << o.relative_balance_error
            << " (tolerance " << ctx.cfg.entropy_tolerance << "): " << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? kPass : kCheckFailed;
}

// ---------------------------------------------------------------------------

int run_covariance(const Context& ctx, bool enforce) {
  const skt::RunConfig& cfg = ctx.cfg;
  const skt::ParticleConfig& pc = cfg.particles;
  const int n = cfg.species();
  const skt::Vector sigma = cfg.particle_sigma();

  skt::ParticleParams prm;
  prm.a = cfg.coefficients.interaction();
  prm.sigma = sigma;
  prm.eta = pc.eta;
  prm.alpha = pc.alpha;
  prm.delta_c = pc.delta_c;
  const bool scaling_ok = skt::eta_scaling_holds(pc.count, pc.eta, pc.alpha, pc.delta_c);
  if (!scaling_ok) {
    log(0, "warning: eta = " + std::to_string(pc.eta) + " violates eta^{-(2+alpha)} <= sqrt(delta_c log N) at N = " +
               std::to_string(pc.count) + " (delta_c = " + std::to_string(pc.delta_c) + ")");
  }

  std::vector<skt::BumpTestFunction> tests;
  for (const auto& t : pc.test_functions) tests.push_back({t.center, t.radius});
  const int T = static_cast<int>(tests.size());
  const int steps = std::max(1, static_cast<int>(std::lround(pc.t_end / pc.dt)));
  const double dt = pc.t_end / steps;

  skt::Vector mean(n), sd(n);
  for (int i = 0; i < n; ++i) {
    mean[i] = pc.initial[i].mean;
    sd[i] = pc.initial[i].sd;
  }

  // paths(r) is steps x (n * T), row s holding M after step s + 1
  std::vector<Eigen::MatrixXd> paths(pc.replicas);
  log(1, "running " + std::to_string(pc.replicas) + " particle replicas of N = " + std::to_string(pc.count));
  skt::for_each_replica(pc.replicas, pc.parallelism, [&](int r) {
    skt::Rng rng(pc.seed + static_cast<std::uint64_t>(r));
    skt::ParticleEnsemble ens(skt::gaussian_positions(rng, mean, sd, pc.count), prm);
    skt::MartingaleAccumulator acc(n, tests);
    Eigen::MatrixXd path(steps, n * T);
    for (int s = 0; s < steps; ++s) {
      acc.accumulate(skt::particle_step(ens, dt, rng));
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < T; ++j) path(s, i * T + j) = acc.values()(i, j);
      }
    }
    paths[r] = std::move(path);
  });

  // Mean-field density from the deterministic SPDE with a_{i0} = sigma_i.
  Eigen::MatrixXd a = cfg.coefficients.a;
  a.col(0) = sigma;
  const skt::Coefficients mf_coeffs(a);
  const skt::Grid grid = cfg.make_grid();
  skt::SolverConfig scfg = cfg.solver;
  scfg.deterministic = true;
  scfg.t_end = pc.t_end;
  const int spde_steps = std::max(1, static_cast<int>(std::lround(scfg.t_end / scfg.dt)));
  scfg.record_every = std::max(1, spde_steps / pc.mean_field_records);
  skt::SpdeSolver solver(grid, mf_coeffs, skt::solve_balance_weights(mf_coeffs), scfg);
  skt::Field u0(n, grid.cells(), skt::FieldKind::density);
  for (int i = 0; i < n; ++i) {
    for (int m = 0; m < grid.cells(); ++m) {
      const double z = (cfg.grid.origin + grid.center(m) - mean[i]) / sd[i];
      u0.values(i, m) = std::exp(-0.5 * z * z) / (sd[i] * std::sqrt(2.0 * std::numbers::pi));
    }
  }
  log(1, "running mean-field SPDE");
  const skt::Trajectory mf = solver.run(u0);
  for (const auto& msg : mf.warnings) log(0, "warning: " + msg);
  std::vector<double> times;
  std::vector<skt::Field> dens;
  for (const auto& s : mf.snapshots) {
    times.push_back(s.t);
    dens.push_back(s.u);
  }

  {
    std::ofstream f = open_output(ctx.out / "martingale.csv");
    write_csv_header(f, ctx, pc.seed);
    f << "replica,t,species,test_function,M\n";
    for (int r = 0; r < pc.replicas; ++r) {
      for (int s = 0; s < steps; ++s) {
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < T; ++j) {
            f << r << "," << (s + 1) * dt << "," << (i + 1) << "," << (j + 1) << ","
              << paths[r](s, i * T + j) << "\n";
          }
        }
      }
    }
  }

  json entries = json::array();
  bool all_ok = true;
  double max_abs_z = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < T; ++j) {
      std::vector<double> samples(pc.replicas);
      for (int r = 0; r < pc.replicas; ++r) samples[r] = paths[r](steps - 1, i * T + j);
      const skt::VarianceEstimate e = skt::estimate_variance(samples);
      const auto& phi = tests[j];
      auto dphi = [&](double x) { return phi.derivative(cfg.grid.origin + x); };
      const double analytic =
          skt::analytic_covariance(grid, times, dens, prm.a, sigma, i, dphi, dphi);
      const double z = (e.variance - analytic) / e.stderr_variance;
      const bool ok = std::abs(z) <= pc.z_threshold;
      all_ok = all_ok && ok;
      max_abs_z = std::max(max_abs_z, std::abs(z));
      entries.push_back({{"species", i + 1},
                         {"test_function", {{"index", j + 1}, {"center", phi.center}, {"radius", phi.radius}}},
                         {"estimate", e.variance},
                         {"stderr", e.stderr_variance},
                         {"analytic", analytic},
                         {"z", z},
                         {"mean", e.mean},
                         {"mean_stderr", e.stderr_mean},
                         {"passed", ok}});
    }
  }
  json summary = base_summary(ctx, pc.seed);
  summary["t"] = pc.t_end;
  summary["dt_used"] = dt;
  summary["eta_scaling"] = {{"holds", scaling_ok},
                            {"eta", pc.eta},
                            {"delta_c", pc.delta_c},
                            {"alpha", pc.alpha}};
  summary["z_threshold"] = pc.z_threshold;
  summary["entries"] = entries;
  summary["max_abs_z"] = max_abs_z;
  summary["passed"] = all_ok;
  write_json(ctx.out / "covariance_summary.json", summary);

  std::cout << "covariance: max |z| = " << max_abs_z << " over " << entries.size()
            << " (species, test function) pairs: " << (all_ok ? "PASS" : "FAIL") << "\n";
  return (enforce && !all_ok) ? kCheckFailed : kPass;
}

// ---------------------------------------------------------------------------

int cmd_check_assumptions(const Context& ctx) {
  const skt::RunConfig& cfg = ctx.cfg;
  json summary = base_summary(ctx, cfg.solver.seed);
  skt::BalanceWeights w;
  try {
    w = cfg.weights();
  } catch (const skt::DetailedBalanceError& e) {
    summary["detailed_balance"] = {{"passed", false}, {"error", e.what()}};
    write_json(ctx.out / "assumptions.json", summary);
    std::cout << "detailed balance: FAIL (" << e.what() << ")\n";
    return kCheckFailed;
  }
  const double residual = skt::balance_residual(cfg.coefficients, w);
  summary["detailed_balance"] = {{"passed", true}, {"pi", to_std(w.pi)}, {"relative_residual", residual}};

  const skt::Grid grid = cfg.make_grid();
  const skt::SolverConfig& s = cfg.solver;
  const skt::NoiseBasis basis(grid, s.noise_modes > 0 ? s.noise_modes : grid.cells() / 2,
                              s.noise_smoothness);
  skt::A4Params prm;
  prm.lambda = cfg.assumptions.lambda.value_or(s.lambda);
  prm.p = cfg.assumptions.p;
  prm.kappa = cfg.assumptions.kappa;
  prm.allow_small_lambda = cfg.assumptions.allow_small_lambda;

  auto margins = [](const skt::A4Report& r) {
    return json{{"noise_amplitude", {{"lhs", r.noise_amplitude.lhs}, {"rhs", r.noise_amplitude.rhs}, {"margin", r.noise_amplitude.margin()}}},
                {"diffusion", {{"lhs", r.diffusion.lhs}, {"rhs", r.diffusion.rhs}, {"margin", r.diffusion.margin()}}},
                {"self_diffusion", {{"lhs", r.self_diffusion.lhs}, {"rhs", r.self_diffusion.rhs}, {"margin", r.self_diffusion.margin()}}},
                {"passed", r.pass()}};
  };
  const skt::A4Report at_N = skt::check_A4(cfg.coefficients, w, basis, prm, s.population);
  json grid_rows = json::array();
  for (double N : cfg.assumptions.population_grid) {
    json row = margins(skt::check_A4(cfg.coefficients, w, basis, prm, N));
    row["population"] = N;
    grid_rows.push_back(row);
  }
  const skt::BasisNorms& nrm = basis.norms();
  summary["basis"] = {{"modes", basis.size()},
                      {"smoothness", basis.smoothness()},
                      {"sup_sq", nrm.sup_sq},
                      {"grad_sup_sq", nrm.grad_sup_sq},
                      {"sup_sq_tail", nrm.sup_sq_tail},
                      {"grad_sup_sq_tail", nrm.grad_sup_sq_tail}};
  summary["lambda"] = prm.lambda;
  summary["lambda_in_regime"] = at_N.lambda_in_regime;
  summary["population"] = s.population;
  summary["at_population"] = margins(at_N);
  summary["minimal_population"] =
      at_N.minimal_population ? json(*at_N.minimal_population) : json(nullptr);
  summary["population_grid"] = grid_rows;
  summary["solver_admissible"] = cfg.coefficients.solver_admissible();
  const skt::ParticleConfig& pc = cfg.particles;
  summary["eta_scaling"] = {{"holds", skt::eta_scaling_holds(pc.count, pc.eta, pc.alpha, pc.delta_c)},
                            {"eta", pc.eta},
                            {"count", pc.count},
                            {"delta_c", pc.delta_c}};
  write_json(ctx.out / "assumptions.json", summary);

  std::cout << "detailed balance residual " << residual << "; smallness conditions at N = "
            << s.population << ": " << (at_N.pass() ? "hold" : "fail") << "; minimal N = "
            << (at_N.minimal_population ? std::to_string(*at_N.minimal_population) : "none") << "\n";
  const bool ok = at_N.minimal_population.has_value() && at_N.lambda_in_regime;
  return ok ? kPass : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic SKT cross-diffusion simulator and verification suite"};
  app.require_subcommand(1);
  std::string config_path;
  const char* env_root = std::getenv("SKT_OUTPUT_ROOT");
  std::string out_dir = env_root ? env_root : "skt_output";
  std::optional<std::uint64_t> seed;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate-spde", "Integrate the regularized SPDE and write trajectory, snapshots and summary"},
      {"simulate-particles", "Simulate particle replicas and write the martingale covariance summary"},
      {"verify-entropy", "Deterministic run; fail if the entropy balance error exceeds the tolerance"},
      {"verify-covariance", "Particle covariance vs the analytic limit; fail if any |z| exceeds the threshold"},
      {"check-assumptions", "Detailed-balance weights and the smallness conditions on 1/N"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "Run config (JSON)")->required();
    sub->add_option("-o,--out", out_dir, "Output directory (default: $SKT_OUTPUT_ROOT or ./skt_output)");
    sub->add_option("-s,--seed", seed, "Override solver and particle seeds");
    sub->add_flag("-v,--verbose", verbosity, "Verbose progress on stderr (repeatable)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kUsage;
  }

  Context ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  try {
    ctx.cfg = skt::load_config(config_path);
    if (seed) {
      ctx.cfg.solver.seed = *seed;
      ctx.cfg.particles.seed = *seed;
    }
    ctx.resolved = skt::to_json(ctx.cfg);
    if (ctx.command != "check-assumptions") ctx.cfg.weights();
  } catch (const std::exception& e) {
    std::cerr << "skt: config error: " << e.what() << "\n";
    return kUsage;
  }
  ctx.out = out_dir;
  try {
    fs::create_directories(ctx.out);
  } catch (const std::exception& e) {
    std::cerr << "skt: cannot create output directory '" << out_dir << "': " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (ctx.command == "simulate-spde") return cmd_simulate_spde(ctx);
    if (ctx.command == "verify-entropy") return cmd_verify_entropy(ctx);
    if (ctx.command == "simulate-particles") return run_covariance(ctx, false);
    if (ctx.command == "verify-covariance") return run_covariance(ctx, true);
    return cmd_check_assumptions(ctx);
  } catch (const skt::ComputeAbort& e) {
    std::cerr << "skt: compute aborted: " << e.what() << "\n";
  } catch (const skt::NewtonFailure& e) {
    std::cerr << "skt: compute aborted: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "skt: compute aborted: " << e.what() << "\n";
  }
  return kComputeAbort;
}
