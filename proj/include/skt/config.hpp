#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skt/core_model.hpp"
#include "skt/grid.hpp"
#include "skt/spde_solver.hpp"

namespace skt {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// u0(x) = base + amplitude * exp(-(x - center)^2 / (2 width^2)), x in domain coordinates.
struct InitialProfile {
  double base = 1.0;
  double amplitude = 0.0;
  double center = 0.5;
  double width = 0.1;

  double operator()(double x) const {
    return base + amplitude * std::exp(-0.5 * std::pow((x - center) / width, 2));
  }
};

struct GridConfig {
  double origin = 0.0;
  double length = 1.0;
  int cells = 128;
};

struct ParticleGaussian {
  double mean = 0.0;
  double sd = 1.0;
};

struct TestFunctionConfig {
  double center = 0.0;
  double radius = 1.0;
};

struct ParticleConfig {
  int count = 1000;
  std::optional<std::vector<double>> sigma;  ///< defaults to a_{i0}
  double eta = 0.05;
  double alpha = 1.0;
  double delta_c = 1.0;
  double dt = 0.005;
  double t_end = 0.25;
  int replicas = 200;
  std::uint64_t seed = 7;
  int parallelism = 1;
  std::vector<ParticleGaussian> initial;
  std::vector<TestFunctionConfig> test_functions;
  double z_threshold = 3.0;
  int mean_field_records = 100;
};

struct AssumptionConfig {
  double p = 3.0;
  double kappa = 0.5;
  std::optional<double> lambda;  ///< defaults to solver.lambda
  bool allow_small_lambda = false;
  std::vector<double> population_grid;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  Coefficients coefficients;
  std::optional<std::vector<double>> pi;
  GridConfig grid;
  std::vector<InitialProfile> initial;
  SolverConfig solver;
  double entropy_tolerance = 1e-2;
  ParticleConfig particles;
  AssumptionConfig assumptions;
  nlohmann::json raw;  ///< input document as read

  int species() const { return coefficients.n(); }
  Grid make_grid() const { return Grid(grid.length, grid.cells); }

  /// Explicit weights if given (checked against detailed balance), solved otherwise.
  BalanceWeights weights() const {
    if (!pi) return solve_balance_weights(coefficients);
    BalanceWeights w{Eigen::Map<const Vector>(pi->data(), static_cast<Eigen::Index>(pi->size()))};
    detail::require_weights(w, species(), "config model.pi");
    const double res = balance_residual(coefficients, w);
    if (res > 1e-12) {
      throw DetailedBalanceError("model.pi violates detailed balance (relative residual " +
                                 std::to_string(res) + ")");
    }
    return w;
  }

  Field initial_density() const {
    const Grid g = make_grid();
    Field u(species(), g.cells(), FieldKind::density);
    for (int i = 0; i < species(); ++i) {
      for (int m = 0; m < g.cells(); ++m) u.values(i, m) = initial[i](grid.origin + g.center(m));
    }
    return u;
  }

  Vector particle_sigma() const {
    if (particles.sigma) {
      return Eigen::Map<const Vector>(particles.sigma->data(),
                                      static_cast<Eigen::Index>(particles.sigma->size()));
    }
    return coefficients.a.col(0);
  }
};

namespace detail {

/// Object view that records which keys were consumed and rejects the rest.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const nlohmann::json& at(const std::string& key) {
    if (!has(key)) throw ConfigError(path_ + "." + key + ": required key missing");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    try {
      return at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (has(key)) out = get<T>(key);
  }

  template <class T>
  void read(const std::string& key, std::optional<T>& out) {
    if (has(key) && !j_.at(key).is_null()) out = get<T>(key);
  }

  StrictObject child(const std::string& key) { return StrictObject(at(key), path_ + "." + key); }
  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(path + ": ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw ConfigError(path + ": non-numeric entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace detail

/// Parses and validates a run config. Every key is optional except model.a and schemaVersion.
inline RunConfig parse_config(const nlohmann::json& doc) {
  using detail::StrictObject;
  RunConfig cfg;
  cfg.raw = doc;
  StrictObject root(doc, "$");

  cfg.schema_version = root.get<int>("schemaVersion");
  detail::require(cfg.schema_version == kSchemaVersion,
                  "$.schemaVersion: unsupported version " + std::to_string(cfg.schema_version));

  {
    StrictObject m = root.child("model");
    try {
      cfg.coefficients = Coefficients(detail::matrix_from_json(m.at("a"), m.path("a")));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("$.model.a: ") + e.what());
    }
    m.read("pi", cfg.pi);
    m.finish();
  }
  const int n = cfg.species();

  if (root.has("grid")) {
    StrictObject g = root.child("grid");
    g.read("origin", cfg.grid.origin);
    g.read("length", cfg.grid.length);
    g.read("cells", cfg.grid.cells);
    g.finish();
  }
  detail::require(cfg.grid.length > 0.0, "$.grid.length: must be positive");
  detail::require(cfg.grid.cells >= 8, "$.grid.cells: must be at least 8");

  if (root.has("initial")) {
    const auto& arr = root.at("initial");
    detail::require(arr.is_array(), "$.initial: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      StrictObject p(arr[i], "$.initial[" + std::to_string(i) + "]");
      InitialProfile prof;
      p.read("base", prof.base);
      p.read("amplitude", prof.amplitude);
      p.read("center", prof.center);
      p.read("width", prof.width);
      p.finish();
      detail::require(prof.width > 0.0, p.path("width") + ": must be positive");
      detail::require(prof.base >= 0.0 && prof.base + std::min(prof.amplitude, 0.0) >= 0.0,
                      "$.initial[" + std::to_string(i) + "]: profile must be nonnegative");
      cfg.initial.push_back(prof);
    }
  } else {
    for (int i = 0; i < n; ++i) {
      cfg.initial.push_back({1.0, 0.5, cfg.grid.origin + cfg.grid.length * (i + 1) / (n + 1),
                             0.1 * cfg.grid.length});
    }
  }
  detail::require(static_cast<int>(cfg.initial.size()) == n,
                  "$.initial: need one profile per species");

  SolverConfig& s = cfg.solver;
  if (root.has("noise")) {
    StrictObject nz = root.child("noise");
    nz.read("modes", s.noise_modes);
    nz.read("smoothness", s.noise_smoothness);
    nz.finish();
  }
  detail::require(s.noise_modes >= 0 && s.noise_modes <= cfg.grid.cells,
                  "$.noise.modes: must lie in [0, grid.cells]");
  detail::require(s.noise_smoothness > 1.5, "$.noise.smoothness: must exceed 1.5");

  if (root.has("solver")) {
    StrictObject so = root.child("solver");
    so.read("epsilon", s.epsilon);
    so.read("delta", s.delta);
    so.read("lambda", s.lambda);
    so.read("population", s.population);
    so.read("dt", s.dt);
    so.read("t_end", s.t_end);
    so.read("seed", s.seed);
    so.read("deterministic", s.deterministic);
    so.read("record_every", s.record_every);
    so.read("sobolev_order", s.sobolev_order);
    so.read("cfl_safety", s.cfl_safety);
    so.read("substep_on_cfl", s.substep_on_cfl);
    so.read("blowup_threshold", s.blowup_threshold);
    so.read("newton_tol", s.newton_tol);
    so.read("newton_max_iter", s.newton_max_iter);
    so.read("entropy_tolerance", cfg.entropy_tolerance);
    so.finish();
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("$.solver: ") + e.what());
  }
  detail::require(s.sobolev_order >= 1, "$.solver.sobolev_order: must be at least 1");

  ParticleConfig& p = cfg.particles;
  if (root.has("particles")) {
    StrictObject po = root.child("particles");
    po.read("count", p.count);
    po.read("sigma", p.sigma);
    po.read("eta", p.eta);
    po.read("alpha", p.alpha);
    po.read("delta_c", p.delta_c);
    po.read("dt", p.dt);
    po.read("t_end", p.t_end);
    po.read("replicas", p.replicas);
    po.read("seed", p.seed);
    po.read("parallelism", p.parallelism);
    po.read("z_threshold", p.z_threshold);
    po.read("mean_field_records", p.mean_field_records);
    if (po.has("initial")) {
      const auto& arr = po.at("initial");
      detail::require(arr.is_array(), "$.particles.initial: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        StrictObject g(arr[i], "$.particles.initial[" + std::to_string(i) + "]");
        ParticleGaussian pg;
        g.read("mean", pg.mean);
        g.read("sd", pg.sd);
        g.finish();
        detail::require(pg.sd > 0.0, g.path("sd") + ": must be positive");
        p.initial.push_back(pg);
      }
    }
    if (po.has("test_functions")) {
      const auto& arr = po.at("test_functions");
      detail::require(arr.is_array(), "$.particles.test_functions: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        StrictObject g(arr[i], "$.particles.test_functions[" + std::to_string(i) + "]");
        TestFunctionConfig tf;
        g.read("center", tf.center);
        g.read("radius", tf.radius);
        g.finish();
        detail::require(tf.radius > 0.0, g.path("radius") + ": must be positive");
        p.test_functions.push_back(tf);
      }
    }
    po.finish();
  }
  if (p.initial.empty()) {
    for (int i = 0; i < n; ++i) p.initial.push_back({cfg.initial[i].center, cfg.initial[i].width});
  }
  if (p.test_functions.empty()) {
    const double c = cfg.grid.origin + 0.5 * cfg.grid.length;
    p.test_functions = {{c - 0.5, 0.4}, {c, 0.4}, {c + 0.5, 0.4}};
  }
  detail::require(p.count >= 1, "$.particles.count: must be positive");
  detail::require(p.replicas >= 2, "$.particles.replicas: need at least 2");
  detail::require(p.parallelism >= 1, "$.particles.parallelism: must be positive");
  detail::require(p.dt > 0.0 && p.t_end > 0.0, "$.particles: dt and t_end must be positive");
  detail::require(p.eta > 0.0 && p.alpha > 0.0 && p.delta_c > 0.0,
                  "$.particles: eta, alpha and delta_c must be positive");
  detail::require(p.mean_field_records >= 2, "$.particles.mean_field_records: need at least 2");
  detail::require(static_cast<int>(p.initial.size()) == n,
                  "$.particles.initial: need one entry per species");
  detail::require(!p.sigma || static_cast<int>(p.sigma->size()) == n,
                  "$.particles.sigma: need one entry per species");

  AssumptionConfig& a = cfg.assumptions;
  if (root.has("assumptions")) {
    StrictObject ao = root.child("assumptions");
    ao.read("p", a.p);
    ao.read("kappa", a.kappa);
    ao.read("lambda", a.lambda);
    ao.read("allow_small_lambda", a.allow_small_lambda);
    ao.read("population_grid", a.population_grid);
    ao.finish();
  }
  detail::require(a.p > 2.0, "$.assumptions.p: must exceed 2");
  detail::require(a.kappa > 0.0 && a.kappa <= 0.5, "$.assumptions.kappa: must lie in (0, 1/2]");
  if (a.population_grid.empty()) {
    for (int k = 0; k < 10; ++k) a.population_grid.push_back(std::pow(10.0, 1 + k));
  }

  root.finish();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

/// Fully resolved config (defaults filled in), as embedded in every output.
inline nlohmann::json to_json(const RunConfig& cfg) {
  using nlohmann::json;
  json a = json::array();
  for (int i = 0; i < cfg.coefficients.a.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < cfg.coefficients.a.cols(); ++j) row.push_back(cfg.coefficients.a(i, j));
    a.push_back(row);
  }
  json model = {{"a", a}};
  if (cfg.pi) model["pi"] = *cfg.pi;

  json initial = json::array();
  for (const auto& p : cfg.initial) {
    initial.push_back({{"base", p.base}, {"amplitude", p.amplitude}, {"center", p.center}, {"width", p.width}});
  }
  const SolverConfig& s = cfg.solver;
  json solver = {{"epsilon", s.epsilon},
                 {"delta", s.delta_value()},
                 {"lambda", s.lambda},
                 {"population", s.population},
                 {"dt", s.dt},
                 {"t_end", s.t_end},
                 {"seed", s.seed},
                 {"deterministic", s.deterministic},
                 {"record_every", s.record_every},
                 {"sobolev_order", s.sobolev_order},
                 {"cfl_safety", s.cfl_safety},
                 {"substep_on_cfl", s.substep_on_cfl},
                 {"blowup_threshold", s.blowup_threshold},
                 {"newton_tol", s.newton_tol},
                 {"newton_max_iter", s.newton_max_iter},
                 {"entropy_tolerance", cfg.entropy_tolerance}};

  const ParticleConfig& p = cfg.particles;
  json pinit = json::array();
  for (const auto& g : p.initial) pinit.push_back({{"mean", g.mean}, {"sd", g.sd}});
  json tests = json::array();
  for (const auto& t : p.test_functions) tests.push_back({{"center", t.center}, {"radius", t.radius}});
  const Vector sig = cfg.particle_sigma();
  json particles = {{"count", p.count},
                    {"sigma", std::vector<double>(sig.data(), sig.data() + sig.size())},
                    {"eta", p.eta},
                    {"alpha", p.alpha},
                    {"delta_c", p.delta_c},
                    {"dt", p.dt},
                    {"t_end", p.t_end},
                    {"replicas", p.replicas},
                    {"seed", p.seed},
                    {"parallelism", p.parallelism},
                    {"z_threshold", p.z_threshold},
                    {"mean_field_records", p.mean_field_records},
                    {"initial", pinit},
                    {"test_functions", tests}};

  const AssumptionConfig& as = cfg.assumptions;
  json assumptions = {{"p", as.p},
                      {"kappa", as.kappa},
                      {"lambda", as.lambda.value_or(s.lambda)},
                      {"allow_small_lambda", as.allow_small_lambda},
                      {"population_grid", as.population_grid}};

  return {{"schemaVersion", cfg.schema_version},
          {"model", model},
          {"grid", {{"origin", cfg.grid.origin}, {"length", cfg.grid.length}, {"cells", cfg.grid.cells}}},
          {"initial", initial},
          {"noise", {{"modes", s.noise_modes > 0 ? s.noise_modes : cfg.grid.cells / 2},
                     {"smoothness", s.noise_smoothness}}},
          {"solver", solver},
          {"particles", particles},
          {"assumptions", assumptions}};
}

}  // namespace skt
