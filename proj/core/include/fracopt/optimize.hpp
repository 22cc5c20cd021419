#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fracopt/gp.hpp"
#include "fracopt/welldata.hpp"

namespace fracopt {

/// Ramp parameter of a proppant schedule; nullopt when c_avg <= c_start.
std::optional<double> epsilon(double c_start, double c_fin, double c_avg);

/// Ramp constraint on a six-parameter design vector: eps(c_start,
/// final_prop_conc, proppant_mass / fluid_volume) must lie in [lo, hi].
struct RampConstraint {
  double c_start = 80.0;
  double lo = 0.5;
  double hi = 1.5;
};

using Objective = std::function<double(std::span<const double>)>;

struct OptimizationProblem {
  std::vector<std::string> names;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<bool> integer;
  Objective objective;
  /// Only meaningful for the six-parameter design layout.
  std::optional<RampConstraint> ramp;
  /// Upper limit on proppant_mass (design layout only).
  std::optional<double> mass_cap;
  int budget = 200;
  /// Designs evaluated before anything else (cluster mean, actual design).
  std::vector<std::vector<double>> seeds;
  /// Polled between objective calls; a set flag aborts with a cancelled error.
  const std::atomic<bool>* cancel = nullptr;

  std::size_t dim() const { return lower.size(); }
  /// Throws a config error on malformed problems (lower > upper, budget < 10,
  /// missing objective, layout mismatch).
  void validate() const;
};

/// Design problem over the six parameters with n_stages integral. Integer
/// bounds are tightened to [ceil(lower), floor(upper)].
OptimizationProblem make_design_problem(const std::array<double, kDesignDim>& lower,
                                        const std::array<double, kDesignDim>& upper, Objective objective,
                                        double c_start, int budget = 200);

struct Violation {
  std::string constraint;
  /// Signed slack; negative means violated by that amount.
  double margin = 0.0;
};

struct FeasibilityReport {
  bool feasible = true;
  std::vector<Violation> violations;
  std::optional<double> epsilon;
  /// Width-relative sum of violations, used by the penalty.
  double total_violation = 0.0;
};

FeasibilityReport check_feasible(const OptimizationProblem& problem, std::span<const double> x);

/// Rounds integer coordinates and clips to the box.
std::vector<double> snap(const OptimizationProblem& problem, std::span<const double> x);

struct TraceEntry {
  std::vector<double> design;
  double value = 0.0;
  double penalized = 0.0;
  bool feasible = true;
};

enum class Method { de, pso, local, sbo, random };
std::string_view to_string(Method m);
std::optional<Method> parse_method(std::string_view s);

struct OptimizationResult {
  Method method = Method::de;
  std::vector<double> best_design;
  double best_value = 0.0;
  bool feasible = false;
  std::vector<TraceEntry> trace;
  std::vector<std::string> warnings;
  double wall_time_s = 0.0;

  std::size_t evaluations() const { return trace.size(); }
  /// Wall time is left out unless asked for, so seeded results serialise
  /// identically.
  nlohmann::json to_json(const std::vector<std::string>& names, bool include_timing = false) const;
};

struct DeConfig {
  int population = 15;
  double f = 0.7;
  double cr = 0.9;
  /// Share of the budget kept for a final gradient polish of the best point.
  double polish_fraction = 0.4;
};

struct PsoConfig {
  int swarm = 15;
  double inertia = 0.72;
  double cognitive = 1.49;
  double social = 1.49;
  double polish_fraction = 0.4;
};

struct LocalConfig {
  /// Central-difference step as a fraction of the box width.
  double fd_step = 1e-3;
  int max_backtracks = 30;
};

struct SboConfig {
  AcquisitionKind kind = AcquisitionKind::expected_improvement;
  /// Initial space-filling sample size; 0 means 2 * dim.
  int initial = 0;
  int inner_population = 20;
  int inner_generations = 40;
  /// Full hyperparameter search while the sample is small, then every
  /// `refit_every` proposals (warm-started in between).
  int full_refit_until = 30;
  int refit_every = 5;
  int max_rejections = 10000;
};

struct OptimizerConfig {
  DeConfig de;
  PsoConfig pso;
  LocalConfig local;
  SboConfig sbo;
};

OptimizationResult optimize_de(const OptimizationProblem& problem, std::uint64_t seed, const DeConfig& config = {},
                               const LocalConfig& polish = {});
OptimizationResult optimize_pso(const OptimizationProblem& problem, std::uint64_t seed, const PsoConfig& config = {},
                                const LocalConfig& polish = {});
OptimizationResult optimize_local(const OptimizationProblem& problem, std::uint64_t seed,
                                  const LocalConfig& config = {});
OptimizationResult optimize_sbo(const OptimizationProblem& problem, std::uint64_t seed, const SboConfig& config = {});
OptimizationResult optimize_random(const OptimizationProblem& problem, std::uint64_t seed);

OptimizationResult run_method(Method m, const OptimizationProblem& problem, std::uint64_t seed,
                              const OptimizerConfig& config = {});

}  // namespace fracopt
