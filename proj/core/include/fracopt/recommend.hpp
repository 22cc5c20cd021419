#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fracopt/offset.hpp"
#include "fracopt/optimize.hpp"
#include "fracopt/stacked_model.hpp"
#include "fracopt/welldata.hpp"

namespace fracopt {

/// Forward response of a well: predicted 90-day fluid for its environment
/// and design.
using ResponseFn = std::function<double(const WellRecord&)>;

/// Stacked-model response; `model` must outlive the function.
ResponseFn model_response(const StackedModel& model, std::vector<std::string> environment_names);
/// Noiseless synthetic-generator response (needs a complete environment in
/// the generator's schema).
ResponseFn truth_response();

struct RecommendConfig {
  std::vector<Method> methods{Method::de, Method::pso, Method::local, Method::sbo};
  Method retro_method = Method::sbo;
  int budget = 200;
  std::uint64_t seed = 0;
  std::size_t impute_topn = 10;
  double default_c_start = 80.0;
  PilotClusterOptions cluster;
  OptimizerConfig optimizer;
  /// Forwarded to every optimisation problem.
  const std::atomic<bool>* cancel = nullptr;
};

struct PreparedPilot {
  PilotCluster cluster;
  /// Pilot with its environment gaps filled.
  WellRecord pilot;
  ImputeResult imputation;
  /// Similar wells used as imputation donors, closest first.
  std::vector<std::string> donors;
  double c_start = 80.0;
  std::string c_start_source;
};

/// Builds the pilot cluster and fills environment gaps with the mean over
/// the `impute_topn` most similar cluster members.
PreparedPilot prepare_pilot(const Dataset& ds, const WellRecord& pilot, const RecommendConfig& config);

/// The design problem for a prepared pilot: cluster bounds, ramp
/// constraint, environment frozen at the pilot's values.
OptimizationProblem pilot_problem(const PreparedPilot& prepared, ResponseFn response, int budget);

struct Recommendation {
  PreparedPilot prepared;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<OptimizationResult> results;

  /// One row per method: best value, feasibility, evaluations, epsilon and
  /// the recommended design.
  std::string comparison_csv() const;
  /// Recommended values as a percentage of [lower, upper] per parameter.
  std::string percent_csv() const;
  nlohmann::json to_json() const;
};

/// 0 at the lower bound, 100 at the upper bound (0 when the bounds coincide).
double percent_of_bounds(double value, double lower, double upper);

Recommendation recommend(const Dataset& ds, const ResponseFn& response, const WellRecord& pilot,
                         const RecommendConfig& config = {});

struct RetroResult {
  PreparedPilot prepared;
  std::vector<double> actual_design;
  std::vector<double> lower;
  std::vector<double> upper;
  double actual_value = 0.0;
  double optimized_value = 0.0;
  double uplift_pct = 0.0;
  /// Bounds were widened so that the actual design fits inside them.
  bool relaxed_bounds = false;
  OptimizationResult result;

  nlohmann::json to_json() const;
};

/// Runs `retro_method` with proppant_mass capped at the actual value and
/// the actual design seeded into the initial sample.
RetroResult retrospective(const Dataset& ds, const ResponseFn& response, const WellRecord& pilot,
                          const RecommendConfig& config = {});

}  // namespace fracopt
