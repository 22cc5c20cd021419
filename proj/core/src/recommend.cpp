#include "fracopt/recommend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fracopt/error.hpp"
#include "fracopt/synthetic.hpp"
#include "fracopt/welldata_io.hpp"

namespace fracopt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> raw_environment(const WellRecord& w, std::size_t n) {
  std::vector<double> out(n, kNaN);
  for (std::size_t i = 0; i < n && i < w.environment.size(); ++i)
    if (w.environment[i]) out[i] = *w.environment[i];
  return out;
}

// Distance over the features both vectors have, rescaled to the full
// dimension so that sparse rows are not favoured.
double partial_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  std::size_t shared = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) continue;
    s += (a[i] - b[i]) * (a[i] - b[i]);
    ++shared;
  }
  if (shared == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(s * static_cast<double>(a.size()) / static_cast<double>(shared));
}

DesignVector cluster_means(const PilotCluster& c) {
  DesignVector v{};
  for (std::size_t i = 0; i < kDesignDim; ++i) v[i] = c.bounds[i].mean;
  return v;
}

}  // namespace

ResponseFn model_response(const StackedModel& model, std::vector<std::string> environment_names) {
  return [&model, names = std::move(environment_names)](const WellRecord& w) {
    return model.predict_record(w, names);
  };
}

ResponseFn truth_response() {
  return [](const WellRecord& w) { return GroundTruth::production(w); };
}

PreparedPilot prepare_pilot(const Dataset& ds, const WellRecord& pilot, const RecommendConfig& config) {
  PreparedPilot out;
  out.cluster = build_pilot_cluster(ds, pilot, config.cluster);
  out.pilot = pilot;

  const auto names = ds.environment_names();
  const Normalizer norm = ds.normalization ? *ds.normalization : fit_normalizer(ds);
  const auto pilot_norm = normalized_environment(ds, norm, pilot);

  struct Donor {
    std::string id;
    double distance;
    std::vector<double> raw;
  };
  std::vector<Donor> donors;
  for (const auto& id : out.cluster.members) {
    if (id == pilot.well_id) continue;
    const WellRecord* w = ds.find(id);
    if (!w) continue;
    donors.push_back({id, partial_distance(pilot_norm, normalized_environment(ds, norm, *w)),
                      raw_environment(*w, names.size())});
  }
  std::stable_sort(donors.begin(), donors.end(), [](const Donor& a, const Donor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });

  std::vector<std::vector<double>> donor_rows;
  for (const auto& d : donors) {
    if (out.donors.size() < config.impute_topn) out.donors.push_back(d.id);
    donor_rows.push_back(d.raw);
  }
  const auto means = environment_means(ds);
  out.imputation =
      impute_topn_mean(raw_environment(pilot, names.size()), donor_rows, config.impute_topn, names, means);
  out.pilot.environment.assign(names.size(), std::nullopt);
  for (std::size_t i = 0; i < names.size(); ++i) out.pilot.environment[i] = out.imputation.values[i];

  if (pilot.design.start_prop_conc) {
    out.c_start = *pilot.design.start_prop_conc;
    out.c_start_source = "pilot";
  } else if (out.cluster.start_conc_mean) {
    out.c_start = *out.cluster.start_conc_mean;
    out.c_start_source = "cluster";
  } else {
    out.c_start = config.default_c_start;
    out.c_start_source = "default";
  }
  return out;
}

OptimizationProblem pilot_problem(const PreparedPilot& prepared, ResponseFn response, int budget) {
  DesignVector lo{}, hi{};
  for (std::size_t i = 0; i < kDesignDim; ++i) {
    lo[i] = prepared.cluster.bounds[i].lower;
    hi[i] = prepared.cluster.bounds[i].upper;
  }
  Objective objective = [base = prepared.pilot, c_start = prepared.c_start,
                         response = std::move(response)](std::span<const double> x) {
    WellRecord w = base;
    DesignVector d{};
    std::copy(x.begin(), x.end(), d.begin());
    w.design.assign(d);
    w.design.start_prop_conc = c_start;
    return response(w);
  };
  auto problem = make_design_problem(lo, hi, std::move(objective), prepared.c_start, budget);
  const DesignVector mean = cluster_means(prepared.cluster);
  problem.seeds.push_back(snap(problem, mean));
  return problem;
}

double percent_of_bounds(double value, double lower, double upper) {
  if (!(upper > lower)) return 0.0;
  return 100.0 * (value - lower) / (upper - lower);
}

std::string Recommendation::comparison_csv() const {
  std::ostringstream os;
  os << "method,best_value,feasible,evaluations,epsilon";
  for (auto n : kDesignNames) os << ',' << n;
  os << '\n';
  for (const auto& r : results) {
    os << to_string(r.method) << ',' << format_double(r.best_value) << ',' << (r.feasible ? "true" : "false")
       << ',' << r.evaluations() << ',';
    if (r.best_design.size() == kDesignDim) {
      const auto e = epsilon(prepared.c_start, r.best_design[index(DesignVar::final_prop_conc)],
                             r.best_design[index(DesignVar::proppant_mass)] /
                                 r.best_design[index(DesignVar::fluid_volume)]);
      if (e) os << format_double(*e);
    }
    for (double v : r.best_design) os << ',' << format_double(v);
    os << '\n';
  }
  return os.str();
}

std::string Recommendation::percent_csv() const {
  std::ostringstream os;
  os << "method,parameter,value,lower,upper,percent_of_bounds\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.best_design.size() && i < lower.size(); ++i) {
      os << to_string(r.method) << ',' << kDesignNames[i] << ',' << format_double(r.best_design[i]) << ','
         << format_double(lower[i]) << ',' << format_double(upper[i]) << ','
         << format_double(percent_of_bounds(r.best_design[i], lower[i], upper[i])) << '\n';
    }
  }
  return os.str();
}

namespace {

nlohmann::json prepared_json(const PreparedPilot& p) {
  nlohmann::json imputed = nlohmann::json::array();
  for (const auto& v : p.imputation.report)
    imputed.push_back({{"feature", v.feature},
                       {"value", v.value},
                       {"strategy", to_string(v.strategy)},
                       {"donors", v.donors},
                       {"global_fallback", v.global_fallback}});
  return {{"cluster", p.cluster.to_json()},
          {"imputed", imputed},
          {"imputation_donors", p.donors},
          {"warnings", p.imputation.warnings},
          {"start_prop_conc", p.c_start},
          {"start_prop_conc_source", p.c_start_source}};
}

std::vector<std::string> design_names() { return {kDesignNames.begin(), kDesignNames.end()}; }

}  // namespace

nlohmann::json Recommendation::to_json() const {
  const auto names = design_names();
  nlohmann::json res = nlohmann::json::array();
  for (const auto& r : results) res.push_back(r.to_json(names));
  return {{"pilot_id", prepared.pilot.well_id},
          {"prepared", prepared_json(prepared)},
          {"lower", lower},
          {"upper", upper},
          {"results", res}};
}

Recommendation recommend(const Dataset& ds, const ResponseFn& response, const WellRecord& pilot,
                         const RecommendConfig& config) {
  if (config.methods.empty()) throw Error(ErrorKind::config, "no optimisation method selected");
  Recommendation rec;
  rec.prepared = prepare_pilot(ds, pilot, config);
  auto problem = pilot_problem(rec.prepared, response, config.budget);
  problem.cancel = config.cancel;
  problem.validate();
  rec.lower = problem.lower;
  rec.upper = problem.upper;
  for (Method m : config.methods) rec.results.push_back(run_method(m, problem, config.seed, config.optimizer));
  return rec;
}

nlohmann::json RetroResult::to_json() const {
  return {{"pilot_id", prepared.pilot.well_id},
          {"prepared", prepared_json(prepared)},
          {"actual_design", actual_design},
          {"lower", lower},
          {"upper", upper},
          {"actual_value", actual_value},
          {"optimized_value", optimized_value},
          {"uplift_pct", uplift_pct},
          {"relaxed_bounds", relaxed_bounds},
          {"result", result.to_json(design_names())}};
}

RetroResult retrospective(const Dataset& ds, const ResponseFn& response, const WellRecord& pilot,
                          const RecommendConfig& config) {
  const auto actual = pilot.design.complete();
  if (!actual) throw Error(ErrorKind::input, "well " + pilot.well_id + " has an incomplete design");

  RetroResult out;
  out.prepared = prepare_pilot(ds, pilot, config);
  out.actual_design.assign(actual->begin(), actual->end());

  auto problem = pilot_problem(out.prepared, response, config.budget);
  const std::size_t m = index(DesignVar::proppant_mass);
  problem.upper[m] = (*actual)[m];
  problem.mass_cap = (*actual)[m];
  for (std::size_t i = 0; i < kDesignDim; ++i) {
    if ((*actual)[i] < problem.lower[i]) {
      problem.lower[i] = (*actual)[i];
      out.relaxed_bounds = true;
    }
    if ((*actual)[i] > problem.upper[i]) {
      problem.upper[i] = (*actual)[i];
      out.relaxed_bounds = true;
    }
  }
  // The integer bounds must stay integral for snapping.
  const std::size_t s = index(DesignVar::n_stages);
  problem.lower[s] = std::floor(problem.lower[s]);
  problem.upper[s] = std::ceil(problem.upper[s]);

  const double c_avg = (*actual)[m] / (*actual)[index(DesignVar::fluid_volume)];
  const auto eps = epsilon(problem.ramp->c_start, (*actual)[index(DesignVar::final_prop_conc)], c_avg);
  if (!eps) {
    problem.ramp.reset();
    out.relaxed_bounds = true;
  } else if (*eps < problem.ramp->lo || *eps > problem.ramp->hi) {
    problem.ramp->lo = std::min(problem.ramp->lo, *eps);
    problem.ramp->hi = std::max(problem.ramp->hi, *eps);
    out.relaxed_bounds = true;
  }

  problem.seeds.insert(problem.seeds.begin(), out.actual_design);
  problem.cancel = config.cancel;
  problem.validate();
  out.lower = problem.lower;
  out.upper = problem.upper;

  out.actual_value = problem.objective(out.actual_design);
  if (!(std::abs(out.actual_value) > 0.0))
    throw Error(ErrorKind::numerical, "actual design of " + pilot.well_id + " has zero response");

  out.result = run_method(config.retro_method, problem, config.seed, config.optimizer);
  out.optimized_value = out.result.feasible ? std::max(out.result.best_value, out.actual_value) : out.actual_value;
  out.uplift_pct = 100.0 * (out.optimized_value - out.actual_value) / std::abs(out.actual_value);
  return out;
}

}  // namespace fracopt
