#include "fracopt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fracopt/error.hpp"
#include "fracopt/random.hpp"
#include "fracopt/stats.hpp"

namespace fracopt {

namespace {

struct EnvRange {
  double lo;
  double hi;
  bool log_scale;
};

// Physical ranges of the generator's environment features, schema order.
constexpr std::array<EnvRange, 7> kEnvRanges = {{
    {0.5, 50.0, true},     // permeability
    {0.10, 0.24, false},   // porosity
    {3.0, 25.0, false},    // net pay
    {180.0, 300.0, false}, // reservoir pressure
    {0.5, 4.0, false},     // oil viscosity
    {15.0, 40.0, false},   // Young's modulus
    {40.0, 120.0, false},  // gamma ray (no effect on production)
}};

constexpr std::array<std::array<double, 7>, 3> kClusterCenters = {{
    {0.20, 0.30, 0.25, 0.30, 0.70, 0.60, 0.50},
    {0.50, 0.60, 0.60, 0.55, 0.40, 0.30, 0.50},
    {0.80, 0.80, 0.85, 0.80, 0.20, 0.75, 0.50},
}};

double from_unit(std::size_t k, double z) {
  const auto& r = kEnvRanges[k];
  if (r.log_scale) return r.lo * std::pow(r.hi / r.lo, z);
  return r.lo + z * (r.hi - r.lo);
}

double floored(double v, double floor) { return std::max(v, floor); }

}  // namespace

void SyntheticSpec::validate() const {
  auto fraction = [](double v, const char* name) {
    if (!(v >= 0.0 && v < 1.0)) {
      throw Error(ErrorKind::config, std::string(name) + " must lie in [0, 1)");
    }
  };
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw Error(ErrorKind::config, "noise must be >= 0");
  fraction(missing_fraction, "missing_fraction");
  fraction(refrac_fraction, "refrac_fraction");
  fraction(short_history_fraction, "short_history_fraction");
  if (n_clusters < 1 || n_fields < 1 || n_layers < 1 || n_faces < 1) {
    throw Error(ErrorKind::config, "cluster/field/layer/face counts must be >= 1");
  }
  if (!(cluster_spread > 0.0)) throw Error(ErrorKind::config, "cluster_spread must be > 0");
  if (horizontal_fraction < 0.0 || multilateral_fraction < 0.0 ||
      horizontal_fraction + multilateral_fraction > 1.0) {
    throw Error(ErrorKind::config, "well type fractions must be non-negative and sum to <= 1");
  }
}

const std::vector<FeatureSpec>& GroundTruth::environment_schema() {
  static const std::vector<FeatureSpec> schema = {
      {"permeability", "mD"},   {"porosity", "fraction"}, {"net_pay", "m"},
      {"reservoir_pressure", "bar"}, {"oil_viscosity", "cP"}, {"youngs_modulus", "GPa"},
      {"gamma_ray", "API"}};
  return schema;
}

std::vector<double> GroundTruth::unit_scale(std::span<const double> environment) {
  if (environment.size() != kEnvRanges.size()) {
    throw Error(ErrorKind::input, "ground truth expects " + std::to_string(kEnvRanges.size()) +
                                      " environment features");
  }
  std::vector<double> z(environment.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    const auto& r = kEnvRanges[k];
    z[k] = r.log_scale ? std::log(environment[k] / r.lo) / std::log(r.hi / r.lo)
                       : (environment[k] - r.lo) / (r.hi - r.lo);
  }
  return z;
}

double GroundTruth::production(std::span<const double> environment, WellType type,
                               TreatmentType treatment, const DesignParams& design) {
  const auto d = design.complete();
  if (!d || !design.start_prop_conc) {
    throw Error(ErrorKind::input, "ground truth needs a complete design");
  }
  const auto z = unit_scale(environment);
  const double a = 1200.0 + 1800.0 * z[0] + 300.0 * z[1] + 900.0 * z[2] + 600.0 * z[3] -
                   700.0 * z[4] + 150.0 * z[5];
  const double type_factor = type == WellType::horizontal               ? 1.25
                             : type == WellType::vertical_multilateral ? 1.1
                                                                        : 1.0;
  const double n = std::max(1.0, std::round((*d)[index(DesignVar::n_stages)]));
  const double stage = std::pow(n, 0.35);
  const double mass_t = (*d)[index(DesignVar::proppant_mass)] / 1000.0 / n;
  const double m = 1.0 - std::exp(-mass_t / 35.0);
  const double c_avg = avg_prop_conc(*d);
  const double c = floored(1.0 - 0.5 * std::pow((c_avg - 330.0) / 220.0, 2), 0.2);
  const double pad = (*d)[index(DesignVar::pad_share)];
  const double p = 1.0 - 1.2 * (pad - 0.3) * (pad - 0.3);
  const double rate = (*d)[index(DesignVar::fluid_rate)];
  const double r = floored(1.0 - 0.04 * (rate - 4.5) * (rate - 4.5), 0.2);
  const double c_start = *design.start_prop_conc;
  const double c_fin = (*d)[index(DesignVar::final_prop_conc)];
  double e = 0.2;
  if (c_avg > c_start) {
    const double eps = (c_fin - c_start) / (c_avg - c_start) - 1.0;
    e = floored(1.0 - 0.25 * (eps - 1.0) * (eps - 1.0), 0.2);
  }
  const double treat = treatment == TreatmentType::primary ? 1.0 : 0.6;
  return a * type_factor * stage * (0.5 + m) * c * p * r * e * treat;
}

double GroundTruth::production(const WellRecord& well) {
  std::vector<double> env;
  env.reserve(well.environment.size());
  for (const auto& v : well.environment) {
    if (!v) throw Error(ErrorKind::input, "ground truth needs a complete environment");
    env.push_back(*v);
  }
  return production(env, well.well_type, well.treatment_type, well.design);
}

SyntheticField generate_synthetic(std::size_t n_wells, std::uint64_t seed, const SyntheticSpec& spec) {
  if (n_wells < 1) throw Error(ErrorKind::precondition, "n_wells must be >= 1");
  spec.validate();
  Rng rng(seed);
  const std::size_t dim = kEnvRanges.size();

  std::vector<std::array<double, 7>> centers(kClusterCenters.begin(),
                                             kClusterCenters.begin() +
                                                 std::min<std::size_t>(3, spec.n_clusters));
  while (centers.size() < static_cast<std::size_t>(spec.n_clusters)) {
    std::array<double, 7> c{};
    for (auto& v : c) v = rng.uniform(0.15, 0.85);
    c[6] = 0.5;
    centers.push_back(c);
  }
  // Mass-per-stage habit differs per cluster, as local practice would.
  auto mass_habit = [](int cluster) { return 0.8 + 0.2 * (cluster % 3); };

  SyntheticField out;
  out.dataset.environment = GroundTruth::environment_schema();
  out.dataset.rows.reserve(n_wells);

  for (std::size_t i = 0; i < n_wells; ++i) {
    const int cluster = static_cast<int>(rng.uniform_int(0, spec.n_clusters - 1));
    WellRecord w;
    w.well_id = "W" + std::to_string(i + 1);
    w.field_id = "f" + std::to_string(rng.uniform_int(1, spec.n_fields));
    w.layer_id = "l" + std::to_string(rng.uniform_int(1, spec.n_layers));
    w.face_id = std::string(1, static_cast<char>('a' + rng.uniform_int(0, spec.n_faces - 1)));
    const double type_draw = rng.uniform();
    w.well_type = type_draw < spec.horizontal_fraction ? WellType::horizontal
                  : type_draw < spec.horizontal_fraction + spec.multilateral_fraction
                      ? WellType::vertical_multilateral
                      : WellType::vertical;
    w.treatment_type = rng.bernoulli(spec.refrac_fraction) ? TreatmentType::refracture
                                                           : TreatmentType::primary;

    std::vector<double> env(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const double z = std::clamp(rng.normal(centers[cluster][k], spec.cluster_spread), 0.02, 0.98);
      env[k] = from_unit(k, z);
    }

    auto& d = w.design;
    switch (w.well_type) {
      case WellType::horizontal: d.n_stages = static_cast<int>(rng.uniform_int(3, 8)); break;
      case WellType::vertical_multilateral: d.n_stages = static_cast<int>(rng.uniform_int(2, 4)); break;
      case WellType::vertical: d.n_stages = static_cast<int>(rng.uniform_int(1, 2)); break;
    }
    const double mass_per_stage_t = rng.uniform(15.0, 60.0) * mass_habit(cluster);
    const double c_avg = rng.uniform(220.0, 480.0);
    const double c_start = rng.uniform(60.0, 100.0);
    const double eps = rng.uniform(0.55, 1.45);
    d.pad_share = rng.uniform(0.15, 0.45);
    d.proppant_mass = mass_per_stage_t * 1000.0 * d.n_stages;
    d.fluid_volume = *d.proppant_mass / c_avg;
    d.fluid_rate = rng.uniform(3.0, 6.0);
    d.start_prop_conc = c_start;
    d.final_prop_conc = c_start + (1.0 + eps) * (c_avg - c_start);

    const double cx = 8000.0 * static_cast<double>(cluster % 3);
    const double cy = 8000.0 * static_cast<double>(cluster / 3);
    w.coordinates = Coordinates{rng.normal(cx, 1500.0), rng.normal(cy, 1500.0)};

    out.truth.push_back(GroundTruth::production(env, w.well_type, w.treatment_type, d));
    out.latent_cluster.push_back(cluster);
    out.full_environment.push_back(env);
    for (double v : env) w.environment.emplace_back(v);
    out.dataset.rows.push_back(std::move(w));
  }

  const double sd = out.truth.size() > 1 ? std::sqrt(stats::variance(out.truth)) : 0.0;
  for (std::size_t i = 0; i < n_wells; ++i) {
    auto& w = out.dataset.rows[i];
    double target = out.truth[i];
    if (spec.noise > 0.0) target = std::max(1.0, target + rng.normal(0.0, spec.noise * sd));

    // Monthly reports on a saturating cumulative curve, rescaled so that the
    // interpolated 90-day value equals the target.
    const bool short_history = rng.bernoulli(spec.short_history_fraction);
    const int months = short_history ? 2 : static_cast<int>(rng.uniform_int(4, 6));
    std::vector<Checkpoint> cps;
    double days = 0.0;
    for (int m = 0; m < months || (!short_history && days <= kTargetHorizonDays); ++m) {
      days += static_cast<double>(m == 0 ? rng.uniform_int(10, 30) : rng.uniform_int(25, 31));
      if (short_history) days = std::min(days, 80.0);
      cps.push_back({days, 1.0 - std::exp(-days / 150.0)});
    }
    const double at90 = short_history ? 1.0 - std::exp(-90.0 / 150.0)
                                      : *target_90d(ProductionSeries(cps));
    for (auto& cp : cps) cp.cumulative_fluid *= target / at90;
    w.production = ProductionSeries(std::move(cps));

    for (auto& v : w.environment) {
      if (spec.missing_fraction > 0.0 && rng.bernoulli(spec.missing_fraction)) v.reset();
    }
  }
  return out;
}

}  // namespace fracopt
