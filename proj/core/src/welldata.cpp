#include "fracopt/welldata.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fracopt/error.hpp"
#include "fracopt/stats.hpp"

namespace fracopt {

std::string_view to_string(WellType t) {
  switch (t) {
    case WellType::vertical: return "vertical";
    case WellType::horizontal: return "horizontal";
    case WellType::vertical_multilateral: return "vertical_multilateral";
  }
  return "vertical";
}

std::string_view to_string(TreatmentType t) {
  return t == TreatmentType::primary ? "primary" : "refracture";
}

std::optional<WellType> parse_well_type(std::string_view label) {
  if (label == "vertical") return WellType::vertical;
  if (label == "horizontal") return WellType::horizontal;
  if (label == "vertical_multilateral") return WellType::vertical_multilateral;
  return std::nullopt;
}

std::optional<TreatmentType> parse_treatment_type(std::string_view label) {
  if (label == "primary") return TreatmentType::primary;
  if (label == "refracture") return TreatmentType::refracture;
  return std::nullopt;
}

ProductionSeries::ProductionSeries(std::vector<Checkpoint> checkpoints)
    : checkpoints_(std::move(checkpoints)) {
  for (std::size_t i = 1; i < checkpoints_.size(); ++i) {
    if (checkpoints_[i].days < checkpoints_[i - 1].days ||
        checkpoints_[i].cumulative_fluid < checkpoints_[i - 1].cumulative_fluid) {
      throw Error(ErrorKind::precondition,
                  "production checkpoints must be non-decreasing (index " + std::to_string(i) + ")");
    }
  }
}

std::optional<double> DesignParams::avg_prop_conc() const {
  if (!proppant_mass || !fluid_volume || *fluid_volume <= 0.0) return std::nullopt;
  return *proppant_mass / *fluid_volume;
}

std::array<std::optional<double>, kDesignDim> DesignParams::values() const {
  return {static_cast<double>(n_stages), pad_share, fluid_volume, proppant_mass, fluid_rate,
          final_prop_conc};
}

void DesignParams::assign(const DesignVector& v) {
  n_stages = static_cast<int>(std::lround(v[index(DesignVar::n_stages)]));
  pad_share = v[index(DesignVar::pad_share)];
  fluid_volume = v[index(DesignVar::fluid_volume)];
  proppant_mass = v[index(DesignVar::proppant_mass)];
  fluid_rate = v[index(DesignVar::fluid_rate)];
  final_prop_conc = v[index(DesignVar::final_prop_conc)];
}

std::optional<DesignVector> DesignParams::complete() const {
  DesignVector out{};
  const auto vals = values();
  for (std::size_t i = 0; i < kDesignDim; ++i) {
    if (!vals[i]) return std::nullopt;
    out[i] = *vals[i];
  }
  return out;
}

bool Normalizer::contains(std::string_view name) const { return ranges_.find(name) != ranges_.end(); }

const PercentileRange& Normalizer::range(std::string_view name) const {
  const auto it = ranges_.find(name);
  if (it == ranges_.end()) {
    throw Error(ErrorKind::schema, "feature '" + std::string(name) + "' has no normalization stats");
  }
  return it->second;
}

Normalizer Normalizer::fit(const std::vector<std::string>& names,
                           const std::vector<std::vector<double>>& columns) {
  if (names.size() != columns.size()) {
    throw Error(ErrorKind::precondition, "normalizer: names and columns differ in length");
  }
  Normalizer out;
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<double> present;
    for (double v : columns[j]) {
      if (!is_missing(v)) present.push_back(v);
    }
    if (present.size() < 2) {
      throw Error(ErrorKind::precondition,
                  "feature '" + names[j] + "' needs at least 2 non-missing values to normalize");
    }
    std::sort(present.begin(), present.end());
    out.ranges_[names[j]] = {stats::percentile_sorted(present, 1.0),
                             stats::percentile_sorted(present, 99.0)};
  }
  return out;
}

double Normalizer::scale(std::string_view name, double value) const {
  const auto& r = range(name);
  if (is_missing(value)) return value;
  if (r.p99 <= r.p1) return 0.5;
  return std::clamp((value - r.p1) / (r.p99 - r.p1), 0.0, 1.0);
}

std::vector<double> Normalizer::apply(const std::vector<std::string>& names,
                                      std::span<const double> values) const {
  if (names.size() != values.size()) {
    throw Error(ErrorKind::precondition, "normalizer: names and values differ in length");
  }
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = scale(names[i], values[i]);
  return out;
}

std::vector<std::string> Dataset::environment_names() const {
  std::vector<std::string> out;
  out.reserve(environment.size());
  for (const auto& f : environment) out.push_back(f.name);
  return out;
}

std::size_t Dataset::environment_index(std::string_view name) const {
  for (std::size_t i = 0; i < environment.size(); ++i) {
    if (environment[i].name == name) return i;
  }
  // Also accept the "name[unit]" spelling of CSV headers.
  for (std::size_t i = 0; i < environment.size(); ++i) {
    const auto& e = environment[i];
    if (!e.unit.empty() && name == e.name + "[" + e.unit + "]") return i;
  }
  throw Error(ErrorKind::schema, "unknown environment feature '" + std::string(name) + "'");
}

const WellRecord* Dataset::find(std::string_view well_id) const {
  for (const auto& r : rows) {
    if (r.well_id == well_id) return &r;
  }
  return nullptr;
}

void Dataset::validate() const {
  std::set<std::string_view> ids;
  for (const auto& r : rows) {
    if (!ids.insert(r.well_id).second) {
      throw Error(ErrorKind::ingestion, "duplicate well_id '" + r.well_id + "'");
    }
    if (r.design.n_stages < 1) {
      throw Error(ErrorKind::ingestion, "well '" + r.well_id + "' has n_stages < 1");
    }
    if (r.environment.size() != environment.size()) {
      throw Error(ErrorKind::schema, "well '" + r.well_id + "' environment does not match schema");
    }
    const auto& d = r.design;
    if (d.pad_share && (*d.pad_share < 0.0 || *d.pad_share > 1.0)) {
      throw Error(ErrorKind::ingestion, "well '" + r.well_id + "' pad_share outside [0, 1]");
    }
    for (const auto& q : {d.fluid_volume, d.proppant_mass, d.fluid_rate, d.final_prop_conc,
                          d.start_prop_conc}) {
      if (q && *q <= 0.0) {
        throw Error(ErrorKind::ingestion, "well '" + r.well_id + "' has a non-positive design quantity");
      }
    }
  }
}

std::optional<double> target_90d(const ProductionSeries& series) {
  if (series.empty()) {
    throw Error(ErrorKind::precondition, "target_90d needs at least one checkpoint");
  }
  const auto& cps = series.checkpoints();
  if (cps.back().days < kTargetHorizonDays) return std::nullopt;
  Checkpoint prev{0.0, 0.0};
  for (const auto& cp : cps) {
    if (cp.days >= kTargetHorizonDays) {
      if (cp.days == kTargetHorizonDays || cp.days == prev.days) return cp.cumulative_fluid;
      const double t = (kTargetHorizonDays - prev.days) / (cp.days - prev.days);
      return prev.cumulative_fluid + t * (cp.cumulative_fluid - prev.cumulative_fluid);
    }
    prev = cp;
  }
  return std::nullopt;
}

std::vector<std::string> numeric_feature_names(const Dataset& ds) {
  auto names = ds.environment_names();
  for (auto n : kDesignNames) names.emplace_back(n);
  return names;
}

std::vector<double> numeric_feature_values(const Dataset& ds, const WellRecord& w) {
  std::vector<double> out;
  out.reserve(ds.environment.size() + kDesignDim);
  for (const auto& v : w.environment) out.push_back(v.value_or(kMissing));
  for (const auto& v : w.design.values()) out.push_back(v.value_or(kMissing));
  return out;
}

Normalizer fit_normalizer(const Dataset& ds) {
  const auto names = numeric_feature_names(ds);
  std::vector<std::vector<double>> columns(names.size());
  for (const auto& row : ds.rows) {
    const auto vals = numeric_feature_values(ds, row);
    for (std::size_t j = 0; j < vals.size(); ++j) columns[j].push_back(vals[j]);
  }
  return Normalizer::fit(names, columns);
}

std::pair<Dataset, Dataset> split_primary_refrac(const Dataset& ds) {
  Dataset primary{ds.environment, {}, ds.normalization};
  Dataset refrac{ds.environment, {}, ds.normalization};
  for (const auto& r : ds.rows) {
    (r.treatment_type == TreatmentType::primary ? primary : refrac).rows.push_back(r);
  }
  return {std::move(primary), std::move(refrac)};
}

}  // namespace fracopt
