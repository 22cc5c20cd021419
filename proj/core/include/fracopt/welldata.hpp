#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fracopt {

enum class WellType { vertical, horizontal, vertical_multilateral };
enum class TreatmentType { primary, refracture };

std::string_view to_string(WellType t);
std::string_view to_string(TreatmentType t);
std::optional<WellType> parse_well_type(std::string_view label);
std::optional<TreatmentType> parse_treatment_type(std::string_view label);

/// One production report: cumulative active days and cumulative fluid (m3).
struct Checkpoint {
  double days = 0.0;
  double cumulative_fluid = 0.0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Ordered cumulative production checkpoints; both coordinates non-decreasing.
class ProductionSeries {
 public:
  ProductionSeries() = default;
  explicit ProductionSeries(std::vector<Checkpoint> checkpoints);

  const std::vector<Checkpoint>& checkpoints() const { return checkpoints_; }
  bool empty() const { return checkpoints_.empty(); }
  std::size_t size() const { return checkpoints_.size(); }

  friend bool operator==(const ProductionSeries&, const ProductionSeries&) = default;

 private:
  std::vector<Checkpoint> checkpoints_;
};

/// The six optimised design parameters, in the canonical order used by
/// design vectors everywhere in the library.
enum class DesignVar : std::size_t {
  n_stages = 0,
  pad_share,
  fluid_volume,
  proppant_mass,
  fluid_rate,
  final_prop_conc,
};
inline constexpr std::size_t kDesignDim = 6;
inline constexpr std::array<std::string_view, kDesignDim> kDesignNames = {
    "n_stages", "pad_share", "fluid_volume", "proppant_mass", "fluid_rate", "final_prop_conc"};
inline constexpr std::array<std::string_view, kDesignDim> kDesignUnits = {
    "count", "fraction", "m3", "kg", "m3/min", "kg/m3"};

constexpr std::size_t index(DesignVar v) { return static_cast<std::size_t>(v); }

using DesignVector = std::array<double, kDesignDim>;

struct DesignParams {
  int n_stages = 1;
  std::optional<double> pad_share;
  std::optional<double> fluid_volume;     // m3
  std::optional<double> proppant_mass;    // kg
  std::optional<double> fluid_rate;       // m3/min
  std::optional<double> final_prop_conc;  // kg/m3, last pumping stage
  std::optional<double> start_prop_conc;  // kg/m3

  /// proppant_mass / fluid_volume; never stored.
  std::optional<double> avg_prop_conc() const;

  std::array<std::optional<double>, kDesignDim> values() const;
  /// n_stages is rounded to the nearest integer.
  void assign(const DesignVector& v);
  /// Nullopt when any of the six parameters is missing.
  std::optional<DesignVector> complete() const;

  friend bool operator==(const DesignParams&, const DesignParams&) = default;
};

/// Average proppant concentration implied by a design vector.
inline double avg_prop_conc(const DesignVector& d) {
  return d[index(DesignVar::proppant_mass)] / d[index(DesignVar::fluid_volume)];
}

struct Coordinates {
  double x = 0.0;  // m
  double y = 0.0;  // m
  friend bool operator==(const Coordinates&, const Coordinates&) = default;
};

struct WellRecord {
  std::string well_id;
  std::string field_id;
  std::string layer_id;
  std::string face_id;
  WellType well_type = WellType::vertical;
  TreatmentType treatment_type = TreatmentType::primary;
  DesignParams design;
  /// Aligned with Dataset::environment; nullopt marks a missing cell.
  std::vector<std::optional<double>> environment;
  ProductionSeries production;
  std::optional<Coordinates> coordinates;

  int n_stages() const { return design.n_stages; }

  friend bool operator==(const WellRecord&, const WellRecord&) = default;
};

struct FeatureSpec {
  std::string name;
  std::string unit;
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

struct PercentileRange {
  double p1 = 0.0;
  double p99 = 0.0;
};

/// Min-max scaling anchored at the 1st and 99th percentiles, clipped to [0, 1].
class Normalizer {
 public:
  Normalizer() = default;

  /// Every column needs at least two non-missing values (NaN = missing).
  static Normalizer fit(const std::vector<std::string>& names,
                        const std::vector<std::vector<double>>& columns);

  bool contains(std::string_view name) const;
  const PercentileRange& range(std::string_view name) const;
  const std::map<std::string, PercentileRange, std::less<>>& ranges() const { return ranges_; }

  /// Missing (NaN) stays missing; constant features map to 0.5.
  double scale(std::string_view name, double value) const;
  std::vector<double> apply(const std::vector<std::string>& names, std::span<const double> values) const;

 private:
  std::map<std::string, PercentileRange, std::less<>> ranges_;
};

struct Dataset {
  std::vector<FeatureSpec> environment;
  std::vector<WellRecord> rows;
  std::optional<Normalizer> normalization;

  std::size_t size() const { return rows.size(); }
  std::vector<std::string> environment_names() const;
  /// Accepts "name" or "name[unit]"; throws a schema error for unknown names.
  std::size_t environment_index(std::string_view name) const;
  const WellRecord* find(std::string_view well_id) const;

  /// Checks record-level invariants (n_stages >= 1, unique ids, schema
  /// alignment, design ranges) and throws on the first violation.
  void validate() const;
};

/// Cumulative fluid at 90 active days by linear interpolation; the origin
/// (0 days, 0 m3) is an implicit first checkpoint. Nullopt when the
/// history ends before day 90. Throws on an empty series.
std::optional<double> target_90d(const ProductionSeries& series);

inline constexpr double kTargetHorizonDays = 90.0;

/// Names of every numeric feature the normalizer covers: environment
/// features followed by the six design parameters.
std::vector<std::string> numeric_feature_names(const Dataset& ds);
/// Values for numeric_feature_names() of one record; NaN for missing.
std::vector<double> numeric_feature_values(const Dataset& ds, const WellRecord& w);

Normalizer fit_normalizer(const Dataset& ds);

std::pair<Dataset, Dataset> split_primary_refrac(const Dataset& ds);

}  // namespace fracopt
