#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fracopt/welldata.hpp"

namespace fracopt {

/// Knobs of the synthetic field generator.
struct SyntheticSpec {
  /// Noise standard deviation as a fraction of the standard deviation of
  /// the noiseless 90-day targets across the generated wells.
  double noise = 0.1;
  /// Probability that an environment cell is blanked out.
  double missing_fraction = 0.0;
  double refrac_fraction = 0.1;
  /// Share of wells whose production history stops before day 90.
  double short_history_fraction = 0.03;
  int n_clusters = 3;
  int n_fields = 1;
  int n_layers = 2;
  int n_faces = 1;
  /// Within-cluster standard deviation of the unit-scaled environment.
  double cluster_spread = 0.06;
  double horizontal_fraction = 0.5;
  double multilateral_fraction = 0.15;

  /// Throws a config error on out-of-range values.
  void validate() const;
};

/// The smooth response the generator draws targets from.
///
/// Environment features are unit-scaled with fixed physical ranges (log scale
/// for permeability) into z in [0, 1]; the 90-day fluid is
///
///   q = A(z) * type_factor * n^0.35 * (0.5 + M) * C * P * R * E
///
///   A = 1200 + 1800 z_perm + 300 z_poro + 900 z_pay + 600 z_pres - 700 z_visc + 150 z_ym
///   M = 1 - exp(-m / 35),         m = proppant per stage in tonnes
///   C = 1 - 0.5 ((c_avg - 330) / 220)^2                (floored at 0.2)
///   P = 1 - 1.2 (pad_share - 0.3)^2
///   R = 1 - 0.04 (fluid_rate - 4.5)^2                   (floored at 0.2)
///   E = 1 - 0.25 (eps - 1)^2,     eps = ramp parameter  (floored at 0.2)
///
/// type_factor is 1.25 for horizontal, 1.1 for multilateral, 1 for vertical
/// wells; refractures produce 0.6 of the primary response.
class GroundTruth {
 public:
  static const std::vector<FeatureSpec>& environment_schema();

  /// Maps a physical environment vector (schema order) to z in [0, 1].
  static std::vector<double> unit_scale(std::span<const double> environment);

  /// Needs every design parameter, including start_prop_conc.
  static double production(std::span<const double> environment, WellType type,
                           TreatmentType treatment, const DesignParams& design);

  /// Convenience overload; missing environment cells are an input error.
  static double production(const WellRecord& well);
};

struct SyntheticField {
  Dataset dataset;
  /// Latent environment cluster of every row.
  std::vector<int> latent_cluster;
  /// Noiseless 90-day production of every row.
  std::vector<double> truth;
  /// Complete (pre-masking) physical environment of every row.
  std::vector<std::vector<double>> full_environment;
};

SyntheticField generate_synthetic(std::size_t n_wells, std::uint64_t seed,
                                  const SyntheticSpec& spec = {});

}  // namespace fracopt
