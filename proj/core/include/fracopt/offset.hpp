#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fracopt/welldata.hpp"

namespace fracopt {

inline constexpr int kNoise = -1;

/// Pairwise Euclidean distances between the rows of `points`.
Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points);

/// Density clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps` (inclusive). Rows are scanned in input
/// order; a border point joins the first cluster that reaches it. Labels are
/// 0, 1, ... in discovery order, kNoise for noise.
std::vector<int> dbscan(const Eigen::MatrixXd& points, double eps, int min_pts);
std::vector<int> dbscan_precomputed(const Eigen::MatrixXd& distances, double eps, int min_pts);

/// Mean silhouette over non-noise points; singleton clusters contribute 0.
/// nullopt with fewer than two clusters.
std::optional<double> silhouette_mean(const Eigen::MatrixXd& points, std::span<const int> labels);
std::optional<double> silhouette_mean_precomputed(const Eigen::MatrixXd& distances, std::span<const int> labels);

struct ClusteringSearch {
  int budget = 60;
  std::uint64_t seed = 0;
  int min_pts_lo = 2;
  int min_pts_hi = 10;
  /// Candidates below this mean silhouette, or with more than
  /// `max_noise_fraction` noise, are not accepted as a clustering.
  double min_silhouette = 0.25;
  double max_noise_fraction = 0.5;
};

struct ClusteringChoice {
  double eps = 0.0;
  int min_pts = 0;
  std::vector<int> labels;
  std::optional<double> silhouette;
  /// No candidate met the feasibility rules; callers treat every point as
  /// one cluster.
  bool fallback = false;
  int evaluations = 0;
};

/// Random-then-local search over eps in [p5, p95] of the pairwise distances
/// and min_pts in [min_pts_lo, min_pts_hi], maximising the mean silhouette.
/// With `pilot`, candidates that label that row as noise are infeasible.
ClusteringChoice tune_clustering(const Eigen::MatrixXd& points, const ClusteringSearch& search,
                                 std::optional<std::size_t> pilot = std::nullopt);

struct TopNResult {
  std::vector<std::string> ids;
  std::vector<double> distances;
  std::vector<std::string> used_features;
};

/// Ascending Euclidean distance over the features present in the pilot and
/// in every candidate; ties go to the smaller id. N is clipped to the
/// candidate count. Throws an input error if no feature is shared.
TopNResult euclidean_topn(std::span<const double> pilot, const std::vector<std::string>& candidate_ids,
                          const std::vector<std::vector<double>>& candidates, std::size_t n,
                          const std::vector<std::string>& feature_names);

enum class ImputeStrategy { topn_mean, cluster_mean, matrix_factorization };
std::string_view to_string(ImputeStrategy s);
std::optional<ImputeStrategy> parse_impute_strategy(std::string_view s);

struct ImputedValue {
  std::string feature;
  double value = 0.0;
  ImputeStrategy strategy = ImputeStrategy::topn_mean;
  std::size_t donors = 0;
  /// Set when no donor had the feature and the global mean was used.
  bool global_fallback = false;
};

struct ImputeResult {
  std::vector<double> values;
  std::vector<ImputedValue> report;
  std::vector<std::string> warnings;
};

/// For each missing entry: the mean over the first `n` donors (in the given
/// order) that have the feature. `global_means` backs features no donor has.
ImputeResult impute_topn_mean(std::span<const double> record, const std::vector<std::vector<double>>& donors,
                              std::size_t n, const std::vector<std::string>& feature_names,
                              std::span<const double> global_means);

/// Missing entries take the donor column means.
ImputeResult impute_cluster_mean(std::span<const double> record, const std::vector<std::vector<double>>& donors,
                                 const std::vector<std::string>& feature_names, std::span<const double> global_means);

struct AlsConfig {
  int rank = 5;
  int iterations = 50;
  double regularization = 0.1;
  std::uint64_t seed = 0;
};

/// Rank-k alternating least squares on the observed cells of `m` (NaN =
/// missing). Missing cells take the reconstruction; observed cells are
/// copied bit-for-bit.
Eigen::MatrixXd impute_matrix_factorization(const Eigen::MatrixXd& m, const AlsConfig& config = {});

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;
};

/// Exact t-SNE embedding plus a k-NN inverse-distance regressor from the
/// input space to the embedded coordinates.
struct Embedding2D {
  std::vector<std::string> ids;
  Eigen::MatrixXd coords;  // n x 2
  double perplexity = 0.0;
  std::uint64_t seed = 0;
  /// Inputs the regressor interpolates over (the embedded rows).
  Eigen::MatrixXd inputs;
  int k = 5;

  std::array<double, 2> predict_coords(std::span<const double> x) const;
};

/// Perplexity is lowered to (n - 1) / 3 when the sample is too small.
/// The start layout is the top-two principal components, so identical rows
/// stay identical. Duplicate rows share one embedded point. Throws an
/// embedding error with fewer than 4 distinct rows.
Embedding2D tsne_embed(const Eigen::MatrixXd& X, const std::vector<std::string>& ids, const TsneConfig& config = {});

struct ScatterPoint {
  std::string well_id;
  double x = 0.0;
  double y = 0.0;
  int cluster = kNoise;
  bool is_pilot = false;
};

std::string scatter_csv(const std::vector<ScatterPoint>& points);
/// Clusters by colour, the pilot as a star.
std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title = "");

struct NeighborFeatures {
  /// Mean of (90-day production / distance) in m3/m; nullopt without neighbours.
  std::optional<double> production_per_distance;
  std::size_t count = 0;
};

/// Wells at distance d in (0, radius] from the pilot with a valid target.
NeighborFeatures neighbor_features(const Dataset& ds, const WellRecord& pilot, double radius_m = 1000.0);

struct DesignBound {
  double lower = 0.0;
  double upper = 0.0;
  double mean = 0.0;
};

struct PilotClusterOptions {
  /// Keep only the N members closest to the pilot.
  std::optional<std::size_t> n_euclid;
  int stage_tolerance = 1;
  std::size_t min_analogues = 5;
  ClusteringSearch search;
};

struct FilterStep {
  std::string filter;
  std::size_t remaining = 0;
};

struct PilotCluster {
  std::string pilot_id;
  std::vector<std::string> members;
  std::array<DesignBound, kDesignDim> bounds{};
  /// Mean start concentration over members reporting it.
  std::optional<double> start_conc_mean;
  double eps = 0.0;
  int min_pts = 0;
  std::optional<double> silhouette;
  bool fallback = false;
  std::vector<FilterStep> filters;
  /// Normalised environment features the clustering used.
  std::vector<std::string> features;
  /// Filtered wells with their cluster labels (pilot last when not in the
  /// dataset), for plotting.
  std::vector<std::string> filtered_ids;
  std::vector<int> filtered_labels;
  int pilot_label = kNoise;

  nlohmann::json to_json() const;
};

/// Filter by field, layer, face and n_stages within the tolerance; cluster
/// the normalised environment; keep the pilot's cluster (optionally the
/// N nearest); bounds are the p5/p95 of each design parameter over the
/// members and the mean is clamped into them. Throws an
/// insufficient-analogues error naming the filter that left fewer than
/// `min_analogues` wells.
PilotCluster build_pilot_cluster(const Dataset& ds, const WellRecord& pilot, const PilotClusterOptions& options = {});

/// t-SNE of the filtered wells behind a pilot cluster, pilot flagged as the
/// star. Gaps take the column mean of the embedded rows.
std::vector<ScatterPoint> cluster_scatter(const Dataset& ds, const WellRecord& pilot, const PilotCluster& cluster,
                                          const TsneConfig& config = {});

/// Normalised environment vector of a record (NaN for missing), in
/// `ds.environment_names()` order.
std::vector<double> normalized_environment(const Dataset& ds, const Normalizer& norm, const WellRecord& w);

/// Donor means backing the global-mean fallback, per environment feature.
std::vector<double> environment_means(const Dataset& ds);

}  // namespace fracopt
