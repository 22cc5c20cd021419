#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fracopt/boosted_trees.hpp"
#include "fracopt/feature_table.hpp"
#include "fracopt/ridge.hpp"
#include "fracopt/welldata.hpp"

namespace fracopt {

/// One point of the cross-validation grid.
struct HyperPoint {
  double l2_lambda = 1.0;
  BoostingParams boosting;

  friend bool operator==(const HyperPoint&, const HyperPoint&) = default;
};

struct CvScore {
  HyperPoint point;
  double mean_rmse = 0.0;
  std::vector<double> fold_rmse;
};

/// Ridge regression plus boosted trees fit on the ridge residuals; the
/// prediction is the sum of both parts.
struct StackedModel {
  static constexpr int kFormatVersion = 1;

  FeatureEncoder encoder;
  RidgeComponent ridge;
  BoostedTreesComponent trees;
  HyperPoint selected;
  std::uint64_t seed = 0;
  std::vector<CvScore> cv_scores;
  /// Column means used to fill training gaps (metadata only; predict()
  /// rejects incomplete inputs).
  std::vector<double> training_means;

  std::vector<std::string> feature_names() const { return encoder.names(); }
  std::size_t n_features() const { return ridge.weights.size(); }

  /// x must be complete over the schema; throws an input error otherwise.
  double predict(std::span<const double> x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  /// Encodes the record with the model's schema, then predicts.
  double predict_record(const WellRecord& well, const std::vector<std::string>& environment_names) const;

  nlohmann::json to_json() const;
  static StackedModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static StackedModel load(const std::filesystem::path& path);
};

/// A small grid over lambda, depth, learning rate and tree count.
std::vector<HyperPoint> default_grid();

/// Fits ridge + boosted residual trees with fixed hyperparameters.
StackedModel fit_stacked_fixed(const FeatureTable& table, const HyperPoint& point, std::uint64_t seed,
                               FeatureEncoder encoder = {});

/// K-fold selection over `grid` (minimum mean validation RMSE; ties prefer
/// fewer trees, then shallower trees), then a refit on all rows. `table`
/// must be complete. If `encoder` is empty a pass-through schema named
/// after the table columns is recorded.
StackedModel fit_stacked(const FeatureTable& table, const std::vector<HyperPoint>& grid, int n_folds,
                         std::uint64_t seed, FeatureEncoder encoder = {});

struct HoldoutSplit {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

/// Shuffled split with round(test_fraction * n) rows held out.
HoldoutSplit split_holdout(Eigen::Index n, double test_fraction, std::uint64_t seed);

/// Assigns each of n rows to one of k folds after a seeded shuffle.
std::vector<int> assign_folds(Eigen::Index n, int k, std::uint64_t seed);

}  // namespace fracopt
