#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fracopt/boosted_trees.hpp"
#include "fracopt/feature_table.hpp"
#include "fracopt/stacked_model.hpp"

namespace fracopt {

/// Pearson correlation of mid-ranks over pairwise-complete entries (NaN is
/// missing). nullopt when either rank vector is constant; throws an
/// insufficient-data error with fewer than 3 complete pairs.
std::optional<double> spearman_corr(std::span<const double> x, std::span<const double> y);

struct EliminationConfig {
  double missing_thresh = 0.8;
  double corr_thresh = 0.999;
  double var_thresh = 0.0;
};

struct EliminationResult {
  std::vector<std::string> retained;
  /// name -> reason, in the order the features were dropped
  std::vector<std::pair<std::string, std::string>> dropped;
};

/// Missingness filter, then correlated-pair pruning (keep the feature with
/// fewer missing cells, ties keep the lexicographically smaller name), then
/// the variance filter. Retained features keep the table's column order.
EliminationResult eliminate(const FeatureTable& table, const EliminationConfig& config = {});

using ModelTrainer = std::function<StackedModel(const FeatureTable&)>;

struct RfeResult {
  std::vector<std::string> features;  // as given
  std::vector<int> rank;              // 1 = most important; a permutation of 1..n
  std::vector<bool> retained;

  std::vector<std::string> retained_features() const;
};

/// Backward elimination driven by mean |attribution| on a seeded 25%
/// validation split. `table` must be complete.
RfeResult rfe(const ModelTrainer& trainer, const FeatureTable& table, std::size_t n_keep, std::size_t step = 1,
              std::uint64_t seed = 0);

/// Var(E[y | bin(x)]) / Var(y) with equal-frequency bins over the rank order
/// of x. Needs at least 10 * n_bins complete pairs; nullopt when Var(y) = 0.
std::optional<double> sobol_first_order(std::span<const double> x, std::span<const double> y, int n_bins = 16);

struct Attribution {
  double base = 0.0;
  std::vector<double> contributions;

  double total() const;
};

/// Path-dependent tree attribution of a single tree (base excluded).
void tree_shap(const RegressionTree& tree, std::span<const double> x, std::span<double> phi);

/// Exact additive attribution: linear part w_i (x_i - mean_i), tree part by
/// path-dependent tree Shapley values. base + sum = predict(x).
Attribution attribute(const StackedModel& model, std::span<const double> x);

struct FeatureReportRow {
  std::string name;
  double missing_fraction = 0.0;
  double variance = 0.0;
  std::string spearman_partner;
  std::optional<double> spearman_rho;
  std::optional<int> rfe_rank;
  std::optional<double> sobol_first_order;
  std::optional<double> mean_abs_shap;
};

struct FeatureReport {
  std::vector<FeatureReportRow> rows;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  /// Rows sorted by mean |attribution| (descending), then name.
  std::vector<FeatureReportRow> ranked() const;
};

/// `raw` may contain missing cells. `model` and `rfe_result` are optional.
FeatureReport build_feature_report(const FeatureTable& raw, const StackedModel* model, const RfeResult* rfe_result,
                                   int sobol_bins = 16);

}  // namespace fracopt
