#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace fracopt {

/// Axis-aligned node; a sample goes left when x[feature] <= threshold.
/// Leaves have feature == -1. `value` is the (shrunken) leaf output; for
/// internal nodes it is the cover-weighted mean of the subtree.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  /// Number of training rows reaching the node.
  double cover = 0.0;

  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const;
  int depth() const;
};

struct BoostingParams {
  int n_trees = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  double subsample = 1.0;
  int min_samples_leaf = 5;

  void validate() const;
  friend bool operator==(const BoostingParams&, const BoostingParams&) = default;
};

/// Least-squares gradient boosting: each tree is fit to the current
/// residuals, leaf values are shrunk by the learning rate.
struct BoostedTreesComponent {
  BoostingParams params;
  std::vector<RegressionTree> trees;

  double predict(std::span<const double> x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  /// Column k holds the prediction of the first k+1 trees.
  Eigen::MatrixXd staged_predict(const Eigen::MatrixXd& X) const;
  /// Expected output under the training distribution (sum of root values).
  double expected_value() const;

  nlohmann::json to_json() const;
  static BoostedTreesComponent from_json(const nlohmann::json& j);
};

/// Throws a training error when there are fewer than 2 * min_samples_leaf
/// rows. n_trees = 0 yields the identically-zero component.
BoostedTreesComponent fit_boosted(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                                  const BoostingParams& params, std::uint64_t seed);

}  // namespace fracopt
