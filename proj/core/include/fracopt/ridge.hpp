#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace fracopt {

/// L2-penalised linear model. Features are standardised before solving, the
/// penalty applies to the standardised weights and the intercept is free;
/// `weights` are reported back in raw feature units.
struct RidgeComponent {
  std::vector<double> weights;
  double intercept = 0.0;
  double l2_lambda = 0.0;
  std::vector<double> means;
  std::vector<double> scales;

  double predict(std::span<const double> x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  /// Prediction at the training means.
  double mean_prediction() const;

  nlohmann::json to_json() const;
  static RidgeComponent from_json(const nlohmann::json& j);
};

/// Solves (Z'Z + lambda I) w = Z'(y - mean y) on standardised Z. Constant
/// columns get weight 0. Throws a numerical error when lambda = 0 and the
/// system is singular.
RidgeComponent fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double l2_lambda);

}  // namespace fracopt
