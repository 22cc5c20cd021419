#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace fracopt {

struct FeatureTable;
struct StackedModel;

/// Hold-out quality scores. Errors are in m3 (mse in m3^2), MAPE and wMAPE
/// in percent.
struct Metrics {
  double r2 = 0.0;
  double mae = 0.0;
  double median_ae = 0.0;
  double mape = 0.0;
  double wmape = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
  /// Rows with y = 0, left out of MAPE.
  std::size_t mape_excluded = 0;
};

/// wMAPE = sum|y - yhat| / sum|y| * 100. When y is constant, r2 is 1 for a
/// perfect fit and 0 otherwise.
Metrics evaluate(std::span<const double> y, std::span<const double> yhat);
Metrics evaluate(const StackedModel& model, const FeatureTable& holdout);

std::string metrics_csv_header();
std::string metrics_csv_row(const Metrics& m);

}  // namespace fracopt
