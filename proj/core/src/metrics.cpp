#include "fracopt/metrics.hpp"

#include <cmath>
#include <vector>

#include "fracopt/error.hpp"
#include "fracopt/feature_table.hpp"
#include "fracopt/stacked_model.hpp"
#include "fracopt/stats.hpp"
#include "fracopt/welldata_io.hpp"

namespace fracopt {

Metrics evaluate(std::span<const double> y, std::span<const double> yhat) {
  if (y.empty()) throw Error(ErrorKind::precondition, "evaluation needs a non-empty holdout");
  if (y.size() != yhat.size()) throw Error(ErrorKind::precondition, "y and yhat differ in length");
  Metrics m;
  m.n = y.size();
  const double n = static_cast<double>(y.size());
  const double y_mean = stats::mean(y);
  std::vector<double> abs_err(y.size());
  double ss_res = 0.0, ss_tot = 0.0, sum_abs_y = 0.0, sum_ape = 0.0;
  std::size_t mape_n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - yhat[i];
    abs_err[i] = std::abs(e);
    ss_res += e * e;
    ss_tot += (y[i] - y_mean) * (y[i] - y_mean);
    sum_abs_y += std::abs(y[i]);
    if (y[i] != 0.0) {
      sum_ape += abs_err[i] / std::abs(y[i]);
      ++mape_n;
    } else {
      ++m.mape_excluded;
    }
  }
  double sum_abs = 0.0;
  for (double a : abs_err) sum_abs += a;
  m.mae = sum_abs / n;
  m.median_ae = stats::median(abs_err);
  m.mse = ss_res / n;
  m.rmse = std::sqrt(m.mse);
  m.mape = mape_n ? 100.0 * sum_ape / static_cast<double>(mape_n) : 0.0;
  m.wmape = sum_abs_y > 0.0 ? 100.0 * sum_abs / sum_abs_y : 0.0;
  m.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return m;
}

Metrics evaluate(const StackedModel& model, const FeatureTable& holdout) {
  const Eigen::VectorXd pred = model.predict(holdout.X);
  return evaluate(std::span<const double>(holdout.y.data(), static_cast<std::size_t>(holdout.y.size())),
                  std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())));
}

std::string metrics_csv_header() { return "r2,mae,median_ae,mape,wmape,mse,rmse,n,mape_excluded"; }

std::string metrics_csv_row(const Metrics& m) {
  return format_double(m.r2) + "," + format_double(m.mae) + "," + format_double(m.median_ae) + "," +
         format_double(m.mape) + "," + format_double(m.wmape) + "," + format_double(m.mse) + "," +
         format_double(m.rmse) + "," + std::to_string(m.n) + "," + std::to_string(m.mape_excluded);
}

}  // namespace fracopt
