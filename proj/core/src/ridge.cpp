#include "fracopt/ridge.hpp"

#include <cmath>

#include "fracopt/error.hpp"
#include "fracopt/stats.hpp"

namespace fracopt {

double RidgeComponent::predict(std::span<const double> x) const {
  if (x.size() != weights.size()) {
    throw Error(ErrorKind::input, "ridge: feature vector has the wrong dimension");
  }
  double out = intercept;
  for (std::size_t i = 0; i < x.size(); ++i) out += weights[i] * x[i];
  return out;
}

Eigen::VectorXd RidgeComponent::predict(const Eigen::MatrixXd& X) const {
  const Eigen::Map<const Eigen::VectorXd> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  return (X * w).array() + intercept;
}

double RidgeComponent::mean_prediction() const { return predict(means); }

RidgeComponent fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double l2_lambda) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n < 2) throw Error(ErrorKind::precondition, "ridge needs at least 2 rows");
  if (y.size() != n) throw Error(ErrorKind::precondition, "ridge: X and y row counts differ");
  if (!(l2_lambda >= 0.0)) throw Error(ErrorKind::config, "ridge: lambda must be >= 0");
  if (X.hasNaN() || y.hasNaN()) {
    throw Error(ErrorKind::precondition, "ridge: missing values must be imputed upstream");
  }

  RidgeComponent out;
  out.l2_lambda = l2_lambda;
  out.means.resize(static_cast<std::size_t>(p));
  out.scales.resize(static_cast<std::size_t>(p));
  out.weights.assign(static_cast<std::size_t>(p), 0.0);

  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double m = X.col(j).mean();
    const double sd = std::sqrt((X.col(j).array() - m).square().mean());
    out.means[static_cast<std::size_t>(j)] = m;
    // Constant columns carry no signal; keep them out of the system.
    out.scales[static_cast<std::size_t>(j)] = sd > 0.0 ? sd : 1.0;
    if (sd > 0.0) active.push_back(j);
  }
  const double y_mean = y.mean();

  if (!active.empty()) {
    const auto k = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd Z(n, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      const auto j = active[static_cast<std::size_t>(a)];
      Z.col(a) = (X.col(j).array() - out.means[static_cast<std::size_t>(j)]) /
                 out.scales[static_cast<std::size_t>(j)];
    }
    Eigen::MatrixXd A = Z.transpose() * Z;
    A.diagonal().array() += l2_lambda;
    const Eigen::VectorXd b = Z.transpose() * (y.array() - y_mean).matrix();
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success || (l2_lambda == 0.0 && llt.rcond() < 1e-12)) {
      throw Error(ErrorKind::numerical,
                  "ridge system is singular; use lambda > 0 to regularise collinear features");
    }
    const Eigen::VectorXd w = llt.solve(b);
    for (Eigen::Index a = 0; a < k; ++a) {
      const auto j = static_cast<std::size_t>(active[static_cast<std::size_t>(a)]);
      out.weights[j] = w(a) / out.scales[j];
    }
  }
  out.intercept = y_mean;
  for (std::size_t j = 0; j < out.weights.size(); ++j) out.intercept -= out.weights[j] * out.means[j];
  return out;
}

nlohmann::json RidgeComponent::to_json() const {
  return {{"weights", weights}, {"intercept", intercept}, {"l2_lambda", l2_lambda},
          {"means", means},     {"scales", scales}};
}

RidgeComponent RidgeComponent::from_json(const nlohmann::json& j) {
  RidgeComponent r;
  j.at("weights").get_to(r.weights);
  j.at("intercept").get_to(r.intercept);
  j.at("l2_lambda").get_to(r.l2_lambda);
  j.at("means").get_to(r.means);
  j.at("scales").get_to(r.scales);
  if (r.means.size() != r.weights.size() || r.scales.size() != r.weights.size()) {
    throw Error(ErrorKind::schema, "ridge component arrays differ in length");
  }
  return r;
}

}  // namespace fracopt
