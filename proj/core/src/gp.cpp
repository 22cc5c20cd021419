#include "fracopt/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "fracopt/error.hpp"
#include "fracopt/random.hpp"

namespace fracopt {

namespace {

const double kLogLenLo = std::log(1e-2), kLogLenHi = std::log(20.0);
const double kLogSigLo = std::log(1e-3), kLogSigHi = std::log(1e3);
const double kLogNoiseLo = std::log(1e-10), kLogNoiseHi = std::log(1.0);

std::vector<double> pack(const GpHyper& h) {
  std::vector<double> t = h.log_lengthscale;
  t.push_back(h.log_signal_var);
  t.push_back(h.log_noise_var);
  return t;
}

GpHyper unpack(std::span<const double> t) {
  GpHyper h;
  const std::size_t d = t.size() - 2;
  h.log_lengthscale.assign(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(d));
  h.log_signal_var = t[d];
  h.log_noise_var = t[d + 1];
  return h;
}

GpHyper clamp_hyper(GpHyper h) {
  for (auto& l : h.log_lengthscale) l = std::clamp(l, kLogLenLo, kLogLenHi);
  h.log_signal_var = std::clamp(h.log_signal_var, kLogSigLo, kLogSigHi);
  h.log_noise_var = std::clamp(h.log_noise_var, kLogNoiseLo, kLogNoiseHi);
  return h;
}

double out_of_box(std::span<const double> t) {
  const std::size_t d = t.size() - 2;
  double s = 0.0;
  auto excess = [](double v, double lo, double hi) { return std::max(0.0, lo - v) + std::max(0.0, v - hi); };
  for (std::size_t i = 0; i < d; ++i) s += excess(t[i], kLogLenLo, kLogLenHi);
  s += excess(t[d], kLogSigLo, kLogSigHi);
  s += excess(t[d + 1], kLogNoiseLo, kLogNoiseHi);
  return s;
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X, const GpHyper& h, double jitter) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  Eigen::VectorXd inv_l2(d);
  for (Eigen::Index k = 0; k < d; ++k) inv_l2(k) = std::exp(-2.0 * h.log_lengthscale[static_cast<std::size_t>(k)]);
  const double sf2 = std::exp(h.log_signal_var);
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = sf2 + std::exp(h.log_noise_var) + jitter;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double r2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = X(i, k) - X(j, k);
        r2 += diff * diff * inv_l2(k);
      }
      K(i, j) = K(j, i) = sf2 * std::exp(-0.5 * r2);
    }
  }
  return K;
}

}  // namespace

double se_kernel(const GpHyper& h, std::span<const double> a, std::span<const double> b) {
  double r2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = (a[k] - b[k]) * std::exp(-h.log_lengthscale[k]);
    r2 += diff * diff;
  }
  return std::exp(h.log_signal_var) * std::exp(-0.5 * r2);
}

std::optional<double> gp_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y_std, const GpHyper& h,
                                        double jitter) {
  Eigen::LLT<Eigen::MatrixXd> llt(kernel_matrix(X, h, jitter));
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Eigen::VectorXd alpha = llt.solve(y_std);
  const auto L = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) log_det += std::log(L(i, i));
  const double v = -0.5 * y_std.dot(alpha) - log_det - 0.5 * static_cast<double>(X.rows()) * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<double> nelder_mead(const std::function<double(std::span<const double>)>& f, std::vector<double> start,
                                double step, int max_evaluations) {
  const std::size_t n = start.size();
  std::vector<std::vector<double>> simplex(n + 1, start);
  for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
  std::vector<double> fv(n + 1);
  int evals = 0;
  auto eval = [&](const std::vector<double>& p) {
    ++evals;
    const double v = f(p);
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(simplex[i]);
  std::vector<std::size_t> order(n + 1);
  while (evals < max_evaluations) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];
    if (std::abs(fv[worst] - fv[best]) <= 1e-10 * (std::abs(fv[best]) + 1e-10)) break;
    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[i][k] / static_cast<double>(n);
    }
    auto along = [&](double t) {
      std::vector<double> p(n);
      for (std::size_t k = 0; k < n; ++k) p[k] = centroid[k] + t * (simplex[worst][k] - centroid[k]);
      return p;
    };
    const auto reflected = along(-1.0);
    const double fr = eval(reflected);
    if (fr < fv[best]) {
      const auto expanded = along(-2.0);
      const double fe = eval(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        fv[worst] = fe;
      } else {
        simplex[worst] = reflected;
        fv[worst] = fr;
      }
    } else if (fr < fv[second]) {
      simplex[worst] = reflected;
      fv[worst] = fr;
    } else {
      const bool outside = fr < fv[worst];
      const auto contracted = along(outside ? -0.5 : 0.5);
      const double fc = eval(contracted);
      if (fc < std::min(fr, fv[worst])) {
        simplex[worst] = contracted;
        fv[worst] = fc;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (std::size_t k = 0; k < n; ++k) simplex[i][k] = simplex[best][k] + 0.5 * (simplex[i][k] - simplex[best][k]);
          fv[i] = eval(simplex[i]);
        }
      }
    }
  }
  const auto it = std::min_element(fv.begin(), fv.end());
  return simplex[static_cast<std::size_t>(it - fv.begin())];
}

double GpSurrogate::signal_variance() const { return std::exp(hyper_.log_signal_var) * y_scale_ * y_scale_; }

GpPrediction GpSurrogate::predict(std::span<const double> x) const {
  const Eigen::Index n = X_.rows();
  Eigen::VectorXd k(n);
  const Eigen::Index d = X_.cols();
  const double sf2 = std::exp(hyper_.log_signal_var);
  for (Eigen::Index i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double diff = (X_(i, c) - x[static_cast<std::size_t>(c)]) * std::exp(-hyper_.log_lengthscale[static_cast<std::size_t>(c)]);
      r2 += diff * diff;
    }
    k(i) = sf2 * std::exp(-0.5 * r2);
  }
  GpPrediction p;
  p.mean = y_mean_ + y_scale_ * k.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(k);
  p.variance = std::max(0.0, y_scale_ * y_scale_ * (std::exp(hyper_.log_signal_var) - v.squaredNorm()));
  return p;
}

GpSurrogate gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpFitOptions& options) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n != y.size()) throw Error(ErrorKind::precondition, "gp_fit: X and y differ in length");
  bool distinct = false;
  for (Eigen::Index i = 1; i < n && !distinct; ++i) distinct = (X.row(i) - X.row(0)).squaredNorm() > 0.0;
  if (n < 2 || !distinct) throw Error(ErrorKind::precondition, "gp_fit needs at least two distinct points");
  if (!X.allFinite() || !y.allFinite()) throw Error(ErrorKind::precondition, "gp_fit: non-finite training data");

  GpSurrogate s;
  s.X_ = X;
  s.y_mean_ = y.mean();
  const double sd = std::sqrt((y.array() - s.y_mean_).square().mean());
  s.y_scale_ = sd > 0.0 ? sd : 1.0;
  const Eigen::VectorXd ys = (y.array() - s.y_mean_) / s.y_scale_;

  GpHyper start;
  if (options.initial) {
    start = *options.initial;
    if (start.log_lengthscale.size() != static_cast<std::size_t>(d)) {
      throw Error(ErrorKind::precondition, "gp_fit: initial hyperparameters have the wrong dimension");
    }
  } else {
    start.log_lengthscale.assign(static_cast<std::size_t>(d), std::log(0.3));
    start.log_signal_var = 0.0;
    start.log_noise_var = std::log(1e-6);
  }

  GpHyper best = start;
  std::optional<double> best_lml = gp_log_likelihood(X, ys, start, options.jitter);
  if (options.optimize) {
    auto objective = [&](std::span<const double> t) {
      const double pen = out_of_box(t);
      const auto lml = gp_log_likelihood(X, ys, clamp_hyper(unpack(t)), options.jitter);
      if (!lml) return std::numeric_limits<double>::infinity();
      return -*lml + 1e3 * pen;
    };
    Rng rng(options.seed);
    std::vector<GpHyper> starts{start};
    for (int r = 0; r < options.restarts; ++r) {
      GpHyper h;
      for (Eigen::Index k = 0; k < d; ++k) h.log_lengthscale.push_back(std::log(rng.uniform(0.05, 2.0)));
      h.log_signal_var = std::log(rng.uniform(0.3, 3.0));
      h.log_noise_var = std::log(10.0) * rng.uniform(-8.0, -2.0);
      starts.push_back(h);
    }
    for (const auto& s0 : starts) {
      const auto t = nelder_mead(objective, pack(clamp_hyper(s0)), 0.5, options.max_evaluations);
      const GpHyper h = clamp_hyper(unpack(t));
      const auto lml = gp_log_likelihood(X, ys, h, options.jitter);
      if (lml && (!best_lml || *lml > *best_lml)) {
        best_lml = lml;
        best = h;
      }
    }
  }
  if (!best_lml) throw Error(ErrorKind::fit, "GP likelihood is not finite for any hyperparameter start");
  s.hyper_ = best;
  s.lml_ = *best_lml;
  s.llt_.compute(kernel_matrix(X, best, options.jitter));
  s.alpha_ = s.llt_.solve(ys);
  return s;
}

double acquisition(double mean, double variance, double best, AcquisitionKind kind) {
  const double sigma = std::sqrt(std::max(variance, 0.0));
  const double gain = mean - best;
  if (sigma <= 0.0) {
    if (kind == AcquisitionKind::expected_improvement) return std::max(gain, 0.0);
    return gain > 0.0 ? 1.0 : 0.0;
  }
  const double z = gain / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  if (kind == AcquisitionKind::probability_of_improvement) return cdf;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, gain * cdf + sigma * pdf);
}

double acquisition(const GpSurrogate& s, std::span<const double> x, double best, AcquisitionKind kind) {
  const auto p = s.predict(x);
  return acquisition(p.mean, p.variance, best, kind);
}

}  // namespace fracopt
