#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fracopt {

/// Squared-exponential kernel with one length-scale per input dimension,
/// all parameters on a log scale.
struct GpHyper {
  std::vector<double> log_lengthscale;
  double log_signal_var = 0.0;
  double log_noise_var = std::log(1e-6);
};

struct GpFitOptions {
  /// Extra random starts for the likelihood search (one default start is
  /// always tried).
  int restarts = 3;
  int max_evaluations = 400;
  std::uint64_t seed = 0;
  /// Skip the search and use these hyperparameters (warm start when
  /// `optimize` is true).
  std::optional<GpHyper> initial;
  bool optimize = true;
  double jitter = 1e-8;
};

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Gaussian-process regressor over inputs the caller has already scaled
/// (typically to the unit cube). Outputs are standardised internally.
class GpSurrogate {
 public:
  GpSurrogate() = default;

  const GpHyper& hyper() const { return hyper_; }
  double log_marginal_likelihood() const { return lml_; }
  /// Prior variance in output units (what the predictive variance reverts
  /// to far from the data).
  double signal_variance() const;
  Eigen::Index size() const { return X_.rows(); }

  GpPrediction predict(std::span<const double> x) const;

  friend GpSurrogate gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpFitOptions& options);

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd alpha_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  GpHyper hyper_;
  double lml_ = 0.0;
};

/// Kernel value for given hyperparameters (signal variance included).
double se_kernel(const GpHyper& h, std::span<const double> a, std::span<const double> b);

/// Log marginal likelihood of standardised outputs; nullopt when the kernel
/// matrix is not positive definite.
std::optional<double> gp_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y_std, const GpHyper& h,
                                        double jitter);

/// Needs at least two distinct rows. Throws a fit error when no start gives
/// a finite likelihood.
GpSurrogate gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpFitOptions& options = {});

enum class AcquisitionKind { expected_improvement, probability_of_improvement };

/// Closed-form EI / PI for maximisation. With zero variance EI is
/// max(mean - best, 0) and PI is 1 if mean > best, else 0.
double acquisition(double mean, double variance, double best, AcquisitionKind kind);
double acquisition(const GpSurrogate& s, std::span<const double> x, double best, AcquisitionKind kind);

/// Minimises f with Nelder-Mead from `start` (initial simplex step
/// `step` per coordinate). Returns the best point.
std::vector<double> nelder_mead(const std::function<double(std::span<const double>)>& f, std::vector<double> start,
                                double step, int max_evaluations);

}  // namespace fracopt
