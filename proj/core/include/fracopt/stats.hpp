#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace fracopt {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

namespace stats {

/// Linear-interpolation percentile of an ascending-sorted sample, q in [0, 100].
/// Position h = (n - 1) * q / 100, value = s[floor h] + (h - floor h) * (s[floor h + 1] - s[floor h]).
double percentile_sorted(std::span<const double> sorted, double q);

/// Same as percentile_sorted but copies and sorts; missing values are skipped.
double percentile(std::span<const double> values, double q);

double mean(std::span<const double> values);

/// Population variance (divides by n).
double variance(std::span<const double> values);

/// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> midranks(std::span<const double> values);

/// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

double median(std::span<const double> values);

}  // namespace stats
}  // namespace fracopt
