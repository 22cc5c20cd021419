#include "fracopt/stats.hpp"

#include <algorithm>
#include <numeric>

#include "fracopt/error.hpp"

namespace fracopt::stats {

double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) {
    throw Error(ErrorKind::precondition, "percentile of an empty sample");
  }
  if (q < 0.0 || q > 100.0) {
    throw Error(ErrorKind::precondition, "percentile rank outside [0, 100]");
  }
  const double h = static_cast<double>(sorted.size() - 1) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double percentile(std::span<const double> values, double q) {
  std::vector<double> s;
  s.reserve(values.size());
  for (double v : values) {
    if (!is_missing(v)) s.push_back(v);
  }
  std::sort(s.begin(), s.end());
  return percentile_sorted(s, q);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::precondition, "mean of an empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double variance(std::span<const double> values) {
  const double m = mean(values);
  double acc = 0.0;
  for (double v : values) acc += (v - m) * (v - m);
  return acc / static_cast<double>(values.size());
}

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share rank mean((i+1)..(j+1))
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) {
    throw Error(ErrorKind::precondition, "pearson needs equal, non-empty samples");
  }
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double median(std::span<const double> values) { return percentile(values, 50.0); }

}  // namespace fracopt::stats
