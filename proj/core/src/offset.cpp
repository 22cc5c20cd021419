#include "fracopt/offset.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "fracopt/error.hpp"
#include "fracopt/random.hpp"
#include "fracopt/stats.hpp"
#include "fracopt/welldata_io.hpp"

namespace fracopt {

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (points.row(i) - points.row(j)).norm();
    }
  }
  return d;
}

std::vector<int> dbscan_precomputed(const Eigen::MatrixXd& distances, double eps, int min_pts) {
  const auto n = static_cast<std::size_t>(distances.rows());
  constexpr int kUnvisited = -2;
  std::vector<int> labels(n, kUnvisited);
  auto neighbours = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j) {
      if (distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= eps) out.push_back(j);
    }
    return out;
  };
  int next_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kUnvisited) continue;
    const auto seeds = neighbours(i);
    if (static_cast<int>(seeds.size()) < min_pts) {
      labels[i] = kNoise;
      continue;
    }
    const int c = next_label++;
    labels[i] = c;
    std::deque<std::size_t> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const auto q = queue.front();
      queue.pop_front();
      if (labels[q] == kNoise) labels[q] = c;
      if (labels[q] != kUnvisited) continue;
      labels[q] = c;
      const auto more = neighbours(q);
      if (static_cast<int>(more.size()) >= min_pts) queue.insert(queue.end(), more.begin(), more.end());
    }
  }
  return labels;
}

std::vector<int> dbscan(const Eigen::MatrixXd& points, double eps, int min_pts) {
  return dbscan_precomputed(pairwise_distances(points), eps, min_pts);
}

std::optional<double> silhouette_mean_precomputed(const Eigen::MatrixXd& distances, std::span<const int> labels) {
  const std::size_t n = labels.size();
  std::map<int, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kNoise) clusters[labels[i]].push_back(i);
  }
  if (clusters.size() < 2) return std::nullopt;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& [label, members] : clusters) {
    for (auto i : members) {
      ++count;
      if (members.size() == 1) continue;
      double a = 0.0;
      for (auto j : members) a += distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      a /= static_cast<double>(members.size() - 1);
      double b = std::numeric_limits<double>::infinity();
      for (const auto& [other, others] : clusters) {
        if (other == label) continue;
        double s = 0.0;
        for (auto j : others) s += distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        b = std::min(b, s / static_cast<double>(others.size()));
      }
      const double m = std::max(a, b);
      total += m > 0.0 ? (b - a) / m : 0.0;
    }
  }
  return total / static_cast<double>(count);
}

std::optional<double> silhouette_mean(const Eigen::MatrixXd& points, std::span<const int> labels) {
  if (static_cast<std::size_t>(points.rows()) != labels.size()) {
    throw Error(ErrorKind::precondition, "silhouette_mean: label count differs from point count");
  }
  return silhouette_mean_precomputed(pairwise_distances(points), labels);
}

ClusteringChoice tune_clustering(const Eigen::MatrixXd& points, const ClusteringSearch& search,
                                 std::optional<std::size_t> pilot) {
  const Eigen::Index n = points.rows();
  if (n < 10) throw Error(ErrorKind::precondition, "tune_clustering needs at least 10 points");
  if (search.budget < 1) throw Error(ErrorKind::config, "clustering search budget must be >= 1");
  if (search.min_pts_lo < 1 || search.min_pts_hi < search.min_pts_lo) {
    throw Error(ErrorKind::config, "invalid min_pts range");
  }
  const auto dist = pairwise_distances(points);
  std::vector<double> pair_d;
  pair_d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) pair_d.push_back(dist(i, j));
  }
  std::sort(pair_d.begin(), pair_d.end());
  const double eps_lo = stats::percentile_sorted(pair_d, 5.0);
  const double eps_hi = std::max(eps_lo, stats::percentile_sorted(pair_d, 95.0));

  struct Candidate {
    double eps;
    int min_pts;
    std::vector<int> labels;
    std::optional<double> silhouette;
    bool feasible;
  };
  auto evaluate = [&](double eps, int mp) {
    Candidate c{eps, mp, dbscan_precomputed(dist, eps, mp), std::nullopt, false};
    c.silhouette = silhouette_mean_precomputed(dist, c.labels);
    const auto noise = std::count(c.labels.begin(), c.labels.end(), kNoise);
    const bool pilot_ok = !pilot || c.labels[*pilot] != kNoise;
    c.feasible = c.silhouette && *c.silhouette >= search.min_silhouette &&
                 static_cast<double>(noise) <= search.max_noise_fraction * static_cast<double>(n) && pilot_ok;
    return c;
  };
  // Feasible beats infeasible, then higher silhouette; ties keep the earlier.
  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.feasible != b.feasible) return a.feasible;
    const double sa = a.silhouette.value_or(-2.0);
    const double sb = b.silhouette.value_or(-2.0);
    return sa > sb;
  };

  Rng rng(search.seed);
  const int n_random = std::max(1, search.budget / 2);
  std::optional<Candidate> best;
  int evals = 0;
  for (; evals < n_random; ++evals) {
    const double eps = rng.uniform(eps_lo, eps_hi);
    const int mp = static_cast<int>(rng.uniform_int(search.min_pts_lo, search.min_pts_hi));
    auto c = evaluate(eps, mp);
    if (!best || better(c, *best)) best = std::move(c);
  }
  double step = 0.15;
  for (; evals < search.budget; ++evals) {
    const double eps = std::clamp(best->eps + rng.normal() * step * (eps_hi - eps_lo), eps_lo, eps_hi);
    const int mp = std::clamp(best->min_pts + static_cast<int>(rng.uniform_int(-1, 1)), search.min_pts_lo,
                              search.min_pts_hi);
    auto c = evaluate(eps, mp);
    if (better(c, *best)) {
      best = std::move(c);
      step = std::min(0.5, step * 1.5);
    } else {
      step = std::max(0.01, step * 0.8);
    }
  }
  ClusteringChoice out;
  out.eps = best->eps;
  out.min_pts = best->min_pts;
  out.labels = std::move(best->labels);
  out.silhouette = best->silhouette;
  out.fallback = !best->feasible;
  out.evaluations = evals;
  return out;
}

TopNResult euclidean_topn(std::span<const double> pilot, const std::vector<std::string>& candidate_ids,
                          const std::vector<std::vector<double>>& candidates, std::size_t n,
                          const std::vector<std::string>& feature_names) {
  if (candidate_ids.size() != candidates.size()) {
    throw Error(ErrorKind::precondition, "euclidean_topn: id and vector counts differ");
  }
  std::vector<std::size_t> used;
  for (std::size_t f = 0; f < pilot.size(); ++f) {
    if (is_missing(pilot[f])) continue;
    const bool shared = std::all_of(candidates.begin(), candidates.end(),
                                    [&](const std::vector<double>& c) { return f < c.size() && !is_missing(c[f]); });
    if (shared) used.push_back(f);
  }
  if (used.empty()) throw Error(ErrorKind::input, "no feature is shared by the pilot and every candidate");
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    double s = 0.0;
    for (auto f : used) {
      const double d = pilot[f] - candidates[c][f];
      s += d * d;
    }
    order.emplace_back(std::sqrt(s), c);
  }
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return candidate_ids[a.second] < candidate_ids[b.second];
  });
  TopNResult out;
  const std::size_t k = std::min(n, order.size());
  for (std::size_t i = 0; i < k; ++i) {
    out.ids.push_back(candidate_ids[order[i].second]);
    out.distances.push_back(order[i].first);
  }
  for (auto f : used) out.used_features.push_back(f < feature_names.size() ? feature_names[f] : std::to_string(f));
  return out;
}

std::string_view to_string(ImputeStrategy s) {
  switch (s) {
    case ImputeStrategy::topn_mean: return "topn_mean";
    case ImputeStrategy::cluster_mean: return "cluster_mean";
    case ImputeStrategy::matrix_factorization: return "matrix_factorization";
  }
  return "unknown";
}

std::optional<ImputeStrategy> parse_impute_strategy(std::string_view s) {
  if (s == "topn_mean") return ImputeStrategy::topn_mean;
  if (s == "cluster_mean") return ImputeStrategy::cluster_mean;
  if (s == "matrix_factorization") return ImputeStrategy::matrix_factorization;
  return std::nullopt;
}

namespace {

ImputeResult impute_from_donors(std::span<const double> record, const std::vector<std::vector<double>>& donors,
                                std::size_t n, ImputeStrategy strategy, const std::vector<std::string>& names,
                                std::span<const double> global_means) {
  ImputeResult out;
  out.values.assign(record.begin(), record.end());
  for (std::size_t f = 0; f < record.size(); ++f) {
    if (!is_missing(record[f])) continue;
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& d : donors) {
      if (used >= n) break;
      if (f < d.size() && !is_missing(d[f])) {
        sum += d[f];
        ++used;
      }
    }
    const std::string name = f < names.size() ? names[f] : std::to_string(f);
    ImputedValue iv{name, 0.0, strategy, used, false};
    if (used) {
      iv.value = sum / static_cast<double>(used);
    } else {
      iv.global_fallback = true;
      iv.value = f < global_means.size() ? global_means[f] : kMissing;
      out.warnings.push_back("no donor reports '" + name + "'; using the global mean");
    }
    out.values[f] = iv.value;
    out.report.push_back(std::move(iv));
  }
  return out;
}

}  // namespace

ImputeResult impute_topn_mean(std::span<const double> record, const std::vector<std::vector<double>>& donors,
                              std::size_t n, const std::vector<std::string>& feature_names,
                              std::span<const double> global_means) {
  return impute_from_donors(record, donors, n, ImputeStrategy::topn_mean, feature_names, global_means);
}

ImputeResult impute_cluster_mean(std::span<const double> record, const std::vector<std::vector<double>>& donors,
                                 const std::vector<std::string>& feature_names,
                                 std::span<const double> global_means) {
  return impute_from_donors(record, donors, donors.size(), ImputeStrategy::cluster_mean, feature_names,
                            global_means);
}

Eigen::MatrixXd impute_matrix_factorization(const Eigen::MatrixXd& m, const AlsConfig& config) {
  if (config.rank < 1 || config.iterations < 0 || config.regularization < 0.0) {
    throw Error(ErrorKind::config, "invalid matrix factorization settings");
  }
  const Eigen::Index rows = m.rows(), cols = m.cols();
  const Eigen::Index k = config.rank;
  Rng rng(config.seed);
  Eigen::MatrixXd U(rows, k), V(cols, k);
  for (Eigen::Index i = 0; i < U.size(); ++i) U.data()[i] = 0.1 * rng.normal();
  for (Eigen::Index i = 0; i < V.size(); ++i) V.data()[i] = 0.1 * rng.normal();
  const Eigen::MatrixXd reg = config.regularization * Eigen::MatrixXd::Identity(k, k);

  for (int it = 0; it < config.iterations; ++it) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      Eigen::MatrixXd A = reg;
      Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
      for (Eigen::Index j = 0; j < cols; ++j) {
        if (is_missing(m(i, j))) continue;
        A.noalias() += V.row(j).transpose() * V.row(j);
        b.noalias() += V.row(j).transpose() * m(i, j);
      }
      U.row(i) = A.ldlt().solve(b).transpose();
    }
    for (Eigen::Index j = 0; j < cols; ++j) {
      Eigen::MatrixXd A = reg;
      Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (is_missing(m(i, j))) continue;
        A.noalias() += U.row(i).transpose() * U.row(i);
        b.noalias() += U.row(i).transpose() * m(i, j);
      }
      V.row(j) = A.ldlt().solve(b).transpose();
    }
  }
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (is_missing(m(i, j))) out(i, j) = U.row(i).dot(V.row(j));
    }
  }
  return out;
}

namespace {

// Row-wise Gaussian affinities with the bandwidth tuned to the perplexity.
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& d2, double perplexity) {
  const Eigen::Index n = d2.rows();
  const double target = std::log(perplexity);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    Eigen::VectorXd row(n);
    for (int it = 0; it < 200; ++it) {
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * d2(i, j));
        sum += row(j);
        weighted += row(j) * d2(i, j);
      }
      if (sum <= 0.0) {
        hi = beta;
        beta = (lo + hi) / 2.0;
        continue;
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      row /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (lo + hi) / 2.0;
      } else {
        hi = beta;
        beta = (lo + hi) / 2.0;
      }
    }
    P.row(i) = row.transpose();
  }
  return P;
}

Eigen::MatrixXd pca_start(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, 2);
  if (X.cols() == 0) return Y;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered.transpose() * centered);
  const Eigen::Index d = X.cols();
  for (int c = 0; c < 2 && c < d; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - c);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    Y.col(c) = centered * v;
  }
  double sd = std::sqrt(Y.col(0).squaredNorm() / static_cast<double>(n));
  if (sd > 0.0) Y *= 1e-4 / sd;
  return Y;
}

}  // namespace

Embedding2D tsne_embed(const Eigen::MatrixXd& X, const std::vector<std::string>& ids, const TsneConfig& config) {
  const Eigen::Index n = X.rows();
  if (n < 4) throw Error(ErrorKind::embedding, "t-SNE needs at least 4 rows");
  if (!X.allFinite()) throw Error(ErrorKind::embedding, "t-SNE input has missing values");
  if (static_cast<Eigen::Index>(ids.size()) != n) throw Error(ErrorKind::precondition, "id count differs from rows");
  if (!(config.perplexity > 0.0)) throw Error(ErrorKind::config, "perplexity must be positive");

  Embedding2D emb;
  emb.ids = ids;
  emb.seed = config.seed;
  emb.inputs = X;

  // Duplicate rows would drift apart under the unstable difference mode of
  // the gradient step, so only distinct rows are embedded.
  std::vector<Eigen::Index> rep(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> distinct;
  for (Eigen::Index i = 0; i < n; ++i) {
    rep[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(distinct.size());
    for (std::size_t u = 0; u < distinct.size(); ++u) {
      if (X.row(distinct[u]) == X.row(i)) {
        rep[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(u);
        break;
      }
    }
    if (rep[static_cast<std::size_t>(i)] == static_cast<Eigen::Index>(distinct.size())) distinct.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(distinct.size());
  if (m < 4) throw Error(ErrorKind::embedding, "t-SNE needs at least 4 distinct rows");
  Eigen::MatrixXd U(m, X.cols());
  for (Eigen::Index u = 0; u < m; ++u) U.row(u) = X.row(distinct[static_cast<std::size_t>(u)]);
  emb.perplexity = std::min(config.perplexity, static_cast<double>(m - 1) / 3.0);

  const Eigen::MatrixXd dist = pairwise_distances(U);
  const Eigen::MatrixXd d2 = dist.cwiseProduct(dist);
  Eigen::MatrixXd P = conditional_affinities(d2, emb.perplexity);
  P = (P + P.transpose()) / (2.0 * static_cast<double>(m));
  P = P.cwiseMax(1e-12);
  P.diagonal().setZero();

  Eigen::MatrixXd Y = pca_start(U);
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(m, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(m, 2);
  Eigen::MatrixXd num(m, m);
  Eigen::MatrixXd grad(m, 2);
  for (int it = 0; it < config.iterations; ++it) {
    const double exaggeration = it < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    double z = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < m; ++j) {
        const double v = 1.0 / (1.0 + (Y.row(i) - Y.row(j)).squaredNorm());
        num(i, j) = num(j, i) = v;
        z += 2.0 * v;
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        if (i == j) continue;
        const double mult = (exaggeration * P(i, j) - num(i, j) / z) * num(i, j);
        grad.row(i) += 4.0 * mult * (Y.row(i) - Y.row(j));
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      for (int c = 0; c < 2; ++c) {
        const bool same = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
        gains(i, c) = std::max(0.01, same ? gains(i, c) * 0.8 : gains(i, c) + 0.2);
        update(i, c) = momentum * update(i, c) - config.learning_rate * gains(i, c) * grad(i, c);
      }
    }
    Y += update;
    Y.rowwise() -= Y.colwise().mean();
  }
  emb.coords.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) emb.coords.row(i) = Y.row(rep[static_cast<std::size_t>(i)]);
  return emb;
}

std::array<double, 2> Embedding2D::predict_coords(std::span<const double> x) const {
  if (static_cast<Eigen::Index>(x.size()) != inputs.cols()) {
    throw Error(ErrorKind::input, "coordinate query has the wrong dimension");
  }
  const Eigen::Map<const Eigen::RowVectorXd> q(x.data(), static_cast<Eigen::Index>(x.size()));
  std::vector<std::pair<double, Eigen::Index>> d;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) d.emplace_back((inputs.row(i) - q).norm(), i);
  std::sort(d.begin(), d.end());
  std::array<double, 2> out{0.0, 0.0};
  if (d.front().first <= 1e-12) {
    int hits = 0;
    for (const auto& [dist, i] : d) {
      if (dist > 1e-12) break;
      out[0] += coords(i, 0);
      out[1] += coords(i, 1);
      ++hits;
    }
    out[0] /= hits;
    out[1] /= hits;
    return out;
  }
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, k)), d.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < kk; ++i) {
    const double w = 1.0 / d[i].first;
    out[0] += w * coords(d[i].second, 0);
    out[1] += w * coords(d[i].second, 1);
    wsum += w;
  }
  out[0] /= wsum;
  out[1] /= wsum;
  return out;
}

std::string scatter_csv(const std::vector<ScatterPoint>& points) {
  std::ostringstream out;
  out << "well_id,x,y,cluster_label,is_pilot\n";
  for (const auto& p : points) {
    out << quote_csv(p.well_id) << ',' << format_double(p.x) << ',' << format_double(p.y) << ',' << p.cluster << ','
        << (p.is_pilot ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::string& title) {
  static constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                          "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  constexpr double kSize = 600.0, kPad = 40.0;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!points.empty()) {
    xmin = xmax = points.front().x;
    ymin = ymax = points.front().y;
    for (const auto& p : points) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  }
  const double sx = xmax > xmin ? (kSize - 2 * kPad) / (xmax - xmin) : 1.0;
  const double sy = ymax > ymin ? (kSize - 2 * kPad) / (ymax - ymin) : 1.0;
  auto px = [&](double x) { return format_double(std::round((kPad + (x - xmin) * sx) * 100.0) / 100.0); };
  auto py = [&](double y) { return format_double(std::round((kSize - kPad - (y - ymin) * sy) * 100.0) / 100.0); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n";
  out << "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n";
  if (!title.empty()) out << "<text x=\"300\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  for (const auto& p : points) {
    if (p.is_pilot) continue;
    const char* colour = p.cluster == kNoise ? "#999999" : kPalette[static_cast<std::size_t>(p.cluster) % 8];
    out << "<circle cx=\"" << px(p.x) << "\" cy=\"" << py(p.y) << "\" r=\"4\" fill=\"" << colour
        << "\"><title>" << p.well_id << "</title></circle>\n";
  }
  for (const auto& p : points) {
    if (!p.is_pilot) continue;
    const double cx = kPad + (p.x - xmin) * sx;
    const double cy = kSize - kPad - (p.y - ymin) * sy;
    out << "<polygon class=\"pilot\" fill=\"gold\" stroke=\"black\" points=\"";
    for (int k = 0; k < 10; ++k) {
      const double r = k % 2 == 0 ? 12.0 : 5.0;
      const double a = -std::numbers::pi / 2.0 + k * std::numbers::pi / 5.0;
      out << (k ? " " : "") << format_double(std::round((cx + r * std::cos(a)) * 100.0) / 100.0) << ','
          << format_double(std::round((cy + r * std::sin(a)) * 100.0) / 100.0);
    }
    out << "\"><title>" << p.well_id << " (pilot)</title></polygon>\n";
  }
  out << "</svg>\n";
  return out.str();
}

NeighborFeatures neighbor_features(const Dataset& ds, const WellRecord& pilot, double radius_m) {
  NeighborFeatures out;
  if (!pilot.coordinates) return out;
  double sum = 0.0;
  for (const auto& w : ds.rows) {
    if (w.well_id == pilot.well_id || !w.coordinates || w.production.empty()) continue;
    const double d = std::hypot(w.coordinates->x - pilot.coordinates->x, w.coordinates->y - pilot.coordinates->y);
    if (!(d > 0.0 && d <= radius_m)) continue;
    const auto q = target_90d(w.production);
    if (!q) continue;
    sum += *q / d;
    ++out.count;
  }
  if (out.count) out.production_per_distance = sum / static_cast<double>(out.count);
  return out;
}

std::vector<double> normalized_environment(const Dataset& ds, const Normalizer& norm, const WellRecord& w) {
  const auto names = ds.environment_names();
  std::vector<double> out(names.size(), kMissing);
  for (std::size_t f = 0; f < names.size(); ++f) {
    if (f < w.environment.size() && w.environment[f]) out[f] = norm.scale(names[f], *w.environment[f]);
  }
  return out;
}

std::vector<double> environment_means(const Dataset& ds) {
  const auto p = ds.environment.size();
  std::vector<double> sum(p, 0.0);
  std::vector<std::size_t> cnt(p, 0);
  for (const auto& w : ds.rows) {
    for (std::size_t f = 0; f < p && f < w.environment.size(); ++f) {
      if (w.environment[f]) {
        sum[f] += *w.environment[f];
        ++cnt[f];
      }
    }
  }
  std::vector<double> out(p, kMissing);
  for (std::size_t f = 0; f < p; ++f) {
    if (cnt[f]) out[f] = sum[f] / static_cast<double>(cnt[f]);
  }
  return out;
}

PilotCluster build_pilot_cluster(const Dataset& ds, const WellRecord& pilot, const PilotClusterOptions& options) {
  if (pilot.layer_id.empty() || pilot.face_id.empty()) {
    throw Error(ErrorKind::precondition, "pilot needs layer_id and face_id");
  }
  PilotCluster pc;
  pc.pilot_id = pilot.well_id;

  std::vector<const WellRecord*> pool;
  for (const auto& w : ds.rows) {
    if (w.well_id != pilot.well_id) pool.push_back(&w);
  }
  auto apply = [&](const std::string& label, auto pred) {
    std::vector<const WellRecord*> kept;
    for (auto* w : pool) {
      if (pred(*w)) kept.push_back(w);
    }
    pool = std::move(kept);
    pc.filters.push_back({label, pool.size()});
    if (pool.size() < options.min_analogues) {
      throw Error(ErrorKind::insufficient_analogues,
                  std::to_string(pool.size()) + " analogue wells left after filter " + label + " (need " +
                      std::to_string(options.min_analogues) + ")");
    }
  };
  if (!pilot.field_id.empty()) {
    apply("field_id=" + pilot.field_id, [&](const WellRecord& w) { return w.field_id == pilot.field_id; });
  }
  apply("layer_id=" + pilot.layer_id, [&](const WellRecord& w) { return w.layer_id == pilot.layer_id; });
  apply("face_id=" + pilot.face_id, [&](const WellRecord& w) { return w.face_id == pilot.face_id; });
  const int lo = pilot.n_stages() - options.stage_tolerance;
  const int hi = pilot.n_stages() + options.stage_tolerance;
  apply("n_stages in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]",
        [&](const WellRecord& w) { return w.n_stages() >= lo && w.n_stages() <= hi; });

  const Normalizer norm = ds.normalization ? *ds.normalization : fit_normalizer(ds);
  const auto names = ds.environment_names();
  std::vector<std::vector<double>> vecs;
  for (auto* w : pool) vecs.push_back(normalized_environment(ds, norm, *w));
  const auto pilot_vec = normalized_environment(ds, norm, pilot);

  // Column means over the filtered wells fill gaps, the whole dataset backs
  // columns the filtered wells never report; columns with no data are dropped.
  const auto global_raw = environment_means(ds);
  std::vector<std::size_t> cols;
  std::vector<double> fill(names.size(), kMissing);
  for (std::size_t f = 0; f < names.size(); ++f) {
    double s = 0.0;
    std::size_t c = 0;
    for (const auto& v : vecs) {
      if (!is_missing(v[f])) {
        s += v[f];
        ++c;
      }
    }
    if (c) {
      fill[f] = s / static_cast<double>(c);
    } else if (!is_missing(global_raw[f])) {
      fill[f] = norm.scale(names[f], global_raw[f]);
    }
    if (!is_missing(fill[f])) cols.push_back(f);
  }
  if (cols.empty()) throw Error(ErrorKind::insufficient_data, "no environment feature is available for clustering");
  for (auto f : cols) pc.features.push_back(names[f]);

  const auto n = static_cast<Eigen::Index>(pool.size());
  Eigen::MatrixXd points(n + 1, static_cast<Eigen::Index>(cols.size()));
  std::vector<std::vector<double>> complete(pool.size());
  for (Eigen::Index r = 0; r <= n; ++r) {
    const auto& v = r < n ? vecs[static_cast<std::size_t>(r)] : pilot_vec;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const double val = is_missing(v[cols[k]]) ? fill[cols[k]] : v[cols[k]];
      points(r, static_cast<Eigen::Index>(k)) = val;
      if (r < n) complete[static_cast<std::size_t>(r)].push_back(val);
    }
  }

  std::vector<std::size_t> member_idx;
  if (points.rows() >= 10) {
    const auto choice = tune_clustering(points, options.search, static_cast<std::size_t>(n));
    pc.eps = choice.eps;
    pc.min_pts = choice.min_pts;
    pc.silhouette = choice.silhouette;
    pc.fallback = choice.fallback;
    if (!choice.fallback) {
      pc.pilot_label = choice.labels.back();
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (choice.labels[i] == pc.pilot_label) member_idx.push_back(i);
      }
      pc.filtered_labels.assign(choice.labels.begin(), choice.labels.end() - 1);
    }
  } else {
    pc.fallback = true;
  }
  if (pc.fallback) {
    member_idx.resize(pool.size());
    std::iota(member_idx.begin(), member_idx.end(), std::size_t{0});
    pc.pilot_label = 0;
    pc.filtered_labels.assign(pool.size(), 0);
  }
  for (auto* w : pool) pc.filtered_ids.push_back(w->well_id);

  if (options.n_euclid) {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> cand;
    std::vector<double> pv;
    for (auto f : cols) pv.push_back(pilot_vec[f]);
    for (auto i : member_idx) {
      ids.push_back(pool[i]->well_id);
      cand.push_back(complete[i]);
    }
    const auto top = euclidean_topn(pv, ids, cand, *options.n_euclid, pc.features);
    const std::set<std::string> keep(top.ids.begin(), top.ids.end());
    std::vector<std::size_t> kept;
    for (auto i : member_idx) {
      if (keep.count(pool[i]->well_id)) kept.push_back(i);
    }
    member_idx = std::move(kept);
  }
  if (member_idx.empty()) {
    throw Error(ErrorKind::insufficient_analogues, "the pilot cluster has no member wells");
  }
  for (auto i : member_idx) pc.members.push_back(pool[i]->well_id);

  for (std::size_t v = 0; v < kDesignDim; ++v) {
    std::vector<double> vals;
    for (auto i : member_idx) {
      if (auto x = pool[i]->design.values()[v]) vals.push_back(*x);
    }
    if (vals.empty()) {
      throw Error(ErrorKind::insufficient_analogues,
                  "no member of the pilot cluster reports " + std::string(kDesignNames[v]));
    }
    auto& b = pc.bounds[v];
    b.lower = stats::percentile(vals, 5.0);
    b.upper = stats::percentile(vals, 95.0);
    b.mean = std::clamp(stats::mean(vals), b.lower, b.upper);
  }
  std::vector<double> starts;
  for (auto i : member_idx) {
    if (pool[i]->design.start_prop_conc) starts.push_back(*pool[i]->design.start_prop_conc);
  }
  if (!starts.empty()) pc.start_conc_mean = stats::mean(starts);
  return pc;
}

nlohmann::json PilotCluster::to_json() const {
  nlohmann::json b = nlohmann::json::object();
  for (std::size_t v = 0; v < kDesignDim; ++v) {
    b[std::string(kDesignNames[v])] = {{"lower", bounds[v].lower}, {"upper", bounds[v].upper}, {"mean", bounds[v].mean}};
  }
  auto filt = nlohmann::json::array();
  for (const auto& f : filters) filt.push_back({{"filter", f.filter}, {"remaining", f.remaining}});
  return {{"pilot_id", pilot_id},
          {"members", members},
          {"bounds", b},
          {"start_conc_mean", start_conc_mean ? nlohmann::json(*start_conc_mean) : nlohmann::json()},
          {"clustering",
           {{"eps", eps},
            {"min_pts", min_pts},
            {"silhouette", silhouette ? nlohmann::json(*silhouette) : nlohmann::json()},
            {"fallback", fallback},
            {"features", features}}},
          {"filters", filt}};
}

std::vector<ScatterPoint> cluster_scatter(const Dataset& ds, const WellRecord& pilot, const PilotCluster& cluster,
                                          const TsneConfig& config) {
  const Normalizer norm = ds.normalization ? *ds.normalization : fit_normalizer(ds);
  // The filtered wells never include the pilot; it goes in as the last row.
  std::vector<std::string> ids = cluster.filtered_ids;
  std::vector<int> labels = cluster.filtered_labels;
  ids.push_back(pilot.well_id);
  labels.push_back(cluster.pilot_label);
  const std::size_t n = ids.size();
  const std::size_t d = ds.environment.size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const WellRecord* w = i + 1 == n ? &pilot : ds.find(ids[i]);
    if (!w) throw Error(ErrorKind::input, "unknown well '" + ids[i] + "'");
    const auto v = normalized_environment(ds, norm, *w);
    for (std::size_t c = 0; c < d; ++c) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v[c];
  }
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    double sum = 0.0;
    int cnt = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (!std::isnan(X(i, c))) {
        sum += X(i, c);
        ++cnt;
      }
    }
    const double fill = cnt ? sum / cnt : 0.5;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      if (std::isnan(X(i, c))) X(i, c) = fill;
  }
  const auto emb = tsne_embed(X, ids, config);
  std::vector<ScatterPoint> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.push_back({ids[i], emb.coords(r, 0), emb.coords(r, 1), labels[i], i + 1 == n});
  }
  return out;
}

}  // namespace fracopt
