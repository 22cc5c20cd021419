#include "fracopt/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "fracopt/error.hpp"
#include "fracopt/stats.hpp"
#include "fracopt/welldata_io.hpp"

namespace fracopt {

std::optional<double> spearman_corr(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::precondition, "spearman_corr: length mismatch");
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (is_missing(x[i]) || is_missing(y[i])) continue;
    xs.push_back(x[i]);
    ys.push_back(y[i]);
  }
  if (xs.size() < 3) throw Error(ErrorKind::insufficient_data, "spearman_corr needs at least 3 complete pairs");
  const auto rx = stats::midranks(xs);
  const auto ry = stats::midranks(ys);
  return stats::pearson(rx, ry);
}

namespace {

std::vector<double> column_values(const FeatureTable& t, Eigen::Index c) {
  std::vector<double> v(static_cast<std::size_t>(t.rows()));
  for (Eigen::Index r = 0; r < t.rows(); ++r) v[static_cast<std::size_t>(r)] = t.X(r, c);
  return v;
}

std::size_t count_missing(std::span<const double> v) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double d) { return is_missing(d); }));
}

double observed_variance(std::span<const double> v) {
  std::vector<double> obs;
  for (double d : v) {
    if (!is_missing(d)) obs.push_back(d);
  }
  return obs.empty() ? 0.0 : stats::variance(obs);
}

std::optional<double> try_spearman(std::span<const double> a, std::span<const double> b) {
  try {
    return spearman_corr(a, b);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::insufficient_data) return std::nullopt;
    throw;
  }
}

}  // namespace

EliminationResult eliminate(const FeatureTable& table, const EliminationConfig& config) {
  const auto p = static_cast<std::size_t>(table.cols());
  const double n = static_cast<double>(std::max<Eigen::Index>(table.rows(), 1));
  std::vector<std::vector<double>> cols(p);
  std::vector<std::size_t> missing(p);
  for (std::size_t c = 0; c < p; ++c) {
    cols[c] = column_values(table, static_cast<Eigen::Index>(c));
    missing[c] = count_missing(cols[c]);
  }
  std::vector<bool> alive(p, true);
  EliminationResult out;

  for (std::size_t c = 0; c < p; ++c) {
    if (static_cast<double>(missing[c]) / n > config.missing_thresh) {
      alive[c] = false;
      out.dropped.emplace_back(table.names[c], "missing");
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p && alive[i]; ++j) {
      if (!alive[j]) continue;
      const auto rho = try_spearman(cols[i], cols[j]);
      if (!rho || std::abs(*rho) < config.corr_thresh) continue;
      std::size_t drop;
      if (missing[i] != missing[j]) {
        drop = missing[i] > missing[j] ? i : j;
      } else {
        drop = table.names[i] < table.names[j] ? j : i;
      }
      alive[drop] = false;
      out.dropped.emplace_back(table.names[drop], "correlated with " + table.names[drop == i ? j : i]);
    }
  }
  for (std::size_t c = 0; c < p; ++c) {
    if (alive[c] && observed_variance(cols[c]) <= config.var_thresh) {
      alive[c] = false;
      out.dropped.emplace_back(table.names[c], "variance");
    }
  }
  for (std::size_t c = 0; c < p; ++c) {
    if (alive[c]) out.retained.push_back(table.names[c]);
  }
  if (out.retained.empty()) throw Error(ErrorKind::pipeline, "feature elimination removed every feature");
  return out;
}

std::vector<std::string> RfeResult::retained_features() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (retained[i]) out.push_back(features[i]);
  }
  return out;
}

RfeResult rfe(const ModelTrainer& trainer, const FeatureTable& table, std::size_t n_keep, std::size_t step,
              std::uint64_t seed) {
  const auto p = static_cast<std::size_t>(table.cols());
  if (n_keep < 1 || n_keep > p) throw Error(ErrorKind::config, "rfe: n_keep must lie in [1, n_features]");
  if (step < 1) throw Error(ErrorKind::config, "rfe: step must be at least 1");
  if (!table.X.allFinite()) throw Error(ErrorKind::precondition, "rfe needs a complete feature table");

  RfeResult res;
  res.features = table.names;
  res.rank.assign(p, 0);
  res.retained.assign(p, false);

  const auto split = split_holdout(table.rows(), 0.25, seed);
  std::vector<std::string> active = table.names;
  int next_worst = static_cast<int>(p);
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < p; ++i) position[table.names[i]] = i;

  for (int iteration = 0;; ++iteration) {
    const auto sub = table.select_columns(active);
    const auto train = sub.select_rows(split.train);
    const auto valid = sub.select_rows(split.test);
    StackedModel model;
    try {
      model = trainer(train);
    } catch (const Error& e) {
      throw Error(e.kind(), "rfe iteration " + std::to_string(iteration) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::training, "rfe iteration " + std::to_string(iteration) + ": " + e.what());
    }
    std::vector<double> importance(active.size(), 0.0);
    std::vector<double> row(active.size());
    for (Eigen::Index r = 0; r < valid.rows(); ++r) {
      for (std::size_t c = 0; c < active.size(); ++c) row[c] = valid.X(r, static_cast<Eigen::Index>(c));
      const auto a = attribute(model, row);
      for (std::size_t c = 0; c < active.size(); ++c) importance[c] += std::abs(a.contributions[c]);
    }
    // Ascending importance; ties eliminate the later column first.
    std::vector<std::size_t> order(active.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (importance[a] != importance[b]) return importance[a] < importance[b];
      return a > b;
    });
    if (active.size() <= n_keep) {
      for (std::size_t k = 0; k < order.size(); ++k) {
        const auto idx = position[active[order[k]]];
        res.rank[idx] = next_worst--;
        res.retained[idx] = true;
      }
      break;
    }
    const std::size_t n_drop = std::min(step, active.size() - n_keep);
    std::vector<bool> drop(active.size(), false);
    for (std::size_t k = 0; k < n_drop; ++k) {
      drop[order[k]] = true;
      res.rank[position[active[order[k]]]] = next_worst--;
    }
    std::vector<std::string> kept;
    for (std::size_t c = 0; c < active.size(); ++c) {
      if (!drop[c]) kept.push_back(active[c]);
    }
    active = std::move(kept);
  }
  return res;
}

std::optional<double> sobol_first_order(std::span<const double> x, std::span<const double> y, int n_bins) {
  if (x.size() != y.size()) throw Error(ErrorKind::precondition, "sobol_first_order: length mismatch");
  if (n_bins < 2) throw Error(ErrorKind::config, "sobol_first_order needs at least 2 bins");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!is_missing(x[i]) && !is_missing(y[i])) idx.push_back(i);
  }
  const std::size_t n = idx.size();
  if (n < static_cast<std::size_t>(10 * n_bins)) {
    throw Error(ErrorKind::insufficient_data,
                "sobol_first_order needs at least " + std::to_string(10 * n_bins) + " complete samples");
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ys(n);
  for (std::size_t k = 0; k < n; ++k) ys[k] = y[idx[k]];
  const double total_var = stats::variance(ys);
  if (total_var <= 0.0) return std::nullopt;
  const double y_mean = stats::mean(ys);
  const auto bins = static_cast<std::size_t>(n_bins);
  double between = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * n / bins;
    const std::size_t hi = (b + 1) * n / bins;
    if (hi == lo) continue;
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += ys[k];
    const double m = s / static_cast<double>(hi - lo);
    between += static_cast<double>(hi - lo) * (m - y_mean) * (m - y_mean);
  }
  between /= static_cast<double>(n);
  return std::clamp(between / total_var, 0.0, 1.0);
}

double Attribution::total() const {
  return base + std::accumulate(contributions.begin(), contributions.end(), 0.0);
}

namespace {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double weight = 0.0;
};

void extend_path(std::vector<PathElement>& path, int depth, double zero_fraction, double one_fraction, int feature) {
  path[static_cast<std::size_t>(depth)] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  const double d1 = depth + 1;
  for (int i = depth - 1; i >= 0; --i) {
    auto& cur = path[static_cast<std::size_t>(i)];
    path[static_cast<std::size_t>(i) + 1].weight += one_fraction * cur.weight * (i + 1) / d1;
    cur.weight = zero_fraction * cur.weight * (depth - i) / d1;
  }
}

void unwind_path(std::vector<PathElement>& path, int depth, int index) {
  const double one = path[static_cast<std::size_t>(index)].one_fraction;
  const double zero = path[static_cast<std::size_t>(index)].zero_fraction;
  double next = path[static_cast<std::size_t>(depth)].weight;
  const double d1 = depth + 1;
  for (int i = depth - 1; i >= 0; --i) {
    auto& cur = path[static_cast<std::size_t>(i)];
    if (one != 0.0) {
      const double tmp = cur.weight;
      cur.weight = next * d1 / ((i + 1) * one);
      next = tmp - cur.weight * zero * (depth - i) / d1;
    } else {
      cur.weight = cur.weight * d1 / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    auto& dst = path[static_cast<std::size_t>(i)];
    const auto& src = path[static_cast<std::size_t>(i) + 1];
    dst.feature = src.feature;
    dst.zero_fraction = src.zero_fraction;
    dst.one_fraction = src.one_fraction;
  }
}

double unwound_path_sum(const std::vector<PathElement>& path, int depth, int index) {
  const double one = path[static_cast<std::size_t>(index)].one_fraction;
  const double zero = path[static_cast<std::size_t>(index)].zero_fraction;
  double next = path[static_cast<std::size_t>(depth)].weight;
  double total = 0.0;
  const double d1 = depth + 1;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = next * d1 / ((i + 1) * one);
      total += tmp;
      next = path[static_cast<std::size_t>(i)].weight - tmp * zero * (depth - i) / d1;
    } else if (zero != 0.0) {
      total += path[static_cast<std::size_t>(i)].weight / zero / ((depth - i) / d1);
    }
  }
  return total;
}

void shap_recurse(const RegressionTree& tree, std::span<const double> x, std::span<double> phi, int node,
                  std::vector<PathElement> path, int depth, double zero_fraction, double one_fraction,
                  int feature) {
  if (path.size() < static_cast<std::size_t>(depth) + 1) path.resize(static_cast<std::size_t>(depth) + 1);
  extend_path(path, depth, zero_fraction, one_fraction, feature);
  const auto& nd = tree.nodes[static_cast<std::size_t>(node)];
  if (nd.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const auto& el = path[static_cast<std::size_t>(i)];
      const double w = unwound_path_sum(path, depth, i);
      phi[static_cast<std::size_t>(el.feature)] += w * (el.one_fraction - el.zero_fraction) * nd.value;
    }
    return;
  }
  const bool go_left = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold;
  const int hot = go_left ? nd.left : nd.right;
  const int cold = go_left ? nd.right : nd.left;
  double incoming_zero = 1.0, incoming_one = 1.0;
  int k = 1;
  for (; k <= depth; ++k) {
    if (path[static_cast<std::size_t>(k)].feature == nd.feature) break;
  }
  if (k <= depth) {
    incoming_zero = path[static_cast<std::size_t>(k)].zero_fraction;
    incoming_one = path[static_cast<std::size_t>(k)].one_fraction;
    unwind_path(path, depth, k);
    --depth;
  }
  const double cover = nd.cover;
  const auto frac = [&](int child) {
    return cover > 0.0 ? tree.nodes[static_cast<std::size_t>(child)].cover / cover : 0.5;
  };
  shap_recurse(tree, x, phi, hot, path, depth + 1, frac(hot) * incoming_zero, incoming_one, nd.feature);
  shap_recurse(tree, x, phi, cold, path, depth + 1, frac(cold) * incoming_zero, 0.0, nd.feature);
}

}  // namespace

void tree_shap(const RegressionTree& tree, std::span<const double> x, std::span<double> phi) {
  if (tree.nodes.empty() || tree.nodes.front().is_leaf()) return;
  shap_recurse(tree, x, phi, 0, std::vector<PathElement>(static_cast<std::size_t>(tree.depth()) + 2), 0, 1.0, 1.0,
               -1);
}

Attribution attribute(const StackedModel& model, std::span<const double> x) {
  model.predict(x);  // validates size and completeness
  Attribution a;
  a.contributions.assign(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    a.contributions[i] = model.ridge.weights[i] * (x[i] - model.ridge.means[i]);
  }
  a.base = model.ridge.mean_prediction() + model.trees.expected_value();
  for (const auto& tree : model.trees.trees) tree_shap(tree, x, a.contributions);
  return a;
}

namespace {

std::string opt_to_csv(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

nlohmann::json opt_to_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

std::string FeatureReport::to_csv() const {
  std::ostringstream out;
  out << "feature,missing_fraction,variance,spearman_partner,spearman_rho,rfe_rank,sobol_first_order,"
         "mean_abs_shap\n";
  for (const auto& r : rows) {
    out << quote_csv(r.name) << ',' << format_double(r.missing_fraction) << ',' << format_double(r.variance) << ','
        << quote_csv(r.spearman_partner) << ',' << opt_to_csv(r.spearman_rho) << ','
        << (r.rfe_rank ? std::to_string(*r.rfe_rank) : std::string()) << ',' << opt_to_csv(r.sobol_first_order)
        << ',' << opt_to_csv(r.mean_abs_shap) << '\n';
  }
  return out.str();
}

nlohmann::json FeatureReport::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"feature", r.name},
                   {"missing_fraction", r.missing_fraction},
                   {"variance", r.variance},
                   {"spearman_partner", r.spearman_partner.empty() ? nlohmann::json() : nlohmann::json(r.spearman_partner)},
                   {"spearman_rho", opt_to_json(r.spearman_rho)},
                   {"rfe_rank", r.rfe_rank ? nlohmann::json(*r.rfe_rank) : nlohmann::json()},
                   {"sobol_first_order", opt_to_json(r.sobol_first_order)},
                   {"mean_abs_shap", opt_to_json(r.mean_abs_shap)}});
  }
  return {{"features", arr}};
}

std::vector<FeatureReportRow> FeatureReport::ranked() const {
  auto out = rows;
  std::stable_sort(out.begin(), out.end(), [](const FeatureReportRow& a, const FeatureReportRow& b) {
    const double sa = a.mean_abs_shap.value_or(-1.0);
    const double sb = b.mean_abs_shap.value_or(-1.0);
    if (sa != sb) return sa > sb;
    return a.name < b.name;
  });
  return out;
}

FeatureReport build_feature_report(const FeatureTable& raw, const StackedModel* model, const RfeResult* rfe_result,
                                   int sobol_bins) {
  const auto p = static_cast<std::size_t>(raw.cols());
  std::vector<std::vector<double>> cols(p);
  for (std::size_t c = 0; c < p; ++c) cols[c] = column_values(raw, static_cast<Eigen::Index>(c));
  const std::vector<double> y(raw.y.data(), raw.y.data() + raw.y.size());

  std::map<std::string, double> shap;
  if (model) {
    const auto names = model->feature_names();
    std::vector<std::size_t> src(names.size());
    for (std::size_t k = 0; k < names.size(); ++k) src[k] = raw.column(names[k]);
    std::vector<double> sums(names.size(), 0.0), row(names.size());
    std::size_t used = 0;
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      bool complete = true;
      for (std::size_t k = 0; k < names.size(); ++k) {
        row[k] = raw.X(r, static_cast<Eigen::Index>(src[k]));
        if (is_missing(row[k])) {
          if (k < model->training_means.size()) {
            row[k] = model->training_means[k];
          } else {
            complete = false;
          }
        }
      }
      if (!complete) continue;
      const auto a = attribute(*model, row);
      for (std::size_t k = 0; k < names.size(); ++k) sums[k] += std::abs(a.contributions[k]);
      ++used;
    }
    if (used) {
      for (std::size_t k = 0; k < names.size(); ++k) shap[names[k]] = sums[k] / static_cast<double>(used);
    }
  }

  FeatureReport rep;
  const double n = static_cast<double>(std::max<Eigen::Index>(raw.rows(), 1));
  for (std::size_t c = 0; c < p; ++c) {
    FeatureReportRow row;
    row.name = raw.names[c];
    row.missing_fraction = static_cast<double>(count_missing(cols[c])) / n;
    row.variance = observed_variance(cols[c]);
    for (std::size_t o = 0; o < p; ++o) {
      if (o == c) continue;
      const auto rho = try_spearman(cols[c], cols[o]);
      if (rho && (!row.spearman_rho || std::abs(*rho) > std::abs(*row.spearman_rho))) {
        row.spearman_rho = rho;
        row.spearman_partner = raw.names[o];
      }
    }
    try {
      row.sobol_first_order = sobol_first_order(cols[c], y, sobol_bins);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::insufficient_data) throw;
    }
    if (rfe_result) {
      for (std::size_t k = 0; k < rfe_result->features.size(); ++k) {
        if (rfe_result->features[k] == row.name) row.rfe_rank = rfe_result->rank[k];
      }
    }
    if (auto it = shap.find(row.name); it != shap.end()) row.mean_abs_shap = it->second;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

}  // namespace fracopt
