#include "fracopt/boosted_trees.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fracopt/error.hpp"
#include "fracopt/random.hpp"

namespace fracopt {

namespace {

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& target,
              const std::vector<std::vector<Eigen::Index>>& presorted, const BoostingParams& params)
      : X_(X), target_(target), presorted_(presorted), params_(params) {}

  RegressionTree build(const std::vector<Eigen::Index>& sample) {
    std::vector<char> in_sample(static_cast<std::size_t>(X_.rows()), 0);
    for (auto r : sample) in_sample[static_cast<std::size_t>(r)] = 1;
    std::vector<std::vector<Eigen::Index>> sorted(presorted_.size());
    for (std::size_t f = 0; f < presorted_.size(); ++f) {
      sorted[f].reserve(sample.size());
      for (auto r : presorted_[f]) {
        if (in_sample[static_cast<std::size_t>(r)]) sorted[f].push_back(r);
      }
    }
    tree_ = RegressionTree{};
    grow(sorted, sample, 0);
    return std::move(tree_);
  }

 private:
  int grow(const std::vector<std::vector<Eigen::Index>>& sorted, const std::vector<Eigen::Index>& rows,
           int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double sum = 0.0;
    for (auto r : rows) sum += target_(r);
    const double n = static_cast<double>(rows.size());
    tree_.nodes[static_cast<std::size_t>(id)].value = params_.learning_rate * sum / n;

    if (depth >= params_.max_depth ||
        rows.size() < 2 * static_cast<std::size_t>(params_.min_samples_leaf)) {
      return id;
    }
    const auto split = best_split(sorted, sum, rows.size());
    if (split.feature < 0) return id;

    std::vector<char> go_left(static_cast<std::size_t>(X_.rows()), 0);
    std::vector<Eigen::Index> left_rows, right_rows;
    for (auto r : rows) {
      const bool left = X_(r, split.feature) <= split.threshold;
      go_left[static_cast<std::size_t>(r)] = left;
      (left ? left_rows : right_rows).push_back(r);
    }
    std::vector<std::vector<Eigen::Index>> left_sorted(sorted.size()), right_sorted(sorted.size());
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      left_sorted[f].reserve(left_rows.size());
      right_sorted[f].reserve(right_rows.size());
      for (auto r : sorted[f]) (go_left[static_cast<std::size_t>(r)] ? left_sorted[f] : right_sorted[f]).push_back(r);
    }
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    const int l = grow(left_sorted, left_rows, depth + 1);
    const int r = grow(right_sorted, right_rows, depth + 1);
    tree_.nodes[static_cast<std::size_t>(id)].left = l;
    tree_.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  SplitCandidate best_split(const std::vector<std::vector<Eigen::Index>>& sorted, double total,
                            std::size_t count) const {
    SplitCandidate best;
    const double n = static_cast<double>(count);
    const double base = total * total / n;
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      const auto& order = sorted[f];
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left_sum += target_(order[i]);
        const std::size_t n_left = i + 1;
        if (n_left < min_leaf) continue;
        if (order.size() - n_left < min_leaf) break;
        const double x0 = X_(order[i], static_cast<Eigen::Index>(f));
        const double x1 = X_(order[i + 1], static_cast<Eigen::Index>(f));
        if (!(x1 > x0)) continue;
        const double right_sum = total - left_sum;
        const double nl = static_cast<double>(n_left);
        const double gain = left_sum * left_sum / nl + right_sum * right_sum / (n - nl) - base;
        if (gain > best.gain + 1e-12 * std::abs(base) + 1e-300) {
          double threshold = x0 + 0.5 * (x1 - x0);
          if (!(threshold < x1)) threshold = x0;
          best = {static_cast<int>(f), threshold, gain};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& target_;
  const std::vector<std::vector<Eigen::Index>>& presorted_;
  const BoostingParams& params_;
  RegressionTree tree_;
};

// Covers come from every training row; internal values become the
// cover-weighted means of their children so that expectations along a path
// are consistent with the leaves.
void assign_covers(RegressionTree& tree, const Eigen::MatrixXd& X) {
  for (auto& node : tree.nodes) node.cover = 0.0;
  std::vector<double> x(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) x[static_cast<std::size_t>(j)] = X(i, j);
    int k = 0;
    while (true) {
      auto& node = tree.nodes[static_cast<std::size_t>(k)];
      node.cover += 1.0;
      if (node.is_leaf()) break;
      k = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
    }
  }
  for (std::size_t i = tree.nodes.size(); i-- > 0;) {
    auto& node = tree.nodes[i];
    if (node.is_leaf()) continue;
    const auto& l = tree.nodes[static_cast<std::size_t>(node.left)];
    const auto& r = tree.nodes[static_cast<std::size_t>(node.right)];
    node.value = (l.cover * l.value + r.cover * r.value) / node.cover;
  }
}

}  // namespace

double RegressionTree::predict(std::span<const double> x) const {
  int k = 0;
  while (true) {
    const auto& node = nodes[static_cast<std::size_t>(k)];
    if (node.is_leaf()) return node.value;
    k = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
  }
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int out = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out = std::max(out, d[i]);
    if (!nodes[i].is_leaf()) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return out;
}

void BoostingParams::validate() const {
  if (n_trees < 0) throw Error(ErrorKind::config, "n_trees must be >= 0");
  if (max_depth < 1) throw Error(ErrorKind::config, "max_depth must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw Error(ErrorKind::config, "learning_rate must lie in (0, 1]");
  }
  if (!(subsample > 0.0 && subsample <= 1.0)) throw Error(ErrorKind::config, "subsample must lie in (0, 1]");
  if (min_samples_leaf < 1) throw Error(ErrorKind::config, "min_samples_leaf must be >= 1");
}

double BoostedTreesComponent::predict(std::span<const double> x) const {
  double out = 0.0;
  for (const auto& t : trees) out += t.predict(x);
  return out;
}

Eigen::VectorXd BoostedTreesComponent::predict(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
  std::vector<double> x(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) x[static_cast<std::size_t>(j)] = X(i, j);
    out(i) = predict(x);
  }
  return out;
}

Eigen::MatrixXd BoostedTreesComponent::staged_predict(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(trees.size()));
  std::vector<double> x(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) x[static_cast<std::size_t>(j)] = X(i, j);
    double acc = 0.0;
    for (std::size_t t = 0; t < trees.size(); ++t) {
      acc += trees[t].predict(x);
      out(i, static_cast<Eigen::Index>(t)) = acc;
    }
  }
  return out;
}

double BoostedTreesComponent::expected_value() const {
  double out = 0.0;
  for (const auto& t : trees) {
    if (!t.nodes.empty()) out += t.nodes.front().value;
  }
  return out;
}

BoostedTreesComponent fit_boosted(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                                  const BoostingParams& params, std::uint64_t seed) {
  params.validate();
  const Eigen::Index n = X.rows();
  if (residuals.size() != n) throw Error(ErrorKind::precondition, "boosting: X and residual sizes differ");
  if (n < 2 * static_cast<Eigen::Index>(params.min_samples_leaf)) {
    throw Error(ErrorKind::training, "boosting needs at least 2 * min_samples_leaf rows (have " +
                                         std::to_string(n) + ")");
  }
  if (X.hasNaN() || residuals.hasNaN()) {
    throw Error(ErrorKind::training, "boosting: missing values must be imputed upstream");
  }

  BoostedTreesComponent out;
  out.params = params;
  if (params.n_trees == 0) return out;

  std::vector<std::vector<Eigen::Index>> presorted(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    auto& order = presorted[static_cast<std::size_t>(f)];
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return X(a, f) < X(b, f); });
  }

  Rng rng(seed);
  Eigen::VectorXd current = residuals;
  const auto sample_size = std::max<Eigen::Index>(
      2 * params.min_samples_leaf,
      static_cast<Eigen::Index>(std::floor(params.subsample * static_cast<double>(n))));
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Eigen::Index{0});

  TreeBuilder builder(X, current, presorted, params);
  std::vector<double> x(static_cast<std::size_t>(X.cols()));
  for (int t = 0; t < params.n_trees; ++t) {
    std::vector<Eigen::Index> sample = all;
    if (sample_size < n) {
      rng.shuffle(sample);
      sample.resize(static_cast<std::size_t>(sample_size));
      std::sort(sample.begin(), sample.end());
    }
    RegressionTree tree = builder.build(sample);
    assign_covers(tree, X);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < X.cols(); ++j) x[static_cast<std::size_t>(j)] = X(i, j);
      current(i) -= tree.predict(x);
    }
    out.trees.push_back(std::move(tree));
  }
  return out;
}

nlohmann::json BoostedTreesComponent::to_json() const {
  auto trees_json = nlohmann::json::array();
  for (const auto& t : trees) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value, cover;
    for (const auto& nd : t.nodes) {
      feature.push_back(nd.feature);
      threshold.push_back(nd.threshold);
      left.push_back(nd.left);
      right.push_back(nd.right);
      value.push_back(nd.value);
      cover.push_back(nd.cover);
    }
    trees_json.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left},
                          {"right", right},     {"value", value},         {"cover", cover}});
  }
  return {{"params",
           {{"n_trees", params.n_trees},
            {"max_depth", params.max_depth},
            {"learning_rate", params.learning_rate},
            {"subsample", params.subsample},
            {"min_samples_leaf", params.min_samples_leaf}}},
          {"trees", trees_json}};
}

BoostedTreesComponent BoostedTreesComponent::from_json(const nlohmann::json& j) {
  BoostedTreesComponent out;
  const auto& p = j.at("params");
  out.params.n_trees = p.at("n_trees").get<int>();
  out.params.max_depth = p.at("max_depth").get<int>();
  out.params.learning_rate = p.at("learning_rate").get<double>();
  out.params.subsample = p.at("subsample").get<double>();
  out.params.min_samples_leaf = p.at("min_samples_leaf").get<int>();
  for (const auto& tj : j.at("trees")) {
    const auto feature = tj.at("feature").get<std::vector<int>>();
    const auto threshold = tj.at("threshold").get<std::vector<double>>();
    const auto left = tj.at("left").get<std::vector<int>>();
    const auto right = tj.at("right").get<std::vector<int>>();
    const auto value = tj.at("value").get<std::vector<double>>();
    const auto cover = tj.at("cover").get<std::vector<double>>();
    const auto n = feature.size();
    if (threshold.size() != n || left.size() != n || right.size() != n || value.size() != n ||
        cover.size() != n) {
      throw Error(ErrorKind::schema, "tree arrays differ in length");
    }
    RegressionTree t;
    for (std::size_t i = 0; i < n; ++i) {
      const bool bad_child = feature[i] >= 0 && (left[i] <= static_cast<int>(i) || right[i] <= static_cast<int>(i) ||
                                                 left[i] >= static_cast<int>(n) || right[i] >= static_cast<int>(n));
      if (bad_child) throw Error(ErrorKind::schema, "tree child index out of range");
      t.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i], cover[i]});
    }
    out.trees.push_back(std::move(t));
  }
  return out;
}

}  // namespace fracopt
