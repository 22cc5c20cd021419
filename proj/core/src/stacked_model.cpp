#include "fracopt/stacked_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "fracopt/error.hpp"
#include "fracopt/random.hpp"

namespace fracopt {

namespace {

FeatureEncoder passthrough_encoder(const std::vector<std::string>& names) {
  std::vector<FeatureEncoder::Column> cols;
  for (const auto& n : names) cols.push_back({FeatureEncoder::Source::environment, n, n, {}});
  return FeatureEncoder(std::move(cols));
}

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

// Grid points that differ only in n_trees share one boosted fit scored at
// each requested stage; the trees of a shorter run are a prefix of a longer
// run with the same seed.
struct TreeGroupKey {
  double l2_lambda;
  int max_depth;
  double learning_rate;
  double subsample;
  int min_samples_leaf;
  auto operator<=>(const TreeGroupKey&) const = default;
};

TreeGroupKey group_key(const HyperPoint& p) {
  return {p.l2_lambda, p.boosting.max_depth, p.boosting.learning_rate, p.boosting.subsample,
          p.boosting.min_samples_leaf};
}

}  // namespace

double StackedModel::predict(std::span<const double> x) const {
  if (x.size() != n_features()) {
    throw Error(ErrorKind::input, "feature vector has " + std::to_string(x.size()) + " entries, model expects " +
                                      std::to_string(n_features()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      const auto names = feature_names();
      throw Error(ErrorKind::input,
                  "missing value for feature '" + (i < names.size() ? names[i] : std::to_string(i)) + "'");
    }
  }
  return ridge.predict(x) + trees.predict(x);
}

Eigen::VectorXd StackedModel::predict(const Eigen::MatrixXd& X) const {
  if (static_cast<std::size_t>(X.cols()) != n_features()) {
    throw Error(ErrorKind::input, "feature matrix has the wrong number of columns");
  }
  if (!X.allFinite()) throw Error(ErrorKind::input, "feature matrix has missing values");
  return ridge.predict(X) + trees.predict(X);
}

double StackedModel::predict_record(const WellRecord& well,
                                    const std::vector<std::string>& environment_names) const {
  return predict(encoder.encode(well, environment_names));
}

nlohmann::json StackedModel::to_json() const {
  auto cv = nlohmann::json::array();
  for (const auto& s : cv_scores) {
    cv.push_back({{"l2_lambda", s.point.l2_lambda},
                  {"n_trees", s.point.boosting.n_trees},
                  {"max_depth", s.point.boosting.max_depth},
                  {"learning_rate", s.point.boosting.learning_rate},
                  {"subsample", s.point.boosting.subsample},
                  {"min_samples_leaf", s.point.boosting.min_samples_leaf},
                  {"mean_rmse", s.mean_rmse},
                  {"fold_rmse", s.fold_rmse}});
  }
  return {{"format", "fracopt.stacked_model"},
          {"version", kFormatVersion},
          {"schema", encoder.to_json()},
          {"ridge", ridge.to_json()},
          {"boosted_trees", trees.to_json()},
          {"training", {{"seed", seed}, {"training_means", training_means}, {"cv_scores", cv}}}};
}

StackedModel StackedModel::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "fracopt.stacked_model") {
    throw Error(ErrorKind::schema, "not a stacked model document");
  }
  if (j.at("version").get<int>() != kFormatVersion) {
    throw Error(ErrorKind::schema, "unsupported model version " + j.at("version").dump());
  }
  StackedModel m;
  m.encoder = FeatureEncoder::from_json(j.at("schema"));
  m.ridge = RidgeComponent::from_json(j.at("ridge"));
  m.trees = BoostedTreesComponent::from_json(j.at("boosted_trees"));
  m.selected.l2_lambda = m.ridge.l2_lambda;
  m.selected.boosting = m.trees.params;
  const auto& t = j.at("training");
  m.seed = t.at("seed").get<std::uint64_t>();
  m.training_means = t.at("training_means").get<std::vector<double>>();
  for (const auto& s : t.at("cv_scores")) {
    CvScore c;
    c.point.l2_lambda = s.at("l2_lambda").get<double>();
    c.point.boosting.n_trees = s.at("n_trees").get<int>();
    c.point.boosting.max_depth = s.at("max_depth").get<int>();
    c.point.boosting.learning_rate = s.at("learning_rate").get<double>();
    c.point.boosting.subsample = s.at("subsample").get<double>();
    c.point.boosting.min_samples_leaf = s.at("min_samples_leaf").get<int>();
    c.mean_rmse = s.at("mean_rmse").get<double>();
    c.fold_rmse = s.at("fold_rmse").get<std::vector<double>>();
    m.cv_scores.push_back(std::move(c));
  }
  if (m.encoder.size() != m.ridge.weights.size()) {
    throw Error(ErrorKind::schema, "model schema and ridge weights differ in size");
  }
  for (const auto& tree : m.trees.trees) {
    for (const auto& nd : tree.nodes) {
      if (nd.feature >= static_cast<int>(m.encoder.size())) {
        throw Error(ErrorKind::schema, "tree split feature outside the schema");
      }
    }
  }
  return m;
}

void StackedModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << to_json().dump(1) << '\n';
}

StackedModel StackedModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("malformed model file: ") + e.what());
  }
}

std::vector<HyperPoint> default_grid() {
  std::vector<HyperPoint> grid;
  for (double lambda : {1.0, 30.0}) {
    for (int depth : {2, 3, 4}) {
      for (int n_trees : {100, 250}) {
        HyperPoint p;
        p.l2_lambda = lambda;
        p.boosting.n_trees = n_trees;
        p.boosting.max_depth = depth;
        p.boosting.learning_rate = 0.05;
        p.boosting.subsample = 0.8;
        p.boosting.min_samples_leaf = 5;
        grid.push_back(p);
      }
    }
  }
  return grid;
}

StackedModel fit_stacked_fixed(const FeatureTable& table, const HyperPoint& point, std::uint64_t seed,
                               FeatureEncoder encoder) {
  StackedModel m;
  m.encoder = encoder.size() ? std::move(encoder) : passthrough_encoder(table.names);
  if (m.encoder.size() != static_cast<std::size_t>(table.cols())) {
    throw Error(ErrorKind::schema, "encoder and feature table disagree on column count");
  }
  m.ridge = fit_ridge(table.X, table.y, point.l2_lambda);
  const Eigen::VectorXd residuals = table.y - m.ridge.predict(table.X);
  m.trees = fit_boosted(table.X, residuals, point.boosting, seed);
  m.selected = point;
  m.seed = seed;
  return m;
}

std::vector<int> assign_folds(Eigen::Index n, int k, std::uint64_t seed) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) {
    fold[static_cast<std::size_t>(order[i])] = static_cast<int>(i % static_cast<std::size_t>(k));
  }
  return fold;
}

StackedModel fit_stacked(const FeatureTable& table, const std::vector<HyperPoint>& grid, int n_folds,
                         std::uint64_t seed, FeatureEncoder encoder) {
  if (grid.empty()) throw Error(ErrorKind::config, "hyperparameter grid is empty");
  if (n_folds < 2) throw Error(ErrorKind::config, "need at least 2 folds");
  if (table.rows() < 2 * n_folds) {
    throw Error(ErrorKind::precondition, "need at least 2 * n_folds rows with valid targets");
  }
  for (const auto& p : grid) p.boosting.validate();

  const auto fold = assign_folds(table.rows(), n_folds, seed);
  std::map<TreeGroupKey, std::vector<std::size_t>> groups;
  for (std::size_t g = 0; g < grid.size(); ++g) groups[group_key(grid[g])].push_back(g);

  std::vector<CvScore> scores(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) scores[g].point = grid[g];

  for (int f = 0; f < n_folds; ++f) {
    std::vector<Eigen::Index> train, valid;
    for (Eigen::Index i = 0; i < table.rows(); ++i) {
      (fold[static_cast<std::size_t>(i)] == f ? valid : train).push_back(i);
    }
    const auto tr = table.select_rows(train);
    const auto va = table.select_rows(valid);
    for (const auto& [key, members] : groups) {
      HyperPoint longest = grid[members.front()];
      for (auto g : members) longest.boosting.n_trees = std::max(longest.boosting.n_trees, grid[g].boosting.n_trees);
      const auto ridge = fit_ridge(tr.X, tr.y, key.l2_lambda);
      const Eigen::VectorXd residuals = tr.y - ridge.predict(tr.X);
      const auto trees = fit_boosted(tr.X, residuals, longest.boosting, seed + static_cast<std::uint64_t>(f) + 1);
      const Eigen::VectorXd base = ridge.predict(va.X);
      const Eigen::MatrixXd staged = trees.staged_predict(va.X);
      for (auto g : members) {
        const int k = grid[g].boosting.n_trees;
        const Eigen::VectorXd pred = k == 0 ? base : Eigen::VectorXd(base + staged.col(k - 1));
        scores[g].fold_rmse.push_back(rmse(pred, va.y));
      }
    }
  }
  for (auto& s : scores) {
    s.mean_rmse = std::accumulate(s.fold_rmse.begin(), s.fold_rmse.end(), 0.0) /
                  static_cast<double>(s.fold_rmse.size());
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < scores.size(); ++g) {
    const auto& a = scores[g];
    const auto& b = scores[best];
    const bool better =
        a.mean_rmse < b.mean_rmse ||
        (a.mean_rmse == b.mean_rmse &&
         (a.point.boosting.n_trees < b.point.boosting.n_trees ||
          (a.point.boosting.n_trees == b.point.boosting.n_trees &&
           a.point.boosting.max_depth < b.point.boosting.max_depth)));
    if (better) best = g;
  }
  auto model = fit_stacked_fixed(table, grid[best], seed, std::move(encoder));
  model.cv_scores = std::move(scores);
  return model;
}

HoldoutSplit split_holdout(Eigen::Index n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorKind::config, "holdout fraction must lie in (0, 1)");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));
  HoldoutSplit out;
  out.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

}  // namespace fracopt
