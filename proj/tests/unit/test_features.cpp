#include <doctest.h>

#include <cmath>

#include "fracopt/error.hpp"
#include "fracopt/features.hpp"
#include "fracopt/stats.hpp"
#include "oracles.hpp"

using namespace fracopt;

namespace {

FeatureTable table_from(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols,
                        const std::vector<double>& y) {
  FeatureTable t;
  t.names = names;
  t.X.resize(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 0; r < y.size(); ++r) t.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cols[c][r];
  t.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  for (std::size_t r = 0; r < y.size(); ++r) t.ids.push_back("r" + std::to_string(r));
  return t;
}

HyperPoint small_point() {
  HyperPoint p;
  p.l2_lambda = 1.0;
  p.boosting.n_trees = 30;
  p.boosting.max_depth = 3;
  p.boosting.min_samples_leaf = 3;
  return p;
}

}  // namespace

TEST_CASE("spearman") {
  const std::vector<double> x{0.1, 0.5, 1.2, 2.0, 3.3};
  std::vector<double> ex, neg;
  for (double v : x) {
    ex.push_back(std::exp(v));
    neg.push_back(-v);
  }
  CHECK(*spearman_corr(x, ex) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(*spearman_corr(x, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  const std::vector<double> a{1, 2, 2, 4}, b{3, 1, 4, 2};
  CHECK(*spearman_corr(a, b) == doctest::Approx(oracle::spearman({1, 2, 2, 4}, {3, 1, 4, 2})).epsilon(1e-12));
  CHECK_FALSE(spearman_corr(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
  CHECK_THROWS_AS(spearman_corr(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);
  const std::vector<double> m{1, kMissing, 3, 4, 5}, n{2, 7, kMissing, 8, 9};
  CHECK(*spearman_corr(m, n) == doctest::Approx(1.0));
}

TEST_CASE("spearman is invariant under increasing maps (property)") {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(3, 30));
    std::vector<double> x(n), y(n), gx(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal() + 1e-9 * static_cast<double>(i);
      y[i] = rng.normal();
      gx[i] = std::atan(x[i]) * 3 + std::pow(x[i], 3);
    }
    CHECK(*spearman_corr(x, gx) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*spearman_corr(x, y) == doctest::Approx(oracle::spearman(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("eliminate") {
  Rng rng(1);
  const std::size_t n = 100;
  std::vector<double> good(n), dup(n), sparse(n), constant(n, 4.0), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    good[i] = rng.normal();
    dup[i] = good[i];
    sparse[i] = i < 85 ? kMissing : rng.normal();
    y[i] = good[i];
  }
  const auto t = table_from({"b_good", "a_dup", "sparse", "constant"}, {good, dup, sparse, constant}, y);
  const auto r = eliminate(t);
  CHECK(r.retained == std::vector<std::string>{"a_dup"});
  REQUIRE(r.dropped.size() == 3);
  CHECK(r.dropped[0].first == "sparse");

  SUBCASE("idempotent") {
    const auto again = eliminate(t.select_columns(r.retained));
    CHECK(again.retained == r.retained);
    CHECK(again.dropped.empty());
  }
  SUBCASE("the duplicate with fewer gaps survives") {
    auto holes = dup;
    holes[3] = kMissing;
    const auto t2 = table_from({"a", "b"}, {holes, good}, y);
    CHECK(eliminate(t2).retained == std::vector<std::string>{"b"});
  }
  SUBCASE("everything removed") {
    const auto t3 = table_from({"c"}, {constant}, y);
    CHECK_THROWS_AS(eliminate(t3), Error);
  }
}

TEST_CASE("rfe keeps the informative feature") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    const std::size_t n = 120;
    std::vector<std::vector<double>> cols(6, std::vector<double>(n));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& c : cols) c[i] = rng.normal();
      y[i] = 3 * cols[0][i] + 0.3 * rng.normal();
    }
    const auto t = table_from({"f1", "j1", "j2", "j3", "j4", "j5"}, cols, y);
    const auto r = rfe([](const FeatureTable& tt) { return fit_stacked_fixed(tt, small_point(), 1); }, t, 1, 1, seed);
    hits += r.retained_features() == std::vector<std::string>{"f1"};
    auto ranks = r.rank;
    std::sort(ranks.begin(), ranks.end());
    CHECK(ranks == std::vector<int>{1, 2, 3, 4, 5, 6});
  }
  CHECK(hits >= 19);
}

TEST_CASE("rfe degenerate cases") {
  Rng rng(2);
  std::vector<double> a(40), b(40), y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    y[i] = a[i] + b[i];
  }
  const auto trainer = [](const FeatureTable& tt) { return fit_stacked_fixed(tt, small_point(), 1); };
  const auto all = rfe(trainer, table_from({"a", "b"}, {a, b}, y), 2);
  CHECK(all.retained == std::vector<bool>{true, true});
  const auto one = rfe(trainer, table_from({"a"}, {a}, y), 1);
  CHECK(one.rank == std::vector<int>{1});
  CHECK(one.retained_features() == std::vector<std::string>{"a"});
  CHECK_THROWS_AS(rfe([](const FeatureTable&) -> StackedModel { throw std::runtime_error("boom"); },
                      table_from({"a", "b"}, {a, b}, y), 1),
                  Error);
}

TEST_CASE("sobol first order") {
  Rng rng(8);
  const std::size_t n = 10000;
  std::vector<double> x(n), y(n), noise(n), mono(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.uniform();
    noise[i] = rng.uniform();
    mono[i] = std::exp(3 * x[i]);
  }
  // Equal-frequency bins on a uniform x: between-bin share is 1 - 1/B^2.
  const double s = *sobol_first_order(x, x, 16);
  CHECK(s >= 0.95);
  CHECK(s == doctest::Approx(1.0 - 1.0 / 256).epsilon(2e-3));
  CHECK(*sobol_first_order(x, noise, 16) <= 0.05);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(6 * x[i]) + 0.2 * noise[i];
  CHECK(*sobol_first_order(x, y) == doctest::Approx(*sobol_first_order(mono, y)).epsilon(1e-15));
  CHECK_FALSE(sobol_first_order(x, std::vector<double>(n, 2.0)).has_value());
}

TEST_CASE("tree attribution matches brute-force Shapley") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::MatrixXd X = oracle::random_points(rng, 200, 3);
    Eigen::VectorXd y(200);
    for (Eigen::Index i = 0; i < 200; ++i) y(i) = 5 * X(i, 0) + 3 * (X(i, 1) > 0.4) * X(i, 2) + 0.1 * rng.normal();
    BoostingParams p;
    p.n_trees = 1;
    p.max_depth = 2;
    p.learning_rate = 1.0;
    p.min_samples_leaf = 5;
    const auto trees = fit_boosted(X, y, p, static_cast<std::uint64_t>(trial));
    const auto& tree = trees.trees.at(0);
    for (double a : {0.1, 0.5, 0.9})
      for (double b : {0.2, 0.6})
        for (double c : {0.3, 0.8}) {
          const std::vector<double> x{a, b, c};
          std::vector<double> phi(3, 0.0);
          tree_shap(tree, x, phi);
          const auto want = oracle::shapley(tree, x);
          for (int k = 0; k < 3; ++k) CHECK(phi[static_cast<std::size_t>(k)] == doctest::Approx(want[static_cast<std::size_t>(k)]).epsilon(1e-12).scale(1.0));
        }
  }
}

TEST_CASE("attribution edge cases and local accuracy") {
  Rng rng(6);
  Eigen::MatrixXd X = oracle::random_points(rng, 150, 4);
  Eigen::VectorXd y(150);
  for (Eigen::Index i = 0; i < 150; ++i) y(i) = 2 * X(i, 0) - X(i, 1) + std::sin(5 * X(i, 2)) + 0.05 * rng.normal();
  FeatureTable t;
  t.names = {"a", "b", "c", "d"};
  t.X = X;
  t.y = y;
  t.ids.resize(150, "r");

  SUBCASE("pure ridge at the centroid") {
    HyperPoint p = small_point();
    p.boosting.n_trees = 0;
    const auto m = fit_stacked_fixed(t, p, 1);
    const auto at = attribute(m, m.ridge.means);
    for (double c : at.contributions) CHECK(c == doctest::Approx(0.0).scale(1.0));
    CHECK(at.base == doctest::Approx(m.ridge.mean_prediction()));
  }
  SUBCASE("null model") {
    StackedModel m;
    m.ridge.weights.assign(4, 0.0);
    m.ridge.means.assign(4, 0.0);
    m.ridge.scales.assign(4, 1.0);
    m.ridge.intercept = 7.0;
    const auto at = attribute(m, std::vector<double>{1, 2, 3, 4});
    for (double c : at.contributions) CHECK(c == 0.0);
    CHECK(at.total() == 7.0);
  }
  SUBCASE("200 probes") {
    const auto m = fit_stacked_fixed(t, small_point(), 3);
    for (int i = 0; i < 200; ++i) {
      std::vector<double> x(4);
      for (auto& v : x) v = rng.uniform(-0.2, 1.2);
      const double pred = m.predict(x);
      CHECK(std::abs(attribute(m, x).total() - pred) <= 1e-9 * std::max(1.0, std::abs(pred)));
    }
    CHECK_THROWS_AS(attribute(m, std::vector<double>{1, kMissing, 0, 0}), Error);
  }
}

TEST_CASE("feature report") {
  Rng rng(9);
  const std::size_t n = 200;
  std::vector<double> a(n), b(n), c(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng.normal();
    b[i] = a[i] * 2 + 0.1 * rng.normal();
    c[i] = i % 10 == 0 ? kMissing : rng.normal();
    y[i] = a[i] + 0.1 * rng.normal();
  }
  const auto t = table_from({"a", "b", "c"}, {a, b, c}, y);
  const auto rep = build_feature_report(t, nullptr, nullptr);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].spearman_partner == "b");
  CHECK(rep.rows[2].missing_fraction == doctest::Approx(20.0 / 200));
  for (const auto& r : rep.rows) {
    REQUIRE(r.sobol_first_order.has_value());
    CHECK(*r.sobol_first_order >= 0.0);
  }
  CHECK(rep.to_csv().rfind("feature,missing_fraction,", 0) == 0);
  CHECK(rep.to_json().at("features").size() == 3);
}
