#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "fracopt/error.hpp"
#include "fracopt/offset.hpp"
#include "fracopt/stats.hpp"
#include "fracopt/synthetic.hpp"
#include "oracles.hpp"

using namespace fracopt;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::io;
}

// Share of points whose label matches the majority label of their true group,
// with every majority label used once.
double label_agreement(const std::vector<int>& truth, const std::vector<int>& got) {
  std::map<int, std::map<int, int>> counts;
  for (std::size_t i = 0; i < truth.size(); ++i) ++counts[truth[i]][got[i]];
  int agree = 0;
  std::set<int> used;
  for (auto& [t, m] : counts) {
    int best = -2, n = 0;
    for (auto [l, c] : m)
      if (l != kNoise && !used.count(l) && c > n) best = l, n = c;
    used.insert(best);
    agree += n;
  }
  return static_cast<double>(agree) / static_cast<double>(truth.size());
}

WellRecord well(const std::string& id, double x, double y, std::optional<double> q90) {
  WellRecord w;
  w.well_id = id;
  w.coordinates = Coordinates{x, y};
  if (q90) w.production = ProductionSeries({{90, *q90}});
  return w;
}

}  // namespace

TEST_CASE("pairwise distances") {
  Eigen::MatrixXd p(2, 2);
  p << 0, 0, 3, 4;
  CHECK(pairwise_distances(p)(0, 1) == 5.0);
}

TEST_CASE("dbscan basics") {
  Rng rng(1);
  const auto [pts, truth] = oracle::blobs(rng, 2, 20, 2, 0.01, 5.0);
  const auto labels = dbscan(pts, 0.2, 3);
  CHECK(std::count(labels.begin(), labels.end(), kNoise) == 0);
  CHECK(std::set<int>(labels.begin(), labels.end()).size() == 2);
  Eigen::MatrixXd iso(3, 1);
  iso << 0, 0.05, 9;
  const auto l2 = dbscan(iso, 0.1, 2);
  CHECK(l2 == std::vector<int>{0, 0, kNoise});
}

TEST_CASE("dbscan agrees with the brute-force density oracle") {
  Rng rng(2);
  SUBCASE("40 points, eps 0.3, min_pts 3") {
    const auto p = oracle::random_points(rng, 40, 2);
    CHECK(oracle::dbscan_agrees(p, 0.3, oracle::dbscan(p, 0.3, 3), dbscan(p, 0.3, 3)));
  }
  SUBCASE("random instances up to 50 points") {
    for (int t = 0; t < 100; ++t) {
      const auto n = rng.uniform_int(1, 50), d = rng.uniform_int(1, 4);
      const auto p = oracle::random_points(rng, n, d);
      const double eps = rng.uniform(0.05, 0.6);
      const int min_pts = static_cast<int>(rng.uniform_int(1, 8));
      CHECK(oracle::dbscan_agrees(p, eps, oracle::dbscan(p, eps, min_pts), dbscan(p, eps, min_pts)));
    }
  }
  SUBCASE("core set is permutation invariant") {
    const auto p = oracle::random_points(rng, 45, 3);
    std::vector<Eigen::Index> perm(45);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<Eigen::Index> shuffled = perm;
    rng.shuffle(shuffled);
    Eigen::MatrixXd q(45, 3);
    for (Eigen::Index i = 0; i < 45; ++i) q.row(i) = p.row(shuffled[static_cast<std::size_t>(i)]);
    const auto a = oracle::dbscan(p, 0.35, 4), b = oracle::dbscan(q, 0.35, 4);
    const auto la = dbscan(p, 0.35, 4), lb = dbscan(q, 0.35, 4);
    for (Eigen::Index i = 0; i < 45; ++i) {
      const auto src = static_cast<std::size_t>(shuffled[static_cast<std::size_t>(i)]);
      CHECK(b.core[static_cast<std::size_t>(i)] == a.core[src]);
      CHECK((lb[static_cast<std::size_t>(i)] == kNoise) == (la[src] == kNoise));
    }
  }
}

TEST_CASE("silhouette") {
  SUBCASE("hand case") {
    Eigen::MatrixXd p(3, 1);
    p << 0, 1, 3;
    const std::vector<int> labels{0, 0, 1};
    // Point 0: a = 1, b = 3; point 1: a = 1, b = 2; the singleton scores 0.
    CHECK(*silhouette_mean(p, labels) == doctest::Approx((2.0 / 3 + 0.5 + 0.0) / 3).epsilon(1e-15));
  }
  SUBCASE("fewer than two clusters") {
    Eigen::MatrixXd p = Eigen::MatrixXd::Random(5, 2);
    CHECK_FALSE(silhouette_mean(p, std::vector<int>{0, 0, 0, kNoise, 0}).has_value());
  }
  SUBCASE("brute-force oracle") {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
      const auto n = rng.uniform_int(2, 50);
      const auto p = oracle::random_points(rng, n, rng.uniform_int(1, 4));
      std::vector<int> labels(static_cast<std::size_t>(n));
      const auto k = rng.uniform_int(2, 5);
      for (auto& l : labels) l = static_cast<int>(rng.uniform_int(-1, k - 1));
      labels[0] = 0;
      labels[1] = 1;
      const auto got = silhouette_mean(p, labels);
      REQUIRE(got.has_value());
      CHECK(*got == doctest::Approx(oracle::silhouette(p, labels)).epsilon(1e-12));
    }
  }
  SUBCASE("separated blobs beat random relabellings") {
    Rng rng(4);
    const auto [pts, truth] = oracle::blobs(rng, 2, 15, 2, 0.02, 3.0);
    const double good = *silhouette_mean(pts, truth);
    CHECK(good > 0.9);
    for (int t = 0; t < 100; ++t) {
      auto shuffled = truth;
      rng.shuffle(shuffled);
      if (shuffled == truth) continue;
      CHECK(*silhouette_mean(pts, shuffled) < good);
    }
  }
}

TEST_CASE("clustering search") {
  Rng rng(5);
  SUBCASE("recovers three blobs") {
    const auto [pts, truth] = oracle::blobs(rng, 3, 25, 3, 0.03, 1.0);
    const auto c = tune_clustering(pts, {});
    CHECK_FALSE(c.fallback);
    CHECK(label_agreement(truth, c.labels) >= 0.95);
  }
  SUBCASE("budget of one") {
    const auto [pts, truth] = oracle::blobs(rng, 2, 10, 2, 0.03, 1.0);
    ClusteringSearch s;
    s.budget = 1;
    CHECK(tune_clustering(pts, s).evaluations == 1);
  }
  SUBCASE("uniform noise falls back") {
    const auto pts = oracle::random_points(rng, 200, 4);
    CHECK(tune_clustering(pts, {}).fallback);
  }
  SUBCASE("deterministic per seed") {
    const auto pts = oracle::random_points(rng, 40, 2);
    const auto a = tune_clustering(pts, {}), b = tune_clustering(pts, {});
    CHECK(a.labels == b.labels);
    CHECK(a.eps == b.eps);
  }
}

TEST_CASE("euclidean top-N") {
  SUBCASE("hand cases") {
    const auto r = euclidean_topn(std::vector<double>{0, 0}, {"q", "same"}, {{3, 4}, {0, 0}}, 5, {"a", "b"});
    CHECK(r.ids == std::vector<std::string>{"same", "q"});
    CHECK(r.distances == std::vector<double>{0, 5});
  }
  SUBCASE("full-sort oracle, ties by id and stability") {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
      const std::size_t m = 50, d = 4;
      std::vector<double> pilot(d);
      for (auto& v : pilot) v = std::round(rng.uniform() * 4) / 4;
      std::vector<std::vector<double>> cand(m, std::vector<double>(d));
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < m; ++i) {
        for (auto& v : cand[i]) v = std::round(rng.uniform() * 4) / 4;
        ids.push_back("W" + std::to_string(rng.uniform_int(0, 999)) + "_" + std::to_string(i));
      }
      std::vector<std::size_t> order(m);
      std::iota(order.begin(), order.end(), 0);
      auto dist = [&](std::size_t i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += (cand[i][k] - pilot[k]) * (cand[i][k] - pilot[k]);
        return std::sqrt(s);
      };
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dist(a) != dist(b) ? dist(a) < dist(b) : ids[a] < ids[b];
      });
      const auto r = euclidean_topn(pilot, ids, cand, 10, {"a", "b", "c", "d"});
      REQUIRE(r.ids.size() == 10);
      for (std::size_t k = 0; k < 10; ++k) {
        CHECK(r.ids[k] == ids[order[k]]);
        CHECK(r.distances[k] == doctest::Approx(dist(order[k])).epsilon(1e-15));
      }
      auto ids2 = ids;
      auto cand2 = cand;
      ids2.push_back("far");
      cand2.push_back(std::vector<double>(d, 100.0));
      CHECK(euclidean_topn(pilot, ids2, cand2, 10, {"a", "b", "c", "d"}).ids == r.ids);
    }
  }
  SUBCASE("missing pilot features leave the metric") {
    const auto r = euclidean_topn(std::vector<double>{0, kMissing}, {"a", "b"}, {{1, 0}, {2, 100}}, 9, {"x", "y"});
    CHECK(r.used_features == std::vector<std::string>{"x"});
    CHECK(r.ids.size() == 2);
    CHECK(kind_of([] {
            euclidean_topn(std::vector<double>{kMissing}, {"a"}, {{1}}, 1, {"x"});
          }) == ErrorKind::input);
  }
}

TEST_CASE("imputation") {
  const std::vector<std::string> names{"a", "b", "c"};
  const std::vector<double> global{10, 20, 30};
  SUBCASE("complete records are untouched") {
    const std::vector<double> rec{1, 2, 3};
    const auto r = impute_topn_mean(rec, {{5, 5, 5}}, 3, names, global);
    CHECK(r.values == rec);
    CHECK(r.report.empty());
  }
  SUBCASE("top-N mean and fallback") {
    const std::vector<double> rec{kMissing, 2, kMissing};
    const auto r = impute_topn_mean(rec, {{1, 0, kMissing}, {2, 0, kMissing}, {3, 0, kMissing}, {100, 0, kMissing}}, 3, names,
                                    global);
    CHECK(r.values[0] == 2.0);
    CHECK(r.values[1] == 2.0);
    CHECK(r.values[2] == 30.0);
    REQUIRE(r.report.size() == 2);
    CHECK(r.report[0].donors == 3);
    CHECK(r.report[1].global_fallback);
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("cluster mean") {
    const auto r = impute_cluster_mean(std::vector<double>{kMissing, 1, 1}, {{1, 0, 0}, {3, 0, 0}}, names, global);
    CHECK(r.values[0] == 2.0);
    CHECK(r.report[0].strategy == ImputeStrategy::cluster_mean);
  }
  SUBCASE("rank-1 ALS reconstruction") {
    Rng rng(7);
    Eigen::VectorXd u(40), v(8);
    for (auto& x : u) x = rng.uniform(0.5, 1.5);
    for (auto& x : v) x = rng.uniform(0.5, 1.5);
    const Eigen::MatrixXd truth = u * v.transpose();
    Eigen::MatrixXd masked = truth;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> hidden;
    for (Eigen::Index i = 0; i < 40; ++i)
      for (Eigen::Index j = 0; j < 8; ++j)
        if (rng.bernoulli(0.2)) {
          masked(i, j) = kMissing;
          hidden.emplace_back(i, j);
        }
    AlsConfig cfg;
    cfg.rank = 1;
    cfg.regularization = 1e-6;
    cfg.iterations = 200;
    const auto rec = impute_matrix_factorization(masked, cfg);
    double se = 0;
    for (auto [i, j] : hidden) se += (rec(i, j) - truth(i, j)) * (rec(i, j) - truth(i, j));
    CHECK(std::sqrt(se / static_cast<double>(hidden.size())) < 1e-2);
    for (Eigen::Index i = 0; i < 40; ++i)
      for (Eigen::Index j = 0; j < 8; ++j)
        if (!is_missing(masked(i, j))) CHECK(rec(i, j) == masked(i, j));
  }
  SUBCASE("observed cells stay bit-exact (property)") {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> rec(5);
      for (auto& x : rec) x = rng.bernoulli(0.3) ? kMissing : rng.normal();
      std::vector<std::vector<double>> donors(static_cast<std::size_t>(rng.uniform_int(0, 6)), std::vector<double>(5));
      for (auto& d : donors)
        for (auto& x : d) x = rng.bernoulli(0.3) ? kMissing : rng.normal();
      const std::vector<double> g(5, 0.5);
      const auto r = impute_topn_mean(rec, donors, 3, {"a", "b", "c", "d", "e"}, g);
      for (std::size_t k = 0; k < 5; ++k) {
        if (!is_missing(rec[k])) CHECK(r.values[k] == rec[k]);
        CHECK_FALSE(is_missing(r.values[k]));
      }
    }
  }
  CHECK(parse_impute_strategy("matrix_factorization") == ImputeStrategy::matrix_factorization);
}

TEST_CASE("t-SNE embedding") {
  Rng rng(9);
  const auto [pts, truth] = oracle::blobs(rng, 3, 12, 4, 0.03, 1.0);
  Eigen::MatrixXd X(pts.rows() + 1, pts.cols());
  X.topRows(pts.rows()) = pts;
  X.row(pts.rows()) = pts.row(0);
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < X.rows(); ++i) ids.push_back("w" + std::to_string(i));
  TsneConfig cfg;
  cfg.iterations = 500;
  const auto e = tsne_embed(X, ids, cfg);
  CHECK(e.coords.allFinite());
  const double span = std::max(e.coords.col(0).maxCoeff() - e.coords.col(0).minCoeff(),
                               e.coords.col(1).maxCoeff() - e.coords.col(1).minCoeff());
  CHECK((e.coords.row(0) - e.coords.row(X.rows() - 1)).norm() < 1e-3 * span);

  double intra = 0, inter = 0;
  int ni = 0, nx = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pts.rows(); ++j) {
      const double d = (e.coords.row(i) - e.coords.row(j)).norm();
      if (truth[static_cast<std::size_t>(i)] == truth[static_cast<std::size_t>(j)]) intra += d, ++ni;
      else inter += d, ++nx;
    }
  CHECK(inter / nx > intra / ni);

  const Eigen::RowVectorXd row = X.row(5);
  std::vector<double> nodev(row.data(), row.data() + row.size());
  const auto c = e.predict_coords(nodev);
  CHECK(c[0] == doctest::Approx(e.coords(5, 0)).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(e.coords(5, 1)).epsilon(1e-12));

  CHECK(kind_of([] { tsne_embed(Eigen::MatrixXd::Zero(3, 2), {"a", "b", "c"}); }) == ErrorKind::embedding);
  const auto again = tsne_embed(X, ids, cfg);
  CHECK(again.coords == e.coords);
}

TEST_CASE("scatter export") {
  const std::vector<ScatterPoint> pts{{"a", 0, 1, 0, false}, {"p", 2, 3, 0, true}, {"n", 1, 1, kNoise, false}};
  const auto csv = scatter_csv(pts);
  CHECK(csv.rfind("well_id,x,y,cluster_label,is_pilot\n", 0) == 0);
  CHECK(csv.find("p,2,3,0,1") != std::string::npos);
  CHECK(scatter_svg(pts).find("<svg") != std::string::npos);
}

TEST_CASE("neighbor features") {
  Dataset ds;
  ds.rows = {well("P", 0, 0, std::nullopt), well("A", 300, 400, 3000.0)};
  auto r = neighbor_features(ds, ds.rows[0]);
  CHECK(*r.production_per_distance == doctest::Approx(6.0));
  CHECK(r.count == 1);

  ds.rows = {well("P", 0, 0, std::nullopt), well("far", 2000, 0, 3000.0)};
  CHECK_FALSE(neighbor_features(ds, ds.rows[0]).production_per_distance.has_value());

  ds.rows = {well("P", 0, 0, std::nullopt), well("a", 100, 0, 1000.0), well("b", 0, 200, 1000.0), well("c", 500, 0, 2500.0),
             well("d", 600, 800, 500.0), well("e", 0, 250, 4000.0), well("same", 0, 0, 1.0), well("out", 1001, 0, 7.0)};
  const double want = (1000.0 / 100 + 1000.0 / 200 + 2500.0 / 500 + 500.0 / 1000 + 4000.0 / 250) / 5;
  r = neighbor_features(ds, ds.rows[0]);
  CHECK(r.count == 5);
  CHECK(*r.production_per_distance == doctest::Approx(want).epsilon(1e-15));

  WellRecord nocoord;
  nocoord.well_id = "X";
  CHECK_FALSE(neighbor_features(ds, nocoord).production_per_distance.has_value());
}

TEST_CASE("pilot cluster on the synthetic field") {
  const auto field = generate_synthetic(500, 23);
  const auto& ds = field.dataset;
  std::map<std::string, int> latent;
  for (std::size_t i = 0; i < ds.size(); ++i) latent[ds.rows[i].well_id] = field.latent_cluster[i];

  const WellRecord& pilot = ds.rows[10];
  const auto pc = build_pilot_cluster(ds, pilot);
  REQUIRE_FALSE(pc.members.empty());
  CHECK(pc.pilot_label != kNoise);
  std::size_t same = 0;
  for (const auto& id : pc.members) {
    const auto* w = ds.find(id);
    CHECK(w->layer_id == pilot.layer_id);
    CHECK(w->face_id == pilot.face_id);
    CHECK(std::abs(w->n_stages() - pilot.n_stages()) <= 1);
    same += latent[id] == latent[pilot.well_id];
  }
  CHECK(static_cast<double>(same) / pc.members.size() >= 0.9);

  for (std::size_t v = 0; v < kDesignDim; ++v) {
    std::vector<double> vals;
    for (const auto& id : pc.members)
      if (auto x = ds.find(id)->design.values()[v]) vals.push_back(*x);
    CHECK(pc.bounds[v].lower == oracle::percentile(vals, 5));
    CHECK(pc.bounds[v].upper == oracle::percentile(vals, 95));
    CHECK(pc.bounds[v].lower <= pc.bounds[v].mean);
    CHECK(pc.bounds[v].mean <= pc.bounds[v].upper);
    const double p50 = std::clamp(oracle::percentile(vals, 50), pc.bounds[v].lower, pc.bounds[v].upper);
    CHECK(pc.bounds[v].lower <= p50);
    CHECK(p50 <= pc.bounds[v].upper);
  }

  PilotClusterOptions all;
  all.n_euclid = pc.members.size();
  CHECK(build_pilot_cluster(ds, pilot, all).members == pc.members);
  PilotClusterOptions top;
  top.n_euclid = 3;
  CHECK(build_pilot_cluster(ds, pilot, top).members.size() == 3);

  const auto scatter = cluster_scatter(ds, pilot, pc);
  CHECK(scatter.size() == pc.filtered_ids.size() + 1);
  CHECK(std::count_if(scatter.begin(), scatter.end(), [](const ScatterPoint& p) { return p.is_pilot; }) == 1);
  CHECK(pc.to_json().contains("bounds"));
}

TEST_CASE("pilot cluster edge cases") {
  auto ds = generate_synthetic(120, 3).dataset;
  SUBCASE("identical designs collapse the bounds") {
    for (auto& w : ds.rows) {
      w.design = ds.rows[0].design;
    }
    const auto pc = build_pilot_cluster(ds, ds.rows[0]);
    for (const auto& b : pc.bounds) {
      CHECK(b.lower == b.upper);
      CHECK(b.mean == b.lower);
    }
  }
  SUBCASE("a filter that empties the pool is named") {
    WellRecord p = ds.rows[0];
    p.well_id = "new";
    p.layer_id = "nowhere";
    try {
      build_pilot_cluster(ds, p);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::insufficient_analogues);
      CHECK(std::string(e.what()).find("layer_id=nowhere") != std::string::npos);
    }
  }
  SUBCASE("pilot without a face") {
    WellRecord p = ds.rows[0];
    p.face_id.clear();
    CHECK(kind_of([&] { build_pilot_cluster(ds, p); }) == ErrorKind::precondition);
  }
}
