#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "fracopt/feature_table.hpp"
#include "fracopt/features.hpp"
#include "fracopt/gp.hpp"
#include "fracopt/offset.hpp"
#include "fracopt/optimize.hpp"
#include "fracopt/random.hpp"
#include "fracopt/stacked_model.hpp"
#include "fracopt/synthetic.hpp"

using namespace fracopt;

namespace {

struct Trained {
  FeatureTable table;
  StackedModel model;
};

const Trained& trained() {
  static const Trained t = [] {
    const auto field = generate_synthetic(500, 1);
    const auto enc = FeatureEncoder::from_dataset(field.dataset);
    Trained out;
    out.table = build_feature_table(field.dataset, enc);
    impute_column_means(out.table);
    HyperPoint hp;
    hp.boosting.n_trees = 250;
    hp.boosting.max_depth = 3;
    out.model = fit_stacked_fixed(out.table, hp, 1, enc);
    return out;
  }();
  return t;
}

std::vector<double> row(const FeatureTable& t, Eigen::Index i) {
  std::vector<double> x(static_cast<std::size_t>(t.cols()));
  for (Eigen::Index j = 0; j < t.cols(); ++j) x[static_cast<std::size_t>(j)] = t.X(i, j);
  return x;
}

Eigen::MatrixXd uniform_points(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.uniform();
  return m;
}

void BM_StackedPredict(benchmark::State& state) {
  const auto& t = trained();
  const auto x = row(t.table, 7);
  for (auto _ : state) benchmark::DoNotOptimize(t.model.predict(x));
}
BENCHMARK(BM_StackedPredict);

void BM_Attribution(benchmark::State& state) {
  const auto& t = trained();
  const auto x = row(t.table, 7);
  for (auto _ : state) benchmark::DoNotOptimize(attribute(t.model, x));
}
BENCHMARK(BM_Attribution);

void BM_Dbscan(benchmark::State& state) {
  const auto pts = uniform_points(state.range(0), 6, 3);
  for (auto _ : state) benchmark::DoNotOptimize(dbscan(pts, 0.3, 5));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Dbscan)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oNSquared);

void BM_GpFit(benchmark::State& state) {
  const auto X = uniform_points(state.range(0), 6, 4);
  Eigen::VectorXd y(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) y(i) = std::sin(3 * X(i, 0)) + X.row(i).squaredNorm();
  for (auto _ : state) benchmark::DoNotOptimize(gp_fit(X, y));
}
BENCHMARK(BM_GpFit)->Arg(12)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_Optimizer(benchmark::State& state) {
  const auto method = static_cast<Method>(state.range(0));
  OptimizationProblem p;
  p.lower.assign(6, -5);
  p.upper.assign(6, 5);
  p.budget = 200;
  p.objective = [](std::span<const double> x) {
    double s = 0;
    for (double v : x) s += (v - 1) * (v - 1);
    return -s;
  };
  for (auto _ : state) benchmark::DoNotOptimize(run_method(method, p, 1));
  state.SetLabel(std::string(to_string(method)));
}
BENCHMARK(BM_Optimizer)
    ->Arg(static_cast<int>(Method::de))
    ->Arg(static_cast<int>(Method::pso))
    ->Arg(static_cast<int>(Method::local))
    ->Arg(static_cast<int>(Method::sbo))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
