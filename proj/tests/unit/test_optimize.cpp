#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fracopt/error.hpp"
#include "fracopt/gp.hpp"
#include "fracopt/optimize.hpp"
#include "fracopt/random.hpp"
#include "oracles.hpp"

using namespace fracopt;

namespace {

OptimizationProblem box_problem(std::size_t d, double lo, double hi, Objective f, int budget = 200) {
  OptimizationProblem p;
  p.lower.assign(d, lo);
  p.upper.assign(d, hi);
  p.objective = std::move(f);
  p.budget = budget;
  return p;
}

double neg_sphere(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return -s;
}

// Branin on [-5, 10] x [0, 15]; minimum 0.397887 at three points.
double branin(std::span<const double> x) {
  const double a = 1, b = 5.1 / (4 * std::numbers::pi * std::numbers::pi), c = 5 / std::numbers::pi, r = 6, s = 10,
               t = 1 / (8 * std::numbers::pi);
  const double u = x[1] - b * x[0] * x[0] + c * x[0] - r;
  return a * u * u + s * (1 - t) * std::cos(x[0]) + s;
}
constexpr double kBraninMin = 0.397887357729738;

OptimizationProblem branin_problem(int budget) {
  OptimizationProblem p;
  p.lower = {-5, 0};
  p.upper = {10, 15};
  p.objective = [](std::span<const double> x) { return -branin(x); };
  p.budget = budget;
  return p;
}

// Six-parameter design problem with a mid-box layout. Order: n_stages,
// pad_share, fluid_volume, proppant_mass, fluid_rate, final_prop_conc.
OptimizationProblem design_problem(Objective f) {
  const std::array<double, kDesignDim> lo{2, 0.1, 400, 58000, 3, 100};
  const std::array<double, kDesignDim> hi{8, 0.5, 800, 140000, 7, 400};
  return make_design_problem(lo, hi, std::move(f), 80.0);
}

}  // namespace

TEST_CASE("epsilon") {
  CHECK(*epsilon(0, 1000, 500) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(*epsilon(100, 700, 500) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*epsilon(80, 230, 230) == 0.0);
  CHECK_FALSE(epsilon(100, 700, 100).has_value());
  CHECK_FALSE(epsilon(100, 700, 50).has_value());
}

TEST_CASE("feasibility report") {
  auto p = design_problem(neg_sphere);
  // Box midpoints; c_avg = 165 and final 250 give epsilon = 1.
  const std::vector<double> mid{5, 0.3, 600, 99000, 5, 250};
  const double c_avg = 165;
  auto rep = check_feasible(p, mid);
  CHECK(rep.feasible);
  CHECK(*rep.epsilon == doctest::Approx(1.0));

  auto over = mid;
  over[3] = 140001;
  over[5] = 80 + 2 * (over[3] / 600 - 80);
  rep = check_feasible(p, over);
  CHECK_FALSE(rep.feasible);
  REQUIRE(rep.violations.size() == 1);
  CHECK(rep.violations[0].constraint == "proppant_mass <= upper");
  CHECK(rep.violations[0].margin == doctest::Approx(-1.0));

  auto flat = mid;
  flat[5] = 80 + 1.4 * (c_avg - 80);
  rep = check_feasible(p, flat);
  CHECK_FALSE(rep.feasible);
  REQUIRE(rep.violations.size() == 1);
  CHECK(*rep.epsilon == doctest::Approx(0.4));
  CHECK(rep.violations[0].margin == doctest::Approx(-0.1));

  p.mass_cap = 90000;
  rep = check_feasible(p, mid);
  CHECK_FALSE(rep.feasible);
  CHECK(rep.violations.back().margin == doctest::Approx(-9000));
}

TEST_CASE("design problem rounds the stage bounds inward") {
  const std::array<double, kDesignDim> lo{2.3, 0.1, 400, 60000, 3, 300};
  const std::array<double, kDesignDim> hi{7.8, 0.5, 800, 140000, 7, 700};
  const auto p = make_design_problem(lo, hi, neg_sphere, 80.0);
  CHECK(p.lower[0] == 3.0);
  CHECK(p.upper[0] == 7.0);
  CHECK(snap(p, std::vector<double>{4.6, 0.2, 500, 70000, 4, 350})[0] == 5.0);
  CHECK(snap(p, std::vector<double>{9, 0.9, 500, 70000, 4, 350})[1] == 0.5);
}

TEST_CASE("problem validation") {
  auto p = box_problem(2, 0, 1, neg_sphere, 9);
  CHECK_THROWS_AS(p.validate(), Error);
  p.budget = 10;
  p.validate();
  p.upper[1] = -1;
  CHECK_THROWS_AS(p.validate(), Error);
  p = box_problem(2, 0, 1, nullptr);
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("population and local methods find the sphere optimum") {
  const auto p = box_problem(6, -5, 5, neg_sphere);
  for (Method m : {Method::de, Method::pso, Method::local}) {
    CAPTURE(to_string(m));
    const auto r = run_method(m, p, 3);
    CHECK(r.feasible);
    CHECK(r.best_value >= -1e-2);
    CHECK(r.evaluations() <= 200);
  }
}

TEST_CASE("DE with budget equal to the population returns the best initial member") {
  const auto p = box_problem(3, -5, 5, neg_sphere, 15);
  const auto r = optimize_de(p, 9);
  REQUIRE(r.evaluations() == 15);
  double best = -INFINITY;
  for (const auto& e : r.trace) best = std::max(best, e.value);
  CHECK(r.best_value == best);
}

TEST_CASE("PSO") {
  SUBCASE("a frozen single particle stays where it started") {
    const auto p = box_problem(3, -5, 5, neg_sphere, 20);
    PsoConfig cfg;
    cfg.swarm = 1;
    cfg.inertia = cfg.cognitive = cfg.social = 0.0;
    cfg.polish_fraction = 0.0;
    const auto r = optimize_pso(p, 4, cfg);
    for (const auto& e : r.trace) CHECK(e.design == r.trace.front().design);
    CHECK(r.best_design == r.trace.front().design);
  }
  SUBCASE("identical seeds give identical traces") {
    const auto p = box_problem(4, -2, 3, neg_sphere, 120);
    const auto a = optimize_pso(p, 77), b = optimize_pso(p, 77);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].design == b.trace[i].design);
      CHECK(a.trace[i].value == b.trace[i].value);
    }
    CHECK(a.to_json({}).dump() == b.to_json({}).dump());
  }
}

TEST_CASE("local method") {
  SUBCASE("interior maximum is stationary") {
    const std::vector<double> c{0.3, -1.2, 2.0};
    const auto f = [c](std::span<const double> x) {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) s += (i + 1.0) * (x[i] - c[i]) * (x[i] - c[i]);
      return 5.0 - s;
    };
    const auto r = optimize_local(box_problem(3, -4, 4, f), 2);
    REQUIRE(r.feasible);
    double g2 = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = -2.0 * (i + 1.0) * (r.best_design[i] - c[i]);
      g2 += g * g;
    }
    CHECK(std::sqrt(g2) < 1e-4);
  }
  SUBCASE("monotone objective ends on the bound vertex") {
    const auto f = [](std::span<const double> x) { return 2 * x[0] - x[1] + 0.5 * x[2]; };
    const auto r = optimize_local(box_problem(3, -1, 2, f), 5);
    CHECK(r.best_design == std::vector<double>{2, -1, 2});
  }
  SUBCASE("a budget below one gradient returns the start with a warning") {
    auto p = box_problem(6, -1, 1, neg_sphere, 10);
    const auto r = optimize_local(p, 1);
    CHECK(r.evaluations() == 1);
    CHECK(r.best_design == r.trace.front().design);
    CHECK_FALSE(r.warnings.empty());
  }
}

TEST_CASE("local method keeps design iterates on the ramp") {
  const auto p = design_problem([](std::span<const double> x) { return x[3] / 1000 + x[5] / 10 - x[1]; });
  const auto r = optimize_local(p, 11);
  REQUIRE(r.feasible);
  CHECK(check_feasible(p, r.best_design).feasible);
  CHECK(r.best_design[0] == std::round(r.best_design[0]));
}

TEST_CASE("gp interpolates and reverts to the prior") {
  Eigen::MatrixXd X(8, 1);
  Eigen::VectorXd y(8);
  for (int i = 0; i < 8; ++i) {
    X(i, 0) = i / 7.0;
    y(i) = std::sin(2 * std::numbers::pi * X(i, 0));
  }
  GpFitOptions opt;
  opt.seed = 1;
  const auto gp = gp_fit(X, y, opt);
  // The 1e-8 jitter leaves a residual of jitter * |alpha|, about 1e-6 here.
  CHECK(std::exp(gp.hyper().log_noise_var) <= 1e-9);
  for (int i = 0; i < 8; ++i) {
    const double x = X(i, 0);
    CHECK(std::abs(gp.predict(std::span<const double>(&x, 1)).mean - y(i)) < 1e-5);
  }
  const double far = 1e3;
  const auto pf = gp.predict(std::span<const double>(&far, 1));
  CHECK(pf.variance == doctest::Approx(gp.signal_variance()).epsilon(1e-12));
  CHECK(pf.mean == doctest::Approx(y.mean()).scale(1.0));
}

TEST_CASE("gp matches a dense solve") {
  Rng rng(12);
  Eigen::MatrixXd X = oracle::random_points(rng, 5, 2);
  Eigen::VectorXd y(5);
  for (int i = 0; i < 5; ++i) y(i) = 3 * X(i, 0) - X(i, 1) * X(i, 1) + 10;
  GpHyper h;
  h.log_lengthscale = {std::log(0.4), std::log(0.7)};
  h.log_signal_var = std::log(1.3);
  h.log_noise_var = std::log(1e-4);
  GpFitOptions opt;
  opt.initial = h;
  opt.optimize = false;
  const auto gp = gp_fit(X, y, opt);

  const double ym = y.mean();
  const double ys = std::sqrt((y.array() - ym).square().mean());
  const Eigen::VectorXd yt = (y.array() - ym) / ys;
  auto k = [&](const double* a, const double* b) {
    double r = 0;
    r += std::pow((a[0] - b[0]) / 0.4, 2);
    r += std::pow((a[1] - b[1]) / 0.7, 2);
    return 1.3 * std::exp(-0.5 * r);
  };
  Eigen::MatrixXd K(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double a[2] = {X(i, 0), X(i, 1)}, b[2] = {X(j, 0), X(j, 1)};
      K(i, j) = k(a, b) + (i == j ? 1e-4 + 1e-8 : 0.0);
    }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  for (int t = 0; t < 20; ++t) {
    const double q[2] = {rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5)};
    Eigen::VectorXd ks(5);
    for (int i = 0; i < 5; ++i) {
      const double a[2] = {X(i, 0), X(i, 1)};
      ks(i) = k(a, q);
    }
    const double mean = ym + ys * ks.dot(lu.solve(yt));
    const double var = ys * ys * (1.3 - ks.dot(lu.solve(ks)));
    const auto p = gp.predict(std::span<const double>(q, 2));
    CHECK(p.mean == doctest::Approx(mean).epsilon(1e-8));
    CHECK(p.variance == doctest::Approx(var).epsilon(1e-8).scale(1.0));
  }
  CHECK(gp.log_marginal_likelihood() == doctest::Approx(*gp_log_likelihood(X, yt, h, 1e-8)));
}

TEST_CASE("gp preconditions") {
  Eigen::MatrixXd X(3, 1);
  X << 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(gp_fit(X, Eigen::VectorXd::Ones(3)), Error);
  CHECK_THROWS_AS(gp_fit(Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Ones(1)), Error);
}

TEST_CASE("acquisition functions") {
  using K = AcquisitionKind;
  CHECK(acquisition(1.0, 0.0, 1.0, K::expected_improvement) == 0.0);
  CHECK(acquisition(1.0, 0.0, 1.0, K::probability_of_improvement) == 0.0);
  CHECK(acquisition(3.0, 0.0, 1.0, K::expected_improvement) == 2.0);
  CHECK(acquisition(3.0, 0.0, 1.0, K::probability_of_improvement) == 1.0);
  CHECK(acquisition(1.0, 2.5, 1.0, K::probability_of_improvement) == doctest::Approx(0.5).epsilon(1e-15));
  for (auto [mean, var, best] : {std::tuple{2.0, 1.0, 1.0}, std::tuple{0.3, 0.04, 0.5}, std::tuple{-4.0, 9.0, 1.0}}) {
    const auto [ei, pi] = oracle::improvement_quadrature(mean, var, best);
    CHECK(std::abs(acquisition(mean, var, best, K::expected_improvement) - ei) < 1e-6);
    CHECK(std::abs(acquisition(mean, var, best, K::probability_of_improvement) - pi) < 1e-6);
  }
}

TEST_CASE("gp variance and acquisitions stay non-negative (property)") {
  Rng rng(21);
  Eigen::MatrixXd X = oracle::random_points(rng, 25, 3);
  Eigen::VectorXd y(25);
  for (int i = 0; i < 25; ++i) y(i) = std::sin(4 * X(i, 0)) + X(i, 1) * X(i, 2);
  GpFitOptions opt;
  opt.seed = 3;
  const auto gp = gp_fit(X, y, opt);
  const double best = y.maxCoeff();
  for (int t = 0; t < 10000; ++t) {
    const std::vector<double> q{rng.uniform(-1, 2), rng.uniform(-1, 2), rng.uniform(-1, 2)};
    const auto p = gp.predict(q);
    REQUIRE(p.variance >= 0.0);
    REQUIRE(acquisition(gp, q, best, AcquisitionKind::expected_improvement) >= 0.0);
    REQUIRE(acquisition(gp, q, best, AcquisitionKind::probability_of_improvement) >= 0.0);
  }
}

TEST_CASE("SBO on a smooth two-dimensional test function") {
  int hits = 0;
  double sbo_sum = 0.0, random_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = branin_problem(60);
    const auto r = optimize_sbo(p, seed);
    CHECK(r.evaluations() == 60);
    hits += -r.best_value <= kBraninMin * 1.05;
    sbo_sum += r.best_value;
    random_sum += optimize_random(p, seed).best_value;
  }
  MESSAGE("SBO hits " << hits << "/20");
  CHECK(hits >= 18);
  CHECK(sbo_sum >= random_sum);
}

TEST_CASE("SBO with budget equal to the initial sample") {
  auto p = box_problem(5, 0, 1, neg_sphere, 10);
  const auto r = optimize_sbo(p, 8);
  REQUIRE(r.evaluations() == 10);
  double best = -INFINITY;
  for (const auto& e : r.trace) best = std::max(best, e.value);
  CHECK(r.best_value == best);
}

TEST_CASE("SBO rejects an empty feasible region") {
  // c_start above every attainable average concentration.
  auto p = design_problem(neg_sphere);
  p.ramp->c_start = 1000;
  CHECK_THROWS_AS(optimize_sbo(p, 1), Error);
}

TEST_CASE("all-infeasible box yields an infeasible result") {
  auto p = design_problem([](std::span<const double> x) { return x[3]; });
  p.ramp->c_start = 1000;
  for (Method m : {Method::de, Method::pso, Method::local}) {
    const auto r = run_method(m, p, 2);
    CHECK_FALSE(r.feasible);
    CHECK_FALSE(r.warnings.empty());
    CHECK(r.evaluations() <= 200);
  }
}

TEST_CASE("optimizer properties") {
  SUBCASE("trace never exceeds the budget and the best entry is reported faithfully") {
    Rng rng(5);
    for (int t = 0; t < 6; ++t) {
      const int budget = static_cast<int>(rng.uniform_int(10, 60));
      const auto p = design_problem([](std::span<const double> x) { return -std::pow(x[2] - 610, 2) + x[3] / 100; });
      auto q = p;
      q.budget = budget;
      for (Method m : {Method::de, Method::pso, Method::local, Method::sbo, Method::random}) {
        CAPTURE(to_string(m));
        const auto r = run_method(m, q, static_cast<std::uint64_t>(t));
        REQUIRE(r.evaluations() <= static_cast<std::size_t>(budget));
        if (r.feasible) {
          CHECK(check_feasible(q, r.best_design).feasible);
          double best = -INFINITY;
          for (const auto& e : r.trace)
            if (e.feasible) best = std::max(best, e.value);
          CHECK(r.best_value == best);
        }
      }
    }
  }
  SUBCASE("one variable with a monotone objective ends on the same bound") {
    const auto p = box_problem(1, -3, 7, [](std::span<const double> x) { return std::atan(x[0]); });
    for (Method m : {Method::de, Method::pso, Method::local, Method::sbo}) {
      CAPTURE(to_string(m));
      CHECK(run_method(m, p, 6).best_design == std::vector<double>{7});
    }
  }
  SUBCASE("positive scaling of the objective leaves the traces unchanged") {
    const auto f = [](std::span<const double> x) { return -std::pow(x[0] - 1, 2) - 3 * std::pow(x[1] + 0.5, 2) + x[2]; };
    const auto p = box_problem(3, -2, 2, f);
    const auto q = box_problem(3, -2, 2, [f](std::span<const double> x) { return 4.0 * f(x); });
    for (Method m : {Method::de, Method::pso, Method::local}) {
      CAPTURE(to_string(m));
      const auto a = run_method(m, p, 13), b = run_method(m, q, 13);
      REQUIRE(a.trace.size() == b.trace.size());
      for (std::size_t i = 0; i < a.trace.size(); ++i) {
        REQUIRE(a.trace[i].design == b.trace[i].design);
        REQUIRE(b.trace[i].value == 4.0 * a.trace[i].value);
      }
      CHECK(a.best_design == b.best_design);
    }
  }
}

TEST_CASE("cancellation and method names") {
  std::atomic<bool> stop{true};
  auto p = box_problem(2, 0, 1, neg_sphere);
  p.cancel = &stop;
  try {
    optimize_de(p, 1);
    FAIL("expected cancellation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::cancelled);
  }
  for (Method m : {Method::de, Method::pso, Method::local, Method::sbo, Method::random})
    CHECK(parse_method(to_string(m)) == m);
  CHECK_FALSE(parse_method("slsqp").has_value());
}
