#include "fracopt/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "fracopt/error.hpp"
#include "fracopt/random.hpp"
#include "fracopt/welldata_io.hpp"

namespace fracopt {

std::optional<double> epsilon(double c_start, double c_fin, double c_avg) {
  if (!(c_avg > c_start)) return std::nullopt;
  return (c_fin - c_start) / (c_avg - c_start) - 1.0;
}

namespace {

constexpr std::size_t kMass = index(DesignVar::proppant_mass);
constexpr std::size_t kVolume = index(DesignVar::fluid_volume);
constexpr std::size_t kFinal = index(DesignVar::final_prop_conc);
constexpr double kPenalty = 1e6;

}  // namespace

void OptimizationProblem::validate() const {
  const std::size_t d = lower.size();
  if (d == 0) throw Error(ErrorKind::config, "optimization problem has no variables");
  if (upper.size() != d || (!names.empty() && names.size() != d) || (!integer.empty() && integer.size() != d)) {
    throw Error(ErrorKind::config, "optimization problem vectors differ in length");
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || lower[i] > upper[i]) {
      throw Error(ErrorKind::config, "invalid bounds for variable " + (names.empty() ? std::to_string(i) : names[i]));
    }
  }
  if (budget < 10) throw Error(ErrorKind::config, "evaluation budget must be at least 10");
  if (!objective) throw Error(ErrorKind::config, "optimization problem has no objective");
  if ((ramp || mass_cap) && d != kDesignDim) {
    throw Error(ErrorKind::config, "ramp and mass constraints need the six-parameter design layout");
  }
  for (const auto& s : seeds) {
    if (s.size() != d) throw Error(ErrorKind::config, "seed design has the wrong dimension");
  }
}

OptimizationProblem make_design_problem(const std::array<double, kDesignDim>& lower,
                                        const std::array<double, kDesignDim>& upper, Objective objective,
                                        double c_start, int budget) {
  OptimizationProblem p;
  for (auto n : kDesignNames) p.names.emplace_back(n);
  p.lower.assign(lower.begin(), lower.end());
  p.upper.assign(upper.begin(), upper.end());
  p.integer.assign(kDesignDim, false);
  const std::size_t s = index(DesignVar::n_stages);
  p.integer[s] = true;
  double lo = std::ceil(lower[s] - 1e-9), hi = std::floor(upper[s] + 1e-9);
  if (lo > hi) lo = hi = std::round(0.5 * (lower[s] + upper[s]));
  p.lower[s] = lo;
  p.upper[s] = hi;
  p.objective = std::move(objective);
  p.ramp = RampConstraint{c_start, 0.5, 1.5};
  p.budget = budget;
  return p;
}

FeasibilityReport check_feasible(const OptimizationProblem& p, std::span<const double> x) {
  FeasibilityReport r;
  auto name = [&](std::size_t i) { return p.names.empty() ? "x" + std::to_string(i) : p.names[i]; };
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double width = p.upper[i] > p.lower[i] ? p.upper[i] - p.lower[i] : 1.0;
    if (x[i] < p.lower[i]) {
      r.violations.push_back({name(i) + " >= lower", x[i] - p.lower[i]});
      r.total_violation += (p.lower[i] - x[i]) / width;
    }
    if (x[i] > p.upper[i]) {
      r.violations.push_back({name(i) + " <= upper", p.upper[i] - x[i]});
      r.total_violation += (x[i] - p.upper[i]) / width;
    }
  }
  if (p.ramp && p.dim() == kDesignDim) {
    const auto& rc = *p.ramp;
    const double c_avg = x[kVolume] > 0.0 ? x[kMass] / x[kVolume] : -std::numeric_limits<double>::infinity();
    r.epsilon = epsilon(rc.c_start, x[kFinal], c_avg);
    if (!r.epsilon) {
      const double gap = std::isfinite(c_avg) ? c_avg - rc.c_start : -rc.c_start;
      r.violations.push_back({"avg_prop_conc > start_prop_conc", gap});
      r.total_violation += 1.0 - gap / std::max(rc.c_start, 1.0);
    } else {
      if (*r.epsilon < rc.lo) {
        r.violations.push_back({"epsilon >= " + format_double(rc.lo), *r.epsilon - rc.lo});
        r.total_violation += rc.lo - *r.epsilon;
      }
      if (*r.epsilon > rc.hi) {
        r.violations.push_back({"epsilon <= " + format_double(rc.hi), rc.hi - *r.epsilon});
        r.total_violation += *r.epsilon - rc.hi;
      }
    }
  }
  if (p.mass_cap && x[kMass] > *p.mass_cap) {
    r.violations.push_back({"proppant_mass <= cap", *p.mass_cap - x[kMass]});
    r.total_violation += (x[kMass] - *p.mass_cap) / std::max(*p.mass_cap, 1.0);
  }
  r.feasible = r.violations.empty();
  return r;
}

std::vector<double> snap(const OptimizationProblem& p, std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!p.integer.empty() && p.integer[i]) out[i] = std::round(out[i]);
    out[i] = std::clamp(out[i], p.lower[i], p.upper[i]);
  }
  return out;
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::de: return "de";
    case Method::pso: return "pso";
    case Method::local: return "local";
    case Method::sbo: return "sbo";
    case Method::random: return "random";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view s) {
  for (auto m : {Method::de, Method::pso, Method::local, Method::sbo, Method::random}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

nlohmann::json OptimizationResult::to_json(const std::vector<std::string>& names, bool include_timing) const {
  auto design_json = [&](const std::vector<double>& d) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < d.size(); ++i) j[i < names.size() ? names[i] : "x" + std::to_string(i)] = d[i];
    return j;
  };
  auto trace_json = nlohmann::json::array();
  for (const auto& e : trace) {
    trace_json.push_back({{"design", e.design}, {"value", e.value}, {"penalized", e.penalized}, {"feasible", e.feasible}});
  }
  nlohmann::json j = {{"method", std::string(to_string(method))},
                      {"best_design", design_json(best_design)},
                      {"best_value", best_value},
                      {"feasible", feasible},
                      {"evaluations", trace.size()},
                      {"warnings", warnings},
                      {"trace", trace_json}};
  if (include_timing) j["wall_time_s"] = wall_time_s;
  return j;
}

namespace {

double width(const OptimizationProblem& p, std::size_t i) { return p.upper[i] - p.lower[i]; }

std::vector<double> random_point(const OptimizationProblem& p, Rng& rng) {
  std::vector<double> x(p.dim());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(p.lower[i], p.upper[i]);
  return x;
}

std::vector<double> to_unit(const OptimizationProblem& p, std::span<const double> x) {
  std::vector<double> u(x.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = width(p, i) > 0.0 ? (x[i] - p.lower[i]) / width(p, i) : 0.0;
  return u;
}

std::vector<double> from_unit(const OptimizationProblem& p, std::span<const double> u) {
  std::vector<double> x(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] <= 0.0) {
      x[i] = p.lower[i];
    } else if (u[i] >= 1.0) {
      x[i] = p.upper[i];
    } else {
      x[i] = std::clamp(p.lower[i] + u[i] * width(p, i), p.lower[i], p.upper[i]);
    }
  }
  return x;
}

/// Counts objective calls, enforces the budget and keeps the trace.
class Evaluator {
 public:
  Evaluator(const OptimizationProblem& p, Method m) : p_(p), start_(std::chrono::steady_clock::now()) {
    result_.method = m;
  }

  int used() const { return static_cast<int>(result_.trace.size()); }
  int remaining() const { return p_.budget - used(); }
  bool exhausted() const { return remaining() <= 0; }

  /// Evaluates snap(x) and returns the penalised value.
  double operator()(std::span<const double> x) {
    if (exhausted()) throw Error(ErrorKind::numerical, "evaluation budget exceeded");
    if (p_.cancel && p_.cancel->load()) throw Error(ErrorKind::cancelled, "optimization cancelled");
    TraceEntry e;
    e.design = snap(p_, x);
    const auto rep = check_feasible(p_, e.design);
    e.value = p_.objective(e.design);
    if (!std::isfinite(e.value)) throw Error(ErrorKind::numerical, "objective returned a non-finite value");
    e.feasible = rep.feasible;
    e.penalized = rep.feasible ? e.value : e.value - kPenalty * rep.total_violation;
    const double out = e.penalized;
    if (best_penalized_ < 0 || e.penalized > result_.trace[static_cast<std::size_t>(best_penalized_)].penalized) {
      best_penalized_ = used();
    }
    result_.trace.push_back(std::move(e));
    return out;
  }

  const TraceEntry& best_entry() const { return result_.trace.at(static_cast<std::size_t>(best_penalized_)); }
  const std::vector<TraceEntry>& trace() const { return result_.trace; }
  void warn(std::string w) { result_.warnings.push_back(std::move(w)); }

  OptimizationResult finish() {
    auto& r = result_;
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < r.trace.size(); ++i) {
      if (r.trace[i].feasible && (!best || r.trace[i].value > r.trace[*best].value)) best = i;
    }
    if (best) {
      r.feasible = true;
      r.best_design = r.trace[*best].design;
      r.best_value = r.trace[*best].value;
    } else if (!r.trace.empty()) {
      r.feasible = false;
      r.best_design = best_entry().design;
      r.best_value = best_entry().value;
      r.warnings.emplace_back("no feasible design was found; the least-violating design is reported");
    }
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return std::move(r);
  }

 private:
  const OptimizationProblem& p_;
  OptimizationResult result_;
  int best_penalized_ = -1;
  std::chrono::steady_clock::time_point start_;
};

/// Clips to the box, applies the mass cap and moves the final concentration
/// (and if needed the volume) so the ramp parameter lands inside its
/// interval. Integer coordinates are left as they are.
std::vector<double> project(const OptimizationProblem& p, std::vector<double> x) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], p.lower[i], p.upper[i]);
  if (p.dim() != kDesignDim) return x;
  if (p.mass_cap) x[kMass] = std::max(p.lower[kMass], std::min(x[kMass], *p.mass_cap));
  if (!p.ramp) return x;
  const auto& rc = *p.ramp;
  const double margin = 1.05;
  if (!(x[kMass] / x[kVolume] > rc.c_start * margin)) {
    x[kVolume] = std::clamp(x[kMass] / (rc.c_start * margin), p.lower[kVolume], p.upper[kVolume]);
    if (!(x[kMass] / x[kVolume] > rc.c_start)) {
      double mass_hi = p.upper[kMass];
      if (p.mass_cap) mass_hi = std::min(mass_hi, *p.mass_cap);
      x[kMass] = std::clamp(rc.c_start * margin * x[kVolume], p.lower[kMass], std::max(p.lower[kMass], mass_hi));
    }
  }
  const double c_avg = x[kMass] / x[kVolume];
  if (c_avg > rc.c_start) {
    const double lo = rc.c_start + (1.0 + rc.lo + 1e-9) * (c_avg - rc.c_start);
    const double hi = rc.c_start + (1.0 + rc.hi - 1e-9) * (c_avg - rc.c_start);
    const double a = std::max(lo, p.lower[kFinal]);
    const double b = std::min(hi, p.upper[kFinal]);
    if (a <= b) x[kFinal] = std::clamp(x[kFinal], a, b);
  }
  return x;
}

std::vector<std::size_t> free_variables(const OptimizationProblem& p) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    if (p.upper[i] > p.lower[i] && (p.integer.empty() || !p.integer[i])) out.push_back(i);
  }
  return out;
}

/// Central-difference gradient over the free variables (2 calls each).
std::optional<Eigen::VectorXd> fd_gradient(Evaluator& ev, const OptimizationProblem& p, const std::vector<double>& x,
                                           const std::vector<std::size_t>& free, double step, int limit) {
  if (limit - ev.used() < 2 * static_cast<int>(free.size())) return std::nullopt;
  Eigen::VectorXd g(static_cast<Eigen::Index>(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) {
    const std::size_t i = free[k];
    const double h = step * width(p, i);
    auto xp = x, xm = x;
    xp[i] = std::min(p.upper[i], x[i] + h);
    xm[i] = std::max(p.lower[i], x[i] - h);
    const double fp = ev(xp);
    const double fm = ev(xm);
    g(static_cast<Eigen::Index>(k)) = (fp - fm) / (xp[i] - xm[i]);
  }
  return g;
}

/// Projected quasi-Newton ascent from an evaluated point. Everything it
/// compares scales with the objective, so a positive rescaling of the
/// objective reproduces the same iterates.
void local_search(Evaluator& ev, const OptimizationProblem& p, std::vector<double> x, double fx,
                  const LocalConfig& cfg, int limit) {
  const auto free = free_variables(p);
  const auto n = static_cast<Eigen::Index>(free.size());
  if (n == 0) return;
  Eigen::VectorXd w(n);
  for (Eigen::Index k = 0; k < n; ++k) w(k) = width(p, free[static_cast<std::size_t>(k)]);

  auto g = fd_gradient(ev, p, x, free, cfg.fd_step, limit);
  if (!g) return;
  Eigen::MatrixXd H;
  bool have_h = false;
  for (;;) {
    Eigen::VectorXd gp = *g;
    for (Eigen::Index k = 0; k < n; ++k) {
      const std::size_t i = free[static_cast<std::size_t>(k)];
      if ((x[i] >= p.upper[i] && gp(k) > 0.0) || (x[i] <= p.lower[i] && gp(k) < 0.0)) gp(k) = 0.0;
    }
    if (gp.cwiseProduct(w).cwiseAbs().maxCoeff() == 0.0) return;
    auto first_direction = [&]() -> Eigen::VectorXd {
      const double scale = 0.1 / gp.cwiseProduct(w).norm();
      return gp.cwiseProduct(w).cwiseProduct(w) * scale;
    };
    Eigen::VectorXd d = have_h ? Eigen::VectorXd(H * gp) : first_direction();
    for (Eigen::Index k = 0; k < n; ++k) {
      if (gp(k) == 0.0) d(k) = 0.0;
    }
    if (!(gp.dot(d) > 0.0)) {
      have_h = false;
      d = first_direction();
    }
    double t = 1.0;
    bool accepted = false;
    std::vector<double> xn;
    double fn = 0.0;
    for (int b = 0; b < cfg.max_backtracks; ++b, t *= 0.5) {
      if (ev.used() >= limit) return;
      std::vector<double> trial = x;
      for (Eigen::Index k = 0; k < n; ++k) trial[free[static_cast<std::size_t>(k)]] += t * d(k);
      trial = project(p, std::move(trial));
      double gain = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) {
        const std::size_t i = free[static_cast<std::size_t>(k)];
        gain += gp(k) * (trial[i] - x[i]);
      }
      const double ft = ev(trial);
      if (ft > fx && ft >= fx + 1e-4 * gain) {
        xn = std::move(trial);
        fn = ft;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!have_h) return;
      have_h = false;
      continue;
    }
    Eigen::VectorXd s(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const std::size_t i = free[static_cast<std::size_t>(k)];
      s(k) = xn[i] - x[i];
    }
    x = std::move(xn);
    fx = fn;
    if (s.cwiseQuotient(w).cwiseAbs().maxCoeff() < 1e-12) return;
    auto g_new = fd_gradient(ev, p, x, free, cfg.fd_step, limit);
    if (!g_new) return;
    const Eigen::VectorXd y = -(*g_new - *g);  // gradient change of the minimised -f
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!have_h) {
        H = Eigen::MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
        have_h = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    g = std::move(g_new);
  }
}

/// Budget split between the population phase and the final polish.
int polish_budget(const OptimizationProblem& p, int population, double fraction) {
  const int spare = p.budget - population;
  const int need = 2 * static_cast<int>(free_variables(p).size()) + 1;
  if (fraction <= 0.0 || spare < need) return 0;
  return std::min(spare, std::max(need, static_cast<int>(std::floor(fraction * p.budget))));
}

void polish_best(Evaluator& ev, const OptimizationProblem& p, const LocalConfig& cfg) {
  if (ev.exhausted() || ev.trace().empty()) return;
  const auto& best = ev.best_entry();
  const auto x = best.design;
  const double fx = best.penalized;
  local_search(ev, p, x, fx, cfg, p.budget);
}

}  // namespace

OptimizationResult optimize_de(const OptimizationProblem& p, std::uint64_t seed, const DeConfig& cfg,
                               const LocalConfig& polish) {
  p.validate();
  if (cfg.population < 1) throw Error(ErrorKind::config, "DE population must be positive");
  Evaluator ev(p, Method::de);
  Rng rng(seed);
  const std::size_t d = p.dim();
  const int np = std::min(cfg.population, p.budget);
  const int global_end = p.budget - polish_budget(p, np, cfg.polish_fraction);

  std::vector<std::vector<double>> pop;
  std::vector<double> fit;
  for (int i = 0; i < np; ++i) {
    auto x = static_cast<std::size_t>(i) < p.seeds.size() ? p.seeds[static_cast<std::size_t>(i)] : random_point(p, rng);
    fit.push_back(ev(x));
    pop.push_back(std::move(x));
  }
  const auto pick_other = [&](int exclude_a, int exclude_b, int exclude_c) {
    if (np < 4) return static_cast<int>(rng.uniform_int(0, np - 1));
    for (;;) {
      const int r = static_cast<int>(rng.uniform_int(0, np - 1));
      if (r != exclude_a && r != exclude_b && r != exclude_c) return r;
    }
  };
  while (ev.used() < global_end) {
    for (int i = 0; i < np && ev.used() < global_end; ++i) {
      const int r1 = pick_other(i, -1, -1);
      const int r2 = pick_other(i, r1, -1);
      const int r3 = pick_other(i, r1, r2);
      const auto jrand = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(d) - 1));
      std::vector<double> trial = pop[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < d; ++j) {
        if (rng.uniform() < cfg.cr || j == jrand) {
          const double v = pop[static_cast<std::size_t>(r1)][j] +
                           cfg.f * (pop[static_cast<std::size_t>(r2)][j] - pop[static_cast<std::size_t>(r3)][j]);
          trial[j] = std::clamp(v, p.lower[j], p.upper[j]);
        }
      }
      const double ft = ev(trial);
      if (ft >= fit[static_cast<std::size_t>(i)]) {
        pop[static_cast<std::size_t>(i)] = std::move(trial);
        fit[static_cast<std::size_t>(i)] = ft;
      }
    }
  }
  polish_best(ev, p, polish);
  return ev.finish();
}

OptimizationResult optimize_pso(const OptimizationProblem& p, std::uint64_t seed, const PsoConfig& cfg,
                                const LocalConfig& polish) {
  p.validate();
  if (cfg.swarm < 1) throw Error(ErrorKind::config, "PSO swarm must be positive");
  Evaluator ev(p, Method::pso);
  Rng rng(seed);
  const std::size_t d = p.dim();
  const int ns = std::min(cfg.swarm, p.budget);
  const int global_end = p.budget - polish_budget(p, ns, cfg.polish_fraction);

  std::vector<std::vector<double>> x, v, pbest;
  std::vector<double> pfit;
  std::size_t g = 0;
  for (int i = 0; i < ns; ++i) {
    auto xi = static_cast<std::size_t>(i) < p.seeds.size() ? p.seeds[static_cast<std::size_t>(i)] : random_point(p, rng);
    std::vector<double> vi(d);
    for (std::size_t j = 0; j < d; ++j) vi[j] = rng.uniform(-0.5, 0.5) * width(p, j);
    const double f = ev(xi);
    x.push_back(xi);
    v.push_back(std::move(vi));
    pbest.push_back(std::move(xi));
    pfit.push_back(f);
    if (f > pfit[g]) g = static_cast<std::size_t>(i);
  }
  while (ev.used() < global_end) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(ns) && ev.used() < global_end; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double vmax = 0.5 * width(p, j);
        double vj = cfg.inertia * v[i][j] + cfg.cognitive * rng.uniform() * (pbest[i][j] - x[i][j]) +
                    cfg.social * rng.uniform() * (pbest[g][j] - x[i][j]);
        v[i][j] = std::clamp(vj, -vmax, vmax);
        x[i][j] = std::clamp(x[i][j] + v[i][j], p.lower[j], p.upper[j]);
      }
      const double f = ev(x[i]);
      if (f > pfit[i]) {
        pfit[i] = f;
        pbest[i] = x[i];
        if (f > pfit[g]) g = i;
      }
    }
  }
  polish_best(ev, p, polish);
  return ev.finish();
}

OptimizationResult optimize_local(const OptimizationProblem& p, std::uint64_t seed, const LocalConfig& cfg) {
  p.validate();
  Evaluator ev(p, Method::local);
  Rng rng(seed);
  const int grad_cost = 2 * static_cast<int>(free_variables(p).size());
  std::size_t next_seed = 0;
  while (!ev.exhausted()) {
    std::vector<double> x0 = next_seed < p.seeds.size() ? p.seeds[next_seed++] : random_point(p, rng);
    x0 = project(p, snap(p, x0));
    const double f0 = ev(x0);
    if (ev.remaining() < grad_cost) {
      if (ev.used() == 1) ev.warn("budget is below one gradient evaluation; returning the start point");
      break;
    }
    local_search(ev, p, x0, f0, cfg, p.budget);
  }
  return ev.finish();
}

OptimizationResult optimize_random(const OptimizationProblem& p, std::uint64_t seed) {
  p.validate();
  Evaluator ev(p, Method::random);
  Rng rng(seed);
  for (const auto& s : p.seeds) {
    if (ev.exhausted()) break;
    ev(s);
  }
  while (!ev.exhausted()) ev(random_point(p, rng));
  return ev.finish();
}

OptimizationResult optimize_sbo(const OptimizationProblem& p, std::uint64_t seed, const SboConfig& cfg) {
  p.validate();
  Evaluator ev(p, Method::sbo);
  Rng rng(seed);
  const std::size_t d = p.dim();
  const int n_init = std::min(p.budget, cfg.initial > 0 ? cfg.initial : 2 * static_cast<int>(d));

  for (const auto& s : p.seeds) {
    if (ev.used() >= n_init) break;
    ev(s);
  }
  // Latin hypercube over the box; infeasible points are redrawn uniformly.
  const int n_lhs = n_init - ev.used();
  if (n_lhs > 0) {
    std::vector<std::vector<double>> u(static_cast<std::size_t>(n_lhs), std::vector<double>(d));
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<int> strata(static_cast<std::size_t>(n_lhs));
      std::iota(strata.begin(), strata.end(), 0);
      rng.shuffle(strata);
      for (int i = 0; i < n_lhs; ++i) {
        u[static_cast<std::size_t>(i)][j] = (strata[static_cast<std::size_t>(i)] + rng.uniform()) / n_lhs;
      }
    }
    int rejections = 0;
    for (const auto& ui : u) {
      auto x = snap(p, from_unit(p, ui));
      while (!check_feasible(p, x).feasible) {
        if (++rejections > cfg.max_rejections) {
          throw Error(ErrorKind::infeasible, "no feasible initial design found after " +
                                                 std::to_string(cfg.max_rejections) + " draws");
        }
        x = snap(p, random_point(p, rng));
      }
      ev(x);
    }
  }

  std::optional<GpHyper> hyper;
  int iteration = 0;
  while (!ev.exhausted()) {
    const auto& trace = ev.trace();
    const auto n = static_cast<Eigen::Index>(trace.size());
    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(d));
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto u = to_unit(p, trace[static_cast<std::size_t>(i)].design);
      for (std::size_t j = 0; j < d; ++j) X(i, static_cast<Eigen::Index>(j)) = u[j];
      y(i) = trace[static_cast<std::size_t>(i)].penalized;
    }
    const double best = y.maxCoeff();

    std::optional<GpSurrogate> gp;
    try {
      GpFitOptions opt;
      opt.seed = seed + static_cast<std::uint64_t>(iteration);
      opt.initial = hyper;
      const bool full = n <= cfg.full_refit_until || iteration % std::max(1, cfg.refit_every) == 0;
      opt.optimize = full || !hyper;
      opt.restarts = hyper ? 1 : 3;
      gp = gp_fit(X, y, opt);
      hyper = gp->hyper();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::precondition && e.kind() != ErrorKind::fit) throw;
    }

    auto is_duplicate = [&](const std::vector<double>& x) {
      for (const auto& e : ev.trace()) {
        if (e.design == x) return true;
      }
      return false;
    };
    std::vector<double> proposal;
    if (gp) {
      auto score = [&](const std::vector<double>& u, std::vector<double>* snapped) {
        auto x = snap(p, from_unit(p, u));
        const auto rep = check_feasible(p, x);
        double s;
        if (!rep.feasible) {
          s = -1.0 - rep.total_violation;
        } else {
          const auto ux = to_unit(p, x);
          s = acquisition(*gp, ux, best, cfg.kind);
        }
        if (snapped) *snapped = std::move(x);
        return s;
      };
      // Inner differential evolution on the acquisition (surrogate calls only).
      const int np = std::max(4, cfg.inner_population);
      std::vector<std::vector<double>> pop;
      std::vector<std::size_t> order(trace.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return trace[a].penalized > trace[b].penalized; });
      for (std::size_t k = 0; k < order.size() && pop.size() < 5; ++k) pop.push_back(to_unit(p, trace[order[k]].design));
      while (static_cast<int>(pop.size()) < np) {
        std::vector<double> u(d);
        for (auto& c : u) c = rng.uniform();
        pop.push_back(std::move(u));
      }
      std::vector<double> fit(pop.size());
      for (std::size_t i = 0; i < pop.size(); ++i) fit[i] = score(pop[i], nullptr);
      for (int gen = 0; gen < cfg.inner_generations; ++gen) {
        for (std::size_t i = 0; i < pop.size(); ++i) {
          std::size_t r1, r2, r3;
          do r1 = static_cast<std::size_t>(rng.uniform_int(0, np - 1)); while (r1 == i);
          do r2 = static_cast<std::size_t>(rng.uniform_int(0, np - 1)); while (r2 == i || r2 == r1);
          do r3 = static_cast<std::size_t>(rng.uniform_int(0, np - 1)); while (r3 == i || r3 == r1 || r3 == r2);
          const auto jrand = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(d) - 1));
          auto trial = pop[i];
          for (std::size_t j = 0; j < d; ++j) {
            if (rng.uniform() < 0.9 || j == jrand) {
              trial[j] = std::clamp(pop[r1][j] + 0.7 * (pop[r2][j] - pop[r3][j]), 0.0, 1.0);
            }
          }
          const double ft = score(trial, nullptr);
          if (ft >= fit[i]) {
            pop[i] = std::move(trial);
            fit[i] = ft;
          }
        }
      }
      std::vector<std::size_t> rank(pop.size());
      std::iota(rank.begin(), rank.end(), std::size_t{0});
      std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return fit[a] > fit[b]; });
      for (auto r : rank) {
        std::vector<double> x;
        score(pop[r], &x);
        if (!is_duplicate(x)) {
          proposal = std::move(x);
          break;
        }
      }
    }
    if (proposal.empty()) {
      for (int tries = 0; tries < cfg.max_rejections; ++tries) {
        auto x = snap(p, random_point(p, rng));
        if (check_feasible(p, x).feasible && !is_duplicate(x)) {
          proposal = std::move(x);
          break;
        }
      }
      if (proposal.empty()) proposal = snap(p, random_point(p, rng));
    }
    ev(proposal);
    ++iteration;
  }
  return ev.finish();
}

OptimizationResult run_method(Method m, const OptimizationProblem& problem, std::uint64_t seed,
                              const OptimizerConfig& config) {
  switch (m) {
    case Method::de: return optimize_de(problem, seed, config.de, config.local);
    case Method::pso: return optimize_pso(problem, seed, config.pso, config.local);
    case Method::local: return optimize_local(problem, seed, config.local);
    case Method::sbo: return optimize_sbo(problem, seed, config.sbo);
    case Method::random: return optimize_random(problem, seed);
  }
  throw Error(ErrorKind::config, "unknown optimization method");
}

}  // namespace fracopt
