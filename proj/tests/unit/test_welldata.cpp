#include <doctest.h>

#include <functional>
#include <set>
#include <sstream>

#include "fracopt/error.hpp"
#include "fracopt/stats.hpp"
#include "fracopt/synthetic.hpp"
#include "fracopt/welldata.hpp"
#include "fracopt/welldata_io.hpp"
#include "fracopt/welldata_json.hpp"
#include "oracles.hpp"

using namespace fracopt;

namespace {

const char* kHeader =
    "well_id,field_id,layer_id,face_id,well_type,treatment_type,n_stages,pad_share,fluid_volume,proppant_mass,"
    "fluid_rate,final_prop_conc,start_prop_conc,x,y,production,perm[mD],poro\n";

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return ingest_csv(in);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("ingest parses rows, units and missing cells") {
  const auto ds = parse(std::string(kHeader) +
                        "W1,F1,L1,A,horizontal,primary,3,0.3,500,100000,4,600,80,0,0,30:1000;60:2000;90:3000,1.5,0.2\n"
                        "W2,F1,L1,A, Horizontal ,primary,2,0.3,500,n/a,4,600,,10,0,30:1000,2.5,\n"
                        "W3,F1,L1,A,vertical,refracture,1,0.3,500,100000,4,600,80,,,,n/a,0.1\n");
  REQUIRE(ds.size() == 3);
  CHECK(ds.environment.size() == 2);
  CHECK(ds.environment[0] == FeatureSpec{"perm", "mD"});
  CHECK(ds.environment_index("perm[mD]") == 0);
  CHECK(ds.environment_index("perm") == 0);
  CHECK(kind_of([&] { (void)ds.environment_index("perm[cP]"); }) == ErrorKind::schema);
  CHECK(ds.rows[1].well_type == WellType::horizontal);
  CHECK_FALSE(ds.rows[1].design.proppant_mass.has_value());
  CHECK_FALSE(ds.rows[1].environment[1].has_value());
  CHECK_FALSE(ds.rows[2].environment[0].has_value());
  CHECK(ds.rows[2].treatment_type == TreatmentType::refracture);
  CHECK_FALSE(ds.rows[2].coordinates.has_value());
  CHECK(ds.rows[0].design.avg_prop_conc().value() == doctest::Approx(200.0));
}

TEST_CASE("ingest errors") {
  SUBCASE("duplicate id") {
    try {
      parse(std::string(kHeader) + "W1,F,L,A,vertical,primary,1,,,,,,,,,,1,1\nW1,F,L,A,vertical,primary,1,,,,,,,,,,1,1\n");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ingestion);
      CHECK(std::string(e.what()).find("W1") != std::string::npos);
    }
  }
  SUBCASE("missing well_id column") {
    CHECK(kind_of([] { parse("field_id,layer_id\nF,L\n"); }) == ErrorKind::schema);
  }
}

TEST_CASE("alias table unifies labels") {
  const auto t = AliasTable::defaults();
  CHECK(t.unify("  Horizontal ") == "horizontal");
  CHECK(trim_casefold(" AbC ") == "abc");
  AliasTable custom;
  custom.add("Layer-One", "l1");
  CHECK(custom.unify("layer-one ") == "l1");
}

TEST_CASE("target_90d") {
  CHECK(*target_90d(ProductionSeries({{30, 1000}, {60, 2000}, {90, 3000}})) == 3000.0);
  CHECK(*target_90d(ProductionSeries({{20, 500}, {50, 1250}, {80, 2000}, {110, 2750}})) == doctest::Approx(2250.0).epsilon(1e-15));
  CHECK_FALSE(target_90d(ProductionSeries({{30, 1000}, {60, 2000}})).has_value());
  CHECK(*target_90d(ProductionSeries({{120, 1200}})) == doctest::Approx(900.0));
  CHECK(kind_of([] { (void)target_90d(ProductionSeries{}); }) == ErrorKind::precondition);
}

TEST_CASE("target_90d is monotone in the cumulative curve") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 6));
    std::vector<Checkpoint> a, b;
    double day = 0, cum = 0, extra = 0;
    for (int i = 0; i < n; ++i) {
      day += rng.uniform(1, 40);
      cum += rng.uniform(0, 500);
      extra += rng.uniform(0, 100);
      a.push_back({day, cum});
      b.push_back({day, cum + extra});
    }
    a.push_back({day + 90, cum + 10});
    b.push_back({day + 90, cum + 10 + extra});
    CHECK(*target_90d(ProductionSeries(b)) >= *target_90d(ProductionSeries(a)));
  }
}

TEST_CASE("normalizer anchors, clipping and the uniform sample") {
  Rng rng(3);
  std::vector<double> col(1000);
  for (auto& v : col) v = rng.uniform(0, 100);
  const auto norm = Normalizer::fit({"u"}, {col});
  const double p1 = oracle::percentile(col, 1), p99 = oracle::percentile(col, 99);
  CHECK(norm.range("u").p1 == doctest::Approx(p1).epsilon(1e-14));
  CHECK(norm.range("u").p99 == doctest::Approx(p99).epsilon(1e-14));
  CHECK(norm.scale("u", p1) == 0.0);
  CHECK(norm.scale("u", p99) == 1.0);
  CHECK(std::abs(norm.scale("u", 50) - 0.5) <= 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double s = norm.scale("u", rng.uniform(-1000, 1000));
    CHECK((s >= 0.0 && s <= 1.0));
  }
  CHECK(is_missing(norm.scale("u", kMissing)));
  const auto c = Normalizer::fit({"c"}, {{2.0, 2.0, 2.0}});
  CHECK(c.scale("c", 2.0) == 0.5);
  CHECK(kind_of([&] { (void)norm.scale("nope", 1.0); }) == ErrorKind::schema);
}

TEST_CASE("percentile matches the sorted-array definition") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(static_cast<std::size_t>(rng.uniform_int(1, 40)));
    for (auto& x : v) x = rng.normal();
    const double q = rng.uniform(0, 100);
    CHECK(stats::percentile(v, q) == doctest::Approx(oracle::percentile(v, q)).epsilon(1e-14));
  }
  const std::vector<double> hand{1, 2, 3, 4};
  CHECK(stats::percentile(hand, 50) == 2.5);
  CHECK(stats::percentile(hand, 5) == doctest::Approx(1.15));
}

TEST_CASE("split_primary_refrac partitions") {
  auto field = generate_synthetic(60, 2);
  auto [p, r] = split_primary_refrac(field.dataset);
  CHECK(p.size() + r.size() == 60);
  for (const auto& w : p.rows) CHECK(w.treatment_type == TreatmentType::primary);
  for (const auto& w : r.rows) CHECK(w.treatment_type == TreatmentType::refracture);

  Dataset ds;
  for (int i = 0; i < 15; ++i) {
    WellRecord w;
    w.well_id = "W" + std::to_string(i);
    w.treatment_type = i < 10 ? TreatmentType::primary : TreatmentType::refracture;
    ds.rows.push_back(w);
  }
  auto [a, b] = split_primary_refrac(ds);
  CHECK(a.size() == 10);
  CHECK(b.size() == 5);
  auto [e1, e2] = split_primary_refrac(Dataset{});
  CHECK(e1.size() == 0);
  CHECK(e2.size() == 0);
}

TEST_CASE("synthetic generator") {
  SUBCASE("byte-identical for a seed") {
    std::ostringstream a, b;
    write_csv(generate_synthetic(100, 7).dataset, a);
    write_csv(generate_synthetic(100, 7).dataset, b);
    CHECK(a.str() == b.str());
  }
  SUBCASE("noise 0 reproduces the ground truth") {
    SyntheticSpec spec;
    spec.noise = 0.0;
    spec.short_history_fraction = 0.0;
    const auto f = generate_synthetic(80, 4, spec);
    for (std::size_t i = 0; i < f.dataset.size(); ++i) {
      const auto t = target_90d(f.dataset.rows[i].production);
      REQUIRE(t.has_value());
      CHECK(*t == doctest::Approx(f.truth[i]).epsilon(1e-9));
      CHECK(GroundTruth::production(f.dataset.rows[i]) == doctest::Approx(f.truth[i]).epsilon(1e-12));
    }
  }
  SUBCASE("missing fraction") {
    SyntheticSpec spec;
    spec.missing_fraction = 0.2;
    const auto f = generate_synthetic(500, 9, spec);
    std::size_t miss = 0, total = 0;
    for (const auto& w : f.dataset.rows)
      for (const auto& v : w.environment) {
        ++total;
        miss += !v.has_value();
      }
    CHECK(std::abs(static_cast<double>(miss) / total - 0.2) <= 0.02);
  }
  SUBCASE("invalid spec") {
    SyntheticSpec spec;
    spec.noise = -1;
    CHECK(kind_of([&] { generate_synthetic(10, 1, spec); }) == ErrorKind::config);
  }
  SUBCASE("at least three latent clusters") {
    const auto f = generate_synthetic(200, 1);
    std::set<int> c(f.latent_cluster.begin(), f.latent_cluster.end());
    CHECK(c.size() >= 3);
  }
}

TEST_CASE("CSV write then ingest round-trips exactly") {
  SyntheticSpec spec;
  spec.missing_fraction = 0.1;
  const auto f = generate_synthetic(120, 13, spec);
  std::stringstream io;
  write_csv(f.dataset, io);
  const auto back = ingest_csv(io);
  REQUIRE(back.size() == f.dataset.size());
  CHECK(back.environment == f.dataset.environment);
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back.rows[i] == f.dataset.rows[i]);
}

TEST_CASE("record JSON round-trips") {
  SyntheticSpec spec;
  spec.missing_fraction = 0.2;
  const auto f = generate_synthetic(40, 21, spec);
  const auto names = f.dataset.environment_names();
  for (const auto& w : f.dataset.rows) {
    const auto j = record_to_json(w, names);
    CHECK(record_from_json(nlohmann::json::parse(j.dump()), f.dataset) == w);
  }
  auto j = record_to_json(f.dataset.rows[0], names);
  j["environment"]["bogus"] = 1.0;
  CHECK(kind_of([&] { record_from_json(j, f.dataset); }) == ErrorKind::schema);
  j = record_to_json(f.dataset.rows[0], names);
  j["design"]["pad_share"] = "lots";
  CHECK(kind_of([&] { record_from_json(j, f.dataset); }) == ErrorKind::input);
}

TEST_CASE("dataset validation") {
  auto ds = generate_synthetic(20, 1).dataset;
  ds.validate();
  ds.rows[3].design.n_stages = 0;
  CHECK(kind_of([&] { ds.validate(); }) != ErrorKind::io);
}
