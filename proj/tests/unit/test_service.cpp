#include <doctest.h>
#include <stdlib.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <sstream>
#include <thread>

#include "fracopt/error.hpp"
#include "fracopt/feature_table.hpp"
#include "fracopt/offset.hpp"
#include "fracopt/service.hpp"
#include "fracopt/synthetic.hpp"
#include "fracopt/welldata_json.hpp"

// After Eigen: resolv.h, pulled in here, defines a _res macro.
#include <httplib.h>

using namespace fracopt;
using nlohmann::json;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "fracopt-test-XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

const Dataset& dataset() {
  static const Dataset ds = generate_synthetic(200, 5).dataset;
  return ds;
}

const StackedModel& model() {
  static const StackedModel m = [] {
    auto enc = FeatureEncoder::from_dataset(dataset());
    auto table = build_feature_table(dataset(), enc);
    impute_column_means(table);
    HyperPoint hp;
    hp.boosting.n_trees = 40;
    hp.boosting.max_depth = 3;
    return fit_stacked_fixed(table, hp, 1, enc);
  }();
  return m;
}

const WellRecord& pilot_row() {
  for (const auto& w : dataset().rows)
    if (w.treatment_type == TreatmentType::primary && w.design.complete()) return w;
  throw std::logic_error("no pilot");
}

ServiceConfig config_for(const TempDir& dir) {
  ServiceConfig c;
  c.port = 0;
  c.state_dir = dir.path / "state";
  return c;
}

json body_of(const HttpResponse& r) { return json::parse(r.body); }

JobRecord wait_terminal(Service& s, const std::string& id) {
  for (int i = 0; i < 6000; ++i) {
    const auto j = body_of(s.handle("GET", "/jobs/" + id, ""));
    const auto rec = JobRecord::from_json(j);
    if (is_terminal(rec.status)) return rec;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  FAIL("job never finished");
  return {};
}

std::string pilot_json(const WellRecord& w) { return record_to_json(w, dataset().environment_names()).dump(); }

}  // namespace

TEST_CASE("service basics") {
  TempDir dir;
  Service s(dataset(), model(), config_for(dir));

  const auto h = s.handle("GET", "/health", "");
  CHECK(h.status == 200);
  CHECK(body_of(h).at("version").is_string());
  CHECK(s.handle("GET", "/nope", "").status == 404);
  CHECK(s.handle("PUT", "/health", "").status == 405);

  const auto bad = s.handle("POST", "/pilots", "{\"well_id\": ");
  CHECK(bad.status == 400);
  CHECK(body_of(bad).at("position").get<int>() > 0);

  CHECK(s.handle("GET", "/jobs", "").body == "[]");
  CHECK(s.handle("GET", "/jobs/job-999", "").status == 404);
}

TEST_CASE("pilot endpoint") {
  TempDir dir;
  Service s(dataset(), model(), config_for(dir));
  auto pilot = pilot_row();
  pilot.well_id = "NEW-1";

  const auto full = s.handle("POST", "/pilots", pilot_json(pilot));
  REQUIRE(full.status == 200);
  CHECK(body_of(full).at("imputed").empty());

  const auto names = dataset().environment_names();
  auto j = record_to_json(pilot, names);
  j["environment"][names[0]] = nullptr;
  j["environment"][names[3]] = nullptr;
  const auto gaps = s.handle("POST", "/pilots", j.dump());
  REQUIRE(gaps.status == 200);
  const auto imputed = body_of(gaps).at("imputed");
  REQUIRE(imputed.size() == 2);
  CHECK(imputed[0].at("feature") == names[0]);
  CHECK(imputed[1].at("feature") == names[3]);
  CHECK(imputed[0].at("strategy") == "topn_mean");

  j["environment"]["mystery"] = 1.0;
  const auto unknown = s.handle("POST", "/pilots", j.dump());
  CHECK(unknown.status == 422);
  CHECK(unknown.body.find("mystery") != std::string::npos);

  SUBCASE("registered pilots are addressable by id") {
    CHECK(s.handle("GET", "/pilots/NEW-1/offsets?n=3", "").status == 200);
    CHECK(s.handle("GET", "/pilots/ghost/offsets", "").status == 422);
  }
}

TEST_CASE("offsets endpoint") {
  TempDir dir;
  Service s(dataset(), model(), config_for(dir));
  const auto& pilot = pilot_row();
  const auto oracle = build_pilot_cluster(dataset(), pilot, {});

  const auto none = body_of(s.handle("GET", "/pilots/" + pilot.well_id + "/offsets?n=0", ""));
  CHECK(none.at("offsets").empty());
  CHECK(none.at("embedding").empty());
  CHECK(none.at("cluster").at("bounds").size() == kDesignDim);

  const auto all = body_of(s.handle("GET", "/pilots/" + pilot.well_id + "/offsets?n=100000", ""));
  CHECK(all.at("cluster").at("members").get<std::vector<std::string>>() == oracle.members);
  CHECK(all.at("offsets").size() == oracle.members.size());
  int stars = 0;
  for (const auto& p : all.at("embedding")) stars += p.at("star").get<bool>();
  CHECK(stars == 1);
  for (std::size_t v = 0; v < kDesignDim; ++v) {
    const auto& b = all.at("cluster").at("bounds").at(std::string(kDesignNames[v]));
    CHECK(b.at("lower").get<double>() == oracle.bounds[v].lower);
    CHECK(b.at("upper").get<double>() == oracle.bounds[v].upper);
  }
  CHECK(s.handle("GET", "/pilots/" + pilot.well_id + "/offsets?n=-2", "").status == 422);
}

TEST_CASE("predict endpoint") {
  TempDir dir;
  Service s(dataset(), model(), config_for(dir));
  const auto& pilot = pilot_row();
  const auto& d = pilot.design;
  json design = {{"n_stages", d.n_stages},       {"pad_share", *d.pad_share},   {"fluid_volume", *d.fluid_volume},
                 {"proppant_mass", *d.proppant_mass}, {"fluid_rate", *d.fluid_rate}, {"final_prop_conc", *d.final_prop_conc}};
  const json req = {{"pilot", pilot.well_id}, {"design", design}};
  const auto r = s.handle("POST", "/predict", req.dump());
  REQUIRE(r.status == 200);
  const auto direct = predict_payload(dataset(), model(), pilot, design);
  CHECK(body_of(r).dump() == direct.dump());
  CHECK(body_of(r).at("prediction").get<double>() == model().predict_record(pilot, dataset().environment_names()));

  SUBCASE("a flat ramp is flagged") {
    const double c_start = body_of(r).at("design").at("start_prop_conc").get<double>();
    const double c_avg = *d.proppant_mass / *d.fluid_volume;
    design["final_prop_conc"] = c_start + 1.4 * (c_avg - c_start);
    const auto w = body_of(s.handle("POST", "/predict", json{{"pilot", pilot.well_id}, {"design", design}}.dump()));
    CHECK(w.at("epsilon").get<double>() == doctest::Approx(0.4));
    CHECK_FALSE(w.at("feasible").get<bool>());
    bool ramp = false;
    for (const auto& v : w.at("warnings")) ramp |= v.at("constraint").get<std::string>().rfind("epsilon >=", 0) == 0;
    CHECK(ramp);
  }
  SUBCASE("bad designs") {
    CHECK(s.handle("POST", "/predict", json{{"pilot", pilot.well_id}, {"design", {{"torque", 1}}}}.dump()).status == 422);
    CHECK(s.handle("POST", "/predict", json{{"pilot", pilot.well_id}, {"design", {{"n_stages", 2.5}}}}.dump()).status == 422);
  }
}

TEST_CASE("null model predicts the intercept") {
  StackedModel null = model();
  std::fill(null.ridge.weights.begin(), null.ridge.weights.end(), 0.0);
  null.ridge.intercept = 1234.5;
  null.trees.trees.clear();
  TempDir dir;
  Service s(dataset(), null, config_for(dir));
  const auto r = body_of(s.handle("POST", "/predict", json{{"pilot", pilot_row().well_id}, {"design", json::object()}}.dump()));
  CHECK(r.at("prediction").get<double>() == 1234.5);
}

TEST_CASE("optimization jobs") {
  TempDir dir;
  const auto& pilot = pilot_row();
  std::string done_id;
  {
    Service s(dataset(), model(), config_for(dir));
    const json req = {{"pilot", pilot.well_id}, {"methods", {"de", "local"}}, {"budget", 30}, {"seed", 3}};
    const auto r = s.handle("POST", "/optimize", req.dump());
    REQUIRE(r.status == 202);
    done_id = body_of(r).at("job_id");
    const auto rec = wait_terminal(s, done_id);
    REQUIRE(rec.status == JobStatus::done);
    CHECK(rec.result->at("results").size() == 2);
    CHECK(s.handle("DELETE", "/jobs/" + done_id, "").status == 409);

    CHECK(s.handle("POST", "/optimize", json{{"pilot", pilot.well_id}, {"methods", {"slsqp"}}}.dump()).status == 422);
    CHECK(s.handle("POST", "/optimize", json{{"pilot", pilot.well_id}, {"budget", 3}}.dump()).status == 422);

    SUBCASE("cancelling queued and running jobs") {
      const json slow = {{"pilot", pilot.well_id}, {"methods", {"sbo"}}, {"budget", 5000}};
      const std::string running = body_of(s.handle("POST", "/optimize", slow.dump())).at("job_id");
      const std::string queued = body_of(s.handle("POST", "/optimize", slow.dump())).at("job_id");
      for (int i = 0; i < 1000 && JobRecord::from_json(body_of(s.handle("GET", "/jobs/" + running, ""))).status ==
                                      JobStatus::queued;
           ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      CHECK(s.handle("DELETE", "/jobs/" + queued, "").status == 202);
      CHECK(s.handle("DELETE", "/jobs/" + running, "").status == 202);
      const auto q = wait_terminal(s, queued), rr = wait_terminal(s, running);
      CHECK(q.status == JobStatus::failed);
      CHECK(q.error->find("cancelled") != std::string::npos);
      CHECK(rr.status == JobStatus::failed);
      CHECK(rr.error->find("cancelled") != std::string::npos);
    }
  }
  // A restarted service replays the log.
  Service again(dataset(), model(), config_for(dir));
  const auto rec = JobRecord::from_json(body_of(again.handle("GET", "/jobs/" + done_id, "")));
  CHECK(rec.status == JobStatus::done);
  CHECK(body_of(again.handle("GET", "/jobs", "")).size() >= 1);
}

TEST_CASE("job store") {
  TempDir dir;
  const auto log = dir.path / "jobs.jsonl";
  {
    JobStore store(log);
    JobRecord a;
    a.job_id = store.next_id();
    a.submitted = "t0";
    store.put(a);
    a.status = JobStatus::running;
    store.put(a);
    CHECK_THROWS_AS(store.put([&] { auto b = a; b.status = JobStatus::queued; return b; }()), Error);
    CHECK_THROWS_AS(store.put([&] { auto b = a; b.status = JobStatus::done; return b; }()), Error);
    auto done = a;
    done.status = JobStatus::done;
    done.result = json{{"ok", true}};
    store.put(done);
    CHECK_THROWS_AS(store.put([&] { auto b = done; b.error = "x"; b.status = JobStatus::failed; return b; }()), Error);

    JobRecord b;
    b.job_id = store.next_id();
    b.status = JobStatus::running;
    store.put(b);
    CHECK(b.job_id == "job-000002");
  }
  {
    std::ofstream(log, std::ios::app) << "{\"job_id\": \"job-0000";
  }
  JobStore replay(log);
  REQUIRE(replay.all().size() == 2);
  CHECK(replay.get("job-000001")->status == JobStatus::done);
  CHECK(replay.get("job-000001")->result->at("ok") == true);
  const auto interrupted = *replay.get("job-000002");
  CHECK(interrupted.status == JobStatus::failed);
  CHECK(interrupted.error.has_value());
  CHECK(replay.next_id() == "job-000003");
}

TEST_CASE("service configuration") {
  std::istringstream in("# comment\nhost = 0.0.0.0\nport = 9000  # trailing\nworkers = 3\nbudget=150\n");
  auto c = parse_service_config(in);
  CHECK(c.host == "0.0.0.0");
  CHECK(c.port == 9000);
  CHECK(c.worker_slots == 3);
  CHECK(c.default_budget == 150);

  const std::map<std::string, std::string> env{{"FRACOPT_PORT", "9100"}, {"FRACOPT_STATE_DIR", "/tmp/x"}};
  apply_env_overrides(c, [&](const char* k) -> const char* {
    const auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  CHECK(c.port == 9100);
  CHECK(c.state_dir == "/tmp/x");
  CHECK(c.host == "0.0.0.0");

  std::istringstream unknown("colour = blue\n");
  CHECK_THROWS_AS(parse_service_config(unknown), Error);
  std::istringstream bad_port("port = many\n");
  CHECK_THROWS_AS(parse_service_config(bad_port), Error);
  ServiceConfig missing;
  CHECK_THROWS_AS(Service::from_config(missing), Error);

  CHECK(http_status(ErrorKind::insufficient_analogues) == 422);
  CHECK(http_status(ErrorKind::config) == 400);
  CHECK(http_status(ErrorKind::numerical) == 500);
}

TEST_CASE("service over HTTP") {
  TempDir dir;
  Service s(dataset(), model(), config_for(dir));
  const int port = s.start();
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  const auto res = cli.Get("/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body).at("status") == "ok");
  const auto miss = cli.Get("/pilots/" + pilot_row().well_id + "/offsets?n=2");
  REQUIRE(miss);
  CHECK(json::parse(miss->body).at("offsets").size() == 2);
  s.stop();
}
