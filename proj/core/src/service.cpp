#include "fracopt/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "fracopt/offset.hpp"
#include "fracopt/optimize.hpp"
#include "fracopt/recommend.hpp"
#include "fracopt/version.hpp"
#include "fracopt/welldata_io.hpp"
#include "fracopt/welldata_json.hpp"

namespace fracopt {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::config, key + " must be an integer, got '" + value + "'");
  }
}

void set_key(ServiceConfig& c, const std::string& key, const std::string& value) {
  if (key == "host") c.host = value;
  else if (key == "port") c.port = parse_int(key, value);
  else if (key == "model") c.model_path = value;
  else if (key == "dataset") c.dataset_path = value;
  else if (key == "state_dir") c.state_dir = value;
  else if (key == "workers") c.worker_slots = parse_int(key, value);
  else if (key == "budget") c.default_budget = parse_int(key, value);
  else throw Error(ErrorKind::config, "unknown config key '" + key + "'");
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

int status_rank(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return 0;
    case JobStatus::running: return 1;
    case JobStatus::done:
    case JobStatus::failed: return 2;
  }
  return 0;
}

JobKind parse_kind(const std::string& s) {
  for (auto k : {JobKind::train, JobKind::optimize, JobKind::offsets, JobKind::embed})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::schema, "unknown job kind '" + s + "'");
}

JobStatus parse_status(const std::string& s) {
  for (auto k : {JobStatus::queued, JobStatus::running, JobStatus::done, JobStatus::failed})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::schema, "unknown job status '" + s + "'");
}

nlohmann::json error_body(const std::string& message, std::string_view kind) {
  return {{"error", message}, {"kind", kind}};
}

HttpResponse json_response(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json"}; }

}  // namespace

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error(ErrorKind::config, "port out of range: " + std::to_string(port));
  if (worker_slots < 1) throw Error(ErrorKind::config, "workers must be >= 1");
  if (default_budget < 10) throw Error(ErrorKind::config, "budget must be >= 10");
  if (host.empty()) throw Error(ErrorKind::config, "host must not be empty");
}

ServiceConfig parse_service_config(std::istream& in) {
  ServiceConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::config, "line " + std::to_string(lineno) + ": expected key = value");
    set_key(c, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return c;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot read config " + path.string());
  return parse_service_config(in);
}

void apply_env_overrides(ServiceConfig& config, const std::function<const char*(const char*)>& getenv) {
  static const std::pair<const char*, const char*> keys[] = {
      {"FRACOPT_HOST", "host"},         {"FRACOPT_PORT", "port"},           {"FRACOPT_MODEL", "model"},
      {"FRACOPT_DATASET", "dataset"},   {"FRACOPT_STATE_DIR", "state_dir"}, {"FRACOPT_WORKERS", "workers"},
      {"FRACOPT_BUDGET", "budget"}};
  for (const auto& [env, key] : keys) {
    if (const char* v = getenv(env); v && *v) set_key(config, key, v);
  }
}

std::string_view to_string(JobKind k) {
  switch (k) {
    case JobKind::train: return "train";
    case JobKind::optimize: return "optimize";
    case JobKind::offsets: return "offsets";
    case JobKind::embed: return "embed";
  }
  return "optimize";
}

std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "queued";
}

bool is_terminal(JobStatus s) { return s == JobStatus::done || s == JobStatus::failed; }

nlohmann::json JobRecord::to_json() const {
  nlohmann::json j = {{"job_id", job_id},
                      {"kind", to_string(kind)},
                      {"status", to_string(status)},
                      {"submitted", submitted},
                      {"finished", finished ? nlohmann::json(*finished) : nlohmann::json()},
                      {"request", request}};
  j["result"] = result ? *result : nlohmann::json();
  j["error"] = error ? nlohmann::json(*error) : nlohmann::json();
  return j;
}

JobRecord JobRecord::from_json(const nlohmann::json& j) {
  JobRecord r;
  r.job_id = j.at("job_id").get<std::string>();
  r.kind = parse_kind(j.at("kind").get<std::string>());
  r.status = parse_status(j.at("status").get<std::string>());
  r.submitted = j.value("submitted", std::string());
  if (j.contains("finished") && !j["finished"].is_null()) r.finished = j["finished"].get<std::string>();
  r.request = j.value("request", nlohmann::json());
  if (j.contains("result") && !j["result"].is_null()) r.result = j["result"];
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
  return r;
}

JobStore::JobStore(std::filesystem::path log_path) : path_(std::move(log_path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    JobRecord r;
    try {
      r = JobRecord::from_json(nlohmann::json::parse(line));
    } catch (const std::exception&) {
      continue;  // torn tail from an interrupted write
    }
    if (!index_.count(r.job_id)) order_.push_back(r.job_id);
    index_[r.job_id] = r;
    const auto dash = r.job_id.rfind('-');
    if (dash != std::string::npos) {
      try {
        counter_ = std::max<std::size_t>(counter_, std::stoul(r.job_id.substr(dash + 1)));
      } catch (const std::exception&) {
      }
    }
  }
  in.close();
  for (const auto& id : order_) {
    auto& r = index_[id];
    if (is_terminal(r.status)) continue;
    r.status = JobStatus::failed;
    r.error = "interrupted by service restart";
    r.finished = iso_now();
    append(r);
  }
}

void JobStore::append(const JobRecord& record) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error(ErrorKind::io, "cannot append to job log " + path_.string());
  out << record.to_json().dump() << '\n';
  out.flush();
}

void JobStore::put(const JobRecord& record) {
  std::lock_guard lock(mutex_);
  if (const auto it = index_.find(record.job_id); it != index_.end()) {
    const auto prev = it->second.status;
    if (is_terminal(prev) || status_rank(record.status) < status_rank(prev))
      throw Error(ErrorKind::precondition, "job " + record.job_id + " cannot move from " +
                                               std::string(to_string(prev)) + " to " +
                                               std::string(to_string(record.status)));
  } else {
    order_.push_back(record.job_id);
  }
  if (record.status == JobStatus::done && !record.result)
    throw Error(ErrorKind::precondition, "done job needs a result");
  if (record.status == JobStatus::failed && !record.error)
    throw Error(ErrorKind::precondition, "failed job needs an error");
  append(record);
  index_[record.job_id] = record;
}

std::optional<JobRecord> JobStore::get(const std::string& job_id) const {
  std::lock_guard lock(mutex_);
  const auto it = index_.find(job_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<JobRecord> JobStore::all() const {
  std::lock_guard lock(mutex_);
  std::vector<JobRecord> out;
  for (const auto& id : order_) out.push_back(index_.at(id));
  return out;
}

std::string JobStore::next_id() {
  std::lock_guard lock(mutex_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "job-%06zu", ++counter_);
  return buf;
}

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 400;
    case ErrorKind::cancelled: return 409;
    case ErrorKind::schema:
    case ErrorKind::input:
    case ErrorKind::precondition:
    case ErrorKind::insufficient_data:
    case ErrorKind::insufficient_analogues:
    case ErrorKind::infeasible:
    case ErrorKind::embedding: return 422;
    default: return 500;
  }
}

nlohmann::json pilot_payload(const Dataset& ds, const WellRecord& pilot) {
  const auto prepared = prepare_pilot(ds, pilot, {});
  nlohmann::json imputed = nlohmann::json::array();
  for (const auto& v : prepared.imputation.report)
    imputed.push_back({{"feature", v.feature},
                       {"value", v.value},
                       {"strategy", to_string(v.strategy)},
                       {"donors", v.donors},
                       {"global_fallback", v.global_fallback}});
  return {{"pilot_id", pilot.well_id},
          {"imputed", imputed},
          {"warnings", prepared.imputation.warnings},
          {"record", record_to_json(prepared.pilot, ds.environment_names())},
          {"cluster_size", prepared.cluster.members.size()},
          {"start_prop_conc", prepared.c_start},
          {"start_prop_conc_source", prepared.c_start_source}};
}

nlohmann::json offsets_payload(const Dataset& ds, const WellRecord& pilot, std::size_t n, std::uint64_t seed) {
  const auto cluster = build_pilot_cluster(ds, pilot, {});
  const Normalizer norm = ds.normalization ? *ds.normalization : fit_normalizer(ds);
  const auto names = ds.environment_names();
  nlohmann::json offsets = nlohmann::json::array();
  nlohmann::json used = nlohmann::json::array();
  if (n > 0) {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows;
    for (const auto& id : cluster.members) {
      if (id == pilot.well_id) continue;
      ids.push_back(id);
      rows.push_back(normalized_environment(ds, norm, *ds.find(id)));
    }
    if (!ids.empty()) {
      const auto top = euclidean_topn(normalized_environment(ds, norm, pilot), ids, rows, n, names);
      for (std::size_t i = 0; i < top.ids.size(); ++i)
        offsets.push_back({{"rank", i + 1}, {"well_id", top.ids[i]}, {"distance", top.distances[i]}});
      used = top.used_features;
    }
  }
  nlohmann::json embedding = nlohmann::json::array();
  std::vector<std::string> warnings;
  try {
    TsneConfig tc;
    tc.seed = seed;
    // n = 0 asks for the bounds alone.
    const auto scatter = n > 0 ? cluster_scatter(ds, pilot, cluster, tc) : std::vector<ScatterPoint>{};
    for (const auto& p : scatter) {
      const bool member = std::find(cluster.members.begin(), cluster.members.end(), p.well_id) !=
                          cluster.members.end();
      embedding.push_back({{"well_id", p.well_id},
                           {"x", p.x},
                           {"y", p.y},
                           {"label", p.cluster},
                           {"member", member || p.is_pilot},
                           {"star", p.is_pilot}});
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::embedding) throw;
    warnings.push_back(e.what());
  }
  return {{"pilot_id", pilot.well_id}, {"n", n},         {"cluster", cluster.to_json()}, {"offsets", offsets},
          {"used_features", used},     {"embedding", embedding}, {"warnings", warnings}};
}

nlohmann::json predict_payload(const Dataset& ds, const StackedModel& model, const WellRecord& pilot,
                               const nlohmann::json& design) {
  if (!design.is_object()) throw Error(ErrorKind::input, "design must be an object");
  std::vector<std::string> notes;
  WellRecord w = pilot;
  std::optional<PilotCluster> cluster;
  double c_start = 80.0;
  try {
    auto prepared = prepare_pilot(ds, pilot, {});
    w = prepared.pilot;
    c_start = prepared.c_start;
    cluster = std::move(prepared.cluster);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::insufficient_analogues) throw;
    notes.push_back(std::string(e.what()) + "; environment gaps take dataset means and bounds are not checked");
    const auto means = environment_means(ds);
    w.environment.resize(ds.environment.size());
    for (std::size_t i = 0; i < w.environment.size(); ++i)
      if (!w.environment[i]) w.environment[i] = means[i];
    if (pilot.design.start_prop_conc) c_start = *pilot.design.start_prop_conc;
  }

  for (const auto& [key, value] : design.items()) {
    if (!value.is_number()) throw Error(ErrorKind::input, "design '" + key + "' must be a number");
    const double v = value.get<double>();
    if (key == "n_stages") {
      if (v < 1 || v != std::floor(v)) throw Error(ErrorKind::input, "n_stages must be a positive integer");
      w.design.n_stages = static_cast<int>(v);
    } else if (key == "pad_share") w.design.pad_share = v;
    else if (key == "fluid_volume") w.design.fluid_volume = v;
    else if (key == "proppant_mass") w.design.proppant_mass = v;
    else if (key == "fluid_rate") w.design.fluid_rate = v;
    else if (key == "final_prop_conc") w.design.final_prop_conc = v;
    else if (key == "start_prop_conc") w.design.start_prop_conc = v;
    else throw Error(ErrorKind::schema, "unknown design parameter '" + key + "'");
  }
  if (!w.design.start_prop_conc) w.design.start_prop_conc = c_start;
  const auto full = w.design.complete();
  if (!full) {
    const auto vals = w.design.values();
    for (std::size_t i = 0; i < kDesignDim; ++i)
      if (!vals[i]) throw Error(ErrorKind::input, "design parameter '" + std::string(kDesignNames[i]) + "' is missing");
  }

  const double prediction = model.predict_record(w, ds.environment_names());

  nlohmann::json warnings = nlohmann::json::array();
  std::optional<double> eps;
  bool feasible = true;
  const double c0 = *w.design.start_prop_conc;
  if (cluster) {
    DesignVector lo{}, hi{};
    for (std::size_t i = 0; i < kDesignDim; ++i) {
      lo[i] = cluster->bounds[i].lower;
      hi[i] = cluster->bounds[i].upper;
    }
    const auto problem = make_design_problem(lo, hi, [](std::span<const double>) { return 0.0; }, c0);
    const auto report = check_feasible(problem, std::span<const double>(full->data(), full->size()));
    feasible = report.feasible;
    eps = report.epsilon;
    for (const auto& v : report.violations) warnings.push_back({{"constraint", v.constraint}, {"margin", v.margin}});
  } else {
    eps = epsilon(c0, (*full)[index(DesignVar::final_prop_conc)], avg_prop_conc(*full));
    const RampConstraint ramp;
    if (!eps) {
      feasible = false;
      warnings.push_back({{"constraint", "avg_prop_conc > start_prop_conc"},
                          {"margin", avg_prop_conc(*full) - c0}});
    } else if (*eps < ramp.lo || *eps > ramp.hi) {
      feasible = false;
      const bool low = *eps < ramp.lo;
      warnings.push_back({{"constraint", low ? "epsilon >= " + format_double(ramp.lo)
                                             : "epsilon <= " + format_double(ramp.hi)},
                          {"margin", low ? *eps - ramp.lo : ramp.hi - *eps}});
    }
  }
  nlohmann::json d = nlohmann::json::object();
  for (std::size_t i = 0; i < kDesignDim; ++i) d[std::string(kDesignNames[i])] = (*full)[i];
  d["start_prop_conc"] = c0;
  return {{"pilot_id", pilot.well_id},
          {"prediction", prediction},
          {"design", d},
          {"epsilon", eps ? nlohmann::json(*eps) : nlohmann::json()},
          {"feasible", feasible},
          {"warnings", warnings},
          {"notes", notes}};
}

struct Service::Impl {
  Dataset ds;
  StackedModel model;
  ServiceConfig config;
  std::ostream* log;
  std::mutex log_mutex;

  std::mutex pilots_mutex;
  std::map<std::string, WellRecord> pilots;

  JobStore store;
  std::mutex queue_mutex;
  std::condition_variable queue_cv;
  std::condition_variable idle_cv;
  std::deque<std::string> queue;
  std::map<std::string, std::shared_ptr<std::atomic<bool>>> cancel_flags;
  std::size_t running = 0;
  bool stopping = false;
  std::vector<std::thread> workers;

  httplib::Server server;
  std::thread server_thread;

  Impl(Dataset d, StackedModel m, ServiceConfig c, std::ostream* l)
      : ds(std::move(d)), model(std::move(m)), config(std::move(c)), log(l), store(config.state_dir / "jobs.jsonl") {}

  void log_event(nlohmann::json j) {
    if (!log) return;
    j["ts"] = iso_now();
    std::lock_guard lock(log_mutex);
    *log << j.dump() << '\n';
    log->flush();
  }

  WellRecord resolve_pilot(const nlohmann::json& ref) {
    if (ref.is_string()) {
      const auto id = ref.get<std::string>();
      {
        std::lock_guard lock(pilots_mutex);
        if (const auto it = pilots.find(id); it != pilots.end()) return it->second;
      }
      if (const WellRecord* w = ds.find(id)) return *w;
      throw Error(ErrorKind::input, "unknown pilot '" + id + "'");
    }
    if (ref.is_object()) return record_from_json(ref, ds);
    throw Error(ErrorKind::input, "pilot must be an id or a well record");
  }

  HttpResponse health() {
    return json_response(200, {{"status", "ok"},
                               {"version", kVersion},
                               {"wells", ds.size()},
                               {"features", model.n_features()}});
  }

  HttpResponse post_pilot(const nlohmann::json& body) {
    const WellRecord pilot = record_from_json(body, ds);
    auto payload = pilot_payload(ds, pilot);
    {
      std::lock_guard lock(pilots_mutex);
      pilots[pilot.well_id] = pilot;
    }
    return json_response(200, payload);
  }

  HttpResponse get_offsets(const std::string& id, const httplib::Params& query) {
    std::size_t n = 10;
    if (const auto it = query.find("n"); it != query.end()) {
      try {
        std::size_t used = 0;
        const long v = std::stol(it->second, &used);
        if (used != it->second.size() || v < 0) throw std::invalid_argument(it->second);
        n = static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        throw Error(ErrorKind::input, "n must be a non-negative integer");
      }
    }
    return json_response(200, offsets_payload(ds, resolve_pilot(id), n));
  }

  HttpResponse post_predict(const nlohmann::json& body) {
    const auto pilot = resolve_pilot(body.at("pilot"));
    return json_response(200, predict_payload(ds, model, pilot, body.value("design", nlohmann::json::object())));
  }

  HttpResponse post_optimize(const nlohmann::json& body) {
    if (!body.is_object()) throw Error(ErrorKind::input, "request must be an object");
    resolve_pilot(body.at("pilot"));
    const auto mode = body.value("mode", std::string("recommend"));
    if (mode != "recommend" && mode != "retrospective")
      throw Error(ErrorKind::input, "mode must be recommend or retrospective");
    for (const auto& m : body.value("methods", nlohmann::json::array())) {
      if (!m.is_string() || !parse_method(m.get<std::string>()))
        throw Error(ErrorKind::input, "unknown method " + m.dump());
    }
    if (body.value("budget", config.default_budget) < 10) throw Error(ErrorKind::input, "budget must be >= 10");

    JobRecord r;
    r.job_id = store.next_id();
    r.kind = JobKind::optimize;
    r.status = JobStatus::queued;
    r.submitted = iso_now();
    r.request = body;
    {
      std::lock_guard lock(queue_mutex);
      store.put(r);
      cancel_flags[r.job_id] = std::make_shared<std::atomic<bool>>(false);
      queue.push_back(r.job_id);
    }
    queue_cv.notify_one();
    log_event({{"event", "job_queued"}, {"job_id", r.job_id}});
    return json_response(202, {{"job_id", r.job_id}, {"status", "queued"}});
  }

  HttpResponse get_job(const std::string& id) {
    const auto r = store.get(id);
    if (!r) return json_response(404, error_body("unknown job '" + id + "'", "input"));
    return json_response(200, r->to_json());
  }

  HttpResponse list_jobs() {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : store.all())
      arr.push_back({{"job_id", r.job_id}, {"kind", to_string(r.kind)}, {"status", to_string(r.status)}});
    return json_response(200, arr);
  }

  HttpResponse cancel_job(const std::string& id) {
    std::unique_lock lock(queue_mutex);
    auto r = store.get(id);
    if (!r) return json_response(404, error_body("unknown job '" + id + "'", "input"));
    if (is_terminal(r->status))
      return json_response(409, error_body("job " + id + " already " + std::string(to_string(r->status)), "cancelled"));
    if (const auto it = cancel_flags.find(id); it != cancel_flags.end()) it->second->store(true);
    if (r->status == JobStatus::queued) {
      queue.erase(std::remove(queue.begin(), queue.end(), id), queue.end());
      cancel_flags.erase(id);
      r->status = JobStatus::failed;
      r->error = "cancelled error: cancelled before start";
      r->finished = iso_now();
      store.put(*r);
      lock.unlock();
      idle_cv.notify_all();
    }
    log_event({{"event", "job_cancel"}, {"job_id", id}});
    return json_response(202, {{"job_id", id}, {"status", "cancelling"}});
  }

  nlohmann::json run_job(const nlohmann::json& request, const std::atomic<bool>* cancel) {
    const auto pilot = resolve_pilot(request.at("pilot"));
    RecommendConfig cfg;
    cfg.budget = request.value("budget", config.default_budget);
    cfg.seed = request.value("seed", std::uint64_t{0});
    cfg.cancel = cancel;
    if (request.contains("methods")) {
      cfg.methods.clear();
      for (const auto& m : request["methods"]) cfg.methods.push_back(*parse_method(m.get<std::string>()));
    }
    const auto response = model_response(model, ds.environment_names());
    if (request.value("mode", std::string("recommend")) == "retrospective") {
      if (!cfg.methods.empty() && request.contains("methods")) cfg.retro_method = cfg.methods.front();
      return retrospective(ds, response, pilot, cfg).to_json();
    }
    const auto rec = recommend(ds, response, pilot, cfg);
    auto j = rec.to_json();
    j["comparison_csv"] = rec.comparison_csv();
    j["percent_csv"] = rec.percent_csv();
    return j;
  }

  void worker_loop() {
    for (;;) {
      std::string id;
      std::shared_ptr<std::atomic<bool>> flag;
      {
        std::unique_lock lock(queue_mutex);
        queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        flag = cancel_flags[id];
        ++running;
        auto r = *store.get(id);
        r.status = JobStatus::running;
        store.put(r);
      }
      log_event({{"event", "job_started"}, {"job_id", id}});
      auto r = *store.get(id);
      try {
        r.result = run_job(r.request, flag.get());
        r.status = JobStatus::done;
      } catch (const Error& e) {
        r.status = JobStatus::failed;
        r.error = e.what();
      } catch (const std::exception& e) {
        r.status = JobStatus::failed;
        r.error = e.what();
      }
      r.finished = iso_now();
      {
        std::lock_guard lock(queue_mutex);
        store.put(r);
        cancel_flags.erase(id);
        --running;
      }
      idle_cv.notify_all();
      log_event({{"event", "job_finished"}, {"job_id", id}, {"status", to_string(r.status)}});
    }
  }

  HttpResponse route(std::string_view method, std::string_view target, std::string_view body) {
    std::string path(target);
    httplib::Params query;
    if (const auto q = path.find('?'); q != std::string::npos) {
      httplib::detail::parse_query_text(path.substr(q + 1), query);
      path.erase(q);
    }
    std::vector<std::string> parts;
    {
      std::stringstream ss(path);
      std::string part;
      while (std::getline(ss, part, '/'))
        if (!part.empty()) parts.push_back(httplib::detail::decode_url(part, false));
    }
    auto parse_body = [&] { return nlohmann::json::parse(body); };
    auto method_not_allowed = [] { return json_response(405, error_body("method not allowed", "input")); };

    if (parts.size() == 1 && parts[0] == "health") return method == "GET" ? health() : method_not_allowed();
    if (parts.size() == 1 && parts[0] == "pilots") return method == "POST" ? post_pilot(parse_body()) : method_not_allowed();
    if (parts.size() == 3 && parts[0] == "pilots" && parts[2] == "offsets")
      return method == "GET" ? get_offsets(parts[1], query) : method_not_allowed();
    if (parts.size() == 1 && parts[0] == "predict") return method == "POST" ? post_predict(parse_body()) : method_not_allowed();
    if (parts.size() == 1 && parts[0] == "optimize")
      return method == "POST" ? post_optimize(parse_body()) : method_not_allowed();
    if (parts.size() == 1 && parts[0] == "jobs") return method == "GET" ? list_jobs() : method_not_allowed();
    if (parts.size() == 2 && parts[0] == "jobs") {
      if (method == "GET") return get_job(parts[1]);
      if (method == "DELETE") return cancel_job(parts[1]);
      return method_not_allowed();
    }
    return json_response(404, error_body("no route for " + std::string(method) + " " + path, "input"));
  }
};

Service::Service(Dataset dataset, StackedModel model, ServiceConfig config, std::ostream* log) {
  config.validate();
  impl_ = std::make_unique<Impl>(std::move(dataset), std::move(model), std::move(config), log);
  for (int i = 0; i < impl_->config.worker_slots; ++i) impl_->workers.emplace_back([this] { impl_->worker_loop(); });

  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.target, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
  impl_->server.Delete(".*", handler);
  impl_->server.Put(".*", handler);
  impl_->server.Patch(".*", handler);
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(impl_->queue_mutex);
    impl_->stopping = true;
  }
  impl_->queue_cv.notify_all();
  for (auto& [id, flag] : impl_->cancel_flags) flag->store(true);
  for (auto& t : impl_->workers) t.join();
}

std::unique_ptr<Service> Service::from_config(const ServiceConfig& config, std::ostream* log) {
  config.validate();
  if (config.dataset_path.empty()) throw Error(ErrorKind::config, "dataset path is not set");
  if (config.model_path.empty()) throw Error(ErrorKind::config, "model path is not set");
  if (!std::filesystem::exists(config.dataset_path))
    throw Error(ErrorKind::config, "dataset not found: " + config.dataset_path.string());
  if (!std::filesystem::exists(config.model_path))
    throw Error(ErrorKind::config, "model not found: " + config.model_path.string());
  return std::make_unique<Service>(ingest_csv(config.dataset_path), StackedModel::load(config.model_path), config,
                                   log);
}

HttpResponse Service::handle(std::string_view method, std::string_view target, std::string_view body) {
  const auto t0 = std::chrono::steady_clock::now();
  HttpResponse r;
  try {
    r = impl_->route(method, target, body);
  } catch (const nlohmann::json::parse_error& e) {
    r = json_response(400, {{"error", "malformed JSON body"}, {"kind", "input"}, {"position", e.byte},
                            {"detail", e.what()}});
  } catch (const Error& e) {
    r = json_response(http_status(e.kind()), error_body(e.what(), to_string(e.kind())));
  } catch (const nlohmann::json::exception& e) {
    r = json_response(422, error_body(e.what(), "input"));
  } catch (const std::exception& e) {
    r = json_response(500, error_body(e.what(), "internal"));
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  impl_->log_event({{"event", "request"},
                    {"method", std::string(method)},
                    {"target", std::string(target)},
                    {"status", r.status},
                    {"duration_ms", ms}});
  return r;
}

int Service::start() {
  const auto& c = impl_->config;
  const int port = c.port == 0 ? impl_->server.bind_to_any_port(c.host)
                               : (impl_->server.bind_to_port(c.host, c.port) ? c.port : -1);
  if (port < 0) throw Error(ErrorKind::config, "cannot bind " + c.host + ":" + std::to_string(c.port));
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  impl_->log_event({{"event", "listening"}, {"host", impl_->config.host}, {"port", port}});
  return port;
}

void Service::run() {
  const auto& c = impl_->config;
  const int port = c.port == 0 ? impl_->server.bind_to_any_port(c.host)
                               : (impl_->server.bind_to_port(c.host, c.port) ? c.port : -1);
  if (port < 0) throw Error(ErrorKind::config, "cannot bind " + c.host + ":" + std::to_string(c.port));
  impl_->log_event({{"event", "listening"}, {"host", c.host}, {"port", port}});
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->server_thread.joinable() && impl_->server_thread.get_id() != std::this_thread::get_id())
    impl_->server_thread.join();
}

void Service::wait_idle() {
  std::unique_lock lock(impl_->queue_mutex);
  impl_->idle_cv.wait(lock, [&] { return impl_->queue.empty() && impl_->running == 0; });
}

}  // namespace fracopt
