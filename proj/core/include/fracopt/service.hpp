#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fracopt/error.hpp"
#include "fracopt/stacked_model.hpp"
#include "fracopt/welldata.hpp"

namespace fracopt {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  /// 0 binds an ephemeral port.
  int port = 8080;
  std::filesystem::path model_path;
  std::filesystem::path dataset_path;
  /// Holds the job log.
  std::filesystem::path state_dir = "fracopt-state";
  int worker_slots = 1;
  int default_budget = 200;

  void validate() const;
};

/// `key = value` lines; '#' starts a comment. Unknown keys are a config error.
ServiceConfig parse_service_config(std::istream& in);
ServiceConfig load_service_config(const std::filesystem::path& path);

/// FRACOPT_HOST, FRACOPT_PORT, FRACOPT_MODEL, FRACOPT_DATASET,
/// FRACOPT_STATE_DIR, FRACOPT_WORKERS and FRACOPT_BUDGET override the file.
void apply_env_overrides(ServiceConfig& config,
                         const std::function<const char*(const char*)>& getenv = [](const char* k) {
                           return std::getenv(k);
                         });

enum class JobKind { train, optimize, offsets, embed };
enum class JobStatus { queued, running, done, failed };
std::string_view to_string(JobKind k);
std::string_view to_string(JobStatus s);
bool is_terminal(JobStatus s);

struct JobRecord {
  std::string job_id;
  JobKind kind = JobKind::optimize;
  JobStatus status = JobStatus::queued;
  std::string submitted;
  std::optional<std::string> finished;
  nlohmann::json request;
  std::optional<nlohmann::json> result;
  std::optional<std::string> error;

  nlohmann::json to_json() const;
  static JobRecord from_json(const nlohmann::json& j);
};

/// Append-only JSON-lines log; the latest line per job wins on replay.
/// Jobs that were still queued or running when the log was written are
/// marked failed on load.
class JobStore {
 public:
  explicit JobStore(std::filesystem::path log_path);

  /// Appends the record; status may only move forward.
  void put(const JobRecord& record);
  std::optional<JobRecord> get(const std::string& job_id) const;
  std::vector<JobRecord> all() const;
  /// Next id in the "job-000001" sequence.
  std::string next_id();

 private:
  void append(const JobRecord& record);

  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, JobRecord> index_;
  std::size_t counter_ = 0;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// HTTP status for a library error category.
int http_status(ErrorKind kind);

/// Payloads shared by the service and the CLI.
nlohmann::json pilot_payload(const Dataset& ds, const WellRecord& pilot);
/// n = 0 returns the cluster and its bounds without neighbours or embedding.
nlohmann::json offsets_payload(const Dataset& ds, const WellRecord& pilot, std::size_t n, std::uint64_t seed = 0);
nlohmann::json predict_payload(const Dataset& ds, const StackedModel& model, const WellRecord& pilot,
                               const nlohmann::json& design);

class Service {
 public:
  Service(Dataset dataset, StackedModel model, ServiceConfig config, std::ostream* log = nullptr);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Loads the dataset CSV and model artifact named in the config.
  static std::unique_ptr<Service> from_config(const ServiceConfig& config, std::ostream* log = nullptr);

  /// Routes one request; `target` is the path plus optional query string.
  HttpResponse handle(std::string_view method, std::string_view target, std::string_view body);

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();
  /// Blocks until no job is queued or running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fracopt
