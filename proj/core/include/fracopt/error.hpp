#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fracopt {

/// Failure category carried by every exception the library throws. The CLI
/// maps categories to exit codes and the service maps them to HTTP statuses.
enum class ErrorKind {
  schema,
  ingestion,
  precondition,
  config,
  numerical,
  training,
  pipeline,
  input,
  insufficient_data,
  insufficient_analogues,
  embedding,
  fit,
  infeasible,
  io,
  cancelled,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::schema: return "schema";
    case ErrorKind::ingestion: return "ingestion";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::config: return "config";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::training: return "training";
    case ErrorKind::pipeline: return "pipeline";
    case ErrorKind::input: return "input";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::insufficient_analogues: return "insufficient_analogues";
    case ErrorKind::embedding: return "embedding";
    case ErrorKind::fit: return "fit";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::io: return "io";
    case ErrorKind::cancelled: return "cancelled";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace fracopt
