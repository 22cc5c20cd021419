#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

struct ReportInputs {
  std::optional<std::string> metrics_csv;
  std::optional<std::string> comparison_csv;
  std::optional<std::string> percent_csv;
  std::optional<nlohmann::json> manifest;
  std::optional<nlohmann::json> optimize;
  std::optional<nlohmann::json> retro;
  std::optional<nlohmann::json> features;
  std::optional<nlohmann::json> offsets;
  bool has_offsets_svg = false;
};

struct ReportBundle {
  std::string markdown;
  /// Extra files (name, content) written next to the markdown.
  std::vector<std::pair<std::string, std::string>> files;
};

ReportBundle build_report(const ReportInputs& in);

/// Grouped bars: one group per parameter, one bar per method, 0..100 %.
std::string percent_bars_svg(const nlohmann::json& optimize);
/// Best-so-far objective per method against evaluation count.
std::string trace_svg(const nlohmann::json& optimize);
