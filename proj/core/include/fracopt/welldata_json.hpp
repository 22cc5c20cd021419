#pragma once

#include <nlohmann/json.hpp>

#include "fracopt/welldata.hpp"

namespace fracopt {

/// JSON form of a record; the environment becomes an object keyed by the
/// names in `environment_names`, with null for missing cells.
nlohmann::json record_to_json(const WellRecord& w, const std::vector<std::string>& environment_names);

/// Parses a record against the schema of `ds`. Unknown environment names
/// are a schema error; absent ones are missing. Labels go through the
/// default alias table.
WellRecord record_from_json(const nlohmann::json& j, const Dataset& ds);

}  // namespace fracopt
