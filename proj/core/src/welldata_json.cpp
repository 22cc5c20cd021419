#include "fracopt/welldata_json.hpp"

#include <algorithm>
#include <cmath>

#include "fracopt/error.hpp"
#include "fracopt/welldata_io.hpp"

namespace fracopt {

namespace {

std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw Error(ErrorKind::input, std::string("'") + key + "' must be a number");
  return it->get<double>();
}

}  // namespace

nlohmann::json record_to_json(const WellRecord& w, const std::vector<std::string>& environment_names) {
  nlohmann::json env = nlohmann::json::object();
  for (std::size_t i = 0; i < environment_names.size(); ++i) {
    const bool present = i < w.environment.size() && w.environment[i];
    env[environment_names[i]] = present ? nlohmann::json(*w.environment[i]) : nlohmann::json(nullptr);
  }
  nlohmann::json design = {{"n_stages", w.design.n_stages}};
  const auto values = w.design.values();
  for (std::size_t i = 1; i < kDesignDim; ++i) {
    design[std::string(kDesignNames[i])] = values[i] ? nlohmann::json(*values[i]) : nlohmann::json(nullptr);
  }
  design["start_prop_conc"] =
      w.design.start_prop_conc ? nlohmann::json(*w.design.start_prop_conc) : nlohmann::json(nullptr);
  nlohmann::json production = nlohmann::json::array();
  for (const auto& c : w.production.checkpoints()) production.push_back({c.days, c.cumulative_fluid});
  nlohmann::json j = {{"well_id", w.well_id},
                      {"field_id", w.field_id},
                      {"layer_id", w.layer_id},
                      {"face_id", w.face_id},
                      {"well_type", to_string(w.well_type)},
                      {"treatment_type", to_string(w.treatment_type)},
                      {"design", design},
                      {"environment", env},
                      {"production", production}};
  if (w.coordinates) j["coordinates"] = {{"x", w.coordinates->x}, {"y", w.coordinates->y}};
  return j;
}

WellRecord record_from_json(const nlohmann::json& j, const Dataset& ds) {
  if (!j.is_object()) throw Error(ErrorKind::input, "well record must be a JSON object");
  const auto aliases = AliasTable::defaults();
  WellRecord w;
  auto text = [&](const char* key) -> std::string {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_string()) throw Error(ErrorKind::input, std::string("'") + key + "' must be a string");
    return it->get<std::string>();
  };
  w.well_id = text("well_id");
  if (w.well_id.empty()) throw Error(ErrorKind::input, "well_id is required");
  w.field_id = aliases.unify(text("field_id"));
  w.layer_id = aliases.unify(text("layer_id"));
  w.face_id = aliases.unify(text("face_id"));
  if (const auto t = text("well_type"); !t.empty()) {
    const auto parsed = parse_well_type(aliases.unify(t));
    if (!parsed) throw Error(ErrorKind::input, "unknown well_type '" + t + "'");
    w.well_type = *parsed;
  }
  if (const auto t = text("treatment_type"); !t.empty()) {
    const auto parsed = parse_treatment_type(aliases.unify(t));
    if (!parsed) throw Error(ErrorKind::input, "unknown treatment_type '" + t + "'");
    w.treatment_type = *parsed;
  }

  const auto design = j.value("design", nlohmann::json::object());
  if (!design.is_object()) throw Error(ErrorKind::input, "design must be an object");
  for (const auto& [key, value] : design.items()) {
    if (key == "start_prop_conc") continue;
    if (std::find(kDesignNames.begin(), kDesignNames.end(), key) == kDesignNames.end())
      throw Error(ErrorKind::schema, "unknown design parameter '" + key + "'");
  }
  if (const auto n = optional_number(design, "n_stages")) {
    if (*n < 1 || *n != std::floor(*n)) throw Error(ErrorKind::input, "n_stages must be a positive integer");
    w.design.n_stages = static_cast<int>(*n);
  }
  w.design.pad_share = optional_number(design, "pad_share");
  w.design.fluid_volume = optional_number(design, "fluid_volume");
  w.design.proppant_mass = optional_number(design, "proppant_mass");
  w.design.fluid_rate = optional_number(design, "fluid_rate");
  w.design.final_prop_conc = optional_number(design, "final_prop_conc");
  w.design.start_prop_conc = optional_number(design, "start_prop_conc");

  w.environment.assign(ds.environment.size(), std::nullopt);
  const auto env = j.value("environment", nlohmann::json::object());
  if (!env.is_object()) throw Error(ErrorKind::input, "environment must be an object");
  for (const auto& [key, value] : env.items()) {
    const std::size_t idx = ds.environment_index(key);
    if (value.is_null()) continue;
    if (!value.is_number()) throw Error(ErrorKind::input, "environment '" + key + "' must be a number");
    w.environment[idx] = value.get<double>();
  }

  if (const auto it = j.find("coordinates"); it != j.end() && !it->is_null()) {
    w.coordinates = Coordinates{it->at("x").get<double>(), it->at("y").get<double>()};
  }
  if (const auto it = j.find("production"); it != j.end() && !it->is_null()) {
    std::vector<Checkpoint> cps;
    for (const auto& p : *it) cps.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    w.production = ProductionSeries(std::move(cps));
  }
  return w;
}

}  // namespace fracopt
