#include "fracopt/feature_table.hpp"

#include <algorithm>
#include <set>

#include "fracopt/error.hpp"
#include "fracopt/stats.hpp"

namespace fracopt {

namespace {

const std::vector<std::string>& categorical_fields() {
  static const std::vector<std::string> fields = {"field_id", "layer_id", "face_id", "well_type"};
  return fields;
}

std::string categorical_value(const WellRecord& w, const std::string& field) {
  if (field == "field_id") return w.field_id;
  if (field == "layer_id") return w.layer_id;
  if (field == "face_id") return w.face_id;
  if (field == "well_type") return std::string(to_string(w.well_type));
  throw Error(ErrorKind::schema, "unknown categorical field '" + field + "'");
}

std::string_view source_name(FeatureEncoder::Source s) {
  switch (s) {
    case FeatureEncoder::Source::environment: return "environment";
    case FeatureEncoder::Source::design: return "design";
    case FeatureEncoder::Source::avg_prop_conc: return "avg_prop_conc";
    case FeatureEncoder::Source::one_hot: return "one_hot";
  }
  return "environment";
}

FeatureEncoder::Source parse_source(const std::string& s) {
  if (s == "environment") return FeatureEncoder::Source::environment;
  if (s == "design") return FeatureEncoder::Source::design;
  if (s == "avg_prop_conc") return FeatureEncoder::Source::avg_prop_conc;
  if (s == "one_hot") return FeatureEncoder::Source::one_hot;
  throw Error(ErrorKind::schema, "unknown feature source '" + s + "'");
}

}  // namespace

std::size_t FeatureTable::column(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorKind::schema, "unknown feature '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

FeatureTable FeatureTable::select_rows(const std::vector<Eigen::Index>& rows) const {
  FeatureTable out;
  out.names = names;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    out.X.row(static_cast<Eigen::Index>(i)) = X.row(r);
    out.y(static_cast<Eigen::Index>(i)) = y(r);
    if (!ids.empty()) out.ids.push_back(ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

FeatureTable FeatureTable::select_columns(const std::vector<std::string>& keep) const {
  FeatureTable out;
  out.names = keep;
  out.X.resize(X.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.X.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(column(keep[j])));
  }
  out.y = y;
  out.ids = ids;
  return out;
}

FeatureEncoder::FeatureEncoder(std::vector<Column> columns) : columns_(std::move(columns)) {}

FeatureEncoder FeatureEncoder::from_dataset(const Dataset& ds) {
  std::vector<Column> cols;
  for (const auto& f : ds.environment) cols.push_back({Source::environment, f.name, f.name, {}});
  for (auto n : kDesignNames) cols.push_back({Source::design, std::string(n), std::string(n), {}});
  cols.push_back({Source::avg_prop_conc, "avg_prop_conc", "avg_prop_conc", {}});
  for (const auto& field : categorical_fields()) {
    std::set<std::string> levels;
    for (const auto& w : ds.rows) levels.insert(categorical_value(w, field));
    for (const auto& level : levels) {
      cols.push_back({Source::one_hot, "cat." + field + "=" + level, field, level});
    }
  }
  return FeatureEncoder(std::move(cols));
}

std::vector<std::string> FeatureEncoder::names() const {
  std::vector<std::string> out;
  out.reserve(columns_.size());
  for (const auto& c : columns_) out.push_back(c.name);
  return out;
}

std::vector<double> FeatureEncoder::encode(const WellRecord& well,
                                           const std::vector<std::string>& environment_names) const {
  std::vector<double> out;
  out.reserve(columns_.size());
  const auto design = well.design.values();
  for (const auto& c : columns_) {
    switch (c.source) {
      case Source::environment: {
        const auto it = std::find(environment_names.begin(), environment_names.end(), c.key);
        if (it == environment_names.end()) {
          throw Error(ErrorKind::schema, "environment feature '" + c.key + "' absent from record schema");
        }
        const auto idx = static_cast<std::size_t>(it - environment_names.begin());
        out.push_back(idx < well.environment.size() && well.environment[idx] ? *well.environment[idx]
                                                                             : kMissing);
        break;
      }
      case Source::design: {
        const auto it = std::find(kDesignNames.begin(), kDesignNames.end(), c.key);
        if (it == kDesignNames.end()) throw Error(ErrorKind::schema, "unknown design variable '" + c.key + "'");
        out.push_back(design[static_cast<std::size_t>(it - kDesignNames.begin())].value_or(kMissing));
        break;
      }
      case Source::avg_prop_conc: out.push_back(well.design.avg_prop_conc().value_or(kMissing)); break;
      case Source::one_hot: out.push_back(categorical_value(well, c.key) == c.level ? 1.0 : 0.0); break;
    }
  }
  return out;
}

FeatureEncoder FeatureEncoder::select(const std::vector<std::string>& keep) const {
  std::vector<Column> cols;
  for (const auto& name : keep) {
    const auto it = std::find_if(columns_.begin(), columns_.end(),
                                 [&](const Column& c) { return c.name == name; });
    if (it == columns_.end()) throw Error(ErrorKind::schema, "unknown feature '" + name + "'");
    cols.push_back(*it);
  }
  return FeatureEncoder(std::move(cols));
}

nlohmann::json FeatureEncoder::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& c : columns_) {
    nlohmann::json j = {{"name", c.name}, {"source", source_name(c.source)}, {"key", c.key}};
    if (c.source == Source::one_hot) j["level"] = c.level;
    arr.push_back(std::move(j));
  }
  return arr;
}

FeatureEncoder FeatureEncoder::from_json(const nlohmann::json& j) {
  std::vector<Column> cols;
  for (const auto& c : j) {
    cols.push_back({parse_source(c.at("source").get<std::string>()), c.at("name").get<std::string>(),
                    c.at("key").get<std::string>(), c.value("level", std::string())});
  }
  return FeatureEncoder(std::move(cols));
}

FeatureTable build_feature_table(const Dataset& ds, const FeatureEncoder& encoder) {
  const auto env_names = ds.environment_names();
  std::vector<std::vector<double>> rows;
  std::vector<double> targets;
  FeatureTable out;
  out.names = encoder.names();
  for (const auto& w : ds.rows) {
    if (w.production.empty()) continue;
    const auto t = target_90d(w.production);
    if (!t) continue;
    rows.push_back(encoder.encode(w, env_names));
    targets.push_back(*t);
    out.ids.push_back(w.well_id);
  }
  out.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(out.names.size()));
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      out.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    out.y(static_cast<Eigen::Index>(i)) = targets[i];
  }
  return out;
}

std::vector<double> impute_column_means(FeatureTable& table) {
  std::vector<double> means(static_cast<std::size_t>(table.cols()), 0.0);
  for (Eigen::Index j = 0; j < table.cols(); ++j) {
    double sum = 0.0;
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < table.rows(); ++i) {
      if (!is_missing(table.X(i, j))) {
        sum += table.X(i, j);
        ++n;
      }
    }
    const double m = n ? sum / static_cast<double>(n) : 0.0;
    means[static_cast<std::size_t>(j)] = m;
    for (Eigen::Index i = 0; i < table.rows(); ++i) {
      if (is_missing(table.X(i, j))) table.X(i, j) = m;
    }
  }
  return means;
}

}  // namespace fracopt
