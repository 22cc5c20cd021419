#include "fracopt/welldata_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "fracopt/error.hpp"

namespace fracopt {

namespace {

constexpr std::string_view kProduction = "production";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// "name[unit]" -> (name, unit)
std::pair<std::string, std::string> split_unit(std::string_view header) {
  header = trim(header);
  const auto open = header.find('[');
  if (open != std::string_view::npos && header.back() == ']') {
    return {std::string(trim(header.substr(0, open))),
            std::string(header.substr(open + 1, header.size() - open - 2))};
  }
  return {std::string(header), {}};
}

ProductionSeries parse_production(std::string_view cell, std::size_t line_no) {
  std::vector<Checkpoint> cps;
  cell = trim(cell);
  if (cell.empty() || trim_casefold(cell) == "n/a") return {};
  std::size_t start = 0;
  while (start <= cell.size()) {
    auto end = cell.find(';', start);
    if (end == std::string_view::npos) end = cell.size();
    const auto item = trim(cell.substr(start, end - start));
    if (!item.empty()) {
      const auto colon = item.find(':');
      const auto d = colon == std::string_view::npos ? std::nullopt : parse_number(item.substr(0, colon));
      const auto q = colon == std::string_view::npos ? std::nullopt : parse_number(item.substr(colon + 1));
      if (!d || !q) {
        throw Error(ErrorKind::ingestion,
                    "line " + std::to_string(line_no) + ": malformed production checkpoint '" +
                        std::string(item) + "'");
      }
      cps.push_back({*d, *q});
    }
    start = end + 1;
  }
  try {
    return ProductionSeries(std::move(cps));
  } catch (const Error& e) {
    throw Error(ErrorKind::ingestion, "line " + std::to_string(line_no) + ": " + e.what());
  }
}

}  // namespace

std::string trim_casefold(std::string_view s) {
  s = trim(s);
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

AliasTable::AliasTable(std::map<std::string, std::string> aliases) {
  for (const auto& [k, v] : aliases) add(k, v);
}

AliasTable AliasTable::defaults() {
  return AliasTable({{"vert", "vertical"},
                     {"v", "vertical"},
                     {"horiz", "horizontal"},
                     {"hor", "horizontal"},
                     {"h", "horizontal"},
                     {"multilateral", "vertical_multilateral"},
                     {"vertical multilateral", "vertical_multilateral"},
                     {"vertical-multilateral", "vertical_multilateral"},
                     {"refrac", "refracture"},
                     {"re-frac", "refracture"},
                     {"repeated", "refracture"},
                     {"new", "primary"}});
}

void AliasTable::add(const std::string& variant, const std::string& canonical) {
  aliases_[trim_casefold(variant)] = trim_casefold(canonical);
}

std::string AliasTable::unify(std::string_view label) const {
  auto key = trim_casefold(label);
  const auto it = aliases_.find(key);
  return it == aliases_.end() ? key : it->second;
}

const std::vector<std::string>& canonical_columns() {
  static const std::vector<std::string> cols = {
      "well_id",       "field_id",        "layer_id",   "face_id",         "well_type",
      "treatment_type", "n_stages",       "pad_share",  "fluid_volume",    "proppant_mass",
      "fluid_rate",    "final_prop_conc", "start_prop_conc", "x",          "y",
      std::string(kProduction)};
  return cols;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string quote_csv(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Dataset ingest_csv(std::istream& in, const ColumnMapping& mapping) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::schema, "empty CSV (no header row)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  std::map<std::string, std::size_t> col;  // canonical/env name -> column index
  std::vector<std::pair<std::string, std::string>> header_names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    auto [name, unit] = split_unit(header[i]);
    header_names.emplace_back(name, unit);
  }
  std::map<std::string, std::string> header_to_canonical;
  for (const auto& [canon, hdr] : mapping.rename) header_to_canonical[hdr] = canon;

  const auto& canon = canonical_columns();
  const std::set<std::string> canon_set(canon.begin(), canon.end());
  Dataset ds;
  std::vector<std::size_t> env_cols;
  for (std::size_t i = 0; i < header_names.size(); ++i) {
    const auto& [name, unit] = header_names[i];
    const auto renamed = header_to_canonical.count(name) ? header_to_canonical.at(name) : name;
    if (canon_set.count(renamed)) {
      col[renamed] = i;
      continue;
    }
    const bool is_env = mapping.environment
                            ? std::find(mapping.environment->begin(), mapping.environment->end(),
                                        name) != mapping.environment->end()
                            : true;
    if (is_env) {
      ds.environment.push_back({name, unit});
      env_cols.push_back(i);
    }
  }
  if (!col.count("well_id")) throw Error(ErrorKind::schema, "mandatory column 'well_id' missing");
  if (mapping.environment) {
    for (const auto& e : *mapping.environment) {
      if (std::none_of(ds.environment.begin(), ds.environment.end(),
                       [&](const FeatureSpec& f) { return f.name == e; })) {
        throw Error(ErrorKind::schema, "mapped environment column '" + e + "' missing from header");
      }
    }
  }
  for (const auto& [canon_name, hdr] : mapping.rename) {
    if (!col.count(canon_name)) {
      throw Error(ErrorKind::schema, "mapped column '" + hdr + "' missing from header");
    }
  }

  std::size_t line_no = 1;
  std::map<std::string, int> seen;
  std::vector<std::string> duplicates;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    auto cell = [&](const std::string& name) -> std::string_view {
      const auto it = col.find(name);
      if (it == col.end() || it->second >= cells.size()) return {};
      return cells[it->second];
    };
    auto num = [&](const std::string& name) {
      const auto c = cell(name);
      return trim_casefold(c) == "n/a" ? std::nullopt : parse_number(c);
    };

    WellRecord w;
    w.well_id = std::string(trim(cell("well_id")));
    if (w.well_id.empty()) {
      throw Error(ErrorKind::ingestion, "line " + std::to_string(line_no) + ": empty well_id");
    }
    if (seen[w.well_id]++ == 1) duplicates.push_back(w.well_id);
    w.field_id = mapping.aliases.unify(cell("field_id"));
    w.layer_id = mapping.aliases.unify(cell("layer_id"));
    w.face_id = mapping.aliases.unify(cell("face_id"));
    if (const auto wt = cell("well_type"); !trim(wt).empty()) {
      const auto parsed = parse_well_type(mapping.aliases.unify(wt));
      if (!parsed) {
        throw Error(ErrorKind::ingestion, "line " + std::to_string(line_no) + ": unknown well_type '" +
                                              std::string(wt) + "'");
      }
      w.well_type = *parsed;
    }
    if (const auto tt = cell("treatment_type"); !trim(tt).empty()) {
      const auto parsed = parse_treatment_type(mapping.aliases.unify(tt));
      if (!parsed) {
        throw Error(ErrorKind::ingestion, "line " + std::to_string(line_no) +
                                              ": unknown treatment_type '" + std::string(tt) + "'");
      }
      w.treatment_type = *parsed;
    }
    const auto stages = num("n_stages");
    if (!stages || *stages < 1.0 || *stages != std::floor(*stages)) {
      throw Error(ErrorKind::ingestion,
                  "line " + std::to_string(line_no) + ": n_stages must be an integer >= 1");
    }
    w.design.n_stages = static_cast<int>(*stages);
    w.design.pad_share = num("pad_share");
    w.design.fluid_volume = num("fluid_volume");
    w.design.proppant_mass = num("proppant_mass");
    w.design.fluid_rate = num("fluid_rate");
    w.design.final_prop_conc = num("final_prop_conc");
    w.design.start_prop_conc = num("start_prop_conc");
    const auto x = num("x");
    const auto y = num("y");
    if (x && y) w.coordinates = Coordinates{*x, *y};
    for (const auto c : env_cols) {
      if (c >= cells.size() || trim_casefold(cells[c]) == "n/a") {
        w.environment.emplace_back(std::nullopt);
      } else {
        w.environment.push_back(parse_number(cells[c]));
      }
    }
    w.production = parse_production(cell(std::string(kProduction)), line_no);
    ds.rows.push_back(std::move(w));
  }
  if (!duplicates.empty()) {
    std::string list;
    for (const auto& d : duplicates) list += (list.empty() ? "" : ", ") + d;
    throw Error(ErrorKind::ingestion, "duplicate well_id: " + list);
  }
  ds.validate();
  return ds;
}

Dataset ingest_csv(const std::filesystem::path& path, const ColumnMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return ingest_csv(in, mapping);
}

void write_csv(const Dataset& ds, std::ostream& out) {
  const auto& canon = canonical_columns();
  for (std::size_t i = 0; i < canon.size(); ++i) out << (i ? "," : "") << canon[i];
  for (const auto& f : ds.environment) {
    out << ',' << quote_csv(f.unit.empty() ? f.name : f.name + "[" + f.unit + "]");
  }
  out << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& w : ds.rows) {
    out << quote_csv(w.well_id) << ',' << quote_csv(w.field_id) << ',' << quote_csv(w.layer_id) << ','
        << quote_csv(w.face_id) << ',' << to_string(w.well_type) << ',' << to_string(w.treatment_type)
        << ',' << w.design.n_stages << ',' << opt(w.design.pad_share) << ','
        << opt(w.design.fluid_volume) << ',' << opt(w.design.proppant_mass) << ','
        << opt(w.design.fluid_rate) << ',' << opt(w.design.final_prop_conc) << ','
        << opt(w.design.start_prop_conc) << ',';
    if (w.coordinates) {
      out << format_double(w.coordinates->x) << ',' << format_double(w.coordinates->y);
    } else {
      out << ',';
    }
    out << ',';
    const auto& cps = w.production.checkpoints();
    for (std::size_t i = 0; i < cps.size(); ++i) {
      out << (i ? ";" : "") << format_double(cps[i].days) << ':' << format_double(cps[i].cumulative_fluid);
    }
    for (const auto& v : w.environment) out << ',' << opt(v);
    out << '\n';
  }
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  write_csv(ds, out);
}

}  // namespace fracopt
