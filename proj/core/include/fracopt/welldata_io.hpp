#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fracopt/welldata.hpp"

namespace fracopt {

/// Canonical label spellings keyed by their trimmed, case-folded variants.
/// Applied to field/layer/face ids, well type and treatment type.
class AliasTable {
 public:
  AliasTable() = default;
  explicit AliasTable(std::map<std::string, std::string> aliases);

  /// The built-in aliases for well and treatment types ("horiz", "refrac", ...).
  static AliasTable defaults();

  void add(const std::string& variant, const std::string& canonical);
  /// trim + ASCII casefold, then alias lookup.
  std::string unify(std::string_view label) const;

  const std::map<std::string, std::string>& entries() const { return aliases_; }

 private:
  std::map<std::string, std::string> aliases_;
};

std::string trim_casefold(std::string_view s);

/// Maps canonical column names to the headers used in a particular file.
/// Columns not listed keep their canonical name; every header that is not a
/// known column becomes an environment feature unless `environment` is set.
struct ColumnMapping {
  std::map<std::string, std::string> rename;
  std::optional<std::vector<std::string>> environment;
  AliasTable aliases = AliasTable::defaults();
};

/// Canonical header order written by write_csv.
const std::vector<std::string>& canonical_columns();

Dataset ingest_csv(const std::filesystem::path& path, const ColumnMapping& mapping = {});
Dataset ingest_csv(std::istream& in, const ColumnMapping& mapping = {});

/// Shortest round-trip formatting, so ingest(write(ds)) reproduces ds.
void write_csv(const Dataset& ds, std::ostream& out);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

std::string format_double(double v);

/// Splits one CSV line honouring double quotes.
std::vector<std::string> split_csv_line(std::string_view line);
std::string quote_csv(std::string_view field);

}  // namespace fracopt
