#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fracopt/welldata.hpp"

namespace fracopt {

/// Dense modelling matrix. Missing cells are NaN until imputed.
struct FeatureTable {
  std::vector<std::string> names;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> ids;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }
  std::size_t column(const std::string& name) const;
  FeatureTable select_rows(const std::vector<Eigen::Index>& rows) const;
  FeatureTable select_columns(const std::vector<std::string>& keep) const;
};

/// Turns a WellRecord into a numeric feature vector: environment features,
/// the six design parameters, the derived average proppant concentration,
/// and one-hot columns named "cat.<field>=<level>" for the categorical ids.
class FeatureEncoder {
 public:
  enum class Source { environment, design, avg_prop_conc, one_hot };

  struct Column {
    Source source = Source::environment;
    std::string name;
    std::string key;    // environment feature, design variable or categorical field
    std::string level;  // one-hot level
  };

  FeatureEncoder() = default;
  explicit FeatureEncoder(std::vector<Column> columns);

  static FeatureEncoder from_dataset(const Dataset& ds);

  const std::vector<Column>& columns() const { return columns_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return columns_.size(); }

  /// `environment_names` is the schema the record's environment vector follows.
  std::vector<double> encode(const WellRecord& well, const std::vector<std::string>& environment_names) const;
  FeatureEncoder select(const std::vector<std::string>& keep) const;

  nlohmann::json to_json() const;
  static FeatureEncoder from_json(const nlohmann::json& j);

 private:
  std::vector<Column> columns_;
};

/// Rows with a valid 90-day target, encoded; `y` holds the targets.
FeatureTable build_feature_table(const Dataset& ds, const FeatureEncoder& encoder);

/// Replaces NaN cells with column means of the observed values and returns
/// the means used (0 for an all-missing column).
std::vector<double> impute_column_means(FeatureTable& table);

}  // namespace fracopt
