#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ift/baselines.h"
#include "ift/simulation.h"
#include "ift/tree_growth.h"
#include "ift/types.h"

namespace ift {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // source line of each row
  std::string source;

  std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text, const std::string& source = "<input>");
CsvTable read_csv(const std::string& path);

struct DatasetFiles {
  std::string responses;
  std::string covariates;
  std::string schema;
};

struct Dataset {
  ResponseMatrix responses;
  CovariateSet covariates;
  std::vector<std::string> item_names;
  std::vector<std::string> person_ids;
};

/// Schema document:
///   {"id_column": "id", "covariates": [{"name": "age", "kind": "metric"},
///                                      {"name": "field", "kind": "nominal", "levels": ["a", "b"]}]}
/// Rows of the two CSV files are matched through the id column.
Dataset load_dataset(const DatasetFiles& files);
Dataset parse_dataset(const std::string& responses_csv, const std::string& covariates_csv,
                      const std::string& schema_json);

/// Responses plus one raw covariate column, aligned by person id.
struct GroupedResponses {
  ResponseMatrix responses;
  std::vector<std::string> item_names;
  std::vector<std::string> labels;
};
GroupedResponses load_grouped_responses(const std::string& responses_path, const std::string& covariates_path,
                                        const std::string& group_column, const std::string& id_column = "id");

struct VariableInfo {
  std::string name;
  CovariateKind kind = CovariateKind::Metric;
  int levels = 0;
  bool operator==(const VariableInfo&) const = default;
};

std::vector<VariableInfo> describe_variables(const CovariateSet& covariates);

constexpr int kForestFormatVersion = 1;

struct ForestDocument {
  ModelFit fit;
  std::vector<SplitRecord> splits;
  std::optional<SplitRecord> final_test;
  std::string stop_reason;
  GrowthConfig config;
  std::vector<std::string> item_names;
  std::vector<VariableInfo> variables;

  bool operator==(const ForestDocument&) const = default;
};

/// The extreme-person mask is stored as an index list and always imported at full length.
std::string export_forest_json(const ForestDocument& doc);
ForestDocument import_forest_json(const std::string& text);

/// Graphviz rendering of one item tree; leaves show difficulties to 3 decimals.
std::string export_dot(const ItemTree& tree, const std::vector<std::string>& variable_names = {},
                       const std::string& title = {});

std::string format_condition(const Condition& c, const std::vector<std::string>& variable_names);

void write_study_csv(const StudyResult& study, std::ostream& out);
void write_detection_csv(const std::vector<DetectionResult>& results, const std::vector<std::string>& item_names,
                         std::ostream& out);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace ift
