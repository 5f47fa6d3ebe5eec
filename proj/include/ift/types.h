#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ift {

/// Binary response table, persons in rows, items in columns.
class ResponseMatrix {
 public:
  ResponseMatrix() = default;
  ResponseMatrix(std::size_t persons, std::size_t items);
  ResponseMatrix(std::size_t persons, std::size_t items, std::vector<std::uint8_t> values);

  std::size_t persons() const { return persons_; }
  std::size_t items() const { return items_; }

  std::uint8_t operator()(std::size_t p, std::size_t i) const { return values_[p * items_ + i]; }
  void set(std::size_t p, std::size_t i, std::uint8_t y);

  int score(std::size_t p) const;
  ResponseMatrix subset_persons(const std::vector<std::size_t>& rows) const;

  bool operator==(const ResponseMatrix&) const = default;

 private:
  void validate() const;

  std::size_t persons_ = 0;
  std::size_t items_ = 0;
  std::vector<std::uint8_t> values_;
};

enum class CovariateKind { Binary, Ordinal, Metric, Nominal };

const char* to_string(CovariateKind kind);
CovariateKind covariate_kind_from_string(const std::string& tag);

struct Covariate {
  std::string name;
  CovariateKind kind = CovariateKind::Metric;
  // nominal only: codes are 1..levels
  int levels = 0;
  std::vector<double> values;

  bool ordered() const { return kind != CovariateKind::Nominal; }
  bool operator==(const Covariate&) const = default;
};

/// Typed person covariates; every column has one value per person.
class CovariateSet {
 public:
  CovariateSet() = default;
  CovariateSet(std::size_t persons, std::vector<Covariate> columns);

  std::size_t persons() const { return persons_; }
  std::size_t size() const { return columns_.size(); }
  const Covariate& operator[](std::size_t j) const { return columns_.at(j); }
  const std::vector<Covariate>& columns() const { return columns_; }
  double value(std::size_t p, std::size_t j) const { return columns_[j].values[p]; }

  CovariateSet subset_persons(const std::vector<std::size_t>& rows) const;
  CovariateSet with_column(std::size_t j, std::vector<double> values) const;

 private:
  std::size_t persons_ = 0;
  std::vector<Covariate> columns_;
};

/// One step of a node path. For ordered variables the test is x > threshold;
/// for nominal ones it is x not in `subset`. direction 1 keeps persons for which
/// the test holds, direction 0 the others.
struct Condition {
  std::size_t variable = 0;
  bool nominal = false;
  double threshold = 0.0;
  std::vector<int> subset;
  int direction = 0;

  bool test(double x) const;
  bool holds(double x) const { return test(x) == (direction == 1); }
  bool same_split(const Condition& other) const;
  bool operator==(const Condition&) const = default;
};

struct NodeDescriptor {
  std::vector<Condition> conditions;

  bool contains(const CovariateSet& x, std::size_t person) const;
  bool operator==(const NodeDescriptor&) const = default;
};

struct Leaf {
  NodeDescriptor node;
  double difficulty = 0.0;
  // stable identity of the node, used to key permutation streams
  std::uint64_t key = 1;

  bool operator==(const Leaf&) const = default;
};

struct ItemTree {
  std::size_t item = 0;
  std::vector<Leaf> leaves;

  static ItemTree root(std::size_t item, double difficulty = 0.0);

  bool has_dif() const { return leaves.size() > 1; }
  std::size_t leaf_of(const CovariateSet& x, std::size_t person) const;
  double difficulty(const CovariateSet& x, std::size_t person) const;
  // replaces leaf `index` by its two children; left child keeps `index`
  void split_leaf(std::size_t index, Condition left_condition, double left_difficulty,
                  double right_difficulty);
  bool uses_variable(std::size_t j) const;

  bool operator==(const ItemTree&) const = default;
};

struct ModelFit {
  std::vector<double> abilities;
  // persons whose raw score is 0 or maximal; their ability sits on the boundary
  // of the likelihood and they drop out of it. Empty means none.
  std::vector<bool> extreme;
  std::vector<ItemTree> trees;
  double log_likelihood = 0.0;
  double ridge = 0.0;
  int iterations = 0;

  bool is_extreme(std::size_t p) const { return !extreme.empty() && extreme[p]; }
  std::size_t parameter_count() const;
  bool operator==(const ModelFit&) const = default;
};

struct IterationRecord {
  int iteration = 0;
  double log_likelihood = 0.0;
  double max_gradient = 0.0;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<IterationRecord> trace = {})
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<IterationRecord>& trace() const { return trace_; }

 private:
  std::vector<IterationRecord> trace_;
};

}  // namespace ift
