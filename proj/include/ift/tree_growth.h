#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ift/rasch.h"
#include "ift/types.h"

namespace ift {

struct GrowthConfig {
  double alpha = 0.05;
  int permutations = 1000;
  std::size_t min_node_size = 30;
  // 0 means 10 * number of items
  std::size_t max_splits = 0;
  double ridge = kDefaultRidge;
  std::uint64_t seed = 1;
  // worker threads for candidate search and permutations; 0 = hardware concurrency
  unsigned threads = 1;

  void validate() const;
  bool operator==(const GrowthConfig&) const = default;
};

/// Largest number of nominal levels accepted for exhaustive subset search.
constexpr int kMaxNominalLevels = 12;

struct SplitCandidate {
  std::size_t item = 0;
  std::size_t leaf = 0;
  NodeDescriptor parent;
  std::size_t variable = 0;
  // direction 0: the left child (x <= threshold, or x in subset)
  Condition split;
  std::size_t left_size = 0;
  std::size_t right_size = 0;
};

struct SplitTest {
  std::size_t item = 0;
  std::size_t leaf = 0;
  std::size_t variable = 0;
  std::vector<Condition> candidates;
  std::vector<double> statistics;
  std::size_t argmax = 0;
  double statistic = 0.0;
  double left_difficulty = 0.0;
  double right_difficulty = 0.0;
  std::size_t left_size = 0;
  std::size_t right_size = 0;
  double p_value = 1.0;
  int permutations = 0;

  const Condition& best() const { return candidates[argmax]; }
};

struct SplitRecord {
  int iteration = 0;
  std::size_t item = 0;
  std::uint64_t node_key = 0;
  std::size_t variable = 0;
  Condition split;
  double statistic = 0.0;
  double p_value = 1.0;
  int permutations = 0;
  std::size_t left_size = 0;
  std::size_t right_size = 0;

  bool operator==(const SplitRecord&) const = default;
};

struct GrowthResult {
  ModelFit fit;
  std::vector<SplitRecord> splits;
  // the test that ended the growth, if it ended on a non-significant test
  std::optional<SplitRecord> final_test;
  std::string stop_reason;
};

class GrowthError : public ConvergenceError {
 public:
  GrowthError(const ConvergenceError& cause, std::vector<SplitRecord> splits)
      : ConvergenceError(cause.what(), cause.trace()), splits_(std::move(splits)) {}
  const std::vector<SplitRecord>& splits() const { return splits_; }

 private:
  std::vector<SplitRecord> splits_;
};

/// Persons inside `node`, in index order.
std::vector<std::size_t> node_members(const CovariateSet& covariates, const NodeDescriptor& node);

/// All admissible binary splits of `parent` on variable j.
std::vector<SplitCandidate> enumerate_splits(const CovariateSet& covariates, const NodeDescriptor& parent,
                                             std::size_t variable, std::size_t min_node_size);

/// Likelihood-ratio statistic for splitting the candidate's parent node of its item into two
/// difficulties, with abilities and all other difficulties held at `fit`.
double split_statistic(const ModelFit& fit, const SplitCandidate& candidate, const ResponseMatrix& responses,
                       const CovariateSet& covariates);

/// Maximally selected statistic over all candidates of variable j in leaf `leaf` of `item`.
/// Returns nullopt when the variable offers no admissible split in that node.
std::optional<SplitTest> max_statistic(const ModelFit& fit, std::size_t item, std::size_t leaf, std::size_t variable,
                                       const GrowthConfig& config, const ResponseMatrix& responses,
                                       const CovariateSet& covariates);

/// max_statistic plus a permutation p-value, permuting x_j within the node.
SplitTest permutation_test(const ModelFit& fit, std::size_t item, std::size_t leaf, std::size_t variable,
                           const GrowthConfig& config, const ResponseMatrix& responses,
                           const CovariateSet& covariates);

/// Grows one tree per item until the strongest remaining split is not significant at alpha/m.
GrowthResult grow_forest(const ResponseMatrix& responses, const CovariateSet& covariates, const GrowthConfig& config);

}  // namespace ift
