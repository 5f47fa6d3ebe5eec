#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ift/tree_growth.h"
#include "ift/types.h"

namespace ift {

enum class Scenario { TwoGroup, FiveGroup, Arctan, S4, S5, S6, Null };

Scenario scenario_from_string(const std::string& name);
const char* to_string(Scenario s);
/// Scenarios whose single covariate defines groups for the classical detectors.
bool is_group_scenario(Scenario s);

/// strong / medium / weak map to c = 1 / 0.75 / 0.5.
double strength_value(const std::string& name);

struct ScenarioSpec {
  Scenario scenario = Scenario::Null;
  double strength = 1.0;
  std::size_t persons = 500;
  std::size_t items = 20;
  std::uint64_t seed = 1;
};

/// One additive piece of an item's covariate-dependent difficulty:
/// coefficient * f(x_j) with f an indicator I(x = value), I(x > value) or arctan(x).
struct DifTerm {
  enum class Kind { Equals, Greater, Arctan };
  std::size_t variable = 0;
  Kind kind = Kind::Equals;
  double value = 0.0;
  double coefficient = 0.0;

  double evaluate(double x) const;
};

struct GroundTruth {
  std::vector<double> abilities;
  std::vector<double> base_difficulties;
  std::vector<std::vector<DifTerm>> terms;  // per item
  std::size_t variables = 0;

  bool has_dif(std::size_t item) const { return !terms[item].empty(); }
  bool delta(std::size_t item, std::size_t variable) const;
  double dif_part(std::size_t item, const CovariateSet& x, std::size_t person) const;
  double difficulty(std::size_t item, const CovariateSet& x, std::size_t person) const;
};

struct SimulatedData {
  ResponseMatrix responses;
  CovariateSet covariates;
  GroundTruth truth;
};

SimulatedData generate(const ScenarioSpec& spec);

/// Mean over DIF items of the variance across the realized persons of each item's DIF part.
double dif_strength(const GroundTruth& truth, const CovariateSet& covariates);

/// The same quantity under the covariate distribution of the scenario.
double population_dif_strength(Scenario scenario, double strength);

struct Metrics {
  double mse_persons = NAN;
  double mse_items = NAN;
  double tpr_i = NAN;
  double fpr_i = NAN;
  double tpr_iv = NAN;
  double fpr_iv = NAN;
};

/// Estimated detection pattern (and, for the tree method, the fitted model).
struct Estimate {
  std::optional<ModelFit> fit;
  std::vector<std::vector<bool>> delta;  // items x variables

  static Estimate from_fit(const ModelFit& fit, std::size_t variables);
  static Estimate from_flags(const std::vector<bool>& flagged);
};

/// MSEs put the estimates on the usual Rasch location first: abilities and difficulties are
/// shifted together so the mean estimated difficulty over persons and items is 0. The
/// reference-person anchor is arbitrary; the truth is compared as generated.
Metrics compute_metrics(const Estimate& estimate, const GroundTruth& truth, const CovariateSet& covariates);

struct StudyConfig {
  std::vector<std::pair<Scenario, std::string>> cells;  // (scenario, strength name)
  int replications = 1;
  std::vector<std::string> methods{"trees"};
  GrowthConfig growth;
  double alpha = 0.05;
  std::size_t persons = 500;
  std::size_t items = 20;
  std::uint64_t seed = 1;
  // replications run concurrently on this many threads
  unsigned threads = 1;
};

struct StudyRow {
  std::string scenario;
  std::string strength;
  double c = 0.0;
  std::string method;
  int replication = -1;  // -1: mean over replications
  Metrics metrics;
  double splits = NAN;  // tree method only
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::vector<std::string> notices;

  const StudyRow* mean_row(const std::string& scenario, const std::string& strength, const std::string& method) const;
};

StudyResult run_study(const StudyConfig& config);

}  // namespace ift
