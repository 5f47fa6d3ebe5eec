#pragma once

#include <vector>

#include "ift/types.h"

namespace ift {

constexpr double kDefaultRidge = 1e-4;
constexpr double kEtaClamp = 700.0;

/// P(Y = 1) under the Rasch model for ability `theta` and difficulty `difficulty`.
double predict_probability(double theta, double difficulty);

/// log(1 + exp(eta)) without overflow.
double log1pexp(double eta);

/// Penalized joint log-likelihood:
///   sum_p sum_i [y * eta - log(1 + exp(eta))] - ridge/2 * sum of squared leaf difficulties,
/// with eta = theta_p - tr_i(x_p). Persons flagged extreme in `fit` contribute 0
/// (the supremum of their terms).
double log_likelihood(const ModelFit& fit, const ResponseMatrix& responses, const CovariateSet& covariates);

/// Gradient over the free parameters, laid out as theta_0..theta_{P-2} followed by the
/// leaf difficulties item by item in leaf order. Components for extreme persons are 0.
std::vector<double> gradient(const ModelFit& fit, const ResponseMatrix& responses, const CovariateSet& covariates);

/// Flattened parameter vector in the same layout as gradient().
std::vector<double> pack_parameters(const ModelFit& fit);
void unpack_parameters(ModelFit& fit, const std::vector<double>& params);

struct FitOptions {
  double ridge = kDefaultRidge;
  double tol = 1e-8;
  int max_iter = 100;
  // raw score substituted for 0 and I when reporting abilities of extreme persons
  double extreme_score_adjustment = 0.3;
  // |parameter| beyond this is treated as divergence
  double divergence_bound = 60.0;
};

/// Persons with raw score 0 or I. The reference person P-1 is never flagged
/// because its ability is fixed at 0.
std::vector<bool> extreme_persons(const ResponseMatrix& responses);

/// Maximizes the penalized log-likelihood over all abilities (theta_{P-1} = 0) and all
/// leaf difficulties for the partitions given by `trees`. Difficulties stored in `trees`
/// and, when sized correctly, `start_abilities` are used as a warm start.
ModelFit fit_model(const ResponseMatrix& responses, const CovariateSet& covariates, std::vector<ItemTree> trees,
                   const FitOptions& options = {}, const std::vector<double>& start_abilities = {},
                   std::vector<IterationRecord>* trace = nullptr);

/// Single-node trees for every item, i.e. the plain Rasch model.
std::vector<ItemTree> rasch_trees(std::size_t items);

}  // namespace ift
