#pragma once

#include <vector>

#include <Eigen/Dense>

namespace ift {

struct LogisticFit {
  Eigen::VectorXd coefficients;
  double log_likelihood = 0.0;  // unpenalized
  int iterations = 0;
  bool converged = false;
};

/// Logistic regression by iteratively reweighted least squares, maximizing
/// sum [y eta - log(1 + exp(eta))] - ridge/2 * sum_{penalized k} beta_k^2.
/// `penalized` selects columns subject to the ridge (empty: all but column 0).
LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double ridge = 0.0,
                         std::vector<bool> penalized = {}, int max_iter = 100, double tol = 1e-10);

}  // namespace ift
