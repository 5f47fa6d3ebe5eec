#include "ift/logistic.h"

#include <algorithm>
#include <cmath>

#include "ift/rasch.h"

namespace ift {

namespace {

double objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                 const Eigen::VectorXd& penalty, double* unpenalized) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index r = 0; r < eta.size(); ++r) {
    const double e = std::clamp(eta(r), -kEtaClamp, kEtaClamp);
    ll += y(r) * e - log1pexp(e);
  }
  if (unpenalized) *unpenalized = ll;
  return ll - 0.5 * (penalty.array() * beta.array().square()).sum();
}

}  // namespace

LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double ridge, std::vector<bool> penalized,
                         int max_iter, double tol) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  if (penalized.empty()) {
    penalized.assign(static_cast<std::size_t>(k), true);
    if (k > 0) penalized[0] = false;
  }
  Eigen::VectorXd penalty(k);
  for (Eigen::Index c = 0; c < k; ++c) penalty(c) = penalized[static_cast<std::size_t>(c)] ? ridge : 0.0;

  LogisticFit out;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  double ll_plain = 0.0;
  double obj = objective(X, y, beta, penalty, &ll_plain);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd w(n), resid(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double pi = predict_probability(std::clamp(eta(r), -kEtaClamp, kEtaClamp), 0.0);
      w(r) = pi * (1.0 - pi);
      resid(r) = y(r) - pi;
    }
    const Eigen::VectorXd grad = X.transpose() * resid - (penalty.array() * beta.array()).matrix();
    out.iterations = it;
    // gradient entries are sums over rows, so the tolerance scales with n
    if (grad.cwiseAbs().maxCoeff() < tol * static_cast<double>(std::max<Eigen::Index>(n, 1))) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X;
    info.diagonal() += penalty;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    const Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) break;
    double scale = 1.0;
    bool moved = false;
    for (int half = 0; half < 40; ++half, scale *= 0.5) {
      const Eigen::VectorXd trial = beta + scale * step;
      double trial_plain = 0.0;
      const double trial_obj = objective(X, y, trial, penalty, &trial_plain);
      if (trial_obj >= obj) {
        if ((scale * step).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + beta.cwiseAbs().maxCoeff())) {
          out.converged = true;
        }
        beta = trial;
        obj = trial_obj;
        ll_plain = trial_plain;
        moved = true;
        break;
      }
    }
    if (out.converged) break;
    if (!moved) {
      out.converged = grad.cwiseAbs().maxCoeff() < std::sqrt(tol);
      break;
    }
  }
  out.coefficients = beta;
  out.log_likelihood = ll_plain;
  return out;
}

}  // namespace ift
