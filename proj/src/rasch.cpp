#include "ift/rasch.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

namespace ift {

namespace {

double clamp_eta(double eta) { return std::clamp(eta, -kEtaClamp, kEtaClamp); }

double logit_clamped(double proportion) {
  proportion = std::clamp(proportion, 1e-6, 1.0 - 1e-6);
  return std::clamp(std::log(proportion / (1.0 - proportion)), -3.0, 3.0);
}

// Leaf membership of every (person, item) cell and flat offsets of each item's leaves.
struct Layout {
  std::size_t persons = 0;
  std::size_t items = 0;
  std::vector<std::size_t> offset;   // first flat leaf index of item i
  std::vector<std::uint32_t> leaf;   // persons x items, flat leaf index
  std::size_t total_leaves = 0;

  Layout(const std::vector<ItemTree>& trees, const CovariateSet& x, std::size_t n_persons)
      : persons(n_persons), items(trees.size()), offset(trees.size()), leaf(n_persons * trees.size()) {
    for (std::size_t i = 0; i < items; ++i) {
      offset[i] = total_leaves;
      total_leaves += trees[i].leaves.size();
    }
    for (std::size_t i = 0; i < items; ++i) {
      const auto& tree = trees[i];
      for (std::size_t p = 0; p < persons; ++p) {
        const std::size_t l = tree.leaves.size() == 1 ? 0 : tree.leaf_of(x, p);
        leaf[p * items + i] = static_cast<std::uint32_t>(offset[i] + l);
      }
    }
  }
  std::uint32_t at(std::size_t p, std::size_t i) const { return leaf[p * items + i]; }
};

void check_dimensions(const ModelFit& fit, const ResponseMatrix& y, const CovariateSet& x) {
  if (fit.abilities.size() != y.persons()) {
    throw std::invalid_argument("fit has " + std::to_string(fit.abilities.size()) + " abilities but responses have " +
                                std::to_string(y.persons()) + " persons");
  }
  if (fit.trees.size() != y.items()) {
    throw std::invalid_argument("fit has " + std::to_string(fit.trees.size()) + " trees but responses have " +
                                std::to_string(y.items()) + " items");
  }
  if (!fit.extreme.empty() && fit.extreme.size() != y.persons()) {
    throw std::invalid_argument("extreme-person mask has the wrong length");
  }
  bool needs_covariates = false;
  for (const auto& t : fit.trees) {
    for (const auto& leaf : t.leaves) {
      for (const auto& c : leaf.node.conditions) {
        needs_covariates = true;
        if (c.variable >= x.size()) {
          throw std::invalid_argument("tree for item " + std::to_string(t.item) + " references covariate " +
                                      std::to_string(c.variable) + " which does not exist");
        }
      }
    }
  }
  if (needs_covariates && x.persons() != y.persons()) {
    throw std::invalid_argument("covariates and responses disagree on the number of persons");
  }
}

std::vector<double> flat_difficulties(const std::vector<ItemTree>& trees) {
  std::vector<double> g;
  for (const auto& t : trees) {
    for (const auto& leaf : t.leaves) g.push_back(leaf.difficulty);
  }
  return g;
}

double penalized_ll(const ResponseMatrix& y, const Layout& layout, const std::vector<double>& theta,
                    const std::vector<double>& gamma, const std::vector<bool>& extreme, double ridge) {
  double ll = 0.0;
  for (std::size_t p = 0; p < layout.persons; ++p) {
    if (!extreme.empty() && extreme[p]) continue;
    for (std::size_t i = 0; i < layout.items; ++i) {
      const double eta = clamp_eta(theta[p] - gamma[layout.at(p, i)]);
      ll += y(p, i) * eta - log1pexp(eta);
    }
  }
  double pen = 0.0;
  for (double g : gamma) pen += g * g;
  return ll - 0.5 * ridge * pen;
}

// Gradient in the full (theta, gamma) layout; entry P-1 is the anchor and is zeroed.
void full_gradient(const ResponseMatrix& y, const Layout& layout, const std::vector<double>& theta,
                   const std::vector<double>& gamma, const std::vector<bool>& extreme, double ridge,
                   std::vector<double>& g_theta, std::vector<double>& g_gamma) {
  g_theta.assign(layout.persons, 0.0);
  g_gamma.assign(gamma.size(), 0.0);
  for (std::size_t p = 0; p < layout.persons; ++p) {
    if (!extreme.empty() && extreme[p]) continue;
    double expected = 0.0;
    int score = 0;
    for (std::size_t i = 0; i < layout.items; ++i) {
      const auto l = layout.at(p, i);
      const double pi = predict_probability(clamp_eta(theta[p] - gamma[l]), 0.0);
      expected += pi;
      score += y(p, i);
      g_gamma[l] -= y(p, i) - pi;
    }
    // score minus expected keeps persons with equal scores bitwise equal
    g_theta[p] = static_cast<double>(score) - expected;
  }
  for (std::size_t l = 0; l < gamma.size(); ++l) g_gamma[l] -= ridge * gamma[l];
  g_theta[layout.persons - 1] = 0.0;
}

double ability_for_score(double target, const std::vector<double>& difficulties) {
  // Sum of probabilities is increasing in theta; bracket then Newton with bisection safeguard.
  double lo = -50.0, hi = 50.0, t = 0.0;
  for (int it = 0; it < 200; ++it) {
    double f = -target, df = 0.0;
    for (double d : difficulties) {
      const double pi = predict_probability(clamp_eta(t - d), 0.0);
      f += pi;
      df += pi * (1.0 - pi);
    }
    if (std::abs(f) < 1e-12) break;
    if (f > 0) hi = t; else lo = t;
    double next = df > 1e-300 ? t - f / df : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) < 1e-14) break;
    t = next;
  }
  return t;
}

std::string describe_trace(const std::vector<IterationRecord>& trace) {
  std::ostringstream out;
  if (!trace.empty()) {
    const auto& last = trace.back();
    out << " after " << last.iteration << " iterations (log-likelihood " << last.log_likelihood
        << ", max gradient " << last.max_gradient << ")";
  }
  return out.str();
}

}  // namespace

double predict_probability(double theta, double difficulty) {
  if (!std::isfinite(theta) || !std::isfinite(difficulty)) {
    throw std::invalid_argument("predict_probability: non-finite argument");
  }
  const double eta = clamp_eta(theta - difficulty);
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double log1pexp(double eta) {
  if (eta > 0) return eta + std::log1p(std::exp(-eta));
  return std::log1p(std::exp(eta));
}

double log_likelihood(const ModelFit& fit, const ResponseMatrix& responses, const CovariateSet& covariates) {
  check_dimensions(fit, responses, covariates);
  const Layout layout(fit.trees, covariates, responses.persons());
  return penalized_ll(responses, layout, fit.abilities, flat_difficulties(fit.trees), fit.extreme, fit.ridge);
}

std::vector<double> gradient(const ModelFit& fit, const ResponseMatrix& responses, const CovariateSet& covariates) {
  check_dimensions(fit, responses, covariates);
  const Layout layout(fit.trees, covariates, responses.persons());
  std::vector<double> g_theta, g_gamma;
  full_gradient(responses, layout, fit.abilities, flat_difficulties(fit.trees), fit.extreme, fit.ridge, g_theta,
                g_gamma);
  std::vector<double> g(g_theta.begin(), g_theta.end() - 1);
  g.insert(g.end(), g_gamma.begin(), g_gamma.end());
  return g;
}

std::vector<double> pack_parameters(const ModelFit& fit) {
  std::vector<double> v(fit.abilities.begin(), fit.abilities.end() - 1);
  const auto g = flat_difficulties(fit.trees);
  v.insert(v.end(), g.begin(), g.end());
  return v;
}

void unpack_parameters(ModelFit& fit, const std::vector<double>& params) {
  if (params.size() != fit.parameter_count()) throw std::invalid_argument("parameter vector has the wrong length");
  std::size_t k = 0;
  for (std::size_t p = 0; p + 1 < fit.abilities.size(); ++p) fit.abilities[p] = params[k++];
  fit.abilities.back() = 0.0;
  for (auto& t : fit.trees) {
    for (auto& leaf : t.leaves) leaf.difficulty = params[k++];
  }
}

std::vector<bool> extreme_persons(const ResponseMatrix& responses) {
  std::vector<bool> ext(responses.persons(), false);
  const int full = static_cast<int>(responses.items());
  for (std::size_t p = 0; p + 1 < responses.persons(); ++p) {
    const int s = responses.score(p);
    ext[p] = s == 0 || s == full;
  }
  return ext;
}

std::vector<ItemTree> rasch_trees(std::size_t items) {
  std::vector<ItemTree> trees;
  trees.reserve(items);
  for (std::size_t i = 0; i < items; ++i) trees.push_back(ItemTree::root(i));
  return trees;
}

ModelFit fit_model(const ResponseMatrix& responses, const CovariateSet& covariates, std::vector<ItemTree> trees,
                   const FitOptions& options, const std::vector<double>& start_abilities,
                   std::vector<IterationRecord>* trace) {
  if (options.ridge < 0) throw std::invalid_argument("ridge weight must be non-negative");
  const std::size_t P = responses.persons();
  const std::size_t I = responses.items();

  ModelFit fit;
  fit.ridge = options.ridge;
  fit.trees = std::move(trees);
  fit.abilities.assign(P, 0.0);
  fit.extreme = extreme_persons(responses);
  check_dimensions(fit, responses, covariates);
  for (std::size_t i = 0; i < I; ++i) {
    if (fit.trees[i].item != i) throw std::invalid_argument("trees must be ordered by item index");
  }

  const Layout layout(fit.trees, covariates, P);
  const std::size_t L = layout.total_leaves;
  std::vector<double> theta(P, 0.0), gamma(L, 0.0);

  if (start_abilities.size() == P) {
    theta = start_abilities;
    gamma = flat_difficulties(fit.trees);
  } else {
    for (std::size_t p = 0; p + 1 < P; ++p) {
      theta[p] = logit_clamped(static_cast<double>(responses.score(p)) / static_cast<double>(I));
    }
    std::vector<double> wrong(L, 0.0), count(L, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t i = 0; i < I; ++i) {
        const auto l = layout.at(p, i);
        count[l] += 1.0;
        wrong[l] += 1.0 - responses(p, i);
      }
    }
    for (std::size_t l = 0; l < L; ++l) gamma[l] = count[l] > 0 ? logit_clamped(wrong[l] / count[l]) : 0.0;
  }
  theta[P - 1] = 0.0;
  for (std::size_t p = 0; p + 1 < P; ++p) {
    if (fit.extreme[p]) theta[p] = 0.0;
  }

  std::vector<IterationRecord> records;
  std::vector<double> g_theta, g_gamma;
  double ll = penalized_ll(responses, layout, theta, gamma, fit.extreme, options.ridge);

  std::vector<double> w(I), d(P);
  Eigen::MatrixXd S(L, L);
  Eigen::VectorXd rhs(L);
  std::vector<double> trial_theta(P), trial_gamma(L), step_theta(P);
  int iter = 0;
  for (;; ++iter) {
    full_gradient(responses, layout, theta, gamma, fit.extreme, options.ridge, g_theta, g_gamma);
    double max_g = 0.0;
    for (double v : g_theta) max_g = std::max(max_g, std::abs(v));
    for (double v : g_gamma) max_g = std::max(max_g, std::abs(v));
    records.push_back({iter, ll, max_g});
    if (max_g < options.tol) break;
    if (iter >= options.max_iter) {
      if (trace) *trace = records;
      throw ConvergenceError("fit_model did not converge" + describe_trace(records), records);
    }

    // Newton step on the negative Hessian [[D, B], [B^T, E]] through the Schur complement in gamma.
    S.setZero();
    rhs.setZero();
    for (std::size_t l = 0; l < L; ++l) {
      S(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l)) = options.ridge;
      rhs(static_cast<Eigen::Index>(l)) = g_gamma[l];
    }
    for (std::size_t p = 0; p < P; ++p) {
      if (fit.extreme[p]) continue;
      double dp = 0.0;
      for (std::size_t i = 0; i < I; ++i) {
        const double pi = predict_probability(clamp_eta(theta[p] - gamma[layout.at(p, i)]), 0.0);
        w[i] = pi * (1.0 - pi);
        dp += w[i];
        S(layout.at(p, i), layout.at(p, i)) += w[i];
      }
      d[p] = dp;
      if (p == P - 1 || dp <= 0.0) continue;
      const double inv = 1.0 / dp;
      for (std::size_t i = 0; i < I; ++i) {
        const auto li = layout.at(p, i);
        rhs(li) += w[i] * g_theta[p] * inv;
        for (std::size_t k = 0; k < I; ++k) S(li, layout.at(p, k)) -= w[i] * w[k] * inv;
      }
    }
    Eigen::LLT<Eigen::MatrixXd> chol(S);
    if (chol.info() != Eigen::Success) {
      if (trace) *trace = records;
      throw ConvergenceError("fit_model: information matrix is singular (divergence)" + describe_trace(records),
                             records);
    }
    const Eigen::VectorXd dgamma = chol.solve(rhs);
    for (std::size_t p = 0; p < P; ++p) {
      step_theta[p] = 0.0;
      if (p == P - 1 || fit.extreme[p] || d[p] <= 0.0) continue;
      double acc = g_theta[p];
      for (std::size_t i = 0; i < I; ++i) {
        const double pi = predict_probability(clamp_eta(theta[p] - gamma[layout.at(p, i)]), 0.0);
        acc += pi * (1.0 - pi) * dgamma(layout.at(p, i));
      }
      step_theta[p] = acc / d[p];
    }

    // Step halving keeps the penalized log-likelihood non-decreasing, up to rounding in its sum.
    const double slack = 1e-13 * std::max(1.0, std::abs(ll));
    double scale = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half, scale *= 0.5) {
      for (std::size_t p = 0; p < P; ++p) trial_theta[p] = theta[p] + scale * step_theta[p];
      for (std::size_t l = 0; l < L; ++l) trial_gamma[l] = gamma[l] + scale * dgamma(static_cast<Eigen::Index>(l));
      const double trial = penalized_ll(responses, layout, trial_theta, trial_gamma, fit.extreme, options.ridge);
      if (trial >= ll - slack) {
        theta.swap(trial_theta);
        gamma.swap(trial_gamma);
        ll = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // no ascent possible at machine precision; accept the point if the gradient is tiny
      if (max_g < std::sqrt(options.tol)) break;
      if (trace) *trace = records;
      throw ConvergenceError("fit_model: line search failed" + describe_trace(records), records);
    }
    double max_abs = 0.0;
    for (double v : theta) max_abs = std::max(max_abs, std::abs(v));
    for (double v : gamma) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs > options.divergence_bound) {
      records.push_back({iter + 1, ll, max_g});
      if (trace) *trace = records;
      throw ConvergenceError("fit_model: parameters diverge (pure node without ridge?)" + describe_trace(records),
                             records);
    }
  }
  if (trace) *trace = records;

  fit.iterations = iter;
  fit.log_likelihood = ll;
  std::size_t k = 0;
  for (auto& t : fit.trees) {
    for (auto& leaf : t.leaves) leaf.difficulty = gamma[k++];
  }
  // Abilities of extreme persons: solve for an adjusted raw score against their difficulties.
  std::vector<double> their(I);
  for (std::size_t p = 0; p + 1 < P; ++p) {
    if (!fit.extreme[p]) continue;
    for (std::size_t i = 0; i < I; ++i) their[i] = gamma[layout.at(p, i)];
    const double target = responses.score(p) == 0 ? options.extreme_score_adjustment
                                                  : static_cast<double>(I) - options.extreme_score_adjustment;
    theta[p] = ability_for_score(target, their);
  }
  fit.abilities = std::move(theta);
  return fit;
}

}  // namespace ift
