#include "ift/baselines.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "ift/logistic.h"

namespace ift {

namespace {

std::vector<std::size_t> group_index(const GroupAssignment& groups, const std::vector<int>& order) {
  std::map<int, std::size_t> slot;
  for (std::size_t g = 0; g < order.size(); ++g) slot[order[g]] = g;
  std::vector<std::size_t> idx(groups.labels.size());
  for (std::size_t p = 0; p < idx.size(); ++p) idx[p] = slot.at(groups.labels[p]);
  return idx;
}

void finish(ItemDetection& d, double alpha) {
  if (!d.testable) {
    d.statistic = 0.0;
    d.p_value = 1.0;
    d.flagged = false;
    return;
  }
  d.statistic = std::max(0.0, d.statistic);
  d.p_value = chi_square_sf(d.statistic, d.df);
  d.flagged = d.p_value < alpha;
}

// Quadratic form d^T V^{-1} d; returns false when V is singular.
bool quadratic_form(const Eigen::VectorXd& d, const Eigen::MatrixXd& V, double& out) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(V);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
  const double scale = V.diagonal().cwiseAbs().maxCoeff();
  if (!(scale > 0)) return false;
  for (Eigen::Index k = 0; k < ldlt.vectorD().size(); ++k) {
    if (ldlt.vectorD()(k) <= 1e-12 * scale) return false;
  }
  out = d.dot(ldlt.solve(d));
  return std::isfinite(out);
}

}  // namespace

std::vector<int> GroupAssignment::groups() const {
  std::set<int> distinct(labels.begin(), labels.end());
  std::vector<int> out{reference};
  for (int g : distinct) {
    if (g != reference) out.push_back(g);
  }
  return out;
}

void GroupAssignment::validate(std::size_t persons) const {
  if (labels.size() != persons) throw std::invalid_argument("group assignment must label every person");
  std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw std::invalid_argument("group assignment needs at least two groups");
  if (!distinct.count(reference)) throw std::invalid_argument("reference group has no members");
}

std::vector<bool> DetectionResult::flagged() const {
  std::vector<bool> out;
  out.reserve(items.size());
  for (const auto& d : items) out.push_back(d.flagged);
  return out;
}

double chi_square_sf(double statistic, int df) {
  if (df < 1) throw std::invalid_argument("chi-square needs df >= 1");
  if (!(statistic > 0)) return 1.0;
  const boost::math::chi_squared dist(df);
  return boost::math::cdf(boost::math::complement(dist, statistic));
}

DetectionResult mantel_haenszel(const ResponseMatrix& responses, const GroupAssignment& groups, double alpha) {
  groups.validate(responses.persons());
  const auto order = groups.groups();
  const auto gidx = group_index(groups, order);
  const std::size_t G = order.size();
  const std::size_t I = responses.items();
  const std::size_t P = responses.persons();

  std::vector<int> score(P);
  for (std::size_t p = 0; p < P; ++p) score[p] = responses.score(p);

  DetectionResult result;
  result.method = "mh";
  result.alpha = alpha;
  result.items.resize(I);
  for (std::size_t i = 0; i < I; ++i) {
    // per stratum: persons and correct answers by group
    std::map<int, std::vector<std::pair<double, double>>> strata;
    for (std::size_t p = 0; p < P; ++p) {
      auto& cells = strata[score[p]];
      if (cells.empty()) cells.assign(G, {0.0, 0.0});
      cells[gidx[p]].first += 1.0;
      cells[gidx[p]].second += responses(p, i);
    }
    auto& d = result.items[i];
    d.df = static_cast<int>(G - 1);
    Eigen::VectorXd diff = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(G - 1));
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(G - 1), static_cast<Eigen::Index>(G - 1));
    int used = 0;
    for (const auto& [s, cells] : strata) {
      double T = 0.0, m1 = 0.0;
      for (const auto& c : cells) {
        T += c.first;
        m1 += c.second;
      }
      const double m0 = T - m1;
      if (T < 2.0 || m1 == 0.0 || m0 == 0.0) continue;
      if (G == 2 && (cells[0].first == 0.0 || cells[1].first == 0.0)) continue;
      ++used;
      // compared groups: the reference for G == 2, the non-reference groups otherwise
      for (std::size_t a = 0; a + 1 < G; ++a) {
        const auto& ca = G == 2 ? cells[0] : cells[a + 1];
        diff(static_cast<Eigen::Index>(a)) += ca.second - ca.first * m1 / T;
        for (std::size_t b = 0; b + 1 < G; ++b) {
          const auto& cb = G == 2 ? cells[1] : cells[b + 1];
          const double cov = G == 2 ? ca.first * cb.first * m1 * m0 / (T * T * (T - 1.0))
                                    : m1 * m0 * (T * (a == b ? ca.first : 0.0) - ca.first * cb.first) /
                                          (T * T * (T - 1.0));
          var(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += cov;
        }
      }
    }
    if (used == 0) {
      d.testable = false;
      d.note = "all strata degenerate";
    } else if (G == 2) {
      const double v = var(0, 0);
      if (!(v > 0)) {
        d.testable = false;
        d.note = "zero variance";
      } else {
        const double dev = std::max(0.0, std::abs(diff(0)) - 0.5);
        d.statistic = dev * dev / v;
      }
    } else if (!quadratic_form(diff, var, d.statistic)) {
      d.testable = false;
      d.note = "singular covariance";
    }
    finish(d, alpha);
  }
  return result;
}

DetectionResult logistic_dif(const ResponseMatrix& responses, const GroupAssignment& groups, double alpha,
                             double ridge) {
  groups.validate(responses.persons());
  const auto order = groups.groups();
  const auto gidx = group_index(groups, order);
  const std::size_t G = order.size();
  const std::size_t I = responses.items();
  const auto P = static_cast<Eigen::Index>(responses.persons());

  Eigen::MatrixXd null_design(P, 2);
  Eigen::MatrixXd full_design(P, static_cast<Eigen::Index>(2 + 2 * (G - 1)));
  full_design.setZero();
  for (Eigen::Index p = 0; p < P; ++p) {
    const double s = responses.score(static_cast<std::size_t>(p));
    null_design(p, 0) = full_design(p, 0) = 1.0;
    null_design(p, 1) = full_design(p, 1) = s;
    const std::size_t g = gidx[static_cast<std::size_t>(p)];
    if (g > 0) {
      full_design(p, static_cast<Eigen::Index>(1 + g)) = 1.0;
      full_design(p, static_cast<Eigen::Index>(G + g)) = s;
    }
  }

  DetectionResult result;
  result.method = "logistic";
  result.alpha = alpha;
  result.items.resize(I);
  for (std::size_t i = 0; i < I; ++i) {
    Eigen::VectorXd y(P);
    for (Eigen::Index p = 0; p < P; ++p) y(p) = responses(static_cast<std::size_t>(p), i);
    auto& d = result.items[i];
    d.df = static_cast<int>(2 * (G - 1));
    auto separated = [](const LogisticFit& f) { return !f.converged || f.coefficients.cwiseAbs().maxCoeff() > 25.0; };
    auto null_fit = fit_logistic(null_design, y);
    auto full_fit = fit_logistic(full_design, y);
    if (separated(null_fit) || separated(full_fit)) {
      null_fit = fit_logistic(null_design, y, ridge);
      full_fit = fit_logistic(full_design, y, ridge);
      d.note = "ridge";
      if (!null_fit.converged || !full_fit.converged) {
        d.testable = false;
        d.note = "fit failed";
      }
    }
    d.statistic = 2.0 * (full_fit.log_likelihood - null_fit.log_likelihood);
    finish(d, alpha);
  }
  return result;
}

DetectionResult lord_chi2(const ResponseMatrix& responses, const GroupAssignment& groups, double alpha,
                          double ridge) {
  groups.validate(responses.persons());
  const auto order = groups.groups();
  const auto gidx = group_index(groups, order);
  const std::size_t G = order.size();
  const std::size_t I = responses.items();

  DetectionResult result;
  result.method = "lord";
  result.alpha = alpha;
  result.items.resize(I);
  for (auto& d : result.items) d.df = static_cast<int>(G - 1);

  // centred difficulties and their variances per group
  std::vector<std::vector<double>> b(G), v(G);
  FitOptions options;
  options.ridge = ridge;
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<std::size_t> rows;
    for (std::size_t p = 0; p < responses.persons(); ++p) {
      if (gidx[p] == g) rows.push_back(p);
    }
    try {
      if (rows.size() < 2) throw ConvergenceError("group too small for calibration");
      const auto sub = responses.subset_persons(rows);
      const CovariateSet none(rows.size(), {});
      const auto fit = fit_model(sub, none, rasch_trees(I), options);
      b[g].resize(I);
      v[g].assign(I, 0.0);
      double mean = 0.0;
      for (std::size_t i = 0; i < I; ++i) mean += (b[g][i] = fit.trees[i].leaves[0].difficulty);
      mean /= static_cast<double>(I);
      for (auto& x : b[g]) x -= mean;
      std::vector<double> info(I, ridge);
      for (std::size_t p = 0; p < rows.size(); ++p) {
        if (fit.is_extreme(p)) continue;
        for (std::size_t i = 0; i < I; ++i) {
          const double pi = predict_probability(fit.abilities[p], fit.trees[i].leaves[0].difficulty);
          info[i] += pi * (1.0 - pi);
        }
      }
      for (std::size_t i = 0; i < I; ++i) v[g][i] = info[i] > 1e-10 ? 1.0 / info[i] : INFINITY;
    } catch (const ConvergenceError& e) {
      for (auto& d : result.items) {
        d.testable = false;
        d.note = std::string("calibration failed: ") + e.what();
      }
      for (auto& d : result.items) finish(d, alpha);
      return result;
    }
  }

  for (std::size_t i = 0; i < I; ++i) {
    auto& d = result.items[i];
    bool finite = true;
    for (std::size_t g = 0; g < G; ++g) finite = finite && std::isfinite(v[g][i]);
    if (!finite) {
      d.testable = false;
      d.note = "singular information";
    } else if (G == 2) {
      const double diff = b[1][i] - b[0][i];
      d.statistic = diff * diff / (v[0][i] + v[1][i]);
    } else {
      // contrasts against the reference with independent group estimates
      const auto k = static_cast<Eigen::Index>(G - 1);
      Eigen::VectorXd diff(k);
      Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(k, k, v[0][i]);
      for (Eigen::Index a = 0; a < k; ++a) {
        diff(a) = b[static_cast<std::size_t>(a) + 1][i] - b[0][i];
        cov(a, a) += v[static_cast<std::size_t>(a) + 1][i];
      }
      if (!quadratic_form(diff, cov, d.statistic)) {
        d.testable = false;
        d.note = "singular information";
      }
    }
    finish(d, alpha);
  }
  return result;
}

}  // namespace ift
