#include <doctest.h>

#include <cmath>
#include <random>

#include "ift/rasch.h"
#include "oracles.h"

using namespace ift;

namespace {

CovariateSet one_binary(const std::vector<double>& v) {
  return CovariateSet(v.size(), {Covariate{"g", CovariateKind::Binary, 0, v}});
}

std::vector<ItemTree> split_first_item(std::size_t items) {
  auto trees = rasch_trees(items);
  Condition c;
  c.variable = 0;
  c.threshold = 0.5;
  trees[0].split_leaf(0, c, 0.0, 0.0);
  return trees;
}

}  // namespace

TEST_CASE("probability at known points") {
  CHECK(predict_probability(0.0, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(predict_probability(2.0, 0.0) == doctest::Approx(0.8807970779778823).epsilon(1e-14));
  CHECK(predict_probability(0.0, 11.137) == doctest::Approx(1.4563e-5).epsilon(1e-3));
  CHECK(predict_probability(800.0, 0.0) <= 1.0);
  CHECK(predict_probability(-800.0, 0.0) >= 0.0);
  CHECK_THROWS_AS(predict_probability(NAN, 0.0), std::invalid_argument);
}

TEST_CASE("log likelihood of a single cell") {
  ResponseMatrix y(2, 2, {1, 0, 0, 1});
  ModelFit fit;
  fit.abilities = {2.0, 0.0};
  fit.trees = rasch_trees(2);
  fit.ridge = 0.0;
  CovariateSet none;
  const double expected = std::log(oracle::sigmoid(2.0)) + std::log(1 - oracle::sigmoid(2.0)) +
                          2 * std::log(0.5);
  CHECK(log_likelihood(fit, y, none) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::log(oracle::sigmoid(2.0)) == doctest::Approx(-0.12692801104297263).epsilon(1e-13));
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t P = 8 + rep, I = 3 + rep % 3;
    const auto y = oracle::random_responses(P, I, rng);
    std::vector<double> g(P);
    for (std::size_t p = 0; p < P; ++p) g[p] = static_cast<double>(p % 2);
    const auto x = one_binary(g);
    ModelFit fit;
    fit.trees = split_first_item(I);
    fit.abilities.assign(P, 0.0);
    fit.ridge = 1e-2;
    std::normal_distribution<double> n01;
    auto params = pack_parameters(fit);
    for (auto& v : params) v = 0.7 * n01(rng);
    unpack_parameters(fit, params);
    const auto grad = gradient(fit, y, x);
    REQUIRE(grad.size() == params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double h = 1e-6;
      auto a = params, b = params;
      a[k] += h;
      b[k] -= h;
      ModelFit fa = fit, fb = fit;
      unpack_parameters(fa, a);
      unpack_parameters(fb, b);
      const double fd = (log_likelihood(fa, y, x) - log_likelihood(fb, y, x)) / (2 * h);
      CHECK(std::abs(fd - grad[k]) / std::max(1.0, std::abs(grad[k])) < 1e-5);
    }
  }
}

TEST_CASE("fit agrees with a dense penalized logistic solver") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    std::uniform_int_distribution<std::size_t> np(10, 30), ni(2, 5);
    const std::size_t P = np(rng), I = ni(rng);
    const auto y = oracle::random_responses(P, I, rng);
    std::vector<double> g(P);
    for (std::size_t p = 0; p < P; ++p) g[p] = static_cast<double>((p * 7 + static_cast<std::size_t>(rep)) % 3 == 0);
    const auto x = one_binary(g);
    const auto trees = rep % 2 ? split_first_item(I) : rasch_trees(I);
    const auto fit = fit_model(y, x, trees);
    const auto ref = oracle::dense_rasch_fit(y, x, trees, kDefaultRidge);
    const auto mine = pack_parameters(fit);
    REQUIRE(static_cast<Eigen::Index>(mine.size()) == ref.size());
    double worst = 0;
    for (std::size_t k = 0; k < mine.size(); ++k) worst = std::max(worst, std::abs(mine[k] - ref(static_cast<Eigen::Index>(k))));
    CHECK(worst < 1e-4);
    CHECK(fit.abilities.back() == 0.0);
  }
}

TEST_CASE("ridge keeps a pure node finite") {
  // item 0 is never solved by group 1: the unpenalized estimate would run off to infinity
  std::mt19937_64 rng(3);
  const std::size_t P = 60, I = 5;
  std::vector<double> g(P);
  for (std::size_t p = 0; p < P; ++p) g[p] = p < 30 ? 0.0 : 1.0;
  auto y = oracle::random_responses(P, I, rng);
  for (std::size_t p = 30; p < P; ++p) y.set(p, 0, 0);
  for (std::size_t p = 30; p < P; ++p) {
    if (y.score(p) == 0) y.set(p, 1, 1);
  }
  const auto x = one_binary(g);
  const auto fit = fit_model(y, x, split_first_item(I));
  for (double v : pack_parameters(fit)) {
    CHECK(std::isfinite(v));
  }
  CHECK(std::abs(fit.trees[0].leaves[1].difficulty) <= 25.0);
  CHECK(fit.trees[0].leaves[1].difficulty > fit.trees[0].leaves[0].difficulty + 3);
}

TEST_CASE("extreme persons are flagged and reported finitely") {
  std::mt19937_64 rng(8);
  auto y = oracle::random_responses(40, 6, rng);
  for (std::size_t i = 0; i < 6; ++i) {
    y.set(3, i, 1);
    y.set(7, i, 0);
  }
  const auto flags = extreme_persons(y);
  CHECK(flags[3]);
  CHECK(flags[7]);
  CHECK(std::count(flags.begin(), flags.end(), true) == 2);
  const auto fit = fit_model(y, CovariateSet{}, rasch_trees(6));
  CHECK(fit.is_extreme(3));
  const double hi = *std::max_element(fit.abilities.begin(), fit.abilities.end());
  const double lo = *std::min_element(fit.abilities.begin(), fit.abilities.end());
  CHECK(fit.abilities[3] == hi);
  CHECK(fit.abilities[7] == lo);
  CHECK(std::isfinite(hi));
  CHECK(std::isfinite(lo));
  // the other estimates do not depend on the extreme rows
  std::vector<std::size_t> keep;
  for (std::size_t p = 0; p < 40; ++p) {
    if (p != 3 && p != 7) keep.push_back(p);
  }
  const auto sub = fit_model(y.subset_persons(keep), CovariateSet{}, rasch_trees(6));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(sub.trees[i].leaves[0].difficulty == doctest::Approx(fit.trees[i].leaves[0].difficulty).epsilon(1e-7));
  }
}

TEST_CASE("fitting is invariant to person order apart from the anchor") {
  std::mt19937_64 rng(21);
  const auto y = oracle::random_responses(25, 4, rng);
  const auto a = fit_model(y, CovariateSet{}, rasch_trees(4));
  std::vector<std::size_t> order;
  for (std::size_t p = 0; p + 1 < 25; ++p) order.push_back(23 - p);
  order.push_back(24);
  const auto b = fit_model(y.subset_persons(order), CovariateSet{}, rasch_trees(4));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.trees[i].leaves[0].difficulty == doctest::Approx(b.trees[i].leaves[0].difficulty).epsilon(1e-7));
  }
  CHECK(a.log_likelihood == doctest::Approx(b.log_likelihood).epsilon(1e-10));
}

TEST_CASE("dimension mismatches are rejected") {
  ResponseMatrix y(3, 2, {1, 0, 0, 1, 1, 0});
  CHECK_THROWS_AS(fit_model(y, CovariateSet{}, rasch_trees(3)), std::invalid_argument);
  CHECK_THROWS(ResponseMatrix(2, 2, {0, 2, 1, 0}));
}
