#include "ift/simulation.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "ift/baselines.h"
#include "ift/parallel.h"
#include "ift/rasch.h"
#include "ift/rng.h"

namespace ift {

namespace {

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

// Var(arctan Z), Z standard normal, by composite Simpson on [-12, 12].
double arctan_normal_variance() {
  const int n = 8000;
  const double a = -12.0, b = 12.0, h = (b - a) / n;
  const double norm = 1.0 / std::sqrt(2.0 * M_PI);
  double sum = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double z = a + k * h;
    const double f = std::atan(z) * std::atan(z) * norm * std::exp(-0.5 * z * z);
    sum += f * (k == 0 || k == n ? 1.0 : (k % 2 ? 4.0 : 2.0));
  }
  return sum * h / 3.0;  // the mean is 0 by symmetry
}

struct Layout {
  std::vector<Covariate> columns;
  std::vector<std::vector<DifTerm>> terms;  // items 0..3 carry DIF
  // population variance of each term's unit function, aligned with `terms`
  std::vector<std::vector<double>> unit_variance;
};

DifTerm term(std::size_t j, DifTerm::Kind kind, double value, double coef) { return DifTerm{j, kind, value, coef}; }

Layout scenario_layout(Scenario s, double c) {
  using K = DifTerm::Kind;
  Layout out;
  auto col = [](std::string name, CovariateKind kind, int levels = 0) {
    Covariate cv;
    cv.name = std::move(name);
    cv.kind = kind;
    cv.levels = levels;
    return cv;
  };
  const double pb = 0.25;  // Bernoulli(0.5) indicator variance
  const double up = 1.0 - normal_cdf(0.1);
  const double up4 = 1.0 - normal_cdf(-0.1);
  switch (s) {
    case Scenario::TwoGroup:
      out.columns = {col("x", CovariateKind::Binary)};
      out.terms = {{term(0, K::Equals, 1, 1.0 * c)},
                   {term(0, K::Equals, 1, -1.0 * c)},
                   {term(0, K::Equals, 0, 1.5 * c)},
                   {term(0, K::Equals, 0, -1.5 * c)}};
      out.unit_variance = {{pb}, {pb}, {pb}, {pb}};
      break;
    case Scenario::FiveGroup: {
      out.columns = {col("x", CovariateKind::Ordinal)};
      out.terms = {{term(0, K::Greater, 2, 1.0 * c)},
                   {term(0, K::Greater, 3, -1.0 * c)},
                   {term(0, K::Greater, 4, 1.5 * c)},
                   {term(0, K::Greater, 1, -1.5 * c)}};
      auto bern = [](double p) { return p * (1.0 - p); };
      out.unit_variance = {{bern(0.6)}, {bern(0.4)}, {bern(0.2)}, {bern(0.8)}};
      break;
    }
    case Scenario::Arctan: {
      out.columns = {col("x", CovariateKind::Metric)};
      out.terms = {{term(0, K::Arctan, 0, -c)}, {term(0, K::Arctan, 0, c)}};
      const double v = arctan_normal_variance();
      out.unit_variance = {{v}, {v}};
      break;
    }
    case Scenario::S4:
    case Scenario::S5:
    case Scenario::S6:
      out.columns = {col("x1", CovariateKind::Binary), col("x2", CovariateKind::Metric),
                     col("x3", CovariateKind::Binary), col("x4", CovariateKind::Metric)};
      if (s == Scenario::S4) {
        out.terms = {{term(0, K::Equals, 1, c)},
                     {term(0, K::Equals, 1, -c)},
                     {term(2, K::Equals, 1, 1.5 * c)},
                     {term(2, K::Equals, 1, -1.5 * c)}};
        out.unit_variance = {{pb}, {pb}, {pb}, {pb}};
      } else if (s == Scenario::S5) {
        out.terms = {{term(1, K::Greater, 0.1, c)},
                     {term(1, K::Greater, 0.1, -c)},
                     {term(3, K::Greater, -0.1, 1.5 * c)},
                     {term(3, K::Greater, -0.1, -1.5 * c)}};
        out.unit_variance = {{up * (1 - up)}, {up * (1 - up)}, {up4 * (1 - up4)}, {up4 * (1 - up4)}};
      } else {
        out.terms = {{term(0, K::Equals, 1, 0.75 * c), term(1, K::Greater, 0.1, 0.75 * c)},
                     {term(0, K::Equals, 1, -0.75 * c), term(1, K::Greater, 0.1, -0.75 * c)},
                     {term(2, K::Equals, 1, 0.8 * c), term(3, K::Greater, -0.1, 0.8 * c)},
                     {term(2, K::Equals, 1, -0.8 * c), term(3, K::Greater, -0.1, -0.8 * c)}};
        out.unit_variance = {{pb, up * (1 - up)}, {pb, up * (1 - up)}, {pb, up4 * (1 - up4)}, {pb, up4 * (1 - up4)}};
      }
      break;
    case Scenario::Null:
      out.columns = {col("x", CovariateKind::Binary)};
      break;
  }
  return out;
}

double mean_of_defined(const std::vector<double>& v) {
  double sum = 0.0;
  int n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  return n > 0 ? sum / n : NAN;
}

double rate(int hits, int total) { return total > 0 ? static_cast<double>(hits) / total : NAN; }

}  // namespace

Scenario scenario_from_string(const std::string& name) {
  if (name == "two-group") return Scenario::TwoGroup;
  if (name == "five-group") return Scenario::FiveGroup;
  if (name == "arctan") return Scenario::Arctan;
  if (name == "s4") return Scenario::S4;
  if (name == "s5") return Scenario::S5;
  if (name == "s6") return Scenario::S6;
  if (name == "null") return Scenario::Null;
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::TwoGroup: return "two-group";
    case Scenario::FiveGroup: return "five-group";
    case Scenario::Arctan: return "arctan";
    case Scenario::S4: return "s4";
    case Scenario::S5: return "s5";
    case Scenario::S6: return "s6";
    case Scenario::Null: return "null";
  }
  return "null";
}

bool is_group_scenario(Scenario s) {
  return s == Scenario::TwoGroup || s == Scenario::FiveGroup || s == Scenario::Null;
}

double strength_value(const std::string& name) {
  if (name == "strong") return 1.0;
  if (name == "medium") return 0.75;
  if (name == "weak") return 0.5;
  throw std::invalid_argument("unknown strength '" + name + "' (expected strong, medium or weak)");
}

double DifTerm::evaluate(double x) const {
  switch (kind) {
    case Kind::Equals: return x == value ? coefficient : 0.0;
    case Kind::Greater: return x > value ? coefficient : 0.0;
    case Kind::Arctan: return coefficient * std::atan(x);
  }
  return 0.0;
}

bool GroundTruth::delta(std::size_t item, std::size_t variable) const {
  for (const auto& t : terms[item]) {
    if (t.variable == variable) return true;
  }
  return false;
}

double GroundTruth::dif_part(std::size_t item, const CovariateSet& x, std::size_t person) const {
  double d = 0.0;
  for (const auto& t : terms[item]) d += t.evaluate(x.value(person, t.variable));
  return d;
}

double GroundTruth::difficulty(std::size_t item, const CovariateSet& x, std::size_t person) const {
  return base_difficulties[item] + dif_part(item, x, person);
}

SimulatedData generate(const ScenarioSpec& spec) {
  if (spec.scenario != Scenario::Null && !(spec.strength > 0)) {
    throw std::invalid_argument("DIF strength must be positive");
  }
  if (spec.items < 4) throw std::invalid_argument("simulation scenarios need at least 4 items");
  const std::size_t P = spec.persons, I = spec.items;
  auto layout = scenario_layout(spec.scenario, spec.strength);

  auto rng = make_rng({spec.seed, 0x73696d75ULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  GroundTruth truth;
  truth.abilities.resize(P);
  for (auto& t : truth.abilities) t = normal(rng);
  truth.base_difficulties.resize(I);
  for (auto& b : truth.base_difficulties) b = normal(rng);
  truth.terms.assign(I, {});
  for (std::size_t i = 0; i < layout.terms.size(); ++i) truth.terms[i] = layout.terms[i];
  truth.variables = layout.columns.size();

  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> five(1, 5);
  for (auto& column : layout.columns) {
    column.values.resize(P);
    for (auto& v : column.values) {
      switch (column.kind) {
        case CovariateKind::Binary: v = coin(rng) ? 1.0 : 0.0; break;
        case CovariateKind::Ordinal: v = five(rng); break;
        default: v = normal(rng); break;
      }
    }
  }
  CovariateSet covariates(P, std::move(layout.columns));

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::uint8_t> y(P * I);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t i = 0; i < I; ++i) {
      const double pi = predict_probability(truth.abilities[p], truth.difficulty(i, covariates, p));
      y[p * I + i] = unif(rng) < pi ? 1 : 0;
    }
  }
  return {ResponseMatrix(P, I, std::move(y)), std::move(covariates), std::move(truth)};
}

double dif_strength(const GroundTruth& truth, const CovariateSet& covariates) {
  double total = 0.0;
  int items = 0;
  const auto P = covariates.persons();
  for (std::size_t i = 0; i < truth.terms.size(); ++i) {
    if (!truth.has_dif(i)) continue;
    double mean = 0.0, sq = 0.0;
    for (std::size_t p = 0; p < P; ++p) mean += truth.dif_part(i, covariates, p);
    mean /= static_cast<double>(P);
    for (std::size_t p = 0; p < P; ++p) {
      const double d = truth.dif_part(i, covariates, p) - mean;
      sq += d * d;
    }
    total += sq / static_cast<double>(P);
    ++items;
  }
  if (items == 0) throw std::domain_error("DIF strength is undefined without DIF items");
  return total / items;
}

double population_dif_strength(Scenario scenario, double strength) {
  const auto layout = scenario_layout(scenario, strength);
  if (layout.terms.empty()) throw std::domain_error("DIF strength is undefined without DIF items");
  double total = 0.0;
  for (std::size_t i = 0; i < layout.terms.size(); ++i) {
    // terms of one item act on distinct, independent covariates
    double v = 0.0;
    for (std::size_t k = 0; k < layout.terms[i].size(); ++k) {
      const double a = layout.terms[i][k].coefficient;
      v += a * a * layout.unit_variance[i][k];
    }
    total += v;
  }
  return total / static_cast<double>(layout.terms.size());
}

Estimate Estimate::from_fit(const ModelFit& fit, std::size_t variables) {
  Estimate e;
  e.fit = fit;
  e.delta.assign(fit.trees.size(), std::vector<bool>(variables, false));
  for (std::size_t i = 0; i < fit.trees.size(); ++i) {
    for (std::size_t j = 0; j < variables; ++j) e.delta[i][j] = fit.trees[i].uses_variable(j);
  }
  return e;
}

Estimate Estimate::from_flags(const std::vector<bool>& flagged) {
  Estimate e;
  for (bool f : flagged) e.delta.push_back({f});
  return e;
}

Metrics compute_metrics(const Estimate& estimate, const GroundTruth& truth, const CovariateSet& covariates) {
  const std::size_t I = truth.terms.size();
  const std::size_t m = truth.variables;
  if (estimate.delta.size() != I) throw std::invalid_argument("estimate and truth disagree on the number of items");
  Metrics out;
  if (estimate.fit) {
    const auto& fit = *estimate.fit;
    const std::size_t P = truth.abilities.size();
    if (fit.abilities.size() != P || fit.trees.size() != I) {
      throw std::invalid_argument("fit and truth disagree in dimensions");
    }
    // estimated scale normalized so the mean difficulty over persons and items is 0
    double shift = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t i = 0; i < I; ++i) shift -= fit.trees[i].difficulty(covariates, p);
    }
    shift /= static_cast<double>(P * I);
    double sp = 0.0, si = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double e = fit.abilities[p] + shift - truth.abilities[p];
      sp += e * e;
      for (std::size_t i = 0; i < I; ++i) {
        const double d = fit.trees[i].difficulty(covariates, p) + shift - truth.difficulty(i, covariates, p);
        si += d * d;
      }
    }
    out.mse_persons = sp / static_cast<double>(P);
    out.mse_items = si / static_cast<double>(P * I);
  }
  int tp = 0, pos = 0, fp = 0, neg = 0, tpv = 0, posv = 0, fpv = 0, negv = 0;
  for (std::size_t i = 0; i < I; ++i) {
    if (estimate.delta[i].size() != m) throw std::invalid_argument("estimate has the wrong number of variables");
    bool flagged = false;
    for (std::size_t j = 0; j < m; ++j) {
      const bool hat = estimate.delta[i][j];
      flagged = flagged || hat;
      if (truth.delta(i, j)) {
        ++posv;
        tpv += hat;
      } else {
        ++negv;
        fpv += hat;
      }
    }
    if (truth.has_dif(i)) {
      ++pos;
      tp += flagged;
    } else {
      ++neg;
      fp += flagged;
    }
  }
  out.tpr_i = rate(tp, pos);
  out.fpr_i = rate(fp, neg);
  out.tpr_iv = rate(tpv, posv);
  out.fpr_iv = rate(fpv, negv);
  return out;
}

const StudyRow* StudyResult::mean_row(const std::string& scenario, const std::string& strength,
                                      const std::string& method) const {
  for (const auto& r : rows) {
    if (r.replication < 0 && r.scenario == scenario && r.strength == strength && r.method == method) return &r;
  }
  return nullptr;
}

StudyResult run_study(const StudyConfig& config) {
  if (config.replications < 1) throw std::invalid_argument("at least one replication is required");
  for (const auto& m : config.methods) {
    if (m != "trees" && m != "mh" && m != "logistic" && m != "lord") {
      throw std::invalid_argument("unknown method '" + m + "'");
    }
  }
  StudyResult result;
  for (const auto& [scenario, strength_name] : config.cells) {
    const double c = scenario == Scenario::Null ? 0.0 : strength_value(strength_name);
    std::vector<std::string> methods;
    for (const auto& m : config.methods) {
      if (m != "trees" && !is_group_scenario(scenario)) {
        result.notices.push_back("method " + m + " skipped for scenario " + to_string(scenario) +
                                 ": it needs a single grouping covariate");
        continue;
      }
      methods.push_back(m);
    }
    const auto reps = static_cast<std::size_t>(config.replications);
    std::vector<std::vector<StudyRow>> per_rep(reps);
    parallel_for(reps, config.threads, [&](std::size_t r) {
      ScenarioSpec spec;
      spec.scenario = scenario;
      spec.strength = c;
      spec.persons = config.persons;
      spec.items = config.items;
      spec.seed = derive_seed({config.seed, static_cast<std::uint64_t>(scenario), r});
      const auto data = generate(spec);
      for (const auto& method : methods) {
        StudyRow row;
        row.scenario = to_string(scenario);
        row.strength = strength_name;
        row.c = c;
        row.method = method;
        row.replication = static_cast<int>(r);
        if (method == "trees") {
          GrowthConfig growth = config.growth;
          growth.seed = derive_seed({config.seed, static_cast<std::uint64_t>(scenario), r, 0x74726565ULL});
          growth.threads = 1;
          const auto grown = grow_forest(data.responses, data.covariates, growth);
          row.metrics = compute_metrics(Estimate::from_fit(grown.fit, data.covariates.size()), data.truth,
                                        data.covariates);
          row.splits = static_cast<double>(grown.splits.size());
        } else {
          GroupAssignment groups;
          for (double v : data.covariates[0].values) groups.labels.push_back(static_cast<int>(v));
          groups.reference = *std::min_element(groups.labels.begin(), groups.labels.end());
          DetectionResult det;
          if (method == "mh") det = mantel_haenszel(data.responses, groups, config.alpha);
          if (method == "logistic") det = logistic_dif(data.responses, groups, config.alpha, config.growth.ridge);
          if (method == "lord") det = lord_chi2(data.responses, groups, config.alpha, config.growth.ridge);
          row.metrics = compute_metrics(Estimate::from_flags(det.flagged()), data.truth, data.covariates);
        }
        per_rep[r].push_back(std::move(row));
      }
    });
    for (std::size_t k = 0; k < methods.size(); ++k) {
      std::vector<double> mp, mi, tp, fp, tpv, fpv, sp;
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& row = per_rep[r][k];
        result.rows.push_back(row);
        mp.push_back(row.metrics.mse_persons);
        mi.push_back(row.metrics.mse_items);
        tp.push_back(row.metrics.tpr_i);
        fp.push_back(row.metrics.fpr_i);
        tpv.push_back(row.metrics.tpr_iv);
        fpv.push_back(row.metrics.fpr_iv);
        sp.push_back(row.splits);
      }
      StudyRow mean = per_rep[0][k];
      mean.replication = -1;
      mean.metrics = {mean_of_defined(mp),  mean_of_defined(mi),  mean_of_defined(tp),
                      mean_of_defined(fp),  mean_of_defined(tpv), mean_of_defined(fpv)};
      mean.splits = mean_of_defined(sp);
      result.rows.push_back(mean);
    }
  }
  return result;
}

}  // namespace ift
