#include "ift/tree_growth.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ift/parallel.h"
#include "ift/rng.h"

namespace ift {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Persons of one node of one item, with abilities collapsed into groups of equal value.
// Extreme persons carry group -1: they sit on the likelihood boundary and add nothing.
struct NodeData {
  std::vector<std::size_t> members;
  std::vector<int> group;
  std::vector<std::uint8_t> y;
  std::vector<double> theta;
  std::vector<double> n_total;
  std::vector<double> s_total;
};

NodeData build_node(const ModelFit& fit, std::size_t item, std::vector<std::size_t> members,
                    const ResponseMatrix& responses) {
  NodeData node;
  node.members = std::move(members);
  for (auto p : node.members) {
    if (!fit.is_extreme(p)) node.theta.push_back(fit.abilities[p]);
  }
  std::sort(node.theta.begin(), node.theta.end());
  node.theta.erase(std::unique(node.theta.begin(), node.theta.end()), node.theta.end());
  node.n_total.assign(node.theta.size(), 0.0);
  node.s_total.assign(node.theta.size(), 0.0);
  node.group.reserve(node.members.size());
  node.y.reserve(node.members.size());
  for (auto p : node.members) {
    const auto y = responses(p, item);
    node.y.push_back(y);
    if (fit.is_extreme(p)) {
      node.group.push_back(-1);
      continue;
    }
    const auto g = static_cast<int>(std::lower_bound(node.theta.begin(), node.theta.end(), fit.abilities[p]) -
                                    node.theta.begin());
    node.group.push_back(g);
    node.n_total[static_cast<std::size_t>(g)] += 1.0;
    node.s_total[static_cast<std::size_t>(g)] += y;
  }
  return node;
}

struct Optimum {
  double gamma = 0.0;
  double value = 0.0;
};

// Maximizes sum_k [s_k (theta_k - g) - n_k log(1 + exp(theta_k - g))] - ridge g^2 / 2 over g.
Optimum maximize_difficulty(const std::vector<double>& theta, const double* n, const double* s, double ridge,
                            double start) {
  const std::size_t K = theta.size();
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) total += n[k];
  if (total == 0.0) return {0.0, 0.0};

  double g = start;
  double lo = -kInf, hi = kInf;
  for (int it = 0; it < 200; ++it) {
    double grad = -ridge * g;
    double curv = ridge;
    for (std::size_t k = 0; k < K; ++k) {
      if (n[k] == 0.0) continue;
      const double pi = predict_probability(theta[k], g);
      grad -= s[k] - n[k] * pi;
      curv += n[k] * pi * (1.0 - pi);
    }
    // grad is decreasing in g
    if (grad > 0) lo = g; else hi = g;
    double next = curv > 0 ? g + std::clamp(grad / curv, -5.0, 5.0) : g + (grad > 0 ? 5.0 : -5.0);
    if (std::isfinite(lo) && std::isfinite(hi) && !(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = next - g;
    g = next;
    if (std::abs(g) > 60.0) {
      throw ConvergenceError("split statistic: node difficulty diverges (pure node without ridge)");
    }
    if (std::abs(step) < 1e-12 * std::max(1.0, std::abs(g))) break;
    if (it == 199) throw ConvergenceError("split statistic: difficulty estimate did not converge");
  }
  double value = -0.5 * ridge * g * g;
  for (std::size_t k = 0; k < K; ++k) {
    if (n[k] == 0.0) continue;
    const double eta = std::clamp(theta[k] - g, -kEtaClamp, kEtaClamp);
    value += s[k] * eta - n[k] * log1pexp(eta);
  }
  return {g, value};
}

double lr_statistic(double split_value, double parent_value) {
  return std::max(0.0, 2.0 * (split_value - parent_value));
}

// Candidate structure of one variable within a node; invariant under permutations of x_j.
struct CandidateLayout {
  bool nominal = false;
  // ordered: sorted values of the members, and the split positions (left size) with thresholds
  std::vector<double> sorted_values;
  std::vector<std::size_t> positions;
  // nominal: levels present and, per candidate, a bitmask over those levels forming the left subset
  std::vector<int> levels;
  std::vector<std::uint32_t> masks;
  std::vector<Condition> conditions;
  std::vector<std::size_t> left_sizes;
  std::size_t n = 0;
};

CandidateLayout layout_candidates(const CovariateSet& covariates, const std::vector<std::size_t>& members,
                                  std::size_t variable, std::size_t min_node_size) {
  if (variable >= covariates.size()) {
    throw std::invalid_argument("unknown covariate index " + std::to_string(variable));
  }
  const auto& column = covariates[variable];
  CandidateLayout out;
  out.n = members.size();
  if (members.size() < 2 * min_node_size) return out;

  if (column.ordered()) {
    out.sorted_values.reserve(members.size());
    for (auto p : members) out.sorted_values.push_back(column.values[p]);
    std::sort(out.sorted_values.begin(), out.sorted_values.end());
    const auto& v = out.sorted_values;
    for (std::size_t t = min_node_size; t + min_node_size <= v.size(); ++t) {
      if (!(v[t - 1] < v[t])) continue;
      Condition c;
      c.variable = variable;
      c.threshold = 0.5 * (v[t - 1] + v[t]);
      out.positions.push_back(t);
      out.conditions.push_back(c);
      out.left_sizes.push_back(t);
    }
    return out;
  }

  out.nominal = true;
  std::vector<std::size_t> counts(static_cast<std::size_t>(column.levels) + 1, 0);
  for (auto p : members) ++counts[static_cast<std::size_t>(column.values[p])];
  for (int l = 1; l <= column.levels; ++l) {
    if (counts[static_cast<std::size_t>(l)] > 0) out.levels.push_back(l);
  }
  const std::size_t k = out.levels.size();
  if (k > static_cast<std::size_t>(kMaxNominalLevels)) {
    throw std::invalid_argument("nominal covariate '" + column.name + "' has " + std::to_string(k) +
                                " levels; at most " + std::to_string(kMaxNominalLevels) + " are supported");
  }
  if (k < 2) return out;
  struct Entry {
    std::vector<int> subset;
    std::uint32_t mask;
    std::size_t size;
  };
  std::vector<Entry> entries;
  // the left subset always holds the smallest present level; the full set is excluded
  const std::uint32_t others = (1u << (k - 1)) - 1u;
  for (std::uint32_t bits = 0; bits < others; ++bits) {
    const std::uint32_t mask = 1u | (bits << 1);
    Entry e{{}, mask, 0};
    for (std::size_t r = 0; r < k; ++r) {
      if (mask & (1u << r)) {
        e.subset.push_back(out.levels[r]);
        e.size += counts[static_cast<std::size_t>(out.levels[r])];
      }
    }
    if (e.size >= min_node_size && members.size() - e.size >= min_node_size) entries.push_back(std::move(e));
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.subset < b.subset; });
  for (auto& e : entries) {
    Condition c;
    c.variable = variable;
    c.nominal = true;
    c.subset = e.subset;
    out.masks.push_back(e.mask);
    out.conditions.push_back(std::move(c));
    out.left_sizes.push_back(e.size);
  }
  return out;
}

struct Evaluation {
  std::vector<double> statistics;
  std::size_t argmax = 0;
  double max = 0.0;
  Optimum left, right;
};

// Evaluates every candidate when member at sweep position t (ordered) or member m (nominal)
// carries covariate value assignment described by `order`:
//   ordered: order[t] is the member index receiving the t-th smallest value;
//   nominal: order[m] is the index into `level_of` giving member m's level slot.
class Evaluator {
 public:
  Evaluator(const NodeData& node, const CandidateLayout& layout, double ridge)
      : node_(node), layout_(layout), ridge_(ridge), K_(node.theta.size()) {
    parent_ = maximize_difficulty(node_.theta, node_.n_total.data(), node_.s_total.data(), ridge_, 0.0);
  }

  const Optimum& parent() const { return parent_; }

  Evaluation ordered(const std::vector<std::size_t>& order, bool keep_all) const {
    Evaluation ev;
    if (keep_all) ev.statistics.reserve(layout_.positions.size());
    std::vector<double> nl(K_, 0.0), sl(K_, 0.0), nr(K_), sr(K_);
    std::size_t added = 0;
    double gl = parent_.gamma, gr = parent_.gamma;
    bool first = true;
    for (std::size_t c = 0; c < layout_.positions.size(); ++c) {
      const std::size_t t = layout_.positions[c];
      for (; added < t; ++added) {
        const auto m = order[added];
        const int g = node_.group[m];
        if (g < 0) continue;
        nl[static_cast<std::size_t>(g)] += 1.0;
        sl[static_cast<std::size_t>(g)] += node_.y[m];
      }
      for (std::size_t k = 0; k < K_; ++k) {
        nr[k] = node_.n_total[k] - nl[k];
        sr[k] = node_.s_total[k] - sl[k];
      }
      const Optimum left = maximize_difficulty(node_.theta, nl.data(), sl.data(), ridge_, gl);
      const Optimum right = maximize_difficulty(node_.theta, nr.data(), sr.data(), ridge_, gr);
      gl = left.gamma;
      gr = right.gamma;
      const double stat = lr_statistic(left.value + right.value, parent_.value);
      if (keep_all) ev.statistics.push_back(stat);
      if (first || stat > ev.max) {
        ev.max = stat;
        ev.argmax = c;
        ev.left = left;
        ev.right = right;
        first = false;
      }
    }
    return ev;
  }

  // level_slot[m]: position of member m's level within layout_.levels
  Evaluation nominal(const std::vector<std::size_t>& level_slot, bool keep_all) const {
    Evaluation ev;
    const std::size_t L = layout_.levels.size();
    std::vector<double> n_lv(L * K_, 0.0), s_lv(L * K_, 0.0);
    for (std::size_t m = 0; m < node_.members.size(); ++m) {
      const int g = node_.group[m];
      if (g < 0) continue;
      n_lv[level_slot[m] * K_ + static_cast<std::size_t>(g)] += 1.0;
      s_lv[level_slot[m] * K_ + static_cast<std::size_t>(g)] += node_.y[m];
    }
    std::vector<double> nl(K_), sl(K_), nr(K_), sr(K_);
    bool first = true;
    for (std::size_t c = 0; c < layout_.masks.size(); ++c) {
      std::fill(nl.begin(), nl.end(), 0.0);
      std::fill(sl.begin(), sl.end(), 0.0);
      for (std::size_t r = 0; r < L; ++r) {
        if (!(layout_.masks[c] & (1u << r))) continue;
        for (std::size_t k = 0; k < K_; ++k) {
          nl[k] += n_lv[r * K_ + k];
          sl[k] += s_lv[r * K_ + k];
        }
      }
      for (std::size_t k = 0; k < K_; ++k) {
        nr[k] = node_.n_total[k] - nl[k];
        sr[k] = node_.s_total[k] - sl[k];
      }
      const Optimum left = maximize_difficulty(node_.theta, nl.data(), sl.data(), ridge_, parent_.gamma);
      const Optimum right = maximize_difficulty(node_.theta, nr.data(), sr.data(), ridge_, parent_.gamma);
      const double stat = lr_statistic(left.value + right.value, parent_.value);
      if (keep_all) ev.statistics.push_back(stat);
      if (first || stat > ev.max) {
        ev.max = stat;
        ev.argmax = c;
        ev.left = left;
        ev.right = right;
        first = false;
      }
    }
    return ev;
  }

 private:
  const NodeData& node_;
  const CandidateLayout& layout_;
  double ridge_;
  std::size_t K_;
  Optimum parent_;
};

std::vector<std::size_t> observed_order(const CovariateSet& covariates, const NodeData& node, std::size_t variable) {
  std::vector<std::size_t> order(node.members.size());
  std::iota(order.begin(), order.end(), 0);
  const auto& v = covariates[variable].values;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[node.members[a]] < v[node.members[b]]; });
  return order;
}

std::vector<std::size_t> observed_level_slots(const CovariateSet& covariates, const NodeData& node,
                                              const CandidateLayout& layout, std::size_t variable) {
  std::vector<std::size_t> slot(node.members.size());
  const auto& v = covariates[variable].values;
  for (std::size_t m = 0; m < node.members.size(); ++m) {
    const int level = static_cast<int>(v[node.members[m]]);
    slot[m] = static_cast<std::size_t>(std::lower_bound(layout.levels.begin(), layout.levels.end(), level) -
                                       layout.levels.begin());
  }
  return slot;
}

const Leaf& leaf_at(const ModelFit& fit, std::size_t item, std::size_t leaf) {
  if (item >= fit.trees.size()) throw std::invalid_argument("item index out of range");
  if (leaf >= fit.trees[item].leaves.size()) throw std::invalid_argument("leaf index out of range");
  return fit.trees[item].leaves[leaf];
}

struct PreparedTest {
  NodeData node;
  CandidateLayout layout;
};

PreparedTest prepare(const ModelFit& fit, std::size_t item, std::size_t leaf, std::size_t variable,
                     const GrowthConfig& config, const ResponseMatrix& responses, const CovariateSet& covariates) {
  const auto& node = leaf_at(fit, item, leaf).node;
  auto members = node_members(covariates, node);
  PreparedTest prep{build_node(fit, item, members, responses),
                    layout_candidates(covariates, members, variable, config.min_node_size)};
  return prep;
}

SplitTest to_split_test(std::size_t item, std::size_t leaf, std::size_t variable, const CandidateLayout& layout,
                        Evaluation ev) {
  SplitTest t;
  t.item = item;
  t.leaf = leaf;
  t.variable = variable;
  t.candidates = layout.conditions;
  t.statistics = std::move(ev.statistics);
  t.argmax = ev.argmax;
  t.statistic = ev.max;
  t.left_difficulty = ev.left.gamma;
  t.right_difficulty = ev.right.gamma;
  t.left_size = layout.left_sizes[ev.argmax];
  t.right_size = layout.n - t.left_size;
  return t;
}

Evaluation observed(const Evaluator& eval, const PreparedTest& prep, const CovariateSet& covariates,
                    std::size_t variable) {
  if (prep.layout.nominal) {
    return eval.nominal(observed_level_slots(covariates, prep.node, prep.layout, variable), true);
  }
  return eval.ordered(observed_order(covariates, prep.node, variable), true);
}

}  // namespace

void GrowthConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  if (permutations < 99) throw std::invalid_argument("at least 99 permutations are required");
  if (min_node_size < 2) throw std::invalid_argument("min_node_size must be at least 2");
  if (ridge < 0) throw std::invalid_argument("ridge weight must be non-negative");
}

std::vector<std::size_t> node_members(const CovariateSet& covariates, const NodeDescriptor& node) {
  std::vector<std::size_t> members;
  for (std::size_t p = 0; p < covariates.persons(); ++p) {
    if (node.contains(covariates, p)) members.push_back(p);
  }
  return members;
}

std::vector<SplitCandidate> enumerate_splits(const CovariateSet& covariates, const NodeDescriptor& parent,
                                             std::size_t variable, std::size_t min_node_size) {
  if (variable >= covariates.size()) {
    throw std::invalid_argument("unknown covariate index " + std::to_string(variable));
  }
  const auto members = node_members(covariates, parent);
  const auto layout = layout_candidates(covariates, members, variable, min_node_size);
  std::vector<SplitCandidate> out;
  for (std::size_t c = 0; c < layout.conditions.size(); ++c) {
    SplitCandidate cand;
    cand.parent = parent;
    cand.variable = variable;
    cand.split = layout.conditions[c];
    cand.left_size = layout.left_sizes[c];
    cand.right_size = members.size() - cand.left_size;
    out.push_back(std::move(cand));
  }
  return out;
}

double split_statistic(const ModelFit& fit, const SplitCandidate& candidate, const ResponseMatrix& responses,
                       const CovariateSet& covariates) {
  if (candidate.item >= fit.trees.size()) throw std::invalid_argument("item index out of range");
  const auto members = node_members(covariates, candidate.parent);
  const NodeData node = build_node(fit, candidate.item, members, responses);
  const std::size_t K = node.theta.size();
  std::vector<double> nl(K, 0.0), sl(K, 0.0), nr(K, 0.0), sr(K, 0.0);
  std::size_t left = 0;
  for (std::size_t m = 0; m < members.size(); ++m) {
    const bool goes_left = candidate.split.holds(covariates.value(members[m], candidate.split.variable)) ==
                           (candidate.split.direction == 0);
    if (goes_left) ++left;
    const int g = node.group[m];
    if (g < 0) continue;
    auto& n = goes_left ? nl : nr;
    auto& s = goes_left ? sl : sr;
    n[static_cast<std::size_t>(g)] += 1.0;
    s[static_cast<std::size_t>(g)] += node.y[m];
  }
  if (left == 0 || left == members.size()) throw std::invalid_argument("split candidate leaves a child empty");
  const auto parent = maximize_difficulty(node.theta, node.n_total.data(), node.s_total.data(), fit.ridge, 0.0);
  const auto l = maximize_difficulty(node.theta, nl.data(), sl.data(), fit.ridge, parent.gamma);
  const auto r = maximize_difficulty(node.theta, nr.data(), sr.data(), fit.ridge, parent.gamma);
  return lr_statistic(l.value + r.value, parent.value);
}

std::optional<SplitTest> max_statistic(const ModelFit& fit, std::size_t item, std::size_t leaf, std::size_t variable,
                                       const GrowthConfig& config, const ResponseMatrix& responses,
                                       const CovariateSet& covariates) {
  const auto prep = prepare(fit, item, leaf, variable, config, responses, covariates);
  if (prep.layout.conditions.empty()) return std::nullopt;
  const Evaluator eval(prep.node, prep.layout, fit.ridge);
  return to_split_test(item, leaf, variable, prep.layout, observed(eval, prep, covariates, variable));
}

SplitTest permutation_test(const ModelFit& fit, std::size_t item, std::size_t leaf, std::size_t variable,
                           const GrowthConfig& config, const ResponseMatrix& responses,
                           const CovariateSet& covariates) {
  config.validate();
  const auto prep = prepare(fit, item, leaf, variable, config, responses, covariates);
  if (prep.layout.conditions.empty()) {
    throw std::invalid_argument("permutation_test: variable has no admissible split in this node");
  }
  const Evaluator eval(prep.node, prep.layout, fit.ridge);
  SplitTest test = to_split_test(item, leaf, variable, prep.layout, observed(eval, prep, covariates, variable));

  const std::uint64_t key = fit.trees[item].leaves[leaf].key;
  const std::size_t n = prep.node.members.size();
  const auto B = static_cast<std::size_t>(config.permutations);
  std::vector<double> permuted(B, 0.0);
  std::vector<std::size_t> base_slots;
  if (prep.layout.nominal) base_slots = observed_level_slots(covariates, prep.node, prep.layout, variable);

  parallel_for(B, config.threads, [&](std::size_t b) {
    auto rng = make_rng({config.seed, item, key, variable, b});
    if (prep.layout.nominal) {
      auto slots = base_slots;
      std::shuffle(slots.begin(), slots.end(), rng);
      permuted[b] = eval.nominal(slots, false).max;
    } else {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      permuted[b] = eval.ordered(order, false).max;
    }
  });

  // relative slack absorbs summation-order noise between identical partitions
  const double bar = test.statistic - 1e-10 * std::max(1.0, test.statistic);
  std::size_t exceed = 0;
  for (double t : permuted) exceed += t >= bar ? 1 : 0;
  test.permutations = config.permutations;
  test.p_value = static_cast<double>(1 + exceed) / static_cast<double>(B + 1);
  return test;
}

GrowthResult grow_forest(const ResponseMatrix& responses, const CovariateSet& covariates, const GrowthConfig& config) {
  config.validate();
  if (covariates.size() == 0) throw std::invalid_argument("tree growing needs at least one covariate");
  if (covariates.persons() != responses.persons()) {
    throw std::invalid_argument("covariates and responses disagree on the number of persons");
  }
  const std::size_t I = responses.items();
  const std::size_t m = covariates.size();
  const double level = config.alpha / static_cast<double>(m);
  const std::size_t max_splits = config.max_splits > 0 ? config.max_splits : 10 * I;

  FitOptions options;
  options.ridge = config.ridge;

  GrowthResult result;
  try {
    result.fit = fit_model(responses, covariates, rasch_trees(I), options);
  } catch (const ConvergenceError& e) {
    throw GrowthError(e, {});
  }

  for (int iteration = 1;; ++iteration) {
    if (result.splits.size() >= max_splits) {
      result.stop_reason = "maximum number of splits reached";
      break;
    }
    struct Task {
      std::size_t item, leaf, variable;
    };
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < I; ++i) {
      for (std::size_t l = 0; l < result.fit.trees[i].leaves.size(); ++l) {
        for (std::size_t j = 0; j < m; ++j) tasks.push_back({i, l, j});
      }
    }
    std::vector<std::optional<SplitTest>> found(tasks.size());
    try {
      parallel_for(tasks.size(), config.threads, [&](std::size_t k) {
        found[k] = max_statistic(result.fit, tasks[k].item, tasks[k].leaf, tasks[k].variable, config, responses,
                                 covariates);
      });
    } catch (const ConvergenceError& e) {
      throw GrowthError(e, result.splits);
    }
    // tasks are ordered by item, leaf, variable, so strict > keeps the earliest on ties
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      if (!found[k]) continue;
      if (!best || found[k]->statistic > found[*best]->statistic) best = k;
    }
    if (!best) {
      result.stop_reason = "no admissible split remains";
      break;
    }
    const auto& task = tasks[*best];
    SplitTest test;
    try {
      test = permutation_test(result.fit, task.item, task.leaf, task.variable, config, responses, covariates);
    } catch (const ConvergenceError& e) {
      throw GrowthError(e, result.splits);
    }

    SplitRecord record;
    record.iteration = iteration;
    record.item = task.item;
    record.node_key = result.fit.trees[task.item].leaves[task.leaf].key;
    record.variable = task.variable;
    record.split = test.best();
    record.statistic = test.statistic;
    record.p_value = test.p_value;
    record.permutations = test.permutations;
    record.left_size = test.left_size;
    record.right_size = test.right_size;

    if (!(test.p_value < level)) {
      result.final_test = record;
      result.stop_reason = "strongest split not significant";
      break;
    }
    result.splits.push_back(record);
    auto trees = result.fit.trees;
    trees[task.item].split_leaf(task.leaf, test.best(), test.left_difficulty, test.right_difficulty);
    try {
      result.fit = fit_model(responses, covariates, std::move(trees), options, result.fit.abilities);
    } catch (const ConvergenceError& e) {
      throw GrowthError(e, result.splits);
    }
  }
  return result;
}

}  // namespace ift
