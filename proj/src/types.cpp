#include "ift/types.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ift {

ResponseMatrix::ResponseMatrix(std::size_t persons, std::size_t items)
    : persons_(persons), items_(items), values_(persons * items, 0) {
  validate();
}

ResponseMatrix::ResponseMatrix(std::size_t persons, std::size_t items, std::vector<std::uint8_t> values)
    : persons_(persons), items_(items), values_(std::move(values)) {
  if (values_.size() != persons_ * items_) {
    throw std::invalid_argument("response matrix: expected " + std::to_string(persons_ * items_) +
                                " cells, got " + std::to_string(values_.size()));
  }
  validate();
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (values_[k] > 1) {
      std::ostringstream msg;
      msg << "response matrix: entry (" << k / items_ << ", " << k % items_ << ") is not 0/1";
      throw std::invalid_argument(msg.str());
    }
  }
}

void ResponseMatrix::validate() const {
  if (persons_ < 2 || items_ < 2) {
    throw std::invalid_argument("response matrix needs at least 2 persons and 2 items");
  }
}

void ResponseMatrix::set(std::size_t p, std::size_t i, std::uint8_t y) {
  if (y > 1) throw std::invalid_argument("response must be 0 or 1");
  values_.at(p * items_ + i) = y;
}

int ResponseMatrix::score(std::size_t p) const {
  int s = 0;
  for (std::size_t i = 0; i < items_; ++i) s += values_[p * items_ + i];
  return s;
}

ResponseMatrix ResponseMatrix::subset_persons(const std::vector<std::size_t>& rows) const {
  std::vector<std::uint8_t> out;
  out.reserve(rows.size() * items_);
  for (auto p : rows) {
    out.insert(out.end(), values_.begin() + static_cast<std::ptrdiff_t>(p * items_),
               values_.begin() + static_cast<std::ptrdiff_t>((p + 1) * items_));
  }
  return ResponseMatrix(rows.size(), items_, std::move(out));
}

const char* to_string(CovariateKind kind) {
  switch (kind) {
    case CovariateKind::Binary: return "binary";
    case CovariateKind::Ordinal: return "ordinal";
    case CovariateKind::Metric: return "metric";
    case CovariateKind::Nominal: return "nominal";
  }
  return "metric";
}

CovariateKind covariate_kind_from_string(const std::string& tag) {
  if (tag == "binary") return CovariateKind::Binary;
  if (tag == "ordinal") return CovariateKind::Ordinal;
  if (tag == "metric") return CovariateKind::Metric;
  if (tag == "nominal") return CovariateKind::Nominal;
  throw std::invalid_argument("unknown covariate kind '" + tag + "'");
}

CovariateSet::CovariateSet(std::size_t persons, std::vector<Covariate> columns)
    : persons_(persons), columns_(std::move(columns)) {
  for (const auto& c : columns_) {
    if (c.values.size() != persons_) {
      throw std::invalid_argument("covariate '" + c.name + "' has " + std::to_string(c.values.size()) +
                                  " values, expected " + std::to_string(persons_));
    }
    for (double v : c.values) {
      if (!std::isfinite(v)) throw std::invalid_argument("covariate '" + c.name + "' has a non-finite value");
      if (c.kind == CovariateKind::Binary && v != 0.0 && v != 1.0) {
        throw std::invalid_argument("binary covariate '" + c.name + "' must be 0/1");
      }
      if (c.kind == CovariateKind::Nominal &&
          (v != std::floor(v) || v < 1.0 || v > static_cast<double>(c.levels))) {
        throw std::invalid_argument("nominal covariate '" + c.name + "' has a level outside 1.." +
                                    std::to_string(c.levels));
      }
    }
  }
}

CovariateSet CovariateSet::subset_persons(const std::vector<std::size_t>& rows) const {
  auto cols = columns_;
  for (auto& c : cols) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (auto p : rows) v.push_back(c.values[p]);
    c.values = std::move(v);
  }
  return CovariateSet(rows.size(), std::move(cols));
}

CovariateSet CovariateSet::with_column(std::size_t j, std::vector<double> values) const {
  auto cols = columns_;
  cols.at(j).values = std::move(values);
  return CovariateSet(persons_, std::move(cols));
}

bool Condition::test(double x) const {
  if (!nominal) return x > threshold;
  const int level = static_cast<int>(x);
  return !std::binary_search(subset.begin(), subset.end(), level);
}

bool Condition::same_split(const Condition& other) const {
  return variable == other.variable && nominal == other.nominal && threshold == other.threshold &&
         subset == other.subset;
}

bool NodeDescriptor::contains(const CovariateSet& x, std::size_t person) const {
  for (const auto& c : conditions) {
    if (!c.holds(x.value(person, c.variable))) return false;
  }
  return true;
}

ItemTree ItemTree::root(std::size_t item, double difficulty) {
  ItemTree t;
  t.item = item;
  t.leaves.push_back(Leaf{NodeDescriptor{}, difficulty, 1});
  return t;
}

std::size_t ItemTree::leaf_of(const CovariateSet& x, std::size_t person) const {
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    if (leaves[l].node.contains(x, person)) return l;
  }
  throw std::logic_error("item tree " + std::to_string(item) + " does not cover person " + std::to_string(person));
}

double ItemTree::difficulty(const CovariateSet& x, std::size_t person) const {
  return leaves[leaf_of(x, person)].difficulty;
}

void ItemTree::split_leaf(std::size_t index, Condition left_condition, double left_difficulty,
                          double right_difficulty) {
  Leaf parent = leaves.at(index);
  Leaf left = parent;
  Leaf right = parent;
  left_condition.direction = 0;
  Condition right_condition = left_condition;
  right_condition.direction = 1;
  left.node.conditions.push_back(std::move(left_condition));
  right.node.conditions.push_back(std::move(right_condition));
  left.difficulty = left_difficulty;
  right.difficulty = right_difficulty;
  // splitmix-style mixing keeps keys distinct along any path
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  left.key = mix(parent.key * 2);
  right.key = mix(parent.key * 2 + 1);
  leaves[index] = std::move(left);
  leaves.insert(leaves.begin() + static_cast<std::ptrdiff_t>(index) + 1, std::move(right));
}

bool ItemTree::uses_variable(std::size_t j) const {
  for (const auto& leaf : leaves) {
    for (const auto& c : leaf.node.conditions) {
      if (c.variable == j) return true;
    }
  }
  return false;
}

std::size_t ModelFit::parameter_count() const {
  std::size_t n = abilities.empty() ? 0 : abilities.size() - 1;
  for (const auto& t : trees) n += t.leaves.size();
  return n;
}

}  // namespace ift
