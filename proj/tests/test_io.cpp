#include <doctest.h>

#include <cmath>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "ift/io.h"

using namespace ift;

namespace {

const char* kSchema = R"({"id_column": "id", "covariates": [
  {"name": "gender", "kind": "binary"}, {"name": "age", "kind": "metric"},
  {"name": "semester", "kind": "metric"}, {"name": "elite", "kind": "binary"},
  {"name": "spon", "kind": "ordinal"}]})";

std::string spisa_covariates() {
  return "id,gender,age,semester,elite,spon\n"
         "a,0,21,3,0,2\n"
         "b,1,25,7,1,6\n"
         "c,1,30,12,0,1\n";
}

std::string spisa_responses() {
  return "id,i1,i2,i3\n"
         "c,1,1,0\n"
         "a,0,1,0\n"
         "b,1,0,1\n";
}

// item-19-shaped tree: gender first, then spon among males
ItemTree item19() {
  ItemTree t = ItemTree::root(18, 1.0);
  Condition gender;
  gender.variable = 0;
  gender.threshold = 0.5;
  t.split_leaf(0, gender, 2.665, 0.5);
  Condition spon;
  spon.variable = 4;
  spon.threshold = 1.5;
  t.split_leaf(1, spon, 1.155, 0.126);
  return t;
}

// minimal graph-language check: balanced braces, statements end in ';', edges refer to declared nodes
bool plausible_dot(const std::string& dot) {
  if (dot.rfind("digraph ", 0) != 0 || dot.back() != '\n') return false;
  int depth = 0;
  bool quoted = false;
  for (std::size_t k = 0; k < dot.size(); ++k) {
    const char c = dot[k];
    if (c == '"' && (k == 0 || dot[k - 1] != '\\')) quoted = !quoted;
    if (quoted) continue;
    if (c == '{') ++depth;
    if (c == '}') --depth;
    if (depth < 0) return false;
  }
  if (depth != 0 || quoted) return false;
  std::set<std::string> declared;
  std::istringstream in(dot);
  std::string line;
  std::getline(in, line);
  const std::regex node(R"re(^  (n\d+) \[.*\];$)re"),
      edge(R"re(^  (n\d+) -> (n\d+) \[label="(yes|no)"\];$)re"), attr(R"re(^  [a-z]+(=| \[).*;$)re");
  std::vector<std::pair<std::string, std::string>> edges;
  while (std::getline(in, line)) {
    std::smatch m;
    if (line == "}") continue;
    if (std::regex_match(line, m, edge)) {
      edges.emplace_back(m[1], m[2]);
    } else if (std::regex_match(line, m, node)) {
      declared.insert(m[1]);
    } else if (!std::regex_match(line, attr)) {
      return false;
    }
  }
  for (const auto& [a, b] : edges) {
    if (!declared.count(a) || !declared.count(b)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("minimal two-by-two dataset") {
  const auto d = parse_dataset("id,i1,i2\n1,0,1\n2,1,1\n", "id,x\n2,0.5\n1,1.5\n",
                               R"({"covariates":[{"name":"x","kind":"metric"}]})");
  CHECK(d.responses.persons() == 2);
  CHECK(d.responses.items() == 2);
  CHECK(d.responses(1, 0) == 1);
  CHECK(d.covariates.value(0, 0) == 1.5);
  CHECK(d.item_names == std::vector<std::string>{"i1", "i2"});
}

TEST_CASE("five typed covariates aligned by person id") {
  const auto d = parse_dataset(spisa_responses(), spisa_covariates(), kSchema);
  CHECK(d.covariates.size() == 5);
  CHECK(d.covariates[0].kind == CovariateKind::Binary);
  CHECK(d.covariates[4].kind == CovariateKind::Ordinal);
  CHECK(d.person_ids == std::vector<std::string>{"c", "a", "b"});
  CHECK(d.covariates.value(0, 1) == 30);
  CHECK(d.covariates.value(2, 4) == 6);
}

TEST_CASE("nominal levels map to codes") {
  const auto d = parse_dataset("id,a,b\n1,0,1\n2,1,0\n3,1,1\n", "id,f\n1,med\n2,law\n3,med\n",
                               R"({"covariates":[{"name":"f","kind":"nominal","levels":["law","med","econ"]}]})");
  CHECK(d.covariates[0].levels == 3);
  CHECK(d.covariates[0].values == std::vector<double>{2, 1, 2});
}

TEST_CASE("descriptive parse errors") {
  auto message = [](const std::string& r, const std::string& c, const std::string& s) {
    try {
      parse_dataset(r, c, s);
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  const std::string schema = R"({"covariates":[{"name":"x","kind":"metric"}]})";
  const std::string cov = "id,x\n1,0\n2,1\n";
  const auto bad_cell = message("id,i1,i2\n1,0,1\n2,2,1\n", cov, schema);
  CHECK(bad_cell.find(":3") != std::string::npos);
  CHECK(bad_cell.find("i1") != std::string::npos);
  CHECK(bad_cell.find("'2'") != std::string::npos);
  CHECK(message("id,i1,i2\n1,0,\n2,1,1\n", cov, schema).find("missing") != std::string::npos);
  CHECK(message("id,i1,i2\n1,0,1\n2,1\n", cov, schema).find("expected 3 fields") != std::string::npos);
  CHECK(message("id,i1,i2\n1,0,1\n2,1,1\n3,0,0\n", cov, schema).find("person rows") != std::string::npos);
  CHECK(message("id,i1,i2\n1,0,1\n2,1,1\n", cov, R"({"covariates":[{"name":"x","kind":"fuzzy"}]})")
            .find("fuzzy") != std::string::npos);
  CHECK(message("id,i1,i2\n1,0,1\n2,1,1\n", "id,x,y\n1,0,1\n2,1,1\n", schema).find("'y'") != std::string::npos);
  CHECK(message("id,i1,i2\n1,0,1\n2,1,1\n", "id,x\n1,0\n2,abc\n", schema).find("abc") != std::string::npos);
}

TEST_CASE("quoted CSV fields") {
  const auto t = parse_csv("a,b\n\"x, y\",\"say \"\"hi\"\"\"\n", "t");
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0][0] == "x, y");
  CHECK(t.rows[0][1] == "say \"hi\"");
  CHECK(t.lines[0] == 2);
  CHECK_THROWS_AS(parse_csv("a\n\"open\n", "t"), ParseError);
}

TEST_CASE("DOT rendering of a splitless tree") {
  const auto dot = export_dot(ItemTree::root(2, -0.4567));
  CHECK(dot.find("label=\"-0.457\"") != std::string::npos);
  CHECK(dot.find("->") == std::string::npos);
  CHECK(plausible_dot(dot));
}

TEST_CASE("DOT rendering of an item-19-shaped tree") {
  const std::vector<std::string> names{"gender", "age", "semester", "elite", "spon"};
  const auto dot = export_dot(item19(), names, "Item 19");
  CHECK(plausible_dot(dot));
  CHECK(dot.find("label=\"2.665\"") != std::string::npos);
  CHECK(dot.find("label=\"1.155\"") != std::string::npos);
  CHECK(dot.find("label=\"0.126\"") != std::string::npos);
  CHECK(dot.find("gender <= 0.5") != std::string::npos);
  CHECK(dot.find("spon <= 1.5") != std::string::npos);
  std::size_t yes = 0, no = 0;
  for (std::size_t k = 0; (k = dot.find("label=\"yes\"", k)) != std::string::npos; ++k) ++yes;
  for (std::size_t k = 0; (k = dot.find("label=\"no\"", k)) != std::string::npos; ++k) ++no;
  CHECK(yes == 2);
  CHECK(no == 2);
}

TEST_CASE("DOT rendering of a four-leaf tree") {
  ItemTree t = ItemTree::root(5, 0.0);
  Condition spon, gender, age;
  spon.variable = 4;
  spon.threshold = 2.5;
  gender.variable = 0;
  gender.threshold = 0.5;
  age.variable = 1;
  age.threshold = 23.5;
  t.split_leaf(0, spon, -0.2, 0.4);
  t.split_leaf(1, gender, 0.1, 0.9);
  t.split_leaf(2, age, 0.7, 1.3);
  REQUIRE(t.leaves.size() == 4);
  const auto dot = export_dot(t);
  CHECK(plausible_dot(dot));
  CHECK(dot.find("x5 <= 2.5") != std::string::npos);
  CHECK(dot.find("x2 <= 23.5") != std::string::npos);
}

TEST_CASE("nominal conditions render as subsets") {
  ItemTree t = ItemTree::root(0, 0.0);
  Condition c;
  c.nominal = true;
  c.subset = {1, 3};
  t.split_leaf(0, c, 0.25, -0.25);
  const auto dot = export_dot(t, {"field"});
  CHECK(dot.find("field in {1,3}") != std::string::npos);
  CHECK(plausible_dot(dot));
}

TEST_CASE("forest JSON round trip") {
  ForestDocument doc;
  doc.fit.trees = rasch_trees(20);
  doc.fit.trees[18] = item19();
  doc.fit.trees[3].split_leaf(0, [] {
    Condition c;
    c.nominal = true;
    c.variable = 2;
    c.subset = {1, 2};
    return c;
  }(), 0.1 / 3, 2.0 / 7);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (int p = 0; p < 50; ++p) doc.fit.abilities.push_back(n01(rng));
  doc.fit.abilities.back() = 0.0;
  doc.fit.extreme.assign(50, false);
  doc.fit.extreme[7] = true;
  doc.fit.log_likelihood = -1234.56789012345678;
  doc.fit.ridge = 1e-4;
  doc.fit.iterations = 9;
  SplitRecord rec;
  rec.iteration = 1;
  rec.item = 18;
  rec.node_key = 1;
  rec.split = doc.fit.trees[18].leaves[0].node.conditions[0];
  rec.split.direction = 0;
  rec.statistic = 17.25;
  rec.p_value = 1.0 / 301;
  rec.permutations = 300;
  rec.left_size = 22;
  rec.right_size = 28;
  doc.splits = {rec};
  doc.final_test = rec;
  doc.final_test->p_value = 0.4;
  doc.stop_reason = "strongest split not significant";
  doc.config.permutations = 300;
  doc.config.seed = 0xfedcba9876543210ULL;
  for (int i = 0; i < 20; ++i) doc.item_names.push_back("item" + std::to_string(i + 1));
  doc.variables = {{"gender", CovariateKind::Binary, 0}, {"age", CovariateKind::Metric, 0},
                   {"field", CovariateKind::Nominal, 4}};
  const auto text = export_forest_json(doc);
  const auto back = import_forest_json(text);
  CHECK(back == doc);
  CHECK(back.fit.trees[18].leaves[2].difficulty == 0.126);
  CHECK(back.fit.trees[18].leaves[1].node.conditions[1].threshold == 1.5);
  CHECK(back.fit.trees[3].leaves[0].difficulty == 0.1 / 3);
  CHECK(export_forest_json(back) == text);
}

TEST_CASE("a forest with zero splits has one leaf per item") {
  ForestDocument doc;
  doc.fit.trees = rasch_trees(4);
  doc.fit.abilities = {0.5, 0.0};
  const auto back = import_forest_json(export_forest_json(doc));
  REQUIRE(back.fit.trees.size() == 4);
  for (const auto& t : back.fit.trees) CHECK(t.leaves.size() == 1);
  CHECK_FALSE(back.final_test);
}

TEST_CASE("forest documents are versioned") {
  ForestDocument doc;
  doc.fit.trees = rasch_trees(2);
  doc.fit.abilities = {0.5, 0.0};
  auto text = export_forest_json(doc);
  const auto pos = text.find("\"version\": 1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 12, "\"version\": 2");
  CHECK_THROWS_AS(import_forest_json(text), ParseError);
  CHECK_THROWS_AS(import_forest_json("{\"format\": \"item-focused-forest\""), ParseError);
  CHECK_THROWS_AS(import_forest_json("[]"), ParseError);
}

TEST_CASE("study CSV layout") {
  StudyResult r;
  StudyRow row;
  row.scenario = "s4";
  row.strength = "strong";
  row.c = 1.0;
  row.method = "trees";
  row.replication = 0;
  row.metrics.mse_persons = 0.25;
  row.metrics.tpr_i = 1.0;
  row.splits = 4;
  r.rows.push_back(row);
  std::ostringstream out;
  write_study_csv(r, out);
  CHECK(out.str() ==
        "scenario,strength,c,method,replication,mse_persons,mse_items,tpr_i,fpr_i,tpr_iv,fpr_iv,splits\n"
        "s4,strong,1.00,trees,1,0.250000,NA,1.000000,NA,NA,NA,4\n");
}

TEST_CASE("grown forests survive the JSON round trip") {
  ScenarioSpec spec;
  spec.scenario = Scenario::S4;
  spec.persons = 300;
  spec.items = 8;
  spec.seed = 5;
  const auto d = generate(spec);
  GrowthConfig cfg;
  cfg.permutations = 99;
  const auto grown = grow_forest(d.responses, d.covariates, cfg);
  ForestDocument doc;
  doc.fit = grown.fit;
  doc.splits = grown.splits;
  doc.final_test = grown.final_test;
  doc.stop_reason = grown.stop_reason;
  doc.config = cfg;
  doc.variables = describe_variables(d.covariates);
  CHECK(import_forest_json(export_forest_json(doc)) == doc);
  CHECK(!doc.splits.empty());
}
