#include "ift/io.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ift {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string where(const CsvTable& t, std::size_t row) {
  return t.source + ":" + std::to_string(t.lines[row]);
}

double parse_number(const std::string& text, const std::string& context) {
  if (text.empty()) throw ParseError(context + ": missing value");
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || !std::isfinite(v)) {
    throw ParseError(context + ": '" + text + "' is not a finite number");
  }
  return v;
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string shortest(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out;
}

// --- JSON mapping -------------------------------------------------------

json condition_to_json(const Condition& c) {
  json j{{"variable", c.variable}, {"direction", c.direction}};
  if (c.nominal) {
    j["type"] = "subset";
    j["subset"] = c.subset;
  } else {
    j["type"] = "threshold";
    j["threshold"] = c.threshold;
  }
  return j;
}

Condition condition_from_json(const json& j) {
  Condition c;
  c.variable = j.at("variable").get<std::size_t>();
  c.direction = j.at("direction").get<int>();
  const auto type = j.at("type").get<std::string>();
  if (type == "subset") {
    c.nominal = true;
    c.subset = j.at("subset").get<std::vector<int>>();
  } else if (type == "threshold") {
    c.threshold = j.at("threshold").get<double>();
  } else {
    throw ParseError("unknown condition type '" + type + "'");
  }
  if (c.direction != 0 && c.direction != 1) throw ParseError("condition direction must be 0 or 1");
  return c;
}

json record_to_json(const SplitRecord& r) {
  return json{{"iteration", r.iteration},   {"item", r.item},           {"node_key", r.node_key},
              {"variable", r.variable},     {"split", condition_to_json(r.split)},
              {"statistic", r.statistic},   {"p_value", r.p_value},     {"permutations", r.permutations},
              {"left_size", r.left_size},   {"right_size", r.right_size}};
}

SplitRecord record_from_json(const json& j) {
  SplitRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.item = j.at("item").get<std::size_t>();
  r.node_key = j.at("node_key").get<std::uint64_t>();
  r.variable = j.at("variable").get<std::size_t>();
  r.split = condition_from_json(j.at("split"));
  r.statistic = j.at("statistic").get<double>();
  r.p_value = j.at("p_value").get<double>();
  r.permutations = j.at("permutations").get<int>();
  r.left_size = j.at("left_size").get<std::size_t>();
  r.right_size = j.at("right_size").get<std::size_t>();
  return r;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ParseError(source + ": no column named '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(const std::string& text, const std::string& source) {
  CsvTable table;
  table.source = source;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
      const char ch = line[k];
      if (quoted) {
        if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
          field += '"';
          ++k;
        } else if (ch == '"') {
          quoted = false;
        } else {
          field += ch;
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == ',') {
        fields.push_back(trim(field));
        field.clear();
      } else {
        field += ch;
      }
    }
    if (quoted) throw ParseError(source + ":" + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(trim(field));
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(table.header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.lines.push_back(line_no);
  }
  if (!have_header) throw ParseError(source + ": empty file");
  return table;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << contents;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

CsvTable read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

namespace {

struct ResponseTable {
  ResponseMatrix matrix;
  std::vector<std::string> ids;
  std::vector<std::string> items;
};

ResponseTable parse_responses(const CsvTable& t, const std::string& id_column) {
  const bool has_id = !t.header.empty() && t.header[0] == id_column;
  const std::size_t first = has_id ? 1 : 0;
  ResponseTable out;
  out.items.assign(t.header.begin() + static_cast<std::ptrdiff_t>(first), t.header.end());
  if (out.items.size() < 2) throw ParseError(t.source + ": need at least two item columns");
  if (t.rows.size() < 2) throw ParseError(t.source + ": need at least two persons");
  std::vector<std::uint8_t> cells;
  cells.reserve(t.rows.size() * out.items.size());
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string id = has_id ? row[0] : std::to_string(r + 1);
    if (!seen.insert(id).second) throw ParseError(where(t, r) + ": duplicate person id '" + id + "'");
    out.ids.push_back(id);
    for (std::size_t c = first; c < row.size(); ++c) {
      const auto& cell = row[c];
      if (cell == "0" || cell == "1") {
        cells.push_back(cell == "1" ? 1 : 0);
      } else if (cell.empty()) {
        throw ParseError(where(t, r) + ", column '" + t.header[c] + "': missing response");
      } else {
        throw ParseError(where(t, r) + ", column '" + t.header[c] + "': response '" + cell + "' is not 0 or 1");
      }
    }
  }
  out.matrix = ResponseMatrix(t.rows.size(), out.items.size(), std::move(cells));
  return out;
}

// row index of each response id inside the covariate table
std::vector<std::size_t> align_rows(const CsvTable& cov, std::size_t id_col, const std::vector<std::string>& ids,
                                    const std::string& responses_source) {
  if (cov.rows.size() != ids.size()) {
    throw ParseError(cov.source + ": " + std::to_string(cov.rows.size()) + " person rows but " + responses_source +
                     " has " + std::to_string(ids.size()));
  }
  std::map<std::string, std::size_t> by_id;
  for (std::size_t r = 0; r < cov.rows.size(); ++r) {
    if (!by_id.emplace(cov.rows[r][id_col], r).second) {
      throw ParseError(where(cov, r) + ": duplicate person id '" + cov.rows[r][id_col] + "'");
    }
  }
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ParseError(cov.source + ": no row for person id '" + id + "'");
    rows.push_back(it->second);
  }
  return rows;
}

}  // namespace

Dataset parse_dataset(const std::string& responses_csv, const std::string& covariates_csv,
                      const std::string& schema_json) {
  json schema;
  try {
    schema = json::parse(schema_json);
  } catch (const json::exception& e) {
    throw ParseError(std::string("schema: ") + e.what());
  }
  const std::string id_column = schema.value("id_column", std::string("id"));
  if (!schema.contains("covariates") || !schema["covariates"].is_array()) {
    throw ParseError("schema: 'covariates' must be an array");
  }

  const auto rt = parse_csv(responses_csv, "responses");
  auto resp = parse_responses(rt, id_column);
  const auto ct = parse_csv(covariates_csv, "covariates");
  const std::size_t id_col = ct.column(id_column);
  const auto rows = align_rows(ct, id_col, resp.ids, rt.source);

  std::set<std::string> declared;
  std::vector<Covariate> columns;
  for (const auto& entry : schema["covariates"]) {
    Covariate c;
    try {
      c.name = entry.at("name").get<std::string>();
      c.kind = covariate_kind_from_string(entry.at("kind").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(std::string("schema: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(std::string("schema: ") + e.what());
    }
    declared.insert(c.name);
    const std::size_t col = ct.column(c.name);
    std::map<std::string, int> codes;
    if (c.kind == CovariateKind::Nominal) {
      if (!entry.contains("levels")) throw ParseError("schema: nominal covariate '" + c.name + "' needs 'levels'");
      const auto& lv = entry["levels"];
      if (lv.is_number_integer()) {
        c.levels = lv.get<int>();
        for (int k = 1; k <= c.levels; ++k) codes[std::to_string(k)] = k;
      } else if (lv.is_array()) {
        c.levels = static_cast<int>(lv.size());
        for (std::size_t k = 0; k < lv.size(); ++k) {
          const std::string label = lv[k].is_string() ? lv[k].get<std::string>() : lv[k].dump();
          codes[label] = static_cast<int>(k) + 1;
        }
      } else {
        throw ParseError("schema: 'levels' of '" + c.name + "' must be a count or a list");
      }
      if (c.levels < 1) throw ParseError("schema: nominal covariate '" + c.name + "' has no levels");
    }
    c.values.reserve(rows.size());
    for (auto r : rows) {
      const auto& cell = ct.rows[r][col];
      const std::string ctx = where(ct, r) + ", column '" + c.name + "'";
      switch (c.kind) {
        case CovariateKind::Nominal: {
          const auto it = codes.find(cell);
          if (it == codes.end()) throw ParseError(ctx + ": '" + cell + "' is not a declared level");
          c.values.push_back(it->second);
          break;
        }
        case CovariateKind::Binary: {
          const double v = parse_number(cell, ctx);
          if (v != 0.0 && v != 1.0) throw ParseError(ctx + ": binary value must be 0 or 1, got '" + cell + "'");
          c.values.push_back(v);
          break;
        }
        default: c.values.push_back(parse_number(cell, ctx)); break;
      }
    }
    columns.push_back(std::move(c));
  }
  for (std::size_t k = 0; k < ct.header.size(); ++k) {
    if (k != id_col && !declared.count(ct.header[k])) {
      throw ParseError("schema does not declare covariate column '" + ct.header[k] + "'");
    }
  }
  if (columns.empty()) throw ParseError("schema declares no covariates");
  Dataset ds;
  ds.covariates = CovariateSet(resp.matrix.persons(), std::move(columns));
  ds.responses = std::move(resp.matrix);
  ds.item_names = std::move(resp.items);
  ds.person_ids = std::move(resp.ids);
  return ds;
}

Dataset load_dataset(const DatasetFiles& files) {
  const auto r = read_file(files.responses);
  const auto c = read_file(files.covariates);
  const auto s = read_file(files.schema);
  try {
    return parse_dataset(r, c, s);
  } catch (const ParseError& e) {
    // rewrite the generic source tags into the actual paths
    std::string msg = e.what();
    auto replace = [&](const std::string& tag, const std::string& path) {
      if (msg.rfind(tag, 0) == 0) msg = path + msg.substr(tag.size());
    };
    replace("responses", files.responses);
    replace("covariates", files.covariates);
    replace("schema", files.schema);
    throw ParseError(msg);
  }
}

GroupedResponses load_grouped_responses(const std::string& responses_path, const std::string& covariates_path,
                                        const std::string& group_column, const std::string& id_column) {
  const auto rt = read_csv(responses_path);
  auto resp = parse_responses(rt, id_column);
  const auto ct = read_csv(covariates_path);
  const auto rows = align_rows(ct, ct.column(id_column), resp.ids, rt.source);
  const std::size_t col = ct.column(group_column);
  GroupedResponses out;
  out.responses = std::move(resp.matrix);
  out.item_names = std::move(resp.items);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& v = ct.rows[rows[k]][col];
    if (v.empty()) throw ParseError(where(ct, rows[k]) + ": missing group label");
    out.labels.push_back(v);
  }
  return out;
}

std::vector<VariableInfo> describe_variables(const CovariateSet& covariates) {
  std::vector<VariableInfo> out;
  for (const auto& c : covariates.columns()) out.push_back({c.name, c.kind, c.levels});
  return out;
}

std::string export_forest_json(const ForestDocument& doc) {
  const auto& fit = doc.fit;
  json trees = json::array();
  for (std::size_t i = 0; i < fit.trees.size(); ++i) {
    const auto& t = fit.trees[i];
    json leaves = json::array();
    for (const auto& leaf : t.leaves) {
      json conds = json::array();
      for (const auto& c : leaf.node.conditions) conds.push_back(condition_to_json(c));
      leaves.push_back({{"conditions", conds}, {"difficulty", leaf.difficulty}, {"key", leaf.key}});
    }
    json entry{{"item", t.item}, {"leaves", leaves}};
    if (i < doc.item_names.size()) entry["name"] = doc.item_names[i];
    trees.push_back(entry);
  }
  std::vector<std::size_t> extreme;
  for (std::size_t p = 0; p < fit.extreme.size(); ++p) {
    if (fit.extreme[p]) extreme.push_back(p);
  }
  json variables = json::array();
  for (const auto& v : doc.variables) {
    json e{{"name", v.name}, {"kind", to_string(v.kind)}};
    if (v.kind == CovariateKind::Nominal) e["levels"] = v.levels;
    variables.push_back(e);
  }
  json splits = json::array();
  for (const auto& r : doc.splits) splits.push_back(record_to_json(r));
  const auto& cfg = doc.config;
  json out{{"format", "item-focused-forest"},
           {"version", kForestFormatVersion},
           {"config",
            {{"alpha", cfg.alpha},
             {"permutations", cfg.permutations},
             {"min_node_size", cfg.min_node_size},
             {"max_splits", cfg.max_splits},
             {"ridge", cfg.ridge},
             {"seed", cfg.seed}}},
           {"variables", variables},
           {"persons", fit.abilities.size()},
           {"abilities", fit.abilities},
           {"extreme_persons", extreme},
           {"log_likelihood", fit.log_likelihood},
           {"ridge", fit.ridge},
           {"iterations", fit.iterations},
           {"trees", trees},
           {"splits", splits},
           {"stop_reason", doc.stop_reason}};
  out["final_test"] = doc.final_test ? record_to_json(*doc.final_test) : json(nullptr);
  return out.dump(2) + "\n";
}

ForestDocument import_forest_json(const std::string& text) {
  ForestDocument doc;
  try {
    const json j = json::parse(text);
    if (j.value("format", std::string()) != "item-focused-forest") throw ParseError("not a forest document");
    const int version = j.at("version").get<int>();
    if (version != kForestFormatVersion) {
      throw ParseError("forest document version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kForestFormatVersion) + ")");
    }
    const auto& cfg = j.at("config");
    doc.config.alpha = cfg.at("alpha").get<double>();
    doc.config.permutations = cfg.at("permutations").get<int>();
    doc.config.min_node_size = cfg.at("min_node_size").get<std::size_t>();
    doc.config.max_splits = cfg.at("max_splits").get<std::size_t>();
    doc.config.ridge = cfg.at("ridge").get<double>();
    doc.config.seed = cfg.at("seed").get<std::uint64_t>();
    for (const auto& v : j.at("variables")) {
      VariableInfo info;
      info.name = v.at("name").get<std::string>();
      info.kind = covariate_kind_from_string(v.at("kind").get<std::string>());
      info.levels = v.value("levels", 0);
      doc.variables.push_back(info);
    }
    auto& fit = doc.fit;
    fit.abilities = j.at("abilities").get<std::vector<double>>();
    if (j.at("persons").get<std::size_t>() != fit.abilities.size()) throw ParseError("ability count mismatch");
    fit.extreme.assign(fit.abilities.size(), false);
    for (auto p : j.at("extreme_persons").get<std::vector<std::size_t>>()) {
      if (p >= fit.extreme.size()) throw ParseError("extreme person index out of range");
      fit.extreme[p] = true;
    }
    fit.log_likelihood = j.at("log_likelihood").get<double>();
    fit.ridge = j.at("ridge").get<double>();
    fit.iterations = j.at("iterations").get<int>();
    for (const auto& t : j.at("trees")) {
      ItemTree tree;
      tree.item = t.at("item").get<std::size_t>();
      for (const auto& l : t.at("leaves")) {
        Leaf leaf;
        for (const auto& c : l.at("conditions")) leaf.node.conditions.push_back(condition_from_json(c));
        leaf.difficulty = l.at("difficulty").get<double>();
        leaf.key = l.at("key").get<std::uint64_t>();
        tree.leaves.push_back(std::move(leaf));
      }
      if (tree.leaves.empty()) throw ParseError("tree without leaves");
      if (t.contains("name")) doc.item_names.push_back(t["name"].get<std::string>());
      fit.trees.push_back(std::move(tree));
    }
    for (const auto& r : j.at("splits")) doc.splits.push_back(record_from_json(r));
    if (!j.at("final_test").is_null()) doc.final_test = record_from_json(j["final_test"]);
    doc.stop_reason = j.value("stop_reason", std::string());
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed forest document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("malformed forest document: ") + e.what());
  }
  return doc;
}

std::string format_condition(const Condition& c, const std::vector<std::string>& variable_names) {
  const std::string name =
      c.variable < variable_names.size() ? variable_names[c.variable] : "x" + std::to_string(c.variable + 1);
  if (!c.nominal) return name + " <= " + shortest(c.threshold);
  std::string set;
  for (std::size_t k = 0; k < c.subset.size(); ++k) set += (k ? "," : "") + std::to_string(c.subset[k]);
  return name + " in {" + set + "}";
}

std::string export_dot(const ItemTree& tree, const std::vector<std::string>& variable_names,
                       const std::string& title) {
  std::ostringstream out;
  out << "digraph item_" << tree.item + 1 << " {\n";
  if (!title.empty()) out << "  label=\"" << dot_escape(title) << "\";\n  labelloc=t;\n";
  out << "  node [fontname=\"Helvetica\"];\n";
  int next_id = 0;
  std::vector<std::size_t> all(tree.leaves.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  // leaves sharing a path prefix of length `depth` form one subtree
  std::function<int(const std::vector<std::size_t>&, std::size_t)> emit = [&](const std::vector<std::size_t>& group,
                                                                                std::size_t depth) -> int {
    const int id = next_id++;
    const auto& first = tree.leaves[group.front()];
    if (group.size() == 1 && first.node.conditions.size() == depth) {
      out << "  n" << id << " [shape=box, label=\"" << fixed(first.difficulty, 3) << "\"];\n";
      return id;
    }
    const Condition& split = first.node.conditions.at(depth);
    std::vector<std::size_t> yes, no;
    for (auto k : group) {
      const auto& c = tree.leaves[k].node.conditions.at(depth);
      if (!c.same_split(split)) throw std::logic_error("item tree leaves do not form a binary tree");
      (c.direction == 0 ? yes : no).push_back(k);
    }
    if (yes.empty() || no.empty()) throw std::logic_error("item tree has a one-sided split");
    out << "  n" << id << " [shape=ellipse, label=\"" << dot_escape(format_condition(split, variable_names))
        << "\"];\n";
    const int left = emit(yes, depth + 1);
    const int right = emit(no, depth + 1);
    out << "  n" << id << " -> n" << left << " [label=\"yes\"];\n";
    out << "  n" << id << " -> n" << right << " [label=\"no\"];\n";
    return id;
  };
  emit(all, 0);
  out << "}\n";
  return out.str();
}

void write_study_csv(const StudyResult& study, std::ostream& out) {
  out << "scenario,strength,c,method,replication,mse_persons,mse_items,tpr_i,fpr_i,tpr_iv,fpr_iv,splits\n";
  for (const auto& r : study.rows) {
    const auto& m = r.metrics;
    out << r.scenario << ',' << r.strength << ',' << fixed(r.c, 2) << ',' << r.method << ','
        << (r.replication < 0 ? std::string("mean") : std::to_string(r.replication + 1)) << ','
        << fixed(m.mse_persons, 6) << ',' << fixed(m.mse_items, 6) << ',' << fixed(m.tpr_i, 6) << ','
        << fixed(m.fpr_i, 6) << ',' << fixed(m.tpr_iv, 6) << ',' << fixed(m.fpr_iv, 6) << ','
        << fixed(r.splits, r.replication < 0 ? 3 : 0) << '\n';
  }
}

void write_detection_csv(const std::vector<DetectionResult>& results, const std::vector<std::string>& item_names,
                         std::ostream& out) {
  out << "item,method,statistic,df,p_value,flagged,note\n";
  for (const auto& res : results) {
    for (std::size_t i = 0; i < res.items.size(); ++i) {
      const auto& d = res.items[i];
      const std::string name = i < item_names.size() ? item_names[i] : std::to_string(i + 1);
      out << name << ',' << res.method << ',' << fixed(d.statistic, 6) << ',' << d.df << ','
          << fixed(d.p_value, 6) << ',' << (d.flagged ? 1 : 0) << ',' << (d.testable ? d.note : "untestable: " + d.note)
          << '\n';
    }
  }
}

}  // namespace ift
