#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ift/baselines.h"
#include "ift/io.h"
#include "ift/simulation.h"
#include "ift/tree_growth.h"

namespace fs = std::filesystem;
using namespace ift;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string part; std::getline(in, part, ',');) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

void print_split_log(const std::vector<SplitRecord>& splits, const std::vector<std::string>& items,
                     const std::vector<std::string>& variables, std::ostream& out) {
  out << "iteration,item,node,variable,split,statistic,p_value,left,right\n";
  for (const auto& s : splits) {
    out << s.iteration << ',' << (s.item < items.size() ? items[s.item] : std::to_string(s.item + 1)) << ','
        << s.node_key << ',' << (s.variable < variables.size() ? variables[s.variable] : "?") << ",\""
        << format_condition(s.split, variables) << "\"," << s.statistic << ',' << s.p_value << ',' << s.left_size
        << ',' << s.right_size << '\n';
  }
}

void write_dots(const ForestDocument& doc, const std::string& dir) {
  fs::create_directories(dir);
  std::vector<std::string> names;
  for (const auto& v : doc.variables) names.push_back(v.name);
  for (std::size_t i = 0; i < doc.fit.trees.size(); ++i) {
    const auto& tree = doc.fit.trees[i];
    if (!tree.has_dif()) continue;
    const std::string item = i < doc.item_names.size() ? doc.item_names[i] : "item" + std::to_string(i + 1);
    write_file((fs::path(dir) / (item + ".dot")).string(), export_dot(tree, names, item));
  }
}

struct FitArgs {
  DatasetFiles files;
  GrowthConfig growth;
  std::string out;
  std::string dot_dir;
};

int run_fit(const FitArgs& a) {
  const auto data = load_dataset(a.files);
  ForestDocument doc;
  doc.item_names = data.item_names;
  doc.variables = describe_variables(data.covariates);
  std::vector<std::string> names;
  for (const auto& v : doc.variables) names.push_back(v.name);
  GrowthResult grown;
  try {
    grown = grow_forest(data.responses, data.covariates, a.growth);
  } catch (const GrowthError& e) {
    std::cerr << "error: " << e.what() << "\nsplits accepted before the failure:\n";
    print_split_log(e.splits(), data.item_names, names, std::cerr);
    return 1;
  }
  doc.fit = std::move(grown.fit);
  doc.splits = std::move(grown.splits);
  doc.final_test = std::move(grown.final_test);
  doc.stop_reason = grown.stop_reason;
  doc.config = a.growth;
  doc.config.threads = 1;  // execution setting, not part of the result
  write_file(a.out, export_forest_json(doc));
  if (!a.dot_dir.empty()) write_dots(doc, a.dot_dir);
  print_split_log(doc.splits, data.item_names, names, std::cout);
  std::cout << "stop: " << doc.stop_reason << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Item-focused trees for differential item functioning"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "grow one tree per item and write the forest");
  fit_cmd->add_option("--responses", fit.files.responses, "response CSV (id column + 0/1 items)")->required();
  fit_cmd->add_option("--covariates", fit.files.covariates, "covariate CSV")->required();
  fit_cmd->add_option("--schema", fit.files.schema, "covariate schema JSON")->required();
  fit_cmd->add_option("--alpha", fit.growth.alpha, "global significance level")->capture_default_str();
  fit_cmd->add_option("--permutations", fit.growth.permutations, "permutations per test")->capture_default_str();
  fit_cmd->add_option("--ridge", fit.growth.ridge, "ridge weight on difficulties")->capture_default_str();
  fit_cmd->add_option("--min-node-size", fit.growth.min_node_size, "smallest child node")->capture_default_str();
  fit_cmd->add_option("--max-splits", fit.growth.max_splits, "split cap (0: 10 x items)")->capture_default_str();
  fit_cmd->add_option("--seed", fit.growth.seed, "random seed")->capture_default_str();
  fit_cmd->add_option("--threads", fit.growth.threads, "worker threads (0: all cores)")->capture_default_str();
  fit_cmd->add_option("--out", fit.out, "forest JSON output")->required();
  fit_cmd->add_option("--dot-dir", fit.dot_dir, "write one DOT file per DIF item here");

  StudyConfig study;
  std::string scenario_name, strength_name = "strong", methods = "trees", sim_out;
  int permutations = 1000;
  auto* sim_cmd = app.add_subcommand("simulate", "run a replication study");
  sim_cmd->add_option("--scenario", scenario_name, "two-group|five-group|arctan|s4|s5|s6|null")->required();
  sim_cmd->add_option("--strength", strength_name, "strong|medium|weak")->capture_default_str();
  sim_cmd->add_option("--reps", study.replications, "replications")->capture_default_str();
  sim_cmd->add_option("--methods", methods, "comma list of trees,mh,logistic,lord")->capture_default_str();
  sim_cmd->add_option("--seed", study.seed, "random seed")->capture_default_str();
  sim_cmd->add_option("--alpha", study.alpha, "significance level")->capture_default_str();
  sim_cmd->add_option("--permutations", permutations, "permutations per test")->capture_default_str();
  sim_cmd->add_option("--persons", study.persons, "persons per dataset")->capture_default_str();
  sim_cmd->add_option("--items", study.items, "items per dataset")->capture_default_str();
  sim_cmd->add_option("--threads", study.threads, "replications run in parallel (0: all cores)")
      ->capture_default_str();
  sim_cmd->add_option("--out", sim_out, "study CSV output")->required();

  std::string cmp_responses, cmp_covariates, group_column, cmp_methods = "mh,logistic,lord", reference, cmp_out,
                                                         id_column = "id";
  double cmp_alpha = 0.05;
  auto* cmp_cmd = app.add_subcommand("compare", "classical DIF tests for one grouping column");
  cmp_cmd->add_option("--responses", cmp_responses, "response CSV")->required();
  cmp_cmd->add_option("--covariates", cmp_covariates, "covariate CSV")->required();
  cmp_cmd->add_option("--group", group_column, "grouping column in the covariate CSV")->required();
  cmp_cmd->add_option("--id-column", id_column, "person id column")->capture_default_str();
  cmp_cmd->add_option("--methods", cmp_methods, "comma list of mh,logistic,lord")->capture_default_str();
  cmp_cmd->add_option("--alpha", cmp_alpha, "significance level")->capture_default_str();
  cmp_cmd->add_option("--reference", reference, "reference group label (default: smallest)");
  cmp_cmd->add_option("--out", cmp_out, "CSV output (default: stdout)");

  std::string forest_path, export_dir;
  auto* exp_cmd = app.add_subcommand("export", "regenerate DOT files from a forest JSON");
  exp_cmd->add_option("--forest", forest_path, "forest JSON")->required();
  exp_cmd->add_option("--dot-dir", export_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*fit_cmd) {
      try {
        fit.growth.validate();
      } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
      }
      return run_fit(fit);
    }

    if (*sim_cmd) {
      try {
        const auto scenario = scenario_from_string(scenario_name);
        strength_value(strength_name);
        study.cells = {{scenario, strength_name}};
        study.methods = split_list(methods);
        if (study.methods.empty()) throw std::invalid_argument("no methods given");
        study.growth.permutations = permutations;
        study.growth.alpha = study.alpha;
        study.growth.validate();
        if (study.replications < 1) throw std::invalid_argument("--reps must be at least 1");
      } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
      }
      const auto result = run_study(study);
      for (const auto& n : result.notices) std::cerr << "note: " << n << '\n';
      std::ofstream out(sim_out, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write '" + sim_out + "'");
      write_study_csv(result, out);
      return 0;
    }

    if (*cmp_cmd) {
      const auto list = split_list(cmp_methods);
      for (const auto& m : list) {
        if (m != "mh" && m != "logistic" && m != "lord") {
          std::cerr << "usage error: unknown method '" << m << "'\n";
          return 2;
        }
      }
      const auto data = load_grouped_responses(cmp_responses, cmp_covariates, group_column, id_column);
      const std::set<std::string> distinct(data.labels.begin(), data.labels.end());
      std::map<std::string, int> code;
      for (const auto& label : distinct) code.emplace(label, static_cast<int>(code.size()));
      GroupAssignment groups;
      for (const auto& label : data.labels) groups.labels.push_back(code[label]);
      if (!reference.empty()) {
        if (!code.count(reference)) {
          std::cerr << "usage error: reference group '" << reference << "' does not occur\n";
          return 2;
        }
        groups.reference = code[reference];
      }
      std::vector<DetectionResult> results;
      for (const auto& m : list) {
        if (m == "mh") results.push_back(mantel_haenszel(data.responses, groups, cmp_alpha));
        if (m == "logistic") results.push_back(logistic_dif(data.responses, groups, cmp_alpha));
        if (m == "lord") results.push_back(lord_chi2(data.responses, groups, cmp_alpha));
      }
      if (cmp_out.empty()) {
        write_detection_csv(results, data.item_names, std::cout);
      } else {
        std::ofstream out(cmp_out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + cmp_out + "'");
        write_detection_csv(results, data.item_names, out);
      }
      return 0;
    }

    if (*exp_cmd) {
      write_dots(import_forest_json(read_file(forest_path)), export_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
