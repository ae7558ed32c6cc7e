#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nerdem/common.hpp"
#include "nerdem/experiment.hpp"
#include "nerdem/synth.hpp"

namespace {

using nerdem::ExperimentConfig;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  int jobs = 0;
  std::vector<std::string> strategies;
  std::vector<std::string> templates;
  std::vector<int> n_train;
};

void attach_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("-c,--config", opts.config_path, "JSON config file")->required();
  cmd->add_option("-o,--out", opts.out_dir, "output directory (overrides config)");
  cmd->add_option("-j,--jobs", opts.jobs, "parallel cells (overrides config)");
  cmd->add_option("--strategy", opts.strategies, "strategy list (overrides config)");
  cmd->add_option("--template", opts.templates, "template list (overrides config)");
  cmd->add_option("-n,--n-train", opts.n_train, "training sizes (overrides config)");
}

ExperimentConfig load_config(const CommonOpts& opts) {
  const std::string text = nerdem::read_text_file(opts.config_path);
  ExperimentConfig cfg = nerdem::config_from_json(nlohmann::json::parse(text));
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.jobs > 0) cfg.jobs = opts.jobs;
  if (!opts.strategies.empty()) cfg.strategies = opts.strategies;
  if (!opts.templates.empty()) cfg.templates = opts.templates;
  if (!opts.n_train.empty()) cfg.n_train = opts.n_train;
  return cfg;
}

int finish(const std::vector<nerdem::RunResult>& rows) {
  int failed = 0;
  for (const auto& r : rows) {
    if (r.failed) {
      ++failed;
      std::cerr << "failed: " << r.strategy << "/" << r.template_name << " n=" << r.n_train
                << " subsample=" << r.subsample_id << " seed=" << r.seed << ": " << r.error << "\n";
    }
  }
  std::printf("%zu runs, %d failed\n", rows.size(), failed);
  return failed == 0 ? 0 : 1;
}

void print_file(const std::string& path) {
  std::fputs(nerdem::read_text_file(path).c_str(), stdout);
}

std::string out_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("NERDEM_OUT_DIR")) {
    if (*env != '\0') return env;
  }
  return cfg.out_dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot NER with demonstration-augmented inputs"};
  app.require_subcommand(1);

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_out = "synth_data";
  nerdem::SynthSpec synth_spec;
  std::string synth_config;
  synth_cmd->add_option("-o,--out", synth_out, "output directory");
  synth_cmd->add_option("-c,--config", synth_config, "JSON config with a data.synth block");
  synth_cmd->add_option("--labels", synth_spec.labels, "entity labels");
  synth_cmd->add_option("--gazetteer-sizes", synth_spec.gazetteer_sizes,
                        "surfaces per label (one value broadcasts)");
  synth_cmd->add_option("--pattern-pool", synth_spec.pattern_pool, "sentence patterns");
  synth_cmd->add_option("--corpus-size", synth_spec.corpus_size, "training sentences");
  synth_cmd->add_option("--ambiguity", synth_spec.ambiguity, "cross-label surface sharing in [0,1]");
  synth_cmd->add_option("--seed", synth_spec.seed, "generator seed");

  CommonOpts run_opts, search_opts, adapt_opts, perturb_opts, ablate_opts, stats_opts;
  auto* run_cmd = app.add_subcommand("run", "train and evaluate the experiment matrix");
  attach_common(run_cmd, run_opts);
  auto* search_cmd = app.add_subcommand("search", "grid-search demonstration selections");
  attach_common(search_cmd, search_opts);
  auto* adapt_cmd = app.add_subcommand("adapt", "source training then target fine-tuning");
  attach_common(adapt_cmd, adapt_opts);
  auto* perturb_cmd = app.add_subcommand("perturb", "matrix with perturbed demonstrations");
  attach_common(perturb_cmd, perturb_opts);
  auto* ablate_cmd = app.add_subcommand("ablate", "train/inference demonstration ablation");
  attach_common(ablate_cmd, ablate_opts);
  auto* stats_cmd = app.add_subcommand("stats", "entity statistics for the configured data");
  attach_common(stats_cmd, stats_opts);

  auto* report_cmd = app.add_subcommand("report", "aggregate a results file into a table");
  std::string report_path;
  std::string baseline_key;
  report_cmd->add_option("results", report_path, "JSONL results file")->required();
  report_cmd->add_option("--baseline", baseline_key,
                         "baseline row as strategy or strategy/template");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      if (!synth_config.empty()) {
        ExperimentConfig cfg =
            nerdem::config_from_json(nlohmann::json::parse(nerdem::read_text_file(synth_config)));
        if (!cfg.synth) throw std::runtime_error("config has no data.synth block");
        synth_spec = *cfg.synth;
      }
      nerdem::write_synth(synth_out, nerdem::generate_synth(synth_spec));
      std::printf("wrote %s/{train,dev,test}.conll\n", synth_out.c_str());
      return 0;
    }
    if (run_cmd->parsed()) {
      ExperimentConfig cfg = load_config(run_opts);
      auto rows = nerdem::run_matrix(cfg);
      print_file(out_root(cfg) + "/report.txt");
      return finish(rows);
    }
    if (search_cmd->parsed()) {
      ExperimentConfig cfg = load_config(search_opts);
      auto rows = nerdem::run_search(cfg);
      print_file(out_root(cfg) + "/report.txt");
      return finish(rows);
    }
    if (adapt_cmd->parsed()) {
      ExperimentConfig cfg = load_config(adapt_opts);
      auto rows = nerdem::run_adaptation(cfg);
      print_file(out_root(cfg) + "/report.txt");
      return finish(rows);
    }
    if (perturb_cmd->parsed()) {
      ExperimentConfig cfg = load_config(perturb_opts);
      auto [orig, pert] = nerdem::run_perturbation(cfg);
      print_file(out_root(cfg) + "/perturbation_report.txt");
      orig.insert(orig.end(), pert.begin(), pert.end());
      return finish(orig);
    }
    if (ablate_cmd->parsed()) {
      ExperimentConfig cfg = load_config(ablate_opts);
      auto rows = nerdem::run_ablation(cfg);
      print_file(out_root(cfg) + "/report.txt");
      return finish(rows);
    }
    if (stats_cmd->parsed()) {
      std::fputs(nerdem::run_stats(load_config(stats_opts)).c_str(), stdout);
      return 0;
    }
    if (report_cmd->parsed()) {
      auto rows = nerdem::read_results_jsonl(report_path);
      auto cells = nerdem::aggregate(rows, 0);
      if (cells.empty()) throw std::runtime_error("no usable rows in " + report_path);
      nerdem::CellKey baseline = cells.begin()->first;
      if (!baseline_key.empty()) {
        const auto slash = baseline_key.find('/');
        const std::string strat = baseline_key.substr(0, slash);
        const std::string tmpl = slash == std::string::npos ? "" : baseline_key.substr(slash + 1);
        bool found = false;
        for (const auto& [key, stats] : cells) {
          if (key.strategy == strat && (tmpl.empty() || key.template_name == tmpl)) {
            baseline = key;
            found = true;
            break;
          }
        }
        if (!found) throw std::runtime_error("baseline " + baseline_key + " not in results");
      } else {
        for (const auto& [key, stats] : cells) {
          if (key.strategy == "none") {
            baseline = key;
            break;
          }
        }
      }
      std::fputs(nerdem::report_table(cells, baseline).c_str(), stdout);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
