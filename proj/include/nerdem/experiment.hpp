#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nerdem/evaluation.hpp"
#include "nerdem/synth.hpp"
#include "nerdem/training.hpp"

namespace nerdem {

struct PerturbSettings {
  bool entities = true;
  bool labels = true;
  bool contexts = true;
  std::string mode = "test_only";  // or train_and_test
};

struct ExperimentConfig {
  // Target data: either CoNLL files or a generator spec.
  std::string train_path, dev_path, test_path;
  int token_col = 0;
  int tag_col = 1;
  std::optional<SynthSpec> synth;
  std::string dataset_id = "data";

  // Source domain for adaptation.
  std::string source_train_path, source_dev_path, source_test_path;
  std::optional<SynthSpec> source_synth;
  std::string source_dataset_id = "source";

  std::vector<int> n_train = {25};
  std::vector<std::uint64_t> subsample_seeds = {11, 12, 13, 14, 15};
  std::vector<std::uint64_t> train_seeds = {1, 2, 3};
  std::vector<std::string> strategies = {"none", "popular"};
  std::vector<std::string> templates = {"context"};
  std::vector<std::string> label_order;
  int k = 3;
  std::string sep = "[SEP]";

  EncoderConfig encoder{0, 32, 4, 2, 256, 0.1};
  bool hard_transitions = false;
  TrainConfig train_cfg;
  PerturbSettings perturb;

  std::string out_dir = "out";
  int jobs = 1;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct DataBundle {
  Dataset train, dev, test;
  std::string id;
};

// Loads the configured corpus (generator or files) in BIOES.
DataBundle load_data(const ExperimentConfig& cfg);
DataBundle load_source_data(const ExperimentConfig& cfg);

// One experiment cell: a (strategy, template, n_train, subsample, seed) run.
struct CellSpec {
  std::string strategy_label;  // row key in results; may carry a suffix like "+OX"
  StrategyKind strategy = StrategyKind::None;
  TemplateKind tmpl = TemplateKind::Context;
  int n_train = 0;
  int subsample_id = 0;
  std::uint64_t subsample_seed = 0;
  std::uint64_t train_seed = 0;
  bool use_dem_train = false;
  bool use_dem_infer = false;
  std::optional<PerturbationSpec> train_perturb;
  std::optional<PerturbationSpec> infer_perturb;
};

// Never throws: errors come back as a failure row.
RunResult run_cell(const ExperimentConfig& cfg, const DataBundle& data, const CellSpec& cell);

// Strips the timing field; what remains must reproduce exactly for identical
// configs.
nlohmann::json determinism_view(const RunResult& r);

bool any_failed(const std::vector<RunResult>& rows);

// Each runner executes its cells (optionally in parallel), appends rows to a
// JSONL file in cell order, and writes report files into cfg.out_dir.
std::vector<RunResult> run_matrix(const ExperimentConfig& cfg);
std::vector<RunResult> run_ablation(const ExperimentConfig& cfg);
std::pair<std::vector<RunResult>, std::vector<RunResult>> run_perturbation(const ExperimentConfig& cfg);
std::vector<RunResult> run_adaptation(const ExperimentConfig& cfg);
std::vector<RunResult> run_search(const ExperimentConfig& cfg);
std::string run_stats(const ExperimentConfig& cfg);

}  // namespace nerdem
