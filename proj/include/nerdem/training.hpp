#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nerdem/demonstration.hpp"
#include "nerdem/model.hpp"

namespace nerdem {

struct TrainConfig {
  int batch_size = 4;
  double learning_rate = 2e-5;
  // The base rate matches the reference fine-tuning protocol; a from-scratch
  // model this small needs more, so the effective rate is their product.
  double lr_multiplier = 50.0;
  int max_epochs = 50;
  int patience = 20;
  std::uint64_t seed = 0;
  bool use_dem_train = true;
  bool use_dem_infer = true;
  double clip_norm = 5.0;  // 0 disables clipping
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int gold_total = 0;
  int pred_total = 0;
  int matched = 0;
};

// Micro-averaged span P/R/F1 by exact (label, start, end) match, paired per
// sentence.
Prf span_micro_prf(const std::vector<std::vector<EntitySpan>>& gold,
                   const std::vector<std::vector<EntitySpan>>& pred);

struct RunResult {
  std::string dataset;
  std::string strategy = "none";
  std::string template_name = "";
  int n_train = 0;
  int subsample_id = 0;
  std::uint64_t subsample_seed = 0;
  std::uint64_t seed = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double wall_clock_sec = 0.0;
  nlohmann::json config = nlohmann::json::object();
  bool failed = false;
  std::string error;
};

void to_json(nlohmann::json& j, const RunResult& r);
void from_json(const nlohmann::json& j, RunResult& r);

// Instance ids are (set code << 32) | position, set codes 0/1/2 for
// train/dev/test, so variable demonstrations are stable per instance.
inline constexpr std::uint64_t kTrainIdBase = 0ull << 32;
inline constexpr std::uint64_t kDevIdBase = 1ull << 32;
inline constexpr std::uint64_t kTestIdBase = 2ull << 32;

struct TrainInstance {
  Sentence sentence;
  std::uint64_t instance_id = 0;
  std::optional<int> exclude = std::nullopt;  // builder-corpus index for identity exclusion
};

std::vector<TrainInstance> as_instances(const Dataset& d, std::uint64_t id_base, bool exclude_self);

// Early-stopping split indices over a sampled training set. Samples smaller
// than 10 sentences reuse the whole sample as dev.
struct DevSplit {
  std::vector<int> train_idx;
  std::vector<int> dev_idx;
};

DevSplit carve_dev(int n);

// Instances carry ids and exclusions keyed by position in the full sample, so
// demonstrations built over the sample exclude the instance itself.
std::pair<std::vector<TrainInstance>, std::vector<TrainInstance>> split_instances(
    const Dataset& sample, const DevSplit& split);

struct TrainOutcome {
  Model model;
  double best_dev_f1 = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
};

TrainOutcome train(Model model, const std::vector<TrainInstance>& train_set,
                   const std::vector<TrainInstance>& dev_set, const DemonstrationBuilder* dem,
                   const TrainConfig& cfg);
TrainOutcome train(Model model, const Dataset& train_set, const Dataset& dev_set,
                   const DemonstrationBuilder* dem, const TrainConfig& cfg);

RunResult evaluate(const Model& m, const std::vector<TrainInstance>& data,
                   const DemonstrationBuilder* dem, bool use_dem);
RunResult evaluate(const Model& m, const Dataset& test, const DemonstrationBuilder* dem, bool use_dem);

struct AblationCell {
  bool train_dem = false;
  bool infer_dem = false;
  RunResult result;
};

// The four (train demonstration, inference demonstration) combinations over a
// shared sample and seed.
std::vector<AblationCell> run_ablation_matrix(const std::function<Model(std::uint64_t)>& factory,
                                              const Dataset& sample, const DevSplit& split,
                                              const Dataset& test, const DemonstrationBuilder& dem,
                                              TrainConfig cfg);

// Embedder transfer followed by fine-tuning on the target data.
TrainOutcome adapt(const Model& source, Model target_init, const std::vector<TrainInstance>& target_train,
                   const std::vector<TrainInstance>& target_dev, const DemonstrationBuilder* dem,
                   const TrainConfig& cfg);
TrainOutcome adapt(const Model& source, Model target_init, const Dataset& target_train,
                   const Dataset& target_dev, const DemonstrationBuilder* dem, const TrainConfig& cfg);

struct SearchRow {
  std::size_t candidate_index = 0;
  Selection selection;
  double dev_f1 = 0.0;
};

struct SearchOutcome {
  std::size_t best_index = 0;
  Selection best;
  double best_dev_f1 = 0.0;
  std::vector<SearchRow> table;
};

// Trains one model per candidate selection and keeps the dev-F1 argmax
// (earliest index on ties). Candidate seeds derive from the candidate index,
// so results do not depend on execution order or jobs.
SearchOutcome grid_search(const CandidateEnumerator& candidates, const DemonstrationConfig& dem_cfg,
                          const Dataset& sample, const DevSplit& split,
                          const std::function<Model(std::uint64_t)>& factory, const TrainConfig& cfg,
                          int jobs = 1);

}  // namespace nerdem
