#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nerdem/training.hpp"

namespace nerdem {

struct CellKey {
  std::string dataset;
  std::string strategy;
  std::string template_name;
  int n_train = 0;
};

bool operator<(const CellKey& a, const CellKey& b);
bool operator==(const CellKey& a, const CellKey& b);

struct CellStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  int count = 0;
  bool complete = false;
};

// Groups runs by cell; failed rows are dropped. expected_runs marks cells
// complete; 0 deduces it as the largest observed count.
std::map<CellKey, CellStats> aggregate(const std::vector<RunResult>& results, int expected_runs = 0);

// Plain-text grid: one row per strategy/template, one column per n_train,
// cells as percent mean±std with the per-column delta against the baseline
// row. Best cell per column is marked '*', second best '^', incomplete '!'.
// All keys must share one dataset; the baseline's n_train is ignored.
std::string report_table(const std::map<CellKey, CellStats>& cells, const CellKey& baseline);

nlohmann::json report_json(const std::map<CellKey, CellStats>& cells);

// Pairs cells by key (exact key-set match required) and emits
// original - perturbed per cell.
std::vector<std::pair<CellKey, double>> perturbation_deltas(
    const std::map<CellKey, CellStats>& original, const std::map<CellKey, CellStats>& perturbed);

std::string perturbation_report(const std::map<CellKey, CellStats>& original,
                                const std::map<CellKey, CellStats>& perturbed);

std::vector<RunResult> read_results_jsonl(const std::string& path);
void append_results_jsonl(const std::string& path, const std::vector<RunResult>& rows);

}  // namespace nerdem
