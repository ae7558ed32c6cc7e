#include "nerdem/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nerdem/common.hpp"

namespace nerdem {

bool operator<(const CellKey& a, const CellKey& b) {
  return std::tie(a.dataset, a.strategy, a.template_name, a.n_train) <
         std::tie(b.dataset, b.strategy, b.template_name, b.n_train);
}

bool operator==(const CellKey& a, const CellKey& b) {
  return a.dataset == b.dataset && a.strategy == b.strategy &&
         a.template_name == b.template_name && a.n_train == b.n_train;
}

std::map<CellKey, CellStats> aggregate(const std::vector<RunResult>& results, int expected_runs) {
  std::map<CellKey, std::vector<double>> groups;
  for (const auto& r : results) {
    if (r.failed) continue;
    groups[{r.dataset, r.strategy, r.template_name, r.n_train}].push_back(r.f1);
  }
  int expected = expected_runs;
  if (expected == 0)
    for (const auto& [key, f1s] : groups) expected = std::max(expected, static_cast<int>(f1s.size()));

  std::map<CellKey, CellStats> out;
  for (const auto& [key, f1s] : groups) {
    CellStats s;
    s.count = static_cast<int>(f1s.size());
    for (double v : f1s) s.mean += v;
    s.mean /= s.count;
    for (double v : f1s) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(s.stddev / s.count);
    s.complete = s.count == expected;
    out[key] = s;
  }
  return out;
}

namespace {

std::string pct(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << v * 100.0;
  return ss.str();
}

std::string row_label(const std::string& strategy, const std::string& template_name) {
  return template_name.empty() ? strategy : strategy + "/" + template_name;
}

}  // namespace

std::string report_table(const std::map<CellKey, CellStats>& cells, const CellKey& baseline) {
  if (cells.empty()) throw std::invalid_argument("nothing to report");
  const std::string dataset = cells.begin()->first.dataset;
  std::set<int> columns;
  std::set<std::pair<std::string, std::string>> rows;
  for (const auto& [key, stats] : cells) {
    if (key.dataset != dataset)
      throw std::invalid_argument("report covers one dataset at a time; found " + key.dataset +
                                  " and " + dataset);
    columns.insert(key.n_train);
    rows.insert({key.strategy, key.template_name});
  }
  const std::pair<std::string, std::string> base_row{baseline.strategy, baseline.template_name};
  if (!rows.count(base_row))
    throw std::invalid_argument("baseline row " + row_label(baseline.strategy, baseline.template_name) +
                                " has no cells");

  auto cell_of = [&](const std::pair<std::string, std::string>& row, int n)
      -> const CellStats* {
    const auto it = cells.find({dataset, row.first, row.second, n});
    return it == cells.end() ? nullptr : &it->second;
  };

  // Column-wise best and runner-up by mean.
  std::map<int, std::pair<double, double>> top2;
  for (int n : columns) {
    double best = -1.0, second = -1.0;
    for (const auto& row : rows) {
      const CellStats* s = cell_of(row, n);
      if (!s) continue;
      if (s->mean > best) {
        second = best;
        best = s->mean;
      } else if (s->mean > second) {
        second = s->mean;
      }
    }
    top2[n] = {best, second};
  }

  std::vector<std::pair<std::string, std::string>> ordered_rows{base_row};
  for (const auto& row : rows)
    if (row != base_row) ordered_rows.push_back(row);

  std::size_t label_w = std::string("strategy/template").size();
  for (const auto& row : ordered_rows) label_w = std::max(label_w, row_label(row.first, row.second).size());
  const std::size_t cell_w = 22;

  std::ostringstream out;
  out << "dataset: " << dataset << "\n";
  out << std::left << std::setw(static_cast<int>(label_w + 2)) << "strategy/template";
  for (int n : columns) out << std::setw(static_cast<int>(cell_w)) << ("n=" + std::to_string(n));
  out << "\n";
  out << std::string(label_w + 2 + cell_w * columns.size(), '-') << "\n";

  for (const auto& row : ordered_rows) {
    out << std::setw(static_cast<int>(label_w + 2)) << row_label(row.first, row.second);
    for (int n : columns) {
      const CellStats* s = cell_of(row, n);
      if (!s) {
        if (row == base_row)
          throw std::invalid_argument("baseline cell missing for n_train=" + std::to_string(n));
        out << std::setw(static_cast<int>(cell_w)) << "-";
        continue;
      }
      std::string text = pct(s->mean) + "±" + pct(s->stddev);
      if (s->mean == top2[n].first)
        text += "*";
      else if (s->mean == top2[n].second)
        text += "^";
      if (!s->complete) text += "!";
      if (row != base_row) {
        const CellStats* b = cell_of(base_row, n);
        if (!b) throw std::invalid_argument("baseline cell missing for n_train=" + std::to_string(n));
        const double d = (s->mean - b->mean) * 100.0;
        std::ostringstream ds;
        ds << std::showpos << std::fixed << std::setprecision(2) << d;
        text += " " + ds.str();
      }
      // The ± sign is two bytes in UTF-8; pad on visible width.
      const std::size_t visible = text.size() - 1;
      out << text << std::string(visible < cell_w ? cell_w - visible : 1, ' ');
    }
    out << "\n";
  }
  return out.str();
}

nlohmann::json report_json(const std::map<CellKey, CellStats>& cells) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [key, s] : cells) {
    arr.push_back({{"dataset", key.dataset},
                   {"strategy", key.strategy},
                   {"template", key.template_name},
                   {"n_train", key.n_train},
                   {"mean_f1", s.mean},
                   {"std_f1", s.stddev},
                   {"count", s.count},
                   {"complete", s.complete}});
  }
  return arr;
}

std::vector<std::pair<CellKey, double>> perturbation_deltas(
    const std::map<CellKey, CellStats>& original, const std::map<CellKey, CellStats>& perturbed) {
  if (original.size() != perturbed.size())
    throw std::invalid_argument("original and perturbed tables differ in cell count");
  std::vector<std::pair<CellKey, double>> out;
  for (const auto& [key, s] : original) {
    const auto it = perturbed.find(key);
    if (it == perturbed.end())
      throw std::invalid_argument("perturbed table missing cell " +
                                  row_label(key.strategy, key.template_name) + " n=" +
                                  std::to_string(key.n_train));
    out.push_back({key, s.mean - it->second.mean});
  }
  return out;
}

std::string perturbation_report(const std::map<CellKey, CellStats>& original,
                                const std::map<CellKey, CellStats>& perturbed) {
  std::ostringstream out;
  out << "F1 drop from demonstration perturbation (original - perturbed)\n";
  for (const auto& [key, delta] : perturbation_deltas(original, perturbed)) {
    std::ostringstream ds;
    ds << std::showpos << std::fixed << std::setprecision(2) << delta * 100.0;
    out << row_label(key.strategy, key.template_name) << " n=" << key.n_train << ": " << ds.str()
        << " (" << pct(original.at(key).mean) << " -> " << pct(perturbed.at(key).mean) << ")\n";
  }
  return out.str();
}

std::vector<RunResult> read_results_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file: " + path);
  std::vector<RunResult> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<RunResult>());
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("bad results row at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void append_results_jsonl(const std::string& path, const std::vector<RunResult>& rows) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write results file: " + path);
  for (const auto& r : rows) out << nlohmann::json(r).dump() << "\n";
}

}  // namespace nerdem
