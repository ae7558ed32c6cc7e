#include "nerdem/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nerdem/common.hpp"
#include "nerdem/demonstration.hpp"

namespace nerdem {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::runtime_error("unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

SynthSpec synth_from_json(const json& j) {
  check_keys(j, "synth", {"labels", "gazetteer_sizes", "pattern_pool", "corpus_size", "ambiguity", "seed"});
  SynthSpec s;
  if (j.contains("labels")) s.labels = j.at("labels").get<std::vector<std::string>>();
  if (j.contains("gazetteer_sizes")) s.gazetteer_sizes = j.at("gazetteer_sizes").get<std::vector<int>>();
  s.pattern_pool = j.value("pattern_pool", s.pattern_pool);
  s.corpus_size = j.value("corpus_size", s.corpus_size);
  s.ambiguity = j.value("ambiguity", s.ambiguity);
  s.seed = j.value("seed", s.seed);
  return s;
}

json synth_to_json(const SynthSpec& s) {
  return json{{"labels", s.labels},
              {"gazetteer_sizes", s.gazetteer_sizes},
              {"pattern_pool", s.pattern_pool},
              {"corpus_size", s.corpus_size},
              {"ambiguity", s.ambiguity},
              {"seed", s.seed}};
}

Dataset parse_split(const std::string& path, int token_col, int tag_col) {
  if (path.empty()) throw std::runtime_error("missing data path in config");
  return load_conll_file(path, token_col, tag_col);
}

Dataset as_bioes(Dataset d) {
  bool mixed = false;
  for (const auto& s : d.sentences) {
    if (s.scheme != Scheme::BIOES) mixed = true;
  }
  if (!mixed) return d;
  return convert_scheme(d, Scheme::BIOES);
}

DataBundle load_bundle(const std::optional<SynthSpec>& synth, const std::string& train_path,
                       const std::string& dev_path, const std::string& test_path, int token_col,
                       int tag_col, const std::string& id) {
  DataBundle b;
  b.id = id;
  if (synth) {
    SynthCorpus c = generate_synth(*synth);
    b.train = std::move(c.train);
    b.dev = std::move(c.dev);
    b.test = std::move(c.test);
  } else {
    b.train = as_bioes(parse_split(train_path, token_col, tag_col));
    b.dev = as_bioes(parse_split(dev_path, token_col, tag_col));
    b.test = as_bioes(parse_split(test_path, token_col, tag_col));
  }
  if (b.train.label_set.empty()) throw std::runtime_error("train split has no entity labels");
  return b;
}

std::string out_dir_for(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("NERDEM_OUT_DIR")) {
    if (*env != '\0') return env;
  }
  return cfg.out_dir;
}

struct SinkPaths {
  std::string dir;
  std::string results;
  std::string report;
  std::string summary;
};

SinkPaths prepare_out(const ExperimentConfig& cfg, const std::string& results_name) {
  SinkPaths p;
  p.dir = out_dir_for(cfg);
  std::filesystem::create_directories(p.dir);
  p.results = p.dir + "/" + results_name;
  p.report = p.dir + "/report.txt";
  p.summary = p.dir + "/summary.json";
  std::filesystem::remove(p.results);
  return p;
}

std::vector<RunResult> execute_cells(const ExperimentConfig& cfg, const DataBundle& data,
                                     const std::vector<CellSpec>& cells) {
  std::vector<RunResult> rows(cells.size());
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) { rows[i] = run_cell(cfg, data, cells[i]); });
  return rows;
}

void write_report(const ExperimentConfig& cfg, const SinkPaths& paths, const std::vector<RunResult>& rows,
                  int expected_runs) {
  append_results_jsonl(paths.results, rows);
  auto cells = aggregate(rows, expected_runs);
  if (cells.empty()) return;
  CellKey baseline = cells.begin()->first;
  for (const auto& [key, stats] : cells) {
    if (key.strategy == "none") {
      baseline = key;
      break;
    }
  }
  write_text_file(paths.report, report_table(cells, baseline));
  json summary{{"cells", report_json(cells)}, {"config", config_to_json(cfg)}};
  write_text_file(paths.summary, summary.dump(2) + "\n");
}

bool combo_valid(StrategyKind s, TemplateKind t) { return template_allowed(s, t); }

std::optional<PerturbationSpec> perturb_spec(const PerturbSettings& p, std::uint64_t seed) {
  PerturbationSpec spec;
  spec.entities = p.entities;
  spec.labels = p.labels;
  spec.contexts = p.contexts;
  spec.seed = seed;
  if (!spec.any()) return std::nullopt;
  return spec;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  check_keys(j, "config",
             {"data", "source_data", "n_train", "subsample_seeds", "train_seeds", "strategies",
              "templates", "label_order", "k", "sep", "encoder", "hard_transitions", "train",
              "perturb", "out_dir", "jobs"});
  ExperimentConfig cfg;
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"train", "dev", "test", "token_col", "tag_col", "synth", "id"});
    cfg.train_path = d.value("train", "");
    cfg.dev_path = d.value("dev", "");
    cfg.test_path = d.value("test", "");
    cfg.token_col = d.value("token_col", 0);
    cfg.tag_col = d.value("tag_col", 1);
    if (d.contains("synth")) cfg.synth = synth_from_json(d.at("synth"));
    cfg.dataset_id = d.value("id", cfg.synth ? "synth" : "data");
  }
  if (j.contains("source_data")) {
    const json& d = j.at("source_data");
    check_keys(d, "source_data", {"train", "dev", "test", "token_col", "tag_col", "synth", "id"});
    cfg.source_train_path = d.value("train", "");
    cfg.source_dev_path = d.value("dev", "");
    cfg.source_test_path = d.value("test", "");
    if (d.contains("synth")) cfg.source_synth = synth_from_json(d.at("synth"));
    cfg.source_dataset_id = d.value("id", "source");
  }
  if (j.contains("n_train")) cfg.n_train = j.at("n_train").get<std::vector<int>>();
  if (j.contains("subsample_seeds"))
    cfg.subsample_seeds = j.at("subsample_seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("train_seeds")) cfg.train_seeds = j.at("train_seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("strategies")) cfg.strategies = j.at("strategies").get<std::vector<std::string>>();
  if (j.contains("templates")) cfg.templates = j.at("templates").get<std::vector<std::string>>();
  if (j.contains("label_order")) cfg.label_order = j.at("label_order").get<std::vector<std::string>>();
  cfg.k = j.value("k", cfg.k);
  cfg.sep = j.value("sep", cfg.sep);
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    check_keys(e, "encoder", {"d_model", "n_heads", "n_layers", "max_len", "dropout"});
    cfg.encoder.d_model = e.value("d_model", cfg.encoder.d_model);
    cfg.encoder.n_heads = e.value("n_heads", cfg.encoder.n_heads);
    cfg.encoder.n_layers = e.value("n_layers", cfg.encoder.n_layers);
    cfg.encoder.max_len = e.value("max_len", cfg.encoder.max_len);
    cfg.encoder.dropout = e.value("dropout", cfg.encoder.dropout);
  }
  cfg.hard_transitions = j.value("hard_transitions", cfg.hard_transitions);
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"batch_size", "learning_rate", "lr_multiplier", "max_epochs", "patience", "clip_norm",
                "use_dem_train", "use_dem_infer"});
    cfg.train_cfg.batch_size = t.value("batch_size", cfg.train_cfg.batch_size);
    cfg.train_cfg.learning_rate = t.value("learning_rate", cfg.train_cfg.learning_rate);
    cfg.train_cfg.lr_multiplier = t.value("lr_multiplier", cfg.train_cfg.lr_multiplier);
    cfg.train_cfg.max_epochs = t.value("max_epochs", cfg.train_cfg.max_epochs);
    cfg.train_cfg.patience = t.value("patience", cfg.train_cfg.patience);
    cfg.train_cfg.clip_norm = t.value("clip_norm", cfg.train_cfg.clip_norm);
    cfg.train_cfg.use_dem_train = t.value("use_dem_train", cfg.train_cfg.use_dem_train);
    cfg.train_cfg.use_dem_infer = t.value("use_dem_infer", cfg.train_cfg.use_dem_infer);
  }
  if (j.contains("perturb")) {
    const json& p = j.at("perturb");
    check_keys(p, "perturb", {"entities", "labels", "contexts", "mode"});
    cfg.perturb.entities = p.value("entities", cfg.perturb.entities);
    cfg.perturb.labels = p.value("labels", cfg.perturb.labels);
    cfg.perturb.contexts = p.value("contexts", cfg.perturb.contexts);
    cfg.perturb.mode = p.value("mode", cfg.perturb.mode);
    if (cfg.perturb.mode != "test_only" && cfg.perturb.mode != "train_and_test") {
      throw std::runtime_error("perturb.mode must be test_only or train_and_test");
    }
  }
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.jobs = j.value("jobs", cfg.jobs);
  if (cfg.jobs < 1) throw std::runtime_error("jobs must be >= 1");
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json data;
  if (cfg.synth) {
    data["synth"] = synth_to_json(*cfg.synth);
  } else {
    data["train"] = cfg.train_path;
    data["dev"] = cfg.dev_path;
    data["test"] = cfg.test_path;
    data["token_col"] = cfg.token_col;
    data["tag_col"] = cfg.tag_col;
  }
  data["id"] = cfg.dataset_id;
  json j{{"data", data},
         {"n_train", cfg.n_train},
         {"subsample_seeds", cfg.subsample_seeds},
         {"train_seeds", cfg.train_seeds},
         {"strategies", cfg.strategies},
         {"templates", cfg.templates},
         {"label_order", cfg.label_order},
         {"k", cfg.k},
         {"sep", cfg.sep},
         {"encoder",
          {{"d_model", cfg.encoder.d_model},
           {"n_heads", cfg.encoder.n_heads},
           {"n_layers", cfg.encoder.n_layers},
           {"max_len", cfg.encoder.max_len},
           {"dropout", cfg.encoder.dropout}}},
         {"hard_transitions", cfg.hard_transitions},
         {"train",
          {{"batch_size", cfg.train_cfg.batch_size},
           {"learning_rate", cfg.train_cfg.learning_rate},
           {"lr_multiplier", cfg.train_cfg.lr_multiplier},
           {"max_epochs", cfg.train_cfg.max_epochs},
           {"patience", cfg.train_cfg.patience},
           {"clip_norm", cfg.train_cfg.clip_norm},
           {"use_dem_train", cfg.train_cfg.use_dem_train},
           {"use_dem_infer", cfg.train_cfg.use_dem_infer}}},
         {"perturb",
          {{"entities", cfg.perturb.entities},
           {"labels", cfg.perturb.labels},
           {"contexts", cfg.perturb.contexts},
           {"mode", cfg.perturb.mode}}},
         {"out_dir", cfg.out_dir},
         {"jobs", cfg.jobs}};
  if (!cfg.source_synth && cfg.source_train_path.empty()) return j;
  json src;
  if (cfg.source_synth) {
    src["synth"] = synth_to_json(*cfg.source_synth);
  } else {
    src["train"] = cfg.source_train_path;
    src["dev"] = cfg.source_dev_path;
    src["test"] = cfg.source_test_path;
  }
  src["id"] = cfg.source_dataset_id;
  j["source_data"] = src;
  return j;
}

DataBundle load_data(const ExperimentConfig& cfg) {
  return load_bundle(cfg.synth, cfg.train_path, cfg.dev_path, cfg.test_path, cfg.token_col, cfg.tag_col,
                     cfg.dataset_id);
}

DataBundle load_source_data(const ExperimentConfig& cfg) {
  if (!cfg.source_synth && cfg.source_train_path.empty()) {
    throw std::runtime_error("adaptation requires source_data in the config");
  }
  return load_bundle(cfg.source_synth, cfg.source_train_path, cfg.source_dev_path, cfg.source_test_path,
                     cfg.token_col, cfg.tag_col, cfg.source_dataset_id);
}

nlohmann::json determinism_view(const RunResult& r) {
  json j = r;
  j.erase("wall_clock_sec");
  return j;
}

bool any_failed(const std::vector<RunResult>& rows) {
  for (const auto& r : rows) {
    if (r.failed) return true;
  }
  return false;
}

RunResult run_cell(const ExperimentConfig& cfg, const DataBundle& data, const CellSpec& cell) {
  RunResult rr;
  rr.dataset = data.id;
  rr.strategy = cell.strategy_label;
  rr.template_name = cell.strategy == StrategyKind::None ? "" : template_name(cell.tmpl);
  rr.n_train = cell.n_train;
  rr.subsample_id = cell.subsample_id;
  rr.subsample_seed = cell.subsample_seed;
  rr.seed = cell.train_seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Dataset sample = subsample(data.train, cell.n_train, cell.subsample_seed);
    DevSplit split = carve_dev(static_cast<int>(sample.size()));
    auto [train_insts, dev_insts] = split_instances(sample, split);

    Vocab vocab = Vocab::build({&data.train}, template_tokens(data.train.label_set));
    Model model = Model::init(cfg.encoder, vocab, data.train.label_set,
                              mix_seed(cell.train_seed, 0x3417), cfg.hard_transitions);

    std::unique_ptr<DemonstrationBuilder> train_builder;
    std::unique_ptr<DemonstrationBuilder> infer_builder;
    std::shared_ptr<TokenEmbedder> embedder;
    if (cell.strategy != StrategyKind::None) {
      embedder = std::make_shared<StaticModelEmbedder>(model);
      DemonstrationConfig dc;
      dc.strategy = cell.strategy;
      dc.template_kind = cell.tmpl;
      dc.k = cfg.k;
      dc.sep = cfg.sep;
      dc.label_order = cfg.label_order;
      dc.seed = mix_seed(cell.train_seed, 0xde3);
      dc.perturbation = cell.train_perturb;
      if (cell.strategy == StrategyKind::Search) {
        DemonstrationConfig sc = dc;
        sc.perturbation.reset();
        auto factory = [&](std::uint64_t seed) {
          return Model::init(cfg.encoder, vocab, data.train.label_set, mix_seed(seed, 0x3417),
                             cfg.hard_transitions);
        };
        TrainConfig search_cfg = cfg.train_cfg;
        search_cfg.seed = cell.train_seed;
        EntityIndex ix = EntityIndex::build(sample);
        CandidateEnumerator cands(ix, cfg.k,
                                  sc.label_order.empty() ? ix.labels() : sc.label_order);
        SearchOutcome found = grid_search(cands, sc, sample, split, factory, search_cfg, 1);
        train_builder = std::make_unique<DemonstrationBuilder>(sample, sc, cands.at(found.best_index));
      } else {
        train_builder = std::make_unique<DemonstrationBuilder>(sample, dc, embedder);
      }
      if (cell.infer_perturb) {
        DemonstrationConfig ic = dc;
        ic.perturbation = cell.infer_perturb;
        infer_builder = std::make_unique<DemonstrationBuilder>(sample, ic, embedder);
      }
    }

    TrainConfig tc = cfg.train_cfg;
    tc.seed = cell.train_seed;
    tc.use_dem_train = cell.use_dem_train;
    tc.use_dem_infer = cell.use_dem_infer;
    TrainOutcome outcome = train(model, train_insts, dev_insts, train_builder.get(), tc);

    const DemonstrationBuilder* eval_builder = infer_builder ? infer_builder.get() : train_builder.get();
    RunResult ev = evaluate(outcome.model, data.test, eval_builder, tc.use_dem_infer);
    rr.precision = ev.precision;
    rr.recall = ev.recall;
    rr.f1 = ev.f1;
    rr.config = json{{"dataset", data.id},
                     {"strategy", cell.strategy_label},
                     {"template", rr.template_name},
                     {"n_train", cell.n_train},
                     {"subsample_seed", cell.subsample_seed},
                     {"train_seed", cell.train_seed},
                     {"k", cfg.k},
                     {"sep", cfg.sep},
                     {"hard_transitions", cfg.hard_transitions},
                     {"use_dem_train", cell.use_dem_train},
                     {"use_dem_infer", cell.use_dem_infer},
                     {"d_model", cfg.encoder.d_model},
                     {"n_heads", cfg.encoder.n_heads},
                     {"n_layers", cfg.encoder.n_layers},
                     {"max_len", cfg.encoder.max_len},
                     {"dropout", cfg.encoder.dropout},
                     {"batch_size", cfg.train_cfg.batch_size},
                     {"learning_rate", cfg.train_cfg.learning_rate},
                     {"lr_multiplier", cfg.train_cfg.lr_multiplier},
                     {"max_epochs", cfg.train_cfg.max_epochs},
                     {"patience", cfg.train_cfg.patience},
                     {"clip_norm", cfg.train_cfg.clip_norm},
                     {"best_epoch", outcome.best_epoch},
                     {"epochs_run", outcome.epochs_run},
                     {"best_dev_f1", outcome.best_dev_f1}};
    if (cell.train_perturb || cell.infer_perturb) {
      const PerturbationSpec& p = cell.train_perturb ? *cell.train_perturb : *cell.infer_perturb;
      rr.config["perturb"] = json{{"entities", p.entities},
                                  {"labels", p.labels},
                                  {"contexts", p.contexts},
                                  {"applied_at", cell.train_perturb ? "train_and_test" : "test_only"}};
    }
  } catch (const std::exception& e) {
    rr.failed = true;
    rr.error = e.what();
    rr.precision = rr.recall = rr.f1 = 0.0;
  }
  const auto t1 = std::chrono::steady_clock::now();
  rr.wall_clock_sec = std::chrono::duration<double>(t1 - t0).count();
  return rr;
}

std::vector<RunResult> run_matrix(const ExperimentConfig& cfg) {
  DataBundle data = load_data(cfg);
  std::vector<CellSpec> cells;
  bool seen_none = false;
  for (const auto& sname : cfg.strategies) {
    StrategyKind s = strategy_from_name(sname);
    if (s == StrategyKind::None) {
      if (seen_none) continue;
      seen_none = true;
    }
    for (const auto& tname : cfg.templates) {
      TemplateKind t = template_from_name(tname);
      if (s != StrategyKind::None && !combo_valid(s, t)) continue;
      for (int n : cfg.n_train) {
        for (std::size_t si = 0; si < cfg.subsample_seeds.size(); ++si) {
          for (std::uint64_t seed : cfg.train_seeds) {
            CellSpec c;
            c.strategy_label = sname;
            c.strategy = s;
            c.tmpl = t;
            c.n_train = n;
            c.subsample_id = static_cast<int>(si);
            c.subsample_seed = cfg.subsample_seeds[si];
            c.train_seed = seed;
            c.use_dem_train = s != StrategyKind::None && cfg.train_cfg.use_dem_train;
            c.use_dem_infer = s != StrategyKind::None && cfg.train_cfg.use_dem_infer;
            cells.push_back(std::move(c));
          }
        }
      }
      if (s == StrategyKind::None) break;
    }
  }
  auto rows = execute_cells(cfg, data, cells);
  SinkPaths paths = prepare_out(cfg, "results.jsonl");
  write_report(cfg, paths, rows,
               static_cast<int>(cfg.subsample_seeds.size() * cfg.train_seeds.size()));
  return rows;
}

std::vector<RunResult> run_ablation(const ExperimentConfig& cfg) {
  DataBundle data = load_data(cfg);
  StrategyKind s = StrategyKind::None;
  std::string sname;
  for (const auto& name : cfg.strategies) {
    StrategyKind k = strategy_from_name(name);
    if (k != StrategyKind::None) {
      s = k;
      sname = name;
      break;
    }
  }
  if (s == StrategyKind::None) throw std::runtime_error("ablation needs a demonstration strategy");
  TemplateKind t = template_from_name(cfg.templates.at(0));
  if (!combo_valid(s, t)) throw std::runtime_error("template not usable with strategy " + sname);

  const bool flags[4][2] = {{false, false}, {false, true}, {true, false}, {true, true}};
  std::vector<CellSpec> cells;
  for (int n : cfg.n_train) {
    for (std::size_t si = 0; si < cfg.subsample_seeds.size(); ++si) {
      for (std::uint64_t seed : cfg.train_seeds) {
        for (const auto& f : flags) {
          CellSpec c;
          c.strategy = s;
          c.tmpl = t;
          c.n_train = n;
          c.subsample_id = static_cast<int>(si);
          c.subsample_seed = cfg.subsample_seeds[si];
          c.train_seed = seed;
          c.use_dem_train = f[0];
          c.use_dem_infer = f[1];
          c.strategy_label = sname + "+" + (f[0] ? "O" : "X") + (f[1] ? "O" : "X");
          cells.push_back(std::move(c));
        }
      }
    }
  }
  auto rows = execute_cells(cfg, data, cells);
  SinkPaths paths = prepare_out(cfg, "ablation.jsonl");
  write_report(cfg, paths, rows,
               static_cast<int>(cfg.subsample_seeds.size() * cfg.train_seeds.size()));
  return rows;
}

std::pair<std::vector<RunResult>, std::vector<RunResult>> run_perturbation(const ExperimentConfig& cfg) {
  DataBundle data = load_data(cfg);
  std::vector<CellSpec> originals;
  std::vector<CellSpec> perturbed;
  for (const auto& sname : cfg.strategies) {
    StrategyKind s = strategy_from_name(sname);
    if (s == StrategyKind::None || !strategy_entity_oriented(s)) continue;
    for (const auto& tname : cfg.templates) {
      TemplateKind t = template_from_name(tname);
      if (t != TemplateKind::NoContext && t != TemplateKind::Context) continue;
      for (int n : cfg.n_train) {
        for (std::size_t si = 0; si < cfg.subsample_seeds.size(); ++si) {
          for (std::uint64_t seed : cfg.train_seeds) {
            CellSpec c;
            c.strategy_label = sname;
            c.strategy = s;
            c.tmpl = t;
            c.n_train = n;
            c.subsample_id = static_cast<int>(si);
            c.subsample_seed = cfg.subsample_seeds[si];
            c.train_seed = seed;
            c.use_dem_train = true;
            c.use_dem_infer = true;
            originals.push_back(c);
            auto spec = perturb_spec(cfg.perturb, mix_seed(seed, 0x9e27));
            if (!spec) throw std::runtime_error("perturbation config selects nothing to perturb");
            if (cfg.perturb.mode == "train_and_test") {
              c.train_perturb = spec;
            } else {
              c.infer_perturb = spec;
            }
            perturbed.push_back(std::move(c));
          }
        }
      }
    }
  }
  if (originals.empty()) {
    throw std::runtime_error("perturbation needs an entity-oriented strategy with a plain template");
  }
  auto orig_rows = execute_cells(cfg, data, originals);
  auto pert_rows = execute_cells(cfg, data, perturbed);
  SinkPaths paths = prepare_out(cfg, "results.jsonl");
  append_results_jsonl(paths.results, orig_rows);
  append_results_jsonl(paths.dir + "/results_perturbed.jsonl", pert_rows);
  const int expected = static_cast<int>(cfg.subsample_seeds.size() * cfg.train_seeds.size());
  auto orig_cells = aggregate(orig_rows, expected);
  auto pert_cells = aggregate(pert_rows, expected);
  write_text_file(paths.dir + "/perturbation_report.txt", perturbation_report(orig_cells, pert_cells));
  json summary{{"original", report_json(orig_cells)},
               {"perturbed", report_json(pert_cells)},
               {"config", config_to_json(cfg)}};
  write_text_file(paths.summary, summary.dump(2) + "\n");
  return {std::move(orig_rows), std::move(pert_rows)};
}

std::vector<RunResult> run_adaptation(const ExperimentConfig& cfg) {
  DataBundle source = load_source_data(cfg);
  DataBundle target = load_data(cfg);
  StrategyKind s = strategy_from_name(cfg.strategies.at(0));
  TemplateKind t = template_from_name(cfg.templates.at(0));
  if (s != StrategyKind::None && !combo_valid(s, t)) {
    throw std::runtime_error("template not usable with strategy " + cfg.strategies.at(0));
  }

  Vocab vocab = Vocab::build({&source.train, &target.train}, [&] {
    std::vector<std::string> extra = template_tokens(source.train.label_set);
    for (const auto& tok : template_tokens(target.train.label_set)) extra.push_back(tok);
    return extra;
  }());

  struct AdaptTask {
    int n = 0;
    int subsample_id = 0;
    std::uint64_t subsample_seed = 0;
    std::uint64_t train_seed = 0;
  };
  std::vector<AdaptTask> tasks;
  for (int n : cfg.n_train) {
    for (std::size_t si = 0; si < cfg.subsample_seeds.size(); ++si) {
      for (std::uint64_t seed : cfg.train_seeds) {
        tasks.push_back({n, static_cast<int>(si), cfg.subsample_seeds[si], seed});
      }
    }
  }

  auto make_builder = [&](const Dataset& sample, std::uint64_t seed,
                          const Model& m) -> std::unique_ptr<DemonstrationBuilder> {
    if (s == StrategyKind::None) return nullptr;
    DemonstrationConfig dc;
    dc.strategy = s;
    dc.template_kind = t;
    dc.k = cfg.k;
    dc.sep = cfg.sep;
    dc.seed = mix_seed(seed, 0xde3);
    return std::make_unique<DemonstrationBuilder>(sample, dc, std::make_shared<StaticModelEmbedder>(m));
  };

  std::vector<RunResult> rows(tasks.size());
  parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
    const AdaptTask& task = tasks[i];
    RunResult rr;
    rr.dataset = target.id;
    rr.strategy = cfg.strategies.at(0) + "+adapt";
    rr.template_name = s == StrategyKind::None ? "" : template_name(t);
    rr.n_train = task.n;
    rr.subsample_id = task.subsample_id;
    rr.subsample_seed = task.subsample_seed;
    rr.seed = task.train_seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      TrainConfig tc = cfg.train_cfg;
      tc.seed = task.train_seed;
      tc.use_dem_train = s != StrategyKind::None && cfg.train_cfg.use_dem_train;
      tc.use_dem_infer = s != StrategyKind::None && cfg.train_cfg.use_dem_infer;

      Model src_model = Model::init(cfg.encoder, vocab, source.train.label_set,
                                    mix_seed(task.train_seed, 0x3417), cfg.hard_transitions);
      auto src_builder = make_builder(source.train, task.train_seed, src_model);
      TrainOutcome src_out = train(src_model, source.train, source.dev, src_builder.get(), tc);

      Dataset sample = subsample(target.train, task.n, task.subsample_seed);
      DevSplit split = carve_dev(static_cast<int>(sample.size()));
      auto [train_insts, dev_insts] = split_instances(sample, split);
      Model tgt_model = Model::init(cfg.encoder, vocab, target.train.label_set,
                                    mix_seed(task.train_seed, 0xada), cfg.hard_transitions);
      auto tgt_builder = make_builder(sample, task.train_seed, tgt_model);
      TrainOutcome out =
          adapt(src_out.model, tgt_model, train_insts, dev_insts, tgt_builder.get(), tc);

      RunResult ev = evaluate(out.model, target.test, tgt_builder.get(), tc.use_dem_infer);
      rr.precision = ev.precision;
      rr.recall = ev.recall;
      rr.f1 = ev.f1;
      rr.config = json{{"source_dataset", source.id},
                       {"target_dataset", target.id},
                       {"strategy", cfg.strategies.at(0)},
                       {"template", rr.template_name},
                       {"n_train", task.n},
                       {"subsample_seed", task.subsample_seed},
                       {"train_seed", task.train_seed},
                       {"source_best_dev_f1", src_out.best_dev_f1},
                       {"target_best_dev_f1", out.best_dev_f1},
                       {"best_epoch", out.best_epoch}};
    } catch (const std::exception& e) {
      rr.failed = true;
      rr.error = e.what();
      rr.precision = rr.recall = rr.f1 = 0.0;
    }
    const auto t1 = std::chrono::steady_clock::now();
    rr.wall_clock_sec = std::chrono::duration<double>(t1 - t0).count();
    rows[i] = rr;
  });
  SinkPaths paths = prepare_out(cfg, "adaptation.jsonl");
  write_report(cfg, paths, rows,
               static_cast<int>(cfg.subsample_seeds.size() * cfg.train_seeds.size()));
  return rows;
}

std::vector<RunResult> run_search(const ExperimentConfig& cfg) {
  DataBundle data = load_data(cfg);
  TemplateKind t = template_from_name(cfg.templates.at(0));
  if (!combo_valid(StrategyKind::Search, t)) {
    throw std::runtime_error("template not usable with strategy search");
  }
  SinkPaths paths = prepare_out(cfg, "results.jsonl");

  struct SearchTask {
    int n = 0;
    int subsample_id = 0;
    std::uint64_t subsample_seed = 0;
    std::uint64_t train_seed = 0;
  };
  std::vector<SearchTask> tasks;
  for (int n : cfg.n_train) {
    for (std::size_t si = 0; si < cfg.subsample_seeds.size(); ++si) {
      for (std::uint64_t seed : cfg.train_seeds) {
        tasks.push_back({n, static_cast<int>(si), cfg.subsample_seeds[si], seed});
      }
    }
  }

  Vocab vocab = Vocab::build({&data.train}, template_tokens(data.train.label_set));
  std::vector<RunResult> rows(tasks.size());
  std::vector<json> tables(tasks.size());
  parallel_for(tasks.size(), 1, [&](std::size_t i) {
    const SearchTask& task = tasks[i];
    RunResult rr;
    rr.dataset = data.id;
    rr.strategy = "search";
    rr.template_name = template_name(t);
    rr.n_train = task.n;
    rr.subsample_id = task.subsample_id;
    rr.subsample_seed = task.subsample_seed;
    rr.seed = task.train_seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      Dataset sample = subsample(data.train, task.n, task.subsample_seed);
      DevSplit split = carve_dev(static_cast<int>(sample.size()));
      auto [train_insts, dev_insts] = split_instances(sample, split);

      DemonstrationConfig dc;
      dc.strategy = StrategyKind::Search;
      dc.template_kind = t;
      dc.k = cfg.k;
      dc.sep = cfg.sep;
      dc.label_order = cfg.label_order;
      dc.seed = mix_seed(task.train_seed, 0xde3);
      auto factory = [&](std::uint64_t seed) {
        return Model::init(cfg.encoder, vocab, data.train.label_set, mix_seed(seed, 0x3417),
                           cfg.hard_transitions);
      };
      TrainConfig tc = cfg.train_cfg;
      tc.seed = task.train_seed;
      EntityIndex ix = EntityIndex::build(sample);
      CandidateEnumerator cands(ix, cfg.k, dc.label_order.empty() ? ix.labels() : dc.label_order);
      SearchOutcome found = grid_search(cands, dc, sample, split, factory, tc, cfg.jobs);

      Model model = Model::init(cfg.encoder, vocab, data.train.label_set,
                                mix_seed(task.train_seed, 0x3417), cfg.hard_transitions);
      DemonstrationBuilder builder(sample, dc, cands.at(found.best_index));
      TrainOutcome outcome = train(model, train_insts, dev_insts, &builder, tc);
      RunResult ev = evaluate(outcome.model, data.test, &builder, tc.use_dem_infer);
      rr.precision = ev.precision;
      rr.recall = ev.recall;
      rr.f1 = ev.f1;
      json sel = json::array();
      for (const auto& e : found.best.entries) {
        sel.push_back(json{{"label", e.label}, {"surface", e.surface}});
      }
      rr.config = json{{"dataset", data.id},
                       {"strategy", "search"},
                       {"template", rr.template_name},
                       {"n_train", task.n},
                       {"subsample_seed", task.subsample_seed},
                       {"train_seed", task.train_seed},
                       {"k", cfg.k},
                       {"candidates", cands.size()},
                       {"best_index", found.best_index},
                       {"best_selection", sel},
                       {"best_dev_f1", found.best_dev_f1}};
      json table = json::array();
      for (const auto& row : found.table) {
        table.push_back(json{{"candidate", row.candidate_index}, {"dev_f1", row.dev_f1}});
      }
      tables[i] = json{{"n_train", task.n},
                       {"subsample_seed", task.subsample_seed},
                       {"train_seed", task.train_seed},
                       {"table", table}};
    } catch (const std::exception& e) {
      rr.failed = true;
      rr.error = e.what();
      rr.precision = rr.recall = rr.f1 = 0.0;
    }
    const auto t1 = std::chrono::steady_clock::now();
    rr.wall_clock_sec = std::chrono::duration<double>(t1 - t0).count();
    rows[i] = rr;
  });
  write_report(cfg, paths, rows,
               static_cast<int>(cfg.subsample_seeds.size() * cfg.train_seeds.size()));
  std::string lines;
  for (const auto& t2 : tables) {
    if (!t2.is_null()) lines += t2.dump() + "\n";
  }
  write_text_file(paths.dir + "/search_tables.jsonl", lines);
  return rows;
}

std::string run_stats(const ExperimentConfig& cfg) {
  DataBundle data = load_data(cfg);
  std::ostringstream out;
  out << "dataset: " << data.id << "\n";
  out << "train sentences: " << data.train.size() << ", dev: " << data.dev.size()
      << ", test: " << data.test.size() << "\n";
  auto describe = [&out](const std::string& title, const std::vector<Dataset>& samples) {
    out << "\n" << title << "\n";
    for (const auto& stat : entity_statistics(samples)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "  %-8s mean %8.2f  std %7.2f\n", stat.label.c_str(), stat.mean,
                    stat.stddev);
      out << buf;
    }
  };
  describe("full train entity counts:", {data.train});
  for (int n : cfg.n_train) {
    std::vector<Dataset> samples;
    for (std::uint64_t seed : cfg.subsample_seeds) {
      samples.push_back(subsample(data.train, n, seed));
    }
    std::ostringstream title;
    title << "entity counts across " << samples.size() << " subsamples, n=" << n << ":";
    describe(title.str(), samples);
  }
  return out.str();
}

}  // namespace nerdem
