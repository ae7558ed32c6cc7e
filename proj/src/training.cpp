#include "nerdem/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "nerdem/common.hpp"

namespace nerdem {

namespace {

struct TensorView {
  std::vector<Eigen::MatrixXd*> params;
  std::vector<Eigen::MatrixXd*> grads;
};

TensorView tensor_view(Model& m, ModelGrads& g) {
  TensorView v;
  for (auto& [name, t] : named_tensors(m)) v.params.push_back(t);
  for (auto& [name, t] : named_tensors(g.encoder)) v.grads.push_back(t);
  v.grads.push_back(&g.d_w_emission);
  v.grads.push_back(&g.d_transitions);
  return v;
}

struct Adam {
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int t = 0;
  std::vector<Eigen::MatrixXd> m, v;

  Adam(const std::vector<Eigen::MatrixXd*>& params, double lr_) : lr(lr_) {
    for (const auto* p : params) {
      m.emplace_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      v.emplace_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
  }

  void step(const TensorView& view) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < view.params.size(); ++i) {
      const Eigen::MatrixXd& g = *view.grads[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
      view.params[i]->array() -=
          lr * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + eps);
    }
  }
};

void clip_gradients(const TensorView& view, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto* g : view.grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto* g : view.grads) *g *= scale;
  }
}

std::vector<int> gold_tag_ids(const TagSet& tags, const Sentence& s) {
  std::vector<int> ids;
  ids.reserve(s.tags.size());
  for (const auto& t : s.tags) ids.push_back(tags.index(t));
  return ids;
}

std::vector<ComposedInput> compose_all(const Model& m, const std::vector<TrainInstance>& data,
                                       const DemonstrationBuilder* dem, bool use_dem) {
  std::vector<ComposedInput> out;
  out.reserve(data.size());
  for (const auto& inst : data) {
    Demonstration d;
    const Demonstration* dp = nullptr;
    if (use_dem && dem) {
      d = dem->build(inst.sentence, inst.instance_id, inst.exclude);
      dp = &d;
    }
    out.push_back(compose_input(m.vocab, inst.sentence, dp, m.encoder.config.max_len));
  }
  return out;
}

Prf eval_composed(const Model& m, const std::vector<TrainInstance>& data,
                  const std::vector<ComposedInput>& inputs) {
  std::vector<std::vector<EntitySpan>> gold, pred;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sentence& s = data[i].sentence;
    gold.push_back(extract_spans(s));
    const std::vector<int> pred_ids = model_predict(m, inputs[i]);
    std::vector<std::string> pred_tags;
    pred_tags.reserve(pred_ids.size());
    for (int id : pred_ids) pred_tags.push_back(m.tags.name(id));
    pred.push_back(spans_from_tags_lenient(s.tokens, pred_tags, s.scheme));
  }
  return span_micro_prf(gold, pred);
}

}  // namespace

Prf span_micro_prf(const std::vector<std::vector<EntitySpan>>& gold,
                   const std::vector<std::vector<EntitySpan>>& pred) {
  if (gold.size() != pred.size())
    throw std::invalid_argument("gold and prediction lists differ in length");
  Prf out;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    out.gold_total += static_cast<int>(gold[i].size());
    out.pred_total += static_cast<int>(pred[i].size());
    std::set<std::tuple<std::string, int, int>> gold_keys;
    for (const auto& sp : gold[i]) gold_keys.insert({sp.label, sp.start, sp.end});
    for (const auto& sp : pred[i])
      if (gold_keys.count({sp.label, sp.start, sp.end})) ++out.matched;
  }
  out.precision = out.pred_total > 0 ? static_cast<double>(out.matched) / out.pred_total : 0.0;
  out.recall = out.gold_total > 0 ? static_cast<double>(out.matched) / out.gold_total : 0.0;
  out.f1 = out.precision + out.recall > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

void to_json(nlohmann::json& j, const RunResult& r) {
  j = nlohmann::json{{"dataset", r.dataset},
                     {"strategy", r.strategy},
                     {"template", r.template_name},
                     {"n_train", r.n_train},
                     {"subsample_id", r.subsample_id},
                     {"subsample_seed", r.subsample_seed},
                     {"seed", r.seed},
                     {"precision", r.precision},
                     {"recall", r.recall},
                     {"f1", r.f1},
                     {"wall_clock_sec", r.wall_clock_sec},
                     {"config", r.config},
                     {"failed", r.failed},
                     {"error", r.error}};
}

void from_json(const nlohmann::json& j, RunResult& r) {
  j.at("dataset").get_to(r.dataset);
  j.at("strategy").get_to(r.strategy);
  j.at("template").get_to(r.template_name);
  j.at("n_train").get_to(r.n_train);
  j.at("subsample_id").get_to(r.subsample_id);
  j.at("subsample_seed").get_to(r.subsample_seed);
  j.at("seed").get_to(r.seed);
  j.at("precision").get_to(r.precision);
  j.at("recall").get_to(r.recall);
  j.at("f1").get_to(r.f1);
  j.at("wall_clock_sec").get_to(r.wall_clock_sec);
  r.config = j.value("config", nlohmann::json::object());
  r.failed = j.value("failed", false);
  r.error = j.value("error", "");
}

std::vector<TrainInstance> as_instances(const Dataset& d, std::uint64_t id_base, bool exclude_self) {
  std::vector<TrainInstance> out;
  out.reserve(d.sentences.size());
  for (int i = 0; i < d.size(); ++i) {
    TrainInstance inst;
    inst.sentence = d.sentences[i];
    inst.instance_id = id_base | static_cast<std::uint64_t>(i);
    if (exclude_self) inst.exclude = i;
    out.push_back(std::move(inst));
  }
  return out;
}

DevSplit carve_dev(int n) {
  DevSplit split;
  if (n < 10) {
    for (int i = 0; i < n; ++i) {
      split.train_idx.push_back(i);
      split.dev_idx.push_back(i);
    }
    return split;
  }
  for (int i = 0; i < n; ++i) {
    if (i % 4 == 3)
      split.dev_idx.push_back(i);
    else
      split.train_idx.push_back(i);
  }
  return split;
}

std::pair<std::vector<TrainInstance>, std::vector<TrainInstance>> split_instances(
    const Dataset& sample, const DevSplit& split) {
  std::vector<TrainInstance> train_set, dev_set;
  for (int i : split.train_idx)
    train_set.push_back({sample.sentences[i], kTrainIdBase | static_cast<std::uint64_t>(i), i});
  for (int i : split.dev_idx)
    dev_set.push_back({sample.sentences[i], kDevIdBase | static_cast<std::uint64_t>(i), i});
  return {std::move(train_set), std::move(dev_set)};
}

TrainOutcome train(Model model, const std::vector<TrainInstance>& train_set,
                   const std::vector<TrainInstance>& dev_set, const DemonstrationBuilder* dem,
                   const TrainConfig& cfg) {
  if (train_set.empty() || dev_set.empty())
    throw std::invalid_argument("train and dev sets must be non-empty");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (cfg.patience < 0 || cfg.patience > cfg.max_epochs)
    throw std::invalid_argument("patience must lie in [0, max_epochs]");
  if ((cfg.use_dem_train || cfg.use_dem_infer) && dem == nullptr)
    throw std::invalid_argument("demonstration flags set but no builder given");

  const auto train_inputs = compose_all(model, train_set, dem, cfg.use_dem_train);
  const auto dev_inputs = compose_all(model, dev_set, dem, cfg.use_dem_infer);
  std::vector<std::vector<int>> train_tags;
  for (const auto& inst : train_set) train_tags.push_back(gold_tag_ids(model.tags, inst.sentence));

  ModelGrads grads = ModelGrads::zeros_like(model);
  TensorView view = tensor_view(model, grads);
  Adam adam(view.params, cfg.learning_rate * cfg.lr_multiplier);
  Rng order_rng(mix_seed(cfg.seed, 0xa1));
  Rng drop_rng(mix_seed(cfg.seed, 0xd0));

  TrainOutcome out;
  out.model = model;
  double best = -1.0;
  int bad_epochs = 0;
  int batch_id = 0;

  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    fisher_yates_shuffle(order, order_rng);
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), pos + cfg.batch_size);
      const double b = static_cast<double>(end - pos);
      grads.zero();
      double batch_loss = 0.0;
      for (std::size_t k = pos; k < end; ++k) {
        const int i = order[k];
        batch_loss +=
            model_loss(model, train_inputs[i], train_tags[i], RunMode::Train, &drop_rng, &grads);
      }
      batch_loss /= b;
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("non-finite loss at batch " + std::to_string(batch_id) +
                                 " (learning rate " +
                                 std::to_string(cfg.learning_rate * cfg.lr_multiplier) + ")");
      for (auto* g : view.grads) *g /= b;
      clip_gradients(view, cfg.clip_norm);
      adam.step(view);
      ++batch_id;
    }

    const Prf dev = eval_composed(model, dev_set, dev_inputs);
    out.epochs_run = epoch + 1;
    if (dev.f1 > best) {
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }
    if (dev.f1 >= best) {  // prefer the later snapshot among ties
      best = dev.f1;
      out.best_dev_f1 = dev.f1;
      out.best_epoch = epoch;
      out.model = model;
    }
    if (bad_epochs >= cfg.patience) break;
  }
  return out;
}

TrainOutcome train(Model model, const Dataset& train_set, const Dataset& dev_set,
                   const DemonstrationBuilder* dem, const TrainConfig& cfg) {
  return train(std::move(model), as_instances(train_set, kTrainIdBase, true),
               as_instances(dev_set, kDevIdBase, false), dem, cfg);
}

RunResult evaluate(const Model& m, const std::vector<TrainInstance>& data,
                   const DemonstrationBuilder* dem, bool use_dem) {
  if (use_dem && dem == nullptr)
    throw std::invalid_argument("use_dem set but no demonstration builder given");
  const auto inputs = compose_all(m, data, dem, use_dem);
  const Prf prf = eval_composed(m, data, inputs);
  RunResult r;
  r.precision = prf.precision;
  r.recall = prf.recall;
  r.f1 = prf.f1;
  return r;
}

RunResult evaluate(const Model& m, const Dataset& test, const DemonstrationBuilder* dem,
                   bool use_dem) {
  return evaluate(m, as_instances(test, kTestIdBase, false), dem, use_dem);
}

std::vector<AblationCell> run_ablation_matrix(const std::function<Model(std::uint64_t)>& factory,
                                              const Dataset& sample, const DevSplit& split,
                                              const Dataset& test, const DemonstrationBuilder& dem,
                                              TrainConfig cfg) {
  auto [train_set, dev_set] = split_instances(sample, split);
  std::vector<AblationCell> cells;
  for (const bool train_dem : {false, true}) {
    for (const bool infer_dem : {false, true}) {
      cfg.use_dem_train = train_dem;
      cfg.use_dem_infer = infer_dem;
      TrainOutcome out = train(factory(cfg.seed), train_set, dev_set, &dem, cfg);
      AblationCell cell;
      cell.train_dem = train_dem;
      cell.infer_dem = infer_dem;
      cell.result = evaluate(out.model, test, &dem, infer_dem);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

TrainOutcome adapt(const Model& source, Model target_init,
                   const std::vector<TrainInstance>& target_train,
                   const std::vector<TrainInstance>& target_dev, const DemonstrationBuilder* dem,
                   const TrainConfig& cfg) {
  transfer_embedder(source.encoder, target_init);
  return train(std::move(target_init), target_train, target_dev, dem, cfg);
}

TrainOutcome adapt(const Model& source, Model target_init, const Dataset& target_train,
                   const Dataset& target_dev, const DemonstrationBuilder* dem,
                   const TrainConfig& cfg) {
  return adapt(source, std::move(target_init), as_instances(target_train, kTrainIdBase, true),
               as_instances(target_dev, kDevIdBase, false), dem, cfg);
}

SearchOutcome grid_search(const CandidateEnumerator& candidates, const DemonstrationConfig& dem_cfg,
                          const Dataset& sample, const DevSplit& split,
                          const std::function<Model(std::uint64_t)>& factory, const TrainConfig& cfg,
                          int jobs) {
  const std::size_t n = candidates.size();
  if (n == 0) throw std::invalid_argument("grid search needs at least one candidate");
  if (dem_cfg.strategy != StrategyKind::Search)
    throw std::invalid_argument("grid search demonstrations must use the search strategy");
  auto [train_set, dev_set] = split_instances(sample, split);

  SearchOutcome out;
  out.table.resize(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const std::uint64_t cand_seed = mix_seed(cfg.seed, i);
    DemonstrationBuilder builder(sample, dem_cfg, candidates.at(i));
    TrainConfig c = cfg;
    c.seed = cand_seed;
    TrainOutcome res = train(factory(cand_seed), train_set, dev_set, &builder, c);
    out.table[i] = {i, candidates.at(i), res.best_dev_f1};
  });

  out.best_index = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (out.table[i].dev_f1 > out.table[out.best_index].dev_f1) out.best_index = i;
  out.best = out.table[out.best_index].selection;
  out.best_dev_f1 = out.table[out.best_index].dev_f1;
  return out;
}

}  // namespace nerdem
