#include "nerdem/demonstration.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nerdem/common.hpp"

namespace nerdem {

namespace {

const double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::string> split_surface(const std::string& surface) {
  std::vector<std::string> out;
  std::istringstream ss(surface);
  std::string t;
  while (ss >> t) out.push_back(std::move(t));
  return out;
}

void ensure_period(std::vector<std::string>& tokens) {
  if (tokens.empty() || tokens.back() != ".") tokens.push_back(".");
}

void append_pair(std::vector<std::string>& out, const std::string& surface, const std::string& label) {
  for (auto& t : split_surface(surface)) out.push_back(std::move(t));
  out.push_back("is");
  out.push_back(label);
  out.push_back(".");
}

// Rebuilds s with each listed span replaced by its replacement tokens.
std::vector<std::string> replace_spans(const Sentence& s,
                                       std::vector<std::pair<EntitySpan, std::vector<std::string>>> repl) {
  std::sort(repl.begin(), repl.end(),
            [](const auto& a, const auto& b) { return a.first.start < b.first.start; });
  std::vector<std::string> out;
  int i = 0;
  const int n = static_cast<int>(s.tokens.size());
  for (const auto& [span, tokens] : repl) {
    if (span.start < i || span.end >= n)
      throw std::invalid_argument("replacement span outside its source sentence");
    for (; i < span.start; ++i) out.push_back(s.tokens[i]);
    out.insert(out.end(), tokens.begin(), tokens.end());
    i = span.end + 1;
  }
  for (; i < n; ++i) out.push_back(s.tokens[i]);
  return out;
}

std::vector<std::string> structure_tokens(const std::string& surface, const std::string& label) {
  std::vector<std::string> out{"["};
  for (auto& t : split_surface(surface)) out.push_back(std::move(t));
  out.push_back("|");
  out.push_back(label);
  out.push_back("]");
  return out;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return kNegInf;
  return a.dot(b) / (na * nb);
}

Eigen::VectorXd mean_pool(const std::vector<std::string>& tokens, const TokenEmbedder& emb) {
  Eigen::VectorXd sum = emb.embed(tokens.front());
  for (std::size_t i = 1; i < tokens.size(); ++i) sum += emb.embed(tokens[i]);
  return sum / static_cast<double>(tokens.size());
}

int argmax_candidate(const EntityIndex& ix, std::optional<int> exclude,
                     const std::function<double(const Sentence&)>& score) {
  int best = -1;
  double best_score = kNegInf;
  for (int i = 0; i < ix.sentence_count(); ++i) {
    if (exclude && *exclude == i) continue;
    const double s = score(ix.sentence(i));
    if (best < 0 || s > best_score) {
      best = i;
      best_score = s;
    }
  }
  if (best < 0) throw std::invalid_argument("no retrieval candidates available");
  return best;
}

}  // namespace

StrategyKind strategy_from_name(const std::string& name) {
  if (name == "none") return StrategyKind::None;
  if (name == "random") return StrategyKind::Random;
  if (name == "fixed_random") return StrategyKind::FixedRandom;
  if (name == "popular") return StrategyKind::Popular;
  if (name == "search") return StrategyKind::Search;
  if (name == "retrieve_sentence") return StrategyKind::RetrieveSentence;
  if (name == "retrieve_token") return StrategyKind::RetrieveToken;
  throw std::invalid_argument("unknown strategy: " + name);
}

std::string strategy_name(StrategyKind s) {
  switch (s) {
    case StrategyKind::None: return "none";
    case StrategyKind::Random: return "random";
    case StrategyKind::FixedRandom: return "fixed_random";
    case StrategyKind::Popular: return "popular";
    case StrategyKind::Search: return "search";
    case StrategyKind::RetrieveSentence: return "retrieve_sentence";
    case StrategyKind::RetrieveToken: return "retrieve_token";
  }
  throw std::logic_error("unreachable");
}

TemplateKind template_from_name(const std::string& name) {
  if (name == "no_context") return TemplateKind::NoContext;
  if (name == "context") return TemplateKind::Context;
  if (name == "lexical") return TemplateKind::Lexical;
  if (name == "context_all") return TemplateKind::ContextAll;
  if (name == "lexical_all") return TemplateKind::LexicalAll;
  if (name == "structure") return TemplateKind::Structure;
  if (name == "structure_all") return TemplateKind::StructureAll;
  throw std::invalid_argument("unknown template: " + name);
}

std::string template_name(TemplateKind t) {
  switch (t) {
    case TemplateKind::NoContext: return "no_context";
    case TemplateKind::Context: return "context";
    case TemplateKind::Lexical: return "lexical";
    case TemplateKind::ContextAll: return "context_all";
    case TemplateKind::LexicalAll: return "lexical_all";
    case TemplateKind::Structure: return "structure";
    case TemplateKind::StructureAll: return "structure_all";
  }
  throw std::logic_error("unreachable");
}

bool strategy_is_fixed(StrategyKind s) {
  return s == StrategyKind::Popular || s == StrategyKind::Search || s == StrategyKind::FixedRandom;
}

bool strategy_entity_oriented(StrategyKind s) {
  return s != StrategyKind::RetrieveSentence && s != StrategyKind::RetrieveToken;
}

bool template_allowed(StrategyKind s, TemplateKind t) {
  if (s == StrategyKind::None) return false;
  if (strategy_entity_oriented(s)) return true;
  return t == TemplateKind::Context || t == TemplateKind::Lexical;
}

void validate_label_order(const std::vector<std::string>& order,
                          const std::vector<std::string>& labels) {
  if (order.size() != labels.size())
    throw std::invalid_argument("label order has " + std::to_string(order.size()) +
                                " entries for " + std::to_string(labels.size()) + " labels");
  std::set<std::string> want(labels.begin(), labels.end());
  std::set<std::string> got;
  for (const auto& l : order) {
    if (!want.count(l)) throw std::invalid_argument("label order names unknown label: " + l);
    if (!got.insert(l).second) throw std::invalid_argument("label order repeats label: " + l);
  }
}

Selection select_random(const EntityIndex& ix, const std::vector<std::string>& label_order,
                        std::uint64_t seed) {
  Rng rng(seed);
  Selection sel;
  sel.label_order = label_order;
  for (const auto& label : label_order) {
    const auto& occ = ix.occurrences(label);
    if (occ.empty()) throw std::invalid_argument("no entity occurrences for label " + label);
    const auto& o = occ[uniform_below(rng, occ.size())];
    sel.entries.push_back({label, o.span.surface, o.sentence_id, o.span});
  }
  return sel;
}

Selection select_popular(const EntityIndex& ix, const std::vector<std::string>& label_order) {
  Selection sel;
  sel.label_order = label_order;
  for (const auto& label : label_order) {
    const auto ranked = ix.ranked_surfaces(label);
    if (ranked.empty()) throw std::invalid_argument("no entity occurrences for label " + label);
    const std::string& surface = ranked.front().surface;
    const auto& occ = ix.occurrences(label);
    const Occurrence* pick = nullptr;
    for (const Occurrence& o : occ) {
      if (o.span.surface != surface) continue;
      if (!pick || o.sentence_id < pick->sentence_id) pick = &o;
    }
    sel.entries.push_back({label, surface, pick->sentence_id, pick->span});
  }
  return sel;
}

CandidateEnumerator::CandidateEnumerator(const EntityIndex& ix, int k,
                                         std::vector<std::string> label_order)
    : label_order_(std::move(label_order)) {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  for (const auto& label : label_order_) {
    std::vector<SelectionEntry> ranks;
    const auto ranked = ix.ranked_surfaces(label);
    const auto& occ = ix.occurrences(label);
    for (int r = 0; r < std::min<int>(k, static_cast<int>(ranked.size())); ++r) {
      const std::string& surface = ranked[r].surface;
      const auto it = std::find_if(occ.begin(), occ.end(),
                                   [&](const Occurrence& o) { return o.span.surface == surface; });
      ranks.push_back({label, surface, it->sentence_id, it->span});
    }
    choices_.push_back(std::move(ranks));
  }
}

std::size_t CandidateEnumerator::size() const {
  std::size_t n = 1;
  for (const auto& c : choices_) n *= c.size();
  return n;
}

Selection CandidateEnumerator::at(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("candidate index out of range");
  Selection sel;
  sel.label_order = label_order_;
  sel.entries.resize(choices_.size());
  for (int l = static_cast<int>(choices_.size()) - 1; l >= 0; --l) {
    const std::size_t m = choices_[l].size();
    sel.entries[l] = choices_[l][i % m];
    i /= m;
  }
  return sel;
}

int retrieve_sentence_sim(const Sentence& x, const EntityIndex& ix, const TokenEmbedder& emb,
                          std::optional<int> exclude) {
  const Eigen::VectorXd px = mean_pool(x.tokens, emb);
  return argmax_candidate(ix, exclude, [&](const Sentence& c) {
    return cosine(px, mean_pool(c.tokens, emb));
  });
}

int retrieve_token_sim(const Sentence& x, const EntityIndex& ix, const TokenEmbedder& emb,
                       std::optional<int> exclude) {
  std::vector<Eigen::VectorXd> xe;
  xe.reserve(x.tokens.size());
  for (const auto& t : x.tokens) xe.push_back(emb.embed(t));
  return argmax_candidate(ix, exclude, [&](const Sentence& c) {
    std::vector<Eigen::VectorXd> ce;
    ce.reserve(c.tokens.size());
    for (const auto& t : c.tokens) ce.push_back(emb.embed(t));
    double total = 0.0;
    for (const auto& ex : xe) {
      double best = kNegInf;
      for (const auto& ec : ce) best = std::max(best, cosine(ex, ec));
      total += best;
    }
    return total / static_cast<double>(xe.size());
  });
}

Demonstration render_entity(TemplateKind t, const Selection& sel, const EntityIndex& ix,
                            const std::string& sep) {
  Demonstration dem;
  dem.template_kind = t;
  dem.selection = sel;
  auto& out = dem.tokens;
  for (const auto& entry : sel.entries) {
    out.push_back(sep);
    switch (t) {
      case TemplateKind::NoContext:
        append_pair(out, entry.surface, entry.label);
        break;
      case TemplateKind::Context: {
        const auto& s = ix.sentence(entry.sentence_id);
        out.insert(out.end(), s.tokens.begin(), s.tokens.end());
        ensure_period(out);
        append_pair(out, entry.surface, entry.label);
        break;
      }
      case TemplateKind::Lexical: {
        auto body = replace_spans(ix.sentence(entry.sentence_id), {{entry.span, {entry.label}}});
        ensure_period(body);
        out.insert(out.end(), body.begin(), body.end());
        break;
      }
      case TemplateKind::Structure: {
        auto body = replace_spans(ix.sentence(entry.sentence_id),
                                  {{entry.span, structure_tokens(entry.surface, entry.label)}});
        ensure_period(body);
        out.insert(out.end(), body.begin(), body.end());
        break;
      }
      case TemplateKind::ContextAll: {
        const auto& s = ix.sentence(entry.sentence_id);
        out.insert(out.end(), s.tokens.begin(), s.tokens.end());
        ensure_period(out);
        for (const auto& sp : extract_spans(s)) append_pair(out, sp.surface, sp.label);
        break;
      }
      case TemplateKind::LexicalAll: {
        const auto& s = ix.sentence(entry.sentence_id);
        std::vector<std::pair<EntitySpan, std::vector<std::string>>> repl;
        for (const auto& sp : extract_spans(s)) repl.push_back({sp, {sp.label}});
        auto body = replace_spans(s, std::move(repl));
        ensure_period(body);
        out.insert(out.end(), body.begin(), body.end());
        break;
      }
      case TemplateKind::StructureAll: {
        const auto& s = ix.sentence(entry.sentence_id);
        std::vector<std::pair<EntitySpan, std::vector<std::string>>> repl;
        for (const auto& sp : extract_spans(s)) repl.push_back({sp, structure_tokens(sp.surface, sp.label)});
        auto body = replace_spans(s, std::move(repl));
        ensure_period(body);
        out.insert(out.end(), body.begin(), body.end());
        break;
      }
    }
  }
  return dem;
}

Demonstration render_instance(TemplateKind t, const Sentence& retrieved, int retrieved_id,
                              const std::string& sep) {
  if (t != TemplateKind::Context && t != TemplateKind::Lexical)
    throw std::invalid_argument("instance-oriented demonstrations support only context and lexical");
  Demonstration dem;
  dem.template_kind = t;
  dem.retrieved_id = retrieved_id;
  auto& out = dem.tokens;
  out.push_back(sep);
  if (t == TemplateKind::Context) {
    out.insert(out.end(), retrieved.tokens.begin(), retrieved.tokens.end());
    ensure_period(out);
    for (const auto& sp : extract_spans(retrieved)) append_pair(out, sp.surface, sp.label);
  } else {
    std::vector<std::pair<EntitySpan, std::vector<std::string>>> repl;
    for (const auto& sp : extract_spans(retrieved)) repl.push_back({sp, {sp.label}});
    auto body = replace_spans(retrieved, std::move(repl));
    ensure_period(body);
    out.insert(out.end(), body.begin(), body.end());
  }
  return dem;
}

Demonstration perturb(const Demonstration& dem, const PerturbationSpec& spec, const EntityIndex& ix,
                      const std::string& sep) {
  if (!spec.any()) throw std::invalid_argument("perturbation must set at least one flag");
  if (!dem.selection) throw std::invalid_argument("only entity-oriented demonstrations can be perturbed");
  if (dem.template_kind != TemplateKind::NoContext && dem.template_kind != TemplateKind::Context)
    throw std::invalid_argument("perturbation supports only no_context and context templates");

  Selection sel = *dem.selection;
  Rng rng(spec.seed);
  if (spec.entities) {
    std::vector<const Occurrence*> pool;
    for (const auto& label : ix.labels())
      for (const auto& o : ix.occurrences(label)) pool.push_back(&o);
    if (!pool.empty()) {
      for (auto& entry : sel.entries) {
        const Occurrence& o = *pool[uniform_below(rng, pool.size())];
        entry.surface = o.span.surface;
        entry.sentence_id = o.sentence_id;
        entry.span = o.span;
      }
    }
  }
  if (spec.labels) {
    std::vector<std::string> labels;
    for (const auto& e : sel.entries) labels.push_back(e.label);
    fisher_yates_shuffle(labels, rng);
    for (std::size_t i = 0; i < sel.entries.size(); ++i) sel.entries[i].label = labels[i];
  }
  if (spec.contexts) {
    for (auto& entry : sel.entries) {
      entry.sentence_id = static_cast<int>(uniform_below(rng, ix.sentence_count()));
      entry.span = EntitySpan{};
    }
  }
  Demonstration out = render_entity(dem.template_kind, sel, ix, sep);
  out.strategy = dem.strategy;
  return out;
}

DemonstrationBuilder::DemonstrationBuilder(const Dataset& train, DemonstrationConfig cfg,
                                           std::shared_ptr<const TokenEmbedder> embedder)
    : index_(EntityIndex::build(train)), cfg_(std::move(cfg)), embedder_(std::move(embedder)) {
  if (cfg_.strategy == StrategyKind::Search)
    throw std::invalid_argument("search builds one builder per candidate selection");
  finish_setup();
  if (!strategy_entity_oriented(cfg_.strategy) && !embedder_)
    throw std::invalid_argument("retrieval strategies need a token embedder");
  if (cfg_.strategy == StrategyKind::Popular) {
    auto dem = render_entity(cfg_.template_kind, select_popular(index_, cfg_.label_order), index_, cfg_.sep);
    dem.strategy = cfg_.strategy;
    fixed_ = std::move(dem);
  } else if (cfg_.strategy == StrategyKind::FixedRandom) {
    auto sel = select_random(index_, cfg_.label_order, mix_seed(cfg_.seed, 0xf17ed));
    auto dem = render_entity(cfg_.template_kind, sel, index_, cfg_.sep);
    dem.strategy = cfg_.strategy;
    fixed_ = std::move(dem);
  } else if (cfg_.strategy == StrategyKind::Random) {
    for (const auto& label : cfg_.label_order)
      if (index_.occurrences(label).empty())
        throw std::invalid_argument("no entity occurrences for label " + label);
  }
  if (fixed_ && cfg_.perturbation) fixed_ = perturb(*fixed_, *cfg_.perturbation, index_, cfg_.sep);
}

DemonstrationBuilder::DemonstrationBuilder(const Dataset& train, DemonstrationConfig cfg,
                                           Selection candidate)
    : index_(EntityIndex::build(train)), cfg_(std::move(cfg)) {
  if (cfg_.strategy != StrategyKind::Search)
    throw std::invalid_argument("candidate selections are only for the search strategy");
  finish_setup();
  auto dem = render_entity(cfg_.template_kind, std::move(candidate), index_, cfg_.sep);
  dem.strategy = cfg_.strategy;
  fixed_ = std::move(dem);
  if (cfg_.perturbation) fixed_ = perturb(*fixed_, *cfg_.perturbation, index_, cfg_.sep);
}

void DemonstrationBuilder::finish_setup() {
  if (cfg_.strategy == StrategyKind::None)
    throw std::invalid_argument("the no-demonstration baseline does not build demonstrations");
  if (!template_allowed(cfg_.strategy, cfg_.template_kind))
    throw std::invalid_argument("template " + template_name(cfg_.template_kind) +
                                " is not available for strategy " + strategy_name(cfg_.strategy));
  if (cfg_.label_order.empty())
    cfg_.label_order = index_.labels();
  else
    validate_label_order(cfg_.label_order, index_.labels());
  if (cfg_.perturbation && !strategy_entity_oriented(cfg_.strategy))
    throw std::invalid_argument("perturbation needs an entity-oriented strategy");
}

Demonstration DemonstrationBuilder::build(const Sentence& x, std::uint64_t instance_id,
                                          std::optional<int> exclude_train_index) const {
  if (fixed_) return *fixed_;
  if (cfg_.strategy == StrategyKind::Random) {
    auto sel = select_random(index_, cfg_.label_order, mix_seed(cfg_.seed, instance_id));
    auto dem = render_entity(cfg_.template_kind, std::move(sel), index_, cfg_.sep);
    dem.strategy = cfg_.strategy;
    if (cfg_.perturbation) {
      PerturbationSpec spec = *cfg_.perturbation;
      spec.seed = mix_seed(spec.seed, instance_id);
      dem = perturb(dem, spec, index_, cfg_.sep);
    }
    return dem;
  }
  const int id = cfg_.strategy == StrategyKind::RetrieveSentence
                     ? retrieve_sentence_sim(x, index_, *embedder_, exclude_train_index)
                     : retrieve_token_sim(x, index_, *embedder_, exclude_train_index);
  auto dem = render_instance(cfg_.template_kind, index_.sentence(id), id, cfg_.sep);
  dem.strategy = cfg_.strategy;
  return dem;
}

}  // namespace nerdem
