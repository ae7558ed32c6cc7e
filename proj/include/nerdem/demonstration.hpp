#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nerdem/corpus.hpp"

namespace nerdem {

enum class StrategyKind { None, Random, FixedRandom, Popular, Search, RetrieveSentence, RetrieveToken };
enum class TemplateKind { NoContext, Context, Lexical, ContextAll, LexicalAll, Structure, StructureAll };

StrategyKind strategy_from_name(const std::string& name);
std::string strategy_name(StrategyKind s);
TemplateKind template_from_name(const std::string& name);
std::string template_name(TemplateKind t);

// popular/search/fixed_random give every input the same demonstration.
bool strategy_is_fixed(StrategyKind s);
bool strategy_entity_oriented(StrategyKind s);
bool template_allowed(StrategyKind s, TemplateKind t);

struct SelectionEntry {
  std::string label;
  std::string surface;
  int sentence_id = -1;
  EntitySpan span;
};

struct Selection {
  std::vector<SelectionEntry> entries;  // one per label, in label_order
  std::vector<std::string> label_order;
};

struct Demonstration {
  std::vector<std::string> tokens;  // starts with the separator token
  StrategyKind strategy = StrategyKind::None;
  TemplateKind template_kind = TemplateKind::NoContext;
  std::optional<Selection> selection;
  std::optional<int> retrieved_id;
};

struct PerturbationSpec {
  bool entities = false;
  bool labels = false;
  bool contexts = false;
  std::uint64_t seed = 0;

  bool any() const { return entities || labels || contexts; }
};

// Throws if order is not a permutation of labels.
void validate_label_order(const std::vector<std::string>& order,
                          const std::vector<std::string>& labels);

Selection select_random(const EntityIndex& ix, const std::vector<std::string>& label_order,
                        std::uint64_t seed);
Selection select_popular(const EntityIndex& ix, const std::vector<std::string>& label_order);

// Cartesian product of the top-k surfaces per label (frequency rank, corpus
// position tie-break), random access in lexicographic order over per-label
// ranks with the rightmost label varying fastest.
class CandidateEnumerator {
 public:
  CandidateEnumerator(const EntityIndex& ix, int k, std::vector<std::string> label_order);
  std::size_t size() const;
  Selection at(std::size_t i) const;

 private:
  std::vector<std::string> label_order_;
  std::vector<std::vector<SelectionEntry>> choices_;  // per label, rank order
};

class TokenEmbedder {
 public:
  virtual ~TokenEmbedder() = default;
  virtual Eigen::VectorXd embed(const std::string& token) const = 0;
};

// Index into the training sentences of ix; exclude skips that index (identity
// exclusion, not content equality). Ties go to the earliest corpus position;
// zero-norm vectors score -inf.
int retrieve_sentence_sim(const Sentence& x, const EntityIndex& ix, const TokenEmbedder& emb,
                          std::optional<int> exclude);
int retrieve_token_sim(const Sentence& x, const EntityIndex& ix, const TokenEmbedder& emb,
                       std::optional<int> exclude);

Demonstration render_entity(TemplateKind t, const Selection& sel, const EntityIndex& ix,
                            const std::string& sep);
Demonstration render_instance(TemplateKind t, const Sentence& retrieved, int retrieved_id,
                              const std::string& sep);

// Re-renders with entities resampled label-blind, labels shuffled, and/or
// context sentences resampled, per the set flags. Only no_context and context
// demonstrations can be perturbed; the other templates splice the entity into
// its source sentence, which a random replacement cannot satisfy.
Demonstration perturb(const Demonstration& dem, const PerturbationSpec& spec, const EntityIndex& ix,
                      const std::string& sep);

struct DemonstrationConfig {
  StrategyKind strategy = StrategyKind::Popular;
  TemplateKind template_kind = TemplateKind::Context;
  int k = 3;
  std::string sep = "[SEP]";
  std::vector<std::string> label_order;  // empty means the dataset's label_set
  std::uint64_t seed = 0;
  std::optional<PerturbationSpec> perturbation;
};

// Run-scoped factory: owns the entity index and the strategy state. Fixed
// strategies render once at construction; variable strategies derive their
// draw from (seed, instance_id) so a given instance sees one demonstration
// for the whole run.
class DemonstrationBuilder {
 public:
  DemonstrationBuilder(const Dataset& train, DemonstrationConfig cfg,
                       std::shared_ptr<const TokenEmbedder> embedder);
  // Search uses one builder per candidate selection.
  DemonstrationBuilder(const Dataset& train, DemonstrationConfig cfg, Selection candidate);

  Demonstration build(const Sentence& x, std::uint64_t instance_id,
                      std::optional<int> exclude_train_index) const;

  const EntityIndex& index() const { return index_; }
  const DemonstrationConfig& config() const { return cfg_; }

 private:
  void finish_setup();

  EntityIndex index_;
  DemonstrationConfig cfg_;
  std::shared_ptr<const TokenEmbedder> embedder_;
  std::optional<Demonstration> fixed_;
};

}  // namespace nerdem
