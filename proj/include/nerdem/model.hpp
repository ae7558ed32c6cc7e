#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nerdem/crf.hpp"
#include "nerdem/demonstration.hpp"
#include "nerdem/encoder.hpp"

namespace nerdem {

// Whole-word vocabulary with reserved [PAD]=0, [UNK]=1, [SEP]=2. Lookup of an
// unknown token yields the UNK id.
class Vocab {
 public:
  static Vocab build(const std::vector<const Dataset*>& sources,
                     const std::vector<std::string>& extra_tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(id); }
  int size() const { return static_cast<int>(tokens_.size()); }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> by_token_;
};

// Tokens demonstrations can introduce beyond the corpus vocabulary: template
// glue plus the label strings themselves.
std::vector<std::string> template_tokens(const std::vector<std::string>& labels);

struct CrfHead {
  Eigen::MatrixXd w_emission;   // d_model x |Y|
  Eigen::MatrixXd transitions;  // (|Y|+2) x (|Y|+2)
};

struct Model {
  EncoderParams encoder;
  CrfHead crf;
  Vocab vocab;
  TagSet tags;
  bool hard_transitions = false;
  Eigen::MatrixXd structure_mask;  // 0 / -1e4 penalties, used when hard_transitions

  static Model init(EncoderConfig config, const Vocab& vocab, const std::vector<std::string>& labels,
                    std::uint64_t seed, bool hard_transitions = false);

  Eigen::MatrixXd effective_transitions() const;
};

std::vector<std::pair<std::string, Eigen::MatrixXd*>> named_tensors(Model& m);

struct ComposedInput {
  std::vector<int> ids;
  int boundary = 0;  // |x|; demonstration ids follow
};

// Truncates the demonstration from its right end when the pair overflows
// max_len; x itself must fit.
ComposedInput compose_input(const Vocab& vocab, const Sentence& x, const Demonstration* dem,
                            int max_len);

struct ModelGrads {
  EncoderParams encoder;
  Eigen::MatrixXd d_w_emission;
  Eigen::MatrixXd d_transitions;

  static ModelGrads zeros_like(const Model& m);
  void zero();
};

// Negative log-likelihood of the gold tags; accumulates into grads when given.
double model_loss(Model& m, const ComposedInput& in, const std::vector<int>& tag_ids, RunMode mode,
                  Rng* rng, ModelGrads* grads);

std::vector<int> model_predict(const Model& m, const ComposedInput& in);

// Copies the encoder weights into target, leaving target's CRF head at its own
// fresh initialization. Label sets may differ; encoder configs may not.
void transfer_embedder(const EncoderParams& source, Model& target);

void save_model(const std::string& path, Model& m);
Model load_model(const std::string& path);

// Frozen snapshot of a model's input embedding table, used as the similarity
// space for retrieval strategies.
class StaticModelEmbedder : public TokenEmbedder {
 public:
  StaticModelEmbedder(const Model& m) : table_(m.encoder.tok_emb), vocab_(m.vocab) {}
  Eigen::VectorXd embed(const std::string& token) const override {
    return table_.row(vocab_.id(token)).transpose();
  }

 private:
  Eigen::MatrixXd table_;
  Vocab vocab_;
};

}  // namespace nerdem
