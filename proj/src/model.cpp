#include "nerdem/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nerdem/common.hpp"

namespace nerdem {

Vocab Vocab::build(const std::vector<const Dataset*>& sources,
                   const std::vector<std::string>& extra_tokens) {
  Vocab v;
  auto add = [&](const std::string& t) {
    if (v.by_token_.emplace(t, static_cast<int>(v.tokens_.size())).second) v.tokens_.push_back(t);
  };
  add("[PAD]");
  add("[UNK]");
  add("[SEP]");
  for (const Dataset* d : sources)
    for (const auto& s : d->sentences)
      for (const auto& t : s.tokens) add(t);
  for (const auto& t : extra_tokens) add(t);
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = by_token_.find(token);
  return it == by_token_.end() ? kUnkId : it->second;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> template_tokens(const std::vector<std::string>& labels) {
  std::vector<std::string> out{"is", ".", "[", "|", "]"};
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

Model Model::init(EncoderConfig config, const Vocab& vocab, const std::vector<std::string>& labels,
                  std::uint64_t seed, bool hard_transitions) {
  config.vocab_size = vocab.size();
  Model m;
  m.encoder = EncoderParams::init(config, mix_seed(seed, 1));
  m.vocab = vocab;
  m.tags = TagSet::bioes(labels);
  m.hard_transitions = hard_transitions;
  m.structure_mask = transition_mask(m.tags);
  const int y = m.tags.size();
  m.crf.w_emission.resize(config.d_model, y);
  m.crf.transitions.resize(y + 2, y + 2);
  Rng rng(mix_seed(seed, 2));
  for (Eigen::Index r = 0; r < m.crf.w_emission.rows(); ++r)
    for (Eigen::Index c = 0; c < m.crf.w_emission.cols(); ++c)
      m.crf.w_emission(r, c) = 0.02 * gaussian(rng);
  for (Eigen::Index r = 0; r < m.crf.transitions.rows(); ++r)
    for (Eigen::Index c = 0; c < m.crf.transitions.cols(); ++c)
      m.crf.transitions(r, c) = 0.02 * gaussian(rng);
  return m;
}

Eigen::MatrixXd Model::effective_transitions() const {
  if (!hard_transitions) return crf.transitions;
  return crf.transitions + structure_mask;
}

std::vector<std::pair<std::string, Eigen::MatrixXd*>> named_tensors(Model& m) {
  auto out = named_tensors(m.encoder);
  out.emplace_back("crf.w_emission", &m.crf.w_emission);
  out.emplace_back("crf.transitions", &m.crf.transitions);
  return out;
}

ComposedInput compose_input(const Vocab& vocab, const Sentence& x, const Demonstration* dem,
                            int max_len) {
  ComposedInput in;
  in.ids = vocab.encode(x.tokens);
  in.boundary = static_cast<int>(in.ids.size());
  if (in.boundary > max_len)
    throw std::invalid_argument("sentence of " + std::to_string(in.boundary) +
                                " tokens exceeds max_len " + std::to_string(max_len));
  if (dem) {
    const auto dem_ids = vocab.encode(dem->tokens);
    const int room = max_len - in.boundary;
    const int take = std::min<int>(room, static_cast<int>(dem_ids.size()));
    in.ids.insert(in.ids.end(), dem_ids.begin(), dem_ids.begin() + take);
  }
  return in;
}

ModelGrads ModelGrads::zeros_like(const Model& m) {
  ModelGrads g;
  g.encoder = EncoderParams::zeros_like(m.encoder);
  g.d_w_emission.setZero(m.crf.w_emission.rows(), m.crf.w_emission.cols());
  g.d_transitions.setZero(m.crf.transitions.rows(), m.crf.transitions.cols());
  return g;
}

void ModelGrads::zero() {
  for (auto& [name, t] : named_tensors(encoder)) t->setZero();
  d_w_emission.setZero();
  d_transitions.setZero();
}

double model_loss(Model& m, const ComposedInput& in, const std::vector<int>& tag_ids, RunMode mode,
                  Rng* rng, ModelGrads* grads) {
  ForwardCache cache;
  HiddenStates hs = encoder_forward(m.encoder, in.ids, in.boundary, mode, rng, grads ? &cache : nullptr);
  const Eigen::MatrixXd hx = hs.h.topRows(in.boundary);
  const Eigen::MatrixXd emissions = hx * m.crf.w_emission;
  const Eigen::MatrixXd trans = m.effective_transitions();
  const double loss = -crf_log_likelihood(emissions, tag_ids, trans);
  if (grads) {
    CrfGradients cg = crf_gradients(emissions, tag_ids, trans);
    grads->d_transitions += cg.d_transitions;
    grads->d_w_emission += hx.transpose() * cg.d_emissions;
    Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(hs.h.rows(), hs.h.cols());
    dh.topRows(in.boundary) = cg.d_emissions * m.crf.w_emission.transpose();
    encoder_backward(m.encoder, cache, dh, grads->encoder);
  }
  return loss;
}

std::vector<int> model_predict(const Model& m, const ComposedInput& in) {
  HiddenStates hs = encoder_forward(m.encoder, in.ids, in.boundary, RunMode::Eval, nullptr, nullptr);
  const Eigen::MatrixXd emissions = hs.h.topRows(in.boundary) * m.crf.w_emission;
  return crf_viterbi(emissions, m.effective_transitions()).tags;
}

void transfer_embedder(const EncoderParams& source, Model& target) {
  if (!(source.config == target.encoder.config))
    throw std::invalid_argument("encoder configs differ; cannot transfer embedder weights");
  target.encoder = source;
}

namespace {

constexpr char kMagic[4] = {'N', 'D', 'E', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("model file truncated");
  return v;
}

}  // namespace

void save_model(const std::string& path, Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out.write(kMagic, 4);
  put(out, kVersion);

  nlohmann::json header;
  header["config"] = {{"vocab_size", m.encoder.config.vocab_size},
                      {"d_model", m.encoder.config.d_model},
                      {"n_heads", m.encoder.config.n_heads},
                      {"n_layers", m.encoder.config.n_layers},
                      {"max_len", m.encoder.config.max_len},
                      {"dropout", m.encoder.config.dropout}};
  header["labels"] = m.tags.labels();
  header["vocab"] = m.vocab.tokens();
  header["hard_transitions"] = m.hard_transitions;
  const std::string hs = header.dump();
  put(out, static_cast<std::uint64_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  for (auto& [name, t] : named_tensors(m)) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint64_t>(t->rows()));
    put(out, static_cast<std::uint64_t>(t->cols()));
    for (Eigen::Index r = 0; r < t->rows(); ++r)
      for (Eigen::Index c = 0; c < t->cols(); ++c) put(out, (*t)(r, c));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a model file: " + path);
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("unsupported model version " + std::to_string(version));

  const auto header_len = get<std::uint64_t>(in);
  std::string hs(header_len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("model file truncated");
  const nlohmann::json header = nlohmann::json::parse(hs);

  EncoderConfig cfg;
  cfg.vocab_size = header.at("config").at("vocab_size").get<int>();
  cfg.d_model = header.at("config").at("d_model").get<int>();
  cfg.n_heads = header.at("config").at("n_heads").get<int>();
  cfg.n_layers = header.at("config").at("n_layers").get<int>();
  cfg.max_len = header.at("config").at("max_len").get<int>();
  cfg.dropout = header.at("config").at("dropout").get<double>();
  const auto labels = header.at("labels").get<std::vector<std::string>>();
  const auto vocab_tokens = header.at("vocab").get<std::vector<std::string>>();

  Dataset empty;
  std::vector<std::string> extras(vocab_tokens.begin() + 3, vocab_tokens.end());
  Vocab vocab = Vocab::build({&empty}, extras);
  Model m = Model::init(cfg, vocab, labels, 0, header.at("hard_transitions").get<bool>());
  if (m.vocab.size() != static_cast<int>(vocab_tokens.size()))
    throw std::runtime_error("vocab reconstruction mismatch in " + path);

  for (auto& [name, t] : named_tensors(m)) {
    const auto name_len = get<std::uint32_t>(in);
    std::string got(name_len, '\0');
    in.read(got.data(), name_len);
    if (!in || got != name) throw std::runtime_error("unexpected tensor block '" + got + "' in " + path);
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows != static_cast<std::uint64_t>(t->rows()) || cols != static_cast<std::uint64_t>(t->cols()))
      throw std::runtime_error("tensor shape mismatch for '" + name + "' in " + path);
    for (Eigen::Index r = 0; r < t->rows(); ++r)
      for (Eigen::Index c = 0; c < t->cols(); ++c) (*t)(r, c) = get<double>(in);
  }
  return m;
}

}  // namespace nerdem
