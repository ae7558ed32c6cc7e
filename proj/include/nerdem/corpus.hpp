#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace nerdem {

enum class Scheme { IOB2, BIOES };

std::string scheme_name(Scheme s);

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
  Scheme scheme = Scheme::BIOES;
};

struct EntitySpan {
  std::string label;
  int start = 0;  // inclusive
  int end = 0;    // inclusive
  std::string surface;
};

bool operator==(const EntitySpan& a, const EntitySpan& b);

struct Dataset {
  std::vector<Sentence> sentences;
  std::vector<std::string> label_set;

  int size() const { return static_cast<int>(sentences.size()); }
};

// "O" -> ('O', ""); "B-PER" -> ('B', "PER"); malformed -> nullopt.
std::optional<std::pair<char, std::string>> parse_tag(const std::string& tag);

// Throws std::invalid_argument naming the position if the tag sequence is not
// well formed for the sentence's scheme.
void validate_sentence(const Sentence& s);

Dataset parse_conll(const std::string& text, int token_col, int tag_col);
Dataset load_conll_file(const std::string& path, int token_col, int tag_col);
std::string to_conll(const Dataset& d);

Dataset convert_scheme(const Dataset& d, Scheme target);

// Strict: input must satisfy the Sentence invariants.
std::vector<EntitySpan> extract_spans(const Sentence& s);

// Total on arbitrary tag strings (unknown tags count as O, orphan I/E runs
// still open spans). Agrees with extract_spans on valid sequences.
std::vector<EntitySpan> spans_from_tags_lenient(const std::vector<std::string>& tokens,
                                                const std::vector<std::string>& tags,
                                                Scheme scheme);

std::vector<std::string> spans_to_tags(const std::vector<EntitySpan>& spans, int len, Scheme scheme);

std::vector<std::string> distinct_tags(const Dataset& d);

Dataset subsample(const Dataset& d, int n, std::uint64_t seed, int max_attempts = 10000);

struct LabelStat {
  std::string label;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

std::vector<LabelStat> entity_statistics(const std::vector<Dataset>& samples);

struct Occurrence {
  int sentence_id = 0;
  EntitySpan span;
};

struct SurfaceCount {
  std::string surface;
  int count = 0;
};

class EntityIndex {
 public:
  static EntityIndex build(const Dataset& d);

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<Occurrence>& occurrences(const std::string& label) const;
  // Highest count first; ties broken by earliest first occurrence.
  std::vector<SurfaceCount> ranked_surfaces(const std::string& label) const;
  const Sentence& sentence(int id) const { return sentences_.at(id); }
  int sentence_count() const { return static_cast<int>(sentences_.size()); }
  int total_occurrences() const;

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::vector<Occurrence>> by_label_;
  std::unordered_map<std::string, std::vector<SurfaceCount>> counts_;  // insertion order
  std::vector<Sentence> sentences_;
};

std::string join_tokens(const std::vector<std::string>& tokens, int start, int end);

}  // namespace nerdem
