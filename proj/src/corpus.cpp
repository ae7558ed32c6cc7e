#include "nerdem/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nerdem/common.hpp"

namespace nerdem {

std::string scheme_name(Scheme s) { return s == Scheme::IOB2 ? "IOB2" : "BIOES"; }

bool operator==(const EntitySpan& a, const EntitySpan& b) {
  return a.label == b.label && a.start == b.start && a.end == b.end && a.surface == b.surface;
}

std::string join_tokens(const std::vector<std::string>& tokens, int start, int end) {
  std::string out;
  for (int i = start; i <= end; ++i) {
    if (i > start) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
}

std::optional<std::pair<char, std::string>> parse_tag(const std::string& tag) {
  if (tag == "O") return std::make_pair('O', std::string());
  if (tag.size() < 3 || tag[1] != '-') return std::nullopt;
  const char p = tag[0];
  if (p != 'B' && p != 'I' && p != 'E' && p != 'S') return std::nullopt;
  return std::make_pair(p, tag.substr(2));
}

namespace {

bool prefix_in_scheme(char p, Scheme s) {
  if (p == 'O' || p == 'B' || p == 'I') return true;
  return s == Scheme::BIOES && (p == 'E' || p == 'S');
}

[[noreturn]] void bad_tag(const Sentence& s, int pos, const std::string& why) {
  throw std::invalid_argument("invalid tag sequence at position " + std::to_string(pos) + " (tag '" +
                              s.tags[pos] + "'): " + why);
}

}  // namespace

void validate_sentence(const Sentence& s) {
  if (s.tokens.empty()) throw std::invalid_argument("sentence must be non-empty");
  if (s.tokens.size() != s.tags.size())
    throw std::invalid_argument("token/tag length mismatch: " + std::to_string(s.tokens.size()) +
                                " vs " + std::to_string(s.tags.size()));
  const int n = static_cast<int>(s.tags.size());
  char prev_p = 'O';
  std::string prev_l;
  for (int i = 0; i < n; ++i) {
    const auto parsed = parse_tag(s.tags[i]);
    if (!parsed) bad_tag(s, i, "unknown tag form");
    const auto [p, l] = *parsed;
    if (!prefix_in_scheme(p, s.scheme)) bad_tag(s, i, "prefix not in " + scheme_name(s.scheme));
    const bool continues = (prev_p == 'B' || prev_p == 'I');
    if (s.scheme == Scheme::IOB2) {
      if (p == 'I' && !(continues && l == prev_l)) bad_tag(s, i, "I- must continue a same-label entity");
    } else {
      if ((p == 'I' || p == 'E') && !(continues && l == prev_l))
        bad_tag(s, i, std::string(1, p) + "- must continue a same-label entity");
      if (continues && !((p == 'I' || p == 'E') && l == prev_l))
        bad_tag(s, i, "open entity must continue with I- or close with E-");
    }
    prev_p = p;
    prev_l = l;
  }
  if (s.scheme == Scheme::BIOES && (prev_p == 'B' || prev_p == 'I'))
    bad_tag(s, n - 1, "entity left open at sentence end");
}

Dataset parse_conll(const std::string& text, int token_col, int tag_col) {
  if (token_col < 0 || tag_col < 0) throw std::invalid_argument("column indices must be non-negative");
  struct RawSentence {
    std::vector<std::string> tokens, tags;
    std::vector<int> lines;
  };
  std::vector<RawSentence> raw;
  RawSentence cur;
  const int need = std::max(token_col, tag_col) + 1;

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto flush = [&] {
    if (!cur.tokens.empty()) raw.push_back(std::move(cur));
    cur = RawSentence{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("-DOCSTART-", 0) == 0) continue;
    std::istringstream ls(line);
    std::vector<std::string> cols;
    std::string c;
    while (ls >> c) cols.push_back(std::move(c));
    if (cols.empty()) {
      flush();
      continue;
    }
    if (static_cast<int>(cols.size()) < need)
      throw std::runtime_error("parse error at line " + std::to_string(line_no) + ": expected at least " +
                               std::to_string(need) + " columns, got " + std::to_string(cols.size()));
    cur.tokens.push_back(cols[token_col]);
    cur.tags.push_back(cols[tag_col]);
    cur.lines.push_back(line_no);
  }
  flush();

  bool bioes = false;
  for (const auto& rs : raw) {
    for (std::size_t i = 0; i < rs.tags.size(); ++i) {
      const auto parsed = parse_tag(rs.tags[i]);
      if (!parsed)
        throw std::runtime_error("parse error at line " + std::to_string(rs.lines[i]) +
                                 ": unknown tag '" + rs.tags[i] + "'");
      if (parsed->first == 'E' || parsed->first == 'S') bioes = true;
    }
  }
  const Scheme scheme = bioes ? Scheme::BIOES : Scheme::IOB2;

  Dataset d;
  std::set<std::string> seen;
  for (auto& rs : raw) {
    Sentence s{std::move(rs.tokens), std::move(rs.tags), scheme};
    try {
      validate_sentence(s);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("parse error near line " + std::to_string(rs.lines.front()) + ": " +
                               e.what());
    }
    for (const auto& t : s.tags) {
      const auto parsed = parse_tag(t);
      if (parsed->first != 'O' && seen.insert(parsed->second).second) d.label_set.push_back(parsed->second);
    }
    d.sentences.push_back(std::move(s));
  }
  return d;
}

Dataset load_conll_file(const std::string& path, int token_col, int tag_col) {
  return parse_conll(read_text_file(path), token_col, tag_col);
}

std::string to_conll(const Dataset& d) {
  std::string out;
  for (const auto& s : d.sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      out += s.tokens[i];
      out += ' ';
      out += s.tags[i];
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

std::vector<EntitySpan> extract_spans(const Sentence& s) {
  validate_sentence(s);
  std::vector<EntitySpan> spans;
  const int n = static_cast<int>(s.tags.size());
  int open = -1;
  std::string open_label;
  for (int i = 0; i < n; ++i) {
    const auto [p, l] = *parse_tag(s.tags[i]);
    if (s.scheme == Scheme::BIOES) {
      switch (p) {
        case 'S': spans.push_back({l, i, i, join_tokens(s.tokens, i, i)}); break;
        case 'B': open = i; open_label = l; break;
        case 'E':
          spans.push_back({open_label, open, i, join_tokens(s.tokens, open, i)});
          open = -1;
          break;
        default: break;  // O continues nothing, I extends the open run
      }
    } else {
      const bool closes = open >= 0 && !(p == 'I' && l == open_label);
      if (closes) {
        spans.push_back({open_label, open, i - 1, join_tokens(s.tokens, open, i - 1)});
        open = -1;
      }
      if (p == 'B') {
        open = i;
        open_label = l;
      }
    }
  }
  if (open >= 0) spans.push_back({open_label, open, n - 1, join_tokens(s.tokens, open, n - 1)});
  return spans;
}

std::vector<EntitySpan> spans_from_tags_lenient(const std::vector<std::string>& tokens,
                                                const std::vector<std::string>& tags,
                                                Scheme scheme) {
  std::vector<EntitySpan> spans;
  const int n = static_cast<int>(tags.size());
  int i = 0;
  auto prefix_of = [&](int k) -> std::pair<char, std::string> {
    const auto parsed = parse_tag(tags[k]);
    if (!parsed || !prefix_in_scheme(parsed->first, scheme)) return {'O', ""};
    return *parsed;
  };
  while (i < n) {
    const auto [p, l] = prefix_of(i);
    if (p == 'O') {
      ++i;
      continue;
    }
    if (scheme == Scheme::BIOES && p == 'S') {
      spans.push_back({l, i, i, join_tokens(tokens, i, i)});
      ++i;
      continue;
    }
    if (scheme == Scheme::BIOES && p == 'E') {  // orphan close
      spans.push_back({l, i, i, join_tokens(tokens, i, i)});
      ++i;
      continue;
    }
    // B- or orphan I- opens a run
    int j = i;
    while (j + 1 < n) {
      const auto [np, nl] = prefix_of(j + 1);
      if (np == 'I' && nl == l) {
        ++j;
        continue;
      }
      if (scheme == Scheme::BIOES && np == 'E' && nl == l) {
        ++j;
        break;
      }
      break;
    }
    spans.push_back({l, i, j, join_tokens(tokens, i, j)});
    i = j + 1;
  }
  return spans;
}

std::vector<std::string> spans_to_tags(const std::vector<EntitySpan>& spans, int len, Scheme scheme) {
  std::vector<std::string> tags(len, "O");
  std::vector<bool> used(len, false);
  for (const auto& sp : spans) {
    if (sp.start < 0 || sp.end < sp.start || sp.end >= len)
      throw std::invalid_argument("span out of range: [" + std::to_string(sp.start) + "," +
                                  std::to_string(sp.end) + "] with length " + std::to_string(len));
    for (int i = sp.start; i <= sp.end; ++i) {
      if (used[i]) throw std::invalid_argument("overlapping spans at token " + std::to_string(i));
      used[i] = true;
    }
    if (scheme == Scheme::IOB2) {
      tags[sp.start] = "B-" + sp.label;
      for (int i = sp.start + 1; i <= sp.end; ++i) tags[i] = "I-" + sp.label;
    } else if (sp.start == sp.end) {
      tags[sp.start] = "S-" + sp.label;
    } else {
      tags[sp.start] = "B-" + sp.label;
      for (int i = sp.start + 1; i < sp.end; ++i) tags[i] = "I-" + sp.label;
      tags[sp.end] = "E-" + sp.label;
    }
  }
  return tags;
}

Dataset convert_scheme(const Dataset& d, Scheme target) {
  Dataset out;
  out.label_set = d.label_set;
  out.sentences.reserve(d.sentences.size());
  for (std::size_t si = 0; si < d.sentences.size(); ++si) {
    const auto& s = d.sentences[si];
    std::vector<EntitySpan> spans;
    try {
      spans = extract_spans(s);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("sentence " + std::to_string(si) + ": " + e.what());
    }
    out.sentences.push_back(
        {s.tokens, spans_to_tags(spans, static_cast<int>(s.tokens.size()), target), target});
  }
  return out;
}

std::vector<std::string> distinct_tags(const Dataset& d) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& s : d.sentences)
    for (const auto& t : s.tags)
      if (seen.insert(t).second) out.push_back(t);
  return out;
}

Dataset subsample(const Dataset& d, int n, std::uint64_t seed, int max_attempts) {
  const int total = d.size();
  if (n < 0 || n > total)
    throw std::invalid_argument("subsample size " + std::to_string(n) + " out of range for dataset of " +
                                std::to_string(total));
  std::set<std::string> required;
  for (const auto& t : distinct_tags(d)) required.insert(t);

  Rng rng(seed);
  std::vector<int> missing_last;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<int> idx(total);
    for (int i = 0; i < total; ++i) idx[i] = i;
    for (int i = 0; i < n; ++i) {
      const int j = i + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(total - i)));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());

    std::set<std::string> covered;
    for (int i : idx)
      for (const auto& t : d.sentences[i].tags) covered.insert(t);
    bool ok = true;
    std::string missing;
    for (const auto& t : required) {
      if (!covered.count(t)) {
        ok = false;
        if (!missing.empty()) missing += ", ";
        missing += t;
      }
    }
    if (ok) {
      Dataset out;
      out.label_set = d.label_set;
      for (int i : idx) out.sentences.push_back(d.sentences[i]);
      return out;
    }
    if (attempt + 1 == max_attempts)
      throw std::runtime_error("coverage unsatisfiable after " + std::to_string(max_attempts) +
                               " attempts; missing tags: " + missing);
  }
  throw std::runtime_error("coverage unsatisfiable: no attempts made");
}

std::vector<LabelStat> entity_statistics(const std::vector<Dataset>& samples) {
  if (samples.empty()) throw std::invalid_argument("entity_statistics needs at least one sample");
  std::vector<std::string> labels;
  std::set<std::string> seen;
  for (const auto& d : samples)
    for (const auto& l : d.label_set)
      if (seen.insert(l).second) labels.push_back(l);

  std::vector<LabelStat> out;
  const double k = static_cast<double>(samples.size());
  for (const auto& label : labels) {
    std::vector<double> counts;
    for (const auto& d : samples) {
      int c = 0;
      for (const auto& s : d.sentences)
        for (const auto& sp : extract_spans(s))
          if (sp.label == label) ++c;
      counts.push_back(static_cast<double>(c));
    }
    double mean = 0.0;
    for (double c : counts) mean += c;
    mean /= k;
    double var = 0.0;
    for (double c : counts) var += (c - mean) * (c - mean);
    var /= k;
    out.push_back({label, mean, std::sqrt(var)});
  }
  return out;
}

EntityIndex EntityIndex::build(const Dataset& d) {
  EntityIndex ix;
  ix.labels_ = d.label_set;
  ix.sentences_ = d.sentences;
  for (const auto& l : ix.labels_) {
    ix.by_label_[l];
    ix.counts_[l];
  }
  for (int si = 0; si < d.size(); ++si) {
    for (auto& sp : extract_spans(d.sentences[si])) {
      auto& counts = ix.counts_[sp.label];
      auto it = std::find_if(counts.begin(), counts.end(),
                             [&](const SurfaceCount& sc) { return sc.surface == sp.surface; });
      if (it == counts.end())
        counts.push_back({sp.surface, 1});
      else
        ++it->count;
      ix.by_label_[sp.label].push_back({si, std::move(sp)});
    }
  }
  return ix;
}

const std::vector<Occurrence>& EntityIndex::occurrences(const std::string& label) const {
  auto it = by_label_.find(label);
  if (it == by_label_.end()) throw std::out_of_range("unknown label: " + label);
  return it->second;
}

std::vector<SurfaceCount> EntityIndex::ranked_surfaces(const std::string& label) const {
  auto it = counts_.find(label);
  if (it == counts_.end()) throw std::out_of_range("unknown label: " + label);
  std::vector<SurfaceCount> out = it->second;
  std::stable_sort(out.begin(), out.end(),
                   [](const SurfaceCount& a, const SurfaceCount& b) { return a.count > b.count; });
  return out;
}

int EntityIndex::total_occurrences() const {
  int total = 0;
  for (const auto& [_, v] : by_label_) total += static_cast<int>(v.size());
  return total;
}

}  // namespace nerdem
