#include "nerdem/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>

#include "nerdem/common.hpp"

namespace nerdem {

namespace {

constexpr double kZipfExponent = 1.6;
constexpr int kCueWordsPerLabel = 8;
constexpr int kFillerPoolSize = 200;

const std::vector<std::string> kFillers = {"the", "a",  "of",   "in",   "on",  "and",  "with",
                                           "for", "to", "at",   "by",   "from", "near", "after",
                                           "again"};

struct WordForge {
  std::vector<std::string> syllables;
  std::set<std::string> used;

  WordForge() {
    const std::string consonants = "bdfgklmnprstvz";
    const std::string vowels = "aeiou";
    for (char c : consonants)
      for (char v : vowels) syllables.push_back(std::string{c, v});
  }

  std::string fresh(Rng& rng, int n_syllables, bool capitalize) {
    for (int tries = 0; tries < 10000; ++tries) {
      std::string w;
      for (int i = 0; i < n_syllables; ++i) w += syllables[uniform_below(rng, syllables.size())];
      if (capitalize) w[0] = static_cast<char>(w[0] - 'a' + 'A');
      if (used.insert(w).second) return w;
    }
    throw std::runtime_error("word pool exhausted");
  }
};

// slot kinds of a sentence pattern; FillerRun expands to several fillers at
// render time
enum class Slot { Filler, FillerRun, Cue, Entity, CueB, EntityB, Period };

struct Pattern {
  std::vector<Slot> slots;
  bool two_entity = false;
};

std::vector<Pattern> make_patterns(int pool, Rng& rng) {
  std::vector<Pattern> out;
  for (int p = 0; p < pool; ++p) {
    Pattern pat;
    const int kind = p % 6;
    if (kind == 4) {  // long-form prose around a single cued entity
      pat.slots = {Slot::FillerRun, Slot::Cue, Slot::Entity, Slot::FillerRun,
                   Slot::Cue,       Slot::FillerRun, Slot::Period};
    } else if (kind == 1 || kind == 3 || kind == 5) {  // two entities, cue for each
      pat.two_entity = true;
      pat.slots = {Slot::Cue, Slot::Entity, Slot::Filler, Slot::CueB, Slot::EntityB, Slot::Period};
      if (uniform_below(rng, 2) == 0) pat.slots.insert(pat.slots.begin(), Slot::Filler);
    } else if (kind == 2) {  // no cue: the surface must carry the label
      pat.slots = {Slot::Filler, Slot::Entity, Slot::Filler, Slot::Period};
      if (uniform_below(rng, 2) == 0) pat.slots.insert(pat.slots.begin(), Slot::Filler);
    } else {  // cue words around the entity
      pat.slots = {Slot::Cue, Slot::Entity, Slot::Cue, Slot::Period};
      if (uniform_below(rng, 2) == 0) pat.slots.insert(pat.slots.begin(), Slot::Filler);
      if (uniform_below(rng, 2) == 0) pat.slots.insert(pat.slots.end() - 1, Slot::Filler);
    }
    out.push_back(std::move(pat));
  }
  return out;
}

struct ZipfTable {
  std::vector<double> cumulative;

  explicit ZipfTable(int n) {
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
      total += std::pow(static_cast<double>(r + 1), -kZipfExponent);
      cumulative.push_back(total);
    }
  }

  int draw(Rng& rng) const {
    const double u = uniform_real(rng) * cumulative.back();
    return static_cast<int>(std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                            cumulative.begin());
  }
};

std::vector<std::string> tags_for_entity(const std::vector<std::string>& tokens,
                                         const std::string& label) {
  const int n = static_cast<int>(tokens.size());
  std::vector<std::string> tags;
  if (n == 1) {
    tags.push_back("S-" + label);
  } else {
    tags.push_back("B-" + label);
    for (int i = 1; i < n - 1; ++i) tags.push_back("I-" + label);
    tags.push_back("E-" + label);
  }
  return tags;
}

}  // namespace

SynthCorpus generate_synth(const SynthSpec& spec) {
  const int n_labels = static_cast<int>(spec.labels.size());
  if (n_labels == 0) throw std::invalid_argument("at least one label required");
  if (spec.ambiguity < 0.0 || spec.ambiguity > 1.0)
    throw std::invalid_argument("ambiguity must lie in [0,1]");
  if (spec.pattern_pool < 4) throw std::invalid_argument("pattern_pool must be at least 4");
  if (spec.corpus_size < 1) throw std::invalid_argument("corpus_size must be positive");
  std::vector<int> gz_sizes = spec.gazetteer_sizes;
  if (gz_sizes.size() == 1) gz_sizes.assign(n_labels, gz_sizes[0]);
  if (static_cast<int>(gz_sizes.size()) != n_labels)
    throw std::invalid_argument("gazetteer_sizes must have one entry or one per label");
  for (int g : gz_sizes)
    if (g < 3) throw std::invalid_argument("gazetteers need at least 3 surfaces");

  Rng rng(spec.seed);
  WordForge forge;

  // Label-specific cue words.
  std::vector<std::vector<std::string>> cues(n_labels);
  for (int l = 0; l < n_labels; ++l)
    for (int i = 0; i < kCueWordsPerLabel; ++i) cues[l].push_back(forge.fresh(rng, 2, false));

  // Fillers: function words plus forged label-neutral words.
  std::vector<std::string> fillers = kFillers;
  while (static_cast<int>(fillers.size()) < kFillerPoolSize)
    fillers.push_back(forge.fresh(rng, 2, false));

  // Gazetteers: surface lengths cycle 1/2/3 tokens so every BIOES tag occurs.
  std::vector<std::vector<std::vector<std::string>>> gazetteers(n_labels);
  for (int l = 0; l < n_labels; ++l) {
    for (int i = 0; i < gz_sizes[l]; ++i) {
      const int len = i % 3 + 1;
      std::vector<std::string> surface;
      for (int t = 0; t < len; ++t) surface.push_back(forge.fresh(rng, 2 + i % 2, true));
      gazetteers[l].push_back(std::move(surface));
    }
  }

  // Shared tail surfaces between paired labels.
  for (int a = 0; a + 1 < n_labels; a += 2) {
    const int b = a + 1;
    const int n_shared = static_cast<int>(
        std::lround(spec.ambiguity * std::min(gz_sizes[a], gz_sizes[b])));
    for (int i = 0; i < n_shared; ++i) {
      const int slot_a = gz_sizes[a] - 1 - i;
      const int slot_b = gz_sizes[b] - 1 - i;
      gazetteers[b][slot_b] = gazetteers[a][slot_a];
    }
  }

  const auto patterns = make_patterns(spec.pattern_pool, rng);
  std::vector<ZipfTable> zipf;
  for (int l = 0; l < n_labels; ++l) zipf.emplace_back(gz_sizes[l]);

  auto pick_filler = [&] { return fillers[uniform_below(rng, fillers.size())]; };

  // Test prose runs are longer than training ones: the test split probes
  // length generalization the way compositional-split benchmarks do.
  int run_lo = 2;
  int run_hi = 7;

  auto make_sentence = [&]() -> Sentence {
    const Pattern& pat = patterns[uniform_below(rng, patterns.size())];
    const int l1 = static_cast<int>(uniform_below(rng, n_labels));
    int l2 = l1;
    if (pat.two_entity && n_labels > 1)
      l2 = static_cast<int>((l1 + 1 + uniform_below(rng, n_labels - 1)) % n_labels);
    Sentence s;
    s.scheme = Scheme::BIOES;
    for (const Slot slot : pat.slots) {
      switch (slot) {
        case Slot::Filler:
          s.tokens.push_back(pick_filler());
          s.tags.push_back("O");
          break;
        case Slot::FillerRun: {
          const int run = run_lo + static_cast<int>(uniform_below(rng, run_hi - run_lo + 1));
          for (int i = 0; i < run; ++i) {
            s.tokens.push_back(pick_filler());
            s.tags.push_back("O");
          }
          break;
        }
        case Slot::Cue:
          s.tokens.push_back(cues[l1][uniform_below(rng, cues[l1].size())]);
          s.tags.push_back("O");
          break;
        case Slot::CueB:
          s.tokens.push_back(cues[l2][uniform_below(rng, cues[l2].size())]);
          s.tags.push_back("O");
          break;
        case Slot::Entity: {
          const auto& surface = gazetteers[l1][zipf[l1].draw(rng)];
          const auto tags = tags_for_entity(surface, spec.labels[l1]);
          s.tokens.insert(s.tokens.end(), surface.begin(), surface.end());
          s.tags.insert(s.tags.end(), tags.begin(), tags.end());
          break;
        }
        case Slot::EntityB: {
          const auto& surface = gazetteers[l2][zipf[l2].draw(rng)];
          const auto tags = tags_for_entity(surface, spec.labels[l2]);
          s.tokens.insert(s.tokens.end(), surface.begin(), surface.end());
          s.tags.insert(s.tags.end(), tags.begin(), tags.end());
          break;
        }
        case Slot::Period:
          s.tokens.push_back(".");
          s.tags.push_back("O");
          break;
      }
    }
    return s;
  };

  auto make_split = [&](int n) -> Dataset {
    Dataset d;
    d.label_set = spec.labels;
    for (int i = 0; i < n; ++i) d.sentences.push_back(make_sentence());
    // Force full tag coverage: one crafted sentence per missing surface length.
    std::set<std::string> present;
    for (const auto& s : d.sentences)
      for (const auto& t : s.tags) present.insert(t);
    for (int l = 0; l < n_labels; ++l) {
      for (int len = 1; len <= 3; ++len) {
        const char* prefix = len == 1 ? "S-" : len == 2 ? "E-" : "I-";
        const std::string probe = prefix + spec.labels[l];
        if (present.count(probe)) continue;
        for (int i = 0; i < gz_sizes[l]; ++i) {
          if (static_cast<int>(gazetteers[l][i].size()) != len) continue;
          Sentence s;
          s.scheme = Scheme::BIOES;
          s.tokens.push_back(cues[l][0]);
          s.tags.push_back("O");
          const auto tags = tags_for_entity(gazetteers[l][i], spec.labels[l]);
          s.tokens.insert(s.tokens.end(), gazetteers[l][i].begin(), gazetteers[l][i].end());
          s.tags.insert(s.tags.end(), tags.begin(), tags.end());
          s.tokens.push_back(".");
          s.tags.push_back("O");
          d.sentences.push_back(std::move(s));
          for (const auto& t : tags) present.insert(t);
          break;
        }
      }
    }
    return d;
  };

  SynthCorpus out;
  out.train = make_split(spec.corpus_size);
  out.dev = make_split(std::max(20, spec.corpus_size / 5));
  run_lo = 8;
  run_hi = 20;
  out.test = make_split(std::max(50, spec.corpus_size / 2));
  return out;
}

void write_synth(const std::string& dir, const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir);
  write_text_file(dir + "/train.conll", to_conll(corpus.train));
  write_text_file(dir + "/dev.conll", to_conll(corpus.dev));
  write_text_file(dir + "/test.conll", to_conll(corpus.test));
}

}  // namespace nerdem
