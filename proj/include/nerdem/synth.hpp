#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nerdem/corpus.hpp"

namespace nerdem {

// Desk-scale corpus generator. Entities come from per-label gazetteers with
// Zipf-shaped frequencies; sentences mix label-specific cue words with neutral
// fillers, and a slice of sentences carries no cue at all so the entity
// surface itself has to carry the decision. A fraction of tail surfaces is
// shared between paired labels (the ambiguity rate).
struct SynthSpec {
  std::vector<std::string> labels = {"PER", "LOC", "ORG", "MISC"};
  std::vector<int> gazetteer_sizes = {30};  // one value broadcasts to all labels
  int pattern_pool = 12;
  int corpus_size = 150;  // train sentences; dev/test sizes derive from it
  double ambiguity = 0.2;
  std::uint64_t seed = 0;
};

struct SynthCorpus {
  Dataset train;
  Dataset dev;
  Dataset test;
};

SynthCorpus generate_synth(const SynthSpec& spec);

// Writes train.conll / dev.conll / test.conll (2-column BIOES) into dir.
void write_synth(const std::string& dir, const SynthCorpus& corpus);

}  // namespace nerdem
