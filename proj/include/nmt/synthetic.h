#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nmt/corpus.h"

namespace nmt {

// Toy multi-parallel corpus: a pivot language whose concepts partly have two
// synonymous surface forms, auxiliary languages that spell every concept with
// one word of their own, and several pivot "translations" that differ only in
// synonym choices.
struct ToyConfig {
  std::size_t concepts = 160;
  std::size_t synonym_pairs = 40;  // concepts with two pivot forms
  std::size_t aux_languages = 2;
  std::size_t pivot_variants = 2;
  std::size_t verses = 3000;
  std::size_t min_length = 6;
  std::size_t max_length = 10;
  std::size_t min_synonym_slots = 4;
  // Each variant keeps the verse's base synonym choice with this probability.
  double keep_base = 0.8;
  std::uint64_t seed = 1;
  std::string pivot = "eng";
};

struct ToyCorpus {
  ToyConfig config;
  std::vector<std::string> aux_codes;            // "aux1", "aux2", ...
  std::vector<std::vector<std::string>> forms;   // pivot surface forms per concept
  std::vector<std::vector<std::string>> aux_words;  // [language][concept]
  std::vector<Translation> pivot_translations;
  std::vector<Translation> aux_translations;     // one per auxiliary language
};

ToyCorpus make_toy_corpus(const ToyConfig& config);

// Number of distinct pivot words (concepts plus extra synonym forms).
std::size_t pivot_vocabulary_size(const ToyCorpus& corpus);

}  // namespace nmt
