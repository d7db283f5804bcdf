#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nmt/bpe.h"
#include "nmt/decode.h"
#include "nmt/model.h"
#include "nmt/synthetic.h"
#include "nmt/train.h"

namespace nmt::toy {

// The supervised model is the trilingual one plus pivot-pivot pairs.
enum class Setup { kBilingual, kTrilingual, kSupervisedParaphrase };

const char* setup_name(Setup setup);

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> dev_ids;
  std::vector<std::string> test_ids;
};

struct World {
  ToyCorpus corpus;
  Vocabulary vocab;
  Split split;
  std::vector<std::map<std::string, std::string>> pivot_text;  // per variant, by verse id
  std::vector<std::map<std::string, std::string>> aux_text;    // per language, by verse id
};

World make_world(std::uint64_t seed, std::size_t verses = 3000);

struct Run {
  ParameterSet<float> params;
  ModelConfig model;
  TrainResult result;
  double seconds = 0;
};

struct RunOptions {
  std::size_t max_steps = 4000;
  std::size_t validation_every = 250;
  std::size_t patience = 5;
  std::size_t token_budget = 400;
  double learning_rate = 3e-3;
  double smoothing = 0.05;
  bool verbose = false;
};

Run train(const World& world, Setup setup, std::uint64_t seed, const RunOptions& options);

// Flag plus word ids.
TokenIds encode_source(const Vocabulary& vocab, const std::string& target_lang, const std::string& text);
TokenIds encode_target(const Vocabulary& vocab, const std::string& text);
std::string decode_text(const Vocabulary& vocab, const TokenIds& ids);

struct ParaphraseSet {
  std::vector<std::string> sources;  // pivot variant 1
  std::vector<std::string> references;  // pivot variant 2, differing from the source
};

ParaphraseSet paraphrase_test(const World& world);

// Token-weighted perplexity of the references given the sources under <2pivot>.
double paraphrase_perplexity(const World& world, const Run& run, const ParaphraseSet& set);
// Greedy zero-shot paraphrases of the sources.
std::vector<std::string> paraphrase(const World& world, const Run& run, const std::vector<std::string>& sources);
// BLEU of pivot variant 1 -> aux1 on the held-out test verses.
double translation_bleu(const World& world, const Run& run, const std::vector<std::string>& ids);

}  // namespace nmt::toy
