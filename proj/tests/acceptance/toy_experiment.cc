#include "toy_experiment.h"

#include <chrono>
#include <map>
#include <set>

#include "nmt/corpus.h"
#include "nmt/error.h"
#include "nmt/metrics.h"
#include "nmt/text.h"

namespace nmt::toy {

const char* setup_name(Setup setup) {
  switch (setup) {
    case Setup::kBilingual:
      return "bilingual";
    case Setup::kTrilingual:
      return "trilingual";
    case Setup::kSupervisedParaphrase:
      return "supervised-paraphrase";
  }
  return "?";
}

World make_world(std::uint64_t seed, std::size_t verses) {
  ToyConfig config;
  config.seed = seed;
  config.verses = verses;
  World world{make_toy_corpus(config), {}, {}, {}, {}};
  for (const auto& t : world.corpus.pivot_translations) {
    world.pivot_text.emplace_back();
    for (const Verse& v : t.verses) world.pivot_text.back()[v.verse_id] = v.text;
  }
  for (const auto& t : world.corpus.aux_translations) {
    world.aux_text.emplace_back();
    for (const Verse& v : t.verses) world.aux_text.back()[v.verse_id] = v.text;
  }

  for (const Verse& v : world.corpus.aux_translations[0].verses) {
    switch (assign_split(v.verse_id, 0.05, 0.1)) {
      case nmt::Split::kTrain:
        world.split.train_ids.push_back(v.verse_id);
        break;
      case nmt::Split::kDev:
        world.split.dev_ids.push_back(v.verse_id);
        break;
      case nmt::Split::kTest:
        world.split.test_ids.push_back(v.verse_id);
        break;
    }
  }

  // Word-level vocabulary: whole words are the subword units.
  std::vector<LanguageBlock> blocks;
  LanguageBlock pivot{config.pivot, {}};
  for (const auto& t : world.corpus.pivot_translations)
    for (const auto& v : t.verses) pivot.segmented_lines.push_back(v.text);
  blocks.push_back(std::move(pivot));
  for (std::size_t l = 0; l < world.corpus.aux_codes.size(); ++l) {
    LanguageBlock block{world.corpus.aux_codes[l], {}};
    for (const auto& v : world.corpus.aux_translations[l].verses) block.segmented_lines.push_back(v.text);
    blocks.push_back(std::move(block));
  }
  world.vocab = build_vocabulary(blocks);
  return world;
}

TokenIds encode_source(const Vocabulary& vocab, const std::string& target_lang, const std::string& text) {
  TokenIds ids{vocab.flag_id(target_lang)};
  for (TokenId id : vocab.encode_line(text)) ids.push_back(id);
  return ids;
}

TokenIds encode_target(const Vocabulary& vocab, const std::string& text) {
  TokenIds ids = vocab.encode_line(text);
  ids.push_back(kEosId);
  return ids;
}

std::string decode_text(const Vocabulary& vocab, const TokenIds& ids) { return join(vocab.decode(ids)); }

Run train(const World& world, Setup setup, std::uint64_t seed, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const ToyCorpus& c = world.corpus;
  std::set<std::string> train_ids(world.split.train_ids.begin(), world.split.train_ids.end());

  TrainingSetConfig ts;
  ts.pivot = c.config.pivot;
  ts.hubs = {c.config.pivot};
  ts.languages.push_back({c.config.pivot, c.pivot_translations});
  const std::size_t aux = setup == Setup::kTrilingual ? 2 : 1;
  for (std::size_t l = 0; l < aux; ++l) ts.languages.push_back({c.aux_codes[l], {c.aux_translations[l]}});
  ts.paraphrase = setup == Setup::kSupervisedParaphrase;
  ts.include = [&](const std::string& id) { return train_ids.count(id) > 0; };

  std::vector<TrainingPair> data;
  for (const ParallelPair& p : build_training_set(ts))
    data.push_back({encode_source(world.vocab, p.tgt_lang, p.src_text), encode_target(world.vocab, p.tgt_text)});

  Run run;
  run.model.emb_dim = 32;
  run.model.rnn_dim = 64;
  run.model.vocab_size = world.vocab.size();
  run.model.rnn_dropout = 0.1;
  run.model.word_dropout_src = 0.05;
  run.model.word_dropout_tgt = 0.05;

  TrainConfig tc;
  tc.max_steps = options.max_steps;
  tc.validation_every = options.validation_every;
  tc.patience = options.patience;
  tc.token_budget = options.token_budget;
  tc.adam.learning_rate = options.learning_rate;
  tc.smoothing = options.smoothing;
  tc.seed = seed;
  tc.verbose = options.verbose;

  // Validation: negated cross-entropy over the trained directions on the dev
  // verses, so every direction (paraphrase included) shapes model selection.
  std::set<std::string> dev_ids(world.split.dev_ids.begin(), world.split.dev_ids.end());
  ts.include = [&](const std::string& id) { return dev_ids.count(id) > 0; };
  std::vector<TrainingPair> dev;
  for (const ParallelPair& p : build_training_set(ts))
    dev.push_back({encode_source(world.vocab, p.tgt_lang, p.src_text), encode_target(world.vocab, p.tgt_text)});
  const ModelConfig model = run.model;
  Validator validator = [&](const ParameterSet<float>& params) { return -mean_cross_entropy(params, model, dev); };
  run.result = train_loop(run.model, tc, data, validator);
  run.params = run.result.best;
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

ParaphraseSet paraphrase_test(const World& world) {
  ParaphraseSet set;
  for (const auto& id : world.split.test_ids) {
    const std::string& a = world.pivot_text[0].at(id);
    const std::string& b = world.pivot_text[1].at(id);
    if (a == b) continue;
    set.sources.push_back(a);
    set.references.push_back(b);
  }
  return set;
}

double paraphrase_perplexity(const World& world, const Run& run, const ParaphraseSet& set) {
  std::vector<TokenIds> src, tgt;
  for (std::size_t i = 0; i < set.sources.size(); ++i) {
    src.push_back(encode_source(world.vocab, world.corpus.config.pivot, set.sources[i]));
    tgt.push_back(encode_target(world.vocab, set.references[i]));
  }
  std::vector<ScoreLine> lines;
  for (const TargetScore& s : score_targets(run.params, run.model, src, tgt)) lines.push_back({lines.size(), s.nll, s.tokens});
  return corpus_perplexity(lines);
}

std::vector<std::string> paraphrase(const World& world, const Run& run, const std::vector<std::string>& sources) {
  std::vector<TokenIds> src;
  for (const auto& s : sources) src.push_back(encode_source(world.vocab, world.corpus.config.pivot, s));
  std::vector<std::string> out;
  for (const auto& ids : greedy_decode(run.params, run.model, src)) out.push_back(decode_text(world.vocab, ids));
  return out;
}

double translation_bleu(const World& world, const Run& run, const std::vector<std::string>& ids) {
  const ToyCorpus& c = world.corpus;
  std::vector<std::string> hyps;
  std::vector<std::vector<std::string>> refs;
  for (const auto& id : ids) {
    TokenIds src = encode_source(world.vocab, c.aux_codes[0], world.pivot_text[0].at(id));
    hyps.push_back(decode_text(world.vocab, beam_search(run.params, run.model, src, 12).tokens));
    refs.push_back({world.aux_text[0].at(id)});
  }
  return bleu(hyps, refs);
}

}  // namespace nmt::toy
