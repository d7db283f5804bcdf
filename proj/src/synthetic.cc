#include "nmt/synthetic.h"

#include <algorithm>
#include <set>

#include "nmt/error.h"
#include "nmt/rng.h"

namespace nmt {

namespace {

// Distinct pronounceable words built from a language-specific syllable set.
std::vector<std::string> make_words(std::size_t count, const std::vector<std::string>& onsets,
                                    const std::vector<std::string>& vowels, CounterRng& rng) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < count) {
    const std::size_t syllables = 2 + rng.below(2);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += onsets[rng.below(onsets.size())];
      w += vowels[rng.below(vowels.size())];
    }
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

std::string verse_id(std::size_t i) {
  std::string n = std::to_string(i);
  return "V" + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n;
}

}  // namespace

ToyCorpus make_toy_corpus(const ToyConfig& config) {
  if (config.synonym_pairs > config.concepts) throw ConfigError("more synonym pairs than concepts");
  if (config.min_length == 0 || config.min_length > config.max_length) throw ConfigError("bad sentence lengths");
  if (config.min_synonym_slots > config.min_length || (config.min_synonym_slots > 0 && config.synonym_pairs == 0))
    throw ConfigError("cannot place the requested synonym slots");
  if (config.pivot_variants == 0) throw ConfigError("need at least one pivot variant");

  CounterRng rng(config.seed);
  ToyCorpus corpus;
  corpus.config = config;

  const std::vector<std::string> vowels{"a", "e", "i", "o", "u"};
  CounterRng word_rng = rng.split(1);
  auto pivot_words = make_words(config.concepts + config.synonym_pairs, {"b", "d", "k", "l", "m", "n", "p", "r", "s", "t"},
                                vowels, word_rng);
  corpus.forms.resize(config.concepts);
  for (std::size_t c = 0; c < config.concepts; ++c) corpus.forms[c].push_back(pivot_words[c]);
  for (std::size_t s = 0; s < config.synonym_pairs; ++s) corpus.forms[s].push_back(pivot_words[config.concepts + s]);

  const std::vector<std::vector<std::string>> aux_onsets{{"g", "h", "j", "v", "z", "f"},
                                                         {"ch", "sh", "th", "ph", "q", "w"},
                                                         {"gl", "br", "kr", "dr", "fl", "st"}};
  for (std::size_t l = 0; l < config.aux_languages; ++l) {
    corpus.aux_codes.push_back("aux" + std::to_string(l + 1));
    CounterRng aux_rng = rng.split(10 + l);
    const auto& onsets = aux_onsets[l % aux_onsets.size()];
    auto words = make_words(config.concepts, onsets, {"a", "e", "i", "o", "u", "y"}, aux_rng);
    if (l >= aux_onsets.size()) {
      for (auto& w : words) w += std::to_string(l);
    }
    corpus.aux_words.push_back(std::move(words));
  }

  for (std::size_t v = 0; v < config.pivot_variants; ++v)
    corpus.pivot_translations.push_back({config.pivot + "-v" + std::to_string(v + 1), {}});
  for (const auto& code : corpus.aux_codes) corpus.aux_translations.push_back({code, {}});

  CounterRng verse_rng = rng.split(2);
  for (std::size_t i = 0; i < config.verses; ++i) {
    const std::size_t length = config.min_length + verse_rng.below(config.max_length - config.min_length + 1);
    std::vector<std::size_t> sentence;
    for (std::size_t k = 0; k < config.min_synonym_slots; ++k) sentence.push_back(verse_rng.below(config.synonym_pairs));
    while (sentence.size() < length) sentence.push_back(verse_rng.below(config.concepts));
    verse_rng.shuffle(sentence);

    std::vector<std::size_t> base(sentence.size());
    for (auto& b : base) b = verse_rng.below(2);
    const std::string id = verse_id(i);
    for (std::size_t v = 0; v < config.pivot_variants; ++v) {
      std::string text;
      for (std::size_t k = 0; k < sentence.size(); ++k) {
        const auto& forms = corpus.forms[sentence[k]];
        std::size_t choice = 0;
        if (forms.size() > 1) choice = verse_rng.uniform() < config.keep_base ? base[k] : 1 - base[k];
        if (k) text += ' ';
        text += forms[choice];
      }
      corpus.pivot_translations[v].verses.push_back({corpus.pivot_translations[v].id, id, text});
    }
    for (std::size_t l = 0; l < config.aux_languages; ++l) {
      std::string text;
      for (std::size_t k = 0; k < sentence.size(); ++k) {
        if (k) text += ' ';
        text += corpus.aux_words[l][sentence[k]];
      }
      corpus.aux_translations[l].verses.push_back({corpus.aux_codes[l], id, text});
    }
  }
  return corpus;
}

std::size_t pivot_vocabulary_size(const ToyCorpus& corpus) {
  std::size_t n = 0;
  for (const auto& f : corpus.forms) n += f.size();
  return n;
}

}  // namespace nmt
