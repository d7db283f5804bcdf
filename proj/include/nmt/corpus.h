#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nmt/types.h"

namespace nmt {

struct Verse {
  std::string translation_id;
  std::string verse_id;
  std::string text;
  friend bool operator==(const Verse&, const Verse&) = default;
};

struct ParallelPair {
  std::string src_lang;
  std::string tgt_lang;
  std::string src_text;
  std::string tgt_text;
  std::string verse_id;
  friend bool operator==(const ParallelPair&, const ParallelPair&) = default;
};

// Id-level example; src_tokens starts with the target-language flag and
// tgt_tokens ends with </s>.
struct TrainingExample {
  TokenIds src_tokens;
  TokenIds tgt_tokens;
  std::string src_lang;
  std::string tgt_lang;
};

// Verse file: `verse_id<TAB>text` per line, `#` comments and blank lines
// ignored. Throws ParseError (with line number) on a line without a tab and
// DuplicateKeyError on a repeated verse id.
std::vector<Verse> load_verse_corpus(const std::filesystem::path& path, const std::string& translation_id);
std::vector<Verse> parse_verse_corpus(std::istream& in, const std::string& translation_id,
                                      const std::string& source_name);

// One pair per verse id present in both inputs, sorted by verse id.
std::vector<ParallelPair> align_by_verse(const std::vector<Verse>& a, const std::vector<Verse>& b,
                                         const std::string& src_lang = "", const std::string& tgt_lang = "");

struct Translation {
  std::string id;
  std::vector<Verse> verses;
};

struct LanguageCorpus {
  std::string code;
  std::vector<Translation> translations;
};

struct TrainingSetConfig {
  std::vector<LanguageCorpus> languages;
  std::string pivot = "eng";
  // Language pairs are used only when one side is a hub. Empty: all pairs.
  std::vector<std::string> hubs;
  // Language whose verses are also paired with themselves (input == output).
  std::optional<std::string> identity_language;
  // Supervised paraphrase model: add pivot-pivot pairs between distinct
  // pivot translations.
  bool paraphrase = false;
  // Verses rejected here never reach the training set (held-out splits).
  std::function<bool(const std::string& verse_id)> include;
};

std::vector<ParallelPair> build_training_set(const TrainingSetConfig& config);

bool is_valid_language_code(const std::string& code);
std::string flag_token(const std::string& language);
// Prepends `<2xx>` for a configured target language.
std::string add_language_flag(const std::string& sentence, const std::string& target,
                              const std::vector<std::string>& languages);

enum class Split { kTrain, kDev, kTest };

// Stable hash split on the verse id: [0, test) test, [test, test + dev) dev.
Split assign_split(const std::string& verse_id, double dev_fraction, double test_fraction);

struct SingleRefSet {
  std::vector<std::pair<std::string, std::string>> entries;
};

struct MultiRefEntry {
  std::string source;
  std::vector<std::string> references;
  friend bool operator==(const MultiRefEntry&, const MultiRefEntry&) = default;
};

struct MultiRefSet {
  std::vector<MultiRefEntry> entries;
};

struct TestSetOptions {
  bool expand_contractions = true;
  bool drop_near_identical = true;
};

// Paraphrase test sets from sentence pairs: contraction expansion, removal of
// pairs that are identical after eval-normalization, then synonym sets by
// union-find. Each synonym set yields one multi-reference entry whose source
// is its lexicographically smallest member.
std::pair<SingleRefSet, MultiRefSet> build_paraphrase_testsets(
    const std::vector<std::pair<std::string, std::string>>& pairs, const TestSetOptions& options = {});

// Multi-reference entries for aligned translations: source text from
// `source`, references from every other translation with the same verse id.
MultiRefSet build_verse_multiref(const std::vector<Verse>& source, const std::vector<std::vector<Verse>>& references);

// `a<TAB>b` per line.
std::vector<std::pair<std::string, std::string>> load_pair_file(const std::filesystem::path& path);
void save_single_ref(const SingleRefSet& set, const std::filesystem::path& path);
void save_multi_ref(const MultiRefSet& set, const std::filesystem::path& path);
SingleRefSet load_single_ref(const std::filesystem::path& path);
MultiRefSet load_multi_ref(const std::filesystem::path& path);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path);

}  // namespace nmt
