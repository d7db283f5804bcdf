#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nmt/types.h"

namespace nmt {

inline constexpr std::string_view kWordEnd = "</w>";
inline constexpr std::string_view kContinuation = "@@";

struct MergeTable {
  std::string language;
  std::vector<std::pair<std::string, std::string>> merges;
  friend bool operator==(const MergeTable&, const MergeTable&) = default;
};

// Word frequencies over whitespace-separated tokens of every line.
std::map<std::string, std::uint64_t> count_words(const std::vector<std::string>& lines);

MergeTable learn_merges(const std::map<std::string, std::uint64_t>& word_counts, std::size_t num_merges,
                        const std::string& language = "");
MergeTable learn_merges(const std::vector<std::string>& lines, std::size_t num_merges,
                        const std::string& language = "");

class Segmenter {
 public:
  explicit Segmenter(const MergeTable& table);

  std::vector<std::string> segment_word(std::string_view word) const;
  // Input is a pre-tokenized sentence; tokens are separated by whitespace.
  std::vector<std::string> segment(std::string_view sentence) const;

 private:
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
};

std::vector<std::string> segment(std::string_view sentence, const MergeTable& table);
std::string unsegment(const std::vector<std::string>& tokens);
std::string unsegment_line(std::string_view line);

void save_merges(const MergeTable& table, const std::filesystem::path& path);
MergeTable load_merges(const std::filesystem::path& path);

class Vocabulary {
 public:
  struct Entry {
    std::string token;
    std::uint64_t frequency = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  Vocabulary();

  std::size_t size() const { return entries_.size(); }
  const std::string& token(TokenId id) const;
  std::uint64_t frequency(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  // Unknown tokens map to <unk>.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::vector<std::string>& languages() const { return languages_; }
  TokenId flag_id(const std::string& language) const;
  bool is_flag(TokenId id) const;
  bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecials; }

  // Subwords missing from the vocabulary are spelled with character tokens;
  // characters missing as well become <unk>.
  TokenIds encode(const std::vector<std::string>& tokens) const;
  TokenIds encode_line(std::string_view line) const;
  // Drops specials; flags are kept.
  std::vector<std::string> decode(const TokenIds& ids) const;

  void add_flag(const std::string& language);
  // Returns the existing id when the token is already present.
  TokenId add(const std::string& token, std::uint64_t frequency);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::string> languages_;
};

struct LanguageBlock {
  std::string language;
  // BPE-segmented, space-separated lines.
  std::vector<std::string> segmented_lines;
};

// Layout: specials, then for each language in order its flag followed by its
// subword block. Block tokens are sorted by (descending frequency, token) and
// followed by the character fallback tokens (`c` and `c@@` for every
// character seen in the block). A token already placed by an earlier language
// keeps its id.
Vocabulary build_vocabulary(const std::vector<LanguageBlock>& blocks);

bool is_flag_token(std::string_view token);
std::string flag_language(std::string_view token);

}  // namespace nmt
