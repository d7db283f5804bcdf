#include "nmt/bpe.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "nmt/corpus.h"
#include "nmt/error.h"
#include "nmt/text.h"

namespace nmt {

namespace {

using Pair = std::pair<std::string, std::string>;

std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> symbols = utf8_chars(word);
  symbols.emplace_back(kWordEnd);
  return symbols;
}

void merge_in_place(std::vector<std::string>& symbols, const Pair& pair) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
      out.push_back(pair.first + pair.second);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

// Pair frequencies with an ordered queue of (-count, left, right).
class PairStats {
 public:
  void add(const Pair& pair, std::int64_t delta, std::size_t word) {
    std::int64_t& count = counts_[pair];
    if (count > 0) queue_.erase({-count, pair.first, pair.second});
    count += delta;
    if (count > 0) queue_.insert({-count, pair.first, pair.second});
    if (delta > 0) where_[pair].insert(word);
  }

  std::optional<std::pair<Pair, std::int64_t>> best() const {
    if (queue_.empty()) return std::nullopt;
    const auto& [neg, left, right] = *queue_.begin();
    return std::make_pair(Pair{left, right}, -neg);
  }

  std::vector<std::size_t> words(const Pair& pair) const {
    auto it = where_.find(pair);
    if (it == where_.end()) return {};
    std::vector<std::size_t> out(it->second.begin(), it->second.end());
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::map<Pair, std::int64_t> counts_;
  std::set<std::tuple<std::int64_t, std::string, std::string>> queue_;
  std::map<Pair, std::unordered_set<std::size_t>> where_;
};

void account(PairStats& stats, const std::vector<std::string>& symbols, std::int64_t weight, std::size_t word) {
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) stats.add({symbols[i], symbols[i + 1]}, weight, word);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::map<std::string, std::uint64_t> count_words(const std::vector<std::string>& lines) {
  std::map<std::string, std::uint64_t> counts;
  for (const std::string& line : lines)
    for (std::string& word : split_whitespace(line)) ++counts[std::move(word)];
  return counts;
}

MergeTable learn_merges(const std::map<std::string, std::uint64_t>& word_counts, std::size_t num_merges,
                        const std::string& language) {
  MergeTable table{language, {}};
  if (num_merges == 0) return table;
  std::vector<std::vector<std::string>> words;
  std::vector<std::int64_t> freq;
  PairStats stats;
  std::set<Pair> merged;
  for (const auto& [word, count] : word_counts) {
    words.push_back(initial_symbols(word));
    freq.push_back(static_cast<std::int64_t>(count));
    account(stats, words.back(), freq.back(), words.size() - 1);
  }
  while (table.merges.size() < num_merges) {
    auto best = stats.best();
    if (!best || best->second < 2) break;
    const Pair pair = best->first;
    for (std::size_t w : stats.words(pair)) {
      auto& symbols = words[w];
      account(stats, symbols, -freq[w], w);
      merge_in_place(symbols, pair);
      account(stats, symbols, freq[w], w);
    }
    // A pair can reappear when a later merge rebuilds one of its symbols;
    // the table keeps its first rank only.
    if (merged.insert(pair).second) table.merges.push_back(pair);
  }
  return table;
}

MergeTable learn_merges(const std::vector<std::string>& lines, std::size_t num_merges, const std::string& language) {
  return learn_merges(count_words(lines), num_merges, language);
}

Segmenter::Segmenter(const MergeTable& table) {
  for (std::size_t i = 0; i < table.merges.size(); ++i) ranks_.emplace(table.merges[i], i);
}

std::vector<std::string> Segmenter::segment_word(std::string_view word) const {
  std::vector<std::string> symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best = ranks_.size();
    const Pair* pair = nullptr;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks_.find({symbols[i], symbols[i + 1]});
      if (it != ranks_.end() && it->second < best) {
        best = it->second;
        pair = &it->first;
      }
    }
    if (!pair) break;
    merge_in_place(symbols, *pair);
  }
  if (symbols.back() == kWordEnd) {
    symbols.pop_back();
  } else {
    symbols.back().resize(symbols.back().size() - kWordEnd.size());
  }
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) symbols[i].append(kContinuation);
  return symbols;
}

std::vector<std::string> Segmenter::segment(std::string_view sentence) const {
  std::vector<std::string> out;
  for (const std::string& word : split_whitespace(sentence)) {
    auto pieces = segment_word(word);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()), std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::vector<std::string> segment(std::string_view sentence, const MergeTable& table) {
  return Segmenter(table).segment(sentence);
}

std::string unsegment(const std::vector<std::string>& tokens) {
  std::string out;
  bool glue = true;
  for (const std::string& token : tokens) {
    if (!glue) out.push_back(' ');
    if (ends_with(token, kContinuation)) {
      out.append(token, 0, token.size() - kContinuation.size());
      glue = true;
    } else {
      out.append(token);
      glue = false;
    }
  }
  return out;
}

std::string unsegment_line(std::string_view line) { return unsegment(split_whitespace(line)); }

void save_merges(const MergeTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << "#codes v1 " << table.language << '\n';
  for (const auto& [left, right] : table.merges) out << left << ' ' << right << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

MergeTable load_merges(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  MergeTable table;
  std::string line;
  std::size_t number = 0;
  std::set<Pair> seen;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (number == 1) {
      const std::string header = "#codes v1";
      if (line.rfind(header, 0) != 0) throw ParseError(path.string(), 1, "missing '#codes v1' header");
      table.language = trim(line.substr(header.size()));
      continue;
    }
    if (line.empty()) continue;
    const std::size_t space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 == line.size() ||
        line.find(' ', space + 1) != std::string::npos) {
      throw ParseError(path.string(), number, "expected 'left right'");
    }
    Pair pair{line.substr(0, space), line.substr(space + 1)};
    if (!seen.insert(pair).second) throw ParseError(path.string(), number, "duplicate merge");
    table.merges.push_back(std::move(pair));
  }
  if (number == 0) throw ParseError(path.string(), 1, "missing '#codes v1' header");
  return table;
}

bool is_flag_token(std::string_view token) {
  return token.size() > 3 && token.substr(0, 2) == "<2" && token.back() == '>';
}

std::string flag_language(std::string_view token) { return std::string(token.substr(2, token.size() - 3)); }

Vocabulary::Vocabulary() {
  for (const char* token : {kPadToken, kUnkToken, kBosToken, kEosToken}) add(token, 0);
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size())
    throw DomainError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  return entries_[static_cast<std::size_t>(id)].token;
}

std::uint64_t Vocabulary::frequency(TokenId id) const {
  token(id);
  return entries_[static_cast<std::size_t>(id)].frequency;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnkId); }

TokenId Vocabulary::flag_id(const std::string& language) const {
  auto id = find(flag_token(language));
  if (!id) throw ConfigError("no flag for language '" + language + "' in vocabulary");
  return *id;
}

bool Vocabulary::is_flag(TokenId id) const { return !is_special(id) && is_flag_token(token(id)); }

TokenIds Vocabulary::encode(const std::vector<std::string>& tokens) const {
  TokenIds out;
  out.reserve(tokens.size());
  for (const std::string& t : tokens) {
    if (auto known = find(t)) {
      out.push_back(*known);
      continue;
    }
    // Subword unseen in training: spell it out with character tokens.
    std::string_view surface = t;
    const bool continued = ends_with(surface, kContinuation);
    if (continued) surface.remove_suffix(kContinuation.size());
    auto chars = utf8_chars(surface);
    for (std::size_t i = 0; i < chars.size(); ++i) {
      const bool last = i + 1 == chars.size();
      out.push_back(id(last && !continued ? chars[i] : chars[i] + std::string(kContinuation)));
    }
    if (chars.empty()) out.push_back(kUnkId);
  }
  return out;
}

TokenIds Vocabulary::encode_line(std::string_view line) const { return encode(split_whitespace(line)); }

std::vector<std::string> Vocabulary::decode(const TokenIds& ids) const {
  std::vector<std::string> out;
  for (TokenId id : ids)
    if (!is_special(id)) out.push_back(token(id));
  return out;
}

void Vocabulary::add_flag(const std::string& language) {
  if (std::find(languages_.begin(), languages_.end(), language) != languages_.end())
    throw ConfigError("language '" + language + "' added twice");
  languages_.push_back(language);
  add(flag_token(language), 0);
}

TokenId Vocabulary::add(const std::string& token, std::uint64_t frequency) {
  auto [it, inserted] = index_.emplace(token, static_cast<TokenId>(entries_.size()));
  if (inserted) entries_.push_back({token, frequency});
  return it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  for (std::size_t i = 0; i < entries_.size(); ++i)
    out << entries_[i].token << '\t' << i << '\t' << entries_[i].frequency << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  Vocabulary vocab;
  vocab.entries_.clear();
  vocab.index_.clear();
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string token, id_text, freq_text;
    if (!std::getline(fields, token, '\t') || !std::getline(fields, id_text, '\t') || !std::getline(fields, freq_text))
      throw ParseError(path.string(), number, "expected token<TAB>id<TAB>frequency");
    std::size_t id = 0;
    std::uint64_t freq = 0;
    try {
      id = std::stoull(id_text);
      freq = std::stoull(freq_text);
    } catch (const std::exception&) {
      throw ParseError(path.string(), number, "non-numeric id or frequency");
    }
    if (id != vocab.entries_.size()) throw ParseError(path.string(), number, "ids must be dense and in order");
    if (vocab.index_.count(token)) throw ParseError(path.string(), number, "duplicate token '" + token + "'");
    if (id < static_cast<std::size_t>(kNumSpecials)) {
      const char* expected[] = {kPadToken, kUnkToken, kBosToken, kEosToken};
      if (token != expected[id]) throw ParseError(path.string(), number, "special tokens must occupy ids 0..3");
    } else if (is_flag_token(token)) {
      vocab.languages_.push_back(flag_language(token));
    }
    vocab.add(token, freq);
  }
  if (vocab.size() < static_cast<std::size_t>(kNumSpecials)) throw ParseError(path.string(), number, "truncated vocabulary");
  return vocab;
}

Vocabulary build_vocabulary(const std::vector<LanguageBlock>& blocks) {
  Vocabulary vocab;
  for (const LanguageBlock& block : blocks) {
    vocab.add_flag(block.language);
    std::map<std::string, std::uint64_t> counts;
    std::set<std::string> chars;
    for (const std::string& line : block.segmented_lines) {
      for (std::string& token : split_whitespace(line)) {
        std::string_view surface = token;
        if (ends_with(surface, kContinuation)) surface.remove_suffix(kContinuation.size());
        for (std::string& c : utf8_chars(surface)) chars.insert(std::move(c));
        ++counts[std::move(token)];
      }
    }
    std::vector<std::pair<std::string, std::uint64_t>> sorted(counts.begin(), counts.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [token, count] : sorted) vocab.add(token, count);
    for (const std::string& c : chars) {
      vocab.add(c, 0);
      vocab.add(c + std::string(kContinuation), 0);
    }
  }
  return vocab;
}

}  // namespace nmt
