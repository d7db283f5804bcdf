#include "nmt/text.h"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <unordered_map>

namespace nmt {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t begin;
  std::size_t end;
};

std::vector<CodePoint> decode(std::string_view text) {
  std::vector<CodePoint> out;
  const auto* s = reinterpret_cast<const std::uint8_t*>(text.data());
  const std::int32_t length = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < length) {
    const std::int32_t start = i;
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c < 0) c = 0xFFFD;
    out.push_back({static_cast<char32_t>(c), static_cast<std::size_t>(start), static_cast<std::size_t>(i)});
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  char buf[4];
  std::int32_t len = 0;
  UBool error = false;
  U8_APPEND(reinterpret_cast<std::uint8_t*>(buf), len, 4, static_cast<UChar32>(cp), error);
  if (!error) out.append(buf, static_cast<std::size_t>(len));
}

bool is_space(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)); }
bool is_apostrophe(char32_t cp) { return cp == U'\'' || cp == U'’'; }
bool is_word_char(char32_t cp) { return u_isalnum(static_cast<UChar32>(cp)) || u_hasBinaryProperty(cp, UCHAR_ALPHABETIC); }

}  // namespace

bool is_punctuation(char32_t cp) { return u_ispunct(static_cast<UChar32>(cp)); }

std::string trim(std::string_view text) {
  auto cps = decode(text);
  std::size_t first = 0, last = cps.size();
  while (first < last && is_space(cps[first].value)) ++first;
  while (last > first && is_space(cps[last - 1].value)) --last;
  if (first == last) return {};
  return std::string(text.substr(cps[first].begin, cps[last - 1].end - cps[first].begin));
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (const CodePoint& cp : decode(text)) {
    if (is_space(cp.value)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.append(text.substr(cp.begin, cp.end - cp.begin));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  for (const CodePoint& cp : decode(text)) out.emplace_back(text.substr(cp.begin, cp.end - cp.begin));
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (const std::string& word : split_whitespace(text)) {
    std::string current;
    for (const CodePoint& cp : decode(word)) {
      const std::string_view ch = std::string_view(word).substr(cp.begin, cp.end - cp.begin);
      if (is_punctuation(cp.value)) {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
        out.emplace_back(ch);
      } else {
        current.append(ch);
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
  }
  return out;
}

std::string tokenize_line(std::string_view text) { return join(tokenize(text)); }

std::string detokenize(const std::vector<std::string>& tokens) {
  static const std::u32string kCloses = U".,;:!?)]}%»…”";
  static const std::u32string kOpens = U"([{«¿¡“";
  auto single = [](const std::string& tok) -> char32_t {
    auto cps = decode(tok);
    return cps.size() == 1 ? cps[0].value : 0;
  };
  auto wordish = [](const std::string& tok, bool last) {
    auto cps = decode(tok);
    if (cps.empty()) return false;
    return is_word_char(last ? cps.back().value : cps.front().value);
  };

  std::string out;
  bool glue_next = false;
  bool open_quote = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    const char32_t c = single(tok);
    bool glue_prev = false;
    bool glue_after = false;
    if (c && is_punctuation(c)) {
      const bool between = i > 0 && i + 1 < tokens.size() && wordish(tokens[i - 1], true) && wordish(tokens[i + 1], false);
      if ((is_apostrophe(c) || c == U'-' || c == U'‐') && between) {
        glue_prev = glue_after = true;
      } else if (kCloses.find(c) != std::u32string::npos) {
        glue_prev = true;
      } else if (kOpens.find(c) != std::u32string::npos) {
        glue_after = true;
      } else if (c == U'"') {
        if (open_quote) {
          glue_prev = true;
        } else {
          glue_after = true;
        }
        open_quote = !open_quote;
      }
    }
    if (!out.empty() && !glue_prev && !glue_next) out.push_back(' ');
    out.append(tok);
    glue_next = glue_after;
  }
  return out;
}

std::string eval_normalize(std::string_view text) {
  std::string lowered;
  for (const CodePoint& cp : decode(text)) {
    if (is_punctuation(cp.value)) continue;
    append_utf8(lowered, static_cast<char32_t>(u_tolower(static_cast<UChar32>(cp.value))));
  }
  return join(split_whitespace(lowered));
}

const std::vector<std::pair<std::string, std::string>>& contraction_table() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"ain't", "is not"},       {"aren't", "are not"},     {"can't", "cannot"},         {"couldn't", "could not"},
      {"didn't", "did not"},     {"doesn't", "does not"},   {"don't", "do not"},         {"hadn't", "had not"},
      {"hasn't", "has not"},     {"haven't", "have not"},   {"he'd", "he would"},        {"he'll", "he will"},
      {"he's", "he is"},         {"here's", "here is"},     {"how's", "how is"},         {"i'd", "i would"},
      {"i'll", "i will"},        {"i'm", "i am"},           {"i've", "i have"},          {"isn't", "is not"},
      {"it'd", "it would"},      {"it'll", "it will"},      {"it's", "it is"},           {"let's", "let us"},
      {"mightn't", "might not"}, {"mustn't", "must not"},   {"needn't", "need not"},     {"shan't", "shall not"},
      {"she'd", "she would"},    {"she'll", "she will"},    {"she's", "she is"},         {"shouldn't", "should not"},
      {"that's", "that is"},     {"there's", "there is"},   {"they'd", "they would"},    {"they'll", "they will"},
      {"they're", "they are"},   {"they've", "they have"},  {"wasn't", "was not"},       {"we'd", "we would"},
      {"we'll", "we will"},      {"we're", "we are"},       {"we've", "we have"},        {"weren't", "were not"},
      {"what's", "what is"},     {"where's", "where is"},   {"who's", "who is"},         {"won't", "will not"},
      {"wouldn't", "would not"}, {"you'd", "you would"},    {"you'll", "you will"},      {"you're", "you are"},
      {"you've", "you have"},
  };
  return table;
}

std::string expand_contractions(std::string_view text) {
  static const std::unordered_map<std::string, std::string> lookup(contraction_table().begin(),
                                                                    contraction_table().end());
  const auto cps = decode(text);
  std::string out;
  std::size_t i = 0;
  while (i < cps.size()) {
    if (!is_word_char(cps[i].value)) {
      out.append(text.substr(cps[i].begin, cps[i].end - cps[i].begin));
      ++i;
      continue;
    }
    std::size_t j = i;
    bool has_apostrophe = false;
    while (j < cps.size() && (is_word_char(cps[j].value) || is_apostrophe(cps[j].value))) {
      has_apostrophe = has_apostrophe || is_apostrophe(cps[j].value);
      ++j;
    }
    const std::string_view word = text.substr(cps[i].begin, cps[j - 1].end - cps[i].begin);
    if (!has_apostrophe) {
      out.append(word);
      i = j;
      continue;
    }
    std::string key;
    bool all_upper = true;
    std::size_t letters = 0;
    for (std::size_t k = i; k < j; ++k) {
      const char32_t c = cps[k].value;
      if (is_apostrophe(c)) {
        key.push_back('\'');
        continue;
      }
      ++letters;
      all_upper = all_upper && u_isupper(static_cast<UChar32>(c));
      append_utf8(key, static_cast<char32_t>(u_tolower(static_cast<UChar32>(c))));
    }
    auto it = lookup.find(key);
    if (it == lookup.end()) {
      out.append(word);
    } else {
      std::string expansion = it->second;
      if (all_upper && letters > 1) {
        for (char& ch : expansion) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      } else if (u_isupper(static_cast<UChar32>(cps[i].value))) {
        expansion[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(expansion[0])));
      }
      out.append(expansion);
    }
    i = j;
  }
  return out;
}

}  // namespace nmt
