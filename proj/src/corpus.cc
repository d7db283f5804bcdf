#include "nmt/corpus.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "nmt/error.h"
#include "nmt/text.h"

namespace nmt {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  return out;
}

class DisjointSets {
 public:
  std::size_t add() {
    parent_.push_back(parent_.size());
    return parent_.size() - 1;
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

std::vector<Verse> parse_verse_corpus(std::istream& in, const std::string& translation_id,
                                      const std::string& source_name) {
  std::vector<Verse> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    strip_cr(line);
    if (line.empty() || line[0] == '#' || trim(line).empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(source_name, number, "expected verse_id<TAB>text");
    Verse v{translation_id, trim(line.substr(0, tab)), trim(line.substr(tab + 1))};
    if (v.verse_id.empty()) throw ParseError(source_name, number, "empty verse id");
    if (!seen.insert(v.verse_id).second) {
      throw DuplicateKeyError(source_name + ":" + std::to_string(number) + ": duplicate verse id '" + v.verse_id +
                              "' in translation '" + translation_id + "'");
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<Verse> load_verse_corpus(const std::filesystem::path& path, const std::string& translation_id) {
  std::ifstream in = open_input(path);
  return parse_verse_corpus(in, translation_id, path.string());
}

std::vector<ParallelPair> align_by_verse(const std::vector<Verse>& a, const std::vector<Verse>& b,
                                         const std::string& src_lang, const std::string& tgt_lang) {
  std::unordered_map<std::string, const Verse*> index;
  for (const Verse& v : b) index.emplace(v.verse_id, &v);
  std::vector<ParallelPair> out;
  for (const Verse& v : a) {
    auto it = index.find(v.verse_id);
    if (it == index.end()) continue;
    out.push_back({src_lang, tgt_lang, v.text, it->second->text, v.verse_id});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ParallelPair& x, const ParallelPair& y) { return x.verse_id < y.verse_id; });
  return out;
}

bool is_valid_language_code(const std::string& code) {
  if (code.empty() || code.size() > 16) return false;
  return std::all_of(code.begin(), code.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

std::string flag_token(const std::string& language) { return "<2" + language + ">"; }

std::string add_language_flag(const std::string& sentence, const std::string& target,
                              const std::vector<std::string>& languages) {
  if (std::find(languages.begin(), languages.end(), target) == languages.end()) {
    throw ConfigError("unknown target language '" + target + "'");
  }
  return sentence.empty() ? flag_token(target) : flag_token(target) + " " + sentence;
}

std::vector<ParallelPair> build_training_set(const TrainingSetConfig& config) {
  std::set<std::string> codes;
  for (const LanguageCorpus& lang : config.languages) {
    if (!is_valid_language_code(lang.code)) throw ConfigError("invalid language code '" + lang.code + "'");
    if (!codes.insert(lang.code).second) throw ConfigError("language '" + lang.code + "' listed twice");
    if (lang.translations.empty()) throw ConfigError("language '" + lang.code + "' has no translation");
  }
  auto require = [&](const std::string& code, const char* role) {
    if (!codes.count(code)) throw ConfigError(std::string(role) + " language '" + code + "' is not configured");
  };
  require(config.pivot, "pivot");
  for (const std::string& hub : config.hubs) require(hub, "hub");
  if (config.identity_language) require(*config.identity_language, "identity");

  auto is_hub = [&](const std::string& code) {
    return config.hubs.empty() || std::find(config.hubs.begin(), config.hubs.end(), code) != config.hubs.end();
  };
  auto filter = [&](const std::vector<Verse>& verses) {
    std::vector<Verse> kept;
    for (const Verse& v : verses)
      if (!v.text.empty() && (!config.include || config.include(v.verse_id))) kept.push_back(v);
    return kept;
  };

  std::map<std::string, std::vector<std::vector<Verse>>> kept;
  for (const LanguageCorpus& lang : config.languages) {
    for (const Translation& t : lang.translations) kept[lang.code].push_back(filter(t.verses));
  }

  std::vector<ParallelPair> out;
  for (const LanguageCorpus& a : config.languages) {
    for (const LanguageCorpus& b : config.languages) {
      if (a.code == b.code || !(is_hub(a.code) || is_hub(b.code))) continue;
      for (const auto& va : kept[a.code]) {
        for (const auto& vb : kept[b.code]) {
          auto pairs = align_by_verse(va, vb, a.code, b.code);
          out.insert(out.end(), pairs.begin(), pairs.end());
        }
      }
    }
  }
  if (config.paraphrase) {
    const auto& pivots = kept[config.pivot];
    for (std::size_t i = 0; i < pivots.size(); ++i) {
      for (std::size_t j = 0; j < pivots.size(); ++j) {
        if (i == j) continue;
        auto pairs = align_by_verse(pivots[i], pivots[j], config.pivot, config.pivot);
        out.insert(out.end(), pairs.begin(), pairs.end());
      }
    }
  }
  if (config.identity_language) {
    const std::string& code = *config.identity_language;
    std::unordered_set<std::string> seen;
    for (const auto& verses : kept[code]) {
      for (const Verse& v : verses) {
        if (seen.insert(v.text).second) out.push_back({code, code, v.text, v.text, v.verse_id});
      }
    }
  }
  return out;
}

Split assign_split(const std::string& verse_id, double dev_fraction, double test_fraction) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : verse_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  // Final avalanche so that consecutive ids spread evenly.
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < test_fraction) return Split::kTest;
  if (u < test_fraction + dev_fraction) return Split::kDev;
  return Split::kTrain;
}

std::pair<SingleRefSet, MultiRefSet> build_paraphrase_testsets(
    const std::vector<std::pair<std::string, std::string>>& pairs, const TestSetOptions& options) {
  SingleRefSet single;
  for (const auto& [a, b] : pairs) {
    std::string x = options.expand_contractions ? expand_contractions(a) : a;
    std::string y = options.expand_contractions ? expand_contractions(b) : b;
    if (options.drop_near_identical && eval_normalize(x) == eval_normalize(y)) continue;
    single.entries.emplace_back(std::move(x), std::move(y));
  }

  DisjointSets sets;
  std::map<std::string, std::size_t> ids;
  auto id_of = [&](const std::string& s) {
    auto [it, inserted] = ids.emplace(s, 0);
    if (inserted) it->second = sets.add();
    return it->second;
  };
  for (const auto& [x, y] : single.entries) sets.unite(id_of(x), id_of(y));

  // std::map iteration is lexicographic, so members arrive sorted and the
  // first member of each group is its smallest.
  std::map<std::size_t, std::vector<std::string>> groups;
  for (const auto& [text, id] : ids) groups[sets.find(id)].push_back(text);

  MultiRefSet multi;
  for (auto& [root, members] : groups) {
    MultiRefEntry entry;
    entry.source = members.front();
    const std::string norm = eval_normalize(entry.source);
    for (std::size_t i = 1; i < members.size(); ++i) {
      if (eval_normalize(members[i]) != norm) entry.references.push_back(members[i]);
    }
    if (!entry.references.empty()) multi.entries.push_back(std::move(entry));
  }
  std::sort(multi.entries.begin(), multi.entries.end(),
            [](const MultiRefEntry& a, const MultiRefEntry& b) { return a.source < b.source; });
  return {std::move(single), std::move(multi)};
}

MultiRefSet build_verse_multiref(const std::vector<Verse>& source, const std::vector<std::vector<Verse>>& references) {
  std::vector<std::unordered_map<std::string, const Verse*>> index(references.size());
  for (std::size_t r = 0; r < references.size(); ++r)
    for (const Verse& v : references[r]) index[r].emplace(v.verse_id, &v);
  MultiRefSet out;
  for (const Verse& v : source) {
    MultiRefEntry entry{v.text, {}};
    const std::string norm = eval_normalize(v.text);
    for (const auto& idx : index) {
      auto it = idx.find(v.verse_id);
      if (it != idx.end() && eval_normalize(it->second->text) != norm) entry.references.push_back(it->second->text);
    }
    if (!entry.references.empty()) out.entries.push_back(std::move(entry));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> load_pair_file(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    strip_cr(line);
    if (trim(line).empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2) throw ParseError(path.string(), number, "expected sentence_a<TAB>sentence_b");
    out.emplace_back(trim(fields[0]), trim(fields[1]));
  }
  return out;
}

void save_single_ref(const SingleRefSet& set, const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  for (const auto& [src, ref] : set.entries) out << src << '\t' << ref << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

void save_multi_ref(const MultiRefSet& set, const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  for (const MultiRefEntry& e : set.entries) {
    out << e.source;
    for (const std::string& r : e.references) out << '\t' << r;
    out << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

SingleRefSet load_single_ref(const std::filesystem::path& path) {
  SingleRefSet set;
  for (auto& pair : load_pair_file(path)) set.entries.push_back(std::move(pair));
  return set;
}

MultiRefSet load_multi_ref(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  MultiRefSet set;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    strip_cr(line);
    if (trim(line).empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2) throw ParseError(path.string(), number, "expected source<TAB>reference...");
    MultiRefEntry e{fields[0], {fields.begin() + 1, fields.end()}};
    set.entries.push_back(std::move(e));
  }
  return set;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    out.push_back(std::move(line));
  }
  return out;
}

void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  for (const std::string& l : lines) out << l << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace nmt
