#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nmt {

struct BleuStats {
  std::vector<std::size_t> matches;  // clipped n-gram matches, n = 1..max_n
  std::vector<std::size_t> totals;   // hypothesis n-grams, n = 1..max_n
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  double precision(std::size_t n) const;  // n is 1-based
  double brevity_penalty() const;
  double bleu() const;  // percent
};

// Inputs are whitespace-tokenized sentences, already normalized.
BleuStats bleu_stats(const std::vector<std::string>& hypotheses,
                     const std::vector<std::vector<std::string>>& references, std::size_t max_n = 4);
double bleu(const std::vector<std::string>& hypotheses, const std::vector<std::vector<std::string>>& references,
            std::size_t max_n = 4);

double pinc(const std::string& source, const std::string& candidate, std::size_t max_n = 4);
double copy_rate(const std::vector<std::string>& sources, const std::vector<std::string>& outputs);

struct ScoreLine {
  std::size_t index = 0;
  double nll = 0;
  std::size_t tokens = 0;
};

double corpus_perplexity(const std::vector<ScoreLine>& scores);
std::vector<ScoreLine> load_scores(const std::filesystem::path& path);
void save_scores(const std::vector<ScoreLine>& scores, const std::filesystem::path& path);

struct EvalReport {
  double bleu = 0;
  double pinc = 0;
  double copy_rate = 0;
  std::optional<double> perplexity;
  std::size_t sentences = 0;
  std::size_t references_min = 0;
  std::size_t references_max = 0;
  double references_mean = 0;

  std::string to_tsv() const;
  std::string to_json() const;
  static EvalReport from_tsv(const std::string& text);
  static EvalReport from_json(const std::string& text);
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Raw sentences; eval-normalization happens inside. Empty outputs contribute
// a PINC of 0.
EvalReport make_report(const std::vector<std::string>& sources, const std::vector<std::string>& outputs,
                       const std::vector<std::vector<std::string>>& references,
                       const std::vector<ScoreLine>* scores = nullptr);

}  // namespace nmt
