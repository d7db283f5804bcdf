#include "nmt/metrics.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "nmt/error.h"
#include "nmt/text.h"

namespace nmt {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& words, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++counts[Ngram(words.begin() + i, words.begin() + i + n)];
  return counts;
}

std::set<Ngram> ngram_set(const std::vector<std::string>& words, std::size_t n) {
  std::set<Ngram> out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) out.emplace(words.begin() + i, words.begin() + i + n);
  return out;
}

std::string format_number(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

}  // namespace

double BleuStats::precision(std::size_t n) const {
  if (n == 0 || n > totals.size() || totals[n - 1] == 0) return 0.0;
  return static_cast<double>(matches[n - 1]) / static_cast<double>(totals[n - 1]);
}

double BleuStats::brevity_penalty() const {
  if (hyp_length == 0) return 0.0;
  if (hyp_length >= ref_length) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_length) / static_cast<double>(hyp_length));
}

double BleuStats::bleu() const {
  double log_sum = 0;
  for (std::size_t n = 1; n <= totals.size(); ++n) {
    const double p = precision(n);
    if (p == 0.0) return 0.0;
    log_sum += std::log(p);
  }
  return 100.0 * brevity_penalty() * std::exp(log_sum / static_cast<double>(totals.size()));
}

BleuStats bleu_stats(const std::vector<std::string>& hypotheses,
                     const std::vector<std::vector<std::string>>& references, std::size_t max_n) {
  if (hypotheses.empty()) throw DomainError("BLEU of an empty corpus");
  if (hypotheses.size() != references.size())
    throw DomainError("BLEU: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                      std::to_string(references.size()) + " reference lists");
  if (max_n == 0) throw ConfigError("BLEU: max_n must be at least 1");
  BleuStats stats;
  stats.matches.assign(max_n, 0);
  stats.totals.assign(max_n, 0);
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    if (references[s].empty()) throw DomainError("BLEU: sentence " + std::to_string(s) + " has no reference");
    const auto hyp = split_whitespace(hypotheses[s]);
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : references[s]) refs.push_back(split_whitespace(r));

    stats.hyp_length += hyp.size();
    std::size_t closest = refs.front().size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) { return len > hyp.size() ? len - hyp.size() : hyp.size() - len; };
      if (diff(r.size()) < diff(closest) || (diff(r.size()) == diff(closest) && r.size() < closest)) closest = r.size();
    }
    stats.ref_length += closest;

    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<Ngram, std::size_t> max_ref;
      for (const auto& r : refs)
        for (const auto& [gram, count] : ngram_counts(r, n)) max_ref[gram] = std::max(max_ref[gram], count);
      for (const auto& [gram, count] : ngram_counts(hyp, n)) {
        stats.totals[n - 1] += count;
        auto it = max_ref.find(gram);
        if (it != max_ref.end()) stats.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  return stats;
}

double bleu(const std::vector<std::string>& hypotheses, const std::vector<std::vector<std::string>>& references,
            std::size_t max_n) {
  return bleu_stats(hypotheses, references, max_n).bleu();
}

double pinc(const std::string& source, const std::string& candidate, std::size_t max_n) {
  const auto cand = split_whitespace(candidate);
  if (cand.empty()) throw DomainError("PINC of an empty candidate");
  const auto src = split_whitespace(source);
  const std::size_t n_max = std::min(max_n, cand.size());
  double sum = 0;
  for (std::size_t n = 1; n <= n_max; ++n) {
    const auto c = ngram_set(cand, n);
    const auto s = ngram_set(src, n);
    std::size_t shared = 0;
    for (const auto& gram : c) shared += s.count(gram);
    sum += 1.0 - static_cast<double>(shared) / static_cast<double>(c.size());
  }
  return 100.0 * sum / static_cast<double>(n_max);
}

double copy_rate(const std::vector<std::string>& sources, const std::vector<std::string>& outputs) {
  if (sources.empty()) throw DomainError("copy rate of an empty corpus");
  if (sources.size() != outputs.size())
    throw DomainError("copy rate: " + std::to_string(sources.size()) + " sources but " +
                      std::to_string(outputs.size()) + " outputs");
  std::size_t copies = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) copies += eval_normalize(sources[i]) == eval_normalize(outputs[i]);
  return 100.0 * static_cast<double>(copies) / static_cast<double>(sources.size());
}

double corpus_perplexity(const std::vector<ScoreLine>& scores) {
  double nll = 0;
  std::size_t tokens = 0;
  for (const ScoreLine& s : scores) {
    nll += s.nll;
    tokens += s.tokens;
  }
  if (tokens == 0) throw DomainError("perplexity over zero tokens");
  return std::exp(nll / static_cast<double>(tokens));
}

std::vector<ScoreLine> load_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::vector<ScoreLine> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    std::istringstream fields(line);
    ScoreLine s;
    if (!(fields >> s.index >> s.nll >> s.tokens)) throw ParseError(path.string(), number, "expected index<TAB>nll<TAB>tokens");
    out.push_back(s);
  }
  return out;
}

void save_scores(const std::vector<ScoreLine>& scores, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  for (const ScoreLine& s : scores) out << s.index << '\t' << format_number(s.nll) << '\t' << s.tokens << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

std::string EvalReport::to_tsv() const {
  std::ostringstream out;
  out << "bleu\t" << format_number(bleu) << '\n';
  out << "pinc\t" << format_number(pinc) << '\n';
  out << "copy_rate\t" << format_number(copy_rate) << '\n';
  if (perplexity) out << "perplexity\t" << format_number(*perplexity) << '\n';
  out << "sentences\t" << sentences << '\n';
  out << "references_min\t" << references_min << '\n';
  out << "references_max\t" << references_max << '\n';
  out << "references_mean\t" << format_number(references_mean) << '\n';
  return out.str();
}

EvalReport EvalReport::from_tsv(const std::string& text) {
  EvalReport r;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("report", number, "expected metric<TAB>value");
    const std::string key = line.substr(0, tab);
    const std::string value = line.substr(tab + 1);
    try {
      if (key == "bleu") r.bleu = std::stod(value);
      else if (key == "pinc") r.pinc = std::stod(value);
      else if (key == "copy_rate") r.copy_rate = std::stod(value);
      else if (key == "perplexity") r.perplexity = std::stod(value);
      else if (key == "sentences") r.sentences = std::stoull(value);
      else if (key == "references_min") r.references_min = std::stoull(value);
      else if (key == "references_max") r.references_max = std::stoull(value);
      else if (key == "references_mean") r.references_mean = std::stod(value);
      else throw ParseError("report", number, "unknown metric '" + key + "'");
    } catch (const std::logic_error&) {
      throw ParseError("report", number, "bad value for '" + key + "'");
    }
  }
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["bleu"] = bleu;
  j["pinc"] = pinc;
  j["copy_rate"] = copy_rate;
  j["perplexity"] = perplexity ? nlohmann::ordered_json(*perplexity) : nlohmann::ordered_json(nullptr);
  j["sentences"] = sentences;
  j["references_min"] = references_min;
  j["references_max"] = references_max;
  j["references_mean"] = references_mean;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.bleu = j.at("bleu").get<double>();
    r.pinc = j.at("pinc").get<double>();
    r.copy_rate = j.at("copy_rate").get<double>();
    if (j.contains("perplexity") && !j.at("perplexity").is_null()) r.perplexity = j.at("perplexity").get<double>();
    r.sentences = j.at("sentences").get<std::size_t>();
    r.references_min = j.at("references_min").get<std::size_t>();
    r.references_max = j.at("references_max").get<std::size_t>();
    r.references_mean = j.at("references_mean").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("report", 1, e.what());
  }
}

EvalReport make_report(const std::vector<std::string>& sources, const std::vector<std::string>& outputs,
                       const std::vector<std::vector<std::string>>& references, const std::vector<ScoreLine>* scores) {
  if (outputs.size() != sources.size() || references.size() != sources.size())
    throw DomainError("report: " + std::to_string(sources.size()) + " sources, " + std::to_string(outputs.size()) +
                      " outputs, " + std::to_string(references.size()) + " reference lists");
  std::vector<std::string> hyp;
  std::vector<std::vector<std::string>> refs;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    hyp.push_back(eval_normalize(outputs[i]));
    refs.emplace_back();
    for (const auto& r : references[i]) refs.back().push_back(eval_normalize(r));
  }
  EvalReport report;
  report.bleu = bleu(hyp, refs);
  double pinc_sum = 0;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (!hyp[i].empty()) pinc_sum += pinc(eval_normalize(sources[i]), hyp[i]);
  }
  report.pinc = pinc_sum / static_cast<double>(hyp.size());
  report.copy_rate = copy_rate(sources, outputs);
  if (scores) report.perplexity = corpus_perplexity(*scores);
  report.sentences = sources.size();
  report.references_min = SIZE_MAX;
  std::size_t total = 0;
  for (const auto& r : references) {
    report.references_min = std::min(report.references_min, r.size());
    report.references_max = std::max(report.references_max, r.size());
    total += r.size();
  }
  report.references_mean = static_cast<double>(total) / static_cast<double>(references.size());
  return report;
}

}  // namespace nmt
