#include "nmt/decode.h"

#include <algorithm>
#include <numeric>

#include "nmt/error.h"

namespace nmt {

ModelScorer::ModelScorer(const ParameterSet<float>& params, const ModelConfig& config, std::vector<TokenIds> sources)
    : sources_(std::move(sources)), graph_(std::make_unique<Graph<float>>(false)) {
  if (sources_.empty()) throw ShapeError("decoder: no source sentences");
  // Evaluation graphs never write to parameters.
  model_ = std::make_unique<Seq2Seq<float>>(*graph_, const_cast<ParameterSet<float>&>(params), config);
  encoded_ = model_->encode(sources_);
}

ModelScorer::~ModelScorer() = default;

Tensor<float> ModelScorer::run(std::span<const TokenId> tokens) {
  EncodedSource view = encoded_;
  bool identity = source_of_.size() == encoded_.batch;
  for (std::size_t i = 0; identity && i < source_of_.size(); ++i) identity = source_of_[i] == i;
  if (!identity) {
    const std::size_t L = encoded_.length;
    std::vector<std::size_t> rows;
    rows.reserve(source_of_.size() * L);
    for (std::size_t s : source_of_)
      for (std::size_t t = 0; t < L; ++t) rows.push_back(s * L + t);
    view.batch = source_of_.size();
    view.annotations = graph_->gather_rows(encoded_.annotations, rows);
    view.keys = graph_->gather_rows(encoded_.keys, std::move(rows));
    view.score_mask = graph_->gather_rows(encoded_.score_mask, source_of_);
  }
  DecoderOutput out = model_->step(state_, tokens, view);
  state_ = out.state;
  return graph_->value(graph_->log_softmax(out.logits));
}

Tensor<float> ModelScorer::begin() {
  source_of_.resize(sources_.size());
  std::iota(source_of_.begin(), source_of_.end(), std::size_t{0});
  state_ = encoded_.init_state;
  const TokenIds bos(sources_.size(), kBosId);
  return run(bos);
}

Tensor<float> ModelScorer::advance(std::span<const std::size_t> parents, std::span<const TokenId> tokens) {
  if (parents.size() != tokens.size() || parents.empty()) throw ShapeError("decoder: bad hypothesis update");
  std::vector<std::size_t> next(parents.size());
  bool identity = parents.size() == source_of_.size();
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (parents[i] >= source_of_.size()) throw ShapeError("decoder: parent index out of range");
    next[i] = source_of_[parents[i]];
    identity = identity && parents[i] == i;
  }
  if (!identity) state_ = graph_->gather_rows(state_, std::vector<std::size_t>(parents.begin(), parents.end()));
  source_of_ = std::move(next);
  return run(tokens);
}

std::size_t default_max_len(std::size_t source_length) { return 3 * source_length + 10; }

namespace {

struct Candidate {
  std::size_t parent;
  TokenId token;
  double score;
};

bool sequence_less(const TokenIds& a, const TokenIds& b) { return a < b; }

}  // namespace

BeamResult beam_search(StepScorer& scorer, std::size_t beam_size, std::size_t max_len) {
  if (beam_size == 0) throw ConfigError("beam size must be at least 1");
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  if (scorer.sources() != 1) throw ShapeError("beam search decodes exactly one source");

  std::vector<Hypothesis> live{Hypothesis{}};
  BeamResult result;
  Tensor<float> log_probs = scorer.begin();
  const std::size_t vocab = log_probs.cols();

  for (std::size_t step = 1; step <= max_len && !live.empty(); ++step) {
    const std::size_t keep = beam_size - result.candidates.size();
    std::vector<Candidate> all;
    all.reserve(live.size() * vocab);
    for (std::size_t i = 0; i < live.size(); ++i) {
      const float* row = log_probs.data() + i * vocab;
      // Padding and <s> are never generated.
      for (std::size_t v = 0; v < vocab; ++v) {
        const auto id = static_cast<TokenId>(v);
        if (id == kPadId || id == kBosId) continue;
        all.push_back({i, id, live[i].score + static_cast<double>(row[v])});
      }
    }
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) return sequence_less(live[a.parent].tokens, live[b.parent].tokens);
      return a.token < b.token;
    };
    const std::size_t take = std::min(keep, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), better);

    std::vector<Hypothesis> next;
    std::vector<std::size_t> parents;
    TokenIds tokens;
    for (std::size_t k = 0; k < take; ++k) {
      const Candidate& c = all[k];
      Hypothesis h{live[c.parent].tokens, c.score, false};
      h.tokens.push_back(c.token);
      if (c.token == kEosId || step == max_len) {
        h.finished = true;
        result.candidates.push_back(std::move(h));
      } else {
        parents.push_back(c.parent);
        tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (!live.empty() && result.candidates.size() < beam_size) log_probs = scorer.advance(parents, tokens);
    else break;
  }
  const std::vector<Hypothesis>& pool = result.candidates.empty() ? live : result.candidates;
  if (pool.empty()) throw DomainError("beam search produced no hypothesis");
  result.best = *std::min_element(pool.begin(), pool.end(), [](const Hypothesis& a, const Hypothesis& b) {
    const double sa = a.normalized_score(), sb = b.normalized_score();
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  });
  return result;
}

std::vector<TokenIds> greedy_decode(StepScorer& scorer, std::span<const std::size_t> max_lens) {
  const std::size_t n = scorer.sources();
  if (max_lens.size() != n) throw ShapeError("greedy decode: one max_len per source required");
  std::vector<TokenIds> out(n);
  std::vector<std::size_t> live(n);
  std::iota(live.begin(), live.end(), std::size_t{0});
  Tensor<float> log_probs = scorer.begin();
  const std::size_t vocab = log_probs.cols();
  while (!live.empty()) {
    std::vector<std::size_t> parents, still;
    TokenIds tokens;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const float* row = log_probs.data() + i * vocab;
      TokenId best = kEosId;
      for (std::size_t v = 0; v < vocab; ++v) {
        const auto id = static_cast<TokenId>(v);
        if (id == kPadId || id == kBosId) continue;
        if (row[v] > row[static_cast<std::size_t>(best)] || (row[v] == row[static_cast<std::size_t>(best)] && id < best))
          best = id;
      }
      TokenIds& seq = out[live[i]];
      seq.push_back(best);
      if (best != kEosId && seq.size() < max_lens[live[i]]) {
        parents.push_back(i);
        tokens.push_back(best);
        still.push_back(live[i]);
      }
    }
    live = std::move(still);
    if (!live.empty()) log_probs = scorer.advance(parents, tokens);
  }
  return out;
}

Hypothesis beam_search(const ParameterSet<float>& params, const ModelConfig& config, const TokenIds& source,
                       std::size_t beam_size, std::size_t max_len) {
  ModelScorer scorer(params, config, {source});
  return beam_search(scorer, beam_size, max_len ? max_len : default_max_len(source.size())).best;
}

TokenIds greedy_decode(const ParameterSet<float>& params, const ModelConfig& config, const TokenIds& source,
                       std::size_t max_len) {
  ModelScorer scorer(params, config, {source});
  const std::size_t lens[1] = {max_len ? max_len : default_max_len(source.size())};
  return greedy_decode(scorer, lens).front();
}

std::vector<TokenIds> greedy_decode(const ParameterSet<float>& params, const ModelConfig& config,
                                    const std::vector<TokenIds>& sources, std::size_t batch) {
  if (batch == 0) throw ConfigError("decode batch must be at least 1");
  std::vector<TokenIds> out;
  out.reserve(sources.size());
  for (std::size_t start = 0; start < sources.size(); start += batch) {
    std::vector<TokenIds> chunk(sources.begin() + static_cast<std::ptrdiff_t>(start),
                                sources.begin() + static_cast<std::ptrdiff_t>(std::min(sources.size(), start + batch)));
    std::vector<std::size_t> lens;
    for (const auto& s : chunk) lens.push_back(default_max_len(s.size()));
    ModelScorer scorer(params, config, std::move(chunk));
    for (auto& hyp : greedy_decode(scorer, lens)) out.push_back(std::move(hyp));
  }
  return out;
}

std::vector<TargetScore> score_targets(const ParameterSet<float>& params, const ModelConfig& config,
                                       const std::vector<TokenIds>& sources, const std::vector<TokenIds>& targets,
                                       std::size_t batch) {
  if (sources.size() != targets.size()) throw ShapeError("score: source and target counts differ");
  if (batch == 0) throw ConfigError("score batch must be at least 1");
  for (const auto& t : targets)
    if (t.empty() || t.back() != kEosId) throw DomainError("score: target must end with </s>");
  std::vector<TargetScore> out;
  for (std::size_t start = 0; start < sources.size(); start += batch) {
    const std::size_t end = std::min(sources.size(), start + batch);
    std::vector<TokenIds> src(sources.begin() + static_cast<std::ptrdiff_t>(start),
                              sources.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<TokenIds> tgt(targets.begin() + static_cast<std::ptrdiff_t>(start),
                              targets.begin() + static_cast<std::ptrdiff_t>(end));
    Graph<float> g(false);
    Seq2Seq<float> model(g, const_cast<ParameterSet<float>&>(params), config);
    auto scores = model.token_nll(src, tgt);
    const Tensor<float>& nll = g.value(scores.nll);
    for (std::size_t b = 0; b < src.size(); ++b) {
      TargetScore s;
      for (std::size_t j = 0; j < tgt[b].size(); ++j) s.nll += static_cast<double>(nll[j * scores.batch + b]);
      s.tokens = tgt[b].size();
      out.push_back(s);
    }
  }
  return out;
}

TargetScore score_target(const ParameterSet<float>& params, const ModelConfig& config, const TokenIds& source,
                         const TokenIds& target) {
  return score_targets(params, config, {source}, {target}).front();
}

}  // namespace nmt
