#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "nmt/graph.h"
#include "nmt/model.h"
#include "nmt/tensor.h"
#include "nmt/types.h"

namespace nmt {

// Next-token distributions for a set of partial hypotheses. begin() starts
// one empty hypothesis per source; advance() replaces the hypothesis set:
// new hypothesis i extends old hypothesis parents[i] with tokens[i]. Both
// return one row of log-probabilities per hypothesis.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t sources() const = 0;
  virtual Tensor<float> begin() = 0;
  virtual Tensor<float> advance(std::span<const std::size_t> parents, std::span<const TokenId> tokens) = 0;
};

class ModelScorer : public StepScorer {
 public:
  // `params` must outlive the scorer and is not modified.
  ModelScorer(const ParameterSet<float>& params, const ModelConfig& config, std::vector<TokenIds> sources);
  ~ModelScorer() override;

  std::size_t sources() const override { return sources_.size(); }
  Tensor<float> begin() override;
  Tensor<float> advance(std::span<const std::size_t> parents, std::span<const TokenId> tokens) override;

 private:
  Tensor<float> run(std::span<const TokenId> tokens);

  std::vector<TokenIds> sources_;
  std::unique_ptr<Graph<float>> graph_;
  std::unique_ptr<Seq2Seq<float>> model_;
  EncodedSource encoded_;
  std::vector<std::size_t> source_of_;  // per live hypothesis
  Var state_;
};

struct Hypothesis {
  TokenIds tokens;  // generated tokens, eos included when finished
  double score = 0;  // cumulative log-probability
  bool finished = false;

  double normalized_score() const { return tokens.empty() ? score : score / static_cast<double>(tokens.size()); }
};

struct BeamResult {
  Hypothesis best;
  // Every hypothesis retired during the search, in retirement order.
  std::vector<Hypothesis> candidates;
};

std::size_t default_max_len(std::size_t source_length);

// Beam search for source 0 of the scorer. The live beam shrinks by one for
// each retired hypothesis. Final choice: highest score / length, ties to the
// lexicographically smaller token sequence.
BeamResult beam_search(StepScorer& scorer, std::size_t beam_size, std::size_t max_len);

// Greedy decoding of every scorer source; ties go to the smaller token id.
std::vector<TokenIds> greedy_decode(StepScorer& scorer, std::span<const std::size_t> max_lens);

Hypothesis beam_search(const ParameterSet<float>& params, const ModelConfig& config, const TokenIds& source,
                       std::size_t beam_size, std::size_t max_len = 0);
TokenIds greedy_decode(const ParameterSet<float>& params, const ModelConfig& config, const TokenIds& source,
                       std::size_t max_len = 0);
// Sentences are decoded in chunks of `batch` sources.
std::vector<TokenIds> greedy_decode(const ParameterSet<float>& params, const ModelConfig& config,
                                    const std::vector<TokenIds>& sources, std::size_t batch = 64);

struct TargetScore {
  double nll = 0;
  std::size_t tokens = 0;
};

// Teacher-forced NLL summed over the target, eos included.
TargetScore score_target(const ParameterSet<float>& params, const ModelConfig& config, const TokenIds& source,
                         const TokenIds& target);
std::vector<TargetScore> score_targets(const ParameterSet<float>& params, const ModelConfig& config,
                                       const std::vector<TokenIds>& sources, const std::vector<TokenIds>& targets,
                                       std::size_t batch = 32);

}  // namespace nmt
