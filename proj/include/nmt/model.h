#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nmt/graph.h"
#include "nmt/rng.h"
#include "nmt/tensor.h"
#include "nmt/types.h"

namespace nmt {

struct ModelConfig {
  std::size_t emb_dim = 512;
  std::size_t rnn_dim = 1024;
  std::size_t att_dim = 0;  // 0 means rnn_dim
  std::size_t vocab_size = 0;
  double rnn_dropout = 0.2;
  double word_dropout_src = 0.1;
  double word_dropout_tgt = 0.1;
  bool layer_norm = true;
  std::size_t layers = 1;

  std::size_t attention_dim() const { return att_dim == 0 ? rnn_dim : att_dim; }
  // Throws ConfigError on zero dimensions, dropout outside [0, 1) or layers != 1.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named weights of one model, ordered by name.
template <typename T>
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  void insert(std::string name, Tensor<T> value) { tensors_.insert_or_assign(std::move(name), std::move(value)); }

  std::size_t size() const { return tensors_.size(); }
  std::size_t num_scalars() const;
  bool all_finite() const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : tensors_) out.insert(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  Map tensors_;
};

enum class ParameterRole { kWeight, kBias, kGain };

struct ParameterSpec {
  std::string name;
  Shape shape;
  ParameterRole role;
};

// Every parameter the configuration needs, with its shape and init role.
std::vector<ParameterSpec> parameter_specs(const ModelConfig& config);

// Glorot-uniform weights with bound sqrt(6 / (rows + cols)), zero biases and
// unit layer-norm gains. Each tensor draws from its own stream derived from
// the seed and the tensor name.
ParameterSet<float> init_parameters(const ModelConfig& config, std::uint64_t seed);

enum class Mode { kTrain, kEval };

// Graph-side view of an encoded batch. Annotations are laid out
// sentence-major: row b * length + t holds position t of sentence b.
struct EncodedSource {
  Var annotations;  // (batch * length, 2 * rnn_dim)
  Var keys;         // (batch * length, att_dim), attention projection of annotations
  Var score_mask;   // (batch, length), 0 for real positions, large negative for padding
  Var init_state;   // (batch, rnn_dim)
  std::size_t batch = 0;
  std::size_t length = 0;
};

struct DecoderOutput {
  Var state;     // (batch, rnn_dim)
  Var logits;    // (batch, vocab)
  Var context;   // (batch, 2 * rnn_dim)
  Var weights;   // (batch, length)
};

// Attentional encoder-decoder built on a Graph: bidirectional GRU encoder,
// additive attention and a two-block conditional GRU decoder.
//
// GRU cell: z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
// c = tanh(Wc x + Uc (r * h) + bc), h' = (1 - z) * h + z * c, with layer
// normalization applied to each gate's pre-activation when enabled. In
// training mode the same dropout mask is used at every time step of a
// sequence (inputs and recurrent states), and input ids are replaced with
// <unk> at the word dropout rates.
template <typename T>
class Seq2Seq {
 public:
  Seq2Seq(Graph<T>& graph, ParameterSet<T>& params, const ModelConfig& config, Mode mode = Mode::kEval,
          CounterRng* rng = nullptr);

  EncodedSource encode(const std::vector<TokenIds>& sources);
  // Binds precomputed encoder tensors (single sentence) replicated `batch` times.
  EncodedSource bind(const Tensor<T>& annotations, const Tensor<T>& keys, std::size_t batch);
  Var initial_state(Var annotations, std::size_t batch, std::size_t length, const Tensor<T>& mean_weights);

  // Returns (context, weights) for a query state of shape (batch, rnn_dim).
  std::pair<Var, Var> attend(Var query, const EncodedSource& source);
  DecoderOutput step(Var state, std::span<const TokenId> previous, const EncodedSource& source);

  // Teacher-forced per-token negative log-likelihood, (target_len * batch, 1)
  // time-major, and the matching 0/1 mask.
  struct TokenScores {
    Var nll;
    Tensor<T> mask;
    std::size_t batch = 0;
    std::size_t length = 0;
  };
  TokenScores token_nll(const std::vector<TokenIds>& sources, const std::vector<TokenIds>& targets);
  // Sum of masked token NLL; `tokens` receives the number of target tokens.
  Var loss(const std::vector<TokenIds>& sources, const std::vector<TokenIds>& targets, std::size_t* tokens = nullptr);

 private:
  struct Projected {
    Var z, r, c;
  };
  Var param(const std::string& name);
  Projected project(const std::string& cell, Var x);
  Var gru(const std::string& cell, const Projected& x, Var h, const Tensor<T>* state_mask);
  Var ln(const std::string& cell, const std::string& gate, Var pre);
  Tensor<T> sequence_mask(std::size_t batch, std::size_t dim);
  Tensor<T> tile(const Tensor<T>& mask, std::size_t times);
  TokenId word_dropout(TokenId id, double rate);
  bool training() const { return mode_ == Mode::kTrain; }

  Graph<T>& graph_;
  ParameterSet<T>& params_;
  ModelConfig config_;
  Mode mode_;
  CounterRng* rng_;
  std::map<std::string, Var> bound_;
};

// Annotation matrix (T, 2 * rnn_dim) for one source sentence.
template <typename T>
Tensor<T> encode(const ParameterSet<T>& params, const ModelConfig& config, std::span<const TokenId> source);

template <typename T>
struct Attention {
  Tensor<T> context;  // (1, 2 * rnn_dim)
  Tensor<T> weights;  // (1, T)
};

template <typename T>
Attention<T> attend(const ParameterSet<T>& params, const ModelConfig& config, const Tensor<T>& state,
                    const Tensor<T>& annotations);

// Decoder state before the first step.
template <typename T>
Tensor<T> initial_state(const ParameterSet<T>& params, const ModelConfig& config, const Tensor<T>& annotations);

template <typename T>
struct DecodeStep {
  Tensor<T> state;      // (1, rnn_dim)
  Tensor<T> log_probs;  // (1, vocab)
};

template <typename T>
DecodeStep<T> decode_step(const ParameterSet<T>& params, const ModelConfig& config, const Tensor<T>& state,
                          TokenId previous, const Tensor<T>& annotations);

// log p(target_i | target_<i, source) for every target position.
template <typename T>
std::vector<T> sequence_logprob(const ParameterSet<T>& params, const ModelConfig& config,
                                std::span<const TokenId> source, std::span<const TokenId> target);

}  // namespace nmt
