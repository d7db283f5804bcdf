#include "nmt/model.h"

#include <algorithm>
#include <cmath>

namespace nmt {

namespace {

constexpr double kMaskedScore = -1e9;

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void add_gru_specs(std::vector<ParameterSpec>& out, const std::string& cell, std::size_t input, std::size_t hidden,
                   bool layer_norm) {
  for (const char* gate : {"z", "r", "c"}) {
    out.push_back({cell + ".W_" + gate, {input, hidden}, ParameterRole::kWeight});
    out.push_back({cell + ".U_" + gate, {hidden, hidden}, ParameterRole::kWeight});
    out.push_back({cell + ".b_" + gate, {1, hidden}, ParameterRole::kBias});
    if (layer_norm) {
      out.push_back({cell + ".ln_" + gate + ".gain", {1, hidden}, ParameterRole::kGain});
      out.push_back({cell + ".ln_" + gate + ".bias", {1, hidden}, ParameterRole::kBias});
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (emb_dim == 0 || rnn_dim == 0 || vocab_size == 0) throw ConfigError("model dimensions must be positive");
  for (double rate : {rnn_dropout, word_dropout_src, word_dropout_tgt}) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rates must be in [0, 1)");
  }
  if (layers != 1) throw ConfigError("only single-layer encoder and decoder are supported");
}

template <typename T>
Tensor<T>& ParameterSet<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParameterSet<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

template <typename T>
bool ParameterSet<T>::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(), [](const auto& kv) { return kv.second.all_finite(); });
}

template class ParameterSet<float>;
template class ParameterSet<double>;

std::vector<ParameterSpec> parameter_specs(const ModelConfig& config) {
  config.validate();
  const std::size_t E = config.emb_dim, H = config.rnn_dim, A = config.attention_dim(), V = config.vocab_size;
  std::vector<ParameterSpec> out;
  out.push_back({"src_emb", {V, E}, ParameterRole::kWeight});
  out.push_back({"tgt_emb", {V, E}, ParameterRole::kWeight});
  add_gru_specs(out, "enc_fwd", E, H, config.layer_norm);
  add_gru_specs(out, "enc_bwd", E, H, config.layer_norm);
  add_gru_specs(out, "dec_gru1", E, H, config.layer_norm);
  add_gru_specs(out, "dec_gru2", 2 * H, H, config.layer_norm);
  out.push_back({"att.W", {2 * H, A}, ParameterRole::kWeight});
  out.push_back({"att.b", {1, A}, ParameterRole::kBias});
  out.push_back({"att.U", {H, A}, ParameterRole::kWeight});
  out.push_back({"att.v", {A, 1}, ParameterRole::kWeight});
  out.push_back({"init.W", {2 * H, H}, ParameterRole::kWeight});
  out.push_back({"init.b", {1, H}, ParameterRole::kBias});
  out.push_back({"readout.W_y", {E, E}, ParameterRole::kWeight});
  out.push_back({"readout.W_s", {H, E}, ParameterRole::kWeight});
  out.push_back({"readout.W_c", {2 * H, E}, ParameterRole::kWeight});
  out.push_back({"readout.b", {1, E}, ParameterRole::kBias});
  out.push_back({"logit.W", {E, V}, ParameterRole::kWeight});
  out.push_back({"logit.b", {1, V}, ParameterRole::kBias});
  return out;
}

ParameterSet<float> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet<float> params;
  const CounterRng root(seed);
  for (const ParameterSpec& spec : parameter_specs(config)) {
    Tensor<float> t(spec.shape);
    switch (spec.role) {
      case ParameterRole::kBias:
        break;
      case ParameterRole::kGain:
        t.fill(1.0f);
        break;
      case ParameterRole::kWeight: {
        CounterRng rng = root.split(name_hash(spec.name));
        const double bound = std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
        for (float& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
    }
    params.insert(spec.name, std::move(t));
  }
  return params;
}

template <typename T>
Seq2Seq<T>::Seq2Seq(Graph<T>& graph, ParameterSet<T>& params, const ModelConfig& config, Mode mode, CounterRng* rng)
    : graph_(graph), params_(params), config_(config), mode_(mode), rng_(rng) {
  config_.validate();
  if (mode_ == Mode::kTrain && rng_ == nullptr) throw ConfigError("training mode needs a random generator");
}

template <typename T>
Var Seq2Seq<T>::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = graph_.parameter(name, params_.at(name));
  bound_.emplace(name, v);
  return v;
}

template <typename T>
typename Seq2Seq<T>::Projected Seq2Seq<T>::project(const std::string& cell, Var x) {
  auto one = [&](const char* gate) {
    const std::string g(gate);
    return graph_.add(graph_.matmul(x, param(cell + ".W_" + g)), param(cell + ".b_" + g));
  };
  return {one("z"), one("r"), one("c")};
}

template <typename T>
Var Seq2Seq<T>::ln(const std::string& cell, const std::string& gate, Var pre) {
  if (!config_.layer_norm) return pre;
  const std::string p = cell + ".ln_" + gate;
  return graph_.layer_norm(pre, param(p + ".gain"), param(p + ".bias"));
}

template <typename T>
Var Seq2Seq<T>::gru(const std::string& cell, const Projected& x, Var h, const Tensor<T>* state_mask) {
  Var hd = state_mask ? graph_.dropout(h, *state_mask) : h;
  Var z = graph_.sigmoid(ln(cell, "z", graph_.add(x.z, graph_.matmul(hd, param(cell + ".U_z")))));
  Var r = graph_.sigmoid(ln(cell, "r", graph_.add(x.r, graph_.matmul(hd, param(cell + ".U_r")))));
  Var c = graph_.tanh(
      ln(cell, "c", graph_.add(x.c, graph_.matmul(graph_.multiply(r, hd), param(cell + ".U_c")))));
  return graph_.add(h, graph_.multiply(z, graph_.sub(c, h)));
}

template <typename T>
Tensor<T> Seq2Seq<T>::sequence_mask(std::size_t batch, std::size_t dim) {
  return make_dropout_mask<T>({batch, dim}, config_.rnn_dropout, *rng_);
}

template <typename T>
Tensor<T> Seq2Seq<T>::tile(const Tensor<T>& mask, std::size_t times) {
  Tensor<T> out({mask.rows() * times, mask.cols()});
  for (std::size_t t = 0; t < times; ++t) std::copy(mask.values().begin(), mask.values().end(), out.data() + t * mask.size());
  return out;
}

template <typename T>
TokenId Seq2Seq<T>::word_dropout(TokenId id, double rate) {
  if (!training() || rate <= 0.0 || id == kPadId) return id;
  return rng_->uniform() < rate ? kUnkId : id;
}

template <typename T>
EncodedSource Seq2Seq<T>::encode(const std::vector<TokenIds>& sources) {
  const std::size_t B = sources.size();
  if (B == 0) throw ShapeError("encode: empty batch");
  std::size_t T_len = 0;
  for (const auto& s : sources) {
    if (s.empty()) throw ShapeError("encode: empty source sequence");
    T_len = std::max(T_len, s.size());
  }
  const std::size_t E = config_.emb_dim, H = config_.rnn_dim;
  const bool rnn_drop = training() && config_.rnn_dropout > 0.0;

  // Time-major ids; the flag in position 0 is never dropped.
  std::vector<TokenId> ids(T_len * B, kPadId);
  Tensor<T> step_mask({T_len * B, 1});
  std::vector<bool> full(T_len, true);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T_len; ++t) {
      if (t < sources[b].size()) {
        ids[t * B + b] = t == 0 ? sources[b][t] : word_dropout(sources[b][t], config_.word_dropout_src);
        step_mask[t * B + b] = T(1);
      } else {
        full[t] = false;
      }
    }
  }
  Var emb = graph_.embedding_lookup(param("src_emb"), ids);

  auto run = [&](const std::string& cell, bool reverse) {
    Var x = emb;
    Tensor<T> state_mask;
    if (rnn_drop) {
      x = graph_.dropout(x, tile(sequence_mask(B, E), T_len));
      state_mask = sequence_mask(B, H);
    }
    Projected proj = project(cell, x);
    Var h = graph_.constant(Tensor<T>({B, H}));
    std::vector<Var> states(T_len);
    for (std::size_t k = 0; k < T_len; ++k) {
      const std::size_t t = reverse ? T_len - 1 - k : k;
      Projected xt{graph_.slice(proj.z, Axis::kRows, t * B, (t + 1) * B),
                   graph_.slice(proj.r, Axis::kRows, t * B, (t + 1) * B),
                   graph_.slice(proj.c, Axis::kRows, t * B, (t + 1) * B)};
      Var next = gru(cell, xt, h, rnn_drop ? &state_mask : nullptr);
      if (!full[t]) {
        Tensor<T> m({B, 1});
        std::copy_n(step_mask.data() + t * B, B, m.data());
        next = graph_.add(h, graph_.multiply(graph_.sub(next, h), graph_.constant(std::move(m))));
      }
      states[t] = h = next;
    }
    return states;
  };
  std::vector<Var> fwd = run("enc_fwd", false);
  std::vector<Var> bwd = run("enc_bwd", true);

  std::vector<Var> per_step(T_len);
  for (std::size_t t = 0; t < T_len; ++t) per_step[t] = graph_.concat({fwd[t], bwd[t]}, Axis::kCols);
  Var time_major = graph_.concat(std::span<const Var>(per_step), Axis::kRows);
  Var annotations = time_major;
  if (B > 1) {
    std::vector<std::size_t> order(T_len * B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T_len; ++t) order[b * T_len + t] = t * B + b;
    annotations = graph_.gather_rows(time_major, std::move(order));
  }

  EncodedSource out;
  out.batch = B;
  out.length = T_len;
  out.annotations = annotations;
  out.keys = graph_.add(graph_.matmul(annotations, param("att.W")), param("att.b"));
  Tensor<T> score_mask({B, T_len});
  Tensor<T> mean_weights({B, T_len});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T_len; ++t) {
      const bool real = t < sources[b].size();
      score_mask(b, t) = real ? T(0) : T(kMaskedScore);
      mean_weights(b, t) = real ? T(1) / T(sources[b].size()) : T(0);
    }
  }
  out.score_mask = graph_.constant(std::move(score_mask));
  out.init_state = initial_state(annotations, B, T_len, mean_weights);
  return out;
}

template <typename T>
Var Seq2Seq<T>::initial_state(Var annotations, std::size_t batch, std::size_t /*length*/,
                              const Tensor<T>& mean_weights) {
  Var mean = graph_.batch_matmul(graph_.constant(mean_weights), annotations, batch);
  return graph_.tanh(graph_.add(graph_.matmul(mean, param("init.W")), param("init.b")));
}

template <typename T>
EncodedSource Seq2Seq<T>::bind(const Tensor<T>& annotations, const Tensor<T>& keys, std::size_t batch) {
  const std::size_t T_len = annotations.rows();
  auto replicate = [&](const Tensor<T>& t) {
    if (batch == 1) return t;
    Tensor<T> out({t.rows() * batch, t.cols()});
    for (std::size_t b = 0; b < batch; ++b) std::copy(t.values().begin(), t.values().end(), out.data() + b * t.size());
    return out;
  };
  EncodedSource out;
  out.batch = batch;
  out.length = T_len;
  out.annotations = graph_.constant(replicate(annotations));
  out.keys = graph_.constant(replicate(keys));
  out.score_mask = graph_.constant(Tensor<T>({batch, T_len}));
  return out;
}

template <typename T>
std::pair<Var, Var> Seq2Seq<T>::attend(Var query, const EncodedSource& source) {
  Var energy = graph_.tanh(graph_.add(source.keys, graph_.matmul(query, param("att.U"))));
  Var scores = graph_.reshape(graph_.matmul(energy, param("att.v")), {source.batch, source.length});
  Var weights = graph_.softmax(graph_.add(scores, source.score_mask));
  Var context = graph_.batch_matmul(weights, source.annotations, source.batch);
  return {context, weights};
}

template <typename T>
DecoderOutput Seq2Seq<T>::step(Var state, std::span<const TokenId> previous, const EncodedSource& source) {
  if (previous.size() != source.batch) throw ShapeError("decoder step: token count does not match batch");
  Var y = graph_.embedding_lookup(param("tgt_emb"), previous);
  Var s1 = gru("dec_gru1", project("dec_gru1", y), state, nullptr);
  auto [context, weights] = attend(s1, source);
  Var s2 = gru("dec_gru2", project("dec_gru2", context), s1, nullptr);
  Var readout = graph_.tanh(graph_.add(
      graph_.add(graph_.add(graph_.matmul(y, param("readout.W_y")), graph_.matmul(s2, param("readout.W_s"))),
                 graph_.matmul(context, param("readout.W_c"))),
      param("readout.b")));
  Var logits = graph_.add(graph_.matmul(readout, param("logit.W")), param("logit.b"));
  return {s2, logits, context, weights};
}

template <typename T>
typename Seq2Seq<T>::TokenScores Seq2Seq<T>::token_nll(const std::vector<TokenIds>& sources,
                                                       const std::vector<TokenIds>& targets) {
  if (sources.size() != targets.size()) throw ShapeError("token_nll: source and target batch sizes differ");
  EncodedSource enc = encode(sources);
  const std::size_t B = sources.size(), E = config_.emb_dim, H = config_.rnn_dim;
  std::size_t L = 0;
  for (const auto& t : targets) {
    if (t.empty()) throw ShapeError("token_nll: empty target sequence");
    L = std::max(L, t.size());
  }
  const bool rnn_drop = training() && config_.rnn_dropout > 0.0;

  std::vector<TokenId> previous(L * B, kPadId);
  std::vector<std::size_t> gold(L * B, 0);
  Tensor<T> mask({L * B, 1});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < targets[b].size(); ++j) {
      previous[j * B + b] = j == 0 ? kBosId : word_dropout(targets[b][j - 1], config_.word_dropout_tgt);
      gold[j * B + b] = static_cast<std::size_t>(targets[b][j]);
      mask[j * B + b] = T(1);
    }
  }

  Var y = graph_.embedding_lookup(param("tgt_emb"), previous);
  Tensor<T> mask1, mask2;
  if (rnn_drop) {
    y = graph_.dropout(y, tile(sequence_mask(B, E), L));
    mask1 = sequence_mask(B, H);
    mask2 = sequence_mask(B, H);
  }
  Projected proj = project("dec_gru1", y);
  Var y_out = graph_.matmul(y, param("readout.W_y"));

  Var state = enc.init_state;
  std::vector<Var> readouts(L);
  for (std::size_t j = 0; j < L; ++j) {
    auto rows = [&](Var v) { return graph_.slice(v, Axis::kRows, j * B, (j + 1) * B); };
    Var s1 = gru("dec_gru1", Projected{rows(proj.z), rows(proj.r), rows(proj.c)}, state, rnn_drop ? &mask1 : nullptr);
    auto [context, weights] = attend(s1, enc);
    Var s2 = gru("dec_gru2", project("dec_gru2", context), s1, rnn_drop ? &mask2 : nullptr);
    readouts[j] = graph_.tanh(graph_.add(
        graph_.add(graph_.add(rows(y_out), graph_.matmul(s2, param("readout.W_s"))),
                   graph_.matmul(context, param("readout.W_c"))),
        param("readout.b")));
    state = s2;
  }
  Var all = L == 1 ? readouts[0] : graph_.concat(std::span<const Var>(readouts), Axis::kRows);
  Var logits = graph_.add(graph_.matmul(all, param("logit.W")), param("logit.b"));
  Var nll = graph_.cross_entropy_with_logits(logits, std::move(gold));
  return TokenScores{nll, std::move(mask), B, L};
}

template <typename T>
Var Seq2Seq<T>::loss(const std::vector<TokenIds>& sources, const std::vector<TokenIds>& targets, std::size_t* tokens) {
  TokenScores scores = token_nll(sources, targets);
  if (tokens) {
    std::size_t n = 0;
    for (T m : scores.mask.values()) n += m != T(0);
    *tokens = n;
  }
  return graph_.sum(graph_.multiply(scores.nll, graph_.constant(std::move(scores.mask))));
}

template class Seq2Seq<float>;
template class Seq2Seq<double>;

// The Tensor-level entry points build evaluation-only graphs, which never
// write to bound parameters.
template <typename T>
static ParameterSet<T>& unconst(const ParameterSet<T>& params) {
  return const_cast<ParameterSet<T>&>(params);
}

template <typename T>
Tensor<T> encode(const ParameterSet<T>& params, const ModelConfig& config, std::span<const TokenId> source) {
  Graph<T> g(false);
  Seq2Seq<T> model(g, unconst(params), config);
  EncodedSource enc = model.encode({TokenIds(source.begin(), source.end())});
  return g.value(enc.annotations);
}

template <typename T>
Attention<T> attend(const ParameterSet<T>& params, const ModelConfig& config, const Tensor<T>& state,
                    const Tensor<T>& annotations) {
  if (annotations.rows() == 0) throw ShapeError("attend: no annotations");
  Graph<T> g(false);
  Seq2Seq<T> model(g, unconst(params), config);
  Tensor<T> keys = g.value(g.add(g.matmul(g.constant(annotations), g.parameter("att.W", unconst(params).at("att.W"))),
                                 g.parameter("att.b", unconst(params).at("att.b"))));
  EncodedSource src = model.bind(annotations, keys, 1);
  auto [context, weights] = model.attend(g.constant(state), src);
  return {g.value(context), g.value(weights)};
}

template <typename T>
Tensor<T> initial_state(const ParameterSet<T>& params, const ModelConfig& config, const Tensor<T>& annotations) {
  Graph<T> g(false);
  Seq2Seq<T> model(g, unconst(params), config);
  const std::size_t T_len = annotations.rows();
  Tensor<T> weights({1, T_len}, T(1) / T(T_len));
  return g.value(model.initial_state(g.constant(annotations), 1, T_len, weights));
}

template <typename T>
DecodeStep<T> decode_step(const ParameterSet<T>& params, const ModelConfig& config, const Tensor<T>& state,
                          TokenId previous, const Tensor<T>& annotations) {
  Graph<T> g(false);
  Seq2Seq<T> model(g, unconst(params), config);
  Var keys = g.add(g.matmul(g.constant(annotations), g.parameter("att.W", unconst(params).at("att.W"))),
                   g.parameter("att.b", unconst(params).at("att.b")));
  EncodedSource src = model.bind(annotations, g.value(keys), 1);
  const TokenId prev[1] = {previous};
  DecoderOutput out = model.step(g.constant(state), prev, src);
  return {g.value(out.state), g.value(g.log_softmax(out.logits))};
}

template <typename T>
std::vector<T> sequence_logprob(const ParameterSet<T>& params, const ModelConfig& config,
                                std::span<const TokenId> source, std::span<const TokenId> target) {
  Graph<T> g(false);
  Seq2Seq<T> model(g, unconst(params), config);
  auto scores = model.token_nll({TokenIds(source.begin(), source.end())}, {TokenIds(target.begin(), target.end())});
  const Tensor<T>& nll = g.value(scores.nll);
  std::vector<T> out(target.size());
  for (std::size_t j = 0; j < target.size(); ++j) out[j] = -nll[j];
  return out;
}

#define NMT_INSTANTIATE(T)                                                                                       \
  template Tensor<T> encode(const ParameterSet<T>&, const ModelConfig&, std::span<const TokenId>);               \
  template Attention<T> attend(const ParameterSet<T>&, const ModelConfig&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> initial_state(const ParameterSet<T>&, const ModelConfig&, const Tensor<T>&);                \
  template DecodeStep<T> decode_step(const ParameterSet<T>&, const ModelConfig&, const Tensor<T>&, TokenId,      \
                                     const Tensor<T>&);                                                          \
  template std::vector<T> sequence_logprob(const ParameterSet<T>&, const ModelConfig&, std::span<const TokenId>, \
                                           std::span<const TokenId>);
NMT_INSTANTIATE(float)
NMT_INSTANTIATE(double)
#undef NMT_INSTANTIATE

}  // namespace nmt
