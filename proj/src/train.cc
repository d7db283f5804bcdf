#include "nmt/train.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "nmt/error.h"
#include "nmt/graph.h"
#include "nmt/rng.h"

namespace nmt {

namespace {

constexpr char kMagic[8] = {'N', 'M', 'T', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

bool get_u64(std::istream& in, std::uint64_t& v) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return true;
}

void put_f32(std::ostream& out, float f) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(buf, 4);
}

}  // namespace

template <typename T>
double adam_step(ParameterSet<T>& params, const std::map<std::string, Tensor<T>>& grads, BasicAdamState<T>& state,
                 const AdamConfig& config) {
  double sq = 0;
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ConfigError("gradient for unknown parameter '" + name + "'");
    if (g.shape() != params.at(name).shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    if (!g.all_finite()) throw NonFiniteError("non-finite gradient for '" + name + "'");
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NonFiniteError("gradient norm overflow");
  const double clip = config.clip_norm > 0 && norm > config.clip_norm ? config.clip_norm / norm : 1.0;

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor<T>& p = params.at(name);
    auto mit = state.m.try_emplace(name, p.shape()).first;
    auto vit = state.v.try_emplace(name, p.shape()).first;
    T* m = mit->second.data();
    T* v = vit->second.data();
    T* w = p.data();
    const T* gd = g.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(gd[i]) * clip;
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(w[i] - config.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config.epsilon));
    }
  }
  return norm;
}

template double adam_step(ParameterSet<float>&, const std::map<std::string, Tensor<float>>&, BasicAdamState<float>&,
                          const AdamConfig&);
template double adam_step(ParameterSet<double>&, const std::map<std::string, Tensor<double>>&,
                          BasicAdamState<double>&, const AdamConfig&);

BatchPlan make_batches(const std::vector<std::size_t>& target_lengths, std::size_t token_budget, std::uint64_t seed,
                       std::size_t bucket_size) {
  if (token_budget == 0) throw ConfigError("token budget must be at least 1");
  if (bucket_size == 0) throw ConfigError("bucket size must be at least 1");
  CounterRng rng(seed);
  std::vector<std::size_t> order(target_lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  BatchPlan plan;
  for (std::size_t start = 0; start < order.size(); start += bucket_size) {
    auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
    auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bucket_size));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return target_lengths[a] < target_lengths[b]; });
    std::vector<std::size_t> current;
    std::size_t longest = 0;
    for (auto it = first; it != last; ++it) {
      const std::size_t len = target_lengths[*it];
      const std::size_t next_longest = std::max(longest, len);
      if (!current.empty() && next_longest * (current.size() + 1) > token_budget) {
        plan.batches.push_back(std::move(current));
        current.clear();
        longest = 0;
      }
      if (len > token_budget) {
        std::clog << "warning: example " << *it << " has " << len << " target tokens, more than the budget of "
                  << token_budget << "; it gets a batch of its own\n";
        plan.oversize.push_back(*it);
        if (!current.empty()) plan.batches.push_back(std::move(current));
        plan.batches.push_back({*it});
        current.clear();
        longest = 0;
        continue;
      }
      current.push_back(*it);
      longest = std::max(longest, len);
    }
    if (!current.empty()) plan.batches.push_back(std::move(current));
  }
  rng.shuffle(plan.batches);
  return plan;
}

bool update_early_stop(EarlyStopState& state, double score) {
  if (score > state.best_score) {
    state.best_score = score;
    state.failures = 0;
  } else {
    state.failures = std::min(state.failures + 1, state.patience);
  }
  return state.failures >= state.patience;
}

void smooth_update(ParameterSet<float>& shadow, const ParameterSet<float>& params, double decay) {
  const float d = static_cast<float>(decay);
  for (auto& [name, s] : shadow) {
    const Tensor<float>& p = params.at(name);
    if (decay == 1.0) {
      s = p;
      continue;
    }
    float* sd = s.data();
    const float* pd = p.data();
    for (std::size_t i = 0; i < s.size(); ++i) sd[i] = (1.0f - d) * sd[i] + d * pd[i];
  }
}

void save_tensors(const TensorMap& tensors, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(tmp.string(), "cannot open for writing");
    out.write(kMagic, sizeof kMagic);
    for (const auto& [name, t] : tensors) {
      put_u64(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u64(out, t.shape().size());
      for (std::size_t d : t.shape()) put_u64(out, d);
      for (float v : t.values()) put_f32(out, v);
    }
    if (!out) throw IoError(tmp.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string(), "cannot move checkpoint into place: " + ec.message());
}

TensorMap load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError(path.string(), 1, "not a checkpoint (bad magic)");
  TensorMap out;
  std::uint64_t name_len = 0;
  while (get_u64(in, name_len)) {
    if (name_len > 4096) throw ParseError(path.string(), 1, "corrupt tensor name length");
    std::string name(name_len, '\0');
    std::uint64_t rank = 0;
    if (!in.read(name.data(), static_cast<std::streamsize>(name_len)) || !get_u64(in, rank) || rank > 8)
      throw ParseError(path.string(), 1, "truncated tensor header");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!get_u64(in, v)) throw ParseError(path.string(), 1, "truncated tensor header for '" + name + "'");
      d = v;
    }
    const std::size_t n = shape_size(shape);
    std::vector<unsigned char> bytes(n * 4);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
      throw ParseError(path.string(), 1, "truncated data for tensor '" + name + "'");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
      data[i] = std::bit_cast<float>(bits);
    }
    if (!out.emplace(name, Tensor<float>(shape, std::move(data))).second)
      throw ParseError(path.string(), 1, "duplicate tensor '" + name + "'");
  }
  return out;
}

std::string model_config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["emb_dim"] = c.emb_dim;
  j["rnn_dim"] = c.rnn_dim;
  j["att_dim"] = c.att_dim;
  j["vocab_size"] = c.vocab_size;
  j["rnn_dropout"] = c.rnn_dropout;
  j["word_dropout_src"] = c.word_dropout_src;
  j["word_dropout_tgt"] = c.word_dropout_tgt;
  j["layer_norm"] = c.layer_norm;
  j["layers"] = c.layers;
  return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.emb_dim = j.value("emb_dim", c.emb_dim);
    c.rnn_dim = j.value("rnn_dim", c.rnn_dim);
    c.att_dim = j.value("att_dim", c.att_dim);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.rnn_dropout = j.value("rnn_dropout", c.rnn_dropout);
    c.word_dropout_src = j.value("word_dropout_src", c.word_dropout_src);
    c.word_dropout_tgt = j.value("word_dropout_tgt", c.word_dropout_tgt);
    c.layer_norm = j.value("layer_norm", c.layer_norm);
    c.layers = j.value("layers", c.layers);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model configuration: ") + e.what());
  }
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string(), "write failed");
}

std::filesystem::path sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

TensorMap to_map(const ParameterSet<float>& params, const std::string& prefix = "") {
  TensorMap out;
  for (const auto& [name, t] : params) out.emplace(prefix + name, t);
  return out;
}

ParameterSet<float> from_map(const TensorMap& tensors, const std::string& prefix = "") {
  ParameterSet<float> out;
  for (const auto& [name, t] : tensors)
    if (name.rfind(prefix, 0) == 0) out.insert(name.substr(prefix.size()), t);
  return out;
}

void check_shapes(const ParameterSet<float>& params, const ModelConfig& config, const std::string& source) {
  for (const ParameterSpec& spec : parameter_specs(config)) {
    if (!params.contains(spec.name)) throw ParseError(source, 1, "missing parameter '" + spec.name + "'");
    if (params.at(spec.name).shape() != spec.shape)
      throw ParseError(source, 1, "parameter '" + spec.name + "' has shape " + shape_string(params.at(spec.name).shape()) +
                                      ", expected " + shape_string(spec.shape));
  }
  if (params.size() != parameter_specs(config).size()) throw ParseError(source, 1, "unexpected extra parameters");
}

}  // namespace

void save_model(const ParameterSet<float>& params, const ModelConfig& config, const std::filesystem::path& path) {
  save_tensors(to_map(params), path);
  write_file(sidecar(path), model_config_json(config));
}

LoadedModel load_model(const std::filesystem::path& path) {
  LoadedModel m;
  m.config = model_config_from_json(read_file(sidecar(path)));
  m.params = from_map(load_tensors(path));
  check_shapes(m.params, m.config, path.string());
  return m;
}

namespace {

struct Snapshot {
  std::size_t step = 0;
  EarlyStopState early;
  std::vector<LogRow> log;
  std::uint64_t adam_t = 0;
};

nlohmann::json log_json(const std::vector<LogRow>& log) {
  nlohmann::json rows = nlohmann::json::array();
  for (const LogRow& r : log) {
    nlohmann::json row{{"step", r.step}, {"loss", r.loss}, {"failures", r.failures}};
    row["score"] = r.score ? nlohmann::json(*r.score) : nlohmann::json(nullptr);
    rows.push_back(row);
  }
  return rows;
}

void write_log(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  std::ostringstream out;
  out << "step\tloss\tbleu\tfailures\n";
  for (const LogRow& r : log) {
    out << r.step << '\t' << r.loss << '\t';
    if (r.score) out << *r.score;
    else out << '-';
    out << '\t' << r.failures << '\n';
  }
  write_file(path, out.str());
}

void save_snapshot(const std::filesystem::path& dir, const ModelConfig& model_config, const TrainConfig& config,
                   const ParameterSet<float>& params, const ParameterSet<float>& shadow, const AdamState& adam,
                   const Snapshot& snap) {
  TensorMap all = to_map(params, "param/");
  all.merge(to_map(shadow, "smooth/"));
  for (const auto& [name, t] : adam.m) all.emplace("adam_m/" + name, t);
  for (const auto& [name, t] : adam.v) all.emplace("adam_v/" + name, t);
  save_tensors(all, dir / "last.ckpt");
  nlohmann::ordered_json j;
  j["model"] = nlohmann::json::parse(model_config_json(model_config));
  j["seed"] = config.seed;
  j["step"] = snap.step;
  j["adam_t"] = snap.adam_t;
  j["best_score"] = std::isfinite(snap.early.best_score) ? nlohmann::json(snap.early.best_score) : nlohmann::json(nullptr);
  j["failures"] = snap.early.failures;
  j["log"] = log_json(snap.log);
  write_file(sidecar(dir / "last.ckpt"), j.dump(2) + "\n");
  write_log(dir / "train.log.tsv", snap.log);
}

bool load_snapshot(const std::filesystem::path& dir, const ModelConfig& model_config, ParameterSet<float>& params,
                   ParameterSet<float>& shadow, AdamState& adam, Snapshot& snap) {
  const auto path = dir / "last.ckpt";
  if (!std::filesystem::exists(path)) return false;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(sidecar(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(sidecar(path).string(), 1, e.what());
  }
  if (model_config_from_json(j.at("model").dump()) != model_config)
    throw ConfigError(path.string() + ": checkpoint was trained with a different model configuration");
  TensorMap all = load_tensors(path);
  params = from_map(all, "param/");
  shadow = from_map(all, "smooth/");
  check_shapes(params, model_config, path.string());
  check_shapes(shadow, model_config, path.string());
  adam.m.clear();
  adam.v.clear();
  for (auto& [name, t] : from_map(all, "adam_m/")) adam.m.emplace(name, t);
  for (auto& [name, t] : from_map(all, "adam_v/")) adam.v.emplace(name, t);
  snap.step = j.at("step").get<std::size_t>();
  snap.adam_t = adam.t = j.at("adam_t").get<std::uint64_t>();
  if (!j.at("best_score").is_null()) snap.early.best_score = j.at("best_score").get<double>();
  snap.early.failures = j.at("failures").get<std::size_t>();
  for (const auto& row : j.at("log")) {
    LogRow r;
    r.step = row.at("step").get<std::size_t>();
    r.loss = row.at("loss").get<double>();
    r.failures = row.at("failures").get<std::size_t>();
    if (!row.at("score").is_null()) r.score = row.at("score").get<double>();
    snap.log.push_back(r);
  }
  return true;
}

}  // namespace

TrainResult train_loop(const ModelConfig& model_config, const TrainConfig& config,
                       const std::vector<TrainingPair>& data, const Validator& validator,
                       const ParameterSet<float>* initial) {
  model_config.validate();
  if (data.empty()) throw DomainError("no training data");
  if (config.validation_every == 0) throw ConfigError("validation_every must be at least 1");
  if (!(config.smoothing > 0.0 && config.smoothing <= 1.0)) throw ConfigError("smoothing decay must be in (0, 1]");
  for (const TrainingPair& p : data) {
    if (p.source.empty() || p.target.empty() || p.target.back() != kEosId)
      throw DomainError("training pair with empty source or target without </s>");
    for (TokenId id : p.source)
      if (id < 0 || static_cast<std::size_t>(id) >= model_config.vocab_size) throw DomainError("source id out of range");
    for (TokenId id : p.target)
      if (id < 0 || static_cast<std::size_t>(id) >= model_config.vocab_size) throw DomainError("target id out of range");
  }

  ParameterSet<float> params = initial ? *initial : init_parameters(model_config, config.seed);
  ParameterSet<float> shadow = params;
  AdamState adam;
  Snapshot snap;
  snap.early.patience = config.patience;
  const bool persist = !config.output_dir.empty();
  if (persist) {
    std::error_code ec;
    std::filesystem::create_directories(config.output_dir, ec);
    if (ec) throw IoError(config.output_dir.string(), "cannot create directory: " + ec.message());
    if (load_snapshot(config.output_dir, model_config, params, shadow, adam, snap) && config.verbose)
      std::clog << "resuming from " << (config.output_dir / "last.ckpt").string() << " at step " << snap.step << "\n";
  }

  TrainResult result;
  result.best = shadow;
  if (persist && std::filesystem::exists(config.output_dir / "best.ckpt") && snap.step > 0)
    result.best = load_model(config.output_dir / "best.ckpt").params;
  result.best_score = snap.early.best_score;

  std::vector<std::size_t> lengths;
  for (const TrainingPair& p : data) lengths.push_back(p.target.size());
  const CounterRng root(config.seed);
  const CounterRng batch_root = root.split(1);
  const CounterRng dropout_root = root.split(2);

  // Position in the epoch sequence implied by the step count.
  std::size_t epoch = 0, index = 0;
  BatchPlan plan = make_batches(lengths, config.token_budget, batch_root.split(0).seed(), config.bucket_size);
  for (std::size_t s = 0; s < snap.step; ++s) {
    if (++index == plan.batches.size()) {
      index = 0;
      plan = make_batches(lengths, config.token_budget, batch_root.split(++epoch).seed(), config.bucket_size);
    }
  }

  double loss_sum = 0;
  std::size_t loss_tokens = 0;
  bool stop = snap.early.failures >= snap.early.patience;
  std::size_t last_validated = snap.log.empty() ? 0 : snap.log.back().step;
  auto checkpoint = [&](bool validate) {
    LogRow row{snap.step, loss_tokens ? loss_sum / static_cast<double>(loss_tokens) : 0.0, std::nullopt, 0};
    if (validate && validator) {
      const double score = validator(shadow);
      const bool improved = score > snap.early.best_score;
      stop = update_early_stop(snap.early, score);
      row.score = score;
      if (improved) {
        result.best = shadow;
        result.best_score = score;
        if (persist) save_model(shadow, model_config, config.output_dir / "best.ckpt");
      }
    }
    row.failures = snap.early.failures;
    snap.log.push_back(row);
    last_validated = snap.step;
    if (config.verbose) {
      std::clog << "step " << row.step << " loss " << row.loss;
      if (row.score) std::clog << " score " << *row.score << " failures " << row.failures;
      std::clog << "\n";
    }
    loss_sum = 0;
    loss_tokens = 0;
    snap.adam_t = adam.t;
    if (persist) save_snapshot(config.output_dir, model_config, config, params, shadow, adam, snap);
  };

  while (!stop && snap.step < config.max_steps) {
    const auto& batch = plan.batches[index];
    std::vector<TokenIds> src, tgt;
    for (std::size_t i : batch) {
      src.push_back(data[i].source);
      tgt.push_back(data[i].target);
    }
    CounterRng rng = dropout_root.split(snap.step);
    Graph<float> graph(true);
    Seq2Seq<float> model(graph, params, model_config, Mode::kTrain, &rng);
    std::size_t tokens = 0;
    Var total = model.loss(src, tgt, &tokens);
    Var mean = graph.scale(total, 1.0f / static_cast<float>(tokens));
    const double value = static_cast<double>(graph.value(total)[0]);
    if (!std::isfinite(value)) throw NonFiniteError("non-finite loss at step " + std::to_string(snap.step + 1));
    adam_step(params, gradients(graph, mean), adam, config.adam);
    smooth_update(shadow, params, config.smoothing);
    loss_sum += value;
    loss_tokens += tokens;
    ++snap.step;
    if (++index == plan.batches.size()) {
      index = 0;
      plan = make_batches(lengths, config.token_budget, batch_root.split(++epoch).seed(), config.bucket_size);
    }
    if (snap.step % config.validation_every == 0) checkpoint(true);
  }
  if (snap.step != last_validated) checkpoint(true);
  if (!validator) {
    result.best = shadow;
    if (persist) save_model(shadow, model_config, config.output_dir / "best.ckpt");
  }
  result.steps = snap.step;
  result.early_stopped = stop;
  result.log = snap.log;
  return result;
}

double mean_cross_entropy(const ParameterSet<float>& params, const ModelConfig& config,
                          const std::vector<TrainingPair>& data, std::size_t batch) {
  if (data.empty()) throw DomainError("no data to score");
  double nll = 0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<TokenIds> src, tgt;
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) {
      src.push_back(data[i].source);
      tgt.push_back(data[i].target);
    }
    Graph<float> g(false);
    Seq2Seq<float> model(g, const_cast<ParameterSet<float>&>(params), config);
    std::size_t n = 0;
    nll += static_cast<double>(g.value(model.loss(src, tgt, &n))[0]);
    tokens += n;
  }
  return nll / static_cast<double>(tokens);
}

}  // namespace nmt
