#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nmt/model.h"
#include "nmt/tensor.h"
#include "nmt/types.h"

namespace nmt {

using TensorMap = std::map<std::string, Tensor<float>>;

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; 0 disables clipping
};

template <typename T>
struct BasicAdamState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  std::uint64_t t = 0;
};
using AdamState = BasicAdamState<float>;

// One Adam update with bias correction after global-norm clipping. Throws
// NonFiniteError, leaving parameters and state untouched, if any gradient
// entry is NaN or infinite. Returns the gradient norm before clipping.
template <typename T>
double adam_step(ParameterSet<T>& params, const std::map<std::string, Tensor<T>>& grads, BasicAdamState<T>& state,
                 const AdamConfig& config);

struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;  // indices into the example list
  std::vector<std::size_t> oversize;              // examples alone in a batch because they exceed the budget
};

// Shuffles by seed, sorts each bucket of `bucket_size` examples by target
// length and fills batches greedily while (longest target) * (batch size)
// stays within the budget. Batch order is shuffled as well.
BatchPlan make_batches(const std::vector<std::size_t>& target_lengths, std::size_t token_budget, std::uint64_t seed,
                       std::size_t bucket_size = 1024);

struct EarlyStopState {
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t failures = 0;
  std::size_t patience = 5;
};

// Strict improvement resets the failure count; anything else (ties
// included) is a failure. Returns true when failures reach the patience.
bool update_early_stop(EarlyStopState& state, double score);

// shadow = (1 - decay) * shadow + decay * params
void smooth_update(ParameterSet<float>& shadow, const ParameterSet<float>& params, double decay);

// Tensor file: "NMTCKPT1", then per tensor (sorted by name) the name length,
// name bytes, rank and dims as little-endian 64-bit integers, followed by the
// values as little-endian 32-bit floats.
void save_tensors(const TensorMap& tensors, const std::filesystem::path& path);
TensorMap load_tensors(const std::filesystem::path& path);

std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

// Parameters plus a `<path>.json` sidecar with the model configuration.
void save_model(const ParameterSet<float>& params, const ModelConfig& config, const std::filesystem::path& path);
struct LoadedModel {
  ParameterSet<float> params;
  ModelConfig config;
};
LoadedModel load_model(const std::filesystem::path& path);

struct TrainingPair {
  TokenIds source;  // flag first
  TokenIds target;  // ends with </s>
};

struct TrainConfig {
  std::size_t token_budget = 4096;
  std::size_t max_steps = 100000;
  std::size_t validation_every = 2500;
  std::size_t patience = 5;
  AdamConfig adam;
  double smoothing = 1e-4;
  std::uint64_t seed = 1;
  std::size_t bucket_size = 1024;
  // Written when non-empty: best.ckpt, last.ckpt, train.log.tsv. An existing
  // last.ckpt there is resumed.
  std::filesystem::path output_dir;
  bool verbose = false;
};

struct LogRow {
  std::size_t step = 0;
  double loss = 0;  // mean per-token cross-entropy since the previous row
  std::optional<double> score;
  std::size_t failures = 0;
};

struct TrainResult {
  ParameterSet<float> best;  // smoothed parameters with the best validation score
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t steps = 0;
  bool early_stopped = false;
  std::vector<LogRow> log;
};

using Validator = std::function<double(const ParameterSet<float>&)>;

// Per batch: mean cross-entropy, backward, clipped Adam step and smoothing.
// Every validation_every steps the smoothed parameters are scored; training
// stops after `patience` validations without improvement or at max_steps.
// Without a validator the final smoothed parameters are returned.
TrainResult train_loop(const ModelConfig& model_config, const TrainConfig& config,
                       const std::vector<TrainingPair>& data, const Validator& validator = nullptr,
                       const ParameterSet<float>* initial = nullptr);

// Mean per-token cross-entropy of `data` with dropout disabled.
double mean_cross_entropy(const ParameterSet<float>& params, const ModelConfig& config,
                          const std::vector<TrainingPair>& data, std::size_t batch = 32);

}  // namespace nmt
