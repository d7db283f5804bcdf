#include "experiment.h"

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "nmt/error.h"

namespace nmt::cli {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::uint64_t parse_seed(const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError("NMT_SEED is not an unsigned integer: '" + text + "'");
  return v;
}

void read_training(const json& j, TrainConfig& t) {
  check_keys(j, "training",
             {"token_budget", "max_steps", "validation_every", "patience", "learning_rate", "clip_norm", "smoothing",
              "bucket_size"});
  t.token_budget = j.value("token_budget", t.token_budget);
  t.max_steps = j.value("max_steps", t.max_steps);
  t.validation_every = j.value("validation_every", t.validation_every);
  t.patience = j.value("patience", t.patience);
  t.adam.learning_rate = j.value("learning_rate", t.adam.learning_rate);
  t.adam.clip_norm = j.value("clip_norm", t.adam.clip_norm);
  t.smoothing = j.value("smoothing", t.smoothing);
  t.bucket_size = j.value("bucket_size", t.bucket_size);
  if (t.token_budget == 0 || t.validation_every == 0 || t.patience == 0 || t.bucket_size == 0)
    throw ConfigError("training: budgets, intervals and patience must be positive");
  if (!(t.adam.learning_rate > 0)) throw ConfigError("training: learning_rate must be positive");
  if (!(t.smoothing > 0 && t.smoothing <= 1)) throw ConfigError("training: smoothing must be in (0, 1]");
}

ExperimentConfig parse(const json& j, const std::filesystem::path& base) {
  check_keys(j, "config",
             {"languages", "pivot", "hubs", "identity_language", "paraphrase", "split", "bpe", "validation", "model",
              "training", "seed", "output_dir"});
  ExperimentConfig c;
  c.pivot = j.value("pivot", c.pivot);
  if (!j.contains("languages") || !j["languages"].is_array() || j["languages"].empty())
    throw ConfigError("config: 'languages' must be a non-empty array");
  std::set<std::string> codes;
  for (const auto& lj : j["languages"]) {
    check_keys(lj, "languages[]", {"code", "translations"});
    LanguageFiles lang;
    lang.code = lj.at("code").get<std::string>();
    if (!is_valid_language_code(lang.code)) throw ConfigError("invalid language code '" + lang.code + "'");
    if (!codes.insert(lang.code).second) throw ConfigError("language '" + lang.code + "' listed twice");
    if (!lj.contains("translations") || !lj["translations"].is_array() || lj["translations"].empty())
      throw ConfigError("language '" + lang.code + "': 'translations' must be a non-empty array");
    for (const auto& tj : lj["translations"]) {
      check_keys(tj, "translations[]", {"id", "path"});
      TranslationFile f{tj.at("id").get<std::string>(), resolve(base, tj.at("path").get<std::string>())};
      if (!std::filesystem::exists(f.path)) throw IoError(f.path.string(), "corpus file does not exist");
      lang.translations.push_back(std::move(f));
    }
    c.languages.push_back(std::move(lang));
  }
  if (c.languages.front().code != c.pivot)
    throw ConfigError("the pivot language '" + c.pivot + "' must be listed first");

  auto known = [&](const std::string& code, const std::string& what) {
    if (!codes.count(code)) throw ConfigError(what + ": unknown language '" + code + "'");
  };
  c.hubs = j.value("hubs", c.hubs);
  for (const auto& h : c.hubs) known(h, "hubs");
  if (j.contains("identity_language") && !j["identity_language"].is_null()) {
    c.identity_language = j["identity_language"].get<std::string>();
    known(*c.identity_language, "identity_language");
  }
  c.paraphrase = j.value("paraphrase", c.paraphrase);

  if (j.contains("split")) {
    check_keys(j["split"], "split", {"dev", "test"});
    c.dev_fraction = j["split"].value("dev", c.dev_fraction);
    c.test_fraction = j["split"].value("test", c.test_fraction);
  }
  if (c.dev_fraction <= 0 || c.test_fraction < 0 || c.dev_fraction + c.test_fraction >= 1)
    throw ConfigError("split: need dev > 0, test >= 0 and dev + test < 1");
  if (j.contains("bpe")) {
    check_keys(j["bpe"], "bpe", {"merges"});
    c.bpe_merges = j["bpe"].value("merges", c.bpe_merges);
  }

  if (c.languages.size() < 2 && !c.paraphrase && !c.identity_language)
    throw ConfigError("config: a single language needs paraphrase or identity pairs");
  c.valid_source = c.pivot;
  c.valid_target = c.languages.size() > 1 ? c.languages[1].code : c.pivot;
  if (j.contains("validation")) {
    check_keys(j["validation"], "validation", {"source", "target", "beam"});
    c.valid_source = j["validation"].value("source", c.valid_source);
    c.valid_target = j["validation"].value("target", c.valid_target);
    c.valid_beam = j["validation"].value("beam", c.valid_beam);
  }
  known(c.valid_source, "validation.source");
  known(c.valid_target, "validation.target");
  if (c.valid_beam == 0) throw ConfigError("validation.beam must be positive");

  if (j.contains("model")) {
    check_keys(j["model"], "model",
               {"emb_dim", "rnn_dim", "att_dim", "rnn_dropout", "word_dropout_src", "word_dropout_tgt", "layer_norm",
                "layers"});
    // The vocabulary size comes from the prepared data.
    json m = j["model"];
    m["vocab_size"] = 1;
    c.model = model_config_from_json(m.dump());
    c.model.vocab_size = 0;
  }
  if (j.contains("training")) read_training(j["training"], c.training);
  c.seed = j.value("seed", c.seed);
  if (!j.contains("output_dir")) throw ConfigError("config: 'output_dir' is required");
  c.output_dir = resolve(base, j["output_dir"].get<std::string>());
  return c;
}

}  // namespace

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  ExperimentConfig c;
  try {
    c = parse(json::parse(in), path.parent_path());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (const char* env = std::getenv("NMT_SEED"); env && *env) c.seed = parse_seed(env);
  c.training.seed = c.seed;
  c.training.output_dir = model_dir(c);
  return c;
}

}  // namespace nmt::cli
