#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nmt/corpus.h"
#include "nmt/model.h"
#include "nmt/train.h"

namespace nmt::cli {

struct TranslationFile {
  std::string id;
  std::filesystem::path path;
};

struct LanguageFiles {
  std::string code;
  std::vector<TranslationFile> translations;
};

// JSON experiment description. Relative paths are resolved against the
// directory of the config file. See README.md for the schema.
struct ExperimentConfig {
  std::vector<LanguageFiles> languages;  // pivot first
  std::string pivot = "eng";
  std::vector<std::string> hubs;
  std::optional<std::string> identity_language;
  bool paraphrase = false;
  double dev_fraction = 0.05;
  double test_fraction = 0.05;
  std::size_t bpe_merges = 8000;
  // Validation direction; defaults to pivot -> first other language.
  std::string valid_source;
  std::string valid_target;
  std::size_t valid_beam = 1;
  ModelConfig model;
  TrainConfig training;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir;
};

// Throws IoError when the file or a referenced corpus is missing and
// ConfigError on schema violations. NMT_SEED, when set, replaces the seed.
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Files written by `prepare` and read by `train`.
struct PreparedLayout {
  std::filesystem::path dir;
  std::filesystem::path vocab() const { return dir / "vocab.tsv"; }
  std::filesystem::path codes(const std::string& lang) const { return dir / (lang + ".codes"); }
  std::filesystem::path train_src() const { return dir / "train.src"; }
  std::filesystem::path train_tgt() const { return dir / "train.tgt"; }
  std::filesystem::path dev_src() const { return dir / "dev.src"; }
  std::filesystem::path dev_ref() const { return dir / "dev.ref"; }
  std::filesystem::path test_src() const { return dir / "test.src"; }
  std::filesystem::path test_ref() const { return dir / "test.ref"; }
  std::filesystem::path paraphrase_test() const { return dir / "test.paraphrase.tsv"; }
};

inline PreparedLayout prepared_layout(const ExperimentConfig& config) { return {config.output_dir / "data"}; }
inline std::filesystem::path model_dir(const ExperimentConfig& config) { return config.output_dir / "model"; }

}  // namespace nmt::cli
