#pragma once

// Run configuration: one JSON document with sections corpus, model, train,
// eval and cost. Parsing is strict (unknown keys and wrong types throw).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tunein/corpus.hpp"
#include "tunein/model.hpp"
#include "tunein/trainer.hpp"

namespace tunein::cli {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  Mode mode = Mode::online;
  std::size_t mixtures = 0;  // 0: all
  double seconds = 0;        // crop; 0 keeps whole mixtures
  std::string set = "test";
  std::size_t sv_pairs = 100;  // per class
  bool sv_masked = true;
  std::uint64_t sv_seed = 7;
  double sv_seconds = 0;
  bool write_wavs = false;
  std::size_t ablation_mixtures = 10;
  double ablation_seconds = 2.0;
};

struct CostConfig {
  double seconds = 1.0;
  int sample_rate = 8000;
  std::vector<std::size_t> windows{2, 4, 8, 16};
};

struct RunConfig {
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  CostConfig cost;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig from_json(const nlohmann::json& j);

// "train.lambda" = "10": the value is read as JSON when it parses, else as a
// string.
void apply_override(nlohmann::json& doc, const std::string& dotted, const std::string& value);

RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace tunein::cli
