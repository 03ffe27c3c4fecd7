#pragma once

// Pipeline configuration: one JSON document with a section per stage. Loading
// starts from the built-in defaults; user files and --set overrides may only
// name keys that already exist.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adyolo/detector/detector.hpp"
#include "adyolo/eval/metrics.hpp"
#include "adyolo/patch/attack.hpp"
#include "adyolo/scenesynth/scenes.hpp"

namespace adyolo::pipeline {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainSection {
  long steps = 2000;
  int batch = 8;
  Real learning_rate = 0.01;
  Real lr_decay = 0.1;
  long decay_every = 0;
  bool flip_augment = true;
};

struct ScenesSection {
  scenes::SceneConfig voc;    // mixed scenes: persons plus distractors
  scenes::SceneConfig inria;  // person-only scenes that receive patches
  int voc_train = 500;
  int voc_test = 100;
  int inria_train = 200;
  int inria_test = 100;
};

struct AttackSection {
  attack::AttackConfig config;  // palette and seed are filled in at run time
  std::string palette_file;     // empty: the bundled palette
};

struct AdvloopSection {
  int rounds = 1;
  int snapshots = 5;
  Real earliest_snapshot = 0.2;
  TrainSection retrain;
  Real patched_fraction = 0.5;
  Real flag_below_drop = 0.10;
};

struct CorpusSection {
  int runs_per_model = 3;
  int snapshots_per_run = 5;
  Real earliest_snapshot = 0.2;
  std::vector<std::uint64_t> seeds;  // empty: derived from the global seed
};

struct DefenseSection {
  std::string base_model = "M0";
  Real patched_fraction = 0.5;
  TrainSection train;
};

struct EvalSection {
  eval::EvalThresholds thresholds;
  std::vector<std::string> cells;  // "model/scenes/patches"
};

struct PipelineConfig {
  std::uint64_t seed = 20240917;
  std::string work_dir = "run";
  ScenesSection scenes;
  detector::DetectorConfig detector;
  TrainSection train;
  AttackSection attack;
  AdvloopSection advloop;
  CorpusSection corpus;
  DefenseSection defense;
  EvalSection eval;
};

PipelineConfig default_config();
nlohmann::json to_json(const PipelineConfig& c);
// Throws ConfigError naming the offending key path.
PipelineConfig from_json(const nlohmann::json& j);

// defaults <- file (optional) <- "a.b.c=value" overrides.
nlohmann::json resolve_config(const std::string& file, const std::vector<std::string>& overrides);
// Hash of the canonical dump of a resolved config, work_dir excluded.
std::string fingerprint(const nlohmann::json& resolved);

std::vector<eval::CellId> parse_cells(const std::vector<std::string>& specs);

}  // namespace adyolo::pipeline
