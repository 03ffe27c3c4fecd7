#pragma once

// Pipeline stages over a work directory. Every stage writes
// manifests/<stage>.json listing its inputs and outputs with content hashes,
// the config fingerprint, the seed and the wall time.

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adyolo/advloop/advloop.hpp"
#include "adyolo/eval/matrix.hpp"
#include "adyolo/pipeline/config.hpp"

namespace adyolo::pipeline {

class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& stage, const std::string& path)
      : std::runtime_error("stage " + stage + ": missing artifact " + path), stage_(stage), path_(path) {}
  const std::string& stage() const { return stage_; }
  const std::string& path() const { return path_; }

 private:
  std::string stage_, path_;
};

using Log = std::function<void(const std::string&)>;

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth-data",    "train-detector", "attack",      "advloop",
                                              "build-corpus",  "train-defense",  "eval-matrix", "report"};
  return names;
}

class Pipeline {
 public:
  explicit Pipeline(nlohmann::json resolved_config, Log log = {});

  const PipelineConfig& config() const { return config_; }
  const std::string& config_fingerprint() const { return fingerprint_; }
  std::string path(const std::string& relative) const;

  void synth_data();
  void train_detector();
  void attack();
  void advloop();
  void build_corpus();
  void train_defense();
  void eval_matrix(const std::vector<eval::CellId>& cells);
  void eval_matrix();  // cells from the config
  // Renders tables and PR dumps; returns files under the work directory that
  // no manifest accounts for.
  std::vector<std::string> report();

  void run(const std::string& stage);
  void run_all();

  // Artifact access for callers that inspect results.
  std::vector<detector::LabeledImage> load_scenes(const std::string& split) const;
  detector::DetectorModel load_model(const std::string& id) const;
  advloop::Registry load_registry() const;
  advloop::PatchCorpus load_corpus() const;
  std::vector<patch::Patch> load_attack_patches() const;  // final first, then snapshots
  std::vector<eval::EvalReport> load_reports() const;
  attack::AttackConfig attack_config(std::uint64_t seed) const;
  eval::MatrixConfig matrix_config() const;

 private:
  class Stage;

  void say(const std::string& msg) const;

  nlohmann::json resolved_;
  PipelineConfig config_;
  std::string fingerprint_;
  Log log_;
};

// Files under work_dir not listed as an output of any manifest.
std::vector<std::string> find_orphans(const std::string& work_dir);

// Manifest content minus its timing fields.
nlohmann::json manifest_without_timing(const std::string& path);

}  // namespace adyolo::pipeline
