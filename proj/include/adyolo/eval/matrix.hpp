#pragma once

// Experiment matrix: one report per (model, scene split, patch split) cell.
// A "whitebox" cell first optimizes a fresh patch against that very model.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adyolo/eval/metrics.hpp"
#include "adyolo/patch/attack.hpp"

namespace adyolo::eval {

inline constexpr const char* kCleanCell = "clean";
inline constexpr const char* kWhiteboxCell = "whitebox";

struct MatrixInputs {
  std::map<std::string, detector::DetectorModel> models;
  std::map<std::string, std::vector<detector::LabeledImage>> scenes;
  std::map<std::string, std::vector<patch::Patch>> patches;
};

struct MatrixConfig {
  EvalThresholds thresholds;
  attack::AttackConfig whitebox;     // identical budget for every model
  std::string whitebox_scenes = "I0";  // split the white-box patch is optimized on
  std::uint64_t seed = 1;            // placement seed; shared by all models for a given (scenes, patches) pair
  int patch_class_id = 3;
};

struct CellOutcome {
  CellId cell;
  std::optional<EvalReport> report;
  std::string skipped;                       // reason, when report is empty
  std::optional<patch::Patch> whitebox_patch;  // the optimized patch of a white-box cell
};

// Missing models, splits or patch sets skip the cell with a reason.
std::vector<CellOutcome> run_matrix(const MatrixInputs& inputs, const std::vector<CellId>& cells,
                                    const MatrixConfig& config);

// Scenes of `split` with patches from `patches` applied, labels including the
// patch boxes; the placement seed depends only on the split names.
std::vector<detector::LabeledImage> patched_split(const std::vector<detector::LabeledImage>& scenes,
                                                  const std::vector<patch::Patch>& patches, const std::string& scene_name,
                                                  const std::string& patch_name, const MatrixConfig& config);

}  // namespace adyolo::eval
