#pragma once

// Patch application A(delta, x, t): each person box hosts one warped copy of
// the patch on its chest; covered pixels are replaced (bilinear sampling,
// photometric jitter, clamp to [0, 1]) and a patch-class box is appended.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adyolo/detector/detector.hpp"

namespace adyolo::patch {

struct Provenance {
  std::string source_model;
  std::uint64_t run_seed = 0;
  long step = 0;
  Real objective = 0;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Patch {
  std::string id;
  Tensor pixels;  // [p, p, 3] in [0, 1]
  Provenance provenance;
  friend bool operator==(const Patch&, const Patch&) = default;
};

struct Bound {
  Real lo = 0, hi = 0;
  friend bool operator==(const Bound&, const Bound&) = default;
};

struct TransformConfig {
  Bound rotation{-20, 20};  // degrees
  Bound scale{0.25, 0.4};   // of min(box w, box h)
  Bound jitter_x{-0.05, 0.05};
  Bound jitter_y{-0.05, 0.05};
  Bound brightness{-0.1, 0.1};
  Bound contrast{0.8, 1.2};
  Bound noise{0.05, 0.05};
  Real chest_offset = 0.15;  // patch center sits this fraction of box height above the box center
  int person_class = 0;

  void validate() const;  // rejects inverted bounds
  friend bool operator==(const TransformConfig&, const TransformConfig&) = default;
};

struct TransformSample {
  Real rotation = 0;
  Real scale = 0.3;
  Real jitter_x = 0, jitter_y = 0;
  Real brightness = 0;
  Real contrast = 1;
  Real noise_amplitude = 0;
  std::uint64_t noise_seed = 0;
  friend bool operator==(const TransformSample&, const TransformSample&) = default;
};

TransformSample sample_transform(std::uint64_t seed, const TransformConfig& config);

struct Application {
  int label_index = 0;  // host person box within the scene labels
  TransformSample transform;
  std::string patch_id;
  bool skipped = false;  // host too small for a 2-pixel patch
  friend bool operator==(const Application&, const Application&) = default;
};

struct PatchedScene {
  Tensor image;
  std::vector<detector::GroundTruthBox> labels;  // originals, then one patch box per placed patch
  std::vector<Application> applied;
};

// One transform per person box, in label order.
PatchedScene apply(const Patch& patch, const detector::LabeledImage& scene, std::span<const TransformSample> transforms,
                   int patch_class_id, const TransformConfig& config);

// Same composite on a tape; gradient flows to the patch (and to image pixels
// left uncovered).
Var apply_var(const Var& patch, const Var& image, std::span<const detector::GroundTruthBox> labels,
              std::span<const TransformSample> transforms, const TransformConfig& config);

// Person boxes and per-box transforms for scene-level sampling.
std::vector<TransformSample> sample_scene_transforms(std::uint64_t seed, std::span<const detector::GroundTruthBox> labels,
                                                     const TransformConfig& config);

// Every scene gets one patch from the set, applied to each of its person
// boxes. The assignment is a seeded shuffle of the set cycled to the scene
// count, so each pick is uniform and usage counts differ by at most one.
std::vector<PatchedScene> random_apply_dataset(std::span<const Patch> patches,
                                               std::span<const detector::LabeledImage> scenes, std::uint64_t seed,
                                               int patch_class_id, const TransformConfig& config);

// Drops boxes of the given class (used when training a model without a patch class).
std::vector<detector::GroundTruthBox> without_class(std::span<const detector::GroundTruthBox> labels, int class_id);

// Patch files: <id>.tensor (exact values), <id>.json (id and provenance),
// <id>.ppm (8-bit preview).
void save_patch(const std::string& dir, const Patch& patch);
Patch load_patch(const std::string& dir, const std::string& id);

}  // namespace adyolo::patch
