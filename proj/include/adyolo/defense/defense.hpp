#pragma once

// Patch-class defense: widen the detector head by one "patch" class and train
// on a mixture of clean scenes and patched scenes whose labels include the
// patch boxes.

#include <cstdint>
#include <string>
#include <vector>

#include "adyolo/detector/detector.hpp"
#include "adyolo/patch/apply.hpp"

namespace adyolo::defense {

// Appends "patch" to the class list; every new head row starts at zero, all
// other parameters are copied. Rejects an already defended model.
detector::DetectorModel extend_head(const detector::DetectorModel& model, const std::string& new_id);
// Inverse of extend_head.
detector::DetectorModel strip_patch_class(const detector::DetectorModel& model, const std::string& new_id);

struct MixedDatasetSpec {
  std::vector<detector::LabeledImage> clean;
  std::vector<detector::LabeledImage> patchable;
  std::vector<patch::Patch> patches;
  Real patched_fraction = 0.5;
  std::uint64_t seed = 1;
  // Keep patch boxes (class patch_class_id) in patched labels; off when the
  // model being trained has no patch class.
  bool label_patches = true;
  int patch_class_id = 3;
  patch::TransformConfig transforms;

  void validate() const;
};

// Sample k of a step is patched with probability patched_fraction; the
// branch draw, the clean pick and the patched pick use separate seeded
// streams, so fraction 0 reproduces clean_batch exactly.
std::vector<detector::LabeledImage> make_batch(const MixedDatasetSpec& spec, long step, int batch_size);
std::vector<detector::LabeledImage> clean_batch(const MixedDatasetSpec& spec, long step, int batch_size);

detector::BatchSource mixed_source(MixedDatasetSpec spec, int batch_size);

// Ordinary detector training over mixed batches. Requires a patch class when
// spec.label_patches is set.
detector::TrainResult train_defense(detector::DetectorModel& model, const MixedDatasetSpec& spec,
                                    const detector::TrainSchedule& schedule, const detector::ProgressFn& progress = {});

}  // namespace adyolo::defense
