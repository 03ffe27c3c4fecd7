#include "adyolo/defense/defense.hpp"

#include <memory>
#include <stdexcept>

#include "adyolo/numcore/random.hpp"

namespace adyolo::defense {

using detector::DetectorModel;
using detector::LabeledImage;

namespace {

// Copies head channels between layouts of `from_width` and `to_width` values
// per anchor; channels only one side has are dropped or left at zero.
Tensor remap_head(const Tensor& src, int anchors, int from_width, int to_width) {
  const int channels = src.dim(-1);
  const std::size_t rows = src.size() / static_cast<std::size_t>(channels);
  Shape shape = src.shape();
  shape.back() = anchors * to_width;
  Tensor out(shape);
  const int keep = std::min(from_width, to_width);
  for (std::size_t r = 0; r < rows; ++r)
    for (int b = 0; b < anchors; ++b)
      for (int k = 0; k < keep; ++k)
        out[r * static_cast<std::size_t>(anchors * to_width) + static_cast<std::size_t>(b * to_width + k)] =
            src[r * static_cast<std::size_t>(channels) + static_cast<std::size_t>(b * from_width + k)];
  return out;
}

DetectorModel rebuild(const DetectorModel& model, detector::DetectorConfig config, const std::string& new_id) {
  DetectorModel out;
  out.id = new_id;
  out.config = std::move(config);
  out.config.validate();
  const int B = model.config.num_anchors();
  for (const detector::NamedTensor& p : model.params) {
    if (p.name == "head.weight" || p.name == "head.bias")
      out.params.push_back({p.name, remap_head(p.value, B, model.config.anchor_width(), out.config.anchor_width())});
    else
      out.params.push_back(p);
  }
  return out;
}

}  // namespace

DetectorModel extend_head(const DetectorModel& model, const std::string& new_id) {
  if (model.config.defended()) throw std::invalid_argument("extend_head: model " + model.id + " already has a patch class");
  detector::DetectorConfig config = model.config;
  config.class_names.push_back(detector::kPatchClassName);
  return rebuild(model, std::move(config), new_id);
}

DetectorModel strip_patch_class(const DetectorModel& model, const std::string& new_id) {
  if (!model.config.defended() || model.config.class_names.back() != detector::kPatchClassName)
    throw std::invalid_argument("strip_patch_class: model " + model.id + " has no trailing patch class");
  detector::DetectorConfig config = model.config;
  config.class_names.pop_back();
  return rebuild(model, std::move(config), new_id);
}

void MixedDatasetSpec::validate() const {
  if (!(patched_fraction >= 0 && patched_fraction <= 1))
    throw std::invalid_argument("mixed dataset: patched_fraction must lie in [0, 1]");
  if (clean.empty() && patched_fraction < 1) throw std::invalid_argument("mixed dataset: no clean scenes");
  if (patched_fraction > 0 && (patches.empty() || patchable.empty()))
    throw std::invalid_argument("mixed dataset: patched branch needs patches and patchable scenes");
  transforms.validate();
}

namespace {

LabeledImage clean_pick(const MixedDatasetSpec& spec, long step, std::size_t k) {
  Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(step), k, 1}));
  return spec.clean[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(spec.clean.size()) - 1))];
}

LabeledImage patched_pick(const MixedDatasetSpec& spec, long step, std::size_t k) {
  const std::uint64_t s = derive_seed(spec.seed, {static_cast<std::uint64_t>(step), k, 2});
  Rng rng(s);
  const LabeledImage& scene =
      spec.patchable[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(spec.patchable.size()) - 1))];
  const patch::Patch& p =
      spec.patches[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(spec.patches.size()) - 1))];
  const auto transforms = patch::sample_scene_transforms(derive_seed(s, {3}), scene.labels, spec.transforms);
  patch::PatchedScene ps = patch::apply(p, scene, transforms, spec.patch_class_id, spec.transforms);
  if (!spec.label_patches) ps.labels = patch::without_class(ps.labels, spec.patch_class_id);
  return {std::move(ps.image), std::move(ps.labels)};
}

}  // namespace

std::vector<LabeledImage> clean_batch(const MixedDatasetSpec& spec, long step, int batch_size) {
  std::vector<LabeledImage> out;
  for (int k = 0; k < batch_size; ++k) out.push_back(clean_pick(spec, step, static_cast<std::size_t>(k)));
  return out;
}

std::vector<LabeledImage> make_batch(const MixedDatasetSpec& spec, long step, int batch_size) {
  std::vector<LabeledImage> out(static_cast<std::size_t>(batch_size));
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < batch_size; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    Rng branch(derive_seed(spec.seed, {static_cast<std::uint64_t>(step), uk, 0}));
    const bool patched = uniform(branch, 0, 1) < spec.patched_fraction;
    out[uk] = patched ? patched_pick(spec, step, uk) : clean_pick(spec, step, uk);
  }
  return out;
}

detector::BatchSource mixed_source(MixedDatasetSpec spec, int batch_size) {
  spec.validate();
  auto shared = std::make_shared<const MixedDatasetSpec>(std::move(spec));
  return [shared, batch_size](long step) { return make_batch(*shared, step, batch_size); };
}

detector::TrainResult train_defense(DetectorModel& model, const MixedDatasetSpec& spec,
                                    const detector::TrainSchedule& schedule, const detector::ProgressFn& progress) {
  if (spec.label_patches) {
    const int idx = model.config.class_index(detector::kPatchClassName);
    if (idx < 0) throw std::invalid_argument("train_defense: model " + model.id + " has no patch class");
    if (idx != spec.patch_class_id)
      throw std::invalid_argument("train_defense: patch class index mismatch between model and dataset");
  }
  return detector::train(model, mixed_source(spec, schedule.batch), schedule, progress);
}

}  // namespace adyolo::defense
