#include "adyolo/eval/matrix.hpp"

#include "adyolo/numcore/hash.hpp"
#include "adyolo/numcore/random.hpp"

namespace adyolo::eval {

using detector::LabeledImage;

std::vector<LabeledImage> patched_split(const std::vector<LabeledImage>& scenes, const std::vector<patch::Patch>& patches,
                                        const std::string& scene_name, const std::string& patch_name,
                                        const MatrixConfig& config) {
  const std::uint64_t seed = derive_seed(config.seed, {fnv1a64(scene_name), fnv1a64(patch_name)});
  std::vector<LabeledImage> out;
  for (patch::PatchedScene& s :
       patch::random_apply_dataset(patches, scenes, seed, config.patch_class_id, config.whitebox.transforms))
    out.push_back({std::move(s.image), std::move(s.labels)});
  return out;
}

std::vector<CellOutcome> run_matrix(const MatrixInputs& inputs, const std::vector<CellId>& cells,
                                    const MatrixConfig& config) {
  std::vector<CellOutcome> out;
  for (const CellId& cell : cells) {
    CellOutcome o;
    o.cell = cell;
    const auto model = inputs.models.find(cell.model);
    const auto scenes = inputs.scenes.find(cell.scenes);
    if (model == inputs.models.end()) {
      o.skipped = "missing model " + cell.model;
    } else if (scenes == inputs.scenes.end()) {
      o.skipped = "missing scene split " + cell.scenes;
    } else if (cell.patches == kCleanCell) {
      o.report = evaluate(model->second, scenes->second, config.thresholds, cell);
    } else if (cell.patches == kWhiteboxCell) {
      const auto attack_scenes = inputs.scenes.find(config.whitebox_scenes);
      if (attack_scenes == inputs.scenes.end()) {
        o.skipped = "missing white-box attack split " + config.whitebox_scenes;
      } else {
        attack::AttackResult r = attack::optimize_patch(model->second, attack_scenes->second, config.whitebox, {},
                                                        "whitebox-" + cell.model);
        const std::vector<patch::Patch> one{r.final};
        o.report = evaluate(model->second, patched_split(scenes->second, one, cell.scenes, cell.patches, config),
                            config.thresholds, cell);
        o.whitebox_patch = std::move(r.final);
      }
    } else if (const auto set = inputs.patches.find(cell.patches); set == inputs.patches.end() || set->second.empty()) {
      o.skipped = "missing patch set " + cell.patches;
    } else {
      o.report = evaluate(model->second, patched_split(scenes->second, set->second, cell.scenes, cell.patches, config),
                          config.thresholds, cell);
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace adyolo::eval
