#pragma once

// Patch optimization: minimize J = alpha * J_nps + beta * J_tv + J_obj over
// random scene batches and transforms, with Adam on the patch pixels.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adyolo/detector/detector.hpp"
#include "adyolo/patch/apply.hpp"

namespace adyolo::attack {

using Color = std::array<Real, 3>;

struct LrSchedule {
  Real initial = 0.03;
  Real decay = 0.1;
  int decay_epochs = 50;  // one epoch = ceil(scenes / batch) steps
  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

struct AttackConfig {
  Real alpha = 0.01;
  Real beta = 2.5;
  // Divide J_nps and J_tv by the number of patch elements (3 p^2) so the
  // weights stay meaningful across patch sizes.
  bool normalize_regularizers = true;
  int patch_side = 32;
  long steps = 500;
  int batch = 8;
  LrSchedule lr;
  std::vector<Color> palette;
  std::uint64_t seed = 1;
  patch::TransformConfig transforms;

  void validate() const;
};

// "r g b" per line; '#' starts a comment.
std::vector<Color> load_palette(const std::string& path);
Tensor palette_tensor(std::span<const Color> palette);  // [K, 3]

// Sum over pixels of the distance to the nearest palette color.
Var loss_nps(const Var& patch, const Tensor& palette);
// Sum over pixels and channels of sqrt(dx^2 + dy^2 + 1e-8) with forward
// differences; a missing neighbor contributes 0 and the corner pixel, which
// has none, is left out.
Var loss_tv(const Var& patch);
// Mean over images of the highest objectness probability among all anchors.
Var loss_obj(const detector::DetectorModel& model, std::span<const Var> params, std::span<const Var> images);

struct TraceRow {
  long step = 0;
  Real j = 0, j_obj = 0, j_tv = 0, j_nps = 0;  // raw (unweighted) terms; j is the weighted total
  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct AttackResult {
  patch::Patch final;
  std::vector<patch::Patch> snapshots;  // in schedule order
  std::vector<TraceRow> trace;          // row k is evaluated at the patch after k updates
};

// Snapshot ids are "<run_id>-s<step>"; the final patch is "<run_id>". The
// snapshot objective is the J of the step that produced it.
AttackResult optimize_patch(const detector::DetectorModel& model, std::span<const detector::LabeledImage> scenes,
                            const AttackConfig& config, std::span<const long> snapshot_steps, const std::string& run_id);

// Snapshots at equal intervals ending on the final step, the first no earlier
// than earliest_fraction of the run.
std::vector<long> trajectory_snapshots(long steps, int count, Real earliest_fraction);

void write_trace(const std::string& path, std::span<const TraceRow> trace);
std::vector<TraceRow> read_trace(const std::string& path);

}  // namespace adyolo::attack
