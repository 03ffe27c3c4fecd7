#pragma once

// Micro single-shot grid detector. The raw head output is a [P, P, B, 5+n]
// tensor; each anchor row is (tx, ty, tw, th, t_obj, class logits...).
//
// Decoding for cell (row, col), anchor b with prior (pw, ph):
//   x = (col + sigmoid(tx)) / P      y = (row + sigmoid(ty)) / P
//   w = pw * exp(tw)                 h = ph * exp(th)
//   p_obj = sigmoid(t_obj)           p_cls = softmax(class logits)

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adyolo/eval/box.hpp"
#include "adyolo/numcore/tape.hpp"

namespace adyolo::detector {

inline constexpr const char* kPatchClassName = "patch";

struct AnchorPrior {
  Real w = 0, h = 0;
  friend bool operator==(const AnchorPrior&, const AnchorPrior&) = default;
};

struct LossWeights {
  Real coord = 5.0;
  Real noobj = 0.5;
  Real obj = 1.0;
  Real cls = 1.0;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct ConvBlock {
  int channels = 0;
  int stride = 1;
  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

struct DetectorConfig {
  int input_side = 128;
  int grid = 8;
  std::vector<AnchorPrior> anchors{{0.28, 0.60}, {0.12, 0.12}, {0.45, 0.28}};
  std::vector<std::string> class_names{"person", "car", "tree"};
  // 3x3 conv + leaky-relu blocks; a 1x1 head follows the last one.
  std::vector<ConvBlock> blocks{{8, 2}, {16, 2}, {32, 2}, {48, 2}, {64, 1}};
  Real leaky_slope = 0.1;
  LossWeights loss;
  Real noobj_iou = 0.6;

  int num_anchors() const { return static_cast<int>(anchors.size()); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  int anchor_width() const { return 5 + num_classes(); }
  int head_channels() const { return num_anchors() * anchor_width(); }
  std::size_t output_elements() const {
    return static_cast<std::size_t>(grid) * grid * num_anchors() * anchor_width();
  }
  bool defended() const;
  int class_index(const std::string& name) const;  // -1 when absent

  // Throws std::invalid_argument when the architecture does not map
  // input_side onto the grid or a field is out of range.
  void validate() const;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct DetectorModel {
  std::string id;
  DetectorConfig config;
  std::vector<NamedTensor> params;

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  std::vector<Tensor> param_values() const;
  std::size_t parameter_count() const;
};

// He-normal conv weights, zero biases, small head weights.
DetectorModel make_model(const DetectorConfig& config, std::uint64_t seed);
// Every parameter zero.
DetectorModel zero_model(const DetectorConfig& config);

struct GroundTruthBox {
  int class_id = 0;
  Real cx = 0, cy = 0, w = 0, h = 0;

  Box box() const { return Box{cx, cy, w, h}; }
  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

// Throws std::invalid_argument when coordinates or class fall outside range.
void validate_truth(const GroundTruthBox& truth, int num_classes);

// ---- forward ---------------------------------------------------------------

// Parameters as tape values; trainable ones are leaves.
std::vector<Var> bind_params(Tape& tape, const DetectorModel& model, bool trainable);

// image: [S, S, 3] in [0, 1]. Result: raw [P, P, B, 5+n].
Var forward(const DetectorModel& model, std::span<const Var> params, const Var& image);
Tensor forward(const DetectorModel& model, const Tensor& image);
// Independent per-image forwards; output i belongs to image i.
std::vector<Tensor> forward_batch(const DetectorModel& model, std::span<const Tensor> images);

// ---- decode / encode -------------------------------------------------------

struct AnchorPrediction {
  Real x = 0, y = 0, w = 0, h = 0;
  Real p_obj = 0;
  std::vector<Real> p_cls;
};

struct DecodedAnchor {
  AnchorPrediction pred;
  int cell = 0;  // row * P + col
  int anchor = 0;
  int class_id = 0;  // argmax p_cls, lowest index on ties
  Real score = 0;    // p_obj * max p_cls

  Box box() const { return Box{pred.x, pred.y, pred.w, pred.h}; }
};

std::vector<DecodedAnchor> decode(const Tensor& raw, const DetectorConfig& config, Real conf_threshold);

struct EncodedBox {
  int row = 0, col = 0, anchor = 0;
  Real tx = 0, ty = 0, tw = 0, th = 0;  // logits that decode back to the box
  Real offset_x = 0, offset_y = 0;       // in-cell center offsets in [0, 1)
};

// Cell containing the center, anchor prior with the best shape IoU.
EncodedBox encode(const GroundTruthBox& truth, const DetectorConfig& config);
int responsible_anchor(Real w, Real h, const DetectorConfig& config);

// ---- training loss ---------------------------------------------------------

// Regression and objectness targets derived from one forward pass. Objectness
// targets (IoU of the decoded box) and the no-object mask are treated as
// constants during differentiation.
struct LossTargets {
  Tensor coord_mask;  // [M, 2], M = P*P*B
  Tensor xy;          // [M, 2] in-cell offsets
  Tensor wh;          // [M, 2] log(size / prior)
  Tensor obj_mask;    // [M, 1] responsible anchors
  Tensor obj;         // [M, 1] IoU targets
  Tensor noobj_mask;  // [M, 1]
  Tensor cls;         // [M, n] one-hot on responsible anchors
};

LossTargets compute_targets(const Tensor& raw, std::span<const GroundTruthBox> truths, const DetectorConfig& config);
Var loss_from_targets(const Var& raw, const LossTargets& targets, const DetectorConfig& config);
Var training_loss(const DetectorModel& model, std::span<const Var> params, const Var& image,
                  std::span<const GroundTruthBox> truths);
Real training_loss_value(const DetectorModel& model, const Tensor& image, std::span<const GroundTruthBox> truths);

// ---- post-processing -------------------------------------------------------

// Greedy per-class suppression: order by score desc, then cell asc, then
// anchor asc; drop any detection whose IoU with a kept same-class detection
// exceeds iou_threshold.
std::vector<DecodedAnchor> nms(std::vector<DecodedAnchor> detections, Real iou_threshold);

// decode + nms.
std::vector<DecodedAnchor> detect(const DetectorModel& model, const Tensor& image, Real conf_threshold,
                                  Real nms_threshold);

// ---- training --------------------------------------------------------------

struct LabeledImage {
  Tensor image;
  std::vector<GroundTruthBox> labels;
};

struct TrainSchedule {
  long steps = 2000;
  int batch = 8;
  Real learning_rate = 1e-3;
  Real lr_decay = 0.1;
  long decay_every = 0;  // steps; 0 disables decay
  bool flip_augment = true;
  std::uint64_t seed = 1;
};

using BatchSource = std::function<std::vector<LabeledImage>(long step)>;
using ProgressFn = std::function<void(long step, Real loss)>;

struct TrainResult {
  std::vector<Real> loss_trace;  // mean batch loss per step
};

// Mean of per-sample losses per step, one Adam step each. Per-sample tapes run
// in parallel; their gradients are summed in sample order. Throws
// NumericalError (carrying the step) when a loss turns non-finite.
TrainResult train(DetectorModel& model, const BatchSource& source, const TrainSchedule& schedule,
                  const ProgressFn& progress = {});

LabeledImage flip_horizontal(const LabeledImage& sample);

// Walks the data in a fresh seeded permutation per epoch; batches may straddle
// an epoch boundary.
BatchSource epoch_sampler(std::vector<LabeledImage> data, int batch, std::uint64_t seed);

}  // namespace adyolo::detector
