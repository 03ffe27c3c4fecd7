#include "adyolo/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "adyolo/numcore/adam.hpp"
#include "adyolo/numcore/ops.hpp"
#include "adyolo/numcore/random.hpp"

namespace adyolo::detector {

namespace {

Real sigmoid(Real v) { return 1 / (1 + std::exp(-v)); }
Real logit(Real p) { return std::log(p / (1 - p)); }

std::string conv_name(std::size_t i, const char* what) { return "conv" + std::to_string(i) + "." + what; }

}  // namespace

bool DetectorConfig::defended() const { return class_index(kPatchClassName) >= 0; }

int DetectorConfig::class_index(const std::string& name) const {
  const auto it = std::find(class_names.begin(), class_names.end(), name);
  return it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
}

void DetectorConfig::validate() const {
  if (anchors.empty()) throw std::invalid_argument("detector: at least one anchor prior required");
  for (const AnchorPrior& a : anchors)
    if (!(a.w > 0 && a.w <= 1 && a.h > 0 && a.h <= 1))
      throw std::invalid_argument("detector: anchor priors must lie in (0, 1]");
  if (class_names.empty()) throw std::invalid_argument("detector: at least one class required");
  if (blocks.empty()) throw std::invalid_argument("detector: at least one conv block required");
  if (grid < 1 || input_side < 1) throw std::invalid_argument("detector: grid and input side must be positive");
  int side = input_side;
  for (const ConvBlock& b : blocks) {
    if (b.channels < 1 || (b.stride != 1 && b.stride != 2))
      throw std::invalid_argument("detector: block channels >= 1 and stride 1 or 2 required");
    side = (side + 2 - 3) / b.stride + 1;
  }
  if (side != grid) {
    throw std::invalid_argument("detector: blocks map input " + std::to_string(input_side) + " to " +
                                std::to_string(side) + ", expected grid " + std::to_string(grid));
  }
}

const Tensor& DetectorModel::param(const std::string& name) const {
  for (const NamedTensor& p : params)
    if (p.name == name) return p.value;
  throw std::out_of_range("model has no parameter " + name);
}

Tensor& DetectorModel::param(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).param(name));
}

std::vector<Tensor> DetectorModel::param_values() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const NamedTensor& p : params) out.push_back(p.value);
  return out;
}

std::size_t DetectorModel::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& p : params) n += p.value.size();
  return n;
}

DetectorModel zero_model(const DetectorConfig& config) {
  config.validate();
  DetectorModel m;
  m.config = config;
  int cin = 3;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const int cout = config.blocks[i].channels;
    m.params.push_back({conv_name(i, "weight"), Tensor(Shape{3, 3, cin, cout})});
    m.params.push_back({conv_name(i, "bias"), Tensor(Shape{cout})});
    cin = cout;
  }
  m.params.push_back({"head.weight", Tensor(Shape{1, 1, cin, config.head_channels()})});
  m.params.push_back({"head.bias", Tensor(Shape{config.head_channels()})});
  return m;
}

DetectorModel make_model(const DetectorConfig& config, std::uint64_t seed) {
  DetectorModel m = zero_model(config);
  Rng rng(seed);
  std::normal_distribution<Real> normal(0, 1);
  for (NamedTensor& p : m.params) {
    if (p.value.rank() != 4) continue;
    const Shape& s = p.value.shape();
    const Real fan_in = static_cast<Real>(s[0] * s[1] * s[2]);
    const bool head = p.name.rfind("head.", 0) == 0;
    const Real std_dev = head ? 0.01 : std::sqrt(2.0 / ((1 + config.leaky_slope * config.leaky_slope) * fan_in));
    for (Real& v : p.value.values()) v = std_dev * normal(rng);
  }
  return m;
}

void validate_truth(const GroundTruthBox& t, int num_classes) {
  const bool ok = t.class_id >= 0 && t.class_id < num_classes && t.cx >= 0 && t.cx <= 1 && t.cy >= 0 &&
                  t.cy <= 1 && t.w > 0 && t.w <= 1 && t.h > 0 && t.h <= 1;
  if (!ok) {
    throw std::invalid_argument("invalid ground-truth box: class " + std::to_string(t.class_id) + " (" +
                                std::to_string(t.cx) + ", " + std::to_string(t.cy) + ", " + std::to_string(t.w) +
                                ", " + std::to_string(t.h) + ")");
  }
}

// ---- forward ----------------------------------------------------------------

std::vector<Var> bind_params(Tape& tape, const DetectorModel& model, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(model.params.size());
  for (const NamedTensor& p : model.params) vars.push_back(trainable ? tape.leaf(p.value) : tape.constant(p.value));
  return vars;
}

Var forward(const DetectorModel& model, std::span<const Var> params, const Var& image) {
  const DetectorConfig& c = model.config;
  const Shape expected{c.input_side, c.input_side, 3};
  if (image.shape() != expected) {
    throw ShapeError("forward: image " + shape_string(image.shape()) + " but model expects " +
                     shape_string(expected));
  }
  if (params.size() != model.params.size()) throw ShapeError("forward: parameter count mismatch");
  Var x = image;
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    x = ops::conv2d(x, params[2 * i], c.blocks[i].stride, 1);
    x = ops::add_bias(x, params[2 * i + 1]);
    x = ops::leaky_relu(x, c.leaky_slope);
  }
  const std::size_t h = 2 * c.blocks.size();
  x = ops::add_bias(ops::conv2d(x, params[h], 1, 0), params[h + 1]);
  return ops::reshape(x, Shape{c.grid, c.grid, c.num_anchors(), c.anchor_width()});
}

Tensor forward(const DetectorModel& model, const Tensor& image) {
  Tape tape;
  const std::vector<Var> params = bind_params(tape, model, false);
  return forward(model, params, tape.constant(image)).value();
}

std::vector<Tensor> forward_batch(const DetectorModel& model, std::span<const Tensor> images) {
  std::vector<Tensor> out(images.size());
  const long n = static_cast<long>(images.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = forward(model, images[static_cast<std::size_t>(i)]);
  return out;
}

// ---- decode / encode --------------------------------------------------------

std::vector<DecodedAnchor> decode(const Tensor& raw, const DetectorConfig& config, Real conf_threshold) {
  const Shape expected{config.grid, config.grid, config.num_anchors(), config.anchor_width()};
  if (raw.shape() != expected) {
    throw ShapeError("decode: raw tensor " + shape_string(raw.shape()) + ", expected " + shape_string(expected));
  }
  const int P = config.grid, B = config.num_anchors(), A = config.anchor_width(), n = config.num_classes();
  std::vector<DecodedAnchor> out;
  for (int row = 0; row < P; ++row)
    for (int col = 0; col < P; ++col)
      for (int b = 0; b < B; ++b) {
        const Real* v = raw.data() + ((static_cast<std::size_t>(row) * P + col) * B + b) * A;
        DecodedAnchor d;
        d.cell = row * P + col;
        d.anchor = b;
        d.pred.x = (col + sigmoid(v[0])) / P;
        d.pred.y = (row + sigmoid(v[1])) / P;
        d.pred.w = config.anchors[static_cast<std::size_t>(b)].w * std::exp(v[2]);
        d.pred.h = config.anchors[static_cast<std::size_t>(b)].h * std::exp(v[3]);
        d.pred.p_obj = sigmoid(v[4]);
        const Real m = *std::max_element(v + 5, v + 5 + n);
        d.pred.p_cls.resize(static_cast<std::size_t>(n));
        Real z = 0;
        for (int k = 0; k < n; ++k) z += (d.pred.p_cls[static_cast<std::size_t>(k)] = std::exp(v[5 + k] - m));
        for (Real& p : d.pred.p_cls) p /= z;
        d.class_id = static_cast<int>(std::max_element(d.pred.p_cls.begin(), d.pred.p_cls.end()) - d.pred.p_cls.begin());
        d.score = d.pred.p_obj * d.pred.p_cls[static_cast<std::size_t>(d.class_id)];
        if (d.score >= conf_threshold) out.push_back(std::move(d));
      }
  return out;
}

int responsible_anchor(Real w, Real h, const DetectorConfig& config) {
  int best = 0;
  Real best_iou = -1;
  for (int b = 0; b < config.num_anchors(); ++b) {
    const AnchorPrior& a = config.anchors[static_cast<std::size_t>(b)];
    const Real v = iou(Box{0, 0, w, h}, Box{0, 0, a.w, a.h});
    if (v > best_iou) {
      best_iou = v;
      best = b;
    }
  }
  return best;
}

EncodedBox encode(const GroundTruthBox& truth, const DetectorConfig& config) {
  const int P = config.grid;
  EncodedBox e;
  e.col = std::clamp(static_cast<int>(std::floor(truth.cx * P)), 0, P - 1);
  e.row = std::clamp(static_cast<int>(std::floor(truth.cy * P)), 0, P - 1);
  e.anchor = responsible_anchor(truth.w, truth.h, config);
  e.offset_x = truth.cx * P - e.col;
  e.offset_y = truth.cy * P - e.row;
  constexpr Real kEdge = 1e-9;
  e.tx = logit(std::clamp(e.offset_x, kEdge, 1 - kEdge));
  e.ty = logit(std::clamp(e.offset_y, kEdge, 1 - kEdge));
  const AnchorPrior& a = config.anchors[static_cast<std::size_t>(e.anchor)];
  e.tw = std::log(truth.w / a.w);
  e.th = std::log(truth.h / a.h);
  return e;
}

// ---- loss -------------------------------------------------------------------

LossTargets compute_targets(const Tensor& raw, std::span<const GroundTruthBox> truths, const DetectorConfig& config) {
  const int P = config.grid, B = config.num_anchors(), n = config.num_classes();
  const int M = P * P * B;
  for (const GroundTruthBox& t : truths) validate_truth(t, n);

  LossTargets t;
  t.coord_mask = Tensor(Shape{M, 2});
  t.xy = Tensor(Shape{M, 2});
  t.wh = Tensor(Shape{M, 2});
  t.obj_mask = Tensor(Shape{M, 1});
  t.obj = Tensor(Shape{M, 1});
  t.noobj_mask = Tensor(Shape{M, 1}, 1.0);
  t.cls = Tensor(Shape{M, n});

  const std::vector<DecodedAnchor> preds = decode(raw, config, 0.0);

  // Anchors overlapping any truth above the threshold are not pushed to 0.
  for (std::size_t m = 0; m < preds.size(); ++m) {
    const Box pb = preds[m].box();
    for (const GroundTruthBox& g : truths)
      if (iou(pb, g.box()) > config.noobj_iou) {
        t.noobj_mask[m] = 0;
        break;
      }
  }

  // First truth claiming a (cell, anchor) slot keeps it.
  for (const GroundTruthBox& g : truths) {
    const EncodedBox e = encode(g, config);
    const auto m = static_cast<std::size_t>((e.row * P + e.col) * B + e.anchor);
    if (t.obj_mask[m] != 0) continue;
    const AnchorPrior& a = config.anchors[static_cast<std::size_t>(e.anchor)];
    t.obj_mask[m] = 1;
    t.noobj_mask[m] = 0;
    t.coord_mask[2 * m] = t.coord_mask[2 * m + 1] = 1;
    t.xy[2 * m] = e.offset_x;
    t.xy[2 * m + 1] = e.offset_y;
    t.wh[2 * m] = std::log(g.w / a.w);
    t.wh[2 * m + 1] = std::log(g.h / a.h);
    t.obj[m] = iou(preds[m].box(), g.box());
    t.cls[m * static_cast<std::size_t>(n) + static_cast<std::size_t>(g.class_id)] = 1;
  }
  return t;
}

Var loss_from_targets(const Var& raw, const LossTargets& t, const DetectorConfig& config) {
  Tape& tape = *raw.tape();
  const int M = config.grid * config.grid * config.num_anchors();
  const int A = config.anchor_width();
  const LossWeights& w = config.loss;

  const Var flat = ops::reshape(raw, Shape{M, A});
  const Var xy = ops::sigmoid(ops::slice_last(flat, 0, 2));
  const Var wh = ops::slice_last(flat, 2, 4);
  const Var obj = ops::sigmoid(ops::slice_last(flat, 4, 5));
  const Var cls_logp = ops::log_softmax(ops::slice_last(flat, 5, A));

  const Var coord_mask = tape.constant(t.coord_mask);
  const Var xy_err = ops::mul(ops::square(ops::sub(xy, tape.constant(t.xy))), coord_mask);
  const Var wh_err = ops::mul(ops::square(ops::sub(wh, tape.constant(t.wh))), coord_mask);
  const Var coord = ops::scale(ops::add(ops::sum(xy_err), ops::sum(wh_err)), w.coord);

  const Var obj_err = ops::mul(ops::square(ops::sub(obj, tape.constant(t.obj))), tape.constant(t.obj_mask));
  const Var noobj_err = ops::mul(ops::square(obj), tape.constant(t.noobj_mask));
  const Var objectness = ops::add(ops::scale(ops::sum(obj_err), w.obj), ops::scale(ops::sum(noobj_err), w.noobj));

  const Var cls = ops::scale(ops::sum(ops::mul(cls_logp, tape.constant(t.cls))), -w.cls);
  return ops::add(ops::add(coord, objectness), cls);
}

Var training_loss(const DetectorModel& model, std::span<const Var> params, const Var& image,
                  std::span<const GroundTruthBox> truths) {
  const Var raw = forward(model, params, image);
  const LossTargets targets = compute_targets(raw.value(), truths, model.config);
  return loss_from_targets(raw, targets, model.config);
}

Real training_loss_value(const DetectorModel& model, const Tensor& image, std::span<const GroundTruthBox> truths) {
  Tape tape;
  const std::vector<Var> params = bind_params(tape, model, false);
  return training_loss(model, params, tape.constant(image), truths).value().item();
}

// ---- post-processing --------------------------------------------------------

std::vector<DecodedAnchor> nms(std::vector<DecodedAnchor> detections, Real iou_threshold) {
  std::stable_sort(detections.begin(), detections.end(), [](const DecodedAnchor& a, const DecodedAnchor& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cell != b.cell) return a.cell < b.cell;
    return a.anchor < b.anchor;
  });
  std::vector<DecodedAnchor> kept;
  for (DecodedAnchor& d : detections) {
    const Box db = d.box();
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const DecodedAnchor& k) {
      return k.class_id == d.class_id && iou(k.box(), db) > iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

std::vector<DecodedAnchor> detect(const DetectorModel& model, const Tensor& image, Real conf_threshold,
                                  Real nms_threshold) {
  return nms(decode(forward(model, image), model.config, conf_threshold), nms_threshold);
}

// ---- training ---------------------------------------------------------------

LabeledImage flip_horizontal(const LabeledImage& sample) {
  const Tensor& src = sample.image;
  if (src.rank() != 3) throw ShapeError("flip_horizontal: expected HxWxC image");
  const int H = src.dim(0), W = src.dim(1), C = src.dim(2);
  LabeledImage out;
  out.image = Tensor(src.shape());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        out.image[(static_cast<std::size_t>(y) * W + x) * C + c] =
            src[(static_cast<std::size_t>(y) * W + (W - 1 - x)) * C + c];
  out.labels = sample.labels;
  for (GroundTruthBox& g : out.labels) g.cx = 1 - g.cx;
  return out;
}

TrainResult train(DetectorModel& model, const BatchSource& source, const TrainSchedule& schedule,
                  const ProgressFn& progress) {
  if (schedule.batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  TrainResult result;
  if (schedule.steps <= 0) return result;

  std::vector<Tensor> values = model.param_values();
  Adam adam(values);
  std::vector<Tensor*> slots;
  for (NamedTensor& p : model.params) slots.push_back(&p.value);

  for (long step = 0; step < schedule.steps; ++step) {
    std::vector<LabeledImage> batch = source(step);
    if (batch.empty()) throw std::invalid_argument("train: batch source returned no samples");
    if (schedule.flip_augment) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng rng(derive_seed(schedule.seed, {static_cast<std::uint64_t>(step), i}));
        if (rng() & 1) batch[i] = flip_horizontal(batch[i]);
      }
    }

    const long n = static_cast<long>(batch.size());
    std::vector<std::vector<Tensor>> grads(batch.size());
    std::vector<Real> losses(batch.size(), 0);
    std::vector<std::string> errors(batch.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      try {
        Tape tape;
        const std::vector<Var> params = bind_params(tape, model, true);
        const Var loss = training_loss(model, params, tape.constant(batch[k].image), batch[k].labels);
        losses[k] = loss.value().item();
        grads[k] = tape.grad(loss, params);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
    for (const std::string& e : errors)
      if (!e.empty()) throw NumericalError("training step " + std::to_string(step) + ": " + e, step);

    std::vector<Tensor> total = std::move(grads[0]);
    Real loss_sum = losses[0];
    for (std::size_t i = 1; i < batch.size(); ++i) {
      loss_sum += losses[i];
      for (std::size_t p = 0; p < total.size(); ++p)
        for (std::size_t j = 0; j < total[p].size(); ++j) total[p][j] += grads[i][p][j];
    }
    const Real inv = Real{1} / static_cast<Real>(batch.size());
    for (Tensor& g : total)
      for (Real& v : g.values()) v *= inv;
    const Real mean_loss = loss_sum * inv;
    result.loss_trace.push_back(mean_loss);
    if (!std::isfinite(mean_loss)) {
      throw NumericalError("training loss is not finite at step " + std::to_string(step), step);
    }

    Real lr = schedule.learning_rate;
    if (schedule.decay_every > 0) lr *= std::pow(schedule.lr_decay, static_cast<Real>(step / schedule.decay_every));
    adam.step(slots, total, lr);
    if (progress) progress(step, mean_loss);
  }
  return result;
}

BatchSource epoch_sampler(std::vector<LabeledImage> data, int batch, std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("epoch_sampler: empty dataset");
  if (batch < 1) throw std::invalid_argument("epoch_sampler: batch must be >= 1");
  struct State {
    std::vector<LabeledImage> data;
    long epoch = -1;
    std::vector<std::size_t> perm;
  };
  auto state = std::make_shared<State>();
  state->data = std::move(data);
  return [state, batch, seed](long step) {
    const long n = static_cast<long>(state->data.size());
    std::vector<LabeledImage> out;
    for (long j = 0; j < batch; ++j) {
      const long g = step * batch + j;
      const long epoch = g / n;
      if (epoch != state->epoch) {
        state->perm.resize(static_cast<std::size_t>(n));
        std::iota(state->perm.begin(), state->perm.end(), std::size_t{0});
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(epoch)}));
        for (long i = n - 1; i > 0; --i)
          std::swap(state->perm[static_cast<std::size_t>(i)],
                    state->perm[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i)))]);
        state->epoch = epoch;
      }
      out.push_back(state->data[state->perm[static_cast<std::size_t>(g % n)]]);
    }
    return out;
  };
}

}  // namespace adyolo::detector
