#include "adyolo/patch/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adyolo/numcore/adam.hpp"
#include "adyolo/numcore/ops.hpp"
#include "adyolo/numcore/random.hpp"

namespace adyolo::attack {

using detector::DetectorModel;
using detector::LabeledImage;

void AttackConfig::validate() const {
  if (!(alpha >= 0) || !(beta >= 0)) throw std::invalid_argument("attack: alpha and beta must be >= 0");
  if (patch_side < 1) throw std::invalid_argument("attack: patch_side must be >= 1");
  if (steps < 0) throw std::invalid_argument("attack: steps must be >= 0");
  if (batch < 1) throw std::invalid_argument("attack: batch must be >= 1");
  if (!(lr.initial > 0) || !(lr.decay > 0) || lr.decay_epochs < 1)
    throw std::invalid_argument("attack: invalid learning-rate schedule");
  if (palette.empty()) throw std::invalid_argument("attack: palette is empty");
  transforms.validate();
}

std::vector<Color> load_palette(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open palette " + path);
  std::vector<Color> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    Color c;
    if (!(ls >> c[0])) continue;
    std::string extra;
    if (!(ls >> c[1] >> c[2]) || (ls >> extra))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected three values");
    for (Real v : c)
      if (!(v >= 0 && v <= 1)) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": value outside [0, 1]");
    out.push_back(c);
  }
  if (out.empty()) throw std::runtime_error("palette " + path + " has no colors");
  return out;
}

Tensor palette_tensor(std::span<const Color> palette) {
  Tensor t(Shape{static_cast<int>(palette.size()), 3});
  for (std::size_t k = 0; k < palette.size(); ++k)
    for (int c = 0; c < 3; ++c) t[k * 3 + c] = palette[k][static_cast<std::size_t>(c)];
  return t;
}

Var loss_nps(const Var& patch, const Tensor& palette) {
  const Tensor& v = patch.value();
  if (v.rank() != 3 || v.dim(2) != 3) throw ShapeError("loss_nps: expected [p, p, 3], got " + shape_string(v.shape()));
  const Var rows = ops::reshape(patch, {v.dim(0) * v.dim(1), 3});
  return ops::sum(ops::sqrt(ops::min_last(ops::sq_dist_rows(rows, palette))));
}

Var loss_tv(const Var& patch) {
  const Tensor& v = patch.value();
  if (v.rank() != 3) throw ShapeError("loss_tv: expected [p, p, C], got " + shape_string(v.shape()));
  const int H = v.dim(0), W = v.dim(1), C = v.dim(2);
  Tensor mask(v.shape(), 1.0);
  for (int c = 0; c < C; ++c) mask[(static_cast<std::size_t>(H - 1) * W + (W - 1)) * C + c] = 0;
  const Var dy = ops::diff(patch, 0), dx = ops::diff(patch, 1);
  const Var mag = ops::sqrt(ops::add_scalar(ops::add(ops::square(dx), ops::square(dy)), 1e-8));
  return ops::sum(ops::mul(mag, patch.tape()->constant(std::move(mask))));
}

namespace {

Var max_objectness(const DetectorModel& model, std::span<const Var> params, const Var& image) {
  const Var raw = detector::forward(model, params, image);
  return ops::max_all(ops::sigmoid(ops::slice_last(raw, 4, 5)));
}

}  // namespace

Var loss_obj(const DetectorModel& model, std::span<const Var> params, std::span<const Var> images) {
  if (images.empty()) throw std::invalid_argument("loss_obj: empty batch");
  Var total = max_objectness(model, params, images[0]);
  for (std::size_t i = 1; i < images.size(); ++i) total = ops::add(total, max_objectness(model, params, images[i]));
  return ops::scale(total, Real{1} / static_cast<Real>(images.size()));
}

std::vector<long> trajectory_snapshots(long steps, int count, Real earliest_fraction) {
  if (count < 1) throw std::invalid_argument("trajectory_snapshots: count must be >= 1");
  if (steps < count) throw std::invalid_argument("trajectory_snapshots: fewer steps than snapshots");
  if (count == 1) return {steps};
  long interval = steps / count;
  const long earliest = static_cast<long>(std::ceil(earliest_fraction * static_cast<Real>(steps)));
  if (steps - (count - 1) * interval < earliest) interval = (steps - earliest) / (count - 1);
  if (interval < 1) throw std::invalid_argument("trajectory_snapshots: run too short for the requested spacing");
  std::vector<long> out;
  for (int k = 0; k < count; ++k) out.push_back(steps - (count - 1 - k) * interval);
  return out;
}

namespace {

std::string snapshot_id(const std::string& run_id, long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-s%05ld", step);
  return run_id + buf;
}

}  // namespace

AttackResult optimize_patch(const DetectorModel& model, std::span<const LabeledImage> scenes,
                            const AttackConfig& config, std::span<const long> snapshot_steps, const std::string& run_id) {
  config.validate();
  if (scenes.empty()) throw std::invalid_argument("optimize_patch: no scenes");
  for (long s : snapshot_steps)
    if (s < 1 || s > config.steps) throw std::invalid_argument("optimize_patch: snapshot step outside the run");

  const int p = config.patch_side;
  Tensor delta(Shape{p, p, 3});
  {
    Rng rng(derive_seed(config.seed, {0}));
    for (Real& v : delta.values()) v = uniform(rng, 0, 1);
  }
  const Tensor palette = palette_tensor(config.palette);
  const Real reg_norm = config.normalize_regularizers ? Real{1} / static_cast<Real>(delta.size()) : Real{1};
  const long steps_per_epoch = (static_cast<long>(scenes.size()) + config.batch - 1) / config.batch;
  const detector::BatchSource sampler = detector::epoch_sampler(
      std::vector<LabeledImage>(scenes.begin(), scenes.end()), config.batch, derive_seed(config.seed, {1}));

  Adam adam(std::span<const Tensor>(&delta, 1));
  AttackResult result;
  auto make_patch = [&](const std::string& id, long step, Real objective) {
    return patch::Patch{id, delta, {model.id, config.seed, step, objective}};
  };

  for (long step = 0; step < config.steps; ++step) {
    const std::vector<LabeledImage> batch = sampler(step);
    const auto n = static_cast<long>(batch.size());
    std::vector<Tensor> grads(batch.size());
    std::vector<Real> objs(batch.size());
    std::vector<std::string> errors(batch.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      try {
        Tape tape;
        const Var d = tape.leaf(delta);
        const std::vector<Var> params = detector::bind_params(tape, model, false);
        const auto transforms = patch::sample_scene_transforms(
            derive_seed(config.seed, {2, static_cast<std::uint64_t>(step), k}), batch[k].labels, config.transforms);
        const Var img = patch::apply_var(d, tape.constant(batch[k].image), batch[k].labels, transforms, config.transforms);
        const Var obj = max_objectness(model, params, img);
        objs[k] = obj.value().item();
        grads[k] = std::move(tape.grad(obj, std::span<const Var>(&d, 1))[0]);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
    for (const std::string& e : errors)
      if (!e.empty()) throw NumericalError("attack step " + std::to_string(step) + ": " + e, step);

    Tape reg_tape;
    const Var d = reg_tape.leaf(delta);
    const Var nps = loss_nps(d, palette);
    const Var tv = loss_tv(d);
    const Var reg = ops::add(ops::scale(nps, config.alpha * reg_norm), ops::scale(tv, config.beta * reg_norm));
    Tensor g = reg_tape.grad(reg, std::span<const Var>(&d, 1))[0];

    Real j_obj = 0;
    const Real inv = Real{1} / static_cast<Real>(n);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      j_obj += objs[i];
      for (std::size_t e = 0; e < g.size(); ++e) g[e] += grads[i][e] * inv;
    }
    j_obj *= inv;
    const TraceRow row{step, reg.value().item() + j_obj, j_obj, tv.value().item(), nps.value().item()};
    if (!std::isfinite(row.j) || !g.all_finite())
      throw NumericalError("attack objective is not finite at step " + std::to_string(step), step);
    result.trace.push_back(row);

    const long epoch = step / steps_per_epoch;
    const Real lr = config.lr.initial * std::pow(config.lr.decay, static_cast<Real>(epoch / config.lr.decay_epochs));
    Tensor* slot = &delta;
    adam.step(std::span<Tensor* const>(&slot, 1), std::span<const Tensor>(&g, 1), lr);
    for (Real& v : delta.values()) v = std::clamp<Real>(v, 0, 1);

    const long done = step + 1;
    if (std::find(snapshot_steps.begin(), snapshot_steps.end(), done) != snapshot_steps.end())
      result.snapshots.push_back(make_patch(snapshot_id(run_id, done), done, row.j));
  }
  result.final = make_patch(run_id, config.steps, result.trace.empty() ? 0 : result.trace.back().j);
  return result;
}

void write_trace(const std::string& path, std::span<const TraceRow> trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace " + path);
  out << "step\tJ\tJ_obj\tJ_tv\tJ_nps\n";
  char buf[160];
  for (const TraceRow& r : trace) {
    std::snprintf(buf, sizeof buf, "%ld\t%.17g\t%.17g\t%.17g\t%.17g\n", r.step, r.j, r.j_obj, r.j_tv, r.j_nps);
    out << buf;
  }
}

std::vector<TraceRow> read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace " + path);
  std::string line;
  std::getline(in, line);
  std::vector<TraceRow> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    TraceRow r;
    if (!(ls >> r.step >> r.j >> r.j_obj >> r.j_tv >> r.j_nps)) throw std::runtime_error("bad trace line in " + path);
    out.push_back(r);
  }
  return out;
}

}  // namespace adyolo::attack
