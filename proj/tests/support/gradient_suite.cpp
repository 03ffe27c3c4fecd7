#include "gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adyolo/detector/detector.hpp"
#include "adyolo/numcore/ops.hpp"
#include "adyolo/patch/apply.hpp"
#include "adyolo/patch/attack.hpp"

namespace testsupport {

namespace ops = adyolo::ops;
namespace det = adyolo::detector;
using adyolo::derive_seed;
using adyolo::Rng;

GradCheck merge(GradCheck a, const GradCheck& b) {
  if (a.failed == 0 && b.failed > 0) a.first_failure = b.first_failure;
  a.checked += b.checked;
  a.skipped += b.skipped;
  a.failed += b.failed;
  a.worst = std::max(a.worst, b.worst);
  return a;
}

namespace {

// Random linear functional of a tensor-valued output, so every output element
// contributes a distinct weight to the scalar under test.
Var probe(const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(out, out.tape()->constant(random_tensor(out.shape(), rng))));
}

using UnaryOp = std::function<Var(const Var&)>;

GradientCase unary(std::string name, UnaryOp op, std::function<Tensor(Rng&)> input) {
  return {name, [op, input](std::uint64_t seed) {
            Rng rng(seed);
            const Tensor x = input(rng);
            return check_gradient([&](Tape&, const Var& v) { return probe(op(v), seed ^ 0x5eed); }, x);
          }};
}

using BinaryOp = std::function<Var(const Var&, const Var&)>;

// Checks both operands, each with the other held constant.
GradientCase binary(std::string name, BinaryOp op, std::function<Tensor(Rng&)> a_in, std::function<Tensor(Rng&)> b_in) {
  return {name, [op, a_in, b_in](std::uint64_t seed) {
            Rng rng(seed);
            const Tensor a = a_in(rng), b = b_in(rng);
            const GradCheck ga = check_gradient(
                [&](Tape& t, const Var& v) { return probe(op(v, t.constant(b)), seed ^ 0x5eed); }, a);
            const GradCheck gb = check_gradient(
                [&](Tape& t, const Var& v) { return probe(op(t.constant(a), v), seed ^ 0x5eed); }, b);
            return merge(ga, gb);
          }};
}

std::function<Tensor(Rng&)> uniform_in(Shape shape, double lo, double hi) {
  return [shape, lo, hi](Rng& rng) { return random_tensor(shape, rng, lo, hi); };
}

// Shuffled, well separated values so max/min keep their arg under the step.
std::function<Tensor(Rng&)> separated(Shape shape) {
  return [shape](Rng& rng) {
    Tensor t(shape);
    std::vector<int> order(t.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * order[i] + adyolo::uniform(rng, -0.02, 0.02);
    return t;
  };
}

}  // namespace

std::vector<GradientCase> op_gradient_cases() {
  const Shape s{3, 4};
  std::vector<GradientCase> cases;
  cases.push_back(binary("add", ops::add, uniform_in(s, -1, 1), uniform_in(s, -1, 1)));
  cases.push_back(binary("sub", ops::sub, uniform_in(s, -1, 1), uniform_in(s, -1, 1)));
  cases.push_back(binary("mul", ops::mul, uniform_in(s, -1, 1), uniform_in(s, -1, 1)));
  cases.push_back(unary("scale", [](const Var& x) { return ops::scale(x, -1.7); }, uniform_in(s, -1, 1)));
  cases.push_back(unary("add_scalar", [](const Var& x) { return ops::add_scalar(x, 0.3); }, uniform_in(s, -1, 1)));
  cases.push_back(unary("square", ops::square, uniform_in(s, -1, 1)));
  cases.push_back(unary("sqrt", ops::sqrt, uniform_in(s, 0.05, 2)));
  cases.push_back(unary("exp", ops::exp, uniform_in(s, -2, 2)));
  cases.push_back(unary("log", ops::log, uniform_in(s, 0.1, 3)));
  cases.push_back(unary("sigmoid", ops::sigmoid, uniform_in(s, -4, 4)));
  cases.push_back(unary("leaky_relu", [](const Var& x) { return ops::leaky_relu(x, 0.1); },
                        [s](Rng& rng) { return random_away_from_zero(s, rng); }));
  cases.push_back(unary("sum", ops::sum, uniform_in(s, -1, 1)));
  cases.push_back(unary("mean", ops::mean, uniform_in(s, -1, 1)));
  cases.push_back(unary("max_all", ops::max_all, separated(s)));
  cases.push_back(unary("min_last", ops::min_last, separated(s)));
  cases.push_back(unary("softmax", ops::softmax, uniform_in(s, -2, 2)));
  cases.push_back(unary("log_softmax", ops::log_softmax, uniform_in(s, -2, 2)));
  cases.push_back(unary("reshape", [](const Var& x) { return ops::reshape(x, {2, 6}); }, uniform_in(s, -1, 1)));
  cases.push_back(unary("slice_last", [](const Var& x) { return ops::slice_last(x, 1, 3); }, uniform_in(s, -1, 1)));
  cases.push_back(unary("diff_rows", [](const Var& x) { return ops::diff(x, 0); }, uniform_in({3, 4, 2}, -1, 1)));
  cases.push_back(unary("diff_cols", [](const Var& x) { return ops::diff(x, 1); }, uniform_in({3, 4, 2}, -1, 1)));
  cases.push_back({"sq_dist_rows", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const Tensor x = random_tensor({5, 3}, rng, 0, 1), c = random_tensor({4, 3}, rng, 0, 1);
                     return check_gradient(
                         [&](Tape&, const Var& v) { return probe(ops::sq_dist_rows(v, c), seed ^ 0x5eed); }, x);
                   }});
  cases.push_back(binary("conv2d_s1", [](const Var& x, const Var& k) { return ops::conv2d(x, k, 1, 1); },
                         uniform_in({5, 5, 2}, -1, 1), uniform_in({3, 3, 2, 3}, -1, 1)));
  cases.push_back(binary("conv2d_s2", [](const Var& x, const Var& k) { return ops::conv2d(x, k, 2, 1); },
                         uniform_in({6, 6, 2}, -1, 1), uniform_in({3, 3, 2, 2}, -1, 1)));
  cases.push_back(binary("add_bias", ops::add_bias, uniform_in({3, 3, 4}, -1, 1), uniform_in({4}, -1, 1)));
  return cases;
}

namespace {

// The nearest-color distance has a kink wherever two palette colors are
// equally near; redraw pixels until the two nearest differ by a margin.
Tensor off_voronoi_patch(const Shape& shape, const Tensor& palette, Rng& rng) {
  Tensor t(shape);
  const int K = palette.dim(0);
  for (std::size_t px = 0; px < t.size(); px += 3) {
    for (;;) {
      for (int c = 0; c < 3; ++c) t[px + c] = adyolo::uniform(rng, 0, 1);
      std::vector<double> d;
      for (int k = 0; k < K; ++k) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) d2 += (t[px + c] - palette[k * 3 + c]) * (t[px + c] - palette[k * 3 + c]);
        d.push_back(std::sqrt(d2));
      }
      std::sort(d.begin(), d.end());
      if (d[1] - d[0] > 0.02) break;
    }
  }
  return t;
}

det::DetectorModel random_toy(std::uint64_t seed) {
  det::DetectorModel m = det::make_model(toy_config(), seed);
  // Nonzero biases so the head is not near-symmetric.
  Rng rng(derive_seed(seed, {7}));
  for (auto& p : m.params)
    if (p.name.ends_with(".bias"))
      for (Real& v : p.value.values()) v = adyolo::uniform(rng, -0.3, 0.3);
  return m;
}

std::vector<det::GroundTruthBox> random_truths(Rng& rng, int n, int classes) {
  std::vector<det::GroundTruthBox> out;
  for (int i = 0; i < n; ++i) {
    det::GroundTruthBox b;
    b.class_id = adyolo::uniform_int(rng, 0, classes - 1);
    b.w = adyolo::uniform(rng, 0.1, 0.6);
    b.h = adyolo::uniform(rng, 0.1, 0.8);
    b.cx = adyolo::uniform(rng, b.w / 2, 1 - b.w / 2);
    b.cy = adyolo::uniform(rng, b.h / 2, 1 - b.h / 2);
    out.push_back(b);
  }
  return out;
}

// Loss over a fixed raw target set: the targets are functions of the forward
// pass but enter the loss as constants, so they are computed once at the
// unperturbed point.
GradCheck detector_loss_wrt_param(std::uint64_t seed, const std::string& name, std::size_t stride) {
  Rng rng(seed);
  const det::DetectorModel model = random_toy(seed);
  const Tensor image = random_tensor({32, 32, 3}, rng, 0, 1);
  const auto truths = random_truths(rng, 2, model.config.num_classes());
  const det::LossTargets targets = det::compute_targets(det::forward(model, image), truths, model.config);
  std::size_t index = 0;
  while (model.params[index].name != name) ++index;
  return check_gradient(
      [&](Tape& tape, const Var& leaf) {
        std::vector<Var> params = det::bind_params(tape, model, false);
        params[index] = leaf;
        const Var raw = det::forward(model, params, tape.constant(image));
        return det::loss_from_targets(raw, targets, model.config);
      },
      model.params[index].value, 1e-3, 1e-3, 1e-6, stride);
}

}  // namespace

std::vector<GradientCase> composite_gradient_cases() {
  std::vector<GradientCase> cases;
  cases.push_back({"J_nps", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const Tensor palette = random_tensor({6, 3}, rng, 0, 1);
                     const Tensor patch = off_voronoi_patch({5, 5, 3}, palette, rng);
                     return check_gradient([&](Tape&, const Var& v) { return adyolo::attack::loss_nps(v, palette); },
                                           patch);
                   }});
  cases.push_back({"J_tv", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const Tensor patch = random_tensor({5, 5, 3}, rng, 0, 1);
                     return check_gradient([](Tape&, const Var& v) { return adyolo::attack::loss_tv(v); }, patch);
                   }});
  cases.push_back({"J_obj", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const det::DetectorModel model = random_toy(seed);
                     const Tensor a = random_tensor({32, 32, 3}, rng, 0, 1);
                     const Tensor b = random_tensor({32, 32, 3}, rng, 0, 1);
                     return check_gradient(
                         [&](Tape& tape, const Var& v) {
                           const auto params = det::bind_params(tape, model, false);
                           const Var imgs[] = {v, tape.constant(b)};
                           return adyolo::attack::loss_obj(model, params, imgs);
                         },
                         a, 1e-3, 1e-3, 1e-6, 7);
                   }});
  cases.push_back({"detector_loss_raw", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const auto cfg = toy_config();
                     const Tensor raw = random_tensor({4, 4, cfg.num_anchors(), cfg.anchor_width()}, rng, -2, 2);
                     const auto truths = random_truths(rng, 3, cfg.num_classes());
                     const det::LossTargets targets = det::compute_targets(raw, truths, cfg);
                     return check_gradient(
                         [&](Tape&, const Var& v) { return det::loss_from_targets(v, targets, cfg); }, raw);
                   }});
  cases.push_back({"detector_loss_head", [](std::uint64_t seed) {
                     return detector_loss_wrt_param(seed, "head.weight", 1);
                   }});
  cases.push_back({"detector_loss_conv0", [](std::uint64_t seed) {
                     return detector_loss_wrt_param(seed, "conv0.weight", 3);
                   }});
  cases.push_back({"attack_objective_patch", [](std::uint64_t seed) {
                     // dJ/d(delta) through apply and forward, with the weighted
                     // regularizers as the attack uses them.
                     Rng rng(seed);
                     // A wide host and a louder head put the most confident anchor
                     // under the patch, so the detector term has a nonzero gradient.
                     det::DetectorModel model = random_toy(seed);
                     for (Real& w : model.param("head.weight").values()) w *= 10;
                     const Tensor image = random_tensor({32, 32, 3}, rng, 0, 1);
                     const std::vector<det::GroundTruthBox> labels{{0, 0.5, 0.6, 1.0, 0.8}};
                     const Tensor patch = random_tensor({6, 6, 3}, rng, 0.2, 0.8);
                     adyolo::patch::TransformConfig tc;
                     tc.scale = {0.85, 0.9};
                     tc.noise = {0.02, 0.02};
                     tc.brightness = {-0.05, 0.05};
                     tc.contrast = {0.9, 1.1};
                     const auto transforms = adyolo::patch::sample_scene_transforms(derive_seed(seed, {1}), labels, tc);
                     const Tensor palette = random_tensor({5, 3}, rng, 0, 1);
                     const Real norm = 1.0 / (3 * 6 * 6);
                     return check_gradient(
                         [&](Tape& tape, const Var& v) {
                           const auto params = det::bind_params(tape, model, false);
                           const Var composite =
                               adyolo::patch::apply_var(v, tape.constant(image), labels, transforms, tc);
                           const Var imgs[] = {composite};
                           Var j = adyolo::attack::loss_obj(model, params, imgs);
                           j = ops::add(j, ops::scale(adyolo::attack::loss_nps(v, palette), 0.01 * norm));
                           return ops::add(j, ops::scale(adyolo::attack::loss_tv(v), 2.5 * norm));
                         },
                         patch, 1e-4);  // the TV smoothing scale is ~1e-4, so wider steps see its curvature
                   }});
  return cases;
}

}  // namespace testsupport
