#include "adyolo/patch/apply.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "adyolo/numcore/random.hpp"
#include "adyolo/numcore/serialize.hpp"
#include "adyolo/scenesynth/scenes.hpp"

namespace adyolo::patch {

namespace fs = std::filesystem;
using detector::GroundTruthBox;

void TransformConfig::validate() const {
  const std::pair<const char*, Bound> all[] = {{"rotation", rotation},     {"scale", scale},
                                               {"jitter_x", jitter_x},     {"jitter_y", jitter_y},
                                               {"brightness", brightness}, {"contrast", contrast},
                                               {"noise", noise}};
  for (const auto& [name, b] : all) {
    if (!(b.lo <= b.hi)) throw std::invalid_argument(std::string("transform bound '") + name + "' is inverted");
  }
  if (!(scale.lo > 0)) throw std::invalid_argument("transform scale must be positive");
  if (!(noise.lo >= 0)) throw std::invalid_argument("transform noise amplitude must be non-negative");
}

TransformSample sample_transform(std::uint64_t seed, const TransformConfig& config) {
  config.validate();
  Rng rng(seed);
  TransformSample t;
  t.rotation = uniform(rng, config.rotation.lo, config.rotation.hi);
  t.scale = uniform(rng, config.scale.lo, config.scale.hi);
  t.jitter_x = uniform(rng, config.jitter_x.lo, config.jitter_x.hi);
  t.jitter_y = uniform(rng, config.jitter_y.lo, config.jitter_y.hi);
  t.brightness = uniform(rng, config.brightness.lo, config.brightness.hi);
  t.contrast = uniform(rng, config.contrast.lo, config.contrast.hi);
  t.noise_amplitude = uniform(rng, config.noise.lo, config.noise.hi);
  t.noise_seed = rng();
  return t;
}

namespace {

// One covered output element and its bilinear source taps in the patch.
struct Entry {
  std::size_t out = 0;
  std::size_t src[4] = {};
  Real w[4] = {};
  Real gain = 1;
  Real offset = 0;
};

struct Plan {
  std::vector<Entry> entries;  // three per covered pixel, last writer only
  std::vector<GroundTruthBox> patch_boxes;
  std::vector<Application> applied;
};

Plan make_plan(int H, int W, int p, std::span<const GroundTruthBox> labels, std::span<const TransformSample> transforms,
               const TransformConfig& config) {
  std::size_t persons = 0;
  for (const GroundTruthBox& g : labels) persons += g.class_id == config.person_class;
  if (transforms.size() != persons) {
    throw std::invalid_argument("apply: " + std::to_string(transforms.size()) + " transforms for " +
                                std::to_string(persons) + " person boxes");
  }
  Plan plan;
  std::vector<int> slot(static_cast<std::size_t>(H) * W, -1);
  std::size_t next = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const GroundTruthBox& g = labels[k];
    if (g.class_id != config.person_class) continue;
    const TransformSample& t = transforms[next++];
    Application app{static_cast<int>(k), t, "", false};
    const Real bw = g.w * W, bh = g.h * H;
    const Real side = t.scale * std::min(bw, bh);
    if (!(side >= 2)) {
      app.skipped = true;
      plan.applied.push_back(app);
      continue;
    }
    const Real ccx = g.cx * W + t.jitter_x * bw;
    const Real ccy = (g.cy - config.chest_offset * g.h) * H + t.jitter_y * bh;
    const Real theta = t.rotation * std::numbers::pi / 180;
    const Real cs = std::cos(theta), sn = std::sin(theta);

    // Rotated square corners give both the scan region and the patch box.
    Real x0 = ccx, x1 = ccx, y0 = ccy, y1 = ccy;
    for (Real sx : {-0.5, 0.5})
      for (Real sy : {-0.5, 0.5}) {
        const Real px = ccx + side * (cs * sx - sn * sy);
        const Real py = ccy + side * (sn * sx + cs * sy);
        x0 = std::min(x0, px), x1 = std::max(x1, px);
        y0 = std::min(y0, py), y1 = std::max(y1, py);
      }
    const Real bx0 = std::clamp<Real>(x0, 0, W), bx1 = std::clamp<Real>(x1, 0, W);
    const Real by0 = std::clamp<Real>(y0, 0, H), by1 = std::clamp<Real>(y1, 0, H);
    if (!(bx1 > bx0 && by1 > by0)) {
      app.skipped = true;
      plan.applied.push_back(app);
      continue;
    }
    plan.patch_boxes.push_back({-1, (bx0 + bx1) / (2 * W), (by0 + by1) / (2 * H), (bx1 - bx0) / W, (by1 - by0) / H});
    plan.applied.push_back(app);

    const int row0 = std::max(0, static_cast<int>(std::floor(y0))), row1 = std::min(H - 1, static_cast<int>(std::ceil(y1)));
    const int col0 = std::max(0, static_cast<int>(std::floor(x0))), col1 = std::min(W - 1, static_cast<int>(std::ceil(x1)));
    const Real half = side / 2;
    for (int y = row0; y <= row1; ++y)
      for (int x = col0; x <= col1; ++x) {
        const Real dx = x + 0.5 - ccx, dy = y + 0.5 - ccy;
        const Real lx = cs * dx + sn * dy, ly = -sn * dx + cs * dy;
        if (std::abs(lx) > half || std::abs(ly) > half) continue;
        const Real u = (lx / side + 0.5) * p - 0.5, v = (ly / side + 0.5) * p - 0.5;
        const Real fu = std::floor(u), fv = std::floor(v);
        const Real au = u - fu, av = v - fv;
        const int u0 = std::clamp(static_cast<int>(fu), 0, p - 1), u1 = std::clamp(static_cast<int>(fu) + 1, 0, p - 1);
        const int v0 = std::clamp(static_cast<int>(fv), 0, p - 1), v1 = std::clamp(static_cast<int>(fv) + 1, 0, p - 1);
        const std::size_t pix = static_cast<std::size_t>(y) * W + x;
        if (slot[pix] < 0) {
          slot[pix] = static_cast<int>(plan.entries.size());
          plan.entries.resize(plan.entries.size() + 3);
        }
        for (int c = 0; c < 3; ++c) {
          Entry& e = plan.entries[static_cast<std::size_t>(slot[pix]) + c];
          e.out = pix * 3 + c;
          auto tap = [&](int row, int col) { return (static_cast<std::size_t>(row) * p + col) * 3 + c; };
          e.src[0] = tap(v0, u0), e.w[0] = (1 - av) * (1 - au);
          e.src[1] = tap(v0, u1), e.w[1] = (1 - av) * au;
          e.src[2] = tap(v1, u0), e.w[2] = av * (1 - au);
          e.src[3] = tap(v1, u1), e.w[3] = av * au;
          e.gain = t.contrast;
          e.offset = t.brightness + t.noise_amplitude * hashed_signed_unit(t.noise_seed, e.out);
        }
      }
  }
  return plan;
}

Real raw_value(const Entry& e, const Tensor& patch) {
  Real s = 0;
  for (int i = 0; i < 4; ++i) s += e.w[i] * patch[e.src[i]];
  return e.gain * s + e.offset;
}

void check_inputs(const Tensor& patch, const Tensor& image) {
  if (patch.rank() != 3 || patch.dim(0) != patch.dim(1) || patch.dim(2) != 3)
    throw ShapeError("apply: patch must be [p, p, 3], got " + shape_string(patch.shape()));
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeError("apply: image must be [H, W, 3], got " + shape_string(image.shape()));
}

}  // namespace

PatchedScene apply(const Patch& patch, const detector::LabeledImage& scene, std::span<const TransformSample> transforms,
                   int patch_class_id, const TransformConfig& config) {
  check_inputs(patch.pixels, scene.image);
  const Plan plan = make_plan(scene.image.dim(0), scene.image.dim(1), patch.pixels.dim(0), scene.labels, transforms, config);
  PatchedScene out;
  out.image = scene.image;
  for (const Entry& e : plan.entries) out.image[e.out] = std::clamp<Real>(raw_value(e, patch.pixels), 0, 1);
  out.labels = scene.labels;
  for (GroundTruthBox b : plan.patch_boxes) {
    b.class_id = patch_class_id;
    out.labels.push_back(b);
  }
  out.applied = plan.applied;
  for (Application& a : out.applied) a.patch_id = patch.id;
  return out;
}

Var apply_var(const Var& patch, const Var& image, std::span<const GroundTruthBox> labels,
              std::span<const TransformSample> transforms, const TransformConfig& config) {
  const Tensor& pv = patch.value();
  const Tensor& iv = image.value();
  check_inputs(pv, iv);
  auto plan = std::make_shared<Plan>(make_plan(iv.dim(0), iv.dim(1), pv.dim(0), labels, transforms, config));
  Tensor out = iv;
  auto live = std::make_shared<std::vector<char>>(plan->entries.size());
  for (std::size_t i = 0; i < plan->entries.size(); ++i) {
    const Entry& e = plan->entries[i];
    const Real v = raw_value(e, pv);
    (*live)[i] = v > 0 && v < 1;
    out[e.out] = std::clamp<Real>(v, 0, 1);
  }
  return patch.tape()->record(
      std::move(out), {patch, image},
      [plan, live](const Tensor& g, std::span<Tensor* const> grads) {
        if (Tensor* gi = grads[1]) {
          Tensor pass = g;
          for (const Entry& e : plan->entries) pass[e.out] = 0;
          for (std::size_t j = 0; j < pass.size(); ++j) (*gi)[j] += pass[j];
        }
        if (Tensor* gp = grads[0]) {
          for (std::size_t i = 0; i < plan->entries.size(); ++i) {
            if (!(*live)[i]) continue;
            const Entry& e = plan->entries[i];
            const Real up = g[e.out] * e.gain;
            for (int k = 0; k < 4; ++k) (*gp)[e.src[k]] += up * e.w[k];
          }
        }
      },
      "composite_patch");
}

std::vector<TransformSample> sample_scene_transforms(std::uint64_t seed, std::span<const GroundTruthBox> labels,
                                                     const TransformConfig& config) {
  std::vector<TransformSample> out;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k].class_id == config.person_class) out.push_back(sample_transform(derive_seed(seed, {k}), config));
  return out;
}

std::vector<PatchedScene> random_apply_dataset(std::span<const Patch> patches,
                                               std::span<const detector::LabeledImage> scenes, std::uint64_t seed,
                                               int patch_class_id, const TransformConfig& config) {
  if (patches.empty()) throw std::invalid_argument("random_apply_dataset: empty patch set");
  config.validate();
  // Patch indices cycled to the scene count, then shuffled: every scene sees
  // each patch with equal probability and usage counts differ by at most one.
  std::vector<std::size_t> picks(scenes.size());
  for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i % patches.size();
  Rng rng(derive_seed(seed, {0xa55157}));
  for (std::size_t i = picks.size(); i > 1; --i)
    std::swap(picks[i - 1], picks[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i) - 1))]);

  std::vector<PatchedScene> out(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Patch& pick = patches[picks[i]];
    const auto transforms = sample_scene_transforms(derive_seed(seed, {i, 1}), scenes[i].labels, config);
    out[i] = apply(pick, scenes[i], transforms, patch_class_id, config);
  }
  return out;
}

std::vector<GroundTruthBox> without_class(std::span<const GroundTruthBox> labels, int class_id) {
  std::vector<GroundTruthBox> out;
  for (const GroundTruthBox& g : labels)
    if (g.class_id != class_id) out.push_back(g);
  return out;
}

void save_patch(const std::string& dir, const Patch& patch) {
  fs::create_directories(dir);
  const fs::path base = fs::path(dir) / patch.id;
  save_tensor_file(base.string() + ".tensor", patch.pixels);
  const nlohmann::json meta = {{"id", patch.id},
                               {"side", patch.pixels.dim(0)},
                               {"source_model", patch.provenance.source_model},
                               {"run_seed", patch.provenance.run_seed},
                               {"step", patch.provenance.step},
                               {"objective", patch.provenance.objective}};
  std::ofstream(base.string() + ".json") << meta.dump(2) << '\n';
  scenes::write_ppm(base.string() + ".ppm", patch.pixels);
}

Patch load_patch(const std::string& dir, const std::string& id) {
  const fs::path base = fs::path(dir) / id;
  std::ifstream in(base.string() + ".json");
  if (!in) throw std::runtime_error("missing patch metadata " + base.string() + ".json");
  const nlohmann::json meta = nlohmann::json::parse(in);
  Patch p;
  p.id = meta.at("id").get<std::string>();
  if (p.id != id) throw std::runtime_error("patch metadata id mismatch in " + base.string() + ".json");
  p.provenance.source_model = meta.at("source_model").get<std::string>();
  p.provenance.run_seed = meta.at("run_seed").get<std::uint64_t>();
  p.provenance.step = meta.at("step").get<long>();
  p.provenance.objective = meta.at("objective").get<Real>();
  p.pixels = load_tensor_file(base.string() + ".tensor");
  if (p.pixels.rank() != 3 || p.pixels.dim(0) != meta.at("side").get<int>())
    throw std::runtime_error("patch tensor does not match metadata for " + id);
  return p;
}

}  // namespace adyolo::patch
