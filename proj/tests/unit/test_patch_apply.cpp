#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "../support/gradcheck.hpp"
#include "adyolo/numcore/ops.hpp"
#include "adyolo/patch/apply.hpp"

using namespace adyolo;
using namespace adyolo::patch;
using detector::GroundTruthBox;
using detector::LabeledImage;
using testsupport::random_tensor;

namespace {

TransformConfig point_config(const TransformSample& t) {
  TransformConfig c;
  c.rotation = {t.rotation, t.rotation};
  c.scale = {t.scale, t.scale};
  c.jitter_x = {t.jitter_x, t.jitter_x};
  c.jitter_y = {t.jitter_y, t.jitter_y};
  c.brightness = {t.brightness, t.brightness};
  c.contrast = {t.contrast, t.contrast};
  c.noise = {t.noise_amplitude, t.noise_amplitude};
  return c;
}

TransformSample identity(Real scale) {
  TransformSample t;
  t.scale = scale;
  t.noise_amplitude = 0;
  return t;
}

Patch random_patch(int p, std::uint64_t seed, const std::string& id = "pt") {
  Rng rng(seed);
  return {id, random_tensor({p, p, 3}, rng, 0, 1), {}};
}

// Axis-aligned warp sampled at pixel centers with clamped bilinear taps.
Real oracle_pixel(const Tensor& patch, Real u, Real v, int c) {
  const int p = patch.dim(0);
  auto at = [&](int row, int col) {
    row = std::clamp(row, 0, p - 1);
    col = std::clamp(col, 0, p - 1);
    return patch[(static_cast<std::size_t>(row) * p + col) * 3 + c];
  };
  const int u0 = static_cast<int>(std::floor(u)), v0 = static_cast<int>(std::floor(v));
  const Real a = u - u0, b = v - v0;
  return (1 - b) * ((1 - a) * at(v0, u0) + a * at(v0, u0 + 1)) + b * ((1 - a) * at(v0 + 1, u0) + a * at(v0 + 1, u0 + 1));
}

}  // namespace

TEST_CASE("collapsed bounds give that exact transform") {
  TransformSample want;
  want.rotation = 7.5;
  want.scale = 0.33;
  want.jitter_x = -0.02;
  want.jitter_y = 0.01;
  want.brightness = 0.04;
  want.contrast = 1.1;
  want.noise_amplitude = 0.03;
  const TransformSample got = sample_transform(12, point_config(want));
  want.noise_seed = got.noise_seed;
  CHECK(got == want);
  CHECK(sample_transform(12, TransformConfig{}) == sample_transform(12, TransformConfig{}));
  TransformConfig bad;
  bad.scale = {0.4, 0.3};
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(sample_transform(1, bad));
}

TEST_CASE("samples respect the configured bounds") {
  const TransformConfig c;
  double rotation_sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const TransformSample t = sample_transform(derive_seed(3, {static_cast<std::uint64_t>(i)}), c);
    REQUIRE(t.rotation >= -20);
    REQUIRE(t.rotation <= 20);
    REQUIRE(t.scale >= 0.25);
    REQUIRE(t.scale <= 0.4);
    REQUIRE(std::abs(t.jitter_x) <= 0.05);
    REQUIRE(std::abs(t.brightness) <= 0.1);
    REQUIRE(t.contrast >= 0.8);
    REQUIRE(t.contrast <= 1.2);
    rotation_sum += t.rotation;
  }
  CHECK(std::abs(rotation_sum / n) < 1.0);
}

TEST_CASE("zero person boxes leave the scene untouched") {
  Rng rng(1);
  const LabeledImage scene{random_tensor({32, 32, 3}, rng, 0, 1), {{1, 0.5, 0.5, 0.4, 0.3}}};
  const PatchedScene out = apply(random_patch(8, 2), scene, {}, 3, TransformConfig{});
  CHECK(out.image == scene.image);
  CHECK(out.labels == scene.labels);
  CHECK(out.applied.empty());
}

TEST_CASE("identity warp at native size copies the patch") {
  // Box min side 16 px, scale 0.5 -> an 8 px square centred on pixel corner (64, 64).
  const Patch patch = random_patch(8, 4);
  const LabeledImage scene{Tensor(Shape{128, 128, 3}, 0.25), {{0, 64 / 128.0, 70 / 128.0, 16 / 128.0, 40 / 128.0}}};
  const TransformSample t = identity(0.5);
  const PatchedScene out = apply(patch, scene, std::span(&t, 1), 3, TransformConfig{});
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x)
      for (int c = 0; c < 3; ++c) {
        const Real got = out.image[(static_cast<std::size_t>(y) * 128 + x) * 3 + c];
        if (x >= 60 && x < 68 && y >= 60 && y < 68)
          CHECK(std::abs(got - patch.pixels[(static_cast<std::size_t>(y - 60) * 8 + (x - 60)) * 3 + c]) < 1e-12);
        else
          CHECK(got == 0.25);
      }
  REQUIRE(out.labels.size() == 2);
  const GroundTruthBox& pb = out.labels[1];
  CHECK(pb.class_id == 3);
  CHECK(pb.cx == doctest::Approx(0.5));
  CHECK(pb.cy == doctest::Approx(0.5));
  CHECK(pb.w == doctest::Approx(8 / 128.0));
  CHECK(pb.h == doctest::Approx(8 / 128.0));
}

TEST_CASE("axis-aligned warps match the resampling oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Patch patch = random_patch(6, 100 + trial);
    const GroundTruthBox host{0, uniform(rng, 0.3, 0.7), uniform(rng, 0.4, 0.7), uniform(rng, 0.2, 0.5),
                              uniform(rng, 0.4, 0.6)};
    const LabeledImage scene{Tensor(Shape{64, 64, 3}, 0.5), {host}};
    TransformSample t = identity(uniform(rng, 0.25, 0.6));
    t.jitter_x = uniform(rng, -0.05, 0.05);
    t.jitter_y = uniform(rng, -0.05, 0.05);
    const PatchedScene out = apply(patch, scene, std::span(&t, 1), 3, TransformConfig{});
    const Real bw = host.w * 64, bh = host.h * 64, side = t.scale * std::min(bw, bh);
    const Real cx = host.cx * 64 + t.jitter_x * bw, cy = (host.cy - 0.15 * host.h) * 64 + t.jitter_y * bh;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const Real lx = x + 0.5 - cx, ly = y + 0.5 - cy;
        const bool covered = std::abs(lx) <= side / 2 && std::abs(ly) <= side / 2;
        for (int c = 0; c < 3; ++c) {
          const Real want =
              covered ? oracle_pixel(patch.pixels, (lx / side + 0.5) * 6 - 0.5, (ly / side + 0.5) * 6 - 0.5, c) : 0.5;
          REQUIRE(std::abs(out.image[(static_cast<std::size_t>(y) * 64 + x) * 3 + c] - want) < 1e-5);
        }
      }
  }
}

TEST_CASE("mid-gray patch with +0.1 brightness") {
  const Patch gray{"gray", Tensor(Shape{8, 8, 3}, 0.5), {}};
  const LabeledImage scene{Tensor(Shape{64, 64, 3}, 0.0), {{0, 0.5, 0.5, 0.4, 0.8}}};
  TransformSample t = identity(0.3);
  t.rotation = 13;
  t.brightness = 0.1;
  const PatchedScene out = apply(gray, scene, std::span(&t, 1), 3, TransformConfig{});
  int covered = 0;
  for (Real v : out.image.values()) {
    if (v == 0) continue;
    CHECK(v == doctest::Approx(0.6).epsilon(1e-12));
    ++covered;
  }
  CHECK(covered > 0);
}

TEST_CASE("too-small hosts are skipped and recorded") {
  const LabeledImage scene{Tensor(Shape{32, 32, 3}, 0.3),
                           {{0, 0.5, 0.5, 0.1, 0.1}, {2, 0.3, 0.3, 0.2, 0.2}, {0, 0.5, 0.5, 0.5, 0.8}}};
  const TransformSample ts[] = {identity(0.25), identity(0.25)};
  const PatchedScene out = apply(random_patch(6, 1), scene, ts, 3, TransformConfig{});
  REQUIRE(out.applied.size() == 2);
  CHECK(out.applied[0].skipped);
  CHECK(out.applied[0].label_index == 0);
  CHECK_FALSE(out.applied[1].skipped);
  CHECK(out.applied[1].label_index == 2);
  CHECK(out.labels.size() == 4);
  CHECK_THROWS(apply(random_patch(6, 1), scene, std::span(ts, 1), 3, TransformConfig{}));
}

TEST_CASE("labels are preserved, patch boxes sit inside the image on their host") {
  Rng rng(31);
  const TransformConfig c;
  for (int trial = 0; trial < 200; ++trial) {
    LabeledImage scene{random_tensor({48, 48, 3}, rng, 0, 1), {}};
    const int n = uniform_int(rng, 0, 4);
    for (int i = 0; i < n; ++i) {
      GroundTruthBox b{uniform_int(rng, 0, 2), 0, 0, uniform(rng, 0.1, 0.6), uniform(rng, 0.2, 0.9)};
      b.cx = uniform(rng, 0, 1);  // hosts may hang off the edge; the patch box is clipped
      b.cy = uniform(rng, 0, 1);
      scene.labels.push_back(b);
    }
    const auto ts = sample_scene_transforms(derive_seed(5, {static_cast<std::uint64_t>(trial)}), scene.labels, c);
    Patch patch = random_patch(8, trial);
    const PatchedScene out = apply(patch, scene, ts, 3, c);
    REQUIRE(out.labels.size() >= scene.labels.size());
    CHECK(std::vector<GroundTruthBox>(out.labels.begin(), out.labels.begin() + n) == scene.labels);
    CHECK(without_class(out.labels, 3) == scene.labels);
    std::size_t next_patch = scene.labels.size();
    for (const Application& a : out.applied) {
      if (a.skipped) continue;
      const GroundTruthBox& pb = out.labels[next_patch++];
      CHECK(pb.class_id == 3);
      CHECK(pb.cx - pb.w / 2 >= -1e-12);
      CHECK(pb.cx + pb.w / 2 <= 1 + 1e-12);
      CHECK(pb.cy - pb.h / 2 >= -1e-12);
      CHECK(pb.cy + pb.h / 2 <= 1 + 1e-12);
      CHECK(iou(pb.box(), scene.labels[a.label_index].box()) > 0);
    }
    for (Real v : out.image.values()) REQUIRE((v >= 0 && v <= 1));
  }
}

TEST_CASE("output pixels are clamped") {
  const Patch white{"w", Tensor(Shape{6, 6, 3}, 1.0), {}};
  const LabeledImage scene{Tensor(Shape{32, 32, 3}, 0.5), {{0, 0.5, 0.5, 0.5, 0.8}}};
  TransformSample t = identity(0.4);
  t.brightness = 0.3;
  t.contrast = 1.5;
  t.noise_amplitude = 0.2;
  t.noise_seed = 8;
  const PatchedScene out = apply(white, scene, std::span(&t, 1), 3, TransformConfig{});
  for (Real v : out.image.values()) CHECK((v >= 0 && v <= 1));
  CHECK(*std::max_element(out.image.values().begin(), out.image.values().end()) == 1.0);
}

TEST_CASE("composite Jacobian matches finite differences and respects the footprint") {
  Rng rng(41);
  const Tensor image = random_tensor({24, 24, 3}, rng, 0, 1);
  const Tensor delta = random_tensor({6, 6, 3}, rng, 0.2, 0.8);
  const std::vector<GroundTruthBox> labels{{0, 0.45, 0.55, 0.5, 0.8}};
  TransformSample t = identity(0.7);
  t.rotation = 17;
  t.contrast = 1.05;
  t.brightness = 0.02;
  t.noise_amplitude = 0.02;
  t.noise_seed = 3;
  const TransformConfig cfg;
  auto composite = [&](const Tensor& d) {
    Tape tape;
    return apply_var(tape.constant(d), tape.constant(image), labels, std::span(&t, 1), cfg).value();
  };
  const Tensor base = composite(delta);
  // Pixels the footprint covers are the ones that differ from the input image.
  std::vector<bool> covered(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) covered[i] = base[i] != image[i];

  const double h = 1e-3;
  std::vector<Tensor> columns;
  Tensor probe = delta;
  for (std::size_t j = 0; j < delta.size(); ++j) {
    probe[j] = delta[j] + h;
    const Tensor up = composite(probe);
    probe[j] = delta[j] - h;
    const Tensor down = composite(probe);
    probe[j] = delta[j];
    Tensor col(base.shape());
    for (std::size_t i = 0; i < col.size(); ++i) {
      col[i] = (up[i] - down[i]) / (2 * h);
      if (!covered[i]) REQUIRE(col[i] == 0);
    }
    columns.push_back(col);
  }
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = random_tensor(base.shape(), rng);
    Tape tape;
    const Var d = tape.leaf(delta);
    const Var out = apply_var(d, tape.constant(image), labels, std::span(&t, 1), cfg);
    const Tensor g = tape.grad(ops::sum(ops::mul(out, tape.constant(w))), std::span(&d, 1))[0];
    for (std::size_t j = 0; j < delta.size(); ++j) {
      double fd = 0;
      for (std::size_t i = 0; i < w.size(); ++i) fd += w[i] * columns[j][i];
      const double scale = std::max(std::abs(fd), std::abs(g[j]));
      if (scale > 1e-6) CHECK(std::abs(fd - g[j]) / scale < 1e-3);
    }
  }
}

TEST_CASE("random_apply_dataset assignment") {
  std::vector<LabeledImage> scenes;
  for (int i = 0; i < 1000; ++i) scenes.push_back({Tensor(Shape{16, 16, 3}, 0.5), {{0, 0.5, 0.5, 0.5, 0.9}}});
  std::vector<Patch> patches;
  for (int k = 0; k < 40; ++k) patches.push_back({"p" + std::to_string(k), Tensor(Shape{4, 4, 3}, k / 40.0), {}});

  SUBCASE("uniform use") {
    const auto out = random_apply_dataset(patches, scenes, 2024, 3, TransformConfig{});
    std::map<std::string, int> uses;
    for (const auto& s : out) {
      REQUIRE(s.applied.size() == 1);
      ++uses[s.applied[0].patch_id];
    }
    CHECK(uses.size() == 40);
    for (const auto& [id, n] : uses) {
      CAPTURE(id);
      CHECK(std::abs(n - 25) <= 10);
    }
    const auto again = random_apply_dataset(patches, scenes, 2024, 3, TransformConfig{});
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(again[i].applied == out[i].applied);
  }
  SUBCASE("singleton set") {
    const auto out = random_apply_dataset(std::span(patches.data(), 1), std::span(scenes.data(), 50), 9, 3,
                                          TransformConfig{});
    for (const auto& s : out) CHECK(s.applied[0].patch_id == "p0");
  }
}

TEST_CASE("patch files round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "adyolo_patch_roundtrip";
  std::filesystem::remove_all(dir);
  Patch p = random_patch(5, 77, "A0-s00100");
  p.provenance = {"M0", 123456789012345ULL, 100, 0.4321};
  save_patch(dir.string(), p);
  CHECK(load_patch(dir.string(), p.id) == p);
  CHECK(std::filesystem::exists(dir / "A0-s00100.ppm"));
  std::filesystem::remove_all(dir);
}
