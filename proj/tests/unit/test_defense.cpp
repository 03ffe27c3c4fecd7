#include <doctest.h>

#include "../support/gradcheck.hpp"
#include "adyolo/defense/defense.hpp"
#include "adyolo/scenesynth/scenes.hpp"

using namespace adyolo;
using namespace adyolo::defense;
using detector::DetectorModel;
using detector::LabeledImage;
using testsupport::random_tensor;

namespace {

std::vector<LabeledImage> toy_scenes(int count, std::uint64_t seed) {
  scenes::SceneConfig sc;
  sc.side = 32;
  sc.person_height = {0.55, 0.9};
  std::vector<LabeledImage> out;
  for (const auto& s : scenes::generate_split(count, seed, sc)) out.push_back({s.image, s.labels});
  return out;
}

DetectorModel busy_model(const detector::DetectorConfig& c, std::uint64_t seed) {
  DetectorModel m = detector::make_model(c, seed);
  Rng rng(seed + 1);
  for (auto& p : m.params)
    for (Real& v : p.value.values()) v += uniform(rng, -0.05, 0.05);
  return m;
}

MixedDatasetSpec toy_spec(Real fraction, int patches) {
  MixedDatasetSpec s;
  s.clean = toy_scenes(30, 1);
  s.patchable = toy_scenes(30, 2);
  for (int k = 0; k < patches; ++k) s.patches.push_back({"p" + std::to_string(k), Tensor(Shape{4, 4, 3}, 0.1 * k), {}});
  s.patched_fraction = fraction;
  s.seed = 8;
  return s;
}

}  // namespace

TEST_CASE("extend_head widens the output and keeps the source predictions") {
  const DetectorModel src = busy_model(detector::DetectorConfig{}, 3);
  const DetectorModel def = extend_head(src, "D0");
  CHECK(def.id == "D0");
  CHECK(def.config.class_names.back() == "patch");
  CHECK(def.config.output_elements() == 1728);
  CHECK(src.config.output_elements() == 1536);
  CHECK_THROWS(extend_head(def, "D1"));

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor image = random_tensor({128, 128, 3}, rng, 0, 1);
    const auto a = detector::decode(detector::forward(src, image), src.config, 0);
    const auto b = detector::decode(detector::forward(def, image), def.config, 0);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a[i].pred.x - b[i].pred.x) < 1e-5);
      CHECK(std::abs(a[i].pred.y - b[i].pred.y) < 1e-5);
      CHECK(std::abs(a[i].pred.w - b[i].pred.w) < 1e-5);
      CHECK(std::abs(a[i].pred.h - b[i].pred.h) < 1e-5);
      CHECK(std::abs(a[i].pred.p_obj - b[i].pred.p_obj) < 1e-5);
      // Zero patch row: argmax over the original classes is unchanged.
      const auto& pa = a[i].pred.p_cls;
      const auto& pb = b[i].pred.p_cls;
      CHECK(std::max_element(pa.begin(), pa.end()) - pa.begin() ==
            std::max_element(pb.begin(), pb.begin() + 3) - pb.begin());
    }
  }
}

TEST_CASE("strip inverts extend exactly") {
  const DetectorModel src = busy_model(testsupport::toy_config(), 4);
  const DetectorModel back = strip_patch_class(extend_head(src, "D"), src.id);
  CHECK(back.config == src.config);
  for (std::size_t i = 0; i < src.params.size(); ++i) CHECK(back.params[i] == src.params[i]);
  Rng rng(1);
  const Tensor image = random_tensor({32, 32, 3}, rng, 0, 1);
  CHECK(detector::forward(back, image) == detector::forward(src, image));
  CHECK_THROWS(strip_patch_class(src, "x"));
}

TEST_CASE("fraction 0 reproduces the clean sampler") {
  const MixedDatasetSpec s = toy_spec(0, 2);
  for (long step = 0; step < 5; ++step) {
    const auto mixed = make_batch(s, step, 8);
    const auto clean = clean_batch(s, step, 8);
    REQUIRE(mixed.size() == clean.size());
    for (std::size_t k = 0; k < mixed.size(); ++k) {
      CHECK(mixed[k].image == clean[k].image);
      CHECK(mixed[k].labels == clean[k].labels);
    }
  }
}

TEST_CASE("fraction 1 with one patch patches every sample") {
  const MixedDatasetSpec s = toy_spec(1, 1);
  for (long step = 0; step < 5; ++step)
    for (const auto& sample : make_batch(s, step, 8)) {
      int persons = 0, patches = 0;
      for (const auto& b : sample.labels) {
        persons += b.class_id == 0;
        patches += b.class_id == 3;
      }
      CHECK(persons >= 1);
      CHECK(patches >= persons);
    }
}

TEST_CASE("unlabelled patches are dropped from the labels") {
  MixedDatasetSpec s = toy_spec(1, 1);
  s.label_patches = false;
  for (const auto& sample : make_batch(s, 0, 8))
    for (const auto& b : sample.labels) CHECK(b.class_id != 3);
}

TEST_CASE("patched share converges to the fraction") {
  const MixedDatasetSpec s = toy_spec(0.5, 3);
  // Patchable scenes host one large person each, so a patched sample always
  // ends with a patch box and a clean one never has one.
  MixedDatasetSpec probe = s;
  probe.patchable.assign(10, LabeledImage{Tensor(Shape{32, 32, 3}, 0.5), {{0, 0.5, 0.5, 0.6, 0.9}}});
  int patched = 0, total = 0;
  for (long step = 0; step < 1250; ++step)
    for (const auto& sample : make_batch(probe, step, 8)) {
      ++total;
      patched += sample.labels.size() > 0 && sample.labels.back().class_id == 3;
    }
  const double share = static_cast<double>(patched) / total;
  MESSAGE("patched share " << share << " over " << total);
  CHECK(total == 10000);
  CHECK(std::abs(share - 0.5) <= 0.02);
}

TEST_CASE("spec validation") {
  MixedDatasetSpec s = toy_spec(1.5, 1);
  CHECK_THROWS(s.validate());
  s = toy_spec(0.5, 0);
  CHECK_THROWS(s.validate());
}

TEST_CASE("training needs a patch class and zero steps change nothing") {
  const MixedDatasetSpec s = toy_spec(0.5, 2);
  DetectorModel plain = busy_model(testsupport::toy_config(), 6);
  detector::TrainSchedule sched;
  sched.steps = 0;
  CHECK_THROWS(train_defense(plain, s, sched));
  DetectorModel def = extend_head(plain, "D0");
  const DetectorModel before = def;
  train_defense(def, s, sched);
  for (std::size_t i = 0; i < def.params.size(); ++i) CHECK(def.params[i] == before.params[i]);
  sched.steps = 3;
  train_defense(def, s, sched);
  CHECK_FALSE(def.params[0] == before.params[0]);
}
