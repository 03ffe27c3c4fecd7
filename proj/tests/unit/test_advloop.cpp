#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "../support/gradcheck.hpp"
#include "adyolo/advloop/advloop.hpp"
#include "adyolo/scenesynth/scenes.hpp"

using namespace adyolo;
using namespace adyolo::advloop;

namespace fs = std::filesystem;

namespace {

std::vector<detector::LabeledImage> toy_scenes(int count, std::uint64_t seed) {
  scenes::SceneConfig sc;
  sc.side = 32;
  sc.person_height = {0.55, 0.9};
  std::vector<detector::LabeledImage> out;
  for (const auto& s : scenes::generate_split(count, seed, sc)) out.push_back({s.image, s.labels});
  return out;
}

attack::AttackConfig short_attack() {
  attack::AttackConfig c;
  c.patch_side = 6;
  c.steps = 10;
  c.batch = 2;
  c.palette = attack::load_palette(ADYOLO_DATA_DIR "/palette.txt");
  c.transforms.scale = {0.6, 0.8};
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("split arithmetic") {
  auto count = [](const std::vector<Split>& s) {
    return std::count(s.begin(), s.end(), Split::kTest);
  };
  const auto full = assign_splits(200);
  CHECK(count(full) == 40);
  CHECK(std::all_of(full.begin(), full.begin() + 160, [](Split s) { return s == Split::kTrain; }));
  const auto desk = assign_splits(30);
  CHECK(count(desk) == 6);
  CHECK(std::all_of(desk.begin() + 24, desk.end(), [](Split s) { return s == Split::kTest; }));
  CHECK(count(assign_splits(1)) == 0);

  // With 10 snapshots per run the last fifth is exactly the last four runs.
  std::map<int, std::set<Split>> per_run;
  for (std::size_t i = 0; i < full.size(); ++i) per_run[static_cast<int>(i / 10)].insert(full[i]);
  for (const auto& [run, splits] : per_run) CHECK(splits.size() == 1);
}

TEST_CASE("minimal corpus is the run's final patch") {
  const auto scenes = toy_scenes(6, 1);
  detector::DetectorModel m = detector::make_model(testsupport::toy_config(), 2);
  m.id = "M0";
  const auto cfg = short_attack();
  CorpusPlan plan;
  plan.runs_per_model = 1;
  plan.snapshots_per_run = 1;
  const PatchCorpus corpus = build_corpus({m}, scenes, cfg, plan);
  REQUIRE(corpus.entries.size() == 1);
  const auto& e = corpus.entries[0];
  CHECK(e.model == "M0");
  CHECK(e.run == "M0-r0");
  CHECK(e.split == Split::kTrain);

  attack::AttackConfig direct = cfg;
  direct.seed = corpus_seeds(1, cfg, plan)[0];
  const long steps[] = {cfg.steps};
  const auto run = attack::optimize_patch(m, scenes, direct, steps, "M0-r0");
  CHECK(e.patch.pixels == run.final.pixels);

  const auto dir = fs::temp_directory_path() / "adyolo_corpus_roundtrip";
  fs::remove_all(dir);
  corpus.save(dir.string());
  const PatchCorpus back = PatchCorpus::load(dir.string());
  REQUIRE(back.entries.size() == 1);
  CHECK(back.entries[0].patch == e.patch);
  CHECK(back.entries[0].run == e.run);
  CHECK(back.entries[0].split == e.split);
  fs::remove_all(dir);
}

TEST_CASE("corpus seeds are distinct and duplicates are rejected") {
  const auto cfg = short_attack();
  CorpusPlan plan;
  const auto seeds = corpus_seeds(2, cfg, plan);
  CHECK(seeds.size() == 6);
  CHECK(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == 6);
  plan.runs_per_model = 2;
  plan.seeds = {1, 2, 3, 1};
  detector::DetectorModel m = detector::make_model(testsupport::toy_config(), 2);
  CHECK_THROWS(build_corpus({m, m}, toy_scenes(2, 1), cfg, plan));
}

TEST_CASE("diversity separates models from runs") {
  PatchCorpus c;
  auto add = [&](const std::string& model, const std::string& run, Real v) {
    c.entries.push_back({{run + std::to_string(v), Tensor(Shape{1, 1, 3}, v), {}}, run, model, Split::kTrain});
  };
  add("A", "A-r0", 0.0);
  add("A", "A-r0", 0.1);
  add("B", "B-r0", 1.0);
  add("B", "B-r0", 1.1);
  const Diversity d = corpus_diversity(c);
  const Real s3 = std::sqrt(3.0);
  CHECK(d.within_run == doctest::Approx(0.1 * s3));
  CHECK(d.cross_model == doctest::Approx((1.0 + 1.1 + 0.9 + 1.0) / 4 * s3));
}

TEST_CASE("registry parent chain") {
  Registry r;
  r.entries.push_back({"M0", "M0.ckpt", "", {}, false, ""});
  r.entries.push_back({"M1", "M1.ckpt", "M0", {"adv0"}, true, "weak attack"});
  CHECK_NOTHROW(r.validate());
  const auto path = fs::temp_directory_path() / "adyolo_registry.json";
  r.save(path.string());
  const Registry back = Registry::load(path.string());
  CHECK(back.entries == r.entries);
  fs::remove(path);

  Registry only;
  only.entries.push_back({"M0", "M0.ckpt", "", {}, false, ""});
  CHECK_NOTHROW(only.validate());
  r.entries[1].parent = "M7";
  CHECK_THROWS(r.validate());
  r.entries[1].parent = "M0";
  r.entries[0].parent = "X";
  CHECK_THROWS(r.validate());
}

TEST_CASE("an adversarial round produces a warm-started child") {
  const auto scenes = toy_scenes(12, 4);
  detector::DetectorModel m = detector::make_model(testsupport::toy_config(), 5);
  m.id = "M0";
  RoundConfig cfg;
  cfg.attack = short_attack();
  cfg.snapshots = 2;
  cfg.retrain.steps = 2;
  cfg.retrain.batch = 2;
  cfg.retrain.learning_rate = 1e-3;
  const RoundResult r = adversarial_round(m, scenes, scenes, scenes, cfg, "adv0", "M1");
  CHECK(r.next.id == "M1");
  CHECK(r.next.config == m.config);
  CHECK(r.run.snapshots.size() == 2);
  CHECK(r.run.final.provenance.source_model == "M0");
  CHECK_FALSE(r.next.params[0].value == m.params[0].value);
}
