#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "adyolo/scenesynth/scenes.hpp"

using namespace adyolo;
using namespace adyolo::scenes;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adyolo_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("generation is determined by the seed") {
  const SceneConfig c;
  const auto a = generate_split(1, 99, c), b = generate_split(1, 99, c);
  CHECK(a[0] == b[0]);
  CHECK_FALSE(generate_split(1, 100, c)[0] == a[0]);
  CHECK_THROWS(generate_split(0, 1, c));
}

TEST_CASE("forced composition") {
  SceneConfig c;
  c.persons = {1, 1};
  c.distractors = {0, 0};
  for (const Scene& s : generate_split(20, 5, c)) {
    REQUIRE(s.labels.size() == 1);
    CHECK(s.labels[0].class_id == kPerson);
  }
}

TEST_CASE("generated boxes are valid pixel extents") {
  const SceneConfig c;
  int persons = 0, distractors = 0;
  for (const Scene& s : generate_split(60, 8, c)) {
    CHECK(s.image.shape() == Shape{128, 128, 3});
    for (Real v : s.image.values()) {
      REQUIRE(v >= 0);
      REQUIRE(v <= 1);
      REQUIRE(std::abs(v * 255 - std::round(v * 255)) < 1e-9);
    }
    for (const auto& b : s.labels) {
      CHECK_NOTHROW(detector::validate_truth(b, 3));
      // Extents are whole pixels: edges land on multiples of 1/128.
      for (Real edge : {b.cx - b.w / 2, b.cx + b.w / 2, b.cy - b.h / 2, b.cy + b.h / 2})
        CHECK(std::abs(edge * 128 - std::round(edge * 128)) < 1e-9);
      (b.class_id == kPerson ? persons : distractors) += 1;
    }
  }
  CHECK(persons >= 60);
  CHECK(distractors > 0);
}

TEST_CASE("label lines carry the exact normalized extent") {
  // A box spanning pixels [10, 42) x [20, 100) of a 128 image.
  const detector::GroundTruthBox b{0, (10 + 42) / 256.0, (20 + 100) / 256.0, 32 / 128.0, 80 / 128.0};
  CHECK(format_labels({b}) == "0 0.203125 0.46875 0.25 0.625\n");
  CHECK(parse_labels(format_labels({b})) == std::vector<detector::GroundTruthBox>{b});
}

TEST_CASE("malformed label lines report their line number") {
  try {
    parse_labels("0 0.5 0.5 0.2 0.2\n1 0.5 oops 0.2 0.2\n");
    FAIL("expected LabelParseError");
  } catch (const LabelParseError& e) {
    CHECK(e.line() == 2);
  }
  try {
    parse_labels("0 0.5 0.5 0.2 0.2\n0 0.5 0.5 0.2\n0 0.5 0.5 0.2 0.2\n");
    FAIL("expected LabelParseError");
  } catch (const LabelParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_labels("0 0.5 0.5 0 0.2\n"), LabelParseError);
}

TEST_CASE("splits round-trip through disk") {
  const auto dir = scratch("split_roundtrip");
  const auto split = generate_split(10, 3, SceneConfig{});
  save_split(dir.string(), split);
  CHECK(load_split(dir.string()) == split);
  fs::remove_all(dir);
}

TEST_CASE("an empty split is a directory with a manifest") {
  const auto dir = scratch("split_empty");
  save_split(dir.string(), {});
  CHECK(fs::exists(dir / "manifest.tsv"));
  CHECK(load_split(dir.string()).empty());
  fs::remove_all(dir);
}

TEST_CASE("a corrupted label file fails to load") {
  const auto dir = scratch("split_corrupt");
  const auto split = generate_split(2, 3, SceneConfig{});
  save_split(dir.string(), split);
  std::ofstream(dir / (split[1].id + ".txt")) << "0 0.5 0.5 0.1 0.1\nnot a label\n";
  CHECK_THROWS_AS(load_split(dir.string()), LabelParseError);
  fs::remove_all(dir);
}

TEST_CASE("splits from different seeds have disjoint ids") {
  const SceneConfig c;
  std::set<std::string> ids;
  for (const auto& s : generate_split(100, 1, c)) ids.insert(s.id);
  CHECK(ids.size() == 100);
  for (const auto& s : generate_split(100, 2, c)) CHECK(ids.count(s.id) == 0);
}
