#pragma once

// Synthetic scenes: textured backgrounds with "person" figures (head, torso,
// arms, legs) and two distractor classes ("car", "tree"). Boxes are the exact
// pixel extent of each object's own raster, so they stay tight under overlap.

#include <cstdint>
#include <string>
#include <vector>

#include "adyolo/detector/detector.hpp"

namespace adyolo::scenes {

inline constexpr int kPerson = 0;
inline constexpr int kCar = 1;
inline constexpr int kTree = 2;

struct Scene {
  std::string id;
  std::uint64_t seed = 0;
  Tensor image;  // [S, S, 3], multiples of 1/255
  std::vector<detector::GroundTruthBox> labels;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct IntRange {
  int lo = 0, hi = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct RealRange {
  Real lo = 0, hi = 0;
  friend bool operator==(const RealRange&, const RealRange&) = default;
};

struct SceneConfig {
  int side = 128;
  IntRange persons{1, 4};
  IntRange distractors{0, 3};
  RealRange person_height{0.35, 0.8};  // fraction of side
  RealRange car_height{0.14, 0.28};
  RealRange tree_height{0.35, 0.7};
  Real max_overlap_iou = 0.3;  // placement rejects heavier overlap
  Real max_cover = 0.4;        // ... and any footprint covered beyond this fraction
  int placement_attempts = 40;

  void validate() const;
  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

// Scene i of the split is generated from derive_seed(seed, {i}); its id is
// "sc" followed by that seed in hex.
std::vector<Scene> generate_split(int count, std::uint64_t seed, const SceneConfig& config);
Scene generate_scene(std::uint64_t scene_seed, const SceneConfig& config);
std::string scene_id(std::uint64_t scene_seed);

// Directory layout: manifest.tsv (id, seed), <id>.ppm (binary P6), <id>.txt
// with one "class_index cx cy w h" line per box.
void save_split(const std::string& dir, const std::vector<Scene>& scenes);
std::vector<Scene> load_split(const std::string& dir);

// Line-level label codec; parse errors carry the 1-based line number.
std::string format_labels(const std::vector<detector::GroundTruthBox>& labels);
std::vector<detector::GroundTruthBox> parse_labels(const std::string& text);

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

class LabelParseError : public std::runtime_error {
 public:
  LabelParseError(const std::string& what, int line) : std::runtime_error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace adyolo::scenes
