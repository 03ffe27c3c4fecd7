#include "adyolo/scenesynth/scenes.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "adyolo/numcore/random.hpp"

namespace adyolo::scenes {

namespace fs = std::filesystem;
using detector::GroundTruthBox;
using Rgb = std::array<Real, 3>;

namespace {

// ---- primitives --------------------------------------------------------------

enum class Texture { kPlain, kStripes, kSpeckle };

struct Paint {
  Rgb base{};
  Texture texture = Texture::kPlain;
  Real amplitude = 0;
  Real frequency = 0;  // stripes per pixel
  Real angle = 0;
  std::uint64_t seed = 0;

  Rgb at(Real x, Real y) const {
    Real shade = 0;
    switch (texture) {
      case Texture::kPlain:
        break;
      case Texture::kStripes:
        shade = amplitude * std::sin(2 * std::numbers::pi * frequency * (x * std::cos(angle) + y * std::sin(angle)));
        break;
      case Texture::kSpeckle:
        shade = amplitude * hashed_signed_unit(seed, static_cast<std::uint64_t>(y * 4096 + x));
        break;
    }
    return {base[0] + shade, base[1] + shade, base[2] + shade};
  }
};

enum class Kind { kEllipse, kCapsule, kRoundRect };

struct Primitive {
  Kind kind;
  Real a, b, c, d, r;  // ellipse: cx cy rx ry; capsule: ax ay bx by r; rect: x0 y0 x1 y1 r
  Paint paint;

  bool inside(Real x, Real y) const {
    switch (kind) {
      case Kind::kEllipse: {
        const Real u = (x - a) / c, v = (y - b) / d;
        return u * u + v * v <= 1;
      }
      case Kind::kCapsule: {
        const Real dx = c - a, dy = d - b;
        const Real len2 = dx * dx + dy * dy;
        Real t = len2 > 0 ? ((x - a) * dx + (y - b) * dy) / len2 : 0;
        t = std::clamp<Real>(t, 0, 1);
        const Real px = a + t * dx - x, py = b + t * dy - y;
        return px * px + py * py <= r * r;
      }
      case Kind::kRoundRect: {
        const Real qx = std::max({a + r - x, x - (c - r), Real{0}});
        const Real qy = std::max({b + r - y, y - (d - r), Real{0}});
        return x >= a && x <= c && y >= b && y <= d && qx * qx + qy * qy <= r * r;
      }
    }
    return false;
  }
};

struct Figure {
  int class_id = 0;
  std::vector<Primitive> parts;  // later parts paint over earlier ones
  Real sort_key = 0;             // bottom edge; nearer figures draw later
};

struct Footprint {
  Real x0, y0, x1, y1;
};

Real footprint_iou(const Footprint& p, const Footprint& q) {
  return iou(Box::from_corners(p.x0, p.y0, p.x1, p.y1), Box::from_corners(q.x0, q.y0, q.x1, q.y1));
}

// Intersection as a fraction of the smaller footprint.
Real footprint_cover(const Footprint& p, const Footprint& q) {
  const Real iw = std::min(p.x1, q.x1) - std::max(p.x0, q.x0);
  const Real ih = std::min(p.y1, q.y1) - std::max(p.y0, q.y0);
  if (iw <= 0 || ih <= 0) return 0;
  const Real smaller = std::min((p.x1 - p.x0) * (p.y1 - p.y0), (q.x1 - q.x0) * (q.y1 - q.y0));
  return iw * ih / smaller;
}

Rgb random_color(Rng& rng, Real lo = 0.05, Real hi = 0.95) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

Paint textured(Rng& rng, const Rgb& base) {
  Paint p;
  p.base = base;
  const int pick = uniform_int(rng, 0, 2);
  p.texture = pick == 0 ? Texture::kPlain : pick == 1 ? Texture::kStripes : Texture::kSpeckle;
  p.amplitude = uniform(rng, 0.04, 0.12);
  p.frequency = uniform(rng, 0.12, 0.3);
  p.angle = uniform(rng, 0, std::numbers::pi);
  p.seed = rng();
  return p;
}

// ---- figures -----------------------------------------------------------------

Figure make_person(Rng& rng, Real left, Real top, Real height) {
  const Real H = height;
  const Real torso_w = 0.34 * H * uniform(rng, 0.9, 1.1);
  const Real arm_spread = uniform(rng, 0.0, 0.05) * H;
  const Real leg_spread = uniform(rng, 0.0, 0.07) * H;
  const Real lean = uniform(rng, -0.03, 0.03) * H;
  const Real limb_out = torso_w / 2 + 0.045 * H + arm_spread + 0.045 * H;
  const Real cx = left + limb_out;  // left edge of the widest part lands near `left`

  const Rgb skin = {uniform(rng, 0.45, 0.95), uniform(rng, 0.3, 0.75), uniform(rng, 0.2, 0.6)};
  const Paint shirt = textured(rng, random_color(rng));
  Paint pants;
  pants.base = random_color(rng, 0.05, 0.6);
  Paint skin_paint;
  skin_paint.base = skin;
  const bool sleeves = uniform(rng, 0, 1) < 0.5;

  Figure f;
  f.class_id = kPerson;
  f.sort_key = top + H;
  const Real r_head = 0.1 * H;
  const Real shoulder_y = top + 0.24 * H;
  const Real hip_y = top + 0.58 * H;
  const Real leg_r = 0.05 * H;
  for (int side : {-1, 1}) {
    const Real hip_x = cx + side * 0.09 * H;
    f.parts.push_back({Kind::kCapsule, hip_x, hip_y, hip_x + side * leg_spread, top + H - leg_r, leg_r, pants});
  }
  f.parts.push_back({Kind::kRoundRect, cx + lean - torso_w / 2, top + 1.9 * r_head, cx + lean + torso_w / 2,
                     hip_y + 0.02 * H, 0.05 * H, shirt});
  for (int side : {-1, 1}) {
    const Real ax = cx + lean + side * (torso_w / 2 + 0.045 * H);
    f.parts.push_back({Kind::kCapsule, ax, shoulder_y, ax + side * arm_spread, top + 0.55 * H, 0.045 * H,
                       sleeves ? shirt : skin_paint});
  }
  f.parts.push_back({Kind::kEllipse, cx + lean, top + r_head, r_head * 0.9, r_head, 0, skin_paint});
  return f;
}

Figure make_car(Rng& rng, Real left, Real top, Real height, Real width) {
  const Real H = height, W = width;
  Paint body = textured(rng, random_color(rng));
  Paint glass;
  glass.base = {uniform(rng, 0.55, 0.75), uniform(rng, 0.65, 0.85), uniform(rng, 0.75, 0.95)};
  Paint tyre;
  tyre.base = {0.08, 0.08, 0.08};
  const Real wheel_r = 0.2 * H;
  Figure f;
  f.class_id = kCar;
  f.sort_key = top + H;
  const Real cab_x0 = left + W * uniform(rng, 0.15, 0.25);
  const Real cab_x1 = left + W * uniform(rng, 0.7, 0.8);
  f.parts.push_back({Kind::kRoundRect, cab_x0, top, cab_x1, top + 0.5 * H, 0.08 * H, body});
  f.parts.push_back({Kind::kRoundRect, cab_x0 + 0.08 * H, top + 0.08 * H, cab_x1 - 0.08 * H, top + 0.4 * H,
                     0.04 * H, glass});
  f.parts.push_back({Kind::kRoundRect, left, top + 0.38 * H, left + W, top + H - wheel_r, 0.1 * H, body});
  for (Real at : {0.22, 0.78}) {
    f.parts.push_back({Kind::kEllipse, left + at * W, top + H - wheel_r, wheel_r, wheel_r, 0, tyre});
  }
  return f;
}

Figure make_tree(Rng& rng, Real left, Real top, Real height, Real width) {
  const Real H = height, W = width;
  Paint bark;
  bark.base = {uniform(rng, 0.3, 0.45), uniform(rng, 0.18, 0.28), uniform(rng, 0.08, 0.15)};
  Paint leaves;
  leaves.base = {uniform(rng, 0.05, 0.3), uniform(rng, 0.35, 0.7), uniform(rng, 0.05, 0.25)};
  leaves.texture = Texture::kSpeckle;
  leaves.amplitude = 0.1;
  leaves.seed = rng();
  Figure f;
  f.class_id = kTree;
  f.sort_key = top + H;
  const Real crown_h = 0.62 * H;
  const Real trunk_w = 0.14 * W;
  const Real cx = left + W / 2;
  f.parts.push_back({Kind::kRoundRect, cx - trunk_w / 2, top + crown_h * 0.5, cx + trunk_w / 2, top + H, 0, bark});
  f.parts.push_back({Kind::kEllipse, cx, top + crown_h / 2, W / 2, crown_h / 2, 0, leaves});
  return f;
}

// ---- canvas ------------------------------------------------------------------

struct Canvas {
  int side;
  std::vector<Real> rgb;
  Real* at(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * side + x) * 3; }
};

void paint_background(Canvas& cv, Rng& rng) {
  const Rgb top = random_color(rng, 0.2, 0.9);
  const Rgb bottom = random_color(rng, 0.1, 0.8);
  struct Blob {
    Real x, y, rx, ry;
    Rgb color;
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(uniform_int(rng, 3, 6)));
  for (Blob& b : blobs) {
    b = {uniform(rng, 0, cv.side), uniform(rng, 0, cv.side), uniform(rng, 8, 40), uniform(rng, 6, 30),
         random_color(rng, 0.15, 0.85)};
  }
  const std::uint64_t noise_seed = rng();
  for (int y = 0; y < cv.side; ++y)
    for (int x = 0; x < cv.side; ++x) {
      const Real t = (y + 0.5) / cv.side;
      Rgb c{};
      for (int k = 0; k < 3; ++k) c[k] = (1 - t) * top[k] + t * bottom[k];
      for (const Blob& b : blobs) {
        const Real u = (x + 0.5 - b.x) / b.rx, v = (y + 0.5 - b.y) / b.ry;
        const Real wgt = 0.35 * std::exp(-(u * u + v * v));
        for (int k = 0; k < 3; ++k) c[k] = (1 - wgt) * c[k] + wgt * b.color[k];
      }
      const Real n = 0.03 * hashed_signed_unit(noise_seed, static_cast<std::uint64_t>(y * cv.side + x));
      Real* px = cv.at(x, y);
      for (int k = 0; k < 3; ++k) px[k] = c[k] + n;
    }
}

// Paints the figure and returns its tight pixel extent [x0, x1) x [y0, y1).
bool render(Canvas& cv, const Figure& f, int& x0, int& y0, int& x1, int& y1) {
  x0 = y0 = cv.side;
  x1 = y1 = 0;
  for (int y = 0; y < cv.side; ++y)
    for (int x = 0; x < cv.side; ++x) {
      const Real px = x + 0.5, py = y + 0.5;
      const Primitive* hit = nullptr;
      for (const Primitive& p : f.parts)
        if (p.inside(px, py)) hit = &p;
      if (!hit) continue;
      const Rgb c = hit->paint.at(px, py);
      std::copy(c.begin(), c.end(), cv.at(x, y));
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x + 1);
      y1 = std::max(y1, y + 1);
    }
  return x1 > x0 && y1 > y0;
}

Real quantize(Real v) { return std::round(std::clamp<Real>(v, 0, 1) * 255) / 255; }

}  // namespace

void SceneConfig::validate() const {
  auto bad = [](const char* what) { throw std::invalid_argument(std::string("scene config: ") + what); };
  if (side < 16) bad("side must be >= 16");
  if (persons.lo < 0 || persons.hi < persons.lo) bad("invalid persons range");
  if (distractors.lo < 0 || distractors.hi < distractors.lo) bad("invalid distractors range");
  for (const RealRange& r : {person_height, car_height, tree_height})
    if (!(r.lo > 0 && r.hi >= r.lo && r.hi <= 1)) bad("object heights must satisfy 0 < lo <= hi <= 1");
  if (placement_attempts < 1) bad("placement_attempts must be >= 1");
  if (!(max_overlap_iou >= 0 && max_overlap_iou <= 1 && max_cover >= 0 && max_cover <= 1))
    bad("overlap limits must lie in [0, 1]");
}

std::string scene_id(std::uint64_t scene_seed) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "sc%016llx", static_cast<unsigned long long>(scene_seed));
  return buf;
}

Scene generate_scene(std::uint64_t scene_seed, const SceneConfig& config) {
  config.validate();
  Rng rng(scene_seed);
  const Real S = config.side;
  Canvas cv{config.side, std::vector<Real>(static_cast<std::size_t>(config.side) * config.side * 3)};
  paint_background(cv, rng);

  std::vector<Figure> figures;
  std::vector<Footprint> placed;
  auto place = [&](Real w, Real h, Footprint& out) {
    if (w >= S || h >= S) return false;
    for (int attempt = 0; attempt < config.placement_attempts; ++attempt) {
      const Real x = uniform(rng, 1, S - w - 1), y = uniform(rng, 1, S - h - 1);
      const Footprint fp{x, y, x + w, y + h};
      if (std::all_of(placed.begin(), placed.end(),
                      [&](const Footprint& q) {
                        return footprint_iou(fp, q) <= config.max_overlap_iou &&
                               footprint_cover(fp, q) <= config.max_cover;
                      })) {
        out = fp;
        placed.push_back(fp);
        return true;
      }
    }
    return false;
  };

  const int n_persons = uniform_int(rng, config.persons.lo, config.persons.hi);
  const int n_distractors = uniform_int(rng, config.distractors.lo, config.distractors.hi);
  for (int i = 0; i < n_persons; ++i) {
    const Real h = uniform(rng, config.person_height.lo, config.person_height.hi) * S;
    Footprint fp;
    Rng shape_rng(rng());
    if (place(0.62 * h, h, fp)) figures.push_back(make_person(shape_rng, fp.x0, fp.y0, h));
  }
  for (int i = 0; i < n_distractors; ++i) {
    const bool car = uniform_int(rng, 0, 1) == 0;
    const RealRange& hr = car ? config.car_height : config.tree_height;
    const Real h = uniform(rng, hr.lo, hr.hi) * S;
    const Real w = car ? h * uniform(rng, 1.8, 2.4) : h * uniform(rng, 0.5, 0.7);
    Footprint fp;
    Rng shape_rng(rng());
    if (place(w, h, fp))
      figures.push_back(car ? make_car(shape_rng, fp.x0, fp.y0, h, w) : make_tree(shape_rng, fp.x0, fp.y0, h, w));
  }
  std::stable_sort(figures.begin(), figures.end(),
                   [](const Figure& a, const Figure& b) { return a.sort_key < b.sort_key; });

  Scene scene;
  scene.id = scene_id(scene_seed);
  scene.seed = scene_seed;
  for (const Figure& f : figures) {
    int x0, y0, x1, y1;
    if (!render(cv, f, x0, y0, x1, y1)) continue;
    scene.labels.push_back({f.class_id, (x0 + x1) / (2 * S), (y0 + y1) / (2 * S), (x1 - x0) / S, (y1 - y0) / S});
  }
  for (Real& v : cv.rgb) v = quantize(v);
  scene.image = Tensor(Shape{config.side, config.side, 3}, std::move(cv.rgb));
  return scene;
}

std::vector<Scene> generate_split(int count, std::uint64_t seed, const SceneConfig& config) {
  if (count <= 0) throw std::invalid_argument("generate_split: count must be > 0");
  config.validate();
  std::vector<Scene> out(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] = generate_scene(derive_seed(seed, {static_cast<std::uint64_t>(i)}), config);
  return out;
}

// ---- persistence -------------------------------------------------------------

namespace {

std::string real_text(Real v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string format_labels(const std::vector<GroundTruthBox>& labels) {
  std::string out;
  for (const GroundTruthBox& g : labels) {
    out += std::to_string(g.class_id) + ' ' + real_text(g.cx) + ' ' + real_text(g.cy) + ' ' + real_text(g.w) + ' ' +
           real_text(g.h) + '\n';
  }
  return out;
}

std::vector<GroundTruthBox> parse_labels(const std::string& text) {
  std::vector<GroundTruthBox> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string f; ls >> f;) fields.push_back(f);
    auto fail = [&](const std::string& why) {
      throw LabelParseError("label line " + std::to_string(line_no) + ": " + why, line_no);
    };
    if (fields.size() != 5) fail("expected 5 fields, got " + std::to_string(fields.size()));
    GroundTruthBox g;
    {
      const std::string& f = fields[0];
      const auto r = std::from_chars(f.data(), f.data() + f.size(), g.class_id);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size()) fail("bad class index '" + f + "'");
    }
    Real* dst[4] = {&g.cx, &g.cy, &g.w, &g.h};
    for (int k = 0; k < 4; ++k) {
      const std::string& f = fields[static_cast<std::size_t>(k + 1)];
      const auto r = std::from_chars(f.data(), f.data() + f.size(), *dst[k]);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size()) fail("bad number '" + f + "'");
    }
    if (g.class_id < 0 || g.cx < 0 || g.cx > 1 || g.cy < 0 || g.cy > 1 || !(g.w > 0) || g.w > 1 || !(g.h > 0) ||
        g.h > 1) {
      fail("box out of range");
    }
    out.push_back(g);
  }
  return out;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_ppm: expected HxWx3 image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::string bytes(image.size(), '\0');
  for (std::size_t i = 0; i < image.size(); ++i)
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp<Real>(image[i], 0, 1) * 255)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("unsupported PPM " + path);
  in.get();
  std::string bytes(static_cast<std::size_t>(w) * h * 3, '\0');
  if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) throw std::runtime_error("truncated PPM " + path);
  Tensor t(Shape{h, w, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) t[i] = static_cast<unsigned char>(bytes[i]) / Real{255};
  return t;
}

void save_split(const std::string& dir, const std::vector<Scene>& scenes) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.tsv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "id\tseed\n";
  for (const Scene& s : scenes) {
    manifest << s.id << '\t' << s.seed << '\n';
    write_ppm((fs::path(dir) / (s.id + ".ppm")).string(), s.image);
    std::ofstream labels(fs::path(dir) / (s.id + ".txt"));
    labels << format_labels(s.labels);
  }
}

std::vector<Scene> load_split(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.tsv");
  if (!manifest) throw std::runtime_error("missing split manifest in " + dir);
  std::string line;
  std::getline(manifest, line);
  if (line != "id\tseed") throw std::runtime_error("bad split manifest header in " + dir);
  std::vector<Scene> out;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("bad manifest line in " + dir + ": " + line);
    Scene s;
    s.id = line.substr(0, tab);
    s.seed = std::stoull(line.substr(tab + 1));
    s.image = read_ppm((fs::path(dir) / (s.id + ".ppm")).string());
    std::ifstream lf(fs::path(dir) / (s.id + ".txt"));
    if (!lf) throw std::runtime_error("missing labels for scene " + s.id);
    std::stringstream text;
    text << lf.rdbuf();
    try {
      s.labels = parse_labels(text.str());
    } catch (const LabelParseError& e) {
      throw LabelParseError(s.id + ".txt: " + e.what(), e.line());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace adyolo::scenes
