#include "adyolo/pipeline/config.hpp"

#include <fstream>

#include "adyolo/detector/checkpoint.hpp"
#include "adyolo/numcore/hash.hpp"

namespace adyolo::pipeline {

using nlohmann::json;

PipelineConfig default_config() {
  PipelineConfig c;
  c.scenes.inria.persons = {1, 3};
  c.scenes.inria.distractors = {0, 0};
  c.scenes.inria.person_height = {0.45, 0.85};
  c.advloop.retrain.steps = 1000;
  c.advloop.retrain.learning_rate = 0.003;
  c.defense.train.steps = 1500;
  c.defense.train.learning_rate = 0.003;
  c.eval.cells = {"M0/voc_test/clean", "D0/voc_test/clean", "M0/I1/clean",    "D0/I1/clean",
                  "M1/I1/clean",       "M0/I1/A0",          "M1/I1/A0",       "M0/I1/P1",
                  "D0/I0/P0",          "D0/I1/P0",          "D0/I0/P1",       "D0/I1/P1",
                  "M0/I1/whitebox",    "D0/I1/whitebox"};
  return c;
}

namespace {

json range(Real lo, Real hi) { return json::array({lo, hi}); }

json train_json(const TrainSection& t) {
  return {{"steps", t.steps},     {"batch", t.batch},           {"learning_rate", t.learning_rate},
          {"lr_decay", t.lr_decay}, {"decay_every", t.decay_every}, {"flip_augment", t.flip_augment}};
}

json scene_json(const scenes::SceneConfig& s) {
  return {{"side", s.side},
          {"persons", {s.persons.lo, s.persons.hi}},
          {"distractors", {s.distractors.lo, s.distractors.hi}},
          {"person_height", range(s.person_height.lo, s.person_height.hi)},
          {"car_height", range(s.car_height.lo, s.car_height.hi)},
          {"tree_height", range(s.tree_height.lo, s.tree_height.hi)},
          {"max_overlap_iou", s.max_overlap_iou},
          {"max_cover", s.max_cover},
          {"placement_attempts", s.placement_attempts}};
}

json transform_json(const patch::TransformConfig& t) {
  auto b = [](const patch::Bound& x) { return range(x.lo, x.hi); };
  return {{"rotation", b(t.rotation)},     {"scale", b(t.scale)},       {"jitter_x", b(t.jitter_x)},
          {"jitter_y", b(t.jitter_y)},     {"brightness", b(t.brightness)}, {"contrast", b(t.contrast)},
          {"noise", b(t.noise)},           {"chest_offset", t.chest_offset}, {"person_class", t.person_class}};
}

// Reads with the key path in every error message.
class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  const json& node(const std::string& path) const {
    const json* cur = &root_;
    std::size_t start = 0;
    while (start <= path.size()) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!cur->is_object() || !cur->contains(key)) throw ConfigError("missing config key " + path);
      cur = &(*cur)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    return *cur;
  }

  template <class T>
  T get(const std::string& path) const {
    try {
      return node(path).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key " + path + ": " + e.what());
    }
  }

  template <class R>
  R pair(const std::string& path) const {
    const json& n = node(path);
    if (!n.is_array() || n.size() != 2) throw ConfigError("config key " + path + ": expected [lo, hi]");
    try {
      return R{n[0].get<decltype(R::lo)>(), n[1].get<decltype(R::hi)>()};
    } catch (const json::exception& e) {
      throw ConfigError("config key " + path + ": " + e.what());
    }
  }

 private:
  const json& root_;
};

TrainSection read_train(const Reader& r, const std::string& p) {
  TrainSection t;
  t.steps = r.get<long>(p + ".steps");
  t.batch = r.get<int>(p + ".batch");
  t.learning_rate = r.get<Real>(p + ".learning_rate");
  t.lr_decay = r.get<Real>(p + ".lr_decay");
  t.decay_every = r.get<long>(p + ".decay_every");
  t.flip_augment = r.get<bool>(p + ".flip_augment");
  if (t.steps < 0 || t.batch < 1 || !(t.learning_rate > 0) || t.decay_every < 0)
    throw ConfigError("config section " + p + ": steps >= 0, batch >= 1, learning_rate > 0 and decay_every >= 0 required");
  return t;
}

scenes::SceneConfig read_scene(const Reader& r, const std::string& p) {
  scenes::SceneConfig s;
  s.side = r.get<int>(p + ".side");
  s.persons = r.pair<scenes::IntRange>(p + ".persons");
  s.distractors = r.pair<scenes::IntRange>(p + ".distractors");
  s.person_height = r.pair<scenes::RealRange>(p + ".person_height");
  s.car_height = r.pair<scenes::RealRange>(p + ".car_height");
  s.tree_height = r.pair<scenes::RealRange>(p + ".tree_height");
  s.max_overlap_iou = r.get<Real>(p + ".max_overlap_iou");
  s.max_cover = r.get<Real>(p + ".max_cover");
  s.placement_attempts = r.get<int>(p + ".placement_attempts");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(p + ": " + e.what());
  }
  return s;
}

patch::TransformConfig read_transforms(const Reader& r, const std::string& p) {
  patch::TransformConfig t;
  t.rotation = r.pair<patch::Bound>(p + ".rotation");
  t.scale = r.pair<patch::Bound>(p + ".scale");
  t.jitter_x = r.pair<patch::Bound>(p + ".jitter_x");
  t.jitter_y = r.pair<patch::Bound>(p + ".jitter_y");
  t.brightness = r.pair<patch::Bound>(p + ".brightness");
  t.contrast = r.pair<patch::Bound>(p + ".contrast");
  t.noise = r.pair<patch::Bound>(p + ".noise");
  t.chest_offset = r.get<Real>(p + ".chest_offset");
  t.person_class = r.get<int>(p + ".person_class");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(p + ": " + e.what());
  }
  return t;
}

// Every key of `user` must exist in `defaults`; objects recurse, everything
// else replaces wholesale.
void check_known(const json& user, const json& defaults, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config " + (path.empty() ? std::string("root") : path) + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key " + key);
    if (it.value().is_null()) throw ConfigError("config key " + key + " is null");
    const json& d = defaults.at(it.key());
    if (d.is_object()) check_known(it.value(), d, key);
  }
}

}  // namespace

json to_json(const PipelineConfig& c) {
  const attack::AttackConfig& a = c.attack.config;
  return {{"seed", c.seed},
          {"work_dir", c.work_dir},
          {"scenes",
           {{"voc", scene_json(c.scenes.voc)},
            {"inria", scene_json(c.scenes.inria)},
            {"voc_train", c.scenes.voc_train},
            {"voc_test", c.scenes.voc_test},
            {"inria_train", c.scenes.inria_train},
            {"inria_test", c.scenes.inria_test}}},
          {"detector", detector::config_to_json(c.detector)},
          {"train", train_json(c.train)},
          {"attack",
           {{"alpha", a.alpha},
            {"beta", a.beta},
            {"normalize_regularizers", a.normalize_regularizers},
            {"patch_side", a.patch_side},
            {"steps", a.steps},
            {"batch", a.batch},
            {"lr", {{"initial", a.lr.initial}, {"decay", a.lr.decay}, {"decay_epochs", a.lr.decay_epochs}}},
            {"palette_file", c.attack.palette_file},
            {"transforms", transform_json(a.transforms)}}},
          {"advloop",
           {{"rounds", c.advloop.rounds},
            {"snapshots", c.advloop.snapshots},
            {"earliest_snapshot", c.advloop.earliest_snapshot},
            {"retrain", train_json(c.advloop.retrain)},
            {"patched_fraction", c.advloop.patched_fraction},
            {"flag_below_drop", c.advloop.flag_below_drop}}},
          {"corpus",
           {{"runs_per_model", c.corpus.runs_per_model},
            {"snapshots_per_run", c.corpus.snapshots_per_run},
            {"earliest_snapshot", c.corpus.earliest_snapshot},
            {"seeds", c.corpus.seeds}}},
          {"defense",
           {{"base_model", c.defense.base_model},
            {"patched_fraction", c.defense.patched_fraction},
            {"train", train_json(c.defense.train)}}},
          {"eval",
           {{"iou", c.eval.thresholds.iou},
            {"score", c.eval.thresholds.score},
            {"nms", c.eval.thresholds.nms},
            {"recall_score", c.eval.thresholds.recall_score},
            {"cells", c.eval.cells}}}};
}

PipelineConfig from_json(const json& j) {
  check_known(j, to_json(default_config()), "");
  json full = to_json(default_config());
  full.merge_patch(j);
  const Reader r(full);

  PipelineConfig c;
  c.seed = r.get<std::uint64_t>("seed");
  c.work_dir = r.get<std::string>("work_dir");
  c.scenes.voc = read_scene(r, "scenes.voc");
  c.scenes.inria = read_scene(r, "scenes.inria");
  c.scenes.voc_train = r.get<int>("scenes.voc_train");
  c.scenes.voc_test = r.get<int>("scenes.voc_test");
  c.scenes.inria_train = r.get<int>("scenes.inria_train");
  c.scenes.inria_test = r.get<int>("scenes.inria_test");
  for (int n : {c.scenes.voc_train, c.scenes.voc_test, c.scenes.inria_train, c.scenes.inria_test})
    if (n < 1) throw ConfigError("scenes: split sizes must be >= 1");
  try {
    c.detector = detector::config_from_json(r.node("detector"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("detector: ") + e.what());
  }
  if (c.detector.defended()) throw ConfigError("detector.class_names must not contain the patch class");
  c.train = read_train(r, "train");

  attack::AttackConfig& a = c.attack.config;
  a.alpha = r.get<Real>("attack.alpha");
  a.beta = r.get<Real>("attack.beta");
  a.normalize_regularizers = r.get<bool>("attack.normalize_regularizers");
  a.patch_side = r.get<int>("attack.patch_side");
  a.steps = r.get<long>("attack.steps");
  a.batch = r.get<int>("attack.batch");
  a.lr.initial = r.get<Real>("attack.lr.initial");
  a.lr.decay = r.get<Real>("attack.lr.decay");
  a.lr.decay_epochs = r.get<int>("attack.lr.decay_epochs");
  c.attack.palette_file = r.get<std::string>("attack.palette_file");
  a.transforms = read_transforms(r, "attack.transforms");
  a.palette = {{0, 0, 0}};  // placeholder so the remaining fields validate here
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  a.palette.clear();

  c.advloop.rounds = r.get<int>("advloop.rounds");
  c.advloop.snapshots = r.get<int>("advloop.snapshots");
  c.advloop.earliest_snapshot = r.get<Real>("advloop.earliest_snapshot");
  c.advloop.retrain = read_train(r, "advloop.retrain");
  c.advloop.patched_fraction = r.get<Real>("advloop.patched_fraction");
  c.advloop.flag_below_drop = r.get<Real>("advloop.flag_below_drop");
  if (c.advloop.rounds < 0 || c.advloop.snapshots < 1) throw ConfigError("advloop: rounds >= 0 and snapshots >= 1 required");

  c.corpus.runs_per_model = r.get<int>("corpus.runs_per_model");
  c.corpus.snapshots_per_run = r.get<int>("corpus.snapshots_per_run");
  c.corpus.earliest_snapshot = r.get<Real>("corpus.earliest_snapshot");
  c.corpus.seeds = r.get<std::vector<std::uint64_t>>("corpus.seeds");
  if (c.corpus.runs_per_model < 1 || c.corpus.snapshots_per_run < 1)
    throw ConfigError("corpus: runs_per_model and snapshots_per_run must be >= 1");

  c.defense.base_model = r.get<std::string>("defense.base_model");
  c.defense.patched_fraction = r.get<Real>("defense.patched_fraction");
  c.defense.train = read_train(r, "defense.train");
  for (Real f : {c.defense.patched_fraction, c.advloop.patched_fraction})
    if (!(f >= 0 && f <= 1)) throw ConfigError("patched_fraction must lie in [0, 1]");

  c.eval.thresholds.iou = r.get<Real>("eval.iou");
  c.eval.thresholds.score = r.get<Real>("eval.score");
  c.eval.thresholds.nms = r.get<Real>("eval.nms");
  c.eval.thresholds.recall_score = r.get<Real>("eval.recall_score");
  c.eval.cells = r.get<std::vector<std::string>>("eval.cells");
  parse_cells(c.eval.cells);
  return c;
}

namespace {

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;  // bare strings need no quotes on the command line
  }
}

}  // namespace

json resolve_config(const std::string& file, const std::vector<std::string>& overrides) {
  const json defaults = to_json(default_config());
  json resolved = defaults;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file);
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + file + ": " + e.what());
    }
    check_known(user, defaults, "");
    resolved.merge_patch(user);
  }
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string path = o.substr(0, eq);
    json* cur = &resolved;
    std::size_t start = 0;
    for (;;) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!cur->is_object() || !cur->contains(key)) throw ConfigError("unknown config key " + path);
      cur = &(*cur)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    *cur = parse_value(o.substr(eq + 1));
  }
  from_json(resolved);  // validates
  return resolved;
}

std::string fingerprint(const json& resolved) {
  json j = resolved;
  j.erase("work_dir");  // where a run lives does not change what it computes
  return hex64(fnv1a64(j.dump()));
}

std::vector<eval::CellId> parse_cells(const std::vector<std::string>& specs) {
  std::vector<eval::CellId> out;
  for (const std::string& s : specs) {
    const auto a = s.find('/');
    const auto b = a == std::string::npos ? a : s.find('/', a + 1);
    if (b == std::string::npos || s.find('/', b + 1) != std::string::npos || a == 0 || b == a + 1 || b + 1 == s.size())
      throw ConfigError("eval cell '" + s + "' is not model/scenes/patches");
    out.push_back({s.substr(0, a), s.substr(a + 1, b - a - 1), s.substr(b + 1)});
  }
  return out;
}

}  // namespace adyolo::pipeline
