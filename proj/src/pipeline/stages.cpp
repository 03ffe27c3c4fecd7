#include "adyolo/pipeline/stages.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "adyolo/defense/defense.hpp"
#include "adyolo/detector/checkpoint.hpp"
#include "adyolo/eval/report.hpp"
#include "adyolo/numcore/hash.hpp"
#include "adyolo/numcore/random.hpp"
#include "adyolo/scenesynth/scenes.hpp"

namespace adyolo::pipeline {

namespace fs = std::filesystem;
using detector::DetectorModel;
using detector::LabeledImage;
using nlohmann::json;

namespace {

// Seed-stream tags, one per stage.
enum : std::uint64_t { kSynth = 1, kTrain, kAttack, kAdvloop, kCorpus, kDefense, kEval };

const char* const kSplits[] = {"voc_train", "voc_test", "I0", "I1"};

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

std::vector<fs::path> files_under(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(p)) {
    out.push_back(p);
  } else if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_loss_trace(const std::string& path, const std::vector<Real>& trace) {
  std::ofstream out(path);
  out << "step\tloss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", i, trace[i]);
    out << buf;
  }
}

std::vector<LabeledImage> concat(std::vector<LabeledImage> a, const std::vector<LabeledImage>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

detector::TrainSchedule schedule_of(const TrainSection& t, std::uint64_t seed) {
  detector::TrainSchedule s;
  s.steps = t.steps;
  s.batch = t.batch;
  s.learning_rate = t.learning_rate;
  s.lr_decay = t.lr_decay;
  s.decay_every = t.decay_every;
  s.flip_augment = t.flip_augment;
  s.seed = seed;
  return s;
}

std::string palette_path(const std::string& configured) {
  return configured.empty() ? std::string(ADYOLO_DATA_DIR) + "/palette.txt" : configured;
}

}  // namespace

// Tracks one stage's inputs and outputs and writes its manifest.
class Pipeline::Stage {
 public:
  Stage(const Pipeline& p, std::string name)
      : p_(p), name_(std::move(name)), started_(utc_now()), t0_(std::chrono::steady_clock::now()) {
    p_.say("[" + name_ + "] start");
  }

  // Missing inputs abort the stage before any work.
  void input(const std::string& rel) {
    const fs::path full = p_.path(rel);
    if (!fs::exists(full)) throw MissingArtifact(name_, full.string());
    for (const fs::path& f : files_under(full)) inputs_.push_back(record(f));
  }

  void external_input(const std::string& path) {
    if (!fs::exists(path)) throw MissingArtifact(name_, path);
    inputs_.push_back({{"path", path}, {"fnv1a64", file_hash(path)}});
  }

  // Clears a directory this stage owns.
  void fresh_dir(const std::string& rel) {
    fs::remove_all(p_.path(rel));
    fs::create_directories(p_.path(rel));
  }

  void output(const std::string& rel) {
    for (const fs::path& f : files_under(p_.path(rel))) outputs_.push_back(record(f));
  }

  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

  void finish() {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    json m = {{"stage", name_},
              {"config_fingerprint", p_.fingerprint_},
              {"seed", p_.config_.seed},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"started_at", started_},
              {"wall_time_seconds", wall}};
    for (auto it = extra_.begin(); it != extra_.end(); ++it) m[it.key()] = it.value();
    fs::create_directories(p_.path("manifests"));
    std::ofstream(p_.path("manifests/" + name_ + ".json")) << m.dump(2) << '\n';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", wall);
    p_.say("[" + name_ + "] done in " + buf + " s");
  }

 private:
  json record(const fs::path& f) const {
    return {{"path", fs::relative(f, p_.config_.work_dir).generic_string()}, {"fnv1a64", file_hash(f)}};
  }

  const Pipeline& p_;
  std::string name_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
  json inputs_ = json::array();
  json outputs_ = json::array();
  json extra_ = json::object();
};

Pipeline::Pipeline(json resolved_config, Log log)
    : resolved_(std::move(resolved_config)),
      config_(from_json(resolved_)),
      fingerprint_(fingerprint(resolved_)),
      log_(std::move(log)) {}

std::string Pipeline::path(const std::string& relative) const { return (fs::path(config_.work_dir) / relative).string(); }

void Pipeline::say(const std::string& msg) const {
  if (log_) log_(msg);
}

attack::AttackConfig Pipeline::attack_config(std::uint64_t seed) const {
  attack::AttackConfig a = config_.attack.config;
  a.palette = attack::load_palette(palette_path(config_.attack.palette_file));
  a.seed = seed;
  return a;
}

eval::MatrixConfig Pipeline::matrix_config() const {
  eval::MatrixConfig m;
  m.thresholds = config_.eval.thresholds;
  m.whitebox = attack_config(derive_seed(config_.seed, {kEval, 0}));
  m.whitebox_scenes = "I0";
  m.seed = derive_seed(config_.seed, {kEval, 1});
  m.patch_class_id = config_.detector.num_classes();
  return m;
}

std::vector<LabeledImage> Pipeline::load_scenes(const std::string& split) const {
  std::vector<LabeledImage> out;
  for (scenes::Scene& s : scenes::load_split(path("data/" + split))) out.push_back({std::move(s.image), std::move(s.labels)});
  return out;
}

DetectorModel Pipeline::load_model(const std::string& id) const { return detector::load_checkpoint(path("models/" + id + ".ckpt")); }

advloop::Registry Pipeline::load_registry() const { return advloop::Registry::load(path("models/registry.json")); }

advloop::PatchCorpus Pipeline::load_corpus() const { return advloop::PatchCorpus::load(path("corpus")); }

std::vector<patch::Patch> Pipeline::load_attack_patches() const {
  std::vector<patch::Patch> out{patch::load_patch(path("attack"), "A0")};
  std::ifstream in(path("attack/snapshots.txt"));
  for (std::string id; std::getline(in, id);)
    if (!id.empty()) out.push_back(patch::load_patch(path("attack"), id));
  return out;
}

std::vector<eval::EvalReport> Pipeline::load_reports() const { return eval::read_reports(path("reports/reports.jsonl")); }

void Pipeline::synth_data() {
  Stage st(*this, "synth-data");
  const ScenesSection& s = config_.scenes;
  const std::pair<const scenes::SceneConfig*, int> plan[] = {
      {&s.voc, s.voc_train}, {&s.voc, s.voc_test}, {&s.inria, s.inria_train}, {&s.inria, s.inria_test}};
  st.fresh_dir("data");
  for (std::size_t k = 0; k < std::size(kSplits); ++k) {
    const auto split = scenes::generate_split(plan[k].second, derive_seed(config_.seed, {kSynth, k}), *plan[k].first);
    scenes::save_split(path(std::string("data/") + kSplits[k]), split);
    say("  " + std::string(kSplits[k]) + ": " + std::to_string(split.size()) + " scenes");
  }
  st.output("data");
  st.finish();
}

void Pipeline::train_detector() {
  Stage st(*this, "train-detector");
  st.input("data/voc_train");
  const std::vector<LabeledImage> data = load_scenes("voc_train");
  DetectorModel m = detector::make_model(config_.detector, derive_seed(config_.seed, {kTrain, 0}));
  m.id = "M0";
  const detector::TrainSchedule schedule = schedule_of(config_.train, derive_seed(config_.seed, {kTrain, 2}));
  const auto result = detector::train(m, detector::epoch_sampler(data, schedule.batch, derive_seed(config_.seed, {kTrain, 1})),
                                      schedule, [&](long step, Real loss) {
                                        if (step % 250 == 0) say("  step " + std::to_string(step) + " loss " + std::to_string(loss));
                                      });
  st.fresh_dir("models");
  detector::save_checkpoint(path("models/M0.ckpt"), m);
  write_loss_trace(path("models/M0.loss.tsv"), result.loss_trace);
  advloop::Registry reg;
  reg.entries.push_back({"M0", "M0.ckpt", "", {}, false, "trained on voc_train"});
  reg.save(path("models/registry.json"));
  st.output("models/M0.ckpt");
  st.output("models/M0.loss.tsv");
  st.output("models/registry.json");
  st.finish();
}

void Pipeline::attack() {
  Stage st(*this, "attack");
  st.input("models/M0.ckpt");
  st.input("data/I0");
  st.external_input(palette_path(config_.attack.palette_file));
  const DetectorModel m0 = load_model("M0");
  const attack::AttackConfig cfg = attack_config(derive_seed(config_.seed, {kAttack}));
  const auto snaps = attack::trajectory_snapshots(cfg.steps, config_.corpus.snapshots_per_run, config_.corpus.earliest_snapshot);
  const attack::AttackResult r = attack::optimize_patch(m0, load_scenes("I0"), cfg, snaps, "A0");
  st.fresh_dir("attack");
  patch::save_patch(path("attack"), r.final);
  std::ofstream ids(path("attack/snapshots.txt"));
  for (const patch::Patch& p : r.snapshots) {
    patch::save_patch(path("attack"), p);
    ids << p.id << '\n';
  }
  ids.close();
  attack::write_trace(path("attack/A0.trace.tsv"), r.trace);
  say("  J_obj " + std::to_string(r.trace.front().j_obj) + " -> " + std::to_string(r.trace.back().j_obj));
  st.output("attack");
  st.finish();
}

void Pipeline::advloop() {
  Stage st(*this, "advloop");
  st.input("models/registry.json");
  st.input("models/M0.ckpt");
  for (const char* s : {"voc_train", "I0"}) st.input(std::string("data/") + s);
  st.external_input(palette_path(config_.attack.palette_file));
  const std::vector<LabeledImage> inria = load_scenes("I0");
  const std::vector<LabeledImage> clean = concat(load_scenes("voc_train"), inria);

  advloop::Registry reg = load_registry();
  reg.entries.resize(1);  // rounds always restart from M0
  for (int i = 1; i <= 9; ++i) fs::remove(path("models/M" + std::to_string(i) + ".ckpt"));
  st.fresh_dir("advloop");
  DetectorModel current = load_model("M0");
  for (int i = 0; i < config_.advloop.rounds; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    advloop::RoundConfig rc;
    rc.attack = attack_config(derive_seed(config_.seed, {kAdvloop, ui, 0}));
    rc.snapshots = config_.advloop.snapshots;
    rc.earliest_snapshot = config_.advloop.earliest_snapshot;
    rc.retrain = schedule_of(config_.advloop.retrain, derive_seed(config_.seed, {kAdvloop, ui, 2}));
    rc.patched_fraction = config_.advloop.patched_fraction;
    rc.seed = derive_seed(config_.seed, {kAdvloop, ui, 1});
    rc.thresholds = config_.eval.thresholds;
    rc.flag_below_drop = config_.advloop.flag_below_drop;
    const std::string run_id = "adv" + std::to_string(i);
    const std::string next_id = "M" + std::to_string(i + 1);
    advloop::RoundResult r = advloop::adversarial_round(current, clean, inria, inria, rc, run_id, next_id);

    const std::string dir = "advloop/round" + std::to_string(i);
    patch::save_patch(path(dir), r.run.final);
    for (const patch::Patch& p : r.run.snapshots) patch::save_patch(path(dir), p);
    attack::write_trace(path(dir + "/" + run_id + ".trace.tsv"), r.run.trace);
    detector::save_checkpoint(path("models/" + next_id + ".ckpt"), r.next);
    std::ostringstream note;
    note << "attack " << run_id << " on I0: person AP " << r.clean_person_ap << " -> " << r.attacked_person_ap;
    reg.entries.push_back({next_id, next_id + ".ckpt", current.id, {run_id}, r.flagged, note.str()});
    say("  " + next_id + ": " + note.str() + (r.flagged ? " (flagged)" : ""));
    st.output("models/" + next_id + ".ckpt");
    current = std::move(r.next);
  }
  reg.save(path("models/registry.json"));
  st.output("advloop");
  st.output("models/registry.json");
  st.finish();
}

void Pipeline::build_corpus() {
  Stage st(*this, "build-corpus");
  st.input("models/registry.json");
  st.input("data/I0");
  st.external_input(palette_path(config_.attack.palette_file));
  const advloop::Registry reg = load_registry();
  std::vector<DetectorModel> models;
  for (const advloop::RegistryEntry& e : reg.entries) {
    st.input("models/" + e.checkpoint);
    models.push_back(detector::load_checkpoint(path("models/" + e.checkpoint)));
  }
  advloop::CorpusPlan plan;
  plan.runs_per_model = config_.corpus.runs_per_model;
  plan.snapshots_per_run = config_.corpus.snapshots_per_run;
  plan.earliest_snapshot = config_.corpus.earliest_snapshot;
  plan.seeds = config_.corpus.seeds;
  const advloop::PatchCorpus corpus =
      advloop::build_corpus(models, load_scenes("I0"), attack_config(derive_seed(config_.seed, {kCorpus})), plan);
  st.fresh_dir("corpus");
  corpus.save(path("corpus"));
  say("  " + std::to_string(corpus.patches(advloop::Split::kTrain).size()) + " train / " +
      std::to_string(corpus.patches(advloop::Split::kTest).size()) + " test patches");
  st.output("corpus");
  st.finish();
}

void Pipeline::train_defense() {
  Stage st(*this, "train-defense");
  const std::string base_id = config_.defense.base_model;
  st.input("models/" + base_id + ".ckpt");
  st.input("corpus");
  for (const char* s : {"voc_train", "I0"}) st.input(std::string("data/") + s);
  DetectorModel d = defense::extend_head(load_model(base_id), "D0");
  defense::MixedDatasetSpec spec;
  spec.patchable = load_scenes("I0");
  spec.clean = concat(load_scenes("voc_train"), spec.patchable);
  spec.patches = load_corpus().patches(advloop::Split::kTrain);
  spec.patched_fraction = config_.defense.patched_fraction;
  spec.seed = derive_seed(config_.seed, {kDefense, 0});
  spec.label_patches = true;
  spec.patch_class_id = d.config.class_index(detector::kPatchClassName);
  spec.transforms = config_.attack.config.transforms;
  const auto result = defense::train_defense(d, spec, schedule_of(config_.defense.train, derive_seed(config_.seed, {kDefense, 1})),
                                             [&](long step, Real loss) {
                                               if (step % 250 == 0) say("  step " + std::to_string(step) + " loss " + std::to_string(loss));
                                             });
  detector::save_checkpoint(path("models/D0.ckpt"), d);
  write_loss_trace(path("models/D0.loss.tsv"), result.loss_trace);
  st.output("models/D0.ckpt");
  st.output("models/D0.loss.tsv");
  st.finish();
}

void Pipeline::eval_matrix() { eval_matrix(parse_cells(config_.eval.cells)); }

void Pipeline::eval_matrix(const std::vector<eval::CellId>& cells) {
  Stage st(*this, "eval-matrix");
  eval::MatrixInputs in;
  std::set<std::string> wanted_models, wanted_scenes, wanted_patches;
  for (const eval::CellId& c : cells) {
    wanted_models.insert(c.model);
    wanted_scenes.insert(c.scenes);
    wanted_patches.insert(c.patches);
  }
  if (std::any_of(cells.begin(), cells.end(), [](const eval::CellId& c) { return c.patches == eval::kWhiteboxCell; })) {
    wanted_scenes.insert("I0");
    st.external_input(palette_path(config_.attack.palette_file));
  }
  // Absent artifacts only skip the cells that need them.
  for (const std::string& m : wanted_models)
    if (fs::exists(path("models/" + m + ".ckpt"))) {
      st.input("models/" + m + ".ckpt");
      in.models.emplace(m, load_model(m));
    }
  for (const std::string& s : wanted_scenes)
    if (fs::exists(path("data/" + s + "/manifest.tsv"))) {
      st.input("data/" + s);
      in.scenes.emplace(s, load_scenes(s));
    }
  if ((wanted_patches.count("P0") || wanted_patches.count("P1")) && fs::exists(path("corpus/split.tsv"))) {
    st.input("corpus");
    const advloop::PatchCorpus corpus = load_corpus();
    in.patches["P0"] = corpus.patches(advloop::Split::kTrain);
    in.patches["P1"] = corpus.patches(advloop::Split::kTest);
  }
  if (wanted_patches.count("A0") && fs::exists(path("attack/A0.json"))) {
    st.input("attack");
    in.patches["A0"] = {patch::load_patch(path("attack"), "A0")};
  }

  const std::vector<eval::CellOutcome> outcomes = eval::run_matrix(in, cells, matrix_config());
  st.fresh_dir("reports");
  std::vector<eval::EvalReport> reports;
  json skipped = json::array();
  for (const eval::CellOutcome& o : outcomes) {
    const std::string name = o.cell.model + "/" + o.cell.scenes + "/" + o.cell.patches;
    if (!o.report) {
      skipped.push_back({{"cell", name}, {"reason", o.skipped}});
      say("  skipped " + name + ": " + o.skipped);
      continue;
    }
    reports.push_back(*o.report);
    const eval::ClassReport* person = o.report->find("person");
    say("  " + name + ": mAP " + std::to_string(o.report->map) +
        (person ? ", person AP " + std::to_string(person->ap) : std::string()));
    if (o.whitebox_patch) patch::save_patch(path("reports/whitebox"), *o.whitebox_patch);
  }
  eval::write_reports(path("reports/reports.jsonl"), reports);
  st.note("skipped_cells", skipped);
  st.output("reports");
  st.finish();
}

std::vector<std::string> Pipeline::report() {
  Stage st(*this, "report");
  st.input("reports/reports.jsonl");
  const std::vector<eval::EvalReport> reports = load_reports();
  const std::string tables = eval::render_tables(reports);
  fs::remove_all(path("tables"));
  fs::create_directories(path("tables"));
  std::ofstream(path("tables/tables.txt")) << tables;
  eval::write_pr_points(path("tables/pr"), reports);
  say(tables);
  st.output("tables");
  st.finish();
  const std::vector<std::string> orphans = find_orphans(config_.work_dir);
  for (const std::string& o : orphans) say("  orphan artifact: " + o);
  return orphans;
}

void Pipeline::run(const std::string& stage) {
  if (stage == "synth-data") synth_data();
  else if (stage == "train-detector") train_detector();
  else if (stage == "attack") attack();
  else if (stage == "advloop") advloop();
  else if (stage == "build-corpus") build_corpus();
  else if (stage == "train-defense") train_defense();
  else if (stage == "eval-matrix") eval_matrix();
  else if (stage == "report") report();
  else throw ConfigError("unknown stage " + stage);
}

void Pipeline::run_all() {
  for (const std::string& s : stage_names()) run(s);
}

std::vector<std::string> find_orphans(const std::string& work_dir) {
  std::set<std::string> known;
  const fs::path manifests = fs::path(work_dir) / "manifests";
  for (const fs::path& m : files_under(manifests)) {
    known.insert(fs::relative(m, work_dir).generic_string());
    std::ifstream in(m);
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("outputs")) continue;
    for (const json& o : j.at("outputs")) known.insert(o.at("path").get<std::string>());
  }
  std::vector<std::string> orphans;
  for (const fs::path& f : files_under(work_dir)) {
    const std::string rel = fs::relative(f, work_dir).generic_string();
    if (!known.count(rel)) orphans.push_back(rel);
  }
  return orphans;
}

json manifest_without_timing(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  json j = json::parse(in);
  j.erase("started_at");
  j.erase("wall_time_seconds");
  return j;
}

}  // namespace adyolo::pipeline
