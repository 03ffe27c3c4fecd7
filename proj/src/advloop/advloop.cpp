#include "adyolo/advloop/advloop.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "adyolo/defense/defense.hpp"
#include "adyolo/numcore/random.hpp"

namespace adyolo::advloop {

namespace fs = std::filesystem;
using detector::DetectorModel;
using detector::LabeledImage;
using nlohmann::json;

void Registry::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string expected = i == 0 ? "" : entries[i - 1].id;
    if (entries[i].parent != expected) {
      throw std::invalid_argument("registry: model " + entries[i].id + " has parent '" + entries[i].parent +
                                  "', expected '" + expected + "'");
    }
  }
}

void Registry::save(const std::string& path) const {
  validate();
  json models = json::array();
  for (const RegistryEntry& e : entries) {
    models.push_back({{"id", e.id},
                      {"checkpoint", e.checkpoint},
                      {"parent", e.parent},
                      {"patch_runs", e.patch_runs},
                      {"flagged", e.flagged},
                      {"note", e.note}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write registry " + path);
  out << json{{"models", models}}.dump(2) << '\n';
}

Registry Registry::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open registry " + path);
  const json j = json::parse(in);
  Registry r;
  for (const json& m : j.at("models")) {
    RegistryEntry e;
    e.id = m.at("id").get<std::string>();
    e.checkpoint = m.at("checkpoint").get<std::string>();
    e.parent = m.at("parent").get<std::string>();
    e.patch_runs = m.at("patch_runs").get<std::vector<std::string>>();
    e.flagged = m.at("flagged").get<bool>();
    e.note = m.value("note", "");
    r.entries.push_back(std::move(e));
  }
  r.validate();
  return r;
}

RoundResult adversarial_round(const DetectorModel& model, const std::vector<LabeledImage>& clean,
                              const std::vector<LabeledImage>& patchable, const std::vector<LabeledImage>& eval_scenes,
                              const RoundConfig& config, const std::string& run_id, const std::string& next_id) {
  if (model.config.defended()) throw std::invalid_argument("adversarial_round: expects an undefended model");
  RoundResult out;
  const std::vector<long> snaps = attack::trajectory_snapshots(config.attack.steps, config.snapshots, config.earliest_snapshot);
  out.run = attack::optimize_patch(model, patchable, config.attack, snaps, run_id);

  const eval::EvalReport clean_report = eval::evaluate(model, eval_scenes, config.thresholds, {model.id, "eval", "clean"});
  const auto attacked = patch::random_apply_dataset(std::span(&out.run.final, 1), eval_scenes,
                                                    derive_seed(config.seed, {0}), model.config.num_classes(),
                                                    config.attack.transforms);
  std::vector<LabeledImage> attacked_scenes;
  for (const patch::PatchedScene& s : attacked) attacked_scenes.push_back({s.image, s.labels});
  const eval::EvalReport attacked_report =
      eval::evaluate(model, attacked_scenes, config.thresholds, {model.id, "eval", run_id});
  out.clean_person_ap = clean_report.ap("person");
  out.attacked_person_ap = attacked_report.ap("person");
  out.flagged = out.clean_person_ap - out.attacked_person_ap < config.flag_below_drop;

  defense::MixedDatasetSpec spec;
  spec.clean = clean;
  spec.patchable = patchable;
  spec.patches = out.run.snapshots;
  if (spec.patches.empty()) spec.patches.push_back(out.run.final);
  spec.patched_fraction = config.patched_fraction;
  spec.seed = derive_seed(config.seed, {1});
  spec.label_patches = false;
  spec.patch_class_id = model.config.num_classes();
  spec.transforms = config.attack.transforms;
  out.next = model;
  out.next.id = next_id;
  detector::train(out.next, defense::mixed_source(std::move(spec), config.retrain.batch), config.retrain);
  return out;
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::vector<patch::Patch> PatchCorpus::patches(Split s) const {
  std::vector<patch::Patch> out;
  for (const CorpusEntry& e : entries)
    if (e.split == s) out.push_back(e.patch);
  return out;
}

void PatchCorpus::save(const std::string& dir) const {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "split.tsv");
  if (!manifest) throw std::runtime_error("cannot write corpus manifest in " + dir);
  manifest << "id\tsplit\trun\tmodel\n";
  for (const CorpusEntry& e : entries) {
    patch::save_patch(dir, e.patch);
    manifest << e.patch.id << '\t' << split_name(e.split) << '\t' << e.run << '\t' << e.model << '\n';
  }
}

PatchCorpus PatchCorpus::load(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "split.tsv");
  if (!manifest) throw std::runtime_error("missing corpus manifest " + (fs::path(dir) / "split.tsv").string());
  std::string line;
  std::getline(manifest, line);
  PatchCorpus c;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, split, run, model;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, split, '\t') || !std::getline(ls, run, '\t') ||
        !std::getline(ls, model)) {
      throw std::runtime_error("bad corpus manifest line: " + line);
    }
    if (split != "train" && split != "test") throw std::runtime_error("bad split '" + split + "' for patch " + id);
    c.entries.push_back({patch::load_patch(dir, id), run, model, split == "train" ? Split::kTrain : Split::kTest});
  }
  return c;
}

std::vector<std::uint64_t> corpus_seeds(std::size_t models, const attack::AttackConfig& attack, const CorpusPlan& plan) {
  const std::size_t runs = models * static_cast<std::size_t>(plan.runs_per_model);
  if (!plan.seeds.empty()) {
    if (plan.seeds.size() != runs)
      throw std::invalid_argument("build_corpus: " + std::to_string(plan.seeds.size()) + " seeds for " +
                                  std::to_string(runs) + " runs");
    return plan.seeds;
  }
  std::vector<std::uint64_t> out;
  for (std::size_t m = 0; m < models; ++m)
    for (int r = 0; r < plan.runs_per_model; ++r) out.push_back(derive_seed(attack.seed, {m, static_cast<std::uint64_t>(r)}));
  return out;
}

std::vector<Split> assign_splits(std::size_t total) {
  const std::size_t test = total / 5;
  std::vector<Split> out(total, Split::kTrain);
  std::fill(out.end() - static_cast<std::ptrdiff_t>(test), out.end(), Split::kTest);
  return out;
}

PatchCorpus build_corpus(const std::vector<DetectorModel>& models, const std::vector<LabeledImage>& scenes,
                         const attack::AttackConfig& attack, const CorpusPlan& plan) {
  if (models.empty()) throw std::invalid_argument("build_corpus: no models");
  if (plan.runs_per_model < 1 || plan.snapshots_per_run < 1)
    throw std::invalid_argument("build_corpus: runs and snapshots per run must be >= 1");
  const std::vector<std::uint64_t> seeds = corpus_seeds(models.size(), attack, plan);
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw std::invalid_argument("build_corpus: duplicate attack seeds");
  const std::vector<long> snaps = attack::trajectory_snapshots(attack.steps, plan.snapshots_per_run, plan.earliest_snapshot);

  PatchCorpus corpus;
  std::size_t k = 0;
  for (const DetectorModel& m : models) {
    for (int r = 0; r < plan.runs_per_model; ++r, ++k) {
      attack::AttackConfig cfg = attack;
      cfg.seed = seeds[k];
      const std::string run_id = m.id + "-r" + std::to_string(r);
      attack::AttackResult res = attack::optimize_patch(m, scenes, cfg, snaps, run_id);
      for (patch::Patch& p : res.snapshots) corpus.entries.push_back({std::move(p), run_id, m.id, Split::kTrain});
    }
  }
  const std::vector<Split> splits = assign_splits(corpus.entries.size());
  for (std::size_t i = 0; i < splits.size(); ++i) corpus.entries[i].split = splits[i];
  return corpus;
}

namespace {

Real l2(const Tensor& a, const Tensor& b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

Diversity corpus_diversity(const PatchCorpus& corpus) {
  Real cross = 0, within = 0;
  long n_cross = 0, n_within = 0;
  const auto& e = corpus.entries;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      if (e[i].model != e[j].model) {
        cross += l2(e[i].patch.pixels, e[j].patch.pixels);
        ++n_cross;
      } else if (e[i].run == e[j].run) {
        within += l2(e[i].patch.pixels, e[j].patch.pixels);
        ++n_within;
      }
    }
  return {n_cross ? cross / n_cross : 0, n_within ? within / n_within : 0};
}

}  // namespace adyolo::advloop
