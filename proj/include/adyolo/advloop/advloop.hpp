#pragma once

// Alternating adversarial training (attack the current model, retrain it on
// patched data, repeat) and the trajectory-sampled patch corpus.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adyolo/detector/detector.hpp"
#include "adyolo/eval/metrics.hpp"
#include "adyolo/patch/attack.hpp"

namespace adyolo::advloop {

struct RegistryEntry {
  std::string id;
  std::string checkpoint;             // path relative to the registry file
  std::string parent;                 // empty for the first model
  std::vector<std::string> patch_runs;  // attack runs consumed to train this model
  bool flagged = false;               // the attack that produced its training patches was weak
  std::string note;
  friend bool operator==(const RegistryEntry&, const RegistryEntry&) = default;
};

struct Registry {
  std::vector<RegistryEntry> entries;

  // Throws when the parent chain is broken (first entry has a parent, or an
  // entry's parent is not its predecessor).
  void validate() const;
  void save(const std::string& path) const;
  static Registry load(const std::string& path);
};

struct RoundConfig {
  attack::AttackConfig attack;
  int snapshots = 5;
  Real earliest_snapshot = 0.2;
  detector::TrainSchedule retrain;
  Real patched_fraction = 0.5;
  std::uint64_t seed = 1;
  eval::EvalThresholds thresholds;
  Real flag_below_drop = 0.10;  // person AP drop that counts as a working attack
};

struct RoundResult {
  attack::AttackResult run;
  detector::DetectorModel next;
  Real clean_person_ap = 0;
  Real attacked_person_ap = 0;
  bool flagged = false;
};

// One max/min alternation: optimize a patch against `model` on the patchable
// scenes, then warm-start retrain on clean scenes mixed with patched ones
// (person labels kept, no patch class). The attack is judged on eval_scenes.
RoundResult adversarial_round(const detector::DetectorModel& model, const std::vector<detector::LabeledImage>& clean,
                              const std::vector<detector::LabeledImage>& patchable,
                              const std::vector<detector::LabeledImage>& eval_scenes, const RoundConfig& config,
                              const std::string& run_id, const std::string& next_id);

enum class Split { kTrain, kTest };
const char* split_name(Split s);

struct CorpusEntry {
  patch::Patch patch;
  std::string run;
  std::string model;
  Split split = Split::kTrain;
};

struct PatchCorpus {
  std::vector<CorpusEntry> entries;  // model-major, then run, then snapshot step

  std::vector<patch::Patch> patches(Split s) const;
  void save(const std::string& dir) const;  // patch files plus split.tsv
  static PatchCorpus load(const std::string& dir);
};

struct CorpusPlan {
  int runs_per_model = 3;
  int snapshots_per_run = 5;
  Real earliest_snapshot = 0.2;
  // One seed per (model, run), model-major; derived from the attack seed when empty.
  std::vector<std::uint64_t> seeds;
};

// Runs the attacks and assigns the last fifth of the patches (in corpus order)
// to TEST. Rejects duplicate seeds.
PatchCorpus build_corpus(const std::vector<detector::DetectorModel>& models,
                         const std::vector<detector::LabeledImage>& scenes, const attack::AttackConfig& attack,
                         const CorpusPlan& plan);

std::vector<std::uint64_t> corpus_seeds(std::size_t models, const attack::AttackConfig& attack, const CorpusPlan& plan);
// TEST membership for a corpus of `total` patches.
std::vector<Split> assign_splits(std::size_t total);

struct Diversity {
  Real cross_model = 0;  // mean pairwise L2 between patches of different models
  Real within_run = 0;   // mean pairwise L2 between patches of the same run
};
Diversity corpus_diversity(const PatchCorpus& corpus);

}  // namespace adyolo::advloop
