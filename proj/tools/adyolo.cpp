// Command-line driver: one subcommand per pipeline stage.
//
//   adyolo <stage> [--config FILE] [--set key.path=value]... [--seed N] [--work-dir DIR]
//   adyolo eval-matrix --cells clean|all|model/scenes/patches...
//   adyolo <stage> --print-config    resolved config, nothing runs
//
// Exit codes: 0 success, 1 usage or config error, 2 missing artifact,
// 3 numerical failure.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "adyolo/pipeline/stages.hpp"

using namespace adyolo;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string work_dir;
  std::vector<std::string> cells;
  bool fail_on_orphans = false;
  bool print_config = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "pipeline config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "override one config key, e.g. --set train.steps=500");
  cmd->add_option("--seed", o.seed, "global seed");
  cmd->add_option("--work-dir", o.work_dir, "artifact directory");
  cmd->add_flag("--print-config", o.print_config, "print the resolved config as JSON and exit");
}

int run(const std::string& stage, const Options& o) {
  std::vector<std::string> sets = o.sets;
  if (o.seed) sets.push_back("seed=" + std::to_string(*o.seed));
  if (!o.work_dir.empty()) sets.push_back("work_dir=\"" + o.work_dir + "\"");
  const nlohmann::json resolved = pipeline::resolve_config(o.config, sets);
  if (o.print_config) {
    std::cout << resolved.dump(2) << '\n';
    return 0;
  }
  pipeline::Pipeline p(resolved, [](const std::string& msg) { std::cout << msg << std::endl; });

  if (stage == "eval-matrix" && !o.cells.empty()) {
    std::vector<std::string> specs;
    for (const std::string& c : o.cells) {
      if (c == "all") {
        specs.insert(specs.end(), p.config().eval.cells.begin(), p.config().eval.cells.end());
      } else if (c == "clean") {
        for (const std::string& s : p.config().eval.cells)
          if (s.ends_with("/clean")) specs.push_back(s);
      } else {
        specs.push_back(c);
      }
    }
    p.eval_matrix(pipeline::parse_cells(specs));
  } else if (stage == "report") {
    const auto orphans = p.report();
    if (o.fail_on_orphans && !orphans.empty()) {
      std::cerr << orphans.size() << " orphan artifact(s)\n";
      return 2;
    }
  } else if (stage == "all") {
    p.run_all();
  } else {
    p.run(stage);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial patch attacks and the patch-class defense on a micro grid detector"};
  app.require_subcommand(1);
  Options opts;
  std::string chosen;
  std::vector<std::string> stages = pipeline::stage_names();
  stages.push_back("all");
  for (const std::string& s : stages) {
    CLI::App* cmd = app.add_subcommand(s, s == "all" ? "run every stage in order" : "run the " + s + " stage");
    add_common(cmd, opts);
    if (s == "eval-matrix") cmd->add_option("--cells", opts.cells, "clean, all, or explicit model/scenes/patches cells");
    if (s == "report") cmd->add_flag("--fail-on-orphans", opts.fail_on_orphans, "exit 2 when unmanifested files exist");
    cmd->callback([&chosen, s] { chosen = s; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    return run(chosen, opts);
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const pipeline::MissingArtifact& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
