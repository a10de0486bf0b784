// tridecon: split | train | restore | evaluate | report | make-synthetic
//
// Exit codes: 0 success, 2 invalid configuration or arguments, 3 a stage failed.

#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "tridecon/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::string axis = "all";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (INI)")->required();
  cmd->add_option("--axis", c.axis, "Section axis")->check(CLI::IsMember({"xy", "xz", "yz", "all"}));
  cmd->add_option("--seed", c.seed, "Override experiment.seed");
  cmd->add_option("--out", c.out, "Override experiment.out");
  cmd->add_option("--set", c.set, "Override any key: section.key=value (repeatable)");
}

int run(const std::string& name, const Common& c) {
  using namespace tridecon;
  CliOverrides ov;
  ov.seed = c.seed;
  if (c.out) ov.out = *c.out;
  ov.set = c.set;
  const ExperimentConfig cfg = load_experiment_config(c.config, ov);
  const std::vector<SliceAxis> axes = axes_from_flag(c.axis);
  if (name == "split") {
    const auto a = cmd_split(cfg);
    std::cout << a.blurred.string() << "\n" << a.clean.string() << "\n" << a.test.string() << "\n";
  } else if (name == "train") {
    for (const auto& [axis, path] : cmd_train(cfg, axes).checkpoints) std::cout << path.string() << "\n";
  } else if (name == "restore") {
    std::cout << cmd_restore(cfg, axes).string() << "\n";
  } else if (name == "evaluate") {
    const auto dir = cmd_evaluate(cfg);
    std::cout << (dir / "report.csv").string() << "\n";
  } else if (name == "report") {
    std::cout << cmd_report(cfg);
  } else if (name == "make-synthetic") {
    const auto [degraded, clean] = cmd_make_synthetic(cfg);
    std::cout << degraded.string() << "\n" << clean.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blind 3D deconvolution of fluorescence microscopy volumes"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  Common common;
  const char* names[] = {"split", "train", "restore", "evaluate", "report", "make-synthetic"};
  const char* help[] = {"Crop the blurred, clean and test subvolumes",
                        "Train one generator per section axis",
                        "Restore the test volume along each axis and fuse",
                        "Score original and restored volumes with 3-way IQA",
                        "Print the evaluation table and write a montage",
                        "Write a synthetic degraded/clean phantom pair"};
  for (int i = 0; i < 6; ++i) add_common(app.add_subcommand(names[i], help[i]), common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    return run(app.get_subcommands().front()->get_name(), common);
  } catch (const tridecon::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
}
