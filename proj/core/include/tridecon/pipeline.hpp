#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridecon/inference.hpp"
#include "tridecon/phantom.hpp"
#include "tridecon/sectioning.hpp"
#include "tridecon/spcyclegan.hpp"
#include "tridecon/volume.hpp"

namespace tridecon {

/// Invalid configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage could not run (missing artifacts, I/O, divergence); exit code 3.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class GeneratorKind { spcyclegan, identity };

struct EvaluateConfig {
  std::vector<std::string> metrics{"brisque", "ifq"};  // brisque | ifq | ogiqa
  std::filesystem::path brisque_model;                  // empty: bundled model
  std::optional<AxisRange> z_range;                     // evaluate only these xy planes
  std::string ogiqa_command;                            // required when ogiqa is listed
  std::vector<std::pair<std::string, std::filesystem::path>> extra;  // additional (name, volume) rows
  int threads = 0;
};

struct SyntheticConfig {
  PhantomConfig phantom;
  std::filesystem::path degraded;  // output paths
  std::filesystem::path clean;
  int bits = 16;
};

/// One experiment: where the data is, how to split it, how to train each axis,
/// how to fuse and what to measure.
///
/// The file is INI-style ([section] then key = value). Precedence, lowest to
/// highest: built-in defaults, [train], [train_xy]/[train_xz]/[train_yz],
/// --set section.key=value, then the dedicated --seed/--out flags. Relative
/// paths resolve against the config file's directory.
struct ExperimentConfig {
  std::filesystem::path config_path;
  std::filesystem::path input;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  int bits = 8;  // sample depth of written volumes
  DatasetSplit split;
  GeneratorKind kind = GeneratorKind::spcyclegan;
  std::array<TrainConfig, 3> train;  // xy, xz, yz
  FusionWeights fusion;
  RestoreOptions restore;
  bool dump_axes = false;
  EvaluateConfig evaluate;
  SyntheticConfig synthetic;
  /// Resolved key/value snapshot, used for hashing and the manifest.
  std::map<std::string, std::string> resolved;

  [[nodiscard]] const TrainConfig& train_for(SliceAxis axis) const { return train[static_cast<int>(axis)]; }
};

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::vector<std::string> set;  // section.key=value
};

/// Parses and validates without touching the filesystem beyond reading the
/// config. Throws ConfigError.
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const CliOverrides& overrides = {});

/// Checks that referenced inputs exist and patch sizes fit the split's sections.
void validate_for_stage(const ExperimentConfig& cfg, std::string_view stage);

/// 16-hex-digit FNV-1a 64 digest.
std::string fnv1a_hex(std::string_view data);

/// Content address of a stage: covers the stage's own settings and those of
/// every stage it consumes. split also covers the input file's bytes.
std::string stage_hash(const ExperimentConfig& cfg, std::string_view stage);
std::filesystem::path stage_dir(const ExperimentConfig& cfg, std::string_view stage);

std::vector<SliceAxis> axes_from_flag(std::string_view flag);

struct SplitArtifacts {
  std::filesystem::path blurred, clean, test;
};
struct TrainArtifacts {
  std::map<SliceAxis, std::filesystem::path> checkpoints;
};

SplitArtifacts split_artifacts(const ExperimentConfig& cfg);
std::filesystem::path checkpoint_path(const ExperimentConfig& cfg, SliceAxis axis);
std::filesystem::path restored_path(const ExperimentConfig& cfg);

SplitArtifacts cmd_split(const ExperimentConfig& cfg);
TrainArtifacts cmd_train(const ExperimentConfig& cfg, const std::vector<SliceAxis>& axes);
/// `axes` lists the axis restorations to compute; axes outside it must carry zero fusion weight.
std::filesystem::path cmd_restore(const ExperimentConfig& cfg, const std::vector<SliceAxis>& axes = {
                                                                     SliceAxis::XY, SliceAxis::XZ, SliceAxis::YZ});
/// Returns the report directory (report.csv, report.txt).
std::filesystem::path cmd_evaluate(const ExperimentConfig& cfg);
/// Prints the evaluated table and writes a montage of mid-sections; returns the text.
std::string cmd_report(const ExperimentConfig& cfg);
std::pair<std::filesystem::path, std::filesystem::path> cmd_make_synthetic(const ExperimentConfig& cfg);

/// Peak resident set size of this process in KiB.
long peak_rss_kib();

}  // namespace tridecon
