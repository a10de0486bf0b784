#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "tridecon/sectioning.hpp"
#include "tridecon/spcyclegan.hpp"

namespace tridecon {

// Checkpoint container: 8-byte magic "TRDCKPT1", u32 format version, u64 header
// length, a JSON header (architecture, training config, axis tag, epoch,
// fingerprint, tensor directory, optional trainer state), then the raw
// little-endian tensor blob. The header carries a CRC-32 of the blob.

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CheckpointKind { spcyclegan, identity };

struct CheckpointInfo {
  CheckpointKind kind = CheckpointKind::spcyclegan;
  SliceAxis axis = SliceAxis::XY;
  int epoch = 0;
  std::string dtype;
  nn::GeneratorArch generator{};
  nn::DiscriminatorArch discriminator{};
  TrainConfig train_config{};
  std::string code_version;
  std::string config_hash;
  bool has_training_state = false;
};

/// Version string of this build (git describe at configure time).
std::string code_version();

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Model-only checkpoint (no optimizer state).
template <class T>
void save_checkpoint(const SpCycleGanModels<T>& models, const std::filesystem::path& path, SliceAxis axis,
                     const TrainConfig& cfg, int epoch = 0, const std::string& config_hash = {});

/// Rebuilds the five networks from a checkpoint. Throws CheckpointError on a
/// corrupt file, a version or dtype mismatch, or when `expected` is given and
/// differs from the stored architecture.
template <class T>
SpCycleGanModels<T> load_checkpoint(const std::filesystem::path& path,
                                    const std::optional<TrainConfig>& expected = std::nullopt);

/// Loads only G_AB; cheaper for inference.
template <class T>
nn::ResnetGenerator<T> load_generator_ab(const std::filesystem::path& path);

/// Axis-tagged marker for a pass-through generator (plumbing validation).
void save_identity_checkpoint(const std::filesystem::path& path, SliceAxis axis, const std::string& config_hash = {});

extern template void save_checkpoint<float>(const SpCycleGanModels<float>&, const std::filesystem::path&, SliceAxis,
                                            const TrainConfig&, int, const std::string&);
extern template void save_checkpoint<double>(const SpCycleGanModels<double>&, const std::filesystem::path&, SliceAxis,
                                             const TrainConfig&, int, const std::string&);
extern template SpCycleGanModels<float> load_checkpoint<float>(const std::filesystem::path&,
                                                               const std::optional<TrainConfig>&);
extern template SpCycleGanModels<double> load_checkpoint<double>(const std::filesystem::path&,
                                                                 const std::optional<TrainConfig>&);
extern template nn::ResnetGenerator<float> load_generator_ab<float>(const std::filesystem::path&);

}  // namespace tridecon
