#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>

#include "tridecon/image.hpp"
#include "tridecon/nn/networks.hpp"
#include "tridecon/sectioning.hpp"
#include "tridecon/volume.hpp"

namespace tridecon {

/// A trained blurred->clean mapping for sections of one axis. Images go in and
/// come out in [0,1]; implementations must be safe to call concurrently.
class SectionGenerator {
 public:
  virtual ~SectionGenerator() = default;
  [[nodiscard]] virtual SliceAxis axis() const = 0;
  /// Input width and height must be multiples of this.
  [[nodiscard]] virtual int size_multiple() const = 0;
  [[nodiscard]] virtual Image2D apply(const Image2D& img) const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

/// Pass-through generator for validating the slicing and padding plumbing.
class IdentityGenerator final : public SectionGenerator {
 public:
  explicit IdentityGenerator(SliceAxis axis) : axis_(axis) {}
  [[nodiscard]] SliceAxis axis() const override { return axis_; }
  [[nodiscard]] int size_multiple() const override { return 1; }
  [[nodiscard]] Image2D apply(const Image2D& img) const override { return img; }
  [[nodiscard]] std::string name() const override { return "identity"; }

 private:
  SliceAxis axis_;
};

/// G_AB wrapped for inference: maps [0,1] to [-1,1], runs the network without
/// recording a graph, maps back and clips.
class NetworkGenerator final : public SectionGenerator {
 public:
  NetworkGenerator(nn::ResnetGenerator<float> g, SliceAxis axis) : g_(std::move(g)), axis_(axis) {}
  [[nodiscard]] SliceAxis axis() const override { return axis_; }
  [[nodiscard]] int size_multiple() const override { return g_.size_multiple(); }
  [[nodiscard]] Image2D apply(const Image2D& img) const override;
  [[nodiscard]] std::string name() const override { return "spcyclegan"; }
  [[nodiscard]] const nn::ResnetGenerator<float>& network() const { return g_; }

 private:
  nn::ResnetGenerator<float> g_;
  SliceAxis axis_;
};

/// Builds the generator stored in a checkpoint (network or identity marker).
std::unique_ptr<SectionGenerator> load_generator(const std::filesystem::path& checkpoint);

class AxisMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RestoreOptions {
  int pad_multiple = 4;  // combined with the generator's own size multiple
  PadMode pad_mode = PadMode::reflect;
  int threads = 0;       // 0: hardware concurrency
  int tile = 0;          // 0: whole sections; otherwise square tiles of this size
  int tile_overlap = 32; // feathered with a linear ramp
};

/// Restores every section of a stack. Sections are padded to the pad multiple,
/// passed through g, cropped back and clipped to [0,1]; the output stack has
/// the input's geometry. Reflect padding degrades to zero padding for sections
/// too small to mirror.
SectionStack restore_sections(const SectionGenerator& g, const SectionStack& s, const RestoreOptions& opts = {});

/// extract_sections -> restore_sections -> stack_sections.
Volume restore_volume_axis(const SectionGenerator& g, const Volume& v, SliceAxis axis,
                           const RestoreOptions& opts = {});

/// Nonnegative weights for the xy, xz and yz restorations, normalized to sum to 1.
class FusionWeights {
 public:
  FusionWeights() = default;
  /// Throws std::invalid_argument for negative, non-finite or all-zero weights.
  FusionWeights(double w1, double w2, double w3);

  [[nodiscard]] double operator[](int k) const { return w_[k]; }
  [[nodiscard]] const std::array<double, 3>& values() const { return w_; }

 private:
  std::array<double, 3> w_{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
};

/// Zero-pads (at the high end of each axis) or crops to `shape`.
Volume pad_to_shape(const Volume& v, const Shape3& shape);

/// Voxelwise weighted sum of the three axis restorations. Unequal shapes are
/// zero-padded to their common bounding shape first. Each voxel is computed in
/// double with a canonical summation order, so permuting the (volume, weight)
/// pairs does not change a single bit, and the result never leaves the inputs'
/// per-voxel [min, max].
Volume fuse_volumes(const Volume& v_xy, const Volume& v_xz, const Volume& v_yz, const FusionWeights& w = {});

/// Variant where a volume may be absent (nullptr) when its weight is zero.
Volume fuse_volumes(const std::array<const Volume*, 3>& volumes, const FusionWeights& w);

}  // namespace tridecon
