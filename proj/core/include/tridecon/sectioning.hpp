#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tridecon/image.hpp"
#include "tridecon/volume.hpp"

namespace tridecon {

/// Section orientation. XY planes sit at fixed z, XZ at fixed y, YZ at fixed x.
///
/// Section geometry (width x height) and pixel mapping:
///   XY: X x Y, pixel (i, j) of section p = voxel (i, j, p)
///   XZ: X x Z, pixel (i, j) of section q = voxel (i, q, j)
///   YZ: Y x Z, pixel (i, j) of section r = voxel (r, i, j)
enum class SliceAxis { XY, XZ, YZ };

inline constexpr SliceAxis kAllAxes[] = {SliceAxis::XY, SliceAxis::XZ, SliceAxis::YZ};

std::string_view to_string(SliceAxis axis);
SliceAxis parse_slice_axis(std::string_view text);

/// Number of sections along an axis and their (width, height).
int section_count(const Shape3& shape, SliceAxis axis);
std::pair<int, int> section_dims(const Shape3& shape, SliceAxis axis);

enum class PadMode { reflect, zero };

std::string_view to_string(PadMode mode);
PadMode parse_pad_mode(std::string_view text);

struct PadRecord {
  int pad_right = 0;
  int pad_bottom = 0;
  PadMode mode = PadMode::zero;

  [[nodiscard]] bool none() const { return pad_right == 0 && pad_bottom == 0; }
  bool operator==(const PadRecord&) const = default;
};

struct SectionStack {
  SliceAxis axis = SliceAxis::XY;
  std::vector<Image2D> sections;
  PadRecord pad;

  [[nodiscard]] int count() const { return static_cast<int>(sections.size()); }
};

SectionStack extract_sections(const Volume& v, SliceAxis axis);

/// Inverse of extract_sections; strips the stack's pad record first.
Volume stack_sections(const SectionStack& s, const Shape3& target_shape);

/// Pads to the smallest multiples of `multiple` that cover the image; content stays top-left.
std::pair<Image2D, PadRecord> pad_section(const Image2D& img, int multiple, PadMode mode);

/// Drops the pad recorded in `pad`.
Image2D unpad_section(const Image2D& img, const PadRecord& pad);

/// Pads every section of a stack; all sections share one record.
SectionStack pad_stack(const SectionStack& s, int multiple, PadMode mode);

struct PatchSpec {
  int height = 256;
  int width = 256;
  int count_per_section = 1;
  std::uint64_t rng_seed = 0;
};

struct Patch {
  int section = 0;
  int left = 0;
  int top = 0;
  Image2D pixels;
};

/// Random-crop stream over a stack.
///
/// Patches are drawn epoch by epoch: each epoch visits every section in a
/// freshly shuffled order and emits count_per_section crops per visit, with
/// corners uniform over all positions where the patch fits.
class PatchSampler {
 public:
  PatchSampler(const SectionStack& stack, PatchSpec spec);

  Patch next();
  /// The remaining patches of the current epoch (a full epoch when called at a boundary).
  std::vector<Patch> epoch();
  [[nodiscard]] std::size_t patches_per_epoch() const { return order_.size(); }

  /// Serializable position so that a resumed sampler continues the same sequence.
  [[nodiscard]] std::string state() const;
  void restore(const std::string& state);

 private:
  void reshuffle();

  const SectionStack* stack_;
  PatchSpec spec_;
  std::mt19937_64 rng_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

}  // namespace tridecon
