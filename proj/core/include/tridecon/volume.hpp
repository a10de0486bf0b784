#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace tridecon {

/// Extent of a volume along x, y and z, in voxels.
struct Shape3 {
  int x = 0;
  int y = 0;
  int z = 0;

  [[nodiscard]] std::size_t voxels() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  [[nodiscard]] bool valid() const { return x >= 1 && y >= 1 && z >= 1; }
  auto operator<=>(const Shape3&) const = default;
};

std::string to_string(const Shape3& s);

/// Grayscale voxel grid with intensities in [0,1].
///
/// Storage is x-fastest: voxel (x, y, z) lives at x + X*(y + Y*z), so each xy
/// plane is contiguous and on-disk pages map one-to-one onto z. Indexing via
/// operator() is 0-based; SubvolumeRange carries the 1-based public convention.
class Volume {
 public:
  Volume() = default;
  explicit Volume(Shape3 shape, float fill = 0.0f);
  Volume(Shape3 shape, std::vector<float> data);

  [[nodiscard]] const Shape3& shape() const { return shape_; }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(shape_.x) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(shape_.y) * static_cast<std::size_t>(z));
  }
  [[nodiscard]] float operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
  float& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }

  [[nodiscard]] std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  bool operator==(const Volume&) const = default;

 private:
  Shape3 shape_{};
  std::vector<float> data_;
};

/// Inclusive 1-based bounds along one axis.
struct AxisRange {
  int lo = 1;
  int hi = 1;

  [[nodiscard]] int extent() const { return hi - lo + 1; }
  bool operator==(const AxisRange&) const = default;
};

/// Parses "lo:hi" (1-based inclusive).
AxisRange parse_axis_range(std::string_view text);

/// I_(r_i:r_f, q_i:q_f, p_i:p_f): 1-based inclusive bounds per axis.
struct SubvolumeRange {
  AxisRange x;
  AxisRange y;
  AxisRange z;

  /// Whole-volume range for shape s.
  static SubvolumeRange full(const Shape3& s);

  [[nodiscard]] Shape3 extent() const { return {x.extent(), y.extent(), z.extent()}; }
  /// Throws std::invalid_argument naming the offending axis.
  void validate(const Shape3& source) const;
  bool operator==(const SubvolumeRange&) const = default;
};

/// Parses "ri:rf,qi:qf,pi:pf".
SubvolumeRange parse_subvolume_range(std::string_view text);
std::string to_string(const SubvolumeRange& r);

/// Source ranges of the blurred (A), clean (B) and test volumes.
struct DatasetSplit {
  SubvolumeRange blurred;
  SubvolumeRange clean;
  SubvolumeRange test;

  /// Range validity plus the z-disjointness rule for blurred/clean.
  void validate(const Shape3& source) const;
};

Volume crop_subvolume(const Volume& v, const SubvolumeRange& r);

struct TrainingVolumes {
  Volume blurred;
  Volume clean;
  Volume test;
};

TrainingVolumes split_training_volumes(const Volume& v, const DatasetSplit& s);

}  // namespace tridecon
