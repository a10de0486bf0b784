#include "tridecon/volume.hpp"

#include <charconv>
#include <stdexcept>

#include <fmt/format.h>

namespace tridecon {

std::string to_string(const Shape3& s) { return fmt::format("({},{},{})", s.x, s.y, s.z); }

Volume::Volume(Shape3 shape, float fill) : shape_(shape) {
  if (!shape.valid()) throw std::invalid_argument("volume shape must be positive, got " + to_string(shape));
  data_.assign(shape.voxels(), fill);
}

Volume::Volume(Shape3 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (!shape.valid()) throw std::invalid_argument("volume shape must be positive, got " + to_string(shape));
  if (data_.size() != shape.voxels())
    throw std::invalid_argument(
        fmt::format("volume payload has {} voxels, shape {} needs {}", data_.size(), to_string(shape), shape.voxels()));
}

namespace {

int parse_int(std::string_view s, std::string_view whole) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw std::invalid_argument(fmt::format("malformed range '{}'", whole));
  return value;
}

void validate_axis(const AxisRange& r, int extent, char axis) {
  if (r.lo > r.hi)
    throw std::invalid_argument(fmt::format("inverted {} bounds {}:{}", axis, r.lo, r.hi));
  if (r.lo < 1 || r.hi > extent)
    throw std::invalid_argument(
        fmt::format("{} bounds {}:{} outside 1:{}", axis, r.lo, r.hi, extent));
}

}  // namespace

AxisRange parse_axis_range(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw std::invalid_argument(fmt::format("malformed range '{}'", text));
  return {parse_int(text.substr(0, colon), text), parse_int(text.substr(colon + 1), text)};
}

SubvolumeRange SubvolumeRange::full(const Shape3& s) { return {{1, s.x}, {1, s.y}, {1, s.z}}; }

void SubvolumeRange::validate(const Shape3& source) const {
  validate_axis(x, source.x, 'x');
  validate_axis(y, source.y, 'y');
  validate_axis(z, source.z, 'z');
}

SubvolumeRange parse_subvolume_range(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    parts.push_back(text.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (parts.size() != 3) throw std::invalid_argument(fmt::format("subvolume range '{}' needs three axes", text));
  return {parse_axis_range(parts[0]), parse_axis_range(parts[1]), parse_axis_range(parts[2])};
}

std::string to_string(const SubvolumeRange& r) {
  return fmt::format("{}:{},{}:{},{}:{}", r.x.lo, r.x.hi, r.y.lo, r.y.hi, r.z.lo, r.z.hi);
}

void DatasetSplit::validate(const Shape3& source) const {
  blurred.validate(source);
  clean.validate(source);
  test.validate(source);
  if (blurred.z.lo <= clean.z.hi && clean.z.lo <= blurred.z.hi)
    throw std::invalid_argument(fmt::format("blurred z range {}:{} overlaps clean z range {}:{}", blurred.z.lo,
                                            blurred.z.hi, clean.z.lo, clean.z.hi));
}

Volume crop_subvolume(const Volume& v, const SubvolumeRange& r) {
  r.validate(v.shape());
  const Shape3 out_shape = r.extent();
  Volume out(out_shape);
  for (int z = 0; z < out_shape.z; ++z) {
    for (int y = 0; y < out_shape.y; ++y) {
      const float* src = &v.data()[v.index(r.x.lo - 1, r.y.lo - 1 + y, r.z.lo - 1 + z)];
      float* dst = &out.data()[out.index(0, y, z)];
      std::copy(src, src + out_shape.x, dst);
    }
  }
  return out;
}

TrainingVolumes split_training_volumes(const Volume& v, const DatasetSplit& s) {
  s.validate(v.shape());
  return {crop_subvolume(v, s.blurred), crop_subvolume(v, s.clean), crop_subvolume(v, s.test)};
}

}  // namespace tridecon
