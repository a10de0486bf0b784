#include "tridecon/sectioning.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace tridecon {

Image2D::Image2D(int width, int height, float fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument(fmt::format("image dims must be positive, got {}x{}", width, height));
  pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

Image2D::Image2D(int width, int height, std::vector<float> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 1 || height < 1) throw std::invalid_argument(fmt::format("image dims must be positive, got {}x{}", width, height));
  if (pixels_.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("image payload does not match its dimensions");
}

Image2D Image2D::crop(int i0, int j0, int w, int h) const {
  if (i0 < 0 || j0 < 0 || w < 1 || h < 1 || i0 + w > width_ || j0 + h > height_)
    throw std::invalid_argument(
        fmt::format("crop {}x{} at ({},{}) exceeds {}x{} image", w, h, i0, j0, width_, height_));
  Image2D out(w, h);
  for (int j = 0; j < h; ++j) {
    const float* src = &pixels_[static_cast<std::size_t>(j0 + j) * width_ + i0];
    std::copy(src, src + w, &out(0, j));
  }
  return out;
}

std::string_view to_string(SliceAxis axis) {
  switch (axis) {
    case SliceAxis::XY: return "xy";
    case SliceAxis::XZ: return "xz";
    case SliceAxis::YZ: return "yz";
  }
  return "?";
}

SliceAxis parse_slice_axis(std::string_view text) {
  if (text == "xy" || text == "XY") return SliceAxis::XY;
  if (text == "xz" || text == "XZ") return SliceAxis::XZ;
  if (text == "yz" || text == "YZ") return SliceAxis::YZ;
  throw std::invalid_argument(fmt::format("unknown slice axis '{}'", text));
}

std::string_view to_string(PadMode mode) { return mode == PadMode::reflect ? "reflect" : "zero"; }

PadMode parse_pad_mode(std::string_view text) {
  if (text == "reflect") return PadMode::reflect;
  if (text == "zero") return PadMode::zero;
  throw std::invalid_argument(fmt::format("unknown pad mode '{}'", text));
}

int section_count(const Shape3& shape, SliceAxis axis) {
  switch (axis) {
    case SliceAxis::XY: return shape.z;
    case SliceAxis::XZ: return shape.y;
    case SliceAxis::YZ: return shape.x;
  }
  return 0;
}

std::pair<int, int> section_dims(const Shape3& shape, SliceAxis axis) {
  switch (axis) {
    case SliceAxis::XY: return {shape.x, shape.y};
    case SliceAxis::XZ: return {shape.x, shape.z};
    case SliceAxis::YZ: return {shape.y, shape.z};
  }
  return {0, 0};
}

SectionStack extract_sections(const Volume& v, SliceAxis axis) {
  if (v.empty()) throw std::invalid_argument("cannot section an empty volume");
  const Shape3 s = v.shape();
  const auto [w, h] = section_dims(s, axis);
  SectionStack out;
  out.axis = axis;
  out.sections.reserve(section_count(s, axis));
  for (int k = 0; k < section_count(s, axis); ++k) {
    Image2D img(w, h);
    for (int j = 0; j < h; ++j) {
      for (int i = 0; i < w; ++i) {
        switch (axis) {
          case SliceAxis::XY: img(i, j) = v(i, j, k); break;
          case SliceAxis::XZ: img(i, j) = v(i, k, j); break;
          case SliceAxis::YZ: img(i, j) = v(k, i, j); break;
        }
      }
    }
    out.sections.push_back(std::move(img));
  }
  return out;
}

Volume stack_sections(const SectionStack& s, const Shape3& target_shape) {
  if (!target_shape.valid()) throw std::invalid_argument("invalid target shape " + to_string(target_shape));
  const int expected = section_count(target_shape, s.axis);
  if (s.count() != expected)
    throw std::invalid_argument(fmt::format("{} stack has {} sections, target shape {} needs {}", to_string(s.axis),
                                            s.count(), to_string(target_shape), expected));
  const auto [w, h] = section_dims(target_shape, s.axis);
  Volume out(target_shape);
  for (int k = 0; k < expected; ++k) {
    const Image2D& raw = s.sections[k];
    if (raw.width() - s.pad.pad_right != w || raw.height() - s.pad.pad_bottom != h)
      throw std::invalid_argument(fmt::format("section {} is {}x{} (pad {},{}), expected {}x{} content", k, raw.width(),
                                              raw.height(), s.pad.pad_right, s.pad.pad_bottom, w, h));
    for (int j = 0; j < h; ++j) {
      for (int i = 0; i < w; ++i) {
        switch (s.axis) {
          case SliceAxis::XY: out(i, j, k) = raw(i, j); break;
          case SliceAxis::XZ: out(i, k, j) = raw(i, j); break;
          case SliceAxis::YZ: out(k, i, j) = raw(i, j); break;
        }
      }
    }
  }
  return out;
}

std::pair<Image2D, PadRecord> pad_section(const Image2D& img, int multiple, PadMode mode) {
  if (multiple < 1) throw std::invalid_argument(fmt::format("pad multiple must be >= 1, got {}", multiple));
  const int w = img.width(), h = img.height();
  const int pw = (w + multiple - 1) / multiple * multiple;
  const int ph = (h + multiple - 1) / multiple * multiple;
  PadRecord rec{pw - w, ph - h, mode};
  if (mode == PadMode::reflect && (rec.pad_right >= w || rec.pad_bottom >= h))
    throw std::invalid_argument(
        fmt::format("reflect padding of {}x{} by ({},{}) needs pads smaller than the image", w, h, rec.pad_right,
                    rec.pad_bottom));
  if (rec.none()) return {img, rec};
  Image2D out(pw, ph, 0.0f);
  for (int j = 0; j < ph; ++j) {
    for (int i = 0; i < pw; ++i) {
      if (i < w && j < h) {
        out(i, j) = img(i, j);
      } else if (mode == PadMode::reflect) {
        const int si = i < w ? i : 2 * (w - 1) - i;
        const int sj = j < h ? j : 2 * (h - 1) - j;
        out(i, j) = img(si, sj);
      }
    }
  }
  return {std::move(out), rec};
}

Image2D unpad_section(const Image2D& img, const PadRecord& pad) {
  if (pad.none()) return img;
  return img.crop(0, 0, img.width() - pad.pad_right, img.height() - pad.pad_bottom);
}

SectionStack pad_stack(const SectionStack& s, int multiple, PadMode mode) {
  if (!s.pad.none()) throw std::invalid_argument("stack is already padded");
  SectionStack out;
  out.axis = s.axis;
  out.sections.reserve(s.sections.size());
  for (const auto& img : s.sections) {
    auto [padded, rec] = pad_section(img, multiple, mode);
    if (!out.sections.empty() && !(rec == out.pad)) throw std::invalid_argument("stack sections differ in size");
    out.pad = rec;
    out.sections.push_back(std::move(padded));
  }
  return out;
}

PatchSampler::PatchSampler(const SectionStack& stack, PatchSpec spec) : stack_(&stack), spec_(spec), rng_(spec.rng_seed) {
  if (stack.sections.empty()) throw std::invalid_argument("patch sampler needs a non-empty stack");
  if (spec.count_per_section < 1) throw std::invalid_argument("count_per_section must be >= 1");
  for (const auto& s : stack.sections) {
    if (spec.width > s.width() || spec.height > s.height() || spec.width < 1 || spec.height < 1)
      throw std::invalid_argument(fmt::format("patch {}x{} does not fit in {}x{} section", spec.width, spec.height,
                                              s.width(), s.height()));
  }
  reshuffle();
}

void PatchSampler::reshuffle() {
  order_.clear();
  for (int k = 0; k < stack_->count(); ++k)
    for (int c = 0; c < spec_.count_per_section; ++c) order_.push_back(k);
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

Patch PatchSampler::next() {
  if (cursor_ == order_.size()) reshuffle();
  const int k = order_[cursor_++];
  const Image2D& s = stack_->sections[k];
  std::uniform_int_distribution<int> di(0, s.width() - spec_.width);
  std::uniform_int_distribution<int> dj(0, s.height() - spec_.height);
  const int left = di(rng_);
  const int top = dj(rng_);
  return {k, left, top, s.crop(left, top, spec_.width, spec_.height)};
}

std::vector<Patch> PatchSampler::epoch() {
  if (cursor_ == order_.size()) reshuffle();
  std::vector<Patch> out;
  out.reserve(order_.size() - cursor_);
  while (cursor_ < order_.size()) out.push_back(next());
  return out;
}

std::string PatchSampler::state() const {
  std::ostringstream os;
  os << rng_ << ' ' << cursor_ << ' ' << order_.size();
  for (int k : order_) os << ' ' << k;
  return os.str();
}

void PatchSampler::restore(const std::string& state) {
  std::istringstream is(state);
  std::size_t n = 0;
  is >> rng_ >> cursor_ >> n;
  order_.resize(n);
  for (auto& k : order_) is >> k;
  if (!is || cursor_ > n) throw std::invalid_argument("corrupt patch sampler state");
  for (int k : order_)
    if (k < 0 || k >= stack_->count()) throw std::invalid_argument("patch sampler state does not match the stack");
}

}  // namespace tridecon
