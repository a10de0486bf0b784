#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tridecon {

/// Row-major single-channel 2D array. Pixel (i, j) is column i, row j.
class Image2D {
 public:
  Image2D() = default;
  Image2D(int width, int height, float fill = 0.0f);
  Image2D(int width, int height, std::vector<float> pixels);

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] std::size_t size() const { return pixels_.size(); }
  [[nodiscard]] bool empty() const { return pixels_.empty(); }

  [[nodiscard]] float operator()(int i, int j) const { return pixels_[static_cast<std::size_t>(j) * width_ + i]; }
  float& operator()(int i, int j) { return pixels_[static_cast<std::size_t>(j) * width_ + i]; }

  [[nodiscard]] std::span<const float> pixels() const { return pixels_; }
  std::span<float> pixels() { return pixels_; }

  /// Copy of the w x h window whose top-left pixel is (i0, j0).
  [[nodiscard]] Image2D crop(int i0, int j0, int w, int h) const;

  bool operator==(const Image2D&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> pixels_;
};

}  // namespace tridecon
