#include "tridecon/resize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace tridecon {

namespace {

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

std::vector<Taps> cubic_taps(int in, int out, double scale) {
  constexpr double a = -0.75;
  std::vector<Taps> taps(out);
  for (int u = 0; u < out; ++u) {
    const double x = (u + 0.5) * scale - 0.5;
    const int x0 = static_cast<int>(std::floor(x));
    const double t = x - x0;
    auto& tp = taps[u];
    tp.weight[0] = ((a * (t + 1) - 5 * a) * (t + 1) + 8 * a) * (t + 1) - 4 * a;
    tp.weight[1] = ((a + 2) * t - (a + 3)) * t * t + 1;
    tp.weight[2] = ((a + 2) * (1 - t) - (a + 3)) * (1 - t) * (1 - t) + 1;
    tp.weight[3] = 1 - tp.weight[0] - tp.weight[1] - tp.weight[2];
    for (int k = 0; k < 4; ++k) tp.index[k] = std::clamp(x0 - 1 + k, 0, in - 1);
  }
  return taps;
}

}  // namespace

Image2D resize_bilinear(const Image2D& img, int width, int height) {
  if (img.empty() || width < 1 || height < 1) throw std::invalid_argument("resize_bilinear: empty image or target");
  const int iw = img.width(), ih = img.height();
  const double sx = static_cast<double>(iw) / width, sy = static_cast<double>(ih) / height;
  Image2D out(width, height);
  for (int j = 0; j < height; ++j) {
    const double y = std::clamp((j + 0.5) * sy - 0.5, 0.0, ih - 1.0);
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, ih - 1);
    const double fy = y - y0;
    for (int i = 0; i < width; ++i) {
      const double x = std::clamp((i + 0.5) * sx - 0.5, 0.0, iw - 1.0);
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, iw - 1);
      const double fx = x - x0;
      const double top = img(x0, y0) * (1 - fx) + img(x1, y0) * fx;
      const double bot = img(x0, y1) * (1 - fx) + img(x1, y1) * fx;
      out(i, j) = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

Image2D resize_bicubic(const Image2D& img, int width, int height) {
  if (img.empty() || width < 1 || height < 1) throw std::invalid_argument("resize_bicubic: empty image or target");
  return resize_bicubic(img, width, height, static_cast<double>(img.width()) / width,
                        static_cast<double>(img.height()) / height);
}

Image2D resize_bicubic(const Image2D& img, int width, int height, double scale_x, double scale_y) {
  if (img.empty() || width < 1 || height < 1) throw std::invalid_argument("resize_bicubic: empty image or target");
  const auto tx = cubic_taps(img.width(), width, scale_x);
  const auto ty = cubic_taps(img.height(), height, scale_y);
  // Horizontal pass then vertical, in double.
  std::vector<double> tmp(static_cast<std::size_t>(width) * img.height());
  for (int j = 0; j < img.height(); ++j)
    for (int i = 0; i < width; ++i) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += tx[i].weight[k] * img(tx[i].index[k], j);
      tmp[static_cast<std::size_t>(j) * width + i] = acc;
    }
  Image2D out(width, height);
  for (int j = 0; j < height; ++j)
    for (int i = 0; i < width; ++i) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += ty[j].weight[k] * tmp[static_cast<std::size_t>(ty[j].index[k]) * width + i];
      out(i, j) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace tridecon
