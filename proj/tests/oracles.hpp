#pragma once

// Independent reference computations shared by the unit tests and the acceptance run.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tridecon/iqa.hpp"
#include "tridecon/nn/autograd.hpp"
#include "tridecon/spcyclegan.hpp"

namespace tridecon::test {

/// Tiny float64 networks: 2 residual blocks, one downsampling, 3x3 single-layer critics.
inline TrainConfig toy_config(std::uint64_t seed) {
  TrainConfig c;
  c.generator = {2, 2, 1};
  c.discriminator = {2, 1, 3};
  c.seed = seed;
  return c;
}

template <class T>
nn::Var<T> random_input(int n, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-0.9, 0.9);
  nn::Tensor<T> t(n, 1, h, w);
  for (auto& v : t.data) v = static_cast<T>(d(rng));
  return nn::constant(std::move(t));
}

struct GradCheck {
  double rel_error = 0;   // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double grad_norm = 0;   // ||numeric||
  std::size_t entries = 0;
};

/// Central differences over every entry of `params` against reverse-mode gradients.
inline GradCheck check_gradient(const std::function<nn::Var<double>()>& loss,
                                const std::vector<nn::NamedParam<double>>& params, double h = 1e-6) {
  for (const auto& p : params) p.var->zero_grad();
  nn::backward(loss());
  std::vector<double> analytic;
  for (const auto& p : params) {
    const auto& g = p.var->grad;
    for (std::size_t i = 0; i < p.var->value.size(); ++i) analytic.push_back(g.size() ? g.data[i] : 0.0);
  }
  std::vector<double> numeric;
  {
    nn::NoGradGuard guard;
    for (const auto& p : params)
      for (auto& w : p.var->value.data) {
        const double keep = w;
        w = keep + h;
        const double up = nn::scalar(loss());
        w = keep - h;
        const double down = nn::scalar(loss());
        w = keep;
        numeric.push_back((up - down) / (2 * h));
      }
  }
  double diff = 0, na = 0, nn_ = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn_ += numeric[i] * numeric[i];
  }
  GradCheck out;
  out.entries = analytic.size();
  out.grad_norm = std::sqrt(nn_);
  const double scale = std::max(std::sqrt(na), std::sqrt(nn_));
  out.rel_error = scale > 0 ? std::sqrt(diff) / scale : std::sqrt(diff);
  return out;
}

/// Sum over patches and levels of l * p(l), divided by the patch count.
inline double ifq_brute_force(const std::vector<std::array<double, kDefocusLevels>>& probs) {
  double total = 0;
  for (const auto& p : probs) {
    double e = 0;
    for (int l = 0; l < kDefocusLevels; ++l) e += static_cast<double>(l) * p[l];
    total += e;
  }
  return total / static_cast<double>(probs.size());
}

/// Returns the logits stored for the patch whose top-left pixel value is its index.
class LookupClassifier final : public FocusClassifier {
 public:
  explicit LookupClassifier(std::vector<std::vector<double>> table) : table_(std::move(table)) {}
  [[nodiscard]] std::vector<double> logits(const Image2D& patch) const override {
    return table_.at(static_cast<std::size_t>(patch(0, 0)));
  }
  [[nodiscard]] std::string name() const override { return "lookup"; }

 private:
  std::vector<std::vector<double>> table_;
};

/// Image tiled with 84x84 blocks holding their row-major block index.
inline Image2D indexed_blocks(int cols, int rows) {
  Image2D img(cols * kFocusPatch, rows * kFocusPatch);
  for (int j = 0; j < img.height(); ++j)
    for (int i = 0; i < img.width(); ++i)
      img(i, j) = static_cast<float>((j / kFocusPatch) * cols + i / kFocusPatch);
  return img;
}

/// Every section of every axis, scored one by one and averaged axis by axis.
inline double three_way_brute_force(const Volume& v, const std::function<double(const Image2D&)>& metric) {
  const Shape3 s = v.shape();
  double axis_sum = 0;
  // xy planes at fixed z
  {
    double t = 0;
    for (int z = 0; z < s.z; ++z) {
      Image2D img(s.x, s.y);
      for (int y = 0; y < s.y; ++y)
        for (int x = 0; x < s.x; ++x) img(x, y) = v(x, y, z) * 255.0f;
      t += metric(img);
    }
    axis_sum += t / s.z;
  }
  // xz planes at fixed y
  {
    double t = 0;
    for (int y = 0; y < s.y; ++y) {
      Image2D img(s.x, s.z);
      for (int z = 0; z < s.z; ++z)
        for (int x = 0; x < s.x; ++x) img(x, z) = v(x, y, z) * 255.0f;
      t += metric(img);
    }
    axis_sum += t / s.y;
  }
  // yz planes at fixed x
  {
    double t = 0;
    for (int x = 0; x < s.x; ++x) {
      Image2D img(s.y, s.z);
      for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y) img(y, z) = v(x, y, z) * 255.0f;
      t += metric(img);
    }
    axis_sum += t / s.x;
  }
  return axis_sum / 3.0;
}

/// JPEG-like blocking: each block is blended toward its own mean, fully at mix = 1.
inline Image2D blockify(const Image2D& img, int block, double mix) {
  Image2D out = img;
  for (int bj = 0; bj < img.height(); bj += block)
    for (int bi = 0; bi < img.width(); bi += block) {
      const int w = std::min(block, img.width() - bi), h = std::min(block, img.height() - bj);
      double m = 0;
      for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) m += img(bi + i, bj + j);
      m /= w * h;
      for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i)
          out(bi + i, bj + j) = static_cast<float>((1 - mix) * img(bi + i, bj + j) + mix * m);
    }
  return out;
}

/// Separable Gaussian blur with replicated borders.
inline Image2D gaussian_blur(const Image2D& img, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  const int w = img.width(), h = img.height();
  Image2D tmp(w, h), out(w, h);
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      double a = 0;
      for (int t = -r; t <= r; ++t) a += k[t + r] * img(std::clamp(i + t, 0, w - 1), j);
      tmp(i, j) = static_cast<float>(a);
    }
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      double a = 0;
      for (int t = -r; t <= r; ++t) a += k[t + r] * tmp(i, std::clamp(j + t, 0, h - 1));
      out(i, j) = static_cast<float>(a);
    }
  return out;
}

inline Image2D add_noise(const Image2D& img, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, sd);
  Image2D out = img;
  for (float& p : out.pixels()) p = static_cast<float>(std::clamp(std::round(p + n(rng)), 0.0, 255.0));
  return out;
}

}  // namespace tridecon::test
