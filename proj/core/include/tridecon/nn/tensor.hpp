#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace tridecon::nn {

/// Dense NCHW tensor. Every tensor in the network code is 4-D; scalars are 1x1x1x1.
template <class T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  [[nodiscard]] std::string shape_string() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
  }

  T& at(int ni, int ci, int y, int x) {
    return data[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
  }
  const T& at(int ni, int ci, int y, int x) const {
    return data[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
  }
  T* channel(int ni, int ci) { return data.data() + (static_cast<std::size_t>(ni) * c + ci) * plane(); }
  const T* channel(int ni, int ci) const { return data.data() + (static_cast<std::size_t>(ni) * c + ci) * plane(); }
  T* sample(int ni) { return data.data() + static_cast<std::size_t>(ni) * c * plane(); }
  const T* sample(int ni) const { return data.data() + static_cast<std::size_t>(ni) * c * plane(); }
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace tridecon::nn
