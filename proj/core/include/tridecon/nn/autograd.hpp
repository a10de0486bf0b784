#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "tridecon/nn/tensor.hpp"

// Minimal reverse-mode automatic differentiation over NCHW tensors.
//
// Every op returns a fresh node; nodes that depend on a parameter keep their
// parents and a backward closure. backward() walks the graph once in reverse
// topological order and then releases it.

namespace tridecon::nn {

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.n, value.c, value.h, value.w, T(0));
    return grad;
  }
  void zero_grad() { grad = Tensor<T>(); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

template <class T>
Var<T> parameter(Tensor<T> value) {
  auto node = constant(std::move(value));
  node->requires_grad = true;
  return node;
}

/// Copy of the value with no history.
template <class T>
Var<T> detach(const Var<T>& v) {
  return constant(v->value);
}

template <class T>
T scalar(const Var<T>& v) {
  if (v->value.size() != 1) throw std::invalid_argument("scalar() on a non-scalar tensor " + v->value.shape_string());
  return v->value.data[0];
}

namespace detail {

template <class T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled && std::any_of(parents.begin(), parents.end(), [](const Var<T>& p) { return p->requires_grad; })) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return node;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

/// Unfolds a C x H x W image into (C*k*k) x (oh*ow) patches; out-of-image taps are zero.
template <class T>
void im2col(const T* img, int channels, int height, int width, int k, int stride, int pad, int oh, int ow, T* cols) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    const T* src = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* row = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + ow, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[ox] = (ix >= 0 && ix < width) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds patches back into the image.
template <class T>
void col2im(const T* cols, int channels, int height, int width, int k, int stride, int pad, int oh, int ow, T* img) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    T* dst = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const T* row = src + static_cast<std::size_t>(oy) * ow;
          T* drow = dst + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

/// Mirror index without repeating the edge sample. Folds repeatedly, so maps
/// narrower than the pad still resolve (a single row or column replicates).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar root and frees the graph.
template <class T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1) throw std::invalid_argument("backward() needs a scalar root");
  if (!root->requires_grad) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer().data[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->grad.size() == node->value.size()) node->backward_fn(*node);
  }
  for (Node<T>* node : order) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      node->parents.clear();
      node->grad = Tensor<T>();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
  Node<T>* pa = a.get();
  Node<T>* pb = b.get();
  return detail::make_node<T>(std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    for (Node<T>* p : {pa, pb}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v *= s;
  Node<T>* pa = a.get();
  return detail::make_node<T>(std::move(out), {a}, [pa, s](Node<T>& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += s * self.grad.data[i];
  });
}

template <class T>
Var<T> add_constant(const Var<T>& a, T c) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v += c;
  Node<T>* pa = a.get();
  return detail::make_node<T>(std::move(out), {a}, [pa](Node<T>& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i];
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  Node<T>* pa = a.get();
  return detail::make_node<T>(std::move(out), {a}, [pa](Node<T>& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (pa->value.data[i] > T(0)) g.data[i] += self.grad.data[i];
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = v > T(0) ? v : slope * v;
  Node<T>* pa = a.get();
  return detail::make_node<T>(std::move(out), {a}, [pa, slope](Node<T>& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data[i] += (pa->value.data[i] > T(0) ? T(1) : slope) * self.grad.data[i];
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = std::tanh(v);
  Node<T>* pa = a.get();
  auto node = detail::make_node<T>(std::move(out), {a}, nullptr);
  if (node->requires_grad) {
    node->backward_fn = [pa](Node<T>& self) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = self.value.data[i];
        g.data[i] += (T(1) - y * y) * self.grad.data[i];
      }
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// Spatial ops

template <class T>
Var<T> reflection_pad(const Var<T>& a, int pad) {
  const Tensor<T>& x = a->value;
  if (pad < 0) throw std::invalid_argument("negative reflection pad");
  Tensor<T> out(x.n, x.c, x.h + 2 * pad, x.w + 2 * pad);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.channel(n, c);
      T* dst = out.channel(n, c);
      for (int y = 0; y < out.h; ++y) {
        const int sy = detail::reflect_index(y - pad, x.h);
        for (int xx = 0; xx < out.w; ++xx) dst[y * out.w + xx] = src[sy * x.w + detail::reflect_index(xx - pad, x.w)];
      }
    }
  Node<T>* pa = a.get();
  return detail::make_node<T>(std::move(out), {a}, [pa, pad](Node<T>& self) {
    auto& g = pa->grad_buffer();
    const auto& go = self.grad;
    for (int n = 0; n < g.n; ++n)
      for (int c = 0; c < g.c; ++c) {
        T* dst = g.channel(n, c);
        const T* src = go.channel(n, c);
        for (int y = 0; y < go.h; ++y) {
          const int sy = detail::reflect_index(y - pad, g.h);
          for (int xx = 0; xx < go.w; ++xx) dst[sy * g.w + detail::reflect_index(xx - pad, g.w)] += src[y * go.w + xx];
        }
      }
  });
}

/// Per-sample, per-channel normalization without affine parameters.
template <class T>
Var<T> instance_norm(const Var<T>& a, T eps = T(1e-5)) {
  const Tensor<T>& x = a->value;
  Tensor<T> out(x.n, x.c, x.h, x.w);
  std::vector<T> inv_std(static_cast<std::size_t>(x.n) * x.c);
  const std::size_t m = x.plane();
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.channel(n, c);
      T mean = 0;
      for (std::size_t i = 0; i < m; ++i) mean += src[i];
      mean /= static_cast<T>(m);
      T var = 0;
      for (std::size_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<T>(m);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(n) * x.c + c] = is;
      T* dst = out.channel(n, c);
      for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - mean) * is;
    }
  Node<T>* pa = a.get();
  auto node = detail::make_node<T>(std::move(out), {a}, nullptr);
  if (node->requires_grad) {
    node->backward_fn = [pa, inv_std = std::move(inv_std)](Node<T>& self) {
      auto& g = pa->grad_buffer();
      const std::size_t m = self.value.plane();
      for (int n = 0; n < g.n; ++n)
        for (int c = 0; c < g.c; ++c) {
          const T* xh = self.value.channel(n, c);
          const T* gy = self.grad.channel(n, c);
          T mean_g = 0, mean_gx = 0;
          for (std::size_t i = 0; i < m; ++i) {
            mean_g += gy[i];
            mean_gx += gy[i] * xh[i];
          }
          mean_g /= static_cast<T>(m);
          mean_gx /= static_cast<T>(m);
          const T is = inv_std[static_cast<std::size_t>(n) * g.c + c];
          T* gx = g.channel(n, c);
          for (std::size_t i = 0; i < m; ++i) gx[i] += is * (gy[i] - mean_g - xh[i] * mean_gx);
        }
    };
  }
  return node;
}

/// Zero-padded 2-D convolution. weight: [Cout, Cin, k, k], bias: [1, Cout, 1, 1].
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Tensor<T>& x = input->value;
  const Tensor<T>& wt = weight->value;
  const int cout = wt.n, cin = wt.c, k = wt.h;
  if (x.c != cin) throw std::invalid_argument("conv2d: input has " + std::to_string(x.c) + " channels, weight expects " + std::to_string(cin));
  const int oh = (x.h + 2 * pad - k) / stride + 1;
  const int ow = (x.w + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: input " + x.shape_string() + " too small for kernel");
  const int kk = cin * k * k;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  Tensor<T> out(x.n, cout, oh, ow);
  const bool keep = detail::grad_enabled && (input->requires_grad || weight->requires_grad || bias->requires_grad);
  std::vector<std::vector<T>> cols_keep(keep ? x.n : 0);
  std::vector<T> cols(static_cast<std::size_t>(kk) * p);
  detail::CMapMat<T> wm(wt.data.data(), cout, kk);
  for (int n = 0; n < x.n; ++n) {
    detail::im2col(x.sample(n), cin, x.h, x.w, k, stride, pad, oh, ow, cols.data());
    detail::MapMat<T> om(out.sample(n), cout, static_cast<Eigen::Index>(p));
    om.noalias() = wm * detail::CMapMat<T>(cols.data(), kk, static_cast<Eigen::Index>(p));
    for (int c = 0; c < cout; ++c) om.row(c).array() += bias->value.data[c];
    if (keep) cols_keep[n] = cols;
  }
  Node<T>* pi = input.get();
  Node<T>* pw = weight.get();
  Node<T>* pb = bias.get();
  auto node = detail::make_node<T>(std::move(out), {input, weight, bias}, nullptr);
  if (node->requires_grad) {
    node->backward_fn = [=, cols_keep = std::move(cols_keep)](Node<T>& self) {
      const Tensor<T>& gy = self.grad;
      detail::CMapMat<T> wm(pw->value.data.data(), cout, kk);
      std::vector<T> dcols(static_cast<std::size_t>(kk) * p);
      for (int n = 0; n < gy.n; ++n) {
        detail::CMapMat<T> gm(gy.sample(n), cout, static_cast<Eigen::Index>(p));
        detail::CMapMat<T> cm(cols_keep[n].data(), kk, static_cast<Eigen::Index>(p));
        if (pw->requires_grad) {
          detail::MapMat<T> gw(pw->grad_buffer().data.data(), cout, kk);
          gw.noalias() += gm * cm.transpose();
        }
        if (pb->requires_grad) {
          auto& gb = pb->grad_buffer();
          // Plain loop: Eigen's vectorized sum peels by pointer alignment, which breaks bitwise replay.
          for (int c = 0; c < cout; ++c) {
            const T* row = gy.sample(n) + static_cast<std::size_t>(c) * p;
            T acc = 0;
            for (std::size_t i = 0; i < p; ++i) acc += row[i];
            gb.data[c] += acc;
          }
        }
        if (pi->requires_grad) {
          detail::MapMat<T> dc(dcols.data(), kk, static_cast<Eigen::Index>(p));
          dc.noalias() = wm.transpose() * gm;
          detail::col2im(dcols.data(), cin, pi->value.h, pi->value.w, k, stride, pad, oh, ow,
                         pi->grad_buffer().sample(n));
        }
      }
    };
  }
  return node;
}

/// Transposed convolution (fractionally strided). weight: [Cin, Cout, k, k], bias: [1, Cout, 1, 1].
template <class T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int pad,
                        int output_pad) {
  const Tensor<T>& x = input->value;
  const Tensor<T>& wt = weight->value;
  const int cin = wt.n, cout = wt.c, k = wt.h;
  if (x.c != cin) throw std::invalid_argument("conv_transpose2d: channel mismatch");
  const int oh = (x.h - 1) * stride - 2 * pad + k + output_pad;
  const int ow = (x.w - 1) * stride - 2 * pad + k + output_pad;
  const int kk = cout * k * k;
  const std::size_t p = x.plane();
  Tensor<T> out(x.n, cout, oh, ow);
  detail::CMapMat<T> wm(wt.data.data(), cin, kk);
  std::vector<T> cols(static_cast<std::size_t>(kk) * p);
  for (int n = 0; n < x.n; ++n) {
    detail::MapMat<T> cm(cols.data(), kk, static_cast<Eigen::Index>(p));
    cm.noalias() = wm.transpose() * detail::CMapMat<T>(x.sample(n), cin, static_cast<Eigen::Index>(p));
    detail::col2im(cols.data(), cout, oh, ow, k, stride, pad, x.h, x.w, out.sample(n));
    for (int c = 0; c < cout; ++c) {
      T* dst = out.channel(n, c);
      const T b = bias->value.data[c];
      for (std::size_t i = 0; i < out.plane(); ++i) dst[i] += b;
    }
  }
  Node<T>* pi = input.get();
  Node<T>* pw = weight.get();
  Node<T>* pb = bias.get();
  auto node = detail::make_node<T>(std::move(out), {input, weight, bias}, nullptr);
  if (node->requires_grad) {
    node->backward_fn = [=](Node<T>& self) {
      const Tensor<T>& gy = self.grad;
      const Tensor<T>& xin = pi->value;
      detail::CMapMat<T> wm(pw->value.data.data(), cin, kk);
      std::vector<T> gcols(static_cast<std::size_t>(kk) * p);
      for (int n = 0; n < gy.n; ++n) {
        detail::im2col(gy.sample(n), cout, oh, ow, k, stride, pad, xin.h, xin.w, gcols.data());
        detail::CMapMat<T> gc(gcols.data(), kk, static_cast<Eigen::Index>(p));
        if (pw->requires_grad) {
          detail::MapMat<T> gw(pw->grad_buffer().data.data(), cin, kk);
          gw.noalias() += detail::CMapMat<T>(xin.sample(n), cin, static_cast<Eigen::Index>(p)) * gc.transpose();
        }
        if (pb->requires_grad) {
          auto& gb = pb->grad_buffer();
          for (int c = 0; c < cout; ++c) {
            const T* g = gy.channel(n, c);
            T s = 0;
            for (std::size_t i = 0; i < gy.plane(); ++i) s += g[i];
            gb.data[c] += s;
          }
        }
        if (pi->requires_grad) {
          detail::MapMat<T> gx(pi->grad_buffer().sample(n), cin, static_cast<Eigen::Index>(p));
          gx.noalias() += wm * gc;
        }
      }
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// Reductions (all return 1x1x1x1 scalars averaged over every element)

template <class T>
Var<T> mean_absolute_error(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "mean_absolute_error");
  const std::size_t m = a->value.size();
  T s = 0;
  for (std::size_t i = 0; i < m; ++i) s += std::abs(a->value.data[i] - b->value.data[i]);
  Tensor<T> out(1, 1, 1, 1, s / static_cast<T>(m));
  Node<T>* pa = a.get();
  Node<T>* pb = b.get();
  return detail::make_node<T>(std::move(out), {a, b}, [pa, pb, m](Node<T>& self) {
    const T g = self.grad.data[0] / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T d = pa->value.data[i] - pb->value.data[i];
      const T sg = d > T(0) ? g : (d < T(0) ? -g : T(0));
      if (pa->requires_grad) pa->grad_buffer().data[i] += sg;
      if (pb->requires_grad) pb->grad_buffer().data[i] -= sg;
    }
  });
}

template <class T>
Var<T> mean_squared_error(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "mean_squared_error");
  const std::size_t m = a->value.size();
  T s = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const T d = a->value.data[i] - b->value.data[i];
    s += d * d;
  }
  Tensor<T> out(1, 1, 1, 1, s / static_cast<T>(m));
  Node<T>* pa = a.get();
  Node<T>* pb = b.get();
  return detail::make_node<T>(std::move(out), {a, b}, [pa, pb, m](Node<T>& self) {
    const T g = T(2) * self.grad.data[0] / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T d = g * (pa->value.data[i] - pb->value.data[i]);
      if (pa->requires_grad) pa->grad_buffer().data[i] += d;
      if (pb->requires_grad) pb->grad_buffer().data[i] -= d;
    }
  });
}

template <class T>
Var<T> mean_squared_error_to(const Var<T>& a, T target) {
  const std::size_t m = a->value.size();
  T s = 0;
  for (T v : a->value.data) s += (v - target) * (v - target);
  Tensor<T> out(1, 1, 1, 1, s / static_cast<T>(m));
  Node<T>* pa = a.get();
  return detail::make_node<T>(std::move(out), {a}, [pa, target, m](Node<T>& self) {
    const T g = T(2) * self.grad.data[0] / static_cast<T>(m);
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) ga.data[i] += g * (pa->value.data[i] - target);
  });
}

/// Binary cross-entropy of sigmoid(a) against a constant target, computed on logits.
template <class T>
Var<T> bce_with_logits_to(const Var<T>& a, T target) {
  const std::size_t m = a->value.size();
  T s = 0;
  for (T v : a->value.data) s += std::max(v, T(0)) - v * target + std::log1p(std::exp(-std::abs(v)));
  Tensor<T> out(1, 1, 1, 1, s / static_cast<T>(m));
  Node<T>* pa = a.get();
  return detail::make_node<T>(std::move(out), {a}, [pa, target, m](Node<T>& self) {
    const T g = self.grad.data[0] / static_cast<T>(m);
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const T sig = T(1) / (T(1) + std::exp(-pa->value.data[i]));
      ga.data[i] += g * (sig - target);
    }
  });
}

}  // namespace tridecon::nn
