#include "tridecon/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace tridecon {

void PhantomConfig::validate() const {
  if (!shape.valid()) throw std::invalid_argument("phantom shape must be positive");
  if (ellipsoids < 0 || tubes < 0) throw std::invalid_argument("object counts must be >= 0");
  if (!(radius_min > 0) || radius_max < radius_min) throw std::invalid_argument("need 0 < radius_min <= radius_max");
  if (!(tube_radius > 0)) throw std::invalid_argument("tube_radius must be > 0");
  if (!(intensity_min >= 0) || intensity_max < intensity_min || intensity_max > 1)
    throw std::invalid_argument("need 0 <= intensity_min <= intensity_max <= 1");
  if (!(background >= 0 && background < 1)) throw std::invalid_argument("background must be in [0,1)");
  if (sigma_top < 0 || sigma_bottom < 0 || axial_ratio < 0) throw std::invalid_argument("blur widths must be >= 0");
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 1e-6) return {1.0};
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * r + 1);
  double total = 0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  return k;
}

// Separable blur of one plane with replicated borders.
void blur_plane(std::vector<double>& plane, int w, int h, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  if (r == 0) return;
  std::vector<double> tmp(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int d = -r; d <= r; ++d) acc += k[d + r] * plane[static_cast<std::size_t>(y) * w + std::clamp(x + d, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int d = -r; d <= r; ++d) acc += k[d + r] * tmp[static_cast<std::size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
      plane[static_cast<std::size_t>(y) * w + x] = acc;
    }
}

void paint(Volume& v, int x, int y, int z, float value) {
  float& dst = v(x, y, z);
  dst = std::max(dst, value);
}

}  // namespace

Phantom make_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  const Shape3 s = cfg.shape;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  Volume objects(s, 0.0f);
  for (int n = 0; n < cfg.ellipsoids; ++n) {
    const std::array<double, 3> c{uniform(0, s.x - 1), uniform(0, s.y - 1), uniform(0, s.z - 1)};
    const std::array<double, 3> r{uniform(cfg.radius_min, cfg.radius_max), uniform(cfg.radius_min, cfg.radius_max),
                                  uniform(cfg.radius_min, cfg.radius_max)};
    const float value = static_cast<float>(uniform(cfg.intensity_min, cfg.intensity_max));
    const int x0 = std::max(0, static_cast<int>(std::floor(c[0] - r[0]))), x1 = std::min(s.x - 1, static_cast<int>(std::ceil(c[0] + r[0])));
    const int y0 = std::max(0, static_cast<int>(std::floor(c[1] - r[1]))), y1 = std::min(s.y - 1, static_cast<int>(std::ceil(c[1] + r[1])));
    const int z0 = std::max(0, static_cast<int>(std::floor(c[2] - r[2]))), z1 = std::min(s.z - 1, static_cast<int>(std::ceil(c[2] + r[2])));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dx = (x - c[0]) / r[0], dy = (y - c[1]) / r[1], dz = (z - c[2]) / r[2];
          if (dx * dx + dy * dy + dz * dz <= 1.0) paint(objects, x, y, z, value);
        }
  }

  const double diag = std::sqrt(double(s.x) * s.x + double(s.y) * s.y + double(s.z) * s.z);
  for (int n = 0; n < cfg.tubes; ++n) {
    // A wavy line through a random point with a random direction.
    const std::array<double, 3> p{uniform(0, s.x - 1), uniform(0, s.y - 1), uniform(0, s.z - 1)};
    std::normal_distribution<double> nd;
    std::array<double, 3> d{nd(rng), nd(rng), nd(rng)};
    const double dn = std::hypot(d[0], d[1], d[2]);
    for (double& v : d) v /= dn;
    // Two unit vectors orthogonal to d.
    std::array<double, 3> a = std::abs(d[0]) < 0.9 ? std::array<double, 3>{1, 0, 0} : std::array<double, 3>{0, 1, 0};
    const double ad = a[0] * d[0] + a[1] * d[1] + a[2] * d[2];
    for (int i = 0; i < 3; ++i) a[i] -= ad * d[i];
    const double an = std::hypot(a[0], a[1], a[2]);
    for (double& v : a) v /= an;
    const std::array<double, 3> b{d[1] * a[2] - d[2] * a[1], d[2] * a[0] - d[0] * a[2], d[0] * a[1] - d[1] * a[0]};
    const double amp = uniform(2.0, 6.0), freq = uniform(0.5, 2.0), phase = uniform(0, 2 * std::numbers::pi);
    const float value = static_cast<float>(uniform(cfg.intensity_min, cfg.intensity_max));
    const int samples = static_cast<int>(4 * diag);
    const double rr = cfg.tube_radius;
    for (int k = 0; k <= samples; ++k) {
      const double t = -0.5 * diag + diag * k / samples;
      const double w = 2 * std::numbers::pi * freq * t / diag + phase;
      std::array<double, 3> q{};
      for (int i = 0; i < 3; ++i) q[i] = p[i] + t * d[i] + amp * (std::sin(w) * a[i] + std::cos(w) * b[i]);
      const int x0 = std::max(0, static_cast<int>(std::floor(q[0] - rr))), x1 = std::min(s.x - 1, static_cast<int>(std::ceil(q[0] + rr)));
      const int y0 = std::max(0, static_cast<int>(std::floor(q[1] - rr))), y1 = std::min(s.y - 1, static_cast<int>(std::ceil(q[1] + rr)));
      const int z0 = std::max(0, static_cast<int>(std::floor(q[2] - rr))), z1 = std::min(s.z - 1, static_cast<int>(std::ceil(q[2] + rr)));
      for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double dx = x - q[0], dy = y - q[1], dz = z - q[2];
            if (dx * dx + dy * dy + dz * dz <= rr * rr) paint(objects, x, y, z, value);
          }
    }
  }

  Phantom out;
  out.clean = Volume(s);
  {
    auto src = objects.data();
    auto dst = out.clean.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::max(src[i], static_cast<float>(cfg.background));
  }

  // Depth-dependent blur: for output plane z the axial and lateral widths follow sigma(z).
  out.degraded = Volume(s);
  const std::size_t plane = static_cast<std::size_t>(s.x) * s.y;
  std::vector<double> buf(plane);
  auto clean = out.clean.data();
  for (int z = 0; z < s.z; ++z) {
    const double t = s.z > 1 ? static_cast<double>(z) / (s.z - 1) : 0.0;
    const double sigma = cfg.sigma_top + (cfg.sigma_bottom - cfg.sigma_top) * t;
    const double sigma_z = sigma * cfg.axial_ratio;
    std::fill(buf.begin(), buf.end(), 0.0);
    const auto kz = gaussian_kernel(sigma_z);
    const int rz = static_cast<int>(kz.size() / 2);
    for (int d = -rz; d <= rz; ++d) {
      const int zz = std::clamp(z + d, 0, s.z - 1);
      const float* src = clean.data() + static_cast<std::size_t>(zz) * plane;
      for (std::size_t i = 0; i < plane; ++i) buf[i] += kz[d + rz] * src[i];
    }
    blur_plane(buf, s.x, s.y, sigma);
    const double decay = cfg.decay_tau > 0 ? std::exp(-z / cfg.decay_tau) : 1.0;
    float* dst = out.degraded.data().data() + static_cast<std::size_t>(z) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double v = buf[i] * decay;
      if (cfg.photons > 0) {
        std::poisson_distribution<long> pd(std::max(0.0, v * cfg.photons));
        v = static_cast<double>(pd(rng)) / cfg.photons;
      }
      dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

double otsu_threshold(std::span<const float> values) {
  if (values.empty()) throw std::invalid_argument("otsu_threshold on empty input");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  if (hi <= lo) return lo;
  constexpr int bins = 256;
  std::array<double, bins> hist{};
  for (float v : values) hist[std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins))] += 1;
  const double total = static_cast<double>(values.size());
  double sum_all = 0;
  for (int i = 0; i < bins; ++i) sum_all += i * hist[i];
  double w0 = 0, sum0 = 0, best = -1;
  int best_bin = 0;
  for (int i = 0; i < bins - 1; ++i) {
    w0 += hist[i];
    sum0 += i * hist[i];
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = i;
    }
  }
  return lo + (hi - lo) * (best_bin + 1) / bins;
}

std::vector<Blob> connected_components(const Image2D& img, double threshold, std::size_t min_area) {
  const int w = img.width(), h = img.height();
  std::vector<int> label(img.size(), -1);
  std::vector<Blob> blobs;
  std::vector<std::pair<int, int>> stack;
  for (int j0 = 0; j0 < h; ++j0)
    for (int i0 = 0; i0 < w; ++i0) {
      const std::size_t k0 = static_cast<std::size_t>(j0) * w + i0;
      if (label[k0] >= 0 || !(img(i0, j0) > threshold)) continue;
      Blob b;
      double sx = 0, sy = 0;
      label[k0] = 1;
      stack.assign(1, {i0, j0});
      while (!stack.empty()) {
        const auto [i, j] = stack.back();
        stack.pop_back();
        ++b.area;
        sx += i;
        sy += j;
        for (int dj = -1; dj <= 1; ++dj)
          for (int di = -1; di <= 1; ++di) {
            const int ni = i + di, nj = j + dj;
            if (ni < 0 || nj < 0 || ni >= w || nj >= h) continue;
            const std::size_t nk = static_cast<std::size_t>(nj) * w + ni;
            if (label[nk] >= 0 || !(img(ni, nj) > threshold)) continue;
            label[nk] = 1;
            stack.emplace_back(ni, nj);
          }
      }
      if (b.area < min_area) continue;
      b.x = sx / b.area;
      b.y = sy / b.area;
      blobs.push_back(b);
    }
  return blobs;
}

DisplacementStats centroid_displacement(const Volume& input, const Volume& restored, std::size_t min_area) {
  if (input.shape() != restored.shape()) throw std::invalid_argument("centroid_displacement needs equal shapes");
  const double t_in = otsu_threshold(input.data());
  const double t_out = otsu_threshold(restored.data());
  const Shape3 s = input.shape();
  const std::size_t plane = static_cast<std::size_t>(s.x) * s.y;
  DisplacementStats st;
  double total = 0;
  for (int z = 0; z < s.z; ++z) {
    auto section = [&](const Volume& v) {
      const auto d = v.data().subspan(static_cast<std::size_t>(z) * plane, plane);
      return Image2D(s.x, s.y, std::vector<float>(d.begin(), d.end()));
    };
    const auto a = connected_components(section(input), t_in, min_area);
    const auto b = connected_components(section(restored), t_out, min_area);
    if (a.empty() || b.empty()) continue;
    ++st.sections;
    for (const auto& p : a) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : b) best = std::min(best, std::hypot(p.x - q.x, p.y - q.y));
      total += best;
      ++st.matched;
    }
  }
  st.mean = st.matched ? total / static_cast<double>(st.matched) : 0.0;
  return st;
}

}  // namespace tridecon
