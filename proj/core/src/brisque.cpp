#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "tridecon/iqa.hpp"
#include "tridecon/resize.hpp"

namespace tridecon {

namespace {

constexpr int kWindow = 7;
constexpr double kWindowSigma = 7.0 / 6.0;
constexpr double kC = 1.0;

std::array<double, kWindow * kWindow> gaussian_window() {
  std::array<double, kWindow * kWindow> k{};
  double total = 0;
  for (int dy = 0; dy < kWindow; ++dy)
    for (int dx = 0; dx < kWindow; ++dx) {
      const double y = dy - kWindow / 2, x = dx - kWindow / 2;
      total += k[dy * kWindow + dx] = std::exp(-(x * x + y * y) / (2 * kWindowSigma * kWindowSigma));
    }
  for (double& v : k) v /= total;
  return k;
}

// Same-size correlation with symmetric (edge-repeating) reflection at the borders,
// so a constant image stays constant. The window is symmetric.
int mirror(int i, int n) { return i < 0 ? -i - 1 : (i >= n ? 2 * n - i - 1 : i); }

std::vector<double> filter_same(const std::vector<double>& img, int w, int h) {
  static const auto k = gaussian_window();
  constexpr int r = kWindow / 2;
  std::vector<double> out(img.size(), 0.0);
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      double acc = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int y = mirror(j + dy, h);
        for (int dx = -r; dx <= r; ++dx)
          acc += k[(dy + r) * kWindow + (dx + r)] * img[static_cast<std::size_t>(y) * w + mirror(i + dx, w)];
      }
      out[static_cast<std::size_t>(j) * w + i] = acc;
    }
  return out;
}

// True where every pixel of the (reflected) window equals the centre pixel.
std::vector<bool> flat_windows(const std::vector<double>& img, int w, int h) {
  constexpr int r = kWindow / 2;
  std::vector<bool> out(img.size());
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      const double c = img[static_cast<std::size_t>(j) * w + i];
      bool flat = true;
      for (int dy = -r; dy <= r && flat; ++dy)
        for (int dx = -r; dx <= r && flat; ++dx)
          flat = img[static_cast<std::size_t>(mirror(j + dy, h)) * w + mirror(i + dx, w)] == c;
      out[static_cast<std::size_t>(j) * w + i] = flat;
    }
  return out;
}

std::vector<double> mscn_double(const Image2D& img) {
  const int w = img.width(), h = img.height();
  if (w < kWindow || h < kWindow)
    throw std::invalid_argument(fmt::format("BRISQUE needs at least {0}x{0} pixels, got {1}x{2}", kWindow, w, h));
  std::vector<double> x(img.pixels().begin(), img.pixels().end());
  std::vector<double> x2(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) x2[k] = x[k] * x[k];
  const auto mu = filter_same(x, w, h);
  const auto m2 = filter_same(x2, w, h);
  // Flat windows are set to exactly 0; rounding would otherwise scatter their signs
  // and move the left/right AGGD split.
  const auto flat = flat_windows(x, w, h);
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (flat[k]) continue;
    const double sigma = std::sqrt(std::abs(mu[k] * mu[k] - m2[k]));
    out[k] = (x[k] - mu[k]) / (sigma + kC);
  }
  return out;
}

double log_phi(double alpha) {
  // log of Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)), increasing in a.
  return 2 * std::lgamma(2 / alpha) - std::lgamma(1 / alpha) - std::lgamma(3 / alpha);
}

double solve_shape(double target) {
  double lo = 0.02, hi = 50.0;
  const double lt = std::log(std::max(target, 1e-300));
  if (lt <= log_phi(lo)) return lo;
  if (lt >= log_phi(hi)) return hi;
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (log_phi(mid) < lt ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void append_scale(const Image2D& img, double* out, bool& degenerate) {
  const int w = img.width(), h = img.height();
  const auto m = mscn_double(img);
  auto at = [&](int i, int j) { return m[static_cast<std::size_t>(j) * w + i]; };

  const AggdFit base = fit_aggd(m);
  degenerate |= base.degenerate;
  out[0] = base.alpha;
  out[1] = (base.left_var + base.right_var) / 2;

  // H, V, main diagonal, secondary diagonal neighbour products.
  const std::array<std::array<int, 4>, 4> pairs{{{0, 0, 1, 0}, {0, 0, 0, 1}, {0, 0, 1, 1}, {0, 1, 1, 0}}};
  std::vector<double> prod;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [ai, aj, bi, bj] = pairs[p];
    const int di = std::max(ai, bi), dj = std::max(aj, bj);
    prod.clear();
    prod.reserve(static_cast<std::size_t>(w - di) * (h - dj));
    for (int j = 0; j + dj < h; ++j)
      for (int i = 0; i + di < w; ++i) prod.push_back(at(i + ai, j + aj) * at(i + bi, j + bj));
    const AggdFit f = fit_aggd(prod);
    degenerate |= f.degenerate;
    out[2 + 4 * p + 0] = f.alpha;
    out[2 + 4 * p + 1] = f.mean;
    out[2 + 4 * p + 2] = f.left_var;
    out[2 + 4 * p + 3] = f.right_var;
  }
}

}  // namespace

Image2D mscn_coefficients(const Image2D& img255) {
  const auto m = mscn_double(img255);
  Image2D out(img255.width(), img255.height());
  auto px = out.pixels();
  for (std::size_t k = 0; k < m.size(); ++k) px[k] = static_cast<float>(m[k]);
  return out;
}

AggdFit fit_aggd(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("fit_aggd on empty sample");
  double abs_sum = 0, sq_sum = 0, left_sq = 0, right_sq = 0;
  std::size_t left_n = 0, right_n = 0;
  for (double v : x) {
    abs_sum += std::abs(v);
    sq_sum += v * v;
    if (v < 0) {
      left_sq += v * v;
      ++left_n;
    } else {
      right_sq += v * v;
      ++right_n;
    }
  }
  const double n = static_cast<double>(x.size());
  AggdFit f;
  f.left_var = left_n ? left_sq / static_cast<double>(left_n) : 0.0;
  f.right_var = right_n ? right_sq / static_cast<double>(right_n) : 0.0;
  double mean_sq = sq_sum / n;
  if (f.left_var < kVarianceFloor || f.right_var < kVarianceFloor || mean_sq < kVarianceFloor) f.degenerate = true;
  f.left_var = std::max(f.left_var, kVarianceFloor);
  f.right_var = std::max(f.right_var, kVarianceFloor);
  mean_sq = std::max(mean_sq, kVarianceFloor);

  const double r_hat = (abs_sum / n) * (abs_sum / n) / mean_sq;
  const double g = std::sqrt(f.left_var) / std::sqrt(f.right_var);
  const double big_r = r_hat * (g * g * g + 1) * (g + 1) / ((g * g + 1) * (g * g + 1));
  f.alpha = solve_shape(big_r);
  const double a = f.alpha;
  const double beta_scale = std::exp(0.5 * (std::lgamma(1 / a) - std::lgamma(3 / a)));
  f.mean = (std::sqrt(f.right_var) - std::sqrt(f.left_var)) * beta_scale * std::exp(std::lgamma(2 / a) - std::lgamma(1 / a));
  return f;
}

BrisqueFeatures brisque_features(const Image2D& img255) {
  BrisqueFeatures f;
  append_scale(img255, f.values.data(), f.degenerate);
  // Half resolution by a factor of 2, sizes rounded half to even.
  const int w = static_cast<int>(std::nearbyint(img255.width() * 0.5));
  const int h = static_cast<int>(std::nearbyint(img255.height() * 0.5));
  append_scale(resize_bicubic(img255, w, h, 2.0, 2.0), f.values.data() + 18, f.degenerate);
  return f;
}

BrisqueModel BrisqueModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open BRISQUE model " + path.string());
  BrisqueModel m;
  std::string line;
  bool have_format = false, have_min = false, have_max = false;
  std::size_t n_sv = 0;
  auto fail = [&](const std::string& why) { return std::runtime_error("BRISQUE model " + path.string() + ": " + why); };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string name;
      int version = 0;
      ls >> name >> version;
      if (name != "tridecon-brisque" || version != 1) throw fail("unsupported format line '" + line + "'");
      have_format = true;
    } else if (key == "kernel") {
      std::string k;
      ls >> k;
      if (k != "rbf") throw fail("only the rbf kernel is supported");
    } else if (key == "gamma") {
      ls >> m.gamma_;
    } else if (key == "rho") {
      ls >> m.rho_;
    } else if (key == "feature_count") {
      int n = 0;
      ls >> n;
      if (n != 36) throw fail(fmt::format("feature_count {} does not match the 36-feature extractor", n));
    } else if (key == "feature_min" || key == "feature_max") {
      auto& dst = key == "feature_min" ? m.min_ : m.max_;
      for (double& v : dst) ls >> v;
      if (!ls) throw fail(key + " needs 36 values");
      (key == "feature_min" ? have_min : have_max) = true;
    } else if (key == "support_vectors") {
      ls >> n_sv;
      for (std::size_t s = 0; s < n_sv; ++s) {
        if (!std::getline(in, line)) throw fail("truncated support vectors");
        std::istringstream vs(line);
        double coef = 0;
        std::array<double, 36> sv{};
        vs >> coef;
        for (double& v : sv) vs >> v;
        if (!vs) throw fail(fmt::format("support vector {} needs a coefficient and 36 values", s));
        m.coef_.push_back(coef);
        m.sv_.push_back(sv);
      }
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }
  if (!have_format || !have_min || !have_max || m.coef_.empty() || !(m.gamma_ > 0)) throw fail("incomplete model");
  return m;
}

double BrisqueModel::predict(const std::array<double, 36>& features) const {
  std::array<double, 36> x{};
  for (int k = 0; k < 36; ++k) x[k] = -1 + 2.0 / (max_[k] - min_[k]) * (features[k] - min_[k]);
  double acc = 0;
  for (std::size_t s = 0; s < sv_.size(); ++s) {
    double d2 = 0;
    for (int k = 0; k < 36; ++k) {
      const double d = x[k] - sv_[s][k];
      d2 += d * d;
    }
    acc += coef_[s] * std::exp(-gamma_ * d2);
  }
  return acc - rho_;
}

double brisque_score(const Image2D& img255, const BrisqueModel& model) {
  const double raw = model.predict(brisque_features(img255).values);
  return std::isfinite(raw) ? std::clamp(raw, 0.0, 100.0) : 100.0;
}

}  // namespace tridecon
