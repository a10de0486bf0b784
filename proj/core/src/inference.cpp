#include "tridecon/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "tridecon/checkpoint.hpp"
#include "tridecon/parallel.hpp"
#include "tridecon/spcyclegan.hpp"

namespace tridecon {

Image2D NetworkGenerator::apply(const Image2D& img) const {
  if (img.width() % size_multiple() != 0 || img.height() % size_multiple() != 0)
    throw std::invalid_argument(fmt::format("generator needs sizes divisible by {}, got {}x{}", size_multiple(),
                                            img.width(), img.height()));
  nn::NoGradGuard no_grad;
  const auto out = g_(nn::constant(to_network_domain(img)));
  return from_network_domain(out->value);
}

std::unique_ptr<SectionGenerator> load_generator(const std::filesystem::path& checkpoint) {
  const CheckpointInfo info = read_checkpoint_info(checkpoint);
  if (info.kind == CheckpointKind::identity) return std::make_unique<IdentityGenerator>(info.axis);
  return std::make_unique<NetworkGenerator>(load_generator_ab<float>(checkpoint), info.axis);
}

namespace {

// Linear feather weight at offset t of a tile of length len; no ramp on an image border.
double ramp(int t, int len, int overlap, bool ramp_low, bool ramp_high) {
  double w = 1.0;
  if (ramp_low) w = std::min(w, (t + 1.0) / (overlap + 1.0));
  if (ramp_high) w = std::min(w, (len - t) / (overlap + 1.0));
  return w;
}

std::vector<int> tile_starts(int dim, int tile, int overlap) {
  if (dim <= tile) return {0};
  const int step = std::max(1, tile - overlap);
  std::vector<int> starts;
  for (int s = 0; s + tile < dim; s += step) starts.push_back(s);
  starts.push_back(dim - tile);
  return starts;
}

Image2D apply_tiled(const SectionGenerator& g, const Image2D& img, int tile, int overlap) {
  const int m = g.size_multiple();
  tile = (tile + m - 1) / m * m;
  if (img.width() <= tile && img.height() <= tile) return g.apply(img);
  const int tw = std::min(tile, img.width());
  const int th = std::min(tile, img.height());
  std::vector<double> acc(img.size(), 0.0), wsum(img.size(), 0.0);
  for (int top : tile_starts(img.height(), th, overlap)) {
    for (int left : tile_starts(img.width(), tw, overlap)) {
      const Image2D out = g.apply(img.crop(left, top, tw, th));
      for (int j = 0; j < th; ++j) {
        const double wy = ramp(j, th, overlap, top > 0, top + th < img.height());
        for (int i = 0; i < tw; ++i) {
          const double w = wy * ramp(i, tw, overlap, left > 0, left + tw < img.width());
          const std::size_t k = static_cast<std::size_t>(top + j) * img.width() + (left + i);
          acc[k] += w * out(i, j);
          wsum[k] += w;
        }
      }
    }
  }
  Image2D result(img.width(), img.height());
  auto px = result.pixels();
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = static_cast<float>(acc[k] / wsum[k]);
  return result;
}

}  // namespace

SectionStack restore_sections(const SectionGenerator& g, const SectionStack& s, const RestoreOptions& opts) {
  if (g.axis() != s.axis)
    throw AxisMismatchError(fmt::format("generator was trained on {} sections, stack holds {} sections",
                                        to_string(g.axis()), to_string(s.axis)));
  if (opts.pad_multiple < 1) throw std::invalid_argument("pad_multiple must be >= 1");
  const int multiple = std::lcm(opts.pad_multiple, g.size_multiple());

  SectionStack out;
  out.axis = s.axis;
  out.pad = s.pad;
  out.sections.resize(s.sections.size());
  bool warned = false;
  if (opts.pad_mode == PadMode::reflect && !s.sections.empty()) {
    const Image2D& first = s.sections.front();
    const int pr = (multiple - first.width() % multiple) % multiple;
    const int pb = (multiple - first.height() % multiple) % multiple;
    if (pr >= first.width() || pb >= first.height()) {
      spdlog::warn("{} sections of {}x{} are too small to reflect-pad by ({}, {}); zero padding instead",
                   to_string(s.axis), first.width(), first.height(), pr, pb);
      warned = true;
    }
  }
  const PadMode mode = warned ? PadMode::zero : opts.pad_mode;

  parallel_for(s.sections.size(), opts.threads, [&](std::size_t k) {
    const Image2D& img = s.sections[k];
    const int pr = (multiple - img.width() % multiple) % multiple;
    const int pb = (multiple - img.height() % multiple) % multiple;
    const PadMode m = (mode == PadMode::reflect && (pr >= img.width() || pb >= img.height())) ? PadMode::zero : mode;
    auto [padded, rec] = pad_section(img, multiple, m);
    Image2D restored = opts.tile > 0 ? apply_tiled(g, padded, opts.tile, opts.tile_overlap) : g.apply(padded);
    if (restored.width() != padded.width() || restored.height() != padded.height())
      throw std::runtime_error(fmt::format("generator changed section {} size", k));
    Image2D cropped = unpad_section(restored, rec);
    for (float& v : cropped.pixels()) v = std::clamp(v, 0.0f, 1.0f);
    out.sections[k] = std::move(cropped);
  });
  return out;
}

Volume restore_volume_axis(const SectionGenerator& g, const Volume& v, SliceAxis axis, const RestoreOptions& opts) {
  return stack_sections(restore_sections(g, extract_sections(v, axis), opts), v.shape());
}

FusionWeights::FusionWeights(double w1, double w2, double w3) {
  for (double w : {w1, w2, w3})
    if (!std::isfinite(w) || w < 0) throw std::invalid_argument("fusion weights must be finite and nonnegative");
  std::array<double, 3> sorted{w1, w2, w3};
  std::sort(sorted.begin(), sorted.end());
  const double total = (sorted[0] + sorted[1]) + sorted[2];
  if (total == 0) throw std::invalid_argument("fusion weights must not all be zero");
  w_ = {w1 / total, w2 / total, w3 / total};
}

Volume pad_to_shape(const Volume& v, const Shape3& shape) {
  if (v.shape() == shape) return v;
  Volume out(shape, 0.0f);
  const int X = std::min(shape.x, v.shape().x), Y = std::min(shape.y, v.shape().y), Z = std::min(shape.z, v.shape().z);
  for (int z = 0; z < Z; ++z)
    for (int y = 0; y < Y; ++y)
      for (int x = 0; x < X; ++x) out(x, y, z) = v(x, y, z);
  return out;
}

Volume fuse_volumes(const std::array<const Volume*, 3>& volumes, const FusionWeights& w) {
  Shape3 shape{0, 0, 0};
  for (int k = 0; k < 3; ++k) {
    if (!volumes[k]) {
      if (w[k] != 0) throw std::invalid_argument(fmt::format("fusion input {} is missing but has weight {}", k, w[k]));
      continue;
    }
    const Shape3& s = volumes[k]->shape();
    shape = {std::max(shape.x, s.x), std::max(shape.y, s.y), std::max(shape.z, s.z)};
  }
  if (!shape.valid()) throw std::invalid_argument("no fusion inputs");
  std::array<Volume, 3> aligned;
  std::array<const Volume*, 3> src{};
  for (int k = 0; k < 3; ++k) {
    if (!volumes[k]) continue;
    if (volumes[k]->shape() == shape) {
      src[k] = volumes[k];
    } else {
      spdlog::warn("fusion input {} shaped {} zero-padded to {}", k, to_string(volumes[k]->shape()), to_string(shape));
      aligned[k] = pad_to_shape(*volumes[k], shape);
      src[k] = &aligned[k];
    }
  }

  Volume out(shape);
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::array<std::pair<double, double>, 3> terms;
    int n = 0;
    double lo = INFINITY, hi = -INFINITY;
    for (int k = 0; k < 3; ++k) {
      if (!src[k]) continue;
      const double v = src[k]->data()[i];
      terms[n++] = {v, w[k]};
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    std::sort(terms.begin(), terms.begin() + n);
    double acc = 0.0;
    for (int t = 0; t < n; ++t) acc += terms[t].first * terms[t].second;
    dst[i] = std::clamp(static_cast<float>(std::clamp(acc, lo, hi)), 0.0f, 1.0f);
  }
  return out;
}

Volume fuse_volumes(const Volume& v_xy, const Volume& v_xz, const Volume& v_yz, const FusionWeights& w) {
  return fuse_volumes({&v_xy, &v_xz, &v_yz}, w);
}

}  // namespace tridecon
