#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridecon/image.hpp"
#include "tridecon/nn/adam.hpp"
#include "tridecon/nn/networks.hpp"
#include "tridecon/sectioning.hpp"

namespace tridecon {

enum class GanMode { least_squares, log_vanilla };
/// joint: G_AB, G_BA and H step together on the full objective.
/// alternating: G_AB and G_BA step on the full objective, then H steps alone on the spatial term.
enum class HSchedule { joint, alternating };

std::string_view to_string(GanMode m);
GanMode parse_gan_mode(std::string_view s);
std::string_view to_string(HSchedule s);
HSchedule parse_h_schedule(std::string_view s);

struct TrainConfig {
  double lambda1 = 10.0;  // cycle term
  double lambda2 = 10.0;  // spatial term
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int epochs_const = 100;
  int epochs_decay = 100;
  int batch_size = 1;
  int pool_size = 50;
  int patch_xy = 256;
  int patch_xz = 200;
  int patch_yz = 200;
  int patches_per_section = 1;
  GanMode gan_mode = GanMode::least_squares;
  HSchedule h_schedule = HSchedule::joint;
  nn::GeneratorArch generator{};
  nn::DiscriminatorArch discriminator{};
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] int total_epochs() const { return epochs_const + epochs_decay; }
  [[nodiscard]] int patch_size(SliceAxis axis) const;
};

/// Learning rate for a 1-based epoch: constant for epochs_const epochs, then
/// linear to zero at epoch epochs_const + epochs_decay.
double learning_rate(const TrainConfig& cfg, int epoch);

/// Thrown when a loss or a discriminator output stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossBreakdown {
  double gan_ab = 0;
  double gan_ba = 0;
  double cyc = 0;
  double spatial = 0;
  double total = 0;
};

template <class T>
struct SpCycleGanModels {
  nn::ResnetGenerator<T> g_ab;  // blurred -> clean
  nn::ResnetGenerator<T> g_ba;  // clean -> blurred
  nn::ResnetGenerator<T> h;     // restored -> blurred, spatial constraint
  nn::PatchDiscriminator<T> d_a;
  nn::PatchDiscriminator<T> d_b;

  [[nodiscard]] std::vector<nn::NamedParam<T>> generator_parameters() const {
    auto out = prefixed("g_ab", g_ab.parameters());
    for (auto& p : prefixed("g_ba", g_ba.parameters())) out.push_back(std::move(p));
    return out;
  }
  [[nodiscard]] std::vector<nn::NamedParam<T>> h_parameters() const { return prefixed("h", h.parameters()); }
  [[nodiscard]] std::vector<nn::NamedParam<T>> discriminator_parameters() const {
    auto out = prefixed("d_a", d_a.parameters());
    for (auto& p : prefixed("d_b", d_b.parameters())) out.push_back(std::move(p));
    return out;
  }
  [[nodiscard]] std::vector<nn::NamedParam<T>> all_parameters() const {
    auto out = generator_parameters();
    for (auto& p : h_parameters()) out.push_back(std::move(p));
    for (auto& p : discriminator_parameters()) out.push_back(std::move(p));
    return out;
  }

 private:
  static std::vector<nn::NamedParam<T>> prefixed(const std::string& prefix, std::vector<nn::NamedParam<T>> ps) {
    for (auto& p : ps) p.name = prefix + "." + p.name;
    return ps;
  }
};

/// Derives the per-network seed from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

template <class T>
SpCycleGanModels<T> build_models(const TrainConfig& cfg) {
  return {nn::ResnetGenerator<T>(cfg.generator, derive_seed(cfg.seed, 1)),
          nn::ResnetGenerator<T>(cfg.generator, derive_seed(cfg.seed, 2)),
          nn::ResnetGenerator<T>(cfg.generator, derive_seed(cfg.seed, 3)),
          nn::PatchDiscriminator<T>(cfg.discriminator, derive_seed(cfg.seed, 4)),
          nn::PatchDiscriminator<T>(cfg.discriminator, derive_seed(cfg.seed, 5))};
}

namespace detail {
template <class T>
void require_finite(const nn::Var<T>& v, const char* what) {
  for (T x : v->value.data)
    if (!std::isfinite(x)) throw DivergenceError(std::string(what) + ": non-finite value");
}
}  // namespace detail

/// Adversarial loss for the generator side: the fake score map is pushed toward "real".
/// least_squares: mean (d - 1)^2. log_vanilla: BCE(sigmoid(d), 1) on raw scores.
template <class T>
nn::Var<T> gan_loss_generator(const nn::Var<T>& d_out_fake, GanMode mode) {
  detail::require_finite(d_out_fake, "gan_loss_generator");
  return mode == GanMode::least_squares ? nn::mean_squared_error_to(d_out_fake, T(1))
                                        : nn::bce_with_logits_to(d_out_fake, T(1));
}

/// Discriminator loss, averaged over the real and fake halves.
template <class T>
nn::Var<T> gan_loss_discriminator(const nn::Var<T>& d_out_real, const nn::Var<T>& d_out_fake, GanMode mode) {
  detail::require_finite(d_out_real, "gan_loss_discriminator");
  detail::require_finite(d_out_fake, "gan_loss_discriminator");
  if (mode == GanMode::least_squares)
    return nn::scale(nn::add(nn::mean_squared_error_to(d_out_real, T(1)), nn::mean_squared_error_to(d_out_fake, T(0))),
                     T(0.5));
  return nn::scale(nn::add(nn::bce_with_logits_to(d_out_real, T(1)), nn::bce_with_logits_to(d_out_fake, T(0))), T(0.5));
}

/// L1(G_BA(G_AB(a)), a) + L1(G_AB(G_BA(b)), b), each a per-element mean.
template <class T, class GAB, class GBA>
nn::Var<T> cycle_loss(const nn::Var<T>& a, const nn::Var<T>& b, const GAB& g_ab, const GBA& g_ba) {
  return nn::add(nn::mean_absolute_error(g_ba(g_ab(a)), a), nn::mean_absolute_error(g_ab(g_ba(b)), b));
}
template <class T>
nn::Var<T> cycle_loss(const nn::Var<T>& a, const nn::Var<T>& b, const SpCycleGanModels<T>& m) {
  return cycle_loss(a, b, m.g_ab, m.g_ba);
}

/// Mean squared error between H(G_AB(a)) and a.
template <class T, class GAB, class HNet>
nn::Var<T> spatial_loss(const nn::Var<T>& a, const GAB& g_ab, const HNet& h) {
  return nn::mean_squared_error(h(g_ab(a)), a);
}
template <class T>
nn::Var<T> spatial_loss(const nn::Var<T>& a, const SpCycleGanModels<T>& m) {
  return spatial_loss(a, m.g_ab, m.h);
}

/// Generator-side objective with the intermediates the discriminator step reuses.
template <class T>
struct GeneratorObjective {
  nn::Var<T> fake_a, fake_b;
  nn::Var<T> gan_ab, gan_ba, cyc, spatial, total;

  [[nodiscard]] LossBreakdown breakdown() const {
    return {static_cast<double>(nn::scalar(gan_ab)), static_cast<double>(nn::scalar(gan_ba)),
            static_cast<double>(nn::scalar(cyc)), static_cast<double>(nn::scalar(spatial)),
            static_cast<double>(nn::scalar(total))};
  }
};

/// Combines the terms as gan_ab + gan_ba + lambda1*cyc + lambda2*spatial.
template <class T>
nn::Var<T> combine_terms(const nn::Var<T>& gan_ab, const nn::Var<T>& gan_ba, const nn::Var<T>& cyc,
                         const nn::Var<T>& spatial, double lambda1, double lambda2) {
  return nn::add(nn::add(nn::add(gan_ab, gan_ba), nn::scale(cyc, static_cast<T>(lambda1))),
                 nn::scale(spatial, static_cast<T>(lambda2)));
}

template <class T>
GeneratorObjective<T> total_loss(const nn::Var<T>& a, const nn::Var<T>& b, const SpCycleGanModels<T>& m,
                                 const TrainConfig& cfg) {
  GeneratorObjective<T> o;
  o.fake_b = m.g_ab(a);
  o.fake_a = m.g_ba(b);
  o.gan_ab = gan_loss_generator(m.d_b(o.fake_b), cfg.gan_mode);
  o.gan_ba = gan_loss_generator(m.d_a(o.fake_a), cfg.gan_mode);
  o.cyc = nn::add(nn::mean_absolute_error(m.g_ba(o.fake_b), a), nn::mean_absolute_error(m.g_ab(o.fake_a), b));
  o.spatial = nn::mean_squared_error(m.h(o.fake_b), a);
  o.total = combine_terms(o.gan_ab, o.gan_ba, o.cyc, o.spatial, cfg.lambda1, cfg.lambda2);
  detail::require_finite(o.total, "total_loss");
  return o;
}

/// History buffer of generated images for discriminator updates.
class ImagePool {
 public:
  explicit ImagePool(int capacity = 50) : capacity_(capacity) {}

  /// Returns the image itself until the pool fills; afterwards, with probability 1/2,
  /// swaps it for a uniformly chosen stored image.
  nn::Tensor<float> query(const nn::Tensor<float>& batch, std::mt19937_64& rng);

  [[nodiscard]] const std::vector<nn::Tensor<float>>& images() const { return images_; }
  std::vector<nn::Tensor<float>>& images() { return images_; }
  [[nodiscard]] int capacity() const { return capacity_; }

 private:
  int capacity_;
  std::vector<nn::Tensor<float>> images_;
};

/// Converts a [0,1] image to a 1x1xHxW tensor in [-1,1], and back with clipping.
nn::Tensor<float> to_network_domain(const Image2D& img);
Image2D from_network_domain(const nn::Tensor<float>& t, int sample = 0);

struct HistoryEntry {
  int epoch = 0;
  long step = 0;
  LossBreakdown loss;
  double lr = 0;
};

/// Appends entries to an (epoch, step, gan_ab, gan_ba, cyc, spatial, total, lr) CSV,
/// writing the header when the file is new.
void append_history_csv(const std::filesystem::path& path, const std::vector<HistoryEntry>& entries);

/// Stateful training loop for one axis.
///
/// Each step does one generator update (every network except the
/// discriminators, on total_loss) followed by one discriminator update
/// (D_A and D_B on pooled fakes). Steps per epoch = max(|A|, |B|) patches
/// divided by the batch size.
class SpCycleGanTrainer {
 public:
  SpCycleGanTrainer(const SectionStack& blurred, const SectionStack& clean, const TrainConfig& cfg, SliceAxis axis);

  /// Runs the next epoch and returns its per-step history.
  std::vector<HistoryEntry> run_epoch();

  [[nodiscard]] int epochs_completed() const { return epoch_; }
  [[nodiscard]] bool finished() const { return epoch_ >= cfg_.total_epochs(); }
  [[nodiscard]] const SpCycleGanModels<float>& models() const { return models_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] SliceAxis axis() const { return axis_; }
  [[nodiscard]] long steps_per_epoch() const;

  /// Full resumable state: models, optimizer moments, pools, RNG and sampler positions.
  void save_checkpoint(const std::filesystem::path& path, const std::string& config_hash = {}) const;
  /// Restores state written by save_checkpoint; the stacks must be the ones it was trained on.
  void load_checkpoint(const std::filesystem::path& path);

 private:
  LossBreakdown step(const std::vector<Patch>& a, const std::vector<Patch>& b, double lr);

  TrainConfig cfg_;
  SliceAxis axis_;
  const SectionStack* blurred_;
  const SectionStack* clean_;
  SpCycleGanModels<float> models_;
  nn::Adam<float> opt_g_, opt_h_, opt_d_;
  ImagePool pool_a_, pool_b_;
  std::mt19937_64 rng_;
  PatchSampler sampler_a_, sampler_b_;
  int epoch_ = 0;
  long global_step_ = 0;
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;         // empty: no files written
  std::string checkpoint_stem = "checkpoint";   // files <stem>_eNNNN.ckpt and <stem>.ckpt
  std::filesystem::path history_csv;            // empty: not written
  std::optional<std::filesystem::path> resume_from;
  int stop_after_epoch = -1;                    // stop early once this epoch completes
  std::string config_hash;
  std::function<void(const HistoryEntry&)> on_step;
};

struct TrainResult {
  SpCycleGanModels<float> models;
  std::vector<HistoryEntry> history;
  int epochs_completed = 0;
  std::filesystem::path final_checkpoint;
};

/// Trains one axis end to end. On divergence the last written checkpoint is left in
/// place and a DivergenceError naming it is thrown.
TrainResult train(const SectionStack& blurred, const SectionStack& clean, const TrainConfig& cfg, SliceAxis axis,
                  const TrainOptions& options = {});

}  // namespace tridecon
