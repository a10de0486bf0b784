#include "tridecon/spcyclegan.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "checkpoint_format.hpp"

namespace tridecon {

std::string_view to_string(GanMode m) { return m == GanMode::least_squares ? "least_squares" : "log_vanilla"; }

GanMode parse_gan_mode(std::string_view s) {
  if (s == "least_squares" || s == "lsgan") return GanMode::least_squares;
  if (s == "log_vanilla" || s == "vanilla") return GanMode::log_vanilla;
  throw std::invalid_argument(fmt::format("unknown gan_mode '{}'", s));
}

std::string_view to_string(HSchedule s) { return s == HSchedule::joint ? "joint" : "alternating"; }

HSchedule parse_h_schedule(std::string_view s) {
  if (s == "joint") return HSchedule::joint;
  if (s == "alternating") return HSchedule::alternating;
  throw std::invalid_argument(fmt::format("unknown h_schedule '{}'", s));
}

void TrainConfig::validate() const {
  if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw std::invalid_argument("lambda1 and lambda2 must be >= 0");
  if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
  if (epochs_const < 0 || epochs_decay < 0 || total_epochs() < 1) throw std::invalid_argument("epochs must total >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (pool_size < 0) throw std::invalid_argument("pool_size must be >= 0");
  if (patches_per_section < 1) throw std::invalid_argument("patches_per_section must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("Adam betas must be in [0,1)");
  const int m = 1 << generator.n_downsampling;
  for (int p : {patch_xy, patch_xz, patch_yz}) {
    if (p < 1) throw std::invalid_argument("patch sizes must be positive");
    if (p % m != 0)
      throw std::invalid_argument(fmt::format("patch size {} is not a multiple of {} required by the generator", p, m));
  }
  if (generator.ngf < 1 || generator.n_blocks < 0 || generator.n_downsampling < 0)
    throw std::invalid_argument("invalid generator architecture");
  if (discriminator.ndf < 1 || discriminator.n_layers < 1 || discriminator.kernel < 2)
    throw std::invalid_argument("invalid discriminator architecture");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
}

int TrainConfig::patch_size(SliceAxis axis) const {
  switch (axis) {
    case SliceAxis::XY: return patch_xy;
    case SliceAxis::XZ: return patch_xz;
    case SliceAxis::YZ: return patch_yz;
  }
  return patch_xy;
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (epoch <= cfg.epochs_const) return cfg.lr;
  if (cfg.epochs_decay == 0) return 0.0;
  const double remaining = static_cast<double>(cfg.epochs_const + cfg.epochs_decay - epoch);
  return cfg.lr * std::max(0.0, remaining) / static_cast<double>(cfg.epochs_decay);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

nn::Tensor<float> ImagePool::query(const nn::Tensor<float>& batch, std::mt19937_64& rng) {
  if (capacity_ == 0) return batch;
  nn::Tensor<float> out = batch;
  const std::size_t per = static_cast<std::size_t>(batch.c) * batch.plane();
  for (int n = 0; n < batch.n; ++n) {
    nn::Tensor<float> img(1, batch.c, batch.h, batch.w);
    std::copy(batch.sample(n), batch.sample(n) + per, img.data.begin());
    if (static_cast<int>(images_.size()) < capacity_) {
      images_.push_back(img);
      continue;
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) > 0.5) {
      std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
      const std::size_t k = pick(rng);
      std::copy(images_[k].data.begin(), images_[k].data.end(), out.sample(n));
      images_[k] = std::move(img);
    }
  }
  return out;
}

nn::Tensor<float> to_network_domain(const Image2D& img) {
  nn::Tensor<float> t(1, 1, img.height(), img.width());
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) t.data[i] = 2.0f * px[i] - 1.0f;
  return t;
}

Image2D from_network_domain(const nn::Tensor<float>& t, int sample) {
  Image2D img(t.w, t.h);
  const float* src = t.channel(sample, 0);
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::clamp((src[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
  return img;
}

void append_history_csv(const std::filesystem::path& path, const std::vector<HistoryEntry>& entries) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  if (fresh) out << "epoch,step,gan_ab,gan_ba,cyc,spatial,total,lr\n";
  for (const auto& e : entries)
    out << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", e.epoch, e.step, e.loss.gan_ab,
                       e.loss.gan_ba, e.loss.cyc, e.loss.spatial, e.loss.total, e.lr);
}

namespace {

PatchSpec patch_spec(const TrainConfig& cfg, SliceAxis axis, std::uint64_t stream) {
  const int p = cfg.patch_size(axis);
  return {p, p, cfg.patches_per_section, derive_seed(cfg.seed, stream)};
}

nn::Tensor<float> batch_tensor(const std::vector<Patch>& patches) {
  const auto& first = patches.front().pixels;
  nn::Tensor<float> t(static_cast<int>(patches.size()), 1, first.height(), first.width());
  for (int n = 0; n < t.n; ++n) {
    const auto px = patches[n].pixels.pixels();
    float* dst = t.sample(n);
    for (std::size_t i = 0; i < px.size(); ++i) dst[i] = 2.0f * px[i] - 1.0f;
  }
  return t;
}

std::vector<Patch> take(PatchSampler& s, int n) {
  std::vector<Patch> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(s.next());
  return out;
}

}  // namespace

SpCycleGanTrainer::SpCycleGanTrainer(const SectionStack& blurred, const SectionStack& clean, const TrainConfig& cfg,
                                     SliceAxis axis)
    : cfg_(cfg),
      axis_(axis),
      blurred_(&blurred),
      clean_(&clean),
      models_((cfg.validate(), build_models<float>(cfg))),
      pool_a_(cfg.pool_size),
      pool_b_(cfg.pool_size),
      rng_(derive_seed(cfg.seed, 12)),
      sampler_a_(blurred, patch_spec(cfg, axis, 10)),
      sampler_b_(clean, patch_spec(cfg, axis, 11)) {
  if (blurred.axis != axis || clean.axis != axis)
    throw std::invalid_argument(fmt::format("training stacks must both be {} sections", to_string(axis)));
  opt_g_ = nn::Adam<float>(models_.generator_parameters(), cfg.beta1, cfg.beta2);
  opt_h_ = nn::Adam<float>(models_.h_parameters(), cfg.beta1, cfg.beta2);
  opt_d_ = nn::Adam<float>(models_.discriminator_parameters(), cfg.beta1, cfg.beta2);
}

long SpCycleGanTrainer::steps_per_epoch() const {
  const std::size_t n = std::max(sampler_a_.patches_per_epoch(), sampler_b_.patches_per_epoch());
  return static_cast<long>((n + cfg_.batch_size - 1) / cfg_.batch_size);
}

LossBreakdown SpCycleGanTrainer::step(const std::vector<Patch>& pa, const std::vector<Patch>& pb, double lr) {
  const auto a = nn::constant(batch_tensor(pa));
  const auto b = nn::constant(batch_tensor(pb));
  const auto d_params = models_.discriminator_parameters();
  const auto h_params = models_.h_parameters();
  const bool alternating = cfg_.h_schedule == HSchedule::alternating;

  // Generator update; discriminators are frozen so only G_AB, G_BA (and H when joint) accumulate.
  nn::set_requires_grad(d_params, false);
  if (alternating) nn::set_requires_grad(h_params, false);
  opt_g_.zero_grad();
  opt_h_.zero_grad();
  const auto obj = total_loss(a, b, models_, cfg_);
  const LossBreakdown loss = obj.breakdown();
  nn::backward(obj.total);
  opt_g_.step(lr);
  nn::set_requires_grad(d_params, true);
  if (alternating) {
    nn::set_requires_grad(h_params, true);
    opt_h_.zero_grad();
    auto h_loss = nn::scale(nn::mean_squared_error(models_.h(nn::detach(obj.fake_b)), a), static_cast<float>(cfg_.lambda2));
    detail::require_finite(h_loss, "spatial step");
    nn::backward(h_loss);
  }
  opt_h_.step(lr);

  // Discriminator update on pooled fakes.
  const auto fake_a = nn::constant(pool_a_.query(obj.fake_a->value, rng_));
  const auto fake_b = nn::constant(pool_b_.query(obj.fake_b->value, rng_));
  opt_d_.zero_grad();
  const auto loss_d = nn::add(gan_loss_discriminator(models_.d_a(a), models_.d_a(fake_a), cfg_.gan_mode),
                              gan_loss_discriminator(models_.d_b(b), models_.d_b(fake_b), cfg_.gan_mode));
  detail::require_finite(loss_d, "discriminator loss");
  nn::backward(loss_d);
  opt_d_.step(lr);
  return loss;
}

std::vector<HistoryEntry> SpCycleGanTrainer::run_epoch() {
  if (finished()) throw std::logic_error("training already finished");
  const int epoch = epoch_ + 1;
  const double lr = learning_rate(cfg_, epoch);
  const long steps = steps_per_epoch();
  std::vector<HistoryEntry> history;
  history.reserve(steps);
  for (long s = 0; s < steps; ++s) {
    const auto pa = take(sampler_a_, cfg_.batch_size);
    const auto pb = take(sampler_b_, cfg_.batch_size);
    const LossBreakdown loss = step(pa, pb, lr);
    history.push_back({epoch, ++global_step_, loss, lr});
  }
  epoch_ = epoch;
  return history;
}

void SpCycleGanTrainer::save_checkpoint(const std::filesystem::path& path, const std::string& config_hash) const {
  ckpt::Blob blob;
  ckpt::add_params(blob, models_.all_parameters());
  auto add_moments = [&](const char* prefix, const nn::Adam<float>& opt) {
    for (std::size_t k = 0; k < opt.params().size(); ++k) {
      const auto& m = opt.first_moments()[k];
      const auto& v = opt.second_moments()[k];
      blob.add(fmt::format("{}.m.{}", prefix, opt.params()[k].name), {static_cast<int>(m.size())}, m.data(), m.size());
      blob.add(fmt::format("{}.v.{}", prefix, opt.params()[k].name), {static_cast<int>(v.size())}, v.data(), v.size());
    }
  };
  add_moments("opt_g", opt_g_);
  add_moments("opt_h", opt_h_);
  add_moments("opt_d", opt_d_);
  for (std::size_t i = 0; i < pool_a_.images().size(); ++i) blob.add(fmt::format("pool_a.{}", i), pool_a_.images()[i]);
  for (std::size_t i = 0; i < pool_b_.images().size(); ++i) blob.add(fmt::format("pool_b.{}", i), pool_b_.images()[i]);

  auto header = ckpt::model_header(axis_, cfg_, epoch_, config_hash, ckpt::dtype_name<float>());
  std::ostringstream rng;
  rng << rng_;
  header["state"] = {{"epoch", epoch_},
                     {"global_step", global_step_},
                     {"opt_g_steps", opt_g_.steps()},
                     {"opt_h_steps", opt_h_.steps()},
                     {"opt_d_steps", opt_d_.steps()},
                     {"rng", rng.str()},
                     {"sampler_a", sampler_a_.state()},
                     {"sampler_b", sampler_b_.state()},
                     {"pool_a", pool_a_.images().size()},
                     {"pool_b", pool_b_.images().size()}};
  ckpt::write_file(path, header, blob);
}

void SpCycleGanTrainer::load_checkpoint(const std::filesystem::path& path) {
  const ckpt::File f = ckpt::read_file(path);
  const CheckpointInfo info = ckpt::info_from_header(f.header);
  if (info.kind != CheckpointKind::spcyclegan || !info.has_training_state)
    throw CheckpointError(path.string() + " has no trainer state to resume from");
  if (info.axis != axis_)
    throw CheckpointError(fmt::format("checkpoint is tagged {}, trainer is {}", to_string(info.axis), to_string(axis_)));
  if (!(info.generator == cfg_.generator) || !(info.discriminator == cfg_.discriminator))
    throw CheckpointError("checkpoint architecture differs from the training config");
  ckpt::read_params(f, models_.all_parameters());
  auto read_moments = [&](const char* prefix, nn::Adam<float>& opt, long steps) {
    for (std::size_t k = 0; k < opt.params().size(); ++k) {
      auto& m = opt.first_moments()[k];
      auto& v = opt.second_moments()[k];
      f.read(fmt::format("{}.m.{}", prefix, opt.params()[k].name), m.data(), m.size());
      f.read(fmt::format("{}.v.{}", prefix, opt.params()[k].name), v.data(), v.size());
    }
    opt.set_steps(steps);
  };
  try {
    const auto& st = f.header.at("state");
    read_moments("opt_g", opt_g_, st.at("opt_g_steps").get<long>());
    read_moments("opt_h", opt_h_, st.at("opt_h_steps").get<long>());
    read_moments("opt_d", opt_d_, st.at("opt_d_steps").get<long>());
    pool_a_.images().clear();
    pool_b_.images().clear();
    for (std::size_t i = 0; i < st.at("pool_a").get<std::size_t>(); ++i)
      pool_a_.images().push_back(f.tensor<float>(fmt::format("pool_a.{}", i)));
    for (std::size_t i = 0; i < st.at("pool_b").get<std::size_t>(); ++i)
      pool_b_.images().push_back(f.tensor<float>(fmt::format("pool_b.{}", i)));
    std::istringstream rng(st.at("rng").get<std::string>());
    rng >> rng_;
    sampler_a_.restore(st.at("sampler_a").get<std::string>());
    sampler_b_.restore(st.at("sampler_b").get<std::string>());
    epoch_ = st.at("epoch").get<int>();
    global_step_ = st.at("global_step").get<long>();
  } catch (const ckpt::json::exception& e) {
    throw CheckpointError(std::string("malformed trainer state: ") + e.what());
  }
}

TrainResult train(const SectionStack& blurred, const SectionStack& clean, const TrainConfig& cfg, SliceAxis axis,
                  const TrainOptions& options) {
  SpCycleGanTrainer trainer(blurred, clean, cfg, axis);
  if (options.resume_from) trainer.load_checkpoint(*options.resume_from);
  const bool write = !options.checkpoint_dir.empty();
  if (write) std::filesystem::create_directories(options.checkpoint_dir);

  TrainResult result;
  std::filesystem::path last_good;
  while (!trainer.finished() && (options.stop_after_epoch < 0 || trainer.epochs_completed() < options.stop_after_epoch)) {
    std::vector<HistoryEntry> h;
    try {
      h = trainer.run_epoch();
    } catch (const DivergenceError& e) {
      throw DivergenceError(fmt::format("{} training diverged in epoch {}: {}; last good checkpoint: {}",
                                        to_string(axis), trainer.epochs_completed() + 1, e.what(),
                                        last_good.empty() ? "none" : last_good.string()));
    }
    if (options.on_step)
      for (const auto& e : h) options.on_step(e);
    if (!options.history_csv.empty()) append_history_csv(options.history_csv, h);
    const auto& last = h.back();
    spdlog::info("train axis={} epoch={} lr={:.6g} total={:.5f} cyc={:.5f} spatial={:.5f}", to_string(axis),
                 last.epoch, last.lr, last.loss.total, last.loss.cyc, last.loss.spatial);
    result.history.insert(result.history.end(), h.begin(), h.end());
    const int e = trainer.epochs_completed();
    if (write && cfg.checkpoint_every > 0 && e % cfg.checkpoint_every == 0) {
      last_good = options.checkpoint_dir / fmt::format("{}_e{:04d}.ckpt", options.checkpoint_stem, e);
      trainer.save_checkpoint(last_good, options.config_hash);
    }
  }
  if (write) {
    result.final_checkpoint = options.checkpoint_dir / (options.checkpoint_stem + ".ckpt");
    trainer.save_checkpoint(result.final_checkpoint, options.config_hash);
  }
  result.models = trainer.models();
  result.epochs_completed = trainer.epochs_completed();
  return result;
}

}  // namespace tridecon
