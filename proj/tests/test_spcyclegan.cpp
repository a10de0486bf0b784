#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "tridecon/checkpoint.hpp"
#include "tridecon/spcyclegan.hpp"

using namespace tridecon;
using namespace tridecon::nn;
using tridecon::test::TempDir;

namespace {

template <class T>
Var<T> filled(int n, int h, int w, T v) {
  return constant(Tensor<T>(n, 1, h, w, v));
}

template <class T>
std::vector<T> flatten(const std::vector<NamedParam<T>>& ps) {
  std::vector<T> out;
  for (const auto& p : ps) out.insert(out.end(), p.var->value.data.begin(), p.var->value.data.end());
  return out;
}

SectionStack noise_stack(int count, int size, std::uint64_t seed, float lo, float hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  SectionStack s;
  for (int k = 0; k < count; ++k) {
    Image2D img(size, size);
    for (float& p : img.pixels()) p = d(rng);
    s.sections.push_back(std::move(img));
  }
  return s;
}

TrainConfig smoke_config() {
  TrainConfig c;
  c.generator = {4, 1, 2};
  c.discriminator = {4, 2, 4};
  c.epochs_const = 1;
  c.epochs_decay = 1;
  c.patch_xy = c.patch_xz = c.patch_yz = 32;
  c.pool_size = 3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("default hyperparameters") {
  const TrainConfig c;
  CHECK(c.lambda1 == 10.0);
  CHECK(c.lambda2 == 10.0);
  CHECK(c.lr == 0.0002);
  CHECK(c.beta1 == 0.5);
  CHECK(c.beta2 == 0.999);
  CHECK(c.epochs_const == 100);
  CHECK(c.epochs_decay == 100);
  CHECK(c.batch_size == 1);
  CHECK(c.pool_size == 50);
  CHECK(c.patch_size(SliceAxis::XY) == 256);
  CHECK(c.patch_size(SliceAxis::XZ) == 200);
  CHECK(c.patch_size(SliceAxis::YZ) == 200);
  CHECK(c.generator.n_blocks == 9);
  CHECK(c.generator.ngf == 64);
  CHECK(c.gan_mode == GanMode::least_squares);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config validation") {
  auto bad = [](auto&& edit) {
    TrainConfig c;
    edit(c);
    return c;
  };
  CHECK_THROWS(bad([](TrainConfig& c) { c.lambda1 = -1; }).validate());
  CHECK_THROWS(bad([](TrainConfig& c) { c.lambda2 = -0.5; }).validate());
  CHECK_THROWS(bad([](TrainConfig& c) { c.lr = 0; }).validate());
  CHECK_THROWS(bad([](TrainConfig& c) { c.epochs_const = 0, c.epochs_decay = 0; }).validate());
  CHECK_THROWS(bad([](TrainConfig& c) { c.patch_xy = 254; }).validate());
  CHECK_THROWS(bad([](TrainConfig& c) { c.batch_size = 0; }).validate());
  CHECK_NOTHROW(bad([](TrainConfig& c) { c.lambda1 = 0, c.lambda2 = 0; }).validate());
  CHECK(parse_gan_mode("log_vanilla") == GanMode::log_vanilla);
  CHECK(parse_gan_mode("lsgan") == GanMode::least_squares);
  CHECK(parse_h_schedule("alternating") == HSchedule::alternating);
  CHECK_THROWS(parse_gan_mode("wgan"));
}

TEST_CASE("learning-rate schedule") {
  const TrainConfig c;
  CHECK(learning_rate(c, 1) == 0.0002);
  CHECK(learning_rate(c, 100) == 0.0002);
  CHECK(learning_rate(c, 150) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(learning_rate(c, 200) == 0.0);
  for (int e = 101; e <= 200; ++e) CHECK(learning_rate(c, e) == doctest::Approx(0.0002 * (200 - e) / 100.0));
}

TEST_CASE("generator adversarial loss") {
  CHECK(scalar(gan_loss_generator(filled(1, 3, 3, 1.0), GanMode::least_squares)) == 0.0);
  CHECK(scalar(gan_loss_generator(filled(1, 3, 3, 0.0), GanMode::least_squares)) == 1.0);
  // A zero logit is probability 1/2, so BCE against "real" is log 2.
  CHECK(scalar(gan_loss_generator(filled(1, 3, 3, 0.0), GanMode::log_vanilla)) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(gan_loss_generator(filled(1, 2, 2, std::nan("")), GanMode::least_squares), DivergenceError);
}

TEST_CASE("discriminator adversarial loss") {
  // Both maps at probability 1/2: (log 2 + log 2) / 2.
  CHECK(scalar(gan_loss_discriminator(filled(1, 3, 3, 0.0), filled(1, 3, 3, 0.0), GanMode::log_vanilla)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(scalar(gan_loss_discriminator(filled(1, 3, 3, 1.0), filled(1, 3, 3, 0.0), GanMode::least_squares)) == 0.0);
  CHECK(scalar(gan_loss_discriminator(filled(1, 2, 2, 0.0), filled(1, 2, 2, 1.0), GanMode::least_squares)) == 1.0);
  // Confident, correct logits drive the log loss toward zero.
  CHECK(scalar(gan_loss_discriminator(filled(1, 2, 2, 40.0), filled(1, 2, 2, -40.0), GanMode::log_vanilla)) < 1e-15);
  CHECK_THROWS_AS(gan_loss_discriminator(filled(1, 2, 2, 0.0), filled(1, 2, 2, HUGE_VAL), GanMode::log_vanilla),
                  DivergenceError);
}

TEST_CASE("cycle and spatial terms on hand-built maps") {
  const auto identity = [](const Var<double>& x) { return x; };
  const auto shift = [](double c) { return [c](const Var<double>& x) { return add_constant(x, c); }; };
  std::mt19937_64 rng(1);
  const auto a = test::random_input<double>(2, 4, 4, rng);
  const auto b = test::random_input<double>(2, 4, 4, rng);
  CHECK(scalar(cycle_loss(a, b, identity, identity)) == 0.0);
  // G_AB adds 0.1 and G_BA is the identity, so both reconstructions are off by 0.1.
  CHECK(scalar(cycle_loss(a, b, shift(0.1), identity)) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(scalar(cycle_loss(a, b, shift(0.1), shift(-0.1))) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(scalar(spatial_loss(a, identity, identity)) == 0.0);
  CHECK(scalar(spatial_loss(a, shift(0.2), identity)) == doctest::Approx(0.04).epsilon(1e-12));
  CHECK_THROWS(mean_absolute_error(a, test::random_input<double>(1, 4, 4, rng)));
}

TEST_CASE("cycle and spatial terms against a scalar oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const double wa = d(rng), ca = d(rng), wb = d(rng), cb = d(rng), wh = d(rng), ch = d(rng);
    const auto g_ab = [=](const Var<double>& x) { return nn::tanh(add_constant(scale(x, wa), ca)); };
    const auto g_ba = [=](const Var<double>& x) { return nn::tanh(add_constant(scale(x, wb), cb)); };
    const auto h = [=](const Var<double>& x) { return nn::tanh(add_constant(scale(x, wh), ch)); };
    const auto a = test::random_input<double>(1, 2, 2, rng);
    const auto b = test::random_input<double>(1, 2, 2, rng);
    double l1a = 0, l1b = 0, l2 = 0;
    for (int i = 0; i < 4; ++i) {
      const double x = a->value.data[i], y = b->value.data[i];
      const double fb = std::tanh(wa * x + ca), ra = std::tanh(wb * fb + cb);
      const double fa = std::tanh(wb * y + cb), rb = std::tanh(wa * fa + ca);
      l1a += std::abs(ra - x);
      l1b += std::abs(rb - y);
      l2 += (std::tanh(wh * fb + ch) - x) * (std::tanh(wh * fb + ch) - x);
    }
    CHECK(scalar(cycle_loss(a, b, g_ab, g_ba)) == doctest::Approx(l1a / 4 + l1b / 4).epsilon(1e-12));
    CHECK(scalar(spatial_loss(a, g_ab, h)) == doctest::Approx(l2 / 4).epsilon(1e-12));
  }
}

TEST_CASE("objective combination") {
  auto s = [](double v) { return constant(Tensor<double>(1, 1, 1, 1, v)); };
  CHECK(scalar(combine_terms(s(0.5), s(0.5), s(0.3), s(0.02), 10, 10)) == doctest::Approx(4.2).epsilon(1e-14));
  CHECK(scalar(combine_terms(s(0.7), s(0.4), s(0.3), s(0.02), 0, 0)) == 0.7 + 0.4);
}

TEST_CASE("total objective decomposes into its terms") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    TrainConfig cfg = test::toy_config(trial);
    cfg.lambda1 = 3.5 * trial;
    cfg.lambda2 = 20.0 - trial;
    const auto m = build_models<double>(cfg);
    const auto a = test::random_input<double>(1, 8, 8, rng);
    const auto b = test::random_input<double>(1, 8, 8, rng);
    const LossBreakdown l = total_loss(a, b, m, cfg).breakdown();
    CHECK(l.total == doctest::Approx(l.gan_ab + l.gan_ba + cfg.lambda1 * l.cyc + cfg.lambda2 * l.spatial).epsilon(1e-14));
    CHECK(l.cyc == doctest::Approx(scalar(cycle_loss(a, b, m))).epsilon(1e-14));
    CHECK(l.spatial == doctest::Approx(scalar(spatial_loss(a, m))).epsilon(1e-14));
  }
}

TEST_CASE("model construction") {
  const TrainConfig c = test::toy_config(9);
  const auto m1 = build_models<float>(c), m2 = build_models<float>(c);
  CHECK(flatten(m1.all_parameters()) == flatten(m2.all_parameters()));
  TrainConfig other = c;
  other.seed = 10;
  CHECK(flatten(build_models<float>(other).all_parameters()) != flatten(m1.all_parameters()));
  CHECK(flatten(m1.g_ab.parameters()) != flatten(m1.g_ba.parameters()));
  CHECK(parameter_count(m1.g_ab.parameters()) == parameter_count(m1.h.parameters()));

  // Weights start N(0, 0.02), biases zero.
  ResnetGenerator<double> g({32, 9, 2}, 4);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& p : g.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (double v : p.var->value.data) REQUIRE(v == 0.0);
      continue;
    }
    for (double v : p.var->value.data) sum += v, sq += v * v, ++n;
  }
  CHECK(std::abs(sum / n) < 1e-3);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.02));
}

TEST_CASE("full-width generator keeps 256 and 200 pixel sections") {
  // The default 9-block, 64-channel layout; channels trimmed only to keep the run short.
  const ResnetGenerator<float> g({8, 9, 2}, 1);
  NoGradGuard guard;
  for (const auto& [h, w] : {std::pair{256, 256}, {200, 200}}) {
    const auto y = g(constant(Tensor<float>(1, 1, h, w, 0.1f)));
    CHECK(y->value.h == h);
    CHECK(y->value.w == w);
  }
}

TEST_CASE("generator preserves every multiple-of-4 size") {
  const ResnetGenerator<float> g({2, 1, 2}, 3);
  NoGradGuard guard;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> side(1, 64);
  for (int w = 4; w <= 256; w += 4) {
    const int h = 4 * side(rng);
    const auto y = g(test::random_input<float>(1, h, w, rng));
    REQUIRE(y->value.h == h);
    REQUIRE(y->value.w == w);
    for (float v : y->value.data) REQUIRE(std::abs(v) <= 1.0f);
  }
}

TEST_CASE("discriminator emits a score grid") {
  const PatchDiscriminator<float> d({8, 3, 4}, 1);
  NoGradGuard guard;
  const auto y = d(constant(Tensor<float>(1, 1, 64, 64, 0.0f)));
  CHECK(y->value.c == 1);
  CHECK(y->value.h == 6);
  CHECK(y->value.w == 6);
}

TEST_CASE("gradients of all four terms match central differences") {
  const TrainConfig cfg = test::toy_config(21);
  const auto m = build_models<double>(cfg);
  std::mt19937_64 rng(22);
  const auto a = test::random_input<double>(1, 4, 4, rng);
  const auto b = test::random_input<double>(1, 4, 4, rng);
  const auto gens = m.generator_parameters();
  const auto hs = m.h_parameters();
  auto all_g = gens;
  all_g.insert(all_g.end(), hs.begin(), hs.end());

  const auto gan_ab = test::check_gradient([&] { return gan_loss_generator(m.d_b(m.g_ab(a)), cfg.gan_mode); }, gens);
  const auto gan_ba = test::check_gradient(
      [&] { return gan_loss_generator(m.d_a(m.g_ba(b)), GanMode::log_vanilla); }, gens);
  const auto cyc = test::check_gradient([&] { return cycle_loss(a, b, m); }, gens);
  const auto spatial = test::check_gradient([&] { return spatial_loss(a, m); }, all_g);
  const auto disc = test::check_gradient(
      [&] { return gan_loss_discriminator(m.d_b(b), m.d_b(detach(m.g_ab(a))), cfg.gan_mode); },
      m.discriminator_parameters());
  for (const auto* r : {&gan_ab, &gan_ba, &cyc, &spatial, &disc}) {
    CHECK(r->grad_norm > 0);
    CHECK(r->rel_error < 1e-4);
  }
}

TEST_CASE("H is reached only through the spatial term") {
  const TrainConfig cfg = test::toy_config(31);
  const auto m = build_models<double>(cfg);
  std::mt19937_64 rng(32);
  const auto a = test::random_input<double>(1, 8, 8, rng);
  const auto b = test::random_input<double>(1, 8, 8, rng);
  const auto o = total_loss(a, b, m, cfg);
  auto without_spatial = combine_terms(o.gan_ab, o.gan_ba, o.cyc, o.spatial, cfg.lambda1, 0.0);
  zero_grad(m.all_parameters());
  backward(without_spatial);
  for (const auto& p : m.h_parameters())
    for (std::size_t i = 0; i < p.var->grad.size(); ++i) REQUIRE(p.var->grad.data[i] == 0.0);
}

TEST_CASE("generator and discriminator steps touch disjoint parameters") {
  TrainConfig cfg = test::toy_config(41);
  auto m = build_models<float>(cfg);
  Adam<float> opt_g(m.generator_parameters(), 0.5, 0.999), opt_d(m.discriminator_parameters(), 0.5, 0.999);
  std::mt19937_64 rng(42);
  const auto a = test::random_input<float>(1, 8, 8, rng);
  const auto b = test::random_input<float>(1, 8, 8, rng);

  const auto d_before = flatten(m.discriminator_parameters());
  set_requires_grad(m.discriminator_parameters(), false);
  const auto o = total_loss(a, b, m, cfg);
  opt_g.zero_grad();
  backward(o.total);
  opt_g.step(2e-4);
  set_requires_grad(m.discriminator_parameters(), true);
  CHECK(flatten(m.discriminator_parameters()) == d_before);

  const auto g_before = flatten(m.generator_parameters());
  opt_d.zero_grad();
  backward(gan_loss_discriminator(m.d_b(b), m.d_b(detach(o.fake_b)), cfg.gan_mode));
  opt_d.step(2e-4);
  CHECK(flatten(m.generator_parameters()) == g_before);
  CHECK(flatten(m.discriminator_parameters()) != d_before);
}

TEST_CASE("Adam matches a scalar reference") {
  auto w = parameter(Tensor<double>(1, 1, 1, 2, 0.0));
  w->value.data = {1.0, -2.0};
  Adam<double> opt({{"w", w}}, 0.5, 0.999);
  double m0 = 0, v0 = 0, x0 = 1.0, x1 = -2.0, m1 = 0, v1 = 0;
  for (int t = 1; t <= 5; ++t) {
    opt.zero_grad();
    // gradient of x0^2 + 3 x1
    w->grad_buffer().data = {2 * w->value.data[0], 3.0};
    opt.step(0.1);
    const double g0 = 2 * x0, g1 = 3.0;
    m0 = 0.5 * m0 + 0.5 * g0, v0 = 0.999 * v0 + 0.001 * g0 * g0;
    m1 = 0.5 * m1 + 0.5 * g1, v1 = 0.999 * v1 + 0.001 * g1 * g1;
    const double c1 = 1 - std::pow(0.5, t), c2 = 1 - std::pow(0.999, t);
    x0 -= 0.1 / c1 * m0 / (std::sqrt(v0 / c2) + 1e-8);
    x1 -= 0.1 / c1 * m1 / (std::sqrt(v1 / c2) + 1e-8);
    CHECK(w->value.data[0] == doctest::Approx(x0).epsilon(1e-12));
    CHECK(w->value.data[1] == doctest::Approx(x1).epsilon(1e-12));
  }
  CHECK(opt.steps() == 5);
}

TEST_CASE("image pool") {
  std::mt19937_64 rng(7);
  ImagePool pool(3);
  auto img = [](float v) { return Tensor<float>(1, 1, 2, 2, v); };
  for (int k = 0; k < 3; ++k) CHECK(pool.query(img(static_cast<float>(k)), rng).data[0] == static_cast<float>(k));
  int swapped = 0;
  for (int k = 0; k < 400; ++k) {
    const float v = 100.0f + k;
    if (pool.query(img(v), rng).data[0] != v) ++swapped;
  }
  CHECK(swapped > 150);
  CHECK(swapped < 250);
  CHECK(pool.images().size() == 3);
  ImagePool none(0);
  CHECK(none.query(img(5), rng).data[0] == 5.0f);
  CHECK(none.images().empty());
}

TEST_CASE("network domain mapping") {
  Image2D img(2, 1);
  img(0, 0) = 0.0f;
  img(1, 0) = 1.0f;
  const auto t = to_network_domain(img);
  CHECK(t.data[0] == -1.0f);
  CHECK(t.data[1] == 1.0f);
  Tensor<float> u(1, 1, 1, 3);
  u.data = {-2.0f, 0.0f, 3.0f};
  const Image2D back = from_network_domain(u);
  CHECK(back(0, 0) == 0.0f);
  CHECK(back(1, 0) == 0.5f);
  CHECK(back(2, 0) == 1.0f);
}

TEST_CASE("seed streams differ") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::uint64_t k = 0; k < 16; ++k) seen.insert(derive_seed(s, k));
  CHECK(seen.size() == 64);
  CHECK(derive_seed(3, 1) == derive_seed(3, 1));
}

TEST_CASE("history CSV") {
  TempDir tmp;
  const auto p = tmp / "h.csv";
  append_history_csv(p, {{1, 1, {0.5, 0.25, 0.125, 0.0625, 2.0}, 0.0002}});
  append_history_csv(p, {{2, 2, {1, 2, 3, 4, 5}, 0.0001}});
  std::ifstream in(p);
  std::string header, r1, r2, extra;
  std::getline(in, header);
  std::getline(in, r1);
  std::getline(in, r2);
  CHECK(header == "epoch,step,gan_ab,gan_ba,cyc,spatial,total,lr");
  CHECK(r1.rfind("1,1,0.5,0.25,0.125,0.0625,2,", 0) == 0);
  CHECK(r2.rfind("2,2,1,2,3,4,5,", 0) == 0);
  CHECK(!std::getline(in, extra));
}

TEST_CASE("two-epoch smoke run") {
  TempDir tmp;
  const SectionStack a = noise_stack(8, 64, 1, 0.0f, 0.6f);
  const SectionStack b = noise_stack(8, 64, 2, 0.3f, 1.0f);
  const TrainConfig cfg = smoke_config();

  TrainOptions opts;
  opts.checkpoint_dir = tmp.path();
  opts.checkpoint_stem = "xy";
  opts.history_csv = tmp / "history.csv";
  const TrainResult r = train(a, b, cfg, SliceAxis::XY, opts);
  CHECK(r.epochs_completed == 2);
  CHECK(r.history.size() == 16);
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    CHECK(r.history[i].epoch == static_cast<int>(i / 8) + 1);
    CHECK(r.history[i].step == static_cast<long>(i) + 1);
    CHECK(std::isfinite(r.history[i].loss.total));
  }
  CHECK(r.history.front().lr == cfg.lr);
  CHECK(r.history.back().lr == 0.0);
  CHECK(r.final_checkpoint == tmp / "xy.ckpt");

  std::ifstream csv(opts.history_csv);
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  CHECK(lines == 17);

  // The saved generator reproduces held-out inference bit for bit.
  const ResnetGenerator<float> g = load_generator_ab<float>(r.final_checkpoint);
  const SectionStack held_out = noise_stack(3, 32, 99, 0.0f, 1.0f);
  NoGradGuard guard;
  for (const Image2D& img : held_out.sections) {
    const auto x = constant(to_network_domain(img));
    REQUIRE(g(x)->value.data == r.models.g_ab(x)->value.data);
  }
  // Training changed the generator.
  CHECK(flatten(r.models.g_ab.parameters()) != flatten(build_models<float>(cfg).g_ab.parameters()));
}

TEST_CASE("training is deterministic and resumes exactly") {
  TempDir tmp;
  const SectionStack a = noise_stack(4, 32, 3, 0.0f, 0.6f);
  const SectionStack b = noise_stack(5, 32, 4, 0.3f, 1.0f);
  TrainConfig cfg = smoke_config();
  cfg.epochs_const = 1;
  cfg.epochs_decay = 2;
  cfg.h_schedule = HSchedule::alternating;

  SpCycleGanTrainer straight(a, b, cfg, SliceAxis::XY);
  CHECK(straight.steps_per_epoch() == 5);
  std::vector<HistoryEntry> full;
  while (!straight.finished())
    for (const auto& e : straight.run_epoch()) full.push_back(e);

  SpCycleGanTrainer first(a, b, cfg, SliceAxis::XY);
  std::vector<HistoryEntry> parts = first.run_epoch();
  first.save_checkpoint(tmp / "e1.ckpt");
  CHECK(read_checkpoint_info(tmp / "e1.ckpt").epoch == 1);
  CHECK(read_checkpoint_info(tmp / "e1.ckpt").has_training_state);

  SpCycleGanTrainer resumed(a, b, cfg, SliceAxis::XY);
  resumed.load_checkpoint(tmp / "e1.ckpt");
  CHECK(resumed.epochs_completed() == 1);
  while (!resumed.finished())
    for (const auto& e : resumed.run_epoch()) parts.push_back(e);

  REQUIRE(parts.size() == full.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    INFO("step " << i);
    CHECK(parts[i].loss.total == full[i].loss.total);
    CHECK(parts[i].lr == full[i].lr);
    CHECK(parts[i].lr == learning_rate(cfg, parts[i].epoch));
  }
  CHECK(flatten(resumed.models().all_parameters()) == flatten(straight.models().all_parameters()));

  SectionStack a_xz = a, b_xz = b;
  a_xz.axis = b_xz.axis = SliceAxis::XZ;
  SpCycleGanTrainer wrong_axis(a_xz, b_xz, cfg, SliceAxis::XZ);
  CHECK_THROWS(wrong_axis.load_checkpoint(tmp / "e1.ckpt"));
}

TEST_CASE("zero spatial weight leaves H at its initialization") {
  const SectionStack a = noise_stack(3, 32, 5, 0.0f, 0.6f);
  const SectionStack b = noise_stack(3, 32, 6, 0.3f, 1.0f);
  for (HSchedule sched : {HSchedule::joint, HSchedule::alternating}) {
    TrainConfig cfg = smoke_config();
    cfg.lambda2 = 0;
    cfg.h_schedule = sched;
    SpCycleGanTrainer t(a, b, cfg, SliceAxis::XY);
    t.run_epoch();
    const auto init = build_models<float>(cfg);
    CHECK(flatten(t.models().h_parameters()) == flatten(init.h_parameters()));
    CHECK(flatten(t.models().g_ab.parameters()) != flatten(init.g_ab.parameters()));
  }
}

TEST_CASE("trainer rejects unusable inputs") {
  const SectionStack small = noise_stack(2, 16, 7, 0.0f, 1.0f);
  CHECK_THROWS(SpCycleGanTrainer(small, small, smoke_config(), SliceAxis::XY));
  CHECK_THROWS(SpCycleGanTrainer(SectionStack{}, noise_stack(2, 64, 8, 0, 1), smoke_config(), SliceAxis::XY));
}

TEST_CASE("checkpoint round trip, fingerprint and corruption") {
  TempDir tmp;
  const TrainConfig cfg = test::toy_config(51);
  const auto m = build_models<float>(cfg);
  save_checkpoint(m, tmp / "m.ckpt", SliceAxis::YZ, cfg, 7, "abc123");
  const CheckpointInfo info = read_checkpoint_info(tmp / "m.ckpt");
  CHECK(info.axis == SliceAxis::YZ);
  CHECK(info.epoch == 7);
  CHECK(info.config_hash == "abc123");
  CHECK(info.code_version == code_version());
  CHECK(info.generator == cfg.generator);
  CHECK(info.discriminator == cfg.discriminator);
  CHECK_FALSE(info.has_training_state);

  const auto back = load_checkpoint<float>(tmp / "m.ckpt");
  CHECK(flatten(back.all_parameters()) == flatten(m.all_parameters()));
  // A fresh model saved and reloaded equals a rebuild from the same seed.
  CHECK(flatten(back.all_parameters()) == flatten(build_models<float>(cfg).all_parameters()));

  TrainConfig other = cfg;
  other.generator.n_blocks = 3;
  CHECK_THROWS_AS(load_checkpoint<float>(tmp / "m.ckpt", other), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint<double>(tmp / "m.ckpt"), CheckpointError);

  const auto bytes = [&] {
    std::ifstream in(tmp / "m.ckpt", std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
  }();
  auto write = [&](const std::vector<char>& b) {
    std::ofstream out(tmp / "bad.ckpt", std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x5a;
  write(flipped);
  CHECK_THROWS_AS(load_checkpoint<float>(tmp / "bad.ckpt"), CheckpointError);
  auto versioned = bytes;
  versioned[8] = 99;
  write(versioned);
  CHECK_THROWS_AS(read_checkpoint_info(tmp / "bad.ckpt"), CheckpointError);
  write(std::vector<char>(bytes.begin(), bytes.begin() + 30));
  CHECK_THROWS_AS(read_checkpoint_info(tmp / "bad.ckpt"), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint_info(tmp / "missing.ckpt"), CheckpointError);
}
