#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "tridecon/iqa.hpp"

using namespace tridecon;

namespace {

struct ReferenceRow {
  std::string name;
  double score = 0;
  std::array<double, 36> features{};
};

std::vector<ReferenceRow> reference_rows() {
  std::ifstream in(test::data_dir() / "brisque_reference.txt");
  std::vector<ReferenceRow> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ReferenceRow r;
    ss >> r.name >> r.score;
    for (double& f : r.features) ss >> f;
    rows.push_back(r);
  }
  return rows;
}

const BrisqueModel& model() {
  static const BrisqueModel m = BrisqueModel::load(test::brisque_model_path());
  return m;
}

std::vector<double> softmax(const std::vector<double>& z) {
  const double top = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - top);
  for (double& v : p) v /= s;
  return p;
}

double pixel_sum(const Image2D& img) {
  double s = 0;
  for (float v : img.pixels()) s += v;
  return s / static_cast<double>(img.size()) + 0.01 * img.width() - 0.003 * img.height();
}

}  // namespace

TEST_CASE("MSCN of a constant image is zero") {
  for (float level : {0.0f, 17.0f, 255.0f}) {
    const Image2D m = mscn_coefficients(Image2D(32, 20, level));
    for (float v : m.pixels()) REQUIRE(v == 0.0f);
  }
}

// Monte-Carlo variance of the centre coefficient of independent 7x7 windows of N(0, sd^2) noise.
static double windowed_noise_mscn_variance(double sd, int windows, std::uint64_t seed) {
  std::array<double, 49> w{};
  double total = 0;
  for (int j = -3; j <= 3; ++j)
    for (int i = -3; i <= 3; ++i) total += w[(j + 3) * 7 + i + 3] = std::exp(-0.5 * (i * i + j * j) / (49.0 / 36.0));
  for (double& v : w) v /= total;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, sd);
  double s = 0, sq = 0;
  std::array<double, 49> x{};
  for (int k = 0; k < windows; ++k) {
    double mu = 0, m2 = 0;
    for (int t = 0; t < 49; ++t) {
      x[t] = n(rng);
      mu += w[t] * x[t];
      m2 += w[t] * x[t] * x[t];
    }
    const double c = (x[24] - mu) / (std::sqrt(std::abs(m2 - mu * mu)) + 1.0);
    s += c;
    sq += c * c;
  }
  return sq / windows - (s / windows) * (s / windows);
}

TEST_CASE("MSCN of strong white noise matches the windowed-noise variance") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(128, 40);
  Image2D img(256, 256);
  for (float& p : img.pixels()) p = static_cast<float>(n(rng));
  const Image2D m = mscn_coefficients(img);
  double s = 0, sq = 0;
  int count = 0;
  for (int j = 3; j < 253; ++j)
    for (int i = 3; i < 253; ++i) s += m(i, j), sq += m(i, j) * m(i, j), ++count;
  const double mean = s / count, var = sq / count - mean * mean;
  // A 7x7 Gaussian window shares the centre pixel with its own mean and variance estimate,
  // so iid noise lands near 0.75 rather than 1.
  const double oracle = windowed_noise_mscn_variance(40, 200'000, 11);
  MESSAGE("MSCN variance " << var << " oracle " << oracle);
  CHECK(std::abs(mean) < 0.02);
  CHECK(var == doctest::Approx(oracle).epsilon(0.1));
  CHECK(var < 1.0);
}

TEST_CASE("MSCN of a checkerboard is antisymmetric") {
  Image2D img(24, 24);
  for (int j = 0; j < 24; ++j)
    for (int i = 0; i < 24; ++i) img(i, j) = (i + j) % 2 ? 200.0f : 50.0f;
  const Image2D m = mscn_coefficients(img);
  const float c = m(10, 10);
  CHECK(c != 0.0f);
  for (int j = 4; j < 20; ++j)
    for (int i = 4; i < 20; ++i) REQUIRE(m(i, j) == doctest::Approx((i + j) % 2 == 0 ? c : -c).epsilon(1e-4));
  CHECK_THROWS(mscn_coefficients(Image2D(6, 30)));
}

TEST_CASE("AGGD fit recovers a Laplacian shape") {
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> x(1'000'000);
  for (double& v : x) v = sign(rng) ? e(rng) : -e(rng);
  const AggdFit f = fit_aggd(x);
  CHECK(f.alpha == doctest::Approx(1.0).epsilon(0.05));
  CHECK(f.left_var == doctest::Approx(f.right_var).epsilon(0.02));
  CHECK(f.left_var == doctest::Approx(2.0).epsilon(0.02));
  CHECK(std::abs(f.mean) < 0.01);
  CHECK_FALSE(f.degenerate);
}

TEST_CASE("AGGD fit separates left and right scales") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  // An AGGD puts mass on each side in proportion to that side's scale: 0.5 / (0.5 + 3).
  std::bernoulli_distribution left(1.0 / 7.0);
  std::vector<double> x(1'000'000);
  for (double& v : x) v = left(rng) ? -0.5 * std::abs(n(rng)) : 3.0 * std::abs(n(rng));
  const AggdFit f = fit_aggd(x);
  CHECK(f.alpha == doctest::Approx(2.0).epsilon(0.05));
  CHECK(f.left_var == doctest::Approx(0.25).epsilon(0.02));
  CHECK(f.right_var == doctest::Approx(9.0).epsilon(0.02));
  CHECK(f.mean > 0);
}

TEST_CASE("AGGD degenerate input") {
  const std::vector<double> zeros(100, 0.0);
  const AggdFit f = fit_aggd(zeros);
  CHECK(f.degenerate);
  CHECK(f.left_var == kVarianceFloor);
  CHECK(std::isfinite(f.alpha));
  const std::vector<double> one_sided(100, 0.5);
  CHECK(fit_aggd(one_sided).degenerate);
  CHECK_THROWS(fit_aggd(std::vector<double>{}));
  const BrisqueFeatures flat = brisque_features(Image2D(64, 64, 90.0f));
  CHECK(flat.degenerate);
  for (double v : flat.values) CHECK(std::isfinite(v));
  CHECK(std::isfinite(brisque_score(Image2D(64, 64, 90.0f), model())));
}

TEST_CASE("BRISQUE features and scores match the reference implementation") {
  const auto rows = reference_rows();
  REQUIRE(rows.size() == 6);
  CHECK(model().support_vector_count() > 0);
  for (const auto& r : rows) {
    const Image2D img = test::fixture_image(r.name + ".tif");
    const BrisqueFeatures f = brisque_features(img);
    double worst = 0;
    for (int k = 0; k < 36; ++k)
      worst = std::max(worst, std::abs(f.values[k] - r.features[k]) / std::max(1.0, std::abs(r.features[k])));
    const double raw = model().predict(f.values);
    MESSAGE(r.name << " worst feature error " << worst << " score " << raw << " reference " << r.score);
    CHECK(worst < 1e-4);
    CHECK(std::abs(raw - r.score) < 0.01);
  }
}

TEST_CASE("BRISQUE score range, determinism and noise sensitivity") {
  const Image2D clean = test::fixture_image("camera.tif");
  const Image2D noisy = test::fixture_image("camera_noise.tif");
  const double a = brisque_score(clean, model()), b = brisque_score(clean, model());
  CHECK(a == b);
  CHECK(a >= 0);
  CHECK(a <= 100);
  CHECK(brisque_score(noisy, model()) > a + 10);
  const BrisqueMetric metric(model());
  CHECK(metric.range() == std::pair{0.0, 100.0});
  CHECK(metric.lower_is_better());
  CHECK_THROWS(BrisqueModel::load(test::data_dir() / "missing_model.txt"));
}

TEST_CASE("focus probabilities") {
  std::vector<double> one_hot(kDefocusLevels, -1000.0);
  one_hot[0] = 0;
  CHECK(FocusProbabilities::from_logits(one_hot).expected_level() == 0.0);
  const std::vector<double> flat(kDefocusLevels, 3.25);
  CHECK(FocusProbabilities::from_logits(flat).expected_level() == 5.0);
  std::vector<double> two(kDefocusLevels, -1000.0);
  two[2] = two[8] = 1.0;
  CHECK(FocusProbabilities::from_logits(two).expected_level() == doctest::Approx(5.0).epsilon(1e-15));
  std::vector<double> huge(kDefocusLevels, 0.0);
  huge[10] = 1e6;
  CHECK(FocusProbabilities::from_logits(huge).expected_level() == 10.0);
  CHECK_THROWS(FocusProbabilities::from_logits(std::vector<double>(10, 0.0)));
  std::vector<double> bad(kDefocusLevels, 0.0);
  bad[3] = std::nan("");
  CHECK_THROWS(FocusProbabilities::from_logits(bad));
}

TEST_CASE("focus resize target and patch tiling") {
  CHECK(focus_resize_target(84) == 84);
  CHECK(focus_resize_target(10) == 84);
  CHECK(focus_resize_target(125) == 84);
  CHECK(focus_resize_target(126) == 168);
  CHECK(focus_resize_target(200) == 168);
  CHECK(focus_resize_target(298) == 336);
  CHECK(focus_resize_target(512) == 504);
  const auto patches = focus_patches(Image2D(512, 200, 9.0f));
  CHECK(patches.size() == 6 * 2);
  for (const auto& p : patches) {
    CHECK(p.width() == kFocusPatch);
    CHECK(p.height() == kFocusPatch);
  }
}

TEST_CASE("IFQ equals the patch-wise expectation") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 2);
  for (int trial = 0; trial < 30; ++trial) {
    const int cols = 1 + trial % 4, rows = 1 + trial % 3;
    std::vector<std::vector<double>> table(cols * rows, std::vector<double>(kDefocusLevels));
    std::vector<std::array<double, kDefocusLevels>> probs;
    for (auto& z : table) {
      for (double& v : z) v = n(rng);
      const auto p = softmax(z);
      std::array<double, kDefocusLevels> a{};
      std::copy(p.begin(), p.end(), a.begin());
      probs.push_back(a);
    }
    const test::LookupClassifier lookup(table);
    CHECK(microscopy_ifq(test::indexed_blocks(cols, rows), lookup) ==
          doctest::Approx(test::ifq_brute_force(probs)).epsilon(1e-9));
  }
}

TEST_CASE("Laplacian surrogate ranks sharp above blurred") {
  const LaplacianFocusSurrogate s;
  const Image2D img = test::fixture_image("camera.tif");
  const double sharp = microscopy_ifq(img, s);
  const double soft = microscopy_ifq(test::gaussian_blur(img, 2.0), s);
  CHECK(sharp < soft);
  CHECK(sharp >= 0);
  CHECK(soft <= 10);
  CHECK(LaplacianFocusSurrogate::level_centre(Image2D(84, 84, 3.0f)) == 10.0);
  const IfqMetric metric(std::make_shared<LaplacianFocusSurrogate>());
  CHECK(metric.range() == std::pair{0.0, 10.0});
  CHECK(metric.score(img) == sharp);
}

TEST_CASE("3-way score of a constant metric is the constant") {
  std::mt19937_64 rng(5);
  const FunctionMetric seven("seven", [](const Image2D&) { return 7.0; });
  for (int trial = 0; trial < 10; ++trial) {
    const VolumeQuality q = volume_quality_3way(test::random_volume(test::random_shape(rng, 8), rng), seven);
    CHECK(q.value == 7.0);
    for (const auto& a : q.axes) CHECK(a.mean == 7.0);
  }
}

TEST_CASE("3-way score equals the brute-force section average") {
  std::mt19937_64 rng(6);
  const FunctionMetric m("probe", pixel_sum);
  for (int x = 1; x <= 8; x += 3)
    for (int y = 1; y <= 8; y += 2)
      for (int z = 1; z <= 8; ++z) {
        const Volume v = test::random_volume({x, y, z}, rng);
        const VolumeQuality q = volume_quality_3way(v, m, 1 + z % 3);
        REQUIRE(q.value == test::three_way_brute_force(v, pixel_sum));
        REQUIRE(q.axes[0].sections.size() == static_cast<std::size_t>(z));
        REQUIRE(q.axes[1].sections.size() == static_cast<std::size_t>(y));
        REQUIRE(q.axes[2].sections.size() == static_cast<std::size_t>(x));
      }
}

TEST_CASE("3-way metric failures name the section") {
  const FunctionMetric fails("fails", [](const Image2D& img) -> double {
    if (img.height() == 1) throw std::runtime_error("too thin");
    return 0;
  });
  try {
    (void)volume_quality_3way(Volume({4, 4, 1}), fails);
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("xz section 0") != std::string::npos);
  }
}

TEST_CASE("quality report") {
  const Volume a({4, 4, 4}, 0.5f), b({4, 4, 4}, 0.25f);
  const auto mean = std::make_shared<FunctionMetric>("Mean", [](const Image2D& img) { return img(0, 0); });
  const auto broken =
      std::make_shared<FunctionMetric>("Broken", [](const Image2D&) -> double { throw std::runtime_error("no model"); });
  const QualityReport r = evaluate_volumes({{"original", &a}, {"restored", &b}}, {mean, broken}, 1);
  REQUIRE(r.cells.size() == 2);
  CHECK(r.cells[0][0] == 127.5);
  CHECK(r.cells[1][0] == 63.75);
  CHECK(std::isnan(r.cells[0][1]));
  CHECK(r.errors.size() == 2);
  CHECK(r.to_csv() == "method,Mean,Broken\noriginal,127.5,\nrestored,63.75,\n");
  const std::string text = r.to_text();
  CHECK(text.find("127.5000") != std::string::npos);
  CHECK(text.find("n/a") != std::string::npos);
  CHECK(text.find("error: original / Broken") != std::string::npos);
}
