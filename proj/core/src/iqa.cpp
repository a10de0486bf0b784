#include "tridecon/iqa.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <fmt/format.h>

#include "tridecon/parallel.hpp"
#include "tridecon/resize.hpp"
#include "tridecon/tiff.hpp"
#include "tridecon/volume_io.hpp"

namespace tridecon {

FocusProbabilities FocusProbabilities::from_logits(std::span<const double> logits) {
  if (logits.size() != kDefocusLevels)
    throw std::invalid_argument(fmt::format("focus classifier returned {} logits, expected {}", logits.size(),
                                            kDefocusLevels));
  double top = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw std::invalid_argument("focus classifier returned a non-finite logit");
    top = std::max(top, z);
  }
  FocusProbabilities out;
  double total = 0;
  for (int l = 0; l < kDefocusLevels; ++l) total += out.p[l] = std::exp(logits[l] - top);
  for (double& v : out.p) v /= total;
  return out;
}

double FocusProbabilities::expected_level() const {
  double e = 0;
  for (int l = 0; l < kDefocusLevels; ++l) e += l * p[l];
  return e;
}

double LaplacianFocusSurrogate::level_centre(const Image2D& patch) {
  const int w = patch.width(), h = patch.height();
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (int j = 1; j + 1 < h; ++j)
    for (int i = 1; i + 1 < w; ++i) {
      const double lap = static_cast<double>(patch(i - 1, j)) + patch(i + 1, j) + patch(i, j - 1) + patch(i, j + 1) -
                         4.0 * patch(i, j);
      sum += lap;
      sq += lap * lap;
      ++n;
    }
  const double var = n ? std::max(0.0, sq / n - (sum / n) * (sum / n)) : 0.0;
  return 10.0 * (1.0 - std::clamp(std::log10(1.0 + var) / 4.0, 0.0, 1.0));
}

std::vector<double> LaplacianFocusSurrogate::logits(const Image2D& patch) const {
  const double c = level_centre(patch);
  std::vector<double> z(kDefocusLevels);
  for (int l = 0; l < kDefocusLevels; ++l) z[l] = -2.0 * (l - c) * (l - c);
  return z;
}

int focus_resize_target(int extent) {
  if (extent < 1) throw std::invalid_argument("image extent must be positive");
  const int k = std::max(1, (2 * extent + kFocusPatch) / (2 * kFocusPatch));  // floor(extent/84 + 1/2)
  return k * kFocusPatch;
}

std::vector<Image2D> focus_patches(const Image2D& img255) {
  const int w = focus_resize_target(img255.width()), h = focus_resize_target(img255.height());
  const Image2D r = (w == img255.width() && h == img255.height()) ? img255 : resize_bilinear(img255, w, h);
  std::vector<Image2D> out;
  for (int j = 0; j < h; j += kFocusPatch)
    for (int i = 0; i < w; i += kFocusPatch) out.push_back(r.crop(i, j, kFocusPatch, kFocusPatch));
  return out;
}

double microscopy_ifq(const Image2D& img255, const FocusClassifier& classifier) {
  const auto patches = focus_patches(img255);
  double total = 0;
  for (const auto& p : patches) {
    const auto z = classifier.logits(p);
    total += FocusProbabilities::from_logits(z).expected_level();
  }
  return total / static_cast<double>(patches.size());
}

IfqMetric::IfqMetric(std::shared_ptr<const FocusClassifier> classifier) : classifier_(std::move(classifier)) {
  if (!classifier_) throw std::invalid_argument("Microscopy IFQ needs a focus classifier");
}

double ExternalCommandMetric::score(const Image2D& img) const {
  static std::atomic<unsigned long> counter{0};
  const auto path = std::filesystem::temp_directory_path() /
                    fmt::format("tridecon-iqa-{}-{}.tif", static_cast<long>(::getpid()), counter++);
  tiff::Page page{img.width(), img.height(), 8, {}};
  page.samples.reserve(img.size());
  for (float v : img.pixels()) page.samples.push_back(static_cast<std::uint16_t>(std::clamp(std::floor(v + 0.5f), 0.0f, 255.0f)));
  tiff::write(path, {page});
  const std::string cmd = command_ + " '" + path.string() + "'";
  std::string output;
  int status = -1;
  if (FILE* pipe = ::popen(cmd.c_str(), "r")) {
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe)) output += buf;
    status = ::pclose(pipe);
  }
  std::filesystem::remove(path);
  if (status != 0) throw std::runtime_error(fmt::format("{}: '{}' exited with status {}", name_, command_, status));
  std::istringstream is(output);
  std::string tok;
  double last = std::numeric_limits<double>::quiet_NaN();
  while (is >> tok) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used == tok.size()) last = v;
    } catch (const std::exception&) {
    }
  }
  if (!std::isfinite(last)) throw std::runtime_error(fmt::format("{}: no score in output of '{}'", name_, command_));
  return last;
}

Image2D to_metric_range(const Image2D& section01) {
  Image2D out = section01;
  for (float& v : out.pixels()) v *= 255.0f;
  return out;
}

VolumeQuality volume_quality_3way(const Volume& v, const QualityMetric& metric, int threads) {
  VolumeQuality q;
  q.metric = metric.name();
  double total = 0;
  for (int a = 0; a < 3; ++a) {
    const SliceAxis axis = kAllAxes[a];
    const SectionStack s = extract_sections(v, axis);
    AxisScores& out = q.axes[a];
    out.axis = axis;
    out.sections.assign(s.sections.size(), 0.0);
    parallel_for(s.sections.size(), threads, [&](std::size_t k) {
      try {
        out.sections[k] = metric.score(to_metric_range(s.sections[k]));
      } catch (const std::exception& e) {
        throw std::runtime_error(
            fmt::format("{} failed on {} section {}: {}", metric.name(), to_string(axis), k, e.what()));
      }
    });
    double sum = 0;
    for (double x : out.sections) sum += x;
    out.mean = sum / static_cast<double>(out.sections.size());
    total += out.mean;
  }
  q.value = total / 3.0;
  return q;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string cell(double v) { return std::isfinite(v) ? fmt::format("{:.4f}", v) : "n/a"; }

}  // namespace

std::string QualityReport::to_csv() const {
  std::string out = "method";
  for (const auto& m : metrics) out += "," + csv_field(m);
  out += "\n";
  for (std::size_t r = 0; r < methods.size(); ++r) {
    out += csv_field(methods[r]);
    for (double v : cells[r]) out += std::isfinite(v) ? fmt::format(",{:.9g}", v) : ",";
    out += "\n";
  }
  return out;
}

std::string QualityReport::to_text() const {
  std::vector<std::size_t> width(metrics.size() + 1, 6);
  width[0] = std::max<std::size_t>(width[0], 6);
  for (const auto& m : methods) width[0] = std::max(width[0], m.size());
  for (std::size_t c = 0; c < metrics.size(); ++c) {
    width[c + 1] = std::max(width[c + 1], metrics[c].size());
    for (const auto& row : cells) width[c + 1] = std::max(width[c + 1], cell(row[c]).size());
  }
  std::string out = fmt::format("{:<{}}", "Method", width[0]);
  for (std::size_t c = 0; c < metrics.size(); ++c) out += fmt::format("  {:>{}}", metrics[c], width[c + 1]);
  out += "\n";
  std::size_t rule = width[0];
  for (std::size_t c = 1; c < width.size(); ++c) rule += 2 + width[c];
  out += std::string(rule, '-') + "\n";
  for (std::size_t r = 0; r < methods.size(); ++r) {
    out += fmt::format("{:<{}}", methods[r], width[0]);
    for (std::size_t c = 0; c < metrics.size(); ++c) out += fmt::format("  {:>{}}", cell(cells[r][c]), width[c + 1]);
    out += "\n";
  }
  for (const auto& e : errors) out += "error: " + e + "\n";
  return out;
}

QualityReport evaluate_volumes(const std::vector<NamedVolume>& volumes,
                               const std::vector<std::shared_ptr<const QualityMetric>>& metrics, int threads) {
  QualityReport report;
  for (const auto& m : metrics) report.metrics.push_back(m->name());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& nv : volumes) {
    if (!nv.volume) throw std::invalid_argument("evaluate_volumes: null volume for " + nv.name);
    report.methods.push_back(nv.name);
    std::vector<double> row;
    std::vector<VolumeQuality> detail;
    for (const auto& m : metrics) {
      try {
        detail.push_back(volume_quality_3way(*nv.volume, *m, threads));
        row.push_back(detail.back().value);
      } catch (const std::exception& e) {
        report.errors.push_back(fmt::format("{} / {}: {}", nv.name, m->name(), e.what()));
        detail.push_back({m->name(), {}, nan});
        row.push_back(nan);
      }
    }
    report.cells.push_back(std::move(row));
    report.details.push_back(std::move(detail));
  }
  return report;
}

}  // namespace tridecon
