#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tridecon/image.hpp"
#include "tridecon/sectioning.hpp"
#include "tridecon/volume.hpp"

namespace tridecon {

// ---- metric adapter contract -------------------------------------------------

/// A no-reference 2D quality metric. Images are grayscale in [0,255].
/// Implementations must be safe to call concurrently.
class QualityMetric {
 public:
  virtual ~QualityMetric() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual double score(const Image2D& img255) const = 0;
  [[nodiscard]] virtual bool lower_is_better() const { return true; }
  [[nodiscard]] virtual std::pair<double, double> range() const = 0;
};

/// Wraps a callable; mostly for tests and quick experiments.
class FunctionMetric final : public QualityMetric {
 public:
  FunctionMetric(std::string name, std::function<double(const Image2D&)> fn,
                 std::pair<double, double> range = {-1e300, 1e300})
      : name_(std::move(name)), fn_(std::move(fn)), range_(range) {}
  [[nodiscard]] std::string name() const override { return name_; }
  [[nodiscard]] double score(const Image2D& img) const override { return fn_(img); }
  [[nodiscard]] std::pair<double, double> range() const override { return range_; }

 private:
  std::string name_;
  std::function<double(const Image2D&)> fn_;
  std::pair<double, double> range_;
};

// ---- BRISQUE ---------------------------------------------------------------

/// Local normalization (I - mu) / (sigma + 1) with a normalized 7x7 Gaussian
/// window (std 7/6) and symmetrically reflected borders. Input in [0,255]. Throws for
/// images smaller than 7x7.
Image2D mscn_coefficients(const Image2D& img255);

/// Asymmetric generalized Gaussian fit by moment matching.
struct AggdFit {
  double alpha = 0;      // shape
  double mean = 0;       // (beta_r - beta_l) * Gamma(2/alpha) / Gamma(1/alpha)
  double left_var = 0;   // mean square of negative samples
  double right_var = 0;  // mean square of nonnegative samples
  bool degenerate = false;
};

inline constexpr double kVarianceFloor = 1e-8;

/// Fits an AGGD; variances are floored at kVarianceFloor, flagging degenerate input.
AggdFit fit_aggd(std::span<const double> x);

struct BrisqueFeatures {
  std::array<double, 36> values{};
  bool degenerate = false;
};

/// 18 features per scale (MSCN shape and variance, then shape, mean, left and
/// right variance of the H, V, D1 and D2 neighbour products) at full and half resolution.
BrisqueFeatures brisque_features(const Image2D& img255);

/// Support vector regressor over min/max-normalized features, read from a
/// plain-text model file (see models/brisque_live.txt for the schema).
class BrisqueModel {
 public:
  static BrisqueModel load(const std::filesystem::path& path);

  /// Raw regressor output on unnormalized features.
  [[nodiscard]] double predict(const std::array<double, 36>& features) const;
  [[nodiscard]] std::size_t support_vector_count() const { return coef_.size(); }

 private:
  double gamma_ = 0;
  double rho_ = 0;
  std::array<double, 36> min_{}, max_{};
  std::vector<double> coef_;
  std::vector<std::array<double, 36>> sv_;
};

/// Model output clamped to [0,100]; lower is better.
double brisque_score(const Image2D& img255, const BrisqueModel& model);

class BrisqueMetric final : public QualityMetric {
 public:
  explicit BrisqueMetric(BrisqueModel model) : model_(std::move(model)) {}
  [[nodiscard]] std::string name() const override { return "BRISQUE"; }
  [[nodiscard]] double score(const Image2D& img) const override { return brisque_score(img, model_); }
  [[nodiscard]] std::pair<double, double> range() const override { return {0.0, 100.0}; }

 private:
  BrisqueModel model_;
};

// ---- Microscopy image focus quality -----------------------------------------

inline constexpr int kDefocusLevels = 11;
inline constexpr int kFocusPatch = 84;

struct FocusProbabilities {
  std::array<double, kDefocusLevels> p{};

  /// Numerically stable softmax. Throws unless there are exactly 11 finite logits.
  static FocusProbabilities from_logits(std::span<const double> logits);
  /// Sum over l of l * p(l).
  [[nodiscard]] double expected_level() const;
};

/// Maps an 84x84 patch (values in [0,255]) to 11 defocus-level logits.
class FocusClassifier {
 public:
  virtual ~FocusClassifier() = default;
  [[nodiscard]] virtual std::vector<double> logits(const Image2D& patch) const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

/// Deterministic test double, not a trained defocus CNN: maps the variance of
/// the 4-neighbour Laplacian to a level centre c in [0,10] (sharper means lower)
/// and emits logits -2 (l - c)^2.
class LaplacianFocusSurrogate final : public FocusClassifier {
 public:
  [[nodiscard]] std::vector<double> logits(const Image2D& patch) const override;
  [[nodiscard]] std::string name() const override { return "laplacian-surrogate"; }
  [[nodiscard]] static double level_centre(const Image2D& patch);
};

/// Size each dimension is resized to: the nearest multiple of 84 (ties round up), at least 84.
int focus_resize_target(int extent);

/// Bilinear resize to multiples of 84, then non-overlapping 84x84 patches in row-major order.
std::vector<Image2D> focus_patches(const Image2D& img255);

/// Mean over patches of the expected defocus level; in [0,10], lower is better.
double microscopy_ifq(const Image2D& img255, const FocusClassifier& classifier);

class IfqMetric final : public QualityMetric {
 public:
  explicit IfqMetric(std::shared_ptr<const FocusClassifier> classifier);
  [[nodiscard]] std::string name() const override { return "Microscopy IFQ"; }
  [[nodiscard]] double score(const Image2D& img) const override { return microscopy_ifq(img, *classifier_); }
  [[nodiscard]] std::pair<double, double> range() const override { return {0.0, 10.0}; }

 private:
  std::shared_ptr<const FocusClassifier> classifier_;
};

/// Scores through an external program: the section is written as an 8-bit
/// TIFF, `command` runs with the path appended, and the last number printed
/// on stdout is the score. Used for OG-IQA, whose model is not bundled.
class ExternalCommandMetric final : public QualityMetric {
 public:
  ExternalCommandMetric(std::string name, std::string command, std::pair<double, double> range = {-1.0, 1.0})
      : name_(std::move(name)), command_(std::move(command)), range_(range) {}
  [[nodiscard]] std::string name() const override { return name_; }
  [[nodiscard]] double score(const Image2D& img) const override;
  [[nodiscard]] std::pair<double, double> range() const override { return range_; }

 private:
  std::string name_;
  std::string command_;
  std::pair<double, double> range_;
};

// ---- 3-way aggregation ---------------------------------------------------------

struct AxisScores {
  SliceAxis axis = SliceAxis::XY;
  std::vector<double> sections;
  double mean = 0;
};

struct VolumeQuality {
  std::string metric;
  std::array<AxisScores, 3> axes;  // xy, xz, yz
  double value = 0;                // mean of the three axis means
};

/// Scores every section of every axis (sections scaled from [0,1] to [0,255]),
/// averages per axis and then over the three axes. Sections may be scored in
/// parallel; sums always run in section order. A failing section aborts with
/// its axis and index in the message.
VolumeQuality volume_quality_3way(const Volume& v, const QualityMetric& metric, int threads = 0);

/// Section scaled to [0,255].
Image2D to_metric_range(const Image2D& section01);

struct QualityReport {
  std::string config_hash;
  std::vector<std::string> methods;  // row labels, one per volume
  std::vector<std::string> metrics;  // column labels
  /// cells[row][col]; NaN marks a metric that failed to load or run.
  std::vector<std::vector<double>> cells;
  std::vector<std::vector<VolumeQuality>> details;
  std::vector<std::string> errors;

  [[nodiscard]] std::string to_csv() const;
  [[nodiscard]] std::string to_text() const;
};

struct NamedVolume {
  std::string name;
  const Volume* volume = nullptr;
};

/// Methods x metrics matrix; one metric failing leaves NaN cells and an error line.
QualityReport evaluate_volumes(const std::vector<NamedVolume>& volumes,
                               const std::vector<std::shared_ptr<const QualityMetric>>& metrics, int threads = 0);

}  // namespace tridecon
