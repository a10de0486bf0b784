#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tridecon/image.hpp"
#include "tridecon/volume.hpp"

namespace tridecon {

/// Synthetic two-photon-like volume: random ellipsoids and curved tubes,
/// degraded with a Gaussian blur whose width grows linearly with depth, an
/// exp(-z/tau) intensity decay and Poisson shot noise.
struct PhantomConfig {
  Shape3 shape{64, 64, 64};
  int ellipsoids = 40;
  int tubes = 6;
  double radius_min = 1.5;     // ellipsoid semi-axes, voxels
  double radius_max = 4.0;
  double tube_radius = 1.2;
  double intensity_min = 0.6;  // object brightness before decay
  double intensity_max = 1.0;
  double background = 0.03;
  double sigma_top = 0.3;      // lateral blur at z = 0, voxels
  double sigma_bottom = 2.5;   // lateral blur at the last plane
  double axial_ratio = 2.0;    // axial sigma / lateral sigma
  double decay_tau = 120.0;    // voxels; <= 0 disables decay
  double photons = 300.0;      // expected counts at intensity 1; <= 0 disables noise
  std::uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  Volume clean;     // objects only, no blur, decay or noise
  Volume degraded;  // what the microscope would record
};

Phantom make_phantom(const PhantomConfig& cfg);

/// Otsu's threshold over 256 bins spanning [min, max] of the samples.
double otsu_threshold(std::span<const float> values);

struct Blob {
  double x = 0;  // centroid column
  double y = 0;  // centroid row
  std::size_t area = 0;
};

/// 8-connected components of pixels strictly above `threshold`, dropping those smaller than min_area.
std::vector<Blob> connected_components(const Image2D& img, double threshold, std::size_t min_area = 3);

struct DisplacementStats {
  double mean = 0;           // mean distance from each input blob to the nearest restored blob
  std::size_t matched = 0;   // blobs contributing to the mean
  std::size_t sections = 0;  // xy sections with blobs in both volumes
};

/// Object alignment between an input volume and its restoration, measured on
/// xy sections. Each volume is thresholded at its own Otsu level.
DisplacementStats centroid_displacement(const Volume& input, const Volume& restored, std::size_t min_area = 3);

}  // namespace tridecon
