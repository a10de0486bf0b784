#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "tridecon/image.hpp"
#include "tridecon/volume.hpp"
#include "tridecon/volume_io.hpp"

namespace tridecon::test {

inline std::filesystem::path data_dir() { return TRIDECON_TEST_DATA_DIR; }
inline std::filesystem::path brisque_model_path() { return std::filesystem::path(TRIDECON_MODEL_DIR) / "brisque_live.txt"; }

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tridecon-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Random volume whose voxels sit exactly on the `bits` quantization grid.
inline Volume random_volume(Shape3 shape, std::mt19937_64& rng, int bits = 8) {
  const int top = (1 << bits) - 1;
  std::uniform_int_distribution<int> code(0, top);
  Volume v(shape);
  for (float& x : v.data()) x = static_cast<float>(code(rng)) / static_cast<float>(top);
  return v;
}

inline Shape3 random_shape(std::mt19937_64& rng, int max_extent) {
  std::uniform_int_distribution<int> d(1, max_extent);
  return {d(rng), d(rng), d(rng)};
}

/// First page of a grayscale fixture, scaled to [0,255].
inline Image2D fixture_image(const std::string& name) {
  const Volume v = load_volume(data_dir() / name);
  Image2D img(v.shape().x, v.shape().y);
  for (int j = 0; j < img.height(); ++j)
    for (int i = 0; i < img.width(); ++i) img(i, j) = v(i, j, 0) * 255.0f;
  return img;
}

}  // namespace tridecon::test
