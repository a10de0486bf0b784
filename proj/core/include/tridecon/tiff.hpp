#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tridecon::tiff {

/// One grayscale page. Samples are row-major, `width` per row.
struct Page {
  int width = 0;
  int height = 0;
  int bits = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;
};

enum class Compression { none, deflate };

/// Reads every page of a baseline grayscale TIFF (strips, 8/16-bit, uncompressed
/// or deflate, optional horizontal predictor, either byte order).
std::vector<Page> read(const std::filesystem::path& path);

/// Writes a little-endian multi-page stack, one strip per page.
void write(const std::filesystem::path& path, const std::vector<Page>& pages,
           Compression compression = Compression::none);

}  // namespace tridecon::tiff
