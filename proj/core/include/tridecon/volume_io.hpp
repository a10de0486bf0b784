#pragma once

#include <filesystem>
#include <optional>

#include "tridecon/tiff.hpp"
#include "tridecon/volume.hpp"

namespace tridecon {

enum class VolumeFormat { tiff_stack, raw };

/// Picks the format from the extension (.tif/.tiff -> tiff_stack, .raw -> raw).
VolumeFormat format_from_path(const std::filesystem::path& path);

/// Sidecar for raw volumes: `<payload>.meta`, text key=value lines
/// (width, height, depth, bits, byte_order=little).
std::filesystem::path raw_sidecar_path(const std::filesystem::path& payload);

/// Loads a volume and scales integer samples by 1/(2^bits - 1).
Volume load_volume(const std::filesystem::path& path, std::optional<VolumeFormat> format = std::nullopt);

/// Writes xy pages ordered by z, quantizing with round-half-up to `bits` (8 or 16).
void save_volume(const Volume& v, const std::filesystem::path& path, std::optional<VolumeFormat> format = std::nullopt,
                 int bits = 8, tiff::Compression compression = tiff::Compression::none);

/// round-half-up quantization of a [0,1] intensity, clamped to the code range.
std::uint16_t quantize(float value, int bits);

}  // namespace tridecon
