#include "tridecon/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace tridecon {

namespace {

void check_bits(int bits) {
  if (bits != 8 && bits != 16) throw std::invalid_argument(fmt::format("unsupported bit depth {} (only 8 and 16)", bits));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Volume load_raw(const std::filesystem::path& path) {
  const auto meta_path = raw_sidecar_path(path);
  std::ifstream meta(meta_path);
  if (!meta) throw std::runtime_error("missing raw metadata sidecar " + meta_path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed metadata line '" + line + "'");
    kv[lower(trim(line.substr(0, eq)))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(fmt::format("raw metadata {} lacks '{}'", meta_path.string(), key));
    return std::stoi(it->second);
  };
  const Shape3 shape{need("width"), need("height"), need("depth")};
  const int bits = need("bits");
  check_bits(bits);
  if (auto it = kv.find("byte_order"); it != kv.end() && lower(it->second) != "little")
    throw std::runtime_error("only little-endian raw volumes are supported");
  if (!shape.valid()) throw std::runtime_error("raw metadata declares non-positive shape " + to_string(shape));

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = shape.voxels() * (bits / 8);
  if (bytes.size() != expected)
    throw std::runtime_error(fmt::format("raw payload {} has {} bytes, metadata shape {} at {} bits needs {}",
                                         path.string(), bytes.size(), to_string(shape), bits, expected));
  const float maxv = static_cast<float>((1 << bits) - 1);
  std::vector<float> data(shape.voxels());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const unsigned v = bits == 8 ? bytes[i] : static_cast<unsigned>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    data[i] = static_cast<float>(v) / maxv;
  }
  return Volume(shape, std::move(data));
}

Volume load_tiff(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("missing file " + path.string());
  const auto pages = tiff::read(path);
  const int w = pages.front().width, h = pages.front().height;
  const Shape3 shape{w, h, static_cast<int>(pages.size())};
  std::vector<float> data;
  data.reserve(shape.voxels());
  for (const auto& p : pages) {
    if (p.width != w || p.height != h)
      throw std::runtime_error(fmt::format("{}: page size {}x{} differs from first page {}x{}", path.string(),
                                           p.width, p.height, w, h));
    const float maxv = static_cast<float>((1 << p.bits) - 1);
    for (auto s : p.samples) data.push_back(static_cast<float>(s) / maxv);
  }
  return Volume(shape, std::move(data));
}

}  // namespace

VolumeFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = lower(path.extension().string());
  if (ext == ".tif" || ext == ".tiff") return VolumeFormat::tiff_stack;
  if (ext == ".raw") return VolumeFormat::raw;
  throw std::invalid_argument("cannot infer volume format from '" + path.string() + "'");
}

std::filesystem::path raw_sidecar_path(const std::filesystem::path& payload) {
  auto p = payload;
  p += ".meta";
  return p;
}

std::uint16_t quantize(float value, int bits) {
  if (bits != 8 && bits != 16) throw std::invalid_argument(fmt::format("unsupported bit depth {}", bits));
  const double maxv = static_cast<double>((1 << bits) - 1);
  const double q = std::floor(static_cast<double>(value) * maxv + 0.5);
  return static_cast<std::uint16_t>(std::clamp(q, 0.0, maxv));
}

Volume load_volume(const std::filesystem::path& path, std::optional<VolumeFormat> format) {
  const auto f = format.value_or(format_from_path(path));
  if (!std::filesystem::exists(path)) throw std::runtime_error("missing file " + path.string());
  return f == VolumeFormat::raw ? load_raw(path) : load_tiff(path);
}

void save_volume(const Volume& v, const std::filesystem::path& path, std::optional<VolumeFormat> format, int bits,
                 tiff::Compression compression) {
  check_bits(bits);
  if (v.empty()) throw std::invalid_argument("cannot save an empty volume");
  const auto f = format.value_or(format_from_path(path));
  const Shape3 s = v.shape();
  if (f == VolumeFormat::tiff_stack) {
    std::vector<tiff::Page> pages(s.z);
    const std::size_t plane = static_cast<std::size_t>(s.x) * s.y;
    for (int z = 0; z < s.z; ++z) {
      auto& p = pages[z];
      p.width = s.x;
      p.height = s.y;
      p.bits = bits;
      p.samples.resize(plane);
      for (std::size_t i = 0; i < plane; ++i) p.samples[i] = quantize(v.data()[z * plane + i], bits);
    }
    tiff::write(path, pages, compression);
    return;
  }
  std::vector<unsigned char> bytes;
  bytes.reserve(s.voxels() * (bits / 8));
  for (float value : v.data()) {
    const auto q = quantize(value, bits);
    bytes.push_back(static_cast<unsigned char>(q & 0xff));
    if (bits == 16) bytes.push_back(static_cast<unsigned char>(q >> 8));
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("I/O failure writing " + path.string());
  }
  std::ofstream meta(raw_sidecar_path(path), std::ios::trunc);
  if (!meta) throw std::runtime_error("cannot write " + raw_sidecar_path(path).string());
  meta << "width=" << s.x << "\nheight=" << s.y << "\ndepth=" << s.z << "\nbits=" << bits << "\nbyte_order=little\n";
}

}  // namespace tridecon
