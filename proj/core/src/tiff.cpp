#include "tridecon/tiff.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <fmt/format.h>
#include <zlib.h>

namespace tridecon::tiff {

namespace {

constexpr std::uint16_t kImageWidth = 256;
constexpr std::uint16_t kImageLength = 257;
constexpr std::uint16_t kBitsPerSample = 258;
constexpr std::uint16_t kCompression = 259;
constexpr std::uint16_t kPhotometric = 262;
constexpr std::uint16_t kStripOffsets = 273;
constexpr std::uint16_t kSamplesPerPixel = 277;
constexpr std::uint16_t kRowsPerStrip = 278;
constexpr std::uint16_t kStripByteCounts = 279;
constexpr std::uint16_t kPlanarConfig = 284;
constexpr std::uint16_t kPredictor = 317;
constexpr std::uint16_t kTileWidth = 322;
constexpr std::uint16_t kSampleFormat = 339;

constexpr std::uint16_t kShort = 3;
constexpr std::uint16_t kLong = 4;

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {
    if (bytes_.size() < 8) throw std::runtime_error("TIFF too short");
    if (bytes_[0] == 'I' && bytes_[1] == 'I')
      little_ = true;
    else if (bytes_[0] == 'M' && bytes_[1] == 'M')
      little_ = false;
    else
      throw std::runtime_error("not a TIFF file (bad byte-order mark)");
    if (u16(2) != 42) throw std::runtime_error("not a classic TIFF file (magic != 42)");
  }

  std::uint16_t u16(std::size_t off) const {
    check(off, 2);
    return little_ ? static_cast<std::uint16_t>(bytes_[off] | (bytes_[off + 1] << 8))
                   : static_cast<std::uint16_t>((bytes_[off] << 8) | bytes_[off + 1]);
  }
  std::uint32_t u32(std::size_t off) const {
    check(off, 4);
    const std::uint32_t b0 = bytes_[off], b1 = bytes_[off + 1], b2 = bytes_[off + 2], b3 = bytes_[off + 3];
    return little_ ? (b0 | (b1 << 8) | (b2 << 16) | (b3 << 24)) : ((b0 << 24) | (b1 << 16) | (b2 << 8) | b3);
  }
  void check(std::size_t off, std::size_t n) const {
    if (off + n > bytes_.size()) throw std::runtime_error("truncated TIFF");
  }
  bool little() const { return little_; }
  const std::uint8_t* at(std::size_t off) const { return bytes_.data() + off; }

  std::vector<Page> pages() const {
    std::vector<Page> out;
    std::size_t ifd = u32(4);
    std::size_t guard = 0;
    while (ifd != 0) {
      if (++guard > (1u << 20)) throw std::runtime_error("TIFF IFD chain loops");
      out.push_back(page(ifd));
      const std::size_t n = u16(ifd);
      ifd = u32(ifd + 2 + 12 * n);
    }
    if (out.empty()) throw std::runtime_error("TIFF has no pages");
    return out;
  }

 private:
  std::vector<std::uint32_t> values(std::size_t entry) const {
    const std::uint16_t type = u16(entry + 2);
    const std::uint32_t count = u32(entry + 4);
    const std::size_t size = type == kShort ? 2 : type == kLong ? 4 : 0;
    if (size == 0) {
      if (type == 1 || type == 7) {  // BYTE / UNDEFINED, only needed for small scalars
        std::vector<std::uint32_t> v;
        const std::size_t base = count <= 4 ? entry + 8 : u32(entry + 8);
        for (std::uint32_t i = 0; i < count; ++i) {
          check(base + i, 1);
          v.push_back(bytes_[base + i]);
        }
        return v;
      }
      return {};
    }
    const std::size_t base = size * count <= 4 ? entry + 8 : u32(entry + 8);
    std::vector<std::uint32_t> v(count);
    for (std::uint32_t i = 0; i < count; ++i) v[i] = size == 2 ? u16(base + 2 * i) : u32(base + 4 * i);
    return v;
  }

  Page page(std::size_t ifd) const {
    Page p;
    int compression = 1, photometric = 1, spp = 1, predictor = 1, planar = 1, sample_format = 1;
    std::uint32_t rows_per_strip = 0xffffffffu;
    std::vector<std::uint32_t> offsets, counts;
    const std::size_t n = u16(ifd);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t e = ifd + 2 + 12 * i;
      const std::uint16_t tag = u16(e);
      const auto v = values(e);
      auto first = [&] { return v.empty() ? 0u : v.front(); };
      switch (tag) {
        case kImageWidth: p.width = static_cast<int>(first()); break;
        case kImageLength: p.height = static_cast<int>(first()); break;
        case kBitsPerSample: p.bits = static_cast<int>(first()); break;
        case kCompression: compression = static_cast<int>(first()); break;
        case kPhotometric: photometric = static_cast<int>(first()); break;
        case kStripOffsets: offsets = v; break;
        case kSamplesPerPixel: spp = static_cast<int>(first()); break;
        case kRowsPerStrip: rows_per_strip = first(); break;
        case kStripByteCounts: counts = v; break;
        case kPlanarConfig: planar = static_cast<int>(first()); break;
        case kPredictor: predictor = static_cast<int>(first()); break;
        case kSampleFormat: sample_format = static_cast<int>(first()); break;
        case kTileWidth: throw std::runtime_error("tiled TIFF is not supported");
        default: break;
      }
    }
    if (p.width <= 0 || p.height <= 0) throw std::runtime_error("TIFF page without dimensions");
    if (spp != 1 || planar != 1) throw std::runtime_error("only single-channel TIFF is supported");
    if (p.bits != 8 && p.bits != 16)
      throw std::runtime_error(fmt::format("unsupported TIFF bit depth {} (only 8 and 16)", p.bits));
    if (sample_format != 1) throw std::runtime_error("only unsigned integer TIFF samples are supported");
    if (compression != 1 && compression != 8 && compression != 32946)
      throw std::runtime_error(fmt::format("unsupported TIFF compression {}", compression));
    if (photometric != 0 && photometric != 1) throw std::runtime_error("only grayscale TIFF is supported");
    if (offsets.empty() || offsets.size() != counts.size()) throw std::runtime_error("TIFF strip tables malformed");

    const std::size_t bps = p.bits / 8;
    const std::size_t row_bytes = static_cast<std::size_t>(p.width) * bps;
    const std::size_t rows_strip = std::min<std::size_t>(rows_per_strip, p.height);
    std::vector<std::uint8_t> raw;
    raw.reserve(row_bytes * p.height);
    for (std::size_t s = 0; s < offsets.size(); ++s) {
      check(offsets[s], counts[s]);
      const std::size_t rows = std::min<std::size_t>(rows_strip, p.height - std::min<std::size_t>(p.height, s * rows_strip));
      const std::size_t expected = rows * row_bytes;
      std::vector<std::uint8_t> strip;
      if (compression == 1) {
        strip.assign(at(offsets[s]), at(offsets[s]) + counts[s]);
      } else {
        strip.resize(expected);
        uLongf dest_len = static_cast<uLongf>(expected);
        const int rc = uncompress(strip.data(), &dest_len, at(offsets[s]), counts[s]);
        if (rc != Z_OK && rc != Z_BUF_ERROR) throw std::runtime_error("corrupt deflate strip in TIFF");
        strip.resize(dest_len);
      }
      if (strip.size() < expected) throw std::runtime_error("TIFF strip shorter than its rows");
      strip.resize(expected);
      if (predictor == 2) undo_predictor(strip, rows, p.width, bps);
      raw.insert(raw.end(), strip.begin(), strip.end());
    }
    if (raw.size() != row_bytes * p.height) throw std::runtime_error("TIFF payload size mismatch");

    p.samples.resize(static_cast<std::size_t>(p.width) * p.height);
    for (std::size_t i = 0; i < p.samples.size(); ++i) {
      if (bps == 1) {
        p.samples[i] = raw[i];
      } else {
        const std::uint8_t a = raw[2 * i], b = raw[2 * i + 1];
        p.samples[i] = little_ ? static_cast<std::uint16_t>(a | (b << 8)) : static_cast<std::uint16_t>((a << 8) | b);
      }
    }
    if (photometric == 0) {
      const std::uint16_t maxv = p.bits == 8 ? 255 : 65535;
      for (auto& s : p.samples) s = static_cast<std::uint16_t>(maxv - s);
    }
    return p;
  }

  void undo_predictor(std::vector<std::uint8_t>& strip, std::size_t rows, int width, std::size_t bps) const {
    for (std::size_t r = 0; r < rows; ++r) {
      std::uint8_t* row = strip.data() + r * width * bps;
      if (bps == 1) {
        for (int i = 1; i < width; ++i) row[i] = static_cast<std::uint8_t>(row[i] + row[i - 1]);
      } else {
        auto get = [&](int i) {
          return little_ ? static_cast<std::uint16_t>(row[2 * i] | (row[2 * i + 1] << 8))
                         : static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]);
        };
        auto put = [&](int i, std::uint16_t v) {
          if (little_) {
            row[2 * i] = v & 0xff;
            row[2 * i + 1] = v >> 8;
          } else {
            row[2 * i] = v >> 8;
            row[2 * i + 1] = v & 0xff;
          }
        };
        for (int i = 1; i < width; ++i) put(i, static_cast<std::uint16_t>(get(i) + get(i - 1)));
      }
    }
  }

  std::vector<std::uint8_t> bytes_;
  bool little_ = true;
};

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back(v >> 8);
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

}  // namespace

std::vector<Page> read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Reader(std::move(bytes)).pages();
}

void write(const std::filesystem::path& path, const std::vector<Page>& pages, Compression compression) {
  if (pages.empty()) throw std::invalid_argument("cannot write a TIFF with no pages");
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'I', 'I', 42, 0});
  put32(out, 0);  // first IFD offset, patched below
  std::size_t link = 4;

  for (const Page& p : pages) {
    if (p.bits != 8 && p.bits != 16) throw std::invalid_argument(fmt::format("unsupported bit depth {}", p.bits));
    if (p.samples.size() != static_cast<std::size_t>(p.width) * p.height)
      throw std::invalid_argument("page sample count does not match its dimensions");

    std::vector<std::uint8_t> payload;
    payload.reserve(p.samples.size() * (p.bits / 8));
    for (auto s : p.samples) {
      if (p.bits == 8)
        payload.push_back(static_cast<std::uint8_t>(s));
      else
        put16(payload, s);
    }
    if (compression == Compression::deflate) {
      uLongf len = compressBound(static_cast<uLong>(payload.size()));
      std::vector<std::uint8_t> packed(len);
      if (compress2(packed.data(), &len, payload.data(), static_cast<uLong>(payload.size()), 6) != Z_OK)
        throw std::runtime_error("deflate failed");
      packed.resize(len);
      payload = std::move(packed);
    }

    const std::uint32_t data_offset = static_cast<std::uint32_t>(out.size());
    out.insert(out.end(), payload.begin(), payload.end());
    if (out.size() % 2) out.push_back(0);

    const std::uint32_t ifd_offset = static_cast<std::uint32_t>(out.size());
    std::memcpy(out.data() + link, &ifd_offset, 4);  // host is little-endian x86/arm

    struct Entry {
      std::uint16_t tag, type;
      std::uint32_t value;
    };
    const std::array<Entry, 10> entries{{
        {kImageWidth, kLong, static_cast<std::uint32_t>(p.width)},
        {kImageLength, kLong, static_cast<std::uint32_t>(p.height)},
        {kBitsPerSample, kShort, static_cast<std::uint32_t>(p.bits)},
        {kCompression, kShort, compression == Compression::deflate ? 8u : 1u},
        {kPhotometric, kShort, 1},
        {kStripOffsets, kLong, data_offset},
        {kSamplesPerPixel, kShort, 1},
        {kRowsPerStrip, kLong, static_cast<std::uint32_t>(p.height)},
        {kStripByteCounts, kLong, static_cast<std::uint32_t>(payload.size())},
        {kPlanarConfig, kShort, 1},
    }};
    put16(out, static_cast<std::uint16_t>(entries.size()));
    for (const auto& e : entries) {
      put16(out, e.tag);
      put16(out, e.type);
      put32(out, 1);
      if (e.type == kShort) {
        put16(out, static_cast<std::uint16_t>(e.value));
        put16(out, 0);
      } else {
        put32(out, e.value);
      }
    }
    link = out.size();
    put32(out, 0);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("I/O failure writing " + path.string());
}

}  // namespace tridecon::tiff
