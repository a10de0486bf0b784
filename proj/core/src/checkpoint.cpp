#include "tridecon/checkpoint.hpp"

#include <array>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "checkpoint_format.hpp"

#ifndef TRIDECON_GIT_DESCRIBE
#define TRIDECON_GIT_DESCRIBE "unknown"
#endif
#ifndef TRIDECON_VERSION
#define TRIDECON_VERSION "0.0.0"
#endif

namespace tridecon {

std::string code_version() { return std::string(TRIDECON_VERSION) + "+" + TRIDECON_GIT_DESCRIBE; }

namespace ckpt {

namespace {
constexpr std::array<char, 8> kMagic{'T', 'R', 'D', 'C', 'K', 'P', 'T', '1'};

std::uint32_t crc_of(const std::vector<std::uint8_t>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(chunk));
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}
}  // namespace

void write_file(const std::filesystem::path& path, json header, const Blob& blob) {
  header["tensors"] = blob.directory();
  header["blob_bytes"] = blob.bytes().size();
  header["blob_crc32"] = crc_of(blob.bytes());
  const std::string text = header.dump();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const std::uint32_t version = kCheckpointFormatVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic.data(), kMagic.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blob.bytes().data()), static_cast<std::streamsize>(blob.bytes().size()));
    if (!out) throw CheckpointError("I/O failure writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

File read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || magic != kMagic) throw CheckpointError(path.string() + " is not a tridecon checkpoint");
  if (version != kCheckpointFormatVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  if (len > (1ull << 32)) throw CheckpointError("corrupt checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header");
  File f;
  try {
    f.header = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  f.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (f.blob.size() != f.header.value("blob_bytes", std::size_t{0}))
    throw CheckpointError("checkpoint blob truncated");
  if (crc_of(f.blob) != f.header.value("blob_crc32", std::uint32_t{0}))
    throw CheckpointError("checkpoint blob CRC mismatch (corrupt file)");
  return f;
}

const json* File::find(const std::string& name) const {
  for (const auto& e : header["tensors"])
    if (e["name"] == name) return &e;
  return nullptr;
}

json to_json(const nn::GeneratorArch& a) {
  return {{"ngf", a.ngf}, {"n_blocks", a.n_blocks}, {"n_downsampling", a.n_downsampling}};
}
json to_json(const nn::DiscriminatorArch& a) { return {{"ndf", a.ndf}, {"n_layers", a.n_layers}, {"kernel", a.kernel}}; }

json to_json(const TrainConfig& c) {
  return {{"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epochs_const", c.epochs_const},
          {"epochs_decay", c.epochs_decay},
          {"batch_size", c.batch_size},
          {"pool_size", c.pool_size},
          {"patch_xy", c.patch_xy},
          {"patch_xz", c.patch_xz},
          {"patch_yz", c.patch_yz},
          {"patches_per_section", c.patches_per_section},
          {"gan_mode", std::string(to_string(c.gan_mode))},
          {"h_schedule", std::string(to_string(c.h_schedule))},
          {"generator", to_json(c.generator)},
          {"discriminator", to_json(c.discriminator)},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed}};
}

nn::GeneratorArch generator_arch_from_json(const json& j) {
  return {j.at("ngf").get<int>(), j.at("n_blocks").get<int>(), j.at("n_downsampling").get<int>()};
}
nn::DiscriminatorArch discriminator_arch_from_json(const json& j) {
  return {j.at("ndf").get<int>(), j.at("n_layers").get<int>(), j.at("kernel").get<int>()};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lambda1 = j.at("lambda1");
  c.lambda2 = j.at("lambda2");
  c.lr = j.at("lr");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.epochs_const = j.at("epochs_const");
  c.epochs_decay = j.at("epochs_decay");
  c.batch_size = j.at("batch_size");
  c.pool_size = j.at("pool_size");
  c.patch_xy = j.at("patch_xy");
  c.patch_xz = j.at("patch_xz");
  c.patch_yz = j.at("patch_yz");
  c.patches_per_section = j.at("patches_per_section");
  c.gan_mode = parse_gan_mode(j.at("gan_mode").get<std::string>());
  c.h_schedule = parse_h_schedule(j.at("h_schedule").get<std::string>());
  c.generator = generator_arch_from_json(j.at("generator"));
  c.discriminator = discriminator_arch_from_json(j.at("discriminator"));
  c.checkpoint_every = j.at("checkpoint_every");
  c.seed = j.at("seed");
  return c;
}

json model_header(SliceAxis axis, const TrainConfig& cfg, int epoch, const std::string& config_hash, const char* dtype) {
  return {{"kind", "spcyclegan"},
          {"axis", std::string(to_string(axis))},
          {"epoch", epoch},
          {"dtype", dtype},
          {"generator", to_json(cfg.generator)},
          {"discriminator", to_json(cfg.discriminator)},
          {"train_config", to_json(cfg)},
          {"fingerprint", {{"code_version", code_version()}, {"config_hash", config_hash}}}};
}

CheckpointInfo info_from_header(const json& h) {
  try {
    CheckpointInfo info;
    const auto kind = h.at("kind").get<std::string>();
    if (kind == "identity")
      info.kind = CheckpointKind::identity;
    else if (kind == "spcyclegan")
      info.kind = CheckpointKind::spcyclegan;
    else
      throw CheckpointError("unknown checkpoint kind '" + kind + "'");
    info.axis = parse_slice_axis(h.at("axis").get<std::string>());
    info.epoch = h.value("epoch", 0);
    info.code_version = h.at("fingerprint").value("code_version", "");
    info.config_hash = h.at("fingerprint").value("config_hash", "");
    if (info.kind == CheckpointKind::spcyclegan) {
      info.dtype = h.at("dtype").get<std::string>();
      info.generator = generator_arch_from_json(h.at("generator"));
      info.discriminator = discriminator_arch_from_json(h.at("discriminator"));
      info.train_config = train_config_from_json(h.at("train_config"));
      info.has_training_state = h.contains("state");
    }
    return info;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace ckpt

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return ckpt::info_from_header(ckpt::read_file(path).header);
}

template <class T>
void save_checkpoint(const SpCycleGanModels<T>& models, const std::filesystem::path& path, SliceAxis axis,
                     const TrainConfig& cfg, int epoch, const std::string& config_hash) {
  ckpt::Blob blob;
  ckpt::add_params(blob, models.all_parameters());
  ckpt::write_file(path, ckpt::model_header(axis, cfg, epoch, config_hash, ckpt::dtype_name<T>()), blob);
}

namespace {

void check_expected(const CheckpointInfo& info, const std::optional<TrainConfig>& expected) {
  if (!expected) return;
  if (!(info.generator == expected->generator) || !(info.discriminator == expected->discriminator))
    throw CheckpointError("checkpoint architecture (" + ckpt::to_json(info.generator).dump() + ", " +
                          ckpt::to_json(info.discriminator).dump() + ") differs from the requested one (" +
                          ckpt::to_json(expected->generator).dump() + ", " +
                          ckpt::to_json(expected->discriminator).dump() + ")");
}

}  // namespace

template <class T>
SpCycleGanModels<T> load_checkpoint(const std::filesystem::path& path, const std::optional<TrainConfig>& expected) {
  const ckpt::File f = ckpt::read_file(path);
  const CheckpointInfo info = ckpt::info_from_header(f.header);
  if (info.kind != CheckpointKind::spcyclegan) throw CheckpointError(path.string() + " holds no network parameters");
  if (info.dtype != ckpt::dtype_name<T>())
    throw CheckpointError("checkpoint dtype " + info.dtype + " does not match requested " + ckpt::dtype_name<T>());
  check_expected(info, expected);
  TrainConfig cfg = info.train_config;
  auto models = build_models<T>(cfg);
  ckpt::read_params(f, models.all_parameters());
  return models;
}

template <class T>
nn::ResnetGenerator<T> load_generator_ab(const std::filesystem::path& path) {
  const ckpt::File f = ckpt::read_file(path);
  const CheckpointInfo info = ckpt::info_from_header(f.header);
  if (info.kind != CheckpointKind::spcyclegan) throw CheckpointError(path.string() + " holds no network parameters");
  if (info.dtype != ckpt::dtype_name<T>()) throw CheckpointError("checkpoint dtype mismatch");
  nn::ResnetGenerator<T> g(info.generator, 0);
  auto params = g.parameters();
  for (auto& p : params) p.name = "g_ab." + p.name;
  ckpt::read_params(f, params);
  return g;
}

void save_identity_checkpoint(const std::filesystem::path& path, SliceAxis axis, const std::string& config_hash) {
  ckpt::json header{{"kind", "identity"},
                    {"axis", std::string(to_string(axis))},
                    {"epoch", 0},
                    {"fingerprint", {{"code_version", code_version()}, {"config_hash", config_hash}}}};
  ckpt::write_file(path, header, ckpt::Blob{});
}

template void save_checkpoint<float>(const SpCycleGanModels<float>&, const std::filesystem::path&, SliceAxis,
                                     const TrainConfig&, int, const std::string&);
template void save_checkpoint<double>(const SpCycleGanModels<double>&, const std::filesystem::path&, SliceAxis,
                                      const TrainConfig&, int, const std::string&);
template SpCycleGanModels<float> load_checkpoint<float>(const std::filesystem::path&, const std::optional<TrainConfig>&);
template SpCycleGanModels<double> load_checkpoint<double>(const std::filesystem::path&,
                                                          const std::optional<TrainConfig>&);
template nn::ResnetGenerator<float> load_generator_ab<float>(const std::filesystem::path&);

}  // namespace tridecon
