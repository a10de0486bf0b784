#include "tridecon/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include <sys/resource.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "tridecon/checkpoint.hpp"
#include "tridecon/iqa.hpp"
#include "tridecon/tiff.hpp"
#include "tridecon/volume_io.hpp"

namespace tridecon {

namespace fs = std::filesystem;
using json = nlohmann::json;
using KeyValues = std::map<std::string, std::string>;

namespace {

// ---- config keys -------------------------------------------------------------

const std::vector<std::string> kTrainKeys{
    "lambda1",   "lambda2",      "lr",         "beta1",     "beta2",         "epochs_const", "epochs_decay",
    "batch_size", "pool_size",   "patch_xy",   "patch_xz",  "patch_yz",      "patch",        "patches_per_section",
    "gan_mode",  "h_schedule",   "ngf",        "n_blocks",  "n_downsampling", "ndf",         "d_layers",
    "d_kernel",  "checkpoint_every", "seed"};

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const auto keys = [] {
    std::map<std::string, std::set<std::string>> k;
    k["experiment"] = {"input", "out", "seed", "bits"};
    k["split"] = {"blurred", "clean", "test"};
    k["train"] = {kTrainKeys.begin(), kTrainKeys.end()};
    k["train"].insert({"kind", "resume"});
    for (const char* s : {"train_xy", "train_xz", "train_yz"}) k[s] = {kTrainKeys.begin(), kTrainKeys.end()};
    k["fusion"] = {"w_xy", "w_xz", "w_yz"};
    k["restore"] = {"pad_mode", "pad_multiple", "threads", "tile", "tile_overlap", "dump_axes"};
    k["evaluate"] = {"metrics", "brisque_model", "z_range", "ogiqa_command", "extra", "threads"};
    k["synthetic"] = {"shape",       "ellipsoids",    "tubes",         "radius_min", "radius_max",
                      "tube_radius", "intensity_min", "intensity_max", "background", "sigma_top",
                      "sigma_bottom", "axial_ratio",  "decay_tau",     "photons",    "seed",
                      "degraded",    "clean",         "bits"};
    return k;
  }();
  return keys;
}

void check_key(const std::string& section, const std::string& key) {
  const auto& k = known_keys();
  const auto it = k.find(section);
  if (it == k.end()) throw ConfigError(fmt::format("unknown config section [{}]", section));
  if (!it->second.count(key)) throw ConfigError(fmt::format("unknown key '{}' in [{}]", key, section));
}

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class Reader {
 public:
  Reader(const KeyValues& kv, fs::path base) : kv_(kv), base_(std::move(base)) {}

  [[nodiscard]] std::optional<std::string> raw(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end() || trim(it->second).empty()) return std::nullopt;
    return trim(it->second);
  }
  [[nodiscard]] std::string str(const std::string& key, const std::string& def) const { return raw(key).value_or(def); }
  [[nodiscard]] double real(const std::string& key, double def) const {
    const auto v = raw(key);
    if (!v) return def;
    try {
      std::size_t used = 0;
      const double d = std::stod(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing characters");
      return d;
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{} = '{}' is not a number", key, *v));
    }
  }
  [[nodiscard]] long long integer(const std::string& key, long long def) const {
    const auto v = raw(key);
    if (!v) return def;
    try {
      std::size_t used = 0;
      const long long d = std::stoll(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing characters");
      return d;
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{} = '{}' is not an integer", key, *v));
    }
  }
  [[nodiscard]] int i32(const std::string& key, int def) const { return static_cast<int>(integer(key, def)); }
  [[nodiscard]] bool boolean(const std::string& key, bool def) const {
    const auto v = raw(key);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError(fmt::format("{} = '{}' is not a boolean", key, *v));
  }
  [[nodiscard]] fs::path path(const std::string& key, const fs::path& def) const {
    const auto v = raw(key);
    if (!v) return def;
    const fs::path p(*v);
    return p.is_absolute() ? p : (base_ / p).lexically_normal();
  }
  [[nodiscard]] const fs::path& base() const { return base_; }

 private:
  const KeyValues& kv_;
  fs::path base_;
};

template <class Fn>
auto as_config_error(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

void read_train_keys(const Reader& r, const std::string& section, TrainConfig& t) {
  const auto k = [&](const char* name) { return section + "." + name; };
  t.lambda1 = r.real(k("lambda1"), t.lambda1);
  t.lambda2 = r.real(k("lambda2"), t.lambda2);
  t.lr = r.real(k("lr"), t.lr);
  t.beta1 = r.real(k("beta1"), t.beta1);
  t.beta2 = r.real(k("beta2"), t.beta2);
  t.epochs_const = r.i32(k("epochs_const"), t.epochs_const);
  t.epochs_decay = r.i32(k("epochs_decay"), t.epochs_decay);
  t.batch_size = r.i32(k("batch_size"), t.batch_size);
  t.pool_size = r.i32(k("pool_size"), t.pool_size);
  if (r.raw(k("patch"))) t.patch_xy = t.patch_xz = t.patch_yz = r.i32(k("patch"), 0);
  t.patch_xy = r.i32(k("patch_xy"), t.patch_xy);
  t.patch_xz = r.i32(k("patch_xz"), t.patch_xz);
  t.patch_yz = r.i32(k("patch_yz"), t.patch_yz);
  t.patches_per_section = r.i32(k("patches_per_section"), t.patches_per_section);
  if (auto v = r.raw(k("gan_mode"))) t.gan_mode = as_config_error(k("gan_mode"), [&] { return parse_gan_mode(*v); });
  if (auto v = r.raw(k("h_schedule")))
    t.h_schedule = as_config_error(k("h_schedule"), [&] { return parse_h_schedule(*v); });
  t.generator.ngf = r.i32(k("ngf"), t.generator.ngf);
  t.generator.n_blocks = r.i32(k("n_blocks"), t.generator.n_blocks);
  t.generator.n_downsampling = r.i32(k("n_downsampling"), t.generator.n_downsampling);
  t.discriminator.ndf = r.i32(k("ndf"), t.discriminator.ndf);
  t.discriminator.n_layers = r.i32(k("d_layers"), t.discriminator.n_layers);
  t.discriminator.kernel = r.i32(k("d_kernel"), t.discriminator.kernel);
  t.checkpoint_every = r.i32(k("checkpoint_every"), t.checkpoint_every);
  t.seed = static_cast<std::uint64_t>(r.integer(k("seed"), static_cast<long long>(t.seed)));
}

std::string fmt_real(double v) { return fmt::format("{:.17g}", v); }

void snapshot_train(KeyValues& m, const std::string& prefix, const TrainConfig& t) {
  m[prefix + "lambda1"] = fmt_real(t.lambda1);
  m[prefix + "lambda2"] = fmt_real(t.lambda2);
  m[prefix + "lr"] = fmt_real(t.lr);
  m[prefix + "beta1"] = fmt_real(t.beta1);
  m[prefix + "beta2"] = fmt_real(t.beta2);
  m[prefix + "epochs_const"] = std::to_string(t.epochs_const);
  m[prefix + "epochs_decay"] = std::to_string(t.epochs_decay);
  m[prefix + "batch_size"] = std::to_string(t.batch_size);
  m[prefix + "pool_size"] = std::to_string(t.pool_size);
  m[prefix + "patch_xy"] = std::to_string(t.patch_xy);
  m[prefix + "patch_xz"] = std::to_string(t.patch_xz);
  m[prefix + "patch_yz"] = std::to_string(t.patch_yz);
  m[prefix + "patches_per_section"] = std::to_string(t.patches_per_section);
  m[prefix + "gan_mode"] = std::string(to_string(t.gan_mode));
  m[prefix + "h_schedule"] = std::string(to_string(t.h_schedule));
  m[prefix + "ngf"] = std::to_string(t.generator.ngf);
  m[prefix + "n_blocks"] = std::to_string(t.generator.n_blocks);
  m[prefix + "n_downsampling"] = std::to_string(t.generator.n_downsampling);
  m[prefix + "ndf"] = std::to_string(t.discriminator.ndf);
  m[prefix + "d_layers"] = std::to_string(t.discriminator.n_layers);
  m[prefix + "d_kernel"] = std::to_string(t.discriminator.kernel);
  m[prefix + "checkpoint_every"] = std::to_string(t.checkpoint_every);
  m[prefix + "seed"] = std::to_string(t.seed);
}

KeyValues snapshot(const ExperimentConfig& c, const KeyValues& raw) {
  KeyValues m;
  m["experiment.input"] = c.input.string();
  m["experiment.out"] = c.out_dir.string();
  m["experiment.seed"] = std::to_string(c.seed);
  m["experiment.bits"] = std::to_string(c.bits);
  m["split.blurred"] = to_string(c.split.blurred);
  m["split.clean"] = to_string(c.split.clean);
  m["split.test"] = to_string(c.split.test);
  m["train.kind"] = c.kind == GeneratorKind::identity ? "identity" : "spcyclegan";
  if (auto it = raw.find("train.resume"); it != raw.end()) m["train.resume"] = trim(it->second);
  for (SliceAxis a : kAllAxes) snapshot_train(m, fmt::format("train_{}.", to_string(a)), c.train_for(a));
  m["fusion.w_xy"] = fmt_real(c.fusion[0]);
  m["fusion.w_xz"] = fmt_real(c.fusion[1]);
  m["fusion.w_yz"] = fmt_real(c.fusion[2]);
  m["restore.pad_mode"] = std::string(to_string(c.restore.pad_mode));
  m["restore.pad_multiple"] = std::to_string(c.restore.pad_multiple);
  m["restore.threads"] = std::to_string(c.restore.threads);
  m["restore.tile"] = std::to_string(c.restore.tile);
  m["restore.tile_overlap"] = std::to_string(c.restore.tile_overlap);
  m["restore.dump_axes"] = c.dump_axes ? "true" : "false";
  std::string metrics;
  for (const auto& s : c.evaluate.metrics) metrics += (metrics.empty() ? "" : ",") + s;
  m["evaluate.metrics"] = metrics;
  m["evaluate.brisque_model"] = c.evaluate.brisque_model.string();
  m["evaluate.z_range"] = c.evaluate.z_range ? fmt::format("{}:{}", c.evaluate.z_range->lo, c.evaluate.z_range->hi) : "";
  m["evaluate.ogiqa_command"] = c.evaluate.ogiqa_command;
  std::string extra;
  for (const auto& [n, p] : c.evaluate.extra) extra += (extra.empty() ? "" : ";") + n + "=" + p.string();
  m["evaluate.extra"] = extra;
  m["evaluate.threads"] = std::to_string(c.evaluate.threads);
  const PhantomConfig& p = c.synthetic.phantom;
  m["synthetic.shape"] = fmt::format("{},{},{}", p.shape.x, p.shape.y, p.shape.z);
  m["synthetic.ellipsoids"] = std::to_string(p.ellipsoids);
  m["synthetic.tubes"] = std::to_string(p.tubes);
  m["synthetic.radius_min"] = fmt_real(p.radius_min);
  m["synthetic.radius_max"] = fmt_real(p.radius_max);
  m["synthetic.tube_radius"] = fmt_real(p.tube_radius);
  m["synthetic.intensity_min"] = fmt_real(p.intensity_min);
  m["synthetic.intensity_max"] = fmt_real(p.intensity_max);
  m["synthetic.background"] = fmt_real(p.background);
  m["synthetic.sigma_top"] = fmt_real(p.sigma_top);
  m["synthetic.sigma_bottom"] = fmt_real(p.sigma_bottom);
  m["synthetic.axial_ratio"] = fmt_real(p.axial_ratio);
  m["synthetic.decay_tau"] = fmt_real(p.decay_tau);
  m["synthetic.photons"] = fmt_real(p.photons);
  m["synthetic.seed"] = std::to_string(p.seed);
  m["synthetic.degraded"] = c.synthetic.degraded.string();
  m["synthetic.clean"] = c.synthetic.clean.string();
  m["synthetic.bits"] = std::to_string(c.synthetic.bits);
  return m;
}

fs::path default_brisque_model() {
  if (const char* env = std::getenv("TRIDECON_BRISQUE_MODEL")) return env;
  for (const fs::path& dir : {fs::path(TRIDECON_SOURCE_MODEL_DIR), fs::path(TRIDECON_INSTALL_MODEL_DIR)}) {
    const fs::path p = dir / "brisque_live.txt";
    if (fs::exists(p)) return p;
  }
  return fs::path(TRIDECON_SOURCE_MODEL_DIR) / "brisque_live.txt";
}

// ---- stage bookkeeping -------------------------------------------------------

class StageTimer {
 public:
  explicit StageTimer(std::string stage) : stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {
    spdlog::info("stage={} status=start", stage_);
  }
  json finish() const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const long rss = peak_rss_kib();
    spdlog::info("stage={} status=done wall_s={:.3f} peak_rss_mib={:.1f}", stage_, wall, rss / 1024.0);
    return {{"wall_s", wall}, {"peak_rss_kib", rss}};
  }

 private:
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

void write_text_atomic(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StageError("cannot write " + tmp.string());
    out << text;
    if (!out) throw StageError("failed writing " + tmp.string());
  }
  fs::rename(tmp, p);
}

void update_manifest(const ExperimentConfig& cfg, const std::string& stage, json entry) {
  const fs::path path = cfg.out_dir / "manifest.json";
  json m = json::object();
  if (fs::exists(path)) {
    try {
      std::ifstream in(path);
      m = json::parse(in);
    } catch (const std::exception& e) {
      spdlog::warn("ignoring unreadable manifest {}: {}", path.string(), e.what());
      m = json::object();
    }
  }
  m["code_version"] = code_version();
  m["config_path"] = cfg.config_path.string();
  m["config"] = cfg.resolved;
  m["nondeterminism"] = "timings and peak memory vary between runs; all other artifacts are deterministic";
  entry["hash"] = stage_hash(cfg, stage);
  entry["dir"] = stage_dir(cfg, stage).string();
  m["stages"][stage] = std::move(entry);
  write_text_atomic(path, m.dump(2) + "\n");
}

std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "missing";
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return fmt::format("{:016x}", h);
}

std::string keys_with_prefix(const KeyValues& m, const std::vector<std::string>& prefixes,
                             const std::set<std::string>& skip = {}) {
  std::string out;
  for (const auto& [k, v] : m) {
    if (skip.count(k)) continue;
    for (const auto& p : prefixes)
      if (k.rfind(p, 0) == 0) {
        out += k + "=" + v + "\n";
        break;
      }
  }
  return out;
}

Volume load_or_stage_error(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw StageError(fmt::format("{} {} does not exist; run the earlier stage first", what, p.string()));
  try {
    return load_volume(p);
  } catch (const std::exception& e) {
    throw StageError(fmt::format("cannot load {} {}: {}", what, p.string(), e.what()));
  }
}

void save(const Volume& v, const fs::path& p, int bits) { save_volume(v, p, VolumeFormat::tiff_stack, bits); }

std::pair<int, int> section_dims_of(const Shape3& extent, SliceAxis a) { return section_dims(extent, a); }

fs::path latest_periodic_checkpoint(const fs::path& dir, SliceAxis axis) {
  const std::regex re(fmt::format("{}_e([0-9]+)\\.ckpt", to_string(axis)));
  fs::path best;
  int best_epoch = -1;
  if (!fs::exists(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re) && std::stoi(m[1]) > best_epoch) {
      best_epoch = std::stoi(m[1]);
      best = e.path();
    }
  }
  return best;
}

// Keeps the header and rows whose epoch is <= keep_epoch.
void truncate_history(const fs::path& p, int keep_epoch) {
  if (!fs::exists(p)) return;
  std::ifstream in(p);
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      out += line + "\n";
      header = false;
      continue;
    }
    if (std::stoi(line.substr(0, line.find(','))) <= keep_epoch) out += line + "\n";
  }
  in.close();
  write_text_atomic(p, out);
}

Image2D mid_section(const Volume& v, SliceAxis a) {
  const SectionStack s = extract_sections(v, a);
  return s.sections[s.sections.size() / 2];
}

}  // namespace

// ---- public API --------------------------------------------------------------

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return fmt::format("{:016x}", h);
}

long peak_rss_kib() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return u.ru_maxrss;
}

std::vector<SliceAxis> axes_from_flag(std::string_view flag) {
  if (flag == "all") return {kAllAxes[0], kAllAxes[1], kAllAxes[2]};
  try {
    return {parse_slice_axis(flag)};
  } catch (const std::exception& e) {
    throw ConfigError(std::string("--axis: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const fs::path& path, const CliOverrides& overrides) {
  KeyValues kv;
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(fmt::format("key '{}' appears outside any [section]", section));
    for (const auto& [key, value] : body) {
      check_key(section, key);
      kv[section + "." + key] = value.data();
    }
  }
  for (const auto& s : overrides.set) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError(fmt::format("--set expects section.key=value, got '{}'", s));
    const std::string section = trim(s.substr(0, dot)), key = trim(s.substr(dot + 1, eq - dot - 1));
    check_key(section, key);
    kv[section + "." + key] = s.substr(eq + 1);
  }
  if (overrides.seed) kv["experiment.seed"] = std::to_string(*overrides.seed);
  if (overrides.out) kv["experiment.out"] = fs::absolute(*overrides.out).string();

  const Reader r(kv, fs::absolute(path).parent_path());
  ExperimentConfig c;
  c.config_path = fs::absolute(path);
  c.out_dir = r.path("experiment.out", r.base() / "out");
  c.seed = static_cast<std::uint64_t>(r.integer("experiment.seed", 0));
  c.bits = r.i32("experiment.bits", 8);
  if (c.bits != 8 && c.bits != 16) throw ConfigError("experiment.bits must be 8 or 16");

  // Synthetic data defaults to living inside the output directory.
  SyntheticConfig& syn = c.synthetic;
  PhantomConfig& ph = syn.phantom;
  if (auto v = r.raw("synthetic.shape")) {
    const auto parts = split_list(*v, ',');
    if (parts.size() != 3) throw ConfigError("synthetic.shape must be X,Y,Z");
    try {
      ph.shape = {std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2])};
    } catch (const std::exception&) {
      throw ConfigError("synthetic.shape must be three integers");
    }
  }
  ph.ellipsoids = r.i32("synthetic.ellipsoids", ph.ellipsoids);
  ph.tubes = r.i32("synthetic.tubes", ph.tubes);
  ph.radius_min = r.real("synthetic.radius_min", ph.radius_min);
  ph.radius_max = r.real("synthetic.radius_max", ph.radius_max);
  ph.tube_radius = r.real("synthetic.tube_radius", ph.tube_radius);
  ph.intensity_min = r.real("synthetic.intensity_min", ph.intensity_min);
  ph.intensity_max = r.real("synthetic.intensity_max", ph.intensity_max);
  ph.background = r.real("synthetic.background", ph.background);
  ph.sigma_top = r.real("synthetic.sigma_top", ph.sigma_top);
  ph.sigma_bottom = r.real("synthetic.sigma_bottom", ph.sigma_bottom);
  ph.axial_ratio = r.real("synthetic.axial_ratio", ph.axial_ratio);
  ph.decay_tau = r.real("synthetic.decay_tau", ph.decay_tau);
  ph.photons = r.real("synthetic.photons", ph.photons);
  ph.seed = static_cast<std::uint64_t>(r.integer("synthetic.seed", static_cast<long long>(c.seed)));
  syn.degraded = r.path("synthetic.degraded", c.out_dir / "synthetic" / "degraded.tif");
  syn.clean = r.path("synthetic.clean", c.out_dir / "synthetic" / "clean.tif");
  syn.bits = r.i32("synthetic.bits", 16);
  if (syn.bits != 8 && syn.bits != 16) throw ConfigError("synthetic.bits must be 8 or 16");
  as_config_error("synthetic", [&] {
    ph.validate();
    return 0;
  });

  c.input = r.path("experiment.input", syn.degraded);

  const auto range = [&](const char* key) {
    const auto v = r.raw(key);
    if (!v) throw ConfigError(fmt::format("{} is required", key));
    return as_config_error(key, [&] { return parse_subvolume_range(*v); });
  };
  c.split.blurred = range("split.blurred");
  c.split.clean = range("split.clean");
  c.split.test = range("split.test");
  // Shape-independent checks now; bounds against the input happen at split time.
  as_config_error("split", [&] {
    Shape3 cover{std::max({c.split.blurred.x.hi, c.split.clean.x.hi, c.split.test.x.hi}),
                 std::max({c.split.blurred.y.hi, c.split.clean.y.hi, c.split.test.y.hi}),
                 std::max({c.split.blurred.z.hi, c.split.clean.z.hi, c.split.test.z.hi})};
    c.split.validate(cover);
    return 0;
  });

  const std::string kind = r.str("train.kind", "spcyclegan");
  if (kind == "spcyclegan")
    c.kind = GeneratorKind::spcyclegan;
  else if (kind == "identity")
    c.kind = GeneratorKind::identity;
  else
    throw ConfigError("train.kind must be spcyclegan or identity");
  TrainConfig base;
  base.seed = c.seed;
  read_train_keys(r, "train", base);
  for (SliceAxis a : kAllAxes) {
    TrainConfig t = base;
    read_train_keys(r, fmt::format("train_{}", to_string(a)), t);
    as_config_error(fmt::format("train ({})", to_string(a)), [&] {
      t.validate();
      return 0;
    });
    c.train[static_cast<int>(a)] = t;
  }

  c.fusion = as_config_error("fusion", [&] {
    return FusionWeights(r.real("fusion.w_xy", 1.0 / 3), r.real("fusion.w_xz", 1.0 / 3), r.real("fusion.w_yz", 1.0 / 3));
  });

  if (auto v = r.raw("restore.pad_mode"))
    c.restore.pad_mode = as_config_error("restore.pad_mode", [&] { return parse_pad_mode(*v); });
  c.restore.pad_multiple = r.i32("restore.pad_multiple", c.restore.pad_multiple);
  c.restore.threads = r.i32("restore.threads", c.restore.threads);
  c.restore.tile = r.i32("restore.tile", c.restore.tile);
  c.restore.tile_overlap = r.i32("restore.tile_overlap", c.restore.tile_overlap);
  if (c.restore.pad_multiple < 1 || c.restore.threads < 0 || c.restore.tile < 0 || c.restore.tile_overlap < 0)
    throw ConfigError("restore: pad_multiple must be >= 1 and threads, tile, tile_overlap >= 0");
  if (c.restore.tile > 0 && c.restore.tile_overlap >= c.restore.tile)
    throw ConfigError("restore.tile_overlap must be smaller than restore.tile");
  c.dump_axes = r.boolean("restore.dump_axes", false);

  EvaluateConfig& ev = c.evaluate;
  if (auto v = r.raw("evaluate.metrics")) ev.metrics = split_list(*v, ',');
  if (ev.metrics.empty()) throw ConfigError("evaluate.metrics lists no metrics");
  for (const auto& m : ev.metrics)
    if (m != "brisque" && m != "ifq" && m != "ogiqa") throw ConfigError("unknown metric '" + m + "'");
  ev.brisque_model = r.path("evaluate.brisque_model", default_brisque_model());
  if (auto v = r.raw("evaluate.z_range")) ev.z_range = as_config_error("evaluate.z_range", [&] { return parse_axis_range(*v); });
  if (ev.z_range && (ev.z_range->lo < 1 || ev.z_range->hi < ev.z_range->lo))
    throw ConfigError("evaluate.z_range must satisfy 1 <= lo <= hi");
  ev.ogiqa_command = r.str("evaluate.ogiqa_command", "");
  for (const auto& item : split_list(r.str("evaluate.extra", ""), ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("evaluate.extra entries are name=path, got '" + item + "'");
    fs::path p = trim(item.substr(eq + 1));
    if (!p.is_absolute()) p = (r.base() / p).lexically_normal();
    ev.extra.emplace_back(trim(item.substr(0, eq)), p);
  }
  ev.threads = r.i32("evaluate.threads", 0);

  c.resolved = snapshot(c, kv);
  return c;
}

void validate_for_stage(const ExperimentConfig& cfg, std::string_view stage) {
  if (stage == "split") {
    if (!fs::exists(cfg.input))
      throw ConfigError(fmt::format("input volume {} does not exist (run make-synthetic or set experiment.input)",
                                    cfg.input.string()));
  } else if (stage == "train" && cfg.kind == GeneratorKind::spcyclegan) {
    for (SliceAxis a : kAllAxes) {
      const int p = cfg.train_for(a).patch_size(a);
      for (const auto* r : {&cfg.split.blurred, &cfg.split.clean}) {
        const auto [w, h] = section_dims_of(r->extent(), a);
        if (p > w || p > h)
          throw ConfigError(fmt::format("{} patch size {} does not fit the {}x{} sections of {}", to_string(a), p, w,
                                        h, to_string(*r)));
      }
    }
  } else if (stage == "evaluate") {
    const auto& ev = cfg.evaluate;
    if (ev.z_range && ev.z_range->hi > cfg.split.test.z.extent())
      throw ConfigError(fmt::format("evaluate.z_range {}:{} exceeds the test volume depth {}", ev.z_range->lo,
                                    ev.z_range->hi, cfg.split.test.z.extent()));
    for (const auto& [name, p] : ev.extra)
      if (!fs::exists(p)) throw ConfigError(fmt::format("evaluate.extra volume {} ({}) does not exist", name, p.string()));
  }
}

std::string stage_hash(const ExperimentConfig& cfg, std::string_view stage) {
  const auto& m = cfg.resolved;
  std::string text = "split\n" + keys_with_prefix(m, {"split.", "experiment.bits"}) + "input=" + file_digest(cfg.input) + "\n";
  if (stage == "split") return fnv1a_hex(text);
  text += "train\n" + keys_with_prefix(m, {"train."}, {"train.resume"}) +
          (cfg.kind == GeneratorKind::identity ? "" : keys_with_prefix(m, {"train_"}));
  if (stage == "train") return fnv1a_hex(text);
  text += "restore\n" + keys_with_prefix(m, {"fusion.", "restore."}, {"restore.threads"});
  if (stage == "restore") return fnv1a_hex(text);
  text += "evaluate\n" + keys_with_prefix(m, {"evaluate."}, {"evaluate.threads"});
  for (const auto& [n, p] : cfg.evaluate.extra) text += n + "=" + file_digest(p) + "\n";
  if (cfg.evaluate.brisque_model.empty() == false) text += "brisque=" + file_digest(cfg.evaluate.brisque_model) + "\n";
  if (stage == "evaluate") return fnv1a_hex(text);
  throw std::invalid_argument("unknown stage " + std::string(stage));
}

fs::path stage_dir(const ExperimentConfig& cfg, std::string_view stage) {
  return cfg.out_dir / fmt::format("{}-{}", stage, stage_hash(cfg, stage));
}

SplitArtifacts split_artifacts(const ExperimentConfig& cfg) {
  const fs::path d = stage_dir(cfg, "split");
  return {d / "blurred.tif", d / "clean.tif", d / "test.tif"};
}

fs::path checkpoint_path(const ExperimentConfig& cfg, SliceAxis axis) {
  return stage_dir(cfg, "train") / fmt::format("{}.ckpt", to_string(axis));
}

fs::path restored_path(const ExperimentConfig& cfg) { return stage_dir(cfg, "restore") / "restored.tif"; }

SplitArtifacts cmd_split(const ExperimentConfig& cfg) {
  validate_for_stage(cfg, "split");
  Volume source;
  try {
    source = load_volume(cfg.input);
  } catch (const std::exception& e) {
    throw StageError(fmt::format("cannot load input {}: {}", cfg.input.string(), e.what()));
  }
  as_config_error("split", [&] {
    cfg.split.validate(source.shape());
    return 0;
  });
  StageTimer timer("split");
  const TrainingVolumes tv = split_training_volumes(source, cfg.split);
  const SplitArtifacts out = split_artifacts(cfg);
  fs::create_directories(out.test.parent_path());
  save(tv.blurred, out.blurred, cfg.bits);
  save(tv.clean, out.clean, cfg.bits);
  save(tv.test, out.test, cfg.bits);
  spdlog::info("split {} -> blurred {} clean {} test {}", to_string(source.shape()), to_string(tv.blurred.shape()),
               to_string(tv.clean.shape()), to_string(tv.test.shape()));
  json entry = timer.finish();
  entry["input"] = cfg.input.string();
  entry["input_shape"] = to_string(source.shape());
  entry["outputs"] = {{"blurred", out.blurred.string()}, {"clean", out.clean.string()}, {"test", out.test.string()}};
  update_manifest(cfg, "split", entry);
  return out;
}

TrainArtifacts cmd_train(const ExperimentConfig& cfg, const std::vector<SliceAxis>& axes) {
  validate_for_stage(cfg, "train");
  const SplitArtifacts split = split_artifacts(cfg);
  const Volume blurred = load_or_stage_error(split.blurred, "blurred volume");
  const Volume clean = load_or_stage_error(split.clean, "clean volume");
  StageTimer timer("train");
  const fs::path dir = stage_dir(cfg, "train");
  fs::create_directories(dir);
  const std::string hash = stage_hash(cfg, "train");
  const auto resume = cfg.resolved.count("train.resume") ? cfg.resolved.at("train.resume") : std::string();

  TrainArtifacts out;
  json axes_json = json::object();
  for (SliceAxis a : axes) {
    const fs::path ckpt = checkpoint_path(cfg, a);
    if (cfg.kind == GeneratorKind::identity) {
      save_identity_checkpoint(ckpt, a, hash);
      out.checkpoints[a] = ckpt;
      axes_json[std::string(to_string(a))] = {{"checkpoint", ckpt.string()}, {"kind", "identity"}};
      continue;
    }
    const SectionStack sa = extract_sections(blurred, a);
    const SectionStack sb = extract_sections(clean, a);
    TrainOptions opts;
    opts.checkpoint_dir = dir;
    opts.checkpoint_stem = std::string(to_string(a));
    opts.history_csv = dir / fmt::format("history_{}.csv", to_string(a));
    opts.config_hash = hash;
    if (!resume.empty()) {
      fs::path from = resume == "auto" ? latest_periodic_checkpoint(dir, a) : fs::path(resume);
      if (!from.empty() && from.is_relative()) from = cfg.config_path.parent_path() / from;
      if (!from.empty()) {
        const int epoch = read_checkpoint_info(from).epoch;
        spdlog::info("resuming {} from {} (epoch {})", to_string(a), from.string(), epoch);
        truncate_history(opts.history_csv, epoch);
        opts.resume_from = from;
      }
    }
    if (!opts.resume_from && fs::exists(opts.history_csv)) fs::remove(opts.history_csv);
    TrainResult res;
    try {
      res = train(sa, sb, cfg.train_for(a), a, opts);
    } catch (const DivergenceError& e) {
      throw StageError(e.what());
    } catch (const CheckpointError& e) {
      throw StageError(e.what());
    } catch (const std::invalid_argument& e) {
      throw StageError(fmt::format("training {} failed: {}", to_string(a), e.what()));
    }
    out.checkpoints[a] = res.final_checkpoint;
    axes_json[std::string(to_string(a))] = {{"checkpoint", res.final_checkpoint.string()},
                                           {"history", opts.history_csv.string()},
                                           {"epochs", res.epochs_completed}};
  }
  json entry = timer.finish();
  entry["axes"] = axes_json;
  update_manifest(cfg, "train", entry);
  return out;
}

fs::path cmd_restore(const ExperimentConfig& cfg, const std::vector<SliceAxis>& axes) {
  for (SliceAxis a : kAllAxes)
    if (std::find(axes.begin(), axes.end(), a) == axes.end() && cfg.fusion[static_cast<int>(a)] != 0)
      throw ConfigError(fmt::format("axis {} is excluded but fusion.w_{} = {}; set it to 0", to_string(a),
                                    to_string(a), cfg.fusion[static_cast<int>(a)]));
  const Volume test = load_or_stage_error(split_artifacts(cfg).test, "test volume");
  std::array<std::unique_ptr<SectionGenerator>, 3> gens;
  for (SliceAxis a : kAllAxes) {
    const int k = static_cast<int>(a);
    if (cfg.fusion[k] == 0 && !cfg.dump_axes) continue;
    if (std::find(axes.begin(), axes.end(), a) == axes.end()) continue;
    const fs::path ckpt = checkpoint_path(cfg, a);
    if (!fs::exists(ckpt)) {
      if (cfg.fusion[k] == 0) continue;
      throw StageError(fmt::format("no {} checkpoint at {}; train that axis or set fusion.w_{} = 0", to_string(a),
                                   ckpt.string(), to_string(a)));
    }
    try {
      gens[k] = load_generator(ckpt);
    } catch (const std::exception& e) {
      throw StageError(fmt::format("cannot load {}: {}", ckpt.string(), e.what()));
    }
    if (gens[k]->axis() != a)
      throw StageError(fmt::format("{} is tagged {} but was found in the {} slot", ckpt.string(),
                                   to_string(gens[k]->axis()), to_string(a)));
  }
  StageTimer timer("restore");
  const fs::path dir = stage_dir(cfg, "restore");
  fs::create_directories(dir);
  std::array<Volume, 3> st;
  std::array<const Volume*, 3> inputs{};
  json per_axis = json::object();
  for (SliceAxis a : kAllAxes) {
    const int k = static_cast<int>(a);
    if (!gens[k]) continue;
    try {
      st[k] = restore_volume_axis(*gens[k], test, a, cfg.restore);
    } catch (const std::exception& e) {
      throw StageError(fmt::format("restoring {} sections failed: {}", to_string(a), e.what()));
    }
    if (cfg.fusion[k] != 0) inputs[k] = &st[k];
    if (cfg.dump_axes) {
      const fs::path p = dir / fmt::format("st_{}.tif", to_string(a));
      save(st[k], p, cfg.bits);
      per_axis[std::string(to_string(a))] = p.string();
    }
  }
  const Volume fused = fuse_volumes(inputs, cfg.fusion);
  const fs::path out = restored_path(cfg);
  save(fused, out, cfg.bits);
  json entry = timer.finish();
  entry["output"] = out.string();
  entry["axis_volumes"] = per_axis;
  entry["weights"] = {cfg.fusion[0], cfg.fusion[1], cfg.fusion[2]};
  update_manifest(cfg, "restore", entry);
  return out;
}

namespace {

// Stands in for a metric whose model could not be loaded, so its column reports the error.
class UnavailableMetric final : public QualityMetric {
 public:
  UnavailableMetric(std::string name, std::string why) : name_(std::move(name)), why_(std::move(why)) {}
  [[nodiscard]] std::string name() const override { return name_; }
  [[nodiscard]] double score(const Image2D&) const override { throw std::runtime_error(why_); }
  [[nodiscard]] std::pair<double, double> range() const override { return {0, 0}; }

 private:
  std::string name_, why_;
};

std::vector<std::shared_ptr<const QualityMetric>> build_metrics(const EvaluateConfig& ev) {
  std::vector<std::shared_ptr<const QualityMetric>> out;
  for (const auto& m : ev.metrics) {
    if (m == "brisque") {
      try {
        out.push_back(std::make_shared<BrisqueMetric>(BrisqueModel::load(ev.brisque_model)));
      } catch (const std::exception& e) {
        spdlog::error("BRISQUE unavailable: {}", e.what());
        out.push_back(std::make_shared<UnavailableMetric>("BRISQUE", e.what()));
      }
    } else if (m == "ifq") {
      out.push_back(std::make_shared<IfqMetric>(std::make_shared<LaplacianFocusSurrogate>()));
    } else if (m == "ogiqa") {
      if (ev.ogiqa_command.empty())
        out.push_back(std::make_shared<UnavailableMetric>("OG-IQA", "evaluate.ogiqa_command is not set"));
      else
        out.push_back(std::make_shared<ExternalCommandMetric>("OG-IQA", ev.ogiqa_command));
    }
  }
  return out;
}

}  // namespace

fs::path cmd_evaluate(const ExperimentConfig& cfg) {
  validate_for_stage(cfg, "evaluate");
  std::vector<std::pair<std::string, Volume>> vols;
  vols.emplace_back("original", load_or_stage_error(split_artifacts(cfg).test, "test volume"));
  vols.emplace_back("restored", load_or_stage_error(restored_path(cfg), "restored volume"));
  for (const auto& [name, p] : cfg.evaluate.extra) vols.emplace_back(name, load_or_stage_error(p, "volume"));
  StageTimer timer("evaluate");
  if (const auto& z = cfg.evaluate.z_range) {
    for (auto& [name, v] : vols) {
      if (z->hi > v.shape().z)
        throw StageError(fmt::format("evaluate.z_range {}:{} exceeds {} depth {}", z->lo, z->hi, name, v.shape().z));
      v = crop_subvolume(v, {{1, v.shape().x}, {1, v.shape().y}, *z});
    }
  }
  std::vector<NamedVolume> named;
  for (const auto& [name, v] : vols) named.push_back({name, &v});
  QualityReport report = evaluate_volumes(named, build_metrics(cfg.evaluate), cfg.evaluate.threads);
  report.config_hash = stage_hash(cfg, "evaluate");
  const fs::path dir = stage_dir(cfg, "evaluate");
  fs::create_directories(dir);
  write_text_atomic(dir / "report.csv", report.to_csv());
  write_text_atomic(dir / "report.txt", report.to_text());
  std::string details = "method,metric,axis,sections,mean\n";
  for (std::size_t r = 0; r < report.methods.size(); ++r)
    for (const auto& q : report.details[r])
      for (const auto& ax : q.axes)
        if (!ax.sections.empty())
          details += fmt::format("{},{},{},{},{:.9g}\n", report.methods[r], q.metric, to_string(ax.axis),
                                 ax.sections.size(), ax.mean);
  write_text_atomic(dir / "axis_means.csv", details);
  for (const auto& e : report.errors) spdlog::error("evaluate: {}", e);
  json entry = timer.finish();
  entry["report_csv"] = (dir / "report.csv").string();
  entry["report_txt"] = (dir / "report.txt").string();
  entry["errors"] = report.errors;
  update_manifest(cfg, "evaluate", entry);
  return dir;
}

std::string cmd_report(const ExperimentConfig& cfg) {
  const fs::path dir = stage_dir(cfg, "evaluate");
  const fs::path txt = dir / "report.txt";
  if (!fs::exists(txt)) throw StageError(fmt::format("no evaluation report at {}; run evaluate first", txt.string()));
  std::ifstream in(txt);
  std::stringstream ss;
  ss << in.rdbuf();

  // Montage: one row per volume holding its middle xy, xz and yz sections.
  const Volume test = load_or_stage_error(split_artifacts(cfg).test, "test volume");
  const Volume restored = load_or_stage_error(restored_path(cfg), "restored volume");
  constexpr int gap = 2;
  std::vector<std::array<Image2D, 3>> rows;
  for (const Volume* v : {&test, &restored})
    rows.push_back({mid_section(*v, SliceAxis::XY), mid_section(*v, SliceAxis::XZ), mid_section(*v, SliceAxis::YZ)});
  int width = 0, row_h = 0;
  for (const auto& img : rows[0]) {
    width += img.width() + gap;
    row_h = std::max(row_h, img.height());
  }
  width -= gap;
  const int height = static_cast<int>(rows.size()) * (row_h + gap) - gap;
  tiff::Page page{width, height, 8, std::vector<std::uint16_t>(static_cast<std::size_t>(width) * height, 0)};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    int left = 0;
    for (const auto& img : rows[r]) {
      const int top = static_cast<int>(r) * (row_h + gap);
      for (int j = 0; j < img.height(); ++j)
        for (int i = 0; i < img.width(); ++i)
          page.samples[static_cast<std::size_t>(top + j) * width + left + i] = quantize(img(i, j), 8);
      left += img.width() + gap;
    }
  }
  const fs::path montage = dir / "montage.tif";
  tiff::write(montage, {page});
  std::string text = ss.str() + fmt::format("montage: {} (rows: original, restored; columns: xy, xz, yz)\n",
                                            montage.string());
  return text;
}

std::pair<fs::path, fs::path> cmd_make_synthetic(const ExperimentConfig& cfg) {
  StageTimer timer("make-synthetic");
  const Phantom p = make_phantom(cfg.synthetic.phantom);
  fs::create_directories(cfg.synthetic.degraded.parent_path());
  fs::create_directories(cfg.synthetic.clean.parent_path());
  save(p.degraded, cfg.synthetic.degraded, cfg.synthetic.bits);
  save(p.clean, cfg.synthetic.clean, cfg.synthetic.bits);
  json entry = timer.finish();
  entry["degraded"] = cfg.synthetic.degraded.string();
  entry["clean"] = cfg.synthetic.clean.string();
  fs::create_directories(cfg.out_dir);
  const fs::path path = cfg.out_dir / "manifest.json";
  json m = json::object();
  if (fs::exists(path)) {
    try {
      std::ifstream in(path);
      m = json::parse(in);
    } catch (const std::exception&) {
      m = json::object();
    }
  }
  m["code_version"] = code_version();
  m["config"] = cfg.resolved;
  m["stages"]["make-synthetic"] = entry;
  write_text_atomic(path, m.dump(2) + "\n");
  return {cfg.synthetic.degraded, cfg.synthetic.clean};
}

}  // namespace tridecon
