#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "tridecon/checkpoint.hpp"
#include "tridecon/pipeline.hpp"
#include "tridecon/volume_io.hpp"

using namespace tridecon;
using tridecon::test::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const TempDir& dir, const std::string& body, const std::string& name = "exp.ini") {
  const fs::path p = dir / name;
  std::ofstream(p) << body;
  return p;
}

// 16^3 random input on the 8-bit grid plus a config around it.
struct Fixture {
  TempDir dir;
  Volume input;
  fs::path config;

  explicit Fixture(const std::string& extra = "", Shape3 shape = {16, 16, 16},
                   const std::string& split = "blurred = 1:16,1:16,9:16\nclean = 1:16,1:16,1:8\ntest = 1:16,1:16,5:16\n") {
    std::mt19937_64 rng(99);
    input = test::random_volume(shape, rng);
    save_volume(input, dir / "input.tif");
    config = write_config(dir, "[experiment]\ninput = input.tif\nout = out\nseed = 3\n\n[split]\n" + split + extra);
  }
  [[nodiscard]] ExperimentConfig load(const CliOverrides& o = {}) const { return load_experiment_config(config, o); }
};

const std::string kTinyTrain =
    "[train]\nepochs_const = 1\nepochs_decay = 1\npatch_xy = 16\npatch_xz = 8\npatch_yz = 8\n"
    "ngf = 2\nn_blocks = 1\nndf = 2\nd_layers = 1\npool_size = 2\n";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TRIDECON_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults, precedence and path resolution") {
  Fixture f("[train]\nlambda1 = 5\nepochs_const = 3\n[train_xz]\nlambda1 = 7\n");
  const ExperimentConfig c = f.load();
  CHECK(c.seed == 3);
  CHECK(c.bits == 8);
  CHECK(c.input == f.dir.path() / "input.tif");
  CHECK(c.out_dir == f.dir.path() / "out");
  CHECK(c.train_for(SliceAxis::XY).lambda1 == 5);
  CHECK(c.train_for(SliceAxis::XZ).lambda1 == 7);
  CHECK(c.train_for(SliceAxis::YZ).epochs_const == 3);
  CHECK(c.train_for(SliceAxis::YZ).lambda2 == 10);
  CHECK(c.train_for(SliceAxis::XY).seed == 3);
  CHECK(c.fusion[0] == 1.0 / 3.0);
  CHECK(c.restore.pad_mode == PadMode::reflect);
  CHECK(c.evaluate.metrics == std::vector<std::string>{"brisque", "ifq"});
  CHECK(fs::exists(c.evaluate.brisque_model));

  CliOverrides o;
  o.set = {"train.lambda1=2", "train_yz.lambda2=0.5", "experiment.seed=11"};
  o.seed = 12;
  o.out = f.dir / "elsewhere";
  const ExperimentConfig d = f.load(o);
  CHECK(d.train_for(SliceAxis::XY).lambda1 == 2);
  CHECK(d.train_for(SliceAxis::XZ).lambda1 == 7);
  CHECK(d.train_for(SliceAxis::YZ).lambda2 == 0.5);
  CHECK(d.seed == 12);
  CHECK(d.train_for(SliceAxis::XY).seed == 12);
  CHECK(d.out_dir == f.dir.path() / "elsewhere");
  CHECK(d.resolved.at("train_yz.lambda2") == "0.5");
}

TEST_CASE("config rejects unknown or malformed entries") {
  Fixture f;
  auto with = [&](const std::vector<std::string>& set) {
    CliOverrides o;
    o.set = set;
    return f.load(o);
  };
  CHECK_THROWS_AS(with({"train.lamda1=3"}), ConfigError);
  CHECK_THROWS_AS(with({"bogus.key=3"}), ConfigError);
  CHECK_THROWS_AS(with({"train.lambda1"}), ConfigError);
  CHECK_THROWS_AS(with({"train.lambda1=abc"}), ConfigError);
  CHECK_THROWS_AS(with({"train.lambda1=-1"}), ConfigError);
  CHECK_THROWS_AS(with({"train.gan_mode=wgan"}), ConfigError);
  CHECK_THROWS_AS(with({"train.patch_xy=250"}), ConfigError);
  CHECK_THROWS_AS(with({"fusion.w_xy=0", "fusion.w_xz=0", "fusion.w_yz=0"}), ConfigError);
  CHECK_THROWS_AS(with({"evaluate.metrics=psnr"}), ConfigError);
  CHECK_THROWS_AS(with({"experiment.bits=12"}), ConfigError);
  CHECK_THROWS_AS(with({"restore.tile=16", "restore.tile_overlap=16"}), ConfigError);
  CHECK_THROWS_AS(with({"split.test=1:16,1:16"}), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(f.dir / "missing.ini"), ConfigError);
  const fs::path no_split = write_config(f.dir, "[experiment]\nseed = 1\n", "nosplit.ini");
  CHECK_THROWS_AS(load_experiment_config(no_split), ConfigError);
}

TEST_CASE("split writes the three sub-volumes") {
  Fixture f;
  const ExperimentConfig c = f.load();
  const SplitArtifacts a = cmd_split(c);
  const DatasetSplit& s = c.split;
  for (const auto& [path, r] : {std::pair{a.blurred, s.blurred}, {a.clean, s.clean}, {a.test, s.test}}) {
    const Volume v = load_volume(path);
    REQUIRE(v.shape() == r.extent());
    for (int z = 0; z < v.shape().z; ++z)
      for (int y = 0; y < v.shape().y; ++y)
        for (int x = 0; x < v.shape().x; ++x)
          REQUIRE(v(x, y, z) == f.input(r.x.lo - 1 + x, r.y.lo - 1 + y, r.z.lo - 1 + z));
  }
  const auto manifest = nlohmann::json::parse(slurp(c.out_dir / "manifest.json"));
  CHECK(manifest["stages"]["split"]["hash"] == stage_hash(c, "split"));
  CHECK(manifest["config"]["split.test"] == "1:16,1:16,5:16");
}

TEST_CASE("invalid ranges fail before anything is written") {
  Fixture overlap("", {16, 16, 16}, "blurred = 1:16,1:16,8:16\nclean = 1:16,1:16,1:8\ntest = 1:16,1:16,5:16\n");
  CHECK_THROWS_AS((void)overlap.load(), ConfigError);
  CHECK_FALSE(fs::exists(overlap.dir / "out"));

  Fixture too_big("", {16, 16, 16}, "blurred = 1:16,1:16,9:20\nclean = 1:16,1:16,1:8\ntest = 1:16,1:16,5:16\n");
  const ExperimentConfig c = too_big.load();
  CHECK_THROWS_AS(cmd_split(c), ConfigError);
  CHECK_FALSE(fs::exists(c.out_dir));

  Fixture no_input;
  fs::remove(no_input.dir / "input.tif");
  CHECK_THROWS_AS(cmd_split(no_input.load()), ConfigError);

  Fixture patch("[train]\npatch_xy = 32\n");
  CHECK_THROWS_AS(validate_for_stage(patch.load(), "train"), ConfigError);
}

TEST_CASE("identity generators on all axes reproduce the test volume") {
  Fixture f("[train]\nkind = identity\n[restore]\ndump_axes = true\n");
  const ExperimentConfig c = f.load();
  cmd_split(c);
  const TrainArtifacts t = cmd_train(c, axes_from_flag("all"));
  CHECK(t.checkpoints.size() == 3);
  for (const auto& [axis, p] : t.checkpoints) {
    CHECK(fs::exists(p));
    CHECK(read_checkpoint_info(p).axis == axis);
  }
  const fs::path out = cmd_restore(c);
  const Volume test = load_volume(split_artifacts(c).test);
  CHECK(load_volume(out) == test);
  for (const char* a : {"st_xy.tif", "st_xz.tif", "st_yz.tif"}) CHECK(load_volume(out.parent_path() / a) == test);
}

TEST_CASE("single-axis training and restoration") {
  Fixture f(kTinyTrain + "[restore]\ndump_axes = true\n");
  const ExperimentConfig c = f.load();
  cmd_split(c);
  const TrainArtifacts t = cmd_train(c, axes_from_flag("xy"));
  REQUIRE(t.checkpoints.size() == 1);
  CHECK(fs::exists(checkpoint_path(c, SliceAxis::XY)));
  CHECK_FALSE(fs::exists(checkpoint_path(c, SliceAxis::XZ)));
  std::ifstream hist(stage_dir(c, "train") / "history_xy.csv");
  int lines = 0;
  for (std::string l; std::getline(hist, l);) ++lines;
  CHECK(lines == 1 + 2 * 8);

  CHECK_THROWS_AS(cmd_restore(c, {SliceAxis::XY}), ConfigError);
  CHECK_THROWS_AS(cmd_restore(c), StageError);

  CliOverrides o;
  o.set = {"fusion.w_xy=1", "fusion.w_xz=0", "fusion.w_yz=0"};
  const ExperimentConfig only = f.load(o);
  CHECK(stage_hash(only, "train") == stage_hash(c, "train"));
  CHECK(stage_hash(only, "restore") != stage_hash(c, "restore"));
  const fs::path out = cmd_restore(only, {SliceAxis::XY});
  const Volume fused = load_volume(out);
  CHECK(fused == load_volume(out.parent_path() / "st_xy.tif"));
  CHECK(fused != load_volume(split_artifacts(c).test));
}

TEST_CASE("axis-tagged checkpoints cannot be swapped") {
  Fixture f("[train]\nkind = identity\n");
  const ExperimentConfig c = f.load();
  cmd_split(c);
  cmd_train(c, axes_from_flag("all"));
  fs::copy_file(checkpoint_path(c, SliceAxis::XY), checkpoint_path(c, SliceAxis::XZ),
                fs::copy_options::overwrite_existing);
  CHECK_THROWS_AS(cmd_restore(c), StageError);
}

TEST_CASE("evaluation covers the requested z window") {
  TempDir scratch;
  const fs::path count = scratch / "calls.txt";
  const std::string ev = "[train]\nkind = identity\n[evaluate]\nmetrics = ogiqa\nz_range = 149:298\nthreads = 1\n"
                         "ogiqa_command = sh -c 'echo x >> " + count.string() + " && echo 7'\n";
  Fixture f(ev, {8, 8, 310}, "blurred = 1:8,1:8,1:6\nclean = 1:8,1:8,7:12\ntest = 1:8,1:8,13:310\n");
  const ExperimentConfig c = f.load();
  cmd_split(c);
  cmd_train(c, axes_from_flag("all"));
  cmd_restore(c);
  const fs::path dir = cmd_evaluate(c);
  CHECK(slurp(dir / "report.csv") == "method,OG-IQA\noriginal,7\nrestored,7\n");
  const std::string means = slurp(dir / "axis_means.csv");
  CHECK(means.find("original,OG-IQA,xy,150,7\n") != std::string::npos);
  CHECK(means.find("restored,OG-IQA,xz,8,7\n") != std::string::npos);
  std::ifstream calls(count);
  int n = 0;
  for (std::string l; std::getline(calls, l);) ++n;
  CHECK(n == 2 * (150 + 8 + 8));

  const std::string report = cmd_report(c);
  CHECK(report.find("OG-IQA") != std::string::npos);
  CHECK(report.find("montage:") != std::string::npos);
  const Volume montage = load_volume(dir / "montage.tif");
  CHECK(montage.shape() == Shape3{8 + 8 + 8 + 4, 2 * 298 + 2, 1});

  CliOverrides o;
  o.set = {"evaluate.z_range=1:299"};
  CHECK_THROWS_AS(cmd_evaluate(f.load(o)), ConfigError);
}

TEST_CASE("a metric that cannot load leaves an error column") {
  Fixture f("[train]\nkind = identity\n[evaluate]\nmetrics = ifq,ogiqa\n");
  const ExperimentConfig c = f.load();
  cmd_split(c);
  cmd_train(c, axes_from_flag("all"));
  cmd_restore(c);
  const fs::path dir = cmd_evaluate(c);
  const std::string csv = slurp(dir / "report.csv");
  CHECK(csv.rfind("method,Microscopy IFQ,OG-IQA\n", 0) == 0);
  CHECK(csv.find(",\n") != std::string::npos);
  CHECK(slurp(dir / "report.txt").find("error:") != std::string::npos);
}

TEST_CASE("rerunning stages reproduces their artifacts byte for byte") {
  Fixture f(kTinyTrain);
  CliOverrides o;
  o.set = {"fusion.w_xz=0", "fusion.w_yz=0", "fusion.w_xy=1"};
  const ExperimentConfig c = f.load(o);
  auto run = [&] {
    cmd_split(c);
    cmd_train(c, {SliceAxis::XY});
    return slurp(cmd_restore(c, {SliceAxis::XY}));
  };
  const std::string first = run();
  const std::string ckpt = slurp(checkpoint_path(c, SliceAxis::XY));
  const std::string hist = slurp(stage_dir(c, "train") / "history_xy.csv");
  CHECK(run() == first);
  CHECK(slurp(checkpoint_path(c, SliceAxis::XY)) == ckpt);
  CHECK(slurp(stage_dir(c, "train") / "history_xy.csv") == hist);
}

TEST_CASE("resuming from a periodic checkpoint matches an uninterrupted run") {
  Fixture f(kTinyTrain);
  CliOverrides o;
  o.set = {"train.epochs_const=2", "train.epochs_decay=2", "train.checkpoint_every=2"};
  const ExperimentConfig c = f.load(o);
  cmd_split(c);
  cmd_train(c, {SliceAxis::XY});
  const fs::path dir = stage_dir(c, "train");
  const std::string ckpt = slurp(dir / "xy.ckpt");
  const std::string hist = slurp(dir / "history_xy.csv");
  CHECK(fs::exists(dir / "xy_e0002.ckpt"));
  fs::remove(dir / "xy_e0004.ckpt");
  fs::remove(dir / "xy.ckpt");

  o.set.push_back("train.resume=auto");
  const ExperimentConfig r = f.load(o);
  CHECK(stage_dir(r, "train") == dir);
  cmd_train(r, {SliceAxis::XY});
  CHECK(slurp(dir / "history_xy.csv") == hist);
  CHECK(slurp(dir / "xy.ckpt") == ckpt);
}

TEST_CASE("synthetic data generation") {
  TempDir dir;
  const fs::path cfg = write_config(
      dir, "[experiment]\nout = out\nseed = 2\n[synthetic]\nshape = 12,10,8\nellipsoids = 4\ntubes = 1\n"
           "[split]\nblurred = 1:12,1:10,5:8\nclean = 1:12,1:10,1:4\ntest = 1:12,1:10,1:8\n");
  const ExperimentConfig c = load_experiment_config(cfg);
  CHECK(c.input == c.synthetic.degraded);
  const auto [degraded, clean] = cmd_make_synthetic(c);
  CHECK(load_volume(degraded).shape() == Shape3{12, 10, 8});
  CHECK(load_volume(clean).shape() == Shape3{12, 10, 8});
  CHECK_NOTHROW(cmd_split(c));
}

TEST_CASE("axis flag") {
  CHECK(axes_from_flag("all").size() == 3);
  CHECK(axes_from_flag("yz") == std::vector<SliceAxis>{SliceAxis::YZ});
  CHECK_THROWS_AS(axes_from_flag("zz"), ConfigError);
}

TEST_CASE("command-line exit codes") {
  Fixture f("[train]\nkind = identity\n[evaluate]\nmetrics = ifq\n");
  const std::string cfg = "--config " + f.config.string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("restore " + cfg) == 3);
  CHECK(run_cli("split " + cfg + " --seed 5") == 0);
  CHECK(run_cli("train " + cfg + " --axis all --seed 5") == 0);
  CHECK(run_cli("restore " + cfg + " --axis xy --seed 5") == 2);
  CHECK(run_cli("restore " + cfg + " --seed 5") == 0);
  CHECK(run_cli("evaluate " + cfg + " --seed 5") == 0);
  CHECK(run_cli("report " + cfg + " --seed 5") == 0);
  CHECK(run_cli("split " + cfg + " --set train.nope=1") == 2);
  CHECK(run_cli("split " + cfg + " --axis diagonal") == 2);
  CHECK(run_cli("split --config " + (f.dir / "absent.ini").string()) == 2);
  CHECK(run_cli("frobnicate " + cfg) == 2);
  CHECK(run_cli("make-synthetic " + cfg + " --out " + (f.dir / "syn").string()) == 0);
  CHECK(fs::exists(f.dir / "syn" / "synthetic" / "degraded.tif"));
}
