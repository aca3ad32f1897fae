#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "vlfa/pipeline.hpp"

using namespace vlfa;
namespace fs = std::filesystem;

namespace {

RunConfig reduced_config() {
  RunConfig cfg;
  cfg.seed = 311;
  cfg.data.n_train = 60;
  cfg.data.n_eval = 10;
  cfg.regressor.epochs = 3;
  cfg.regressor.batch = 16;
  cfg.vqvae.epochs = 5;
  cfg.vqvae.batch = 32;
  cfg.align.epochs = 4;
  cfg.align.batch = 16;
  cfg.diffusion.epochs = 2;
  cfg.diffusion.timesteps = 10;
  cfg.diffusion.batch = 16;
  cfg.ablate.seeds = {0};
  cfg.ablate.masks = {"all", "no-text"};
  return cfg;
}

std::string fresh_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / "vlfa_pipeline_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

// One reduced end-to-end run shared by the cases below.
const std::string& pipeline_dir() {
  static const std::string dir = [] {
    std::string d = fresh_dir("run");
    run_all(reduced_config(), d);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("camera construction centers the principal point") {
  DataConfig d;
  d.focal = 600.0f;
  d.image_size[0] = 640;
  d.image_size[1] = 480;
  Camera cam = camera_from(d);
  CHECK(cam.focal == 600.0f);
  CHECK(cam.principal[0] == 320.0f);
  CHECK(cam.principal[1] == 240.0f);
}

TEST_CASE("pose records round trip through ndjson") {
  std::string dir = fresh_dir("poses");
  std::string path = (fs::path(dir) / "poses.ndjson").string();

  std::vector<PoseRecord> poses(3);
  for (int i = 0; i < 3; ++i) {
    poses[size_t(i)].id = 10 + i;
    poses[size_t(i)].pose = vlfa_test::random_pose(uint64_t(i));
  }
  poses[1].diverged = true;
  poses[2].keyp_zeroed = true;

  save_poses(path, poses);
  auto back = load_poses(path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == poses[i].id);
    CHECK(back[i].diverged == poses[i].diverged);
    CHECK(back[i].keyp_zeroed == poses[i].keyp_zeroed);
    bool same = true;
    for (int k = 0; k < kThetaDim; ++k) {
      same = same && back[i].pose.theta[size_t(k)] == poses[i].pose.theta[size_t(k)];
    }
    for (int k = 0; k < kBetaDim; ++k) {
      same = same && back[i].pose.beta[size_t(k)] == poses[i].pose.beta[size_t(k)];
    }
    for (int k = 0; k < kTransDim; ++k) {
      same = same && back[i].pose.trans[size_t(k)] == poses[i].pose.trans[size_t(k)];
    }
    CHECK(same);
  }

  CHECK_THROWS_AS(load_poses((fs::path(dir) / "absent.ndjson").string()), FormatError);
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"id\": 4, \"theta\": [1, 2], \"beta\": [], \"trans\": []}\n";
  }
  CHECK_THROWS_AS(load_poses(path), FormatError);
}

TEST_CASE("end to end run writes every artifact and a manifest") {
  const std::string& dir = pipeline_dir();
  for (const char* f : {kTrainCorpusFile, kEvalCorpusFile, kRegressorFile, kVqvaeFile, kTextFile,
                        kDenoiserFile, kAblationCsvFile, kAblationJsonFile, kManifestFile}) {
    CHECK(fs::exists(fs::path(dir) / f));
  }

  RunConfig cfg = reduced_config();
  nlohmann::json manifest =
      nlohmann::json::parse(vlfa_test::read_file((fs::path(dir) / kManifestFile).string()));
  CHECK(manifest.at("config_hash").get<std::string>() == cfg.hash());
  auto stages = manifest.at("stages");
  REQUIRE(stages.size() == 6);
  for (const auto& s : stages) {
    CHECK(s.at("seconds").get<double>() >= 0.0);
    CHECK(!s.at("name").get<std::string>().empty());
  }

  std::string csv = vlfa_test::read_file((fs::path(dir) / kAblationCsvFile).string());
  std::vector<std::string> lines;
  size_t pos = 0;
  while (pos < csv.size()) {
    size_t nl = csv.find('\n', pos);
    if (nl == std::string::npos) break;
    lines.push_back(csv.substr(pos, nl - pos));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == 1 + 2 + cfg.ablate.masks.size());
  CHECK(lines[0] == "mask,seed,n_scenes,mpjpe_mm,pa_mpjpe_mm,flags");
  CHECK(lines[1].rfind("gaussian,mean,10,", 0) == 0);
  CHECK(lines[2].rfind("init,mean,10,", 0) == 0);
  CHECK(lines[3].rfind("all,mean,10,", 0) == 0);
  CHECK(lines[4].rfind("no-text,mean,10,", 0) == 0);

  nlohmann::json rep =
      nlohmann::json::parse(vlfa_test::read_file((fs::path(dir) / kAblationJsonFile).string()));
  CHECK(rep.at("config_hash").get<std::string>() == cfg.hash());
  REQUIRE(rep.at("rows").size() == 4);
  REQUIRE(rep.at("table").size() == 4);
  for (const auto& row : rep.at("table")) {
    double mpjpe = row.at("mpjpe_mm").get<double>();
    double pa = row.at("pa_mpjpe_mm").get<double>();
    CHECK(std::isfinite(mpjpe));
    CHECK(std::isfinite(pa));
    CHECK(mpjpe >= 0.0);
    CHECK(pa >= 0.0);
    CHECK(pa <= mpjpe + 1e-9);
    CHECK(row.at("n_scenes").get<int>() == 10);
  }
}

TEST_CASE("ablation rerun reproduces the csv byte for byte") {
  const std::string& dir = pipeline_dir();
  std::string path = (fs::path(dir) / kAblationCsvFile).string();
  std::string first = vlfa_test::read_file(path);
  fs::remove(path);
  stage_ablate(reduced_config(), dir, false);
  CHECK(vlfa_test::read_file(path) == first);
}

TEST_CASE("artifact loading enforces module names") {
  const std::string& dir = pipeline_dir();
  RunConfig cfg = reduced_config();
  Checkpoint ck = load_artifact(dir, kVqvaeFile, "vqvae", cfg, false);
  CHECK(ck.module == "vqvae");
  CHECK(ck.meta.at("config_hash").get<std::string>() == cfg.hash());
  CHECK_THROWS_AS(load_artifact(dir, kVqvaeFile, "regressor", cfg, false), IntegrityError);
  CHECK_THROWS_AS(load_artifact(dir, "absent.ckpt", "vqvae", cfg, false), ConfigError);
}

TEST_CASE("stages report missing inputs by name") {
  std::string dir = fresh_dir("empty");
  RunConfig cfg = reduced_config();
  CHECK_THROWS_WITH_AS(stage_train_regressor(cfg, dir),
                       doctest::Contains("run gen-data first"), ConfigError);
  try {
    stage_ablate(cfg, dir, false);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find(kEvalCorpusFile) != std::string::npos);
    CHECK(msg.find(kDenoiserFile) != std::string::npos);
    CHECK(msg.find(kRegressorFile) != std::string::npos);
  }
}

TEST_CASE("mixed config hashes are rejected unless allowed") {
  const std::string& dir = pipeline_dir();
  RunConfig other = reduced_config();
  other.seed = 999;
  try {
    stage_ablate(other, dir, false);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("--allow-mixed") != std::string::npos);
    CHECK(msg.find(other.hash()) != std::string::npos);
  }
  CHECK_NOTHROW(stage_ablate(other, dir, true));
}
