#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "vga/cli.hpp"

using namespace vga;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result lab(std::vector<std::string> args) {
  args.insert(args.begin(), "vga_lab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json without_timestamps(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  j.erase("timestamps");
  return j;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("vga_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    ASSERT_EQ(lab({"make-model", "--kind", "planted", "--sigma", "0.7", "--seed", "7", "--out", model()}).code, 0);
    ASSERT_EQ(lab({"make-scenes", "--n", "6", "--seed", "3", "--out", scenes()}).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string model() { return (dir_ / "planted.bin").string(); }
  static std::string scenes() { return (dir_ / "scenes.json").string(); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }
  static fs::path dir_;
};
fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, ArtifactsLoad) {
  const Model m = load_model(model());
  EXPECT_EQ(m.config.n_layers, 6u);
  EXPECT_EQ(load_scenes(scenes()).size(), 6u);
  ASSERT_EQ(lab({"make-model", "--kind", "random", "--seed", "1", "--out", path("random.bin")}).code, 0);
  EXPECT_EQ(load_model(path("random.bin")).config, m.config);
}

TEST_F(Cli, GenerateZeroBetaMatchesPlain) {
  const auto plain = lab({"generate", "--model", model(), "--scenes", scenes(), "--scene", "2", "--prompt",
                          "describe", "--max-len", "24"});
  ASSERT_EQ(plain.code, 0) << plain.err;
  EXPECT_FALSE(plain.out.empty());
  for (const auto& guidance : {"vsc", "vss", "even"}) {
    const auto zero = lab({"generate", "--model", model(), "--scenes", scenes(), "--scene", "2", "--prompt",
                           "describe", "--max-len", "24", "--beta", "0", "--guidance", guidance, "--mode", "caption"});
    ASSERT_EQ(zero.code, 0) << zero.err;
    EXPECT_EQ(zero.out, plain.out);
  }
  const auto explicit_path = lab({"generate", "--model", model(), "--scenes", scenes(), "--scene", "2", "--prompt",
                                  "describe", "--max-len", "24", "--explicit"});
  EXPECT_EQ(explicit_path.out, plain.out);
}

TEST_F(Cli, EvalExistIsDeterministicApartFromTimestamps) {
  const std::vector<std::string> args{"eval-exist", "--model", model(), "--scenes", scenes(), "--seed", "5"};
  const auto a = lab(args), b = lab(args);
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(without_timestamps(a.out).dump(), without_timestamps(b.out).dump());
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j["kind"], "existence");
  EXPECT_EQ(j["seed"], 5);
  EXPECT_EQ(j["config"]["beta"], 0.25);
  EXPECT_EQ(j["config"]["end_layer"], 3);
  EXPECT_TRUE(j.contains("timestamps"));

  auto pooled = args;
  pooled.insert(pooled.end(), {"--jobs", "3"});
  EXPECT_EQ(without_timestamps(lab(pooled).out).dump(), without_timestamps(a.out).dump());
}

TEST_F(Cli, EvalCaptionAndGround) {
  const auto c = lab({"eval-caption", "--model", model(), "--scenes", scenes(), "--max-len", "32", "--out",
                      path("caption.json")});
  ASSERT_EQ(c.code, 0) << c.err;
  std::ifstream f(path("caption.json"));
  const auto j = nlohmann::json::parse(f);
  EXPECT_EQ(j["kind"], "caption");
  EXPECT_EQ(j["config"]["mode"], "caption");
  EXPECT_EQ(j["config"]["beta"], 0.2);
  EXPECT_EQ(j["generated"].size(), 6u);

  const auto g = lab({"eval-ground", "--model", model(), "--scenes", scenes()});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_TRUE(nlohmann::json::parse(g.out)["grounding"].contains("mean_dice"));
}

TEST_F(Cli, GroundWritesJsonAndHeatmap) {
  const auto r = lab({"ground", "--model", model(), "--scenes", scenes(), "--source", "vsc", "--word", "dog",
                      "--heatmap", path("dog.pgm")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["weights"].size(), 36u);
  EXPECT_TRUE(j.contains("exists"));
  EXPECT_EQ(fs::file_size(path("dog.pgm")), std::string("P5\n6 6\n255\n").size() + 36);

  const auto v = lab({"ground", "--model", model(), "--patches", "dog,cat,bg0,bg1,bg2,bg3," + std::string(
                          "bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,"
                          "bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0,bg0"), "--source", "vss"});
  ASSERT_EQ(v.code, 0) << v.err;
  EXPECT_EQ(nlohmann::json::parse(v.out)["source"], "vss");

  EXPECT_EQ(lab({"ground", "--model", model(), "--scenes", scenes(), "--source", "vsc"}).code, 1);
  EXPECT_EQ(lab({"ground", "--model", model(), "--scenes", scenes(), "--word", "zebra"}).code, 1);
}

TEST_F(Cli, ProfileBosHasOneEntryPerLayer) {
  const auto r = lab({"profile-bos", "--model", model(), "--scenes", scenes(), "--prompt", "is there a dog ?"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["profile"].size(), 6u);
  EXPECT_LT(j["suggested_start_layer"].get<int>(), 6);
}

TEST_F(Cli, BenchTtft) {
  const auto r = lab({"bench-ttft", "--model", model(), "--scenes", scenes(), "--runs", "2", "--prompts", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["prompts"], 5);
  EXPECT_EQ(j["runs"], 2);
  EXPECT_EQ(j["forward_passes"]["vanilla"], j["forward_passes"]["vga"]);
  EXPECT_TRUE(j.contains("config"));
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(lab({}).code, 1);
  EXPECT_EQ(lab({"frobnicate"}).code, 1);
  const auto bogus = lab({"generate", "--bogus", "--prompt", "x"});
  EXPECT_EQ(bogus.code, 1);
  EXPECT_NE(bogus.err.find("--bogus"), std::string::npos) << bogus.err;
  const auto bogus2 = lab({"eval-exist", "--model", model(), "--scenes", scenes(), "--betta", "0.1"});
  EXPECT_EQ(bogus2.code, 1);
  EXPECT_NE(bogus2.err.find("--betta"), std::string::npos) << bogus2.err;
  EXPECT_EQ(lab({"generate", "--model", model(), "--scenes", scenes(), "--prompt", "x", "--lambda", "2"}).code, 1);
  EXPECT_EQ(lab({"generate", "--model", model(), "--scenes", scenes(), "--prompt", "x", "--beta", "-1"}).code, 1);
  EXPECT_EQ(lab({"generate", "--model", model(), "--scenes", scenes(), "--prompt", "x", "--guidance", "psychic"}).code, 1);
  EXPECT_EQ(lab({"generate", "--model", model(), "--prompt", "x"}).code, 1);
  EXPECT_EQ(lab({"make-scenes", "--n", "3", "--sampling", "odd", "--out", path("s.json")}).code, 1);
  EXPECT_EQ(lab({"make-model", "--kind", "huge", "--out", path("m.bin")}).code, 1);
  EXPECT_EQ(lab({"--help"}).code, 0);
}

TEST_F(Cli, RuntimeErrorsExitTwo) {
  EXPECT_EQ(lab({"generate", "--model", path("missing.bin"), "--patches", "dog", "--prompt", "x"}).code, 2);
  EXPECT_EQ(lab({"eval-exist", "--model", model(), "--scenes", path("missing.json")}).code, 2);
  EXPECT_EQ(lab({"make-scenes", "--max-objects", "40", "--out", path("s.json")}).code, 2);
}

TEST_F(Cli, BinaryExitCodes) {
  const std::string bin = VGA_LAB_PATH;
  auto sh = [&](const std::string& args) {
    const int st = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(st);
  };
  EXPECT_EQ(sh("profile-bos --model " + model() + " --scenes " + scenes()), 0);
  EXPECT_EQ(sh("generate --nope"), 1);
  EXPECT_EQ(sh("generate --model " + path("missing.bin") + " --patches dog --prompt x"), 2);
}
