#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "teleqa/features.hpp"
#include "teleqa/model_io.hpp"
#include "teleqa/pipeline.hpp"

namespace {

using namespace teleqa;
namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("teleqa_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the binary through the shell so env prefixes and redirection work.
  RunResult run(const std::string& args, const std::string& env = "") {
    auto out_path = dir_ / "stdout.txt";
    auto err_path = dir_ / "stderr.txt";
    std::string cmd = "cd " + dir_.string() + " && " + env + (env.empty() ? "" : " ") +
                      TELEQA_CLI_PATH + " " + args + " >" + out_path.string() + " 2>" +
                      err_path.string();
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpExitsZeroAndListsFlagsWithDefaults) {
  auto top = run("--help");
  EXPECT_EQ(top.exit_code, 0);
  for (const char* sub : {"synth", "extract", "predict", "train", "qmap", "study"})
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;

  auto ex = run("extract --help");
  EXPECT_EQ(ex.exit_code, 0);
  EXPECT_NE(ex.out.find("--stream"), std::string::npos);
  EXPECT_NE(ex.out.find("--seed"), std::string::npos);
  EXPECT_NE(ex.out.find("[7]"), std::string::npos) << "defaults are listed";
  EXPECT_NE(ex.out.find("[8]"), std::string::npos) << "clip_len default";
}

TEST_F(CliTest, UnknownFlagExitsTwo) {
  EXPECT_EQ(run("synth --bogus 3").exit_code, 2);
  EXPECT_EQ(run("study consistency --no-such-flag").exit_code, 2);
}

TEST_F(CliTest, ExtractCountsRecordsAndIsIdempotent) {
  ASSERT_EQ(run("synth --out s --width 32 --height 32 --frames 16 --seed 3").exit_code, 0);
  ASSERT_EQ(run("extract --stream s --out a.cache").exit_code, 0);
  ASSERT_EQ(run("extract --stream s --out b.cache").exit_code, 0);
  EXPECT_EQ(slurp(dir_ / "a.cache"), slurp(dir_ / "b.cache"));

  auto records = cache_read((dir_ / "a.cache").string());
  int frames = 0, clips = 0, audio = 0;
  for (const auto& r : records) {
    if (r.modality == Modality::frame) ++frames;
    if (r.modality == Modality::clip) ++clips;
    if (r.modality == Modality::audio) ++audio;
  }
  EXPECT_EQ(frames, 16);
  EXPECT_EQ(clips, 2) << "16 frames at the default clip length 8";
  EXPECT_EQ(audio, 0) << "stream has no audio track";
}

TEST_F(CliTest, MissingManifestExitsOne) {
  fs::create_directories(dir_ / "empty");
  auto r = run("extract --stream empty --out x.cache");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST_F(CliTest, PredictVideoOnlyHoldsAudioAtDefaultAndMatchesOffline) {
  save_model((dir_ / "w").string(), make_toy_model(7));
  ASSERT_EQ(run("synth --out s --width 32 --height 32 --frames 10 --distort blur:0.5 --seed 4")
                .exit_code,
            0);
  ASSERT_EQ(run("predict --stream s --weights w --out on.csv").exit_code, 0);
  ASSERT_EQ(run("predict --stream s --weights w --out off.csv --offline").exit_code, 0);

  auto on = slurp(dir_ / "on.csv");
  EXPECT_NE(on.find("t,S_v,S_a,S_av,flag_v,flag_a"), std::string::npos);
  std::istringstream lines(on);
  std::string line;
  std::getline(lines, line);
  int steps = 0;
  while (std::getline(lines, line)) {
    EXPECT_NE(line.find(",3,"), std::string::npos) << "S_a stays at the 3.0 default: " << line;
    EXPECT_NE(line.rfind(",default"), std::string::npos) << line;
    ++steps;
  }
  EXPECT_EQ(steps, 10);

  // The reference path reproduces the online trace through the same printer.
  EXPECT_EQ(on, slurp(dir_ / "off.csv"));
}

TEST_F(CliTest, EmptyStreamExitsTwoWithNoPackets) {
  Stream empty;
  empty.width = 32;
  empty.height = 32;
  empty.fps = 4.0;
  store_stream(empty, dir_ / "s");
  save_model((dir_ / "w").string(), make_toy_model(7));
  auto r = run("predict --stream s --weights w --out t.csv");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("no packets"), std::string::npos);
}

TEST_F(CliTest, SeedMakesOutputsBitIdentical) {
  ASSERT_EQ(run("synth --out a --frames 6 --sample-rate 2000 --seed 11").exit_code, 0);
  ASSERT_EQ(run("synth --out b --frames 6 --sample-rate 2000 --seed 11").exit_code, 0);
  ASSERT_EQ(run("synth --out c --frames 6 --sample-rate 2000 --seed 12").exit_code, 0);
  EXPECT_EQ(slurp(dir_ / "a/frames.f32"), slurp(dir_ / "b/frames.f32"));
  EXPECT_EQ(slurp(dir_ / "a/audio.f32"), slurp(dir_ / "b/audio.f32"));
  EXPECT_NE(slurp(dir_ / "a/frames.f32"), slurp(dir_ / "c/frames.f32"));
}

TEST_F(CliTest, ConfigFileOverridesFlagsAndComesFromEnv) {
  ASSERT_EQ(run("synth --out s --width 32 --height 32 --frames 8 --seed 3").exit_code, 0);
  {
    std::ofstream cfg(dir_ / "cfg.json");
    cfg << R"({"seed": 5})";
  }
  // seed 5 from the config wins over --seed 9.
  ASSERT_EQ(run("extract --stream s --out flag.cache --seed 5").exit_code, 0);
  ASSERT_EQ(run("extract --stream s --out cfg.cache --seed 9 --config cfg.json").exit_code, 0);
  ASSERT_EQ(run("extract --stream s --out env.cache --seed 9", "TELEQA_CONFIG=cfg.json").exit_code,
            0);
  ASSERT_EQ(run("extract --stream s --out plain9.cache --seed 9").exit_code, 0);
  EXPECT_EQ(slurp(dir_ / "flag.cache"), slurp(dir_ / "cfg.cache"));
  EXPECT_EQ(slurp(dir_ / "flag.cache"), slurp(dir_ / "env.cache"));
  EXPECT_NE(slurp(dir_ / "flag.cache"), slurp(dir_ / "plain9.cache"));
}

TEST_F(CliTest, UnknownOrInvalidConfigKeysExitTwo) {
  ASSERT_EQ(run("synth --out s --frames 4 --seed 3").exit_code, 0);
  {
    std::ofstream cfg(dir_ / "bad.json");
    cfg << R"({"sedd": 5})";
  }
  auto r = run("extract --stream s --out x.cache --config bad.json");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("unknown config key: sedd"), std::string::npos);

  {
    std::ofstream cfg(dir_ / "frozen.json");
    cfg << R"({"fusion": [1.0, 0.0, 0.0, 0.0]})";
  }
  EXPECT_EQ(run("extract --stream s --out x.cache --config frozen.json").exit_code, 2);
}

TEST_F(CliTest, TrainWritesLoadableBundleAndLossLog) {
  {
    std::ofstream cfg(dir_ / "cfg.json");
    cfg << R"({"clip_len": 4, "train": {"epochs": 2, "head_epochs": 2, "joint_epochs": 1,
               "batch_size": 4, "video_steps": 6, "audio_steps": 6}})";
  }
  auto r = run("train --synthetic 6 --out w --loss-log loss.txt --config cfg.json --seed 2");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "w/model.json"));
  EXPECT_TRUE(fs::exists(dir_ / "w/weights.f32"));
  EXPECT_FALSE(slurp(dir_ / "loss.txt").empty());

  auto model = load_model((dir_ / "w").string());  // throws on a broken bundle
  EXPECT_EQ(model.clip_extractor.clip_len, 4);

  EXPECT_EQ(run("train --out w2").exit_code, 2) << "needs --corpus or --synthetic";
}

TEST_F(CliTest, QmapWritesPgmAndCacheCells) {
  ASSERT_EQ(run("synth --out s --width 32 --height 32 --frames 4 --seed 6").exit_code, 0);
  ASSERT_EQ(run("qmap --stream s --frame 2 --grid 4x4 --out qm --seed 6").exit_code, 0);

  auto pgm = slurp(dir_ / "qm.pgm");
  EXPECT_EQ(pgm.substr(0, 11), "P5\n4 4\n255\n");
  EXPECT_EQ(pgm.size(), 11 + 16u);
  auto qm = load_quality_map((dir_ / "qm.cache").string());
  EXPECT_EQ(qm.rows * qm.cols, 16);

  auto bad = run("qmap --stream s --grid 9x9 --out qbad --seed 6");
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_NE(bad.err.find("grid exceeds feature resolution"), std::string::npos);
  EXPECT_EQ(run("qmap --stream s --frame 7 --grid 2x2 --out qoob --seed 6").exit_code, 2)
      << "frame index outside the stream";
}

TEST_F(CliTest, StudyRecoverAndConsistencyAreDeterministic) {
  {
    std::ofstream ratings(dir_ / "ratings.csv");
    ratings << "video_id,subject_id,rating,session,is_golden,is_repeat\n";
    Rng rng(40);
    for (int v = 0; v < 8; ++v) {
      double psi = 1.4 + 0.45 * v;
      for (int s = 0; s < 6; ++s) {
        double u = clamp(psi + 0.1 * (s - 2.5) + 0.15 * rng.normal(), 1.0, 5.0);
        ratings << "v" << v << ",s" << s << "," << u << ",1,0,0\n";
      }
    }
  }
  auto rec = run("study recover --ratings ratings.csv --out report.txt");
  ASSERT_EQ(rec.exit_code, 0) << rec.err;
  auto report = slurp(dir_ / "report.txt");
  EXPECT_NE(report.find("video_id,psi"), std::string::npos);
  EXPECT_NE(report.find("subject_id,delta,nu"), std::string::npos);

  auto c1 = run("study consistency --ratings ratings.csv --splits 50 --seed 3");
  auto c2 = run("study consistency --ratings ratings.csv --splits 50 --seed 3");
  ASSERT_EQ(c1.exit_code, 0) << c1.err;
  EXPECT_EQ(c1.out, c2.out);
  EXPECT_NE(c1.out.find("mean SRCC over 50 random splits:"), std::string::npos);
  EXPECT_EQ(c1.out.find('\n'), c1.out.size() - 1) << "exactly one line";

  EXPECT_EQ(run("study recover --ratings missing.csv").exit_code, 1);
}

}  // namespace
