#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mmfusion/cli.hpp"
#include "mmfusion/data.hpp"

using namespace mmfusion;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mmfusion_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  static std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
  }

  // Small dataset pair for train/eval/compare.
  void make_tiny_data() {
    const auto spec = write("synth.cfg",
                            "synth.videos = 60\nsynth.val_count = 20\nsynth.classes = 4\n"
                            "synth.visual_dim = 6\nsynth.audio_dim = 3\nsynth.max_frames = 6\n");
    ASSERT_EQ(run({"gen", "--spec", spec, "--train-out", path("train.mmfv"), "--val-out",
                   path("val.mmfv")})
                  .code,
              0);
  }

  std::string tiny_train_config(const std::string& extra = "") const {
    return write("train.cfg",
                 "fusion.o = 8\nfusion.k = 2\nagg.dbof_dim = 10\nagg.frames = 4\n"
                 "train.batch_size = 4\ntrain.max_steps = 10\ntrain.eval_every = 5\n" + extra);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenDefaultsAndDeterminism) {
  ASSERT_EQ(run({"gen", "--out", path("a.mmfv")}).code, 0);
  ASSERT_EQ(run({"gen", "--out", path("b.mmfv")}).code, 0);
  const auto h = read_dataset_header(path("a.mmfv"));
  EXPECT_EQ(h.video_count, 2500u);
  EXPECT_EQ(h.visual_dim, 32u);
  EXPECT_EQ(h.audio_dim, 8u);
  EXPECT_EQ(h.classes, 10u);
  EXPECT_EQ(slurp(path("a.mmfv")), slurp(path("b.mmfv")));
}

TEST_F(CliTest, GenSplitsTail) {
  make_tiny_data();
  EXPECT_EQ(read_dataset_header(path("train.mmfv")).video_count, 40u);
  EXPECT_EQ(read_dataset_header(path("val.mmfv")).video_count, 20u);
}

TEST_F(CliTest, GenMissingSpecFails) {
  const auto r = run({"gen", "--spec", path("nope.cfg"), "--out", path("x.mmfv")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("x.mmfv")));
}

TEST_F(CliTest, GenUnknownKeyIsNamed) {
  const auto spec = write("bad.cfg", "synth.vidoes = 10\n");
  const auto r = run({"gen", "--spec", spec, "--out", path("x.mmfv")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("synth.vidoes"), std::string::npos);
}

TEST_F(CliTest, TrainWritesCheckpointAndLog) {
  make_tiny_data();
  const auto r = run({"train", "--config", tiny_train_config(), "--data", path("train.mmfv"),
                      "--val", path("val.mmfv"), "--out", path("m.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("m.ckpt")));
  const std::string log = slurp(path("m.ckpt.log"));
  EXPECT_EQ(log, r.out);
  std::istringstream lines(log);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 3);
  }
  EXPECT_EQ(rows, 2);
}

TEST_F(CliTest, TrainEachFusionKind) {
  make_tiny_data();
  for (const char* kind : {"mfb", "concat", "fc_concat", "video_only", "audio_only"}) {
    const auto r = run({"train", "--config", tiny_train_config(std::string("fusion.kind = ") + kind + "\n"),
                        "--data", path("train.mmfv"), "--val", path("val.mmfv"), "--out",
                        path("m.ckpt"), "--log", path("m.tsv")});
    EXPECT_EQ(r.code, 0) << kind << ": " << r.err;
  }
}

TEST_F(CliTest, TrainInvalidKeyAndValue) {
  make_tiny_data();
  auto r = run({"train", "--config", tiny_train_config("fusion.rank = 3\n"), "--data",
                path("train.mmfv"), "--val", path("val.mmfv"), "--out", path("m.ckpt")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("fusion.rank"), std::string::npos);
  r = run({"train", "--config", tiny_train_config("fusion.kind = tensor\n"), "--data",
           path("train.mmfv"), "--val", path("val.mmfv"), "--out", path("m.ckpt")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("tensor"), std::string::npos);
}

TEST_F(CliTest, EvalFormatAndDimensionMismatch) {
  make_tiny_data();
  ASSERT_EQ(run({"train", "--config", tiny_train_config(), "--data", path("train.mmfv"), "--val",
                 path("val.mmfv"), "--out", path("m.ckpt")})
                .code,
            0);
  const auto r = run({"eval", "--ckpt", path("m.ckpt"), "--data", path("val.mmfv")});
  ASSERT_EQ(r.code, 0) << r.err;
  double gap = -1, loss = -1;
  ASSERT_EQ(std::sscanf(r.out.c_str(), "gap=%lf loss=%lf", &gap, &loss), 2) << r.out;
  EXPECT_GE(gap, 0.0);
  EXPECT_LE(gap, 1.0);
  EXPECT_GT(loss, 0.0);
  EXPECT_EQ(run({"eval", "--ckpt", path("m.ckpt"), "--data", path("val.mmfv")}).out, r.out);

  const auto other = write("other.cfg", "synth.videos = 5\nsynth.visual_dim = 7\n"
                                        "synth.audio_dim = 3\nsynth.classes = 4\n");
  ASSERT_EQ(run({"gen", "--spec", other, "--out", path("other.mmfv")}).code, 0);
  const auto bad = run({"eval", "--ckpt", path("m.ckpt"), "--data", path("other.mmfv")});
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("C=6"), std::string::npos);
}

TEST_F(CliTest, GradcheckReportsEveryOperator) {
  const auto r = run({"gradcheck", "--seeds", "1"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("mfb\t"), std::string::npos);
  EXPECT_NE(r.out.find("netvlad\t"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, GradcheckPerturbationFails) {
  const auto r = run({"gradcheck", "--seeds", "1", "--perturb", "dbof"});
  EXPECT_EQ(r.code, 1);
  std::istringstream lines(r.out);
  std::string line;
  bool flagged = false;
  while (std::getline(lines, line))
    if (line.rfind("dbof\t", 0) == 0) flagged = line.find("FAIL") != std::string::npos;
  EXPECT_TRUE(flagged) << r.out;
}

TEST_F(CliTest, CompareEmitsFiveDeterministicRows) {
  make_tiny_data();
  const auto cfg = tiny_train_config("agg.kind = netvlad\n");
  const auto a = run({"compare", "--config", cfg, "--data", path("train.mmfv"), "--val",
                      path("val.mmfv"), "--log-dir", path("logs")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 5);
  for (const char* v : {"audio_only", "video_only", "concat", "fc_concat", "mfb"}) {
    EXPECT_NE(a.out.find(std::string("netvlad\t") + v + "\t"), std::string::npos) << v;
    EXPECT_TRUE(fs::exists(path("logs/netvlad_" + std::string(v) + ".tsv")));
  }
  const auto b = run({"compare", "--config", cfg, "--data", path("train.mmfv"), "--val",
                      path("val.mmfv")});
  EXPECT_EQ(a.out, b.out);
}

TEST_F(CliTest, ExecutableExitCodes) {
  const std::string exe = MMFUSION_CLI_PATH;
  EXPECT_EQ(std::system((exe + " --help > /dev/null").c_str()), 0);
  EXPECT_NE(std::system((exe + " eval --ckpt " + path("none") + " --data " + path("none") +
                         " 2> /dev/null")
                            .c_str()),
            0);
  EXPECT_NE(std::system((exe + " train 2> /dev/null").c_str()), 0);
}
