#include "srkd/cli.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace srkd;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig =
    "seed = 2\n"
    "scene.points_per_scene = 256\n"
    "data.n_train = 8\n"
    "data.n_val = 4\n"
    "data.n_fixed = 128\n"
    "model.teacher_widths = 6, 8, 16, 16\n"
    "teacher.epochs = 1\n"
    "teacher.batch_size = 4\n"
    "train.epochs = 1\n"
    "train.batch_size = 4\n"
    "sampler.k = 2\n"
    "sampler.n_point = 16\n"
    "sampler.n_voxel = 4\n"
    "sweep.n_seeds = 1\n"
    "noise.trials = 2\n";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(const std::string& command, const fs::path& dir, bool corrupt = false) {
  {
    std::ofstream cfg(dir / "tiny.cfg");
    cfg << kTinyConfig;
  }
  CliOptions o;
  o.command = command;
  o.config_path = (dir / "tiny.cfg").string();
  o.out_dir = dir / "out";
  o.corrupt_gradient = corrupt;
  std::ostringstream out, err;
  const int code = run_command(o, out, err);
  return {code, out.str(), err.str()};
}

std::size_t data_rows(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++n;
  return n - 1;  // header
}

}  // namespace

TEST(Cli, CommandList) {
  EXPECT_EQ(cli_commands().size(), 10u);
  const auto dir = testutil::scratch_dir("cli");
  const Outcome r = run("fly", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "config_error");
}

TEST(Cli, GenerateIsDeterministicAndConservesHistogram) {
  const auto a = testutil::scratch_dir("a"), b = testutil::scratch_dir("b");
  ASSERT_EQ(run("generate", a).code, 0);
  ASSERT_EQ(run("generate", b).code, 0);
  const auto manifest = nlohmann::json::parse(slurp(a / "out" / "manifest.json"));
  EXPECT_EQ(slurp(a / "out" / "manifest.json"), slurp(b / "out" / "manifest.json"));
  std::vector<std::size_t> train(8, 0);
  for (const auto& f : manifest.at("train_files")) {
    const std::string rel = f.get<std::string>();
    EXPECT_EQ(slurp(a / "out" / rel), slurp(b / "out" / rel)) << rel;
    const auto h = class_histogram(read_cloud(a / "out" / rel));
    for (std::size_t k = 0; k < h.size(); ++k) train[k] += h[k];
  }
  EXPECT_EQ(manifest.at("train_files").size(), 8u);
  EXPECT_EQ(manifest.at("val_files").size(), 4u);
  const auto hist = manifest.at("class_histogram");
  EXPECT_EQ(hist.at("train").get<std::vector<std::size_t>>(), train);
  std::size_t total = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(hist.at("total")[k].get<std::size_t>(), hist.at("train")[k].get<std::size_t>() + hist.at("val")[k].get<std::size_t>());
    total += hist.at("total")[k].get<std::size_t>();
  }
  EXPECT_EQ(total, 12u * 256u);
  EXPECT_TRUE(fs::exists(a / "out" / "config.txt"));
}

TEST(Cli, TrainWithoutTeacherFails) {
  const auto dir = testutil::scratch_dir("cli");
  const Outcome r = run("train", dir);
  EXPECT_NE(r.code, 0);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j.at("error"), "train-teacher-first");
  EXPECT_FALSE(j.at("message").get<std::string>().empty());
}

TEST(Cli, GradcheckPassesAndCatchesCorruption) {
  const auto dir = testutil::scratch_dir("cli");
  const Outcome good = run("gradcheck", dir);
  EXPECT_EQ(good.code, 0) << good.err;
  const auto j = nlohmann::json::parse(good.out);
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_EQ(j.at("max_rel_error").size(), 7u);
  const Outcome bad = run("gradcheck", dir, true);
  EXPECT_NE(bad.code, 0);
  EXPECT_FALSE(nlohmann::json::parse(bad.out).at("passed").get<bool>());
  EXPECT_EQ(nlohmann::json::parse(bad.err).at("error"), "gradcheck_failed");
}

TEST(Cli, TeacherTrainEvalAndTables) {
  const auto dir = testutil::scratch_dir("cli");
  ASSERT_EQ(run("train-teacher", dir).code, 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "teacher.ckpt"));
  const std::string teacher_bytes = slurp(dir / "out" / "teacher.ckpt");
  const Outcome train = run("train", dir);
  ASSERT_EQ(train.code, 0) << train.err;
  for (const char* f : {"student.ckpt", "train_log.jsonl", "val_log.jsonl", "metrics.json", "config.txt"})
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  const Outcome ev = run("eval", dir);
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(nlohmann::json::parse(ev.out).at("mIoU"), nlohmann::json::parse(slurp(dir / "out" / "metrics.json")).at("mIoU"));

  const Outcome ab = run("ablate", dir);
  ASSERT_EQ(ab.code, 0) << ab.err;
  EXPECT_EQ(data_rows(slurp(dir / "out" / "ablation.csv")), 4u);
  const Outcome noise = run("noise", dir);
  ASSERT_EQ(noise.code, 0) << noise.err;
  EXPECT_EQ(data_rows(slurp(dir / "out" / "noise.csv")), 6u);
  EXPECT_EQ(slurp(dir / "out" / "teacher.ckpt"), teacher_bytes);
}
