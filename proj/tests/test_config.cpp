#include "srkd/config.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

using namespace srkd;

TEST(Config, DefaultsAreValid) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.experiment.student_train.batch_size, 8u);
  EXPECT_EQ(cfg.experiment.student_train.lr, 0.006);
  EXPECT_EQ(cfg.experiment.student_train.adamw.weight_decay, 0.05);
  EXPECT_EQ(cfg.noise.taus, (std::vector<double>{0.01, 0.05, 0.1, 0.5, 0.7, 1.0}));
  EXPECT_EQ(cfg.fractions, (std::vector<double>{0.05, 0.10, 0.125, 0.25, 0.5, 1.0}));
  EXPECT_EQ(cfg.dims, (std::vector<std::size_t>{32, 64, 128, 256}));
  EXPECT_EQ(cfg.experiment.n_fixed, 1024u);
  EXPECT_EQ(cfg.experiment.teacher_encoder.out_dim(), 128u);
}

TEST(Config, FormatParseRoundTrip) {
  RunConfig cfg = parse_config(
      "seed = 11\n"
      "# comment\n"
      "\n"
      "loss.lambda_c = 250   # trailing comment\n"
      "train.lr = 0.0125\n"
      "model.teacher_widths = 6, 16, 32\n"
      "noise.taus = 0, 0.3\n"
      "sweep.batch_sizes = 2, 8\n"
      "io.teacher = /tmp/t.ckpt\n");
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.experiment.student_train.loss.lambda_c, 250.0);
  EXPECT_EQ(cfg.experiment.student_train.lr, 0.0125);
  EXPECT_EQ(cfg.experiment.teacher_encoder.widths, (std::vector<std::size_t>{6, 16, 32}));
  EXPECT_EQ(cfg.noise.taus, (std::vector<double>{0.0, 0.3}));
  EXPECT_EQ(cfg.teacher_checkpoint, "/tmp/t.ckpt");
  const std::string text = format_config(cfg);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(Config, FormatCoversEveryKey) {
  const std::string text = format_config(RunConfig{});
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    seen.insert(line.substr(0, line.find(' ')));
  }
  const auto keys = config_keys();
  EXPECT_EQ(seen, std::set<std::string>(keys.begin(), keys.end()));
}

TEST(Config, HashTracksContent) {
  RunConfig a;
  RunConfig b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.experiment.student_train.loss.lambda_kd = 0.31;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, SeedPropagates) {
  const RunConfig cfg = parse_config("seed = 5\nsweep.n_seeds = 3\n");
  EXPECT_EQ(cfg.experiment.scenes.seed, 5u);
  EXPECT_EQ(cfg.experiment.seeds, (std::vector<std::uint64_t>{5, 6, 7}));
}

TEST(Config, ErrorsNameTheLine) {
  auto message_of = [](const std::string& text) -> std::string {
    try {
      parse_config(text);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Config);
      return e.what();
    }
    ADD_FAILURE() << "no error for: " << text;
    return {};
  };
  EXPECT_NE(message_of("seed = 1\nloss.lambda_q = 2\n").find("line 2"), std::string::npos);
  EXPECT_NE(message_of("\n\ntrain.lr = fast\n").find("line 3"), std::string::npos);
  EXPECT_NE(message_of("train.epochs\n").find("line 1"), std::string::npos);
  EXPECT_NE(message_of("train.epochs = -3\n").find("line 1"), std::string::npos);
  EXPECT_FALSE(message_of("loss.lambda_kd = -1\n").empty());
  EXPECT_FALSE(message_of("train.warmup_fraction = 1.5\n").empty());
}

TEST(Config, LoadFromFile) {
  const auto dir = testutil::scratch_dir("cfg");
  {
    std::ofstream out(dir / "run.cfg");
    out << "seed = 3\ndata.n_train = 12\n";
  }
  EXPECT_EQ(load_config(dir / "run.cfg").experiment.n_train, 12u);
  EXPECT_EQ(testutil::error_kind_of([&] { load_config(dir / "missing.cfg"); }), ErrorKind::Io);
}
