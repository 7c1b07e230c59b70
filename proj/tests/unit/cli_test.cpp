#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "abmil/cli.hpp"
#include "abmil/errors.hpp"

namespace abmil::cli {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "abmil_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

const char* kTinyConfig = R"(seed = 4
[data]
input_dim = 4
n_train_bags = 6
n_val_bags = 4
n_test_bags = 4
instances_per_bag = 8
key_fraction = 0.25
[model]
widths = 6,4
attention_dim = 3
[train]
learning_rate = 0.01
epochs = 3
strategy = accumulate
alpha = 25
[matrix]
strategies = full_bag,accumulate
alphas = 50
repeats = 1
)";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.txt";
  std::ofstream(p) << text;
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "abmil");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

TEST(Config, SeedOnly) {
  const Config c = parse_config("seed = 17\n");
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.data.bags.seed, 17u);
  EXPECT_EQ(c.train.seed, 17u);
  EXPECT_EQ(c.model.widths, (std::vector<std::size_t>{64, 32}));
}

TEST(Config, EchoRoundTrip) {
  const Config c = parse_config(kTinyConfig);
  EXPECT_EQ(c.model.input_dim, 4u);
  EXPECT_EQ(c.train.strategy, train::Strategy::Accumulate);
  EXPECT_EQ(c.matrix.alphas, std::vector<double>{50.0});
  const std::string echo = echo_config(c);
  EXPECT_EQ(echo_config(parse_config(echo)), echo);
}

TEST(Config, UnknownKeyListsValidKeys) {
  try {
    parse_config("[train]\nlearning_rat = 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning_rat"), std::string::npos);
    EXPECT_NE(msg.find("learning_rate"), std::string::npos);
  }
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(parse_config("[data]\nkey_fraction = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nepochs = many\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nstrategy = sgd\n"), ConfigError);
  EXPECT_THROW(parse_config("[nowhere]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("[matrix]\nalphas = 0\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/abmil.conf"), IoError);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  EXPECT_EQ(run_cli({}).code, kConfigError);
  EXPECT_EQ(run_cli({"gen"}).code, kConfigError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, kConfigError);
  EXPECT_EQ(run_cli({"verify", "--scale", "huge"}).code, kConfigError);
  const auto dir = scratch("codes");
  const auto bad = write_config(dir, "[train]\nalpha = 0\n");
  EXPECT_EQ(run_cli({"gen", "--config", bad.string(), "--out", (dir / "d").string()}).code, kConfigError);
  EXPECT_EQ(run_cli({"train", "--dataset", (dir / "missing").string(), "--out", (dir / "r").string()}).code,
            kIoError);
}

TEST(Cli, GenTrainEvalFlow) {
  const auto dir = scratch("flow");
  const auto cfg = write_config(dir, kTinyConfig).string();
  const auto ds = (dir / "ds").string(), run = (dir / "run").string(), ev = (dir / "eval").string();

  auto r = run_cli({"gen", "--config", cfg, "--out", ds});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "ds" / "train.bin"));
  EXPECT_TRUE(fs::exists(dir / "ds" / "manifest.txt"));

  r = run_cli({"train", "--config", cfg, "--dataset", ds, "--out", run});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto history = lines(slurp(dir / "run" / "history.csv"));
  ASSERT_EQ(history.size(), 4u);
  // 8 instances per bag, two passes each under accumulation.
  EXPECT_NE(history[1].find(",16,"), std::string::npos) << history[1];

  r = run_cli({"eval", "--config", cfg, "--dataset", ds, "--checkpoint", (dir / "run" / "checkpoint.bin").string(),
               "--out", ev});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(slurp(dir / "eval" / "bags.csv")).size(), 5u);
  EXPECT_EQ(lines(slurp(dir / "eval" / "attention.csv")).size(), 33u);

  // The manifest is itself a loadable config.
  const Config back = load_config(dir / "run" / "manifest.txt");
  EXPECT_EQ(echo_config(back), echo_config(parse_config(kTinyConfig)));
}

TEST(Cli, FullBagHistoryAndSingleEpoch) {
  const auto dir = scratch("fullbag");
  const auto cfg = write_config(dir, kTinyConfig).string();
  const auto ds = (dir / "ds").string();
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", ds}).code, 0);
  Config c = parse_config(kTinyConfig);
  c.train.strategy = train::Strategy::FullBag;
  c.train.epochs = 1;
  std::ostringstream log;
  ASSERT_EQ(cmd_train(c, ds, dir / "run", log), 0);
  const auto history = lines(slurp(dir / "run" / "history.csv"));
  ASSERT_EQ(history.size(), 2u);
  EXPECT_NE(history[1].find(",8,"), std::string::npos) << history[1];
}

TEST(Cli, RerunIsIdenticalApartFromWallTime) {
  const auto dir = scratch("rerun");
  const auto cfg = write_config(dir, kTinyConfig).string();
  const auto ds = (dir / "ds").string();
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", ds}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--dataset", ds, "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--dataset", ds, "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "checkpoint.bin"), slurp(dir / "b" / "checkpoint.bin"));
  const auto ha = lines(slurp(dir / "a" / "history.csv"));
  const auto hb = lines(slurp(dir / "b" / "history.csv"));
  ASSERT_EQ(ha.size(), hb.size());
  for (std::size_t i = 1; i < ha.size(); ++i) {
    // Everything before the wall_ms column.
    const auto cut = [](const std::string& s) {
      std::size_t pos = 0;
      for (int k = 0; k < 4; ++k) pos = s.find(',', pos) + 1;
      return s.substr(0, pos);
    };
    EXPECT_EQ(cut(ha[i]), cut(hb[i]));
  }
}

TEST(Cli, DimensionMismatch) {
  const auto dir = scratch("mismatch");
  const auto cfg = write_config(dir, kTinyConfig).string();
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", (dir / "ds").string()}).code, 0);
  const auto other = (dir / "other.txt");
  std::ofstream(other) << "[data]\ninput_dim = 5\n";
  const auto r = run_cli({"train", "--config", other.string(), "--dataset", (dir / "ds").string(), "--out",
                          (dir / "run").string()});
  EXPECT_EQ(r.code, kConfigError);
  EXPECT_NE(r.err.find("dimension"), std::string::npos) << r.err;
}

TEST(Cli, MatrixWritesTables) {
  const auto dir = scratch("matrix");
  const auto cfg = write_config(dir, kTinyConfig).string();
  const auto r = run_cli({"matrix", "--config", cfg, "--out", (dir / "m").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(slurp(dir / "m" / "runs.csv")).size(), 3u);
  EXPECT_EQ(lines(slurp(dir / "m" / "summary.csv")).size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "m" / "manifest.txt"));
}

TEST(Cli, SeedFlagOverridesConfig) {
  const auto dir = scratch("seed");
  const auto cfg = write_config(dir, kTinyConfig).string();
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", (dir / "a").string(), "--seed", "9"}).code, 0);
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", (dir / "b").string()}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "train.bin"), slurp(dir / "b" / "train.bin"));
  EXPECT_EQ(load_config(dir / "a" / "manifest.txt").seed, 9u);
}

}  // namespace
}  // namespace abmil::cli
