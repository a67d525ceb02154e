#include <chrono>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "gaf/errors.hpp"
#include "gaf/io.hpp"
#include "gaf/synthgen.hpp"

namespace gaf {
namespace {

namespace fs = std::filesystem;

int run_cli(std::initializer_list<std::string> args) {
  std::vector<std::string> owned{"gaf"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : owned) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gaf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // A small dataset keeps training runs to a few seconds.
  void small_data() {
    DatasetSpec spec;
    spec.num_sequences = 24;
    spec.num_eval = 8;
    spec.T = 64;
    spec.max_length = 16;
    atomic_write(dir_ / "spec.json", dataset_spec_to_json(spec));
    ASSERT_EQ(run_cli({"generate", "--spec", (dir_ / "spec.json").string(), "--out", (dir_ / "data").string()}),
              0);
  }

  fs::path write_config(int epochs, const std::string& name = "run.json") {
    nlohmann::ordered_json j{{"epochs", epochs},
                             {"train_data", "data/train.jsonl"},
                             {"eval_data", "data/eval.jsonl"},
                             {"checkpoint", "model.json"}};
    atomic_write(dir_ / name, j.dump(2));
    return dir_ / name;
  }

  fs::path dir_;
};

TEST_F(CliTest, GenerateDefaultCountsAndDeterminism) {
  ASSERT_EQ(run_cli({"generate", "--out", (dir_ / "a").string()}), 0);
  ASSERT_EQ(run_cli({"generate", "--out", (dir_ / "b").string()}), 0);
  EXPECT_EQ(count_lines(dir_ / "a" / "train.jsonl"), 200u);
  EXPECT_EQ(count_lines(dir_ / "a" / "eval.jsonl"), 50u);
  EXPECT_EQ(read_file(dir_ / "a" / "train.jsonl"), read_file(dir_ / "b" / "train.jsonl"));
  EXPECT_EQ(read_file(dir_ / "a" / "eval.jsonl"), read_file(dir_ / "b" / "eval.jsonl"));
  const auto manifest = nlohmann::json::parse(read_file(dir_ / "a" / "manifest.json"));
  EXPECT_EQ(manifest.at("command"), "generate");
  EXPECT_EQ(manifest.at("tool_version"), cli::kToolVersion);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli({"frobnicate"}), cli::kExitInput);
  EXPECT_EQ(run_cli({"train", "--config", (dir_ / "missing.json").string()}), cli::kExitInput);
  atomic_write(dir_ / "bad.json", R"({"num_sequences": 10, "num_eval": 20})");
  EXPECT_EQ(run_cli({"generate", "--spec", (dir_ / "bad.json").string(), "--out", dir_.string()}),
            cli::kExitInput);
  atomic_write(dir_ / "cfg.json", R"({"epochs": 2, "learning_rate": 1})");
  EXPECT_EQ(run_cli({"train", "--config", (dir_ / "cfg.json").string()}), cli::kExitInput);
  EXPECT_EQ(run_cli({"eval", "--ckpt", (dir_ / "none.json").string(), "--data", (dir_ / "none.jsonl").string()}),
            cli::kExitInput);
}

TEST_F(CliTest, OracleEvalSingleThreshold) {
  small_data();
  const auto out = dir_ / "oracle.json";
  ASSERT_EQ(run_cli({"eval", "--oracle", "--data", (dir_ / "data" / "eval.jsonl").string(), "--thresholds",
                     "0.5", "--out", out.string()}),
            0);
  const auto report = nlohmann::json::parse(read_file(out));
  ASSERT_EQ(report.at("map").size(), 1u);
  EXPECT_TRUE(report.at("map").contains("0.5"));
  EXPECT_EQ(report.at("avg_map").get<double>(), 1.0);
}

TEST_F(CliTest, TrainSmokeWritesMetricsAndRerunsIdentically) {
  small_data();
  const fs::path config = write_config(2);
  const auto t0 = std::chrono::steady_clock::now();
  ASSERT_EQ(run_cli({"train", "--config", config.string()}), 0);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  EXPECT_EQ(count_lines(dir_ / "model.metrics.jsonl"), 2u);
  const std::string ckpt = read_file(dir_ / "model.json");
  const std::string metrics = read_file(dir_ / "model.metrics.jsonl");

  ASSERT_EQ(run_cli({"train", "--config", config.string()}), 0);
  EXPECT_EQ(read_file(dir_ / "model.json"), ckpt);
  EXPECT_EQ(read_file(dir_ / "model.metrics.jsonl"), metrics);

  ASSERT_EQ(run_cli({"eval", "--ckpt", (dir_ / "model.json").string(), "--data",
                     (dir_ / "data" / "eval.jsonl").string()}),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "model.eval.json"));
}

TEST_F(CliTest, ExportPlotsRoundTrip) {
  small_data();
  ASSERT_EQ(run_cli({"train", "--config", write_config(2).string()}), 0);
  ASSERT_EQ(run_cli({"export-plots", "--history", (dir_ / "model.metrics.jsonl").string(), "--out-dir",
                     (dir_ / "plots").string()}),
            0);
  std::ifstream loss(dir_ / "plots" / "loss.csv");
  std::ifstream metrics(dir_ / "model.metrics.jsonl");
  std::string header;
  std::getline(loss, header);
  EXPECT_EQ(header, "epoch,stage,loss");
  for (std::string row, rec; std::getline(loss, row) && std::getline(metrics, rec);) {
    const auto j = nlohmann::json::parse(rec);
    const auto last = row.rfind(',');
    EXPECT_EQ(std::stod(row.substr(last + 1)), j.at("loss").get<double>()) << row;
  }
  EXPECT_EQ(count_lines(dir_ / "plots" / "lambda_separation.csv"), 3u);
}

TEST_F(CliTest, ExportPlotsEmptyHistory) {
  atomic_write(dir_ / "empty.jsonl", "");
  ASSERT_EQ(run_cli({"export-plots", "--history", (dir_ / "empty.jsonl").string(), "--out-dir",
                     (dir_ / "plots").string()}),
            0);
  EXPECT_EQ(count_lines(dir_ / "plots" / "loss.csv"), 1u);
  atomic_write(dir_ / "broken.jsonl", "{\"epoch\": 1}\nnot json\n");
  EXPECT_EQ(run_cli({"export-plots", "--history", (dir_ / "broken.jsonl").string(), "--out-dir",
                     (dir_ / "plots").string()}),
            cli::kExitInput);
}

TEST(ParseThresholds, ListsAndErrors) {
  EXPECT_EQ(cli::parse_thresholds("0.3,0.5"), (std::vector<double>{0.3, 0.5}));
  EXPECT_THROW(cli::parse_thresholds(""), ContractError);
  EXPECT_THROW(cli::parse_thresholds("0.5,x"), ContractError);
  EXPECT_THROW(cli::parse_thresholds("1.5"), ContractError);
}

TEST(DerivedPath, ReplacesExtension) {
  EXPECT_EQ(cli::derived_path("runs/model.json", ".metrics.jsonl"), fs::path("runs/model.metrics.jsonl"));
  EXPECT_EQ(cli::derived_path("model", ".eval.json"), fs::path("model.eval.json"));
}

}  // namespace
}  // namespace gaf
