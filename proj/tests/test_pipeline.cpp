#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mctnet/pipeline.hpp"

using namespace mctnet;
namespace fs = std::filesystem;

namespace {

const std::string kCli = MCTNET_CLI;

// Small enough that a full generate..predict chain takes well under a second.
const std::string kTiny =
    " --eps-count 6 --t-start 0.5 --t-end 8 --t-step 0.25 --n-hidden 20 --n-features 3 --epochs 15 --threads 1";

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliRun : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mctnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string d() const { return "-d " + dir_.string(); }

  void prepare(const std::string& extra = "") {
    ASSERT_EQ(run(d() + kTiny + extra + " generate"), 0);
    ASSERT_EQ(run(d() + " split"), 0);
    ASSERT_EQ(run(d() + " train"), 0);
  }

  fs::path dir_;
};

}  // namespace

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = smoke_profile();
  c.delta = 0.7;
  c.k = 2;
  c.threshold = 0.3;
  c.split_seed = 17;
  c.train.epochs = 12;
  c.aggregation = NodeAggregation::kSum;
  const auto back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_NE(config_hash(back), config_hash(ExperimentConfig{}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(json{{"deltta", 1.0}}), ParameterError);
  EXPECT_THROW(config_from_json(json{{"delta", "one"}}), ParameterError);
  EXPECT_THROW(config_from_json(json::array()), ParameterError);
  ExperimentConfig c;
  c.t_step = 0.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = ExperimentConfig{};
  c.smoothing_width = 4;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Config, PartialDocumentKeepsBase) {
  const auto c = config_from_json(json{{"delta", 0.5}}, smoke_profile());
  EXPECT_EQ(c.delta, 0.5);
  EXPECT_EQ(c.eps_count, 50u);
}

TEST(Config, SeedFromEnvironment) {
  ExperimentConfig c;
  ::setenv("MCT_SEED", "1234", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.master_seed, 1234u);
  ::setenv("MCT_SEED", "12x", 1);
  EXPECT_THROW(apply_env_overrides(c), ParameterError);
  ::unsetenv("MCT_SEED");
}

TEST(Config, ArchitectureOrder) {
  const auto a = ExperimentConfig{}.architectures(10000);
  ASSERT_EQ(a.size(), 40u);
  EXPECT_EQ(a.front().label(), "190x40");
  EXPECT_EQ(a[3].label(), "190x10");
  EXPECT_EQ(a.back().label(), "100x10");
  EXPECT_NE(member_seed(1, 0), member_seed(1, 1));
  EXPECT_NE(member_seed(1, 0), member_kmeans_seed(1, 0));
}

TEST(Config, LongtimeRangesScaleWithDelta) {
  const auto c = smoke_profile();
  const auto r = longtime_ranges(c, 0.5);
  EXPECT_NEAR(r.long_times.back(), 99.8, 1e-9);
  EXPECT_NEAR(r.train_times.front(), 0.1, 1e-12);
  EXPECT_EQ(r.long_times.size(), longtime_ranges(c, 1.0).long_times.size());
}

TEST_F(CliRun, UsageErrors) {
  EXPECT_EQ(run(d()), 1);
  EXPECT_EQ(run(d() + " --t-step 0 generate"), 1);
  EXPECT_EQ(run(d() + " --profile nope generate"), 1);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(CliRun, MissingInputsAreDataErrors) {
  EXPECT_EQ(run(d() + " split"), 2);
  EXPECT_EQ(run(d() + " predict --k 2"), 2);
}

TEST_F(CliRun, OracleCheck) { EXPECT_EQ(run(d() + " oracle-check"), 0); }

TEST_F(CliRun, FullChainAndOutputs) {
  prepare();
  EXPECT_EQ(run(d() + " predict --k 2"), 0);
  for (const char* f : {"dataset.mctl", "split.txt", "train_losses.csv", "networks/20x3.mctn", "predict/accuracy_curve.csv",
                        "predict/prediction.json", "predict/member_summary.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  const auto pred = json::parse(slurp(dir_ / "predict/prediction.json"));
  EXPECT_EQ(pred.at("k"), 2);
  EXPECT_EQ(pred.at("k_source"), "fixed");
  EXPECT_FALSE(fs::exists(dir_ / "predict/elbow.csv"));  // no scan with a fixed k
  EXPECT_GT(pred.at("t_prime").get<double>(), 0.5);
  const auto curve = slurp(dir_ / "predict/accuracy_curve.csv");
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "t_aux,accuracy_mean,accuracy_std,n_members");
  const auto man = json::parse(slurp(dir_ / "manifest.json"));
  EXPECT_TRUE(man.at("stages").contains("predict"));
  EXPECT_TRUE(man.at("stages").at("predict").at("elbow_skipped").get<bool>());
}

TEST_F(CliRun, WeightsThresholds) {
  prepare();
  EXPECT_EQ(run(d() + " weights --threshold 1.01"), 1);
  EXPECT_EQ(run(d() + " weights --threshold 0"), 0);
  const auto w = json::parse(slurp(dir_ / "weights/weights.json"));
  EXPECT_EQ(w.at("selected_pixels"), w.at("pixel_count"));
  EXPECT_EQ(run(d() + " weights"), 0);
  const auto w7 = json::parse(slurp(dir_ / "weights/weights.json"));
  EXPECT_EQ(w7.at("threshold"), 0.7);
  EXPECT_TRUE(fs::exists(dir_ / "weights/mask_overlay_T4.00.csv"));
}

TEST_F(CliRun, MissingMemberFile) {
  prepare();
  fs::remove(dir_ / "networks/20x3.mctn");
  EXPECT_EQ(run(d() + " predict --k 2"), 2);
}

TEST_F(CliRun, TamperedDatasetFailsChecksum) {
  prepare();
  {
    std::fstream f(dir_ / "dataset.mctl", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    f.put('\x7f');
  }
  EXPECT_EQ(run(d() + " predict --k 2"), 2);
}

TEST_F(CliRun, MemberSubset) {
  ASSERT_EQ(run(d() + kTiny + " --n-hidden 18 generate"), 0);
  ASSERT_EQ(run(d() + " split"), 0);
  EXPECT_EQ(run(d() + " train --members 18x3"), 0);
  EXPECT_FALSE(fs::exists(dir_ / "networks/20x3.mctn"));
  EXPECT_TRUE(fs::exists(dir_ / "networks/18x3.mctn"));
  EXPECT_EQ(run(d() + " train --members 5x5"), 1);
}

TEST_F(CliRun, LongtimeRangeTooShort) {
  prepare();
  EXPECT_EQ(run(d() + " longtime --t-end 12"), 3);
}

TEST_F(CliRun, TransferMode) {
  prepare();
  const fs::path other = dir_ / "other";
  ASSERT_EQ(run("-d " + other.string() + kTiny + " --delta 0.8 generate"), 0);
  EXPECT_EQ(run(d() + " predict --k 2 --dataset " + (other / "dataset.mctl").string() + " --out " + (dir_ / "xfer").string()),
            0);
  const auto pred = json::parse(slurp(dir_ / "xfer/prediction.json"));
  EXPECT_TRUE(pred.at("transfer").get<bool>());
  EXPECT_EQ(pred.at("delta"), 0.8);
}

TEST_F(CliRun, DeterministicOutputs) {
  prepare();
  ASSERT_EQ(run(d() + " predict --k 2"), 0);
  const auto first = slurp(dir_ / "predict/accuracy_curve.csv");
  const auto net = slurp(dir_ / "networks/20x3.mctn");
  fs::remove_all(dir_);
  prepare();
  ASSERT_EQ(run(d() + " predict --k 2"), 0);
  EXPECT_EQ(slurp(dir_ / "predict/accuracy_curve.csv"), first);
  EXPECT_EQ(slurp(dir_ / "networks/20x3.mctn"), net);
}

TEST_F(CliRun, SeedChangesNetworks) {
  prepare();
  const auto a = slurp(dir_ / "networks/20x3.mctn");
  ASSERT_EQ(run(d() + " --seed 99 generate"), 0);
  ASSERT_EQ(run(d() + " split"), 0);
  ASSERT_EQ(run(d() + " train"), 0);
  EXPECT_NE(slurp(dir_ / "networks/20x3.mctn"), a);
}
