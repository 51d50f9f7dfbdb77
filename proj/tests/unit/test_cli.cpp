// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "dlofdm/experiments.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "dlofdm_cli_test";

int run(const std::string& args, std::string* out = nullptr) {
    const fs::path log = kWork / "stdout.txt";
    const std::string cmd = std::string(DLOFDM_SIM_PATH) + " " + args + " > " + log.string() + " 2>" +
                            (kWork / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    if (out) {
        std::ifstream in(log);
        std::stringstream ss;
        ss << in.rdbuf();
        *out = ss.str();
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        write(kWork / "tiny.json", R"({"name": "tiny", "n_subcarriers": 16, "cp_len": 4, "n_pilots": 4,
            "n_paths": 6, "max_delay": 3, "decay_const": 2.0, "snr_grid": [10, 20], "min_bits": 20000,
            "seed": 5, "n_steps": 20, "batch_size": 16, "stats_draws": 10000,
            "variations": [{"n_paths": 3}, {"max_delay": 6}]})");
    }
    void TearDown() override { fs::remove_all(kWork); }

    std::string common() const { return "--config " + (kWork / "tiny.json").string() + " --out " + (kWork / "out").string(); }
};

}  // namespace

TEST_F(Cli, SelfTestPasses) {
    std::string out;
    EXPECT_EQ(run("selftest", &out), 0);
    EXPECT_EQ(out.find("[FAIL]"), std::string::npos);
    EXPECT_NE(out.find("[PASS]"), std::string::npos);
}

TEST_F(Cli, InvalidInvocationsExitWithTwo) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("eval --config " + (kWork / "missing.json").string()), 2);
    write(kWork / "bad.json", R"({"n_pilots": 0})");
    EXPECT_EQ(run("stats --config " + (kWork / "bad.json").string()), 2);
    write(kWork / "typo.json", R"({"cp_length": 4})");
    EXPECT_EQ(run("stats --config " + (kWork / "typo.json").string()), 2);
    EXPECT_EQ(run("eval " + common() + " --detectors ls,zf"), 2);
}

TEST_F(Cli, MissingResourcesExitWithThree) {
    EXPECT_EQ(run("eval " + common() + " --detectors dnn"), 3);
    EXPECT_EQ(run("eval " + common() + " --detectors mmse"), 3);
    EXPECT_EQ(run("robustness " + common()), 3);
    EXPECT_EQ(run("report --out " + (kWork / "nothing").string()), 3);
}

TEST_F(Cli, FullPipeline) {
    const fs::path out_dir = kWork / "out";
    ASSERT_EQ(run("stats " + common()), 0);
    EXPECT_TRUE(fs::exists(out_dir / "stats.json"));
    ASSERT_EQ(run("train " + common()), 0);
    EXPECT_TRUE(fs::exists(out_dir / "receiver" / "manifest.json"));

    std::string out;
    ASSERT_EQ(run("eval " + common() + " --snr 15 --detectors ls,mmse,dnn,perfect_csi", &out), 0);
    std::istringstream lines(out);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, dlofdm::kCsvHeader);
    int rows = 0;
    while (std::getline(lines, line)) rows += !line.empty();
    EXPECT_EQ(rows, 4);

    ASSERT_EQ(run("sweep " + common() + " --jobs 2"), 0);
    const auto results = dlofdm::read_results(out_dir / "results.csv");
    EXPECT_EQ(results.size(), 6u);
    std::ifstream first(out_dir / "results.csv");
    std::stringstream bytes;
    bytes << first.rdbuf();
    ASSERT_EQ(run("sweep " + common()), 0);
    std::ifstream second(out_dir / "results.csv");
    std::stringstream bytes2;
    bytes2 << second.rdbuf();
    EXPECT_EQ(bytes.str(), bytes2.str());

    ASSERT_EQ(run("robustness " + common()), 0);
    EXPECT_EQ(dlofdm::read_results(out_dir / "robustness.csv").size(), 4u);

    ASSERT_EQ(run("report --out " + out_dir.string() + " --detectors ls,dnn"), 0);
    EXPECT_TRUE(fs::exists(out_dir / "report" / "summary.txt"));
    std::size_t charts = 0;
    for (const auto& e : fs::directory_iterator(out_dir / "report")) charts += e.path().extension() == ".svg";
    EXPECT_EQ(charts, 3u);  // the base scenario plus two channel variations
    EXPECT_EQ(run("report --out " + out_dir.string() + " --detectors perfect_csi"), 2);
}
