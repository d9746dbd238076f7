#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rcv/io/scene_io.hpp"
#include "rcv/boxops.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

/// Runs the rcv binary with stdout and stderr captured separately.
Run rcv_cli(const std::string& args, const fs::path& cwd) {
    const fs::path err_file = cwd / "stderr.txt";
    const std::string cmd = "cd '" + cwd.string() + "' && '" RCV_CLI "' " + args + " 2>'" + err_file.string() + "'";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = rcv::io::detail::read_file(err_file);
    return r;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = rcv::io::detail::read_file(e.path());
    }
    return out;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("rcv_test_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
                                            std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

}  // namespace

TEST_F(Cli, SynthIsDeterministic) {
    ASSERT_EQ(rcv_cli("synth --scenes 10 --seed 7 --out d1", dir_).code, 0);
    ASSERT_EQ(rcv_cli("synth --scenes 10 --seed 7 --out d2", dir_).code, 0);
    const auto a = tree(dir_ / "d1");
    EXPECT_EQ(a.size(), 50u);
    EXPECT_EQ(a, tree(dir_ / "d2"));
    ASSERT_EQ(rcv_cli("synth --scenes 2 --seed 8 --out d3", dir_).code, 0);
    EXPECT_NE(tree(dir_ / "d3").at("scene_0/cloud.ply"), a.at("scene_0/cloud.ply"));
}

TEST_F(Cli, DetectReachesGroundTruth) {
    ASSERT_EQ(rcv_cli("synth --scenes 1 --seed 3 --min-objects 1 --max-objects 1 --out d", dir_).code, 0);
    const auto run = rcv_cli("detect d/scene_0 --out boxes.json", dir_);
    ASSERT_EQ(run.code, 0) << run.err;
    const auto pred = rcv::io::boxes_from_json(rcv::io::read_json_file(dir_ / "boxes.json"));
    const auto gt = rcv::io::boxes_from_json(rcv::io::read_json_file(dir_ / "d/scene_0/gt_boxes.json"));
    ASSERT_EQ(pred.size(), 1u);
    EXPECT_GE(rcv::iou3d(pred[0], gt[0]), 0.9);
}

TEST_F(Cli, EvalOfGroundTruthIsPerfect) {
    ASSERT_EQ(rcv_cli("synth --scenes 2 --seed 4 --out d", dir_).code, 0);
    fs::create_directories(dir_ / "pred");
    for (const char* s : {"scene_0", "scene_1"}) fs::copy_file(dir_ / "d" / s / "gt_boxes.json", dir_ / "pred" / (std::string(s) + ".json"));
    const auto run = rcv_cli("eval --pred pred --gt d --out report.json", dir_);
    ASSERT_EQ(run.code, 0) << run.err;
    EXPECT_NE(run.out.find("mAP (allpoint, IoU 0.15): 1.0000"), std::string::npos) << run.out;
    const auto report = rcv::io::read_json_file(dir_ / "report.json");
    EXPECT_EQ(report["mean_ap"], 1.0);
    for (const auto& c : report["classes"]) EXPECT_EQ(c["ap"], 1.0);
}

TEST_F(Cli, ErrorsAreJsonOnStderr) {
    auto run = rcv_cli("detect missing_dir --out x", dir_);
    EXPECT_NE(run.code, 0);
    auto err = nlohmann::json::parse(run.err);
    EXPECT_EQ(err["error"], "IoError");

    std::ofstream(dir_ / "bad.json") << "{\n  \"parallelism\": 2,\n  \"eval\": {\"mode\": \"R40\", \"iou\": 0.5}\n}\n";
    run = rcv_cli("eval --config bad.json --pred p --gt g", dir_);
    EXPECT_NE(run.code, 0);
    err = nlohmann::json::parse(run.err);
    EXPECT_EQ(err["error"], "ConfigError");
    EXPECT_NE(err["message"].get<std::string>().find("bad.json:3"), std::string::npos) << run.err;

    std::ofstream(dir_ / "broken.json") << "{\n  \"parallelism\": 2,\n  oops\n}\n";
    run = rcv_cli("eval --config broken.json --pred p --gt g", dir_);
    err = nlohmann::json::parse(run.err);
    EXPECT_EQ(err["error"], "ConfigError");
    EXPECT_NE(err["message"].get<std::string>().find("broken.json:3"), std::string::npos) << run.err;

    run = rcv_cli("sweep", dir_);
    EXPECT_NE(run.code, 0);
    EXPECT_EQ(nlohmann::json::parse(run.err)["error"], "UsageError");
}

TEST_F(Cli, SweepWritesCsv) {
    ASSERT_EQ(rcv_cli("synth --scenes 2 --seed 5 --out d", dir_).code, 0);
    const auto run = rcv_cli("sweep d --sigmas 0,2 --miss 0,0.5 --out sweep.csv", dir_);
    ASSERT_EQ(run.code, 0) << run.err;
    const auto csv = rcv::io::detail::read_file(dir_ / "sweep.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "jitter_sigma_px,miss_prob,mean_iou,convergence_rate,mean_steps");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}
