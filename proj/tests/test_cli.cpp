#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "convoy/cli.hpp"

using namespace convoy;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("convoy_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string file(const std::string& name, const std::string& text) {
        const auto p = dir / name;
        io::write_text_file(p, text);
        return p.string();
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }

    fs::path dir;
};

const char* kAnnotations =
    "frame,present,x,y,w,h\n"
    "0,1,0.1,0.1,0.6,0.6\n"
    "1,1,0.5,0.5,0.2,0.2\n"
    "2,0,,,,\n"
    "3,1,0.5,0.5,0.2,0.2\n";
const char* kPredictions =
    "frame,confidence,x,y,w,h\n"
    "0,0.9,0.1,0.1,0.6,0.6\n"
    "1,0.3,0.5,0.5,0.2,0.2\n"
    "2,0.8,0.2,0.2,0.3,0.3\n"
    "3,0.7,0.5,0.5,0.2,0.2\n";

}  // namespace

TEST_F(CliTest, MissingSubcommandIsUsageError) {
    const auto r = invoke({});
    EXPECT_EQ(r.code, cli::kUsage);
    EXPECT_NE(r.err.find("eval"), std::string::npos);
    EXPECT_EQ(invoke({"frobnicate"}).code, cli::kUsage);
    EXPECT_EQ(invoke({"--help"}).code, cli::kOk);
}

TEST_F(CliTest, EvalNeedsExactlyOneThresholdMode) {
    const auto a = file("a.csv", kAnnotations), p = file("p.csv", kPredictions);
    EXPECT_EQ(invoke({"eval", "--annotations", a, "--predictions", p}).code, cli::kUsage);
    EXPECT_EQ(invoke({"eval", "--annotations", a, "--predictions", p, "--threshold", "0.5", "--auto-threshold"}).code,
              cli::kUsage);
    EXPECT_EQ(invoke({"eval", "--annotations", a, "--predictions", p, "--threshold", "1.5"}).code, cli::kUsage);
}

TEST_F(CliTest, EvalTableMatchesLibrary) {
    const auto a = file("a.csv", kAnnotations), p = file("p.csv", kPredictions);
    const auto r = invoke({"eval", "--annotations", a, "--predictions", p, "--threshold", "0.5", "--report-dir",
                        path("report")});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const auto results = eval::classify_frames(io::parse_annotations(kAnnotations),
                                               io::parse_predictions(kPredictions), 0.5);
    const auto table = eval::render_metrics_table(eval::metrics_summary(results));
    EXPECT_NE(r.out.find(table), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("threshold  0.500000"), std::string::npos);
    for (const char* f : {"metrics.csv", "area_counts.csv", "center_bias.csv", "negative_runs.csv", "tracks.csv"}) {
        EXPECT_TRUE(fs::exists(dir / "report" / f)) << f;
    }
    EXPECT_EQ(io::read_text_file(dir / "report" / "metrics.csv"),
              eval::metrics_csv(eval::metrics_summary(results)));
}

TEST_F(CliTest, EvalAutoThreshold) {
    const auto a = file("a.csv", kAnnotations), p = file("p.csv", kPredictions);
    // at 0.9 precision is 1 and recall 1/3; lower thresholds let in the FP at 0.8
    const auto r = invoke({"eval", "--annotations", a, "--predictions", p, "--auto-threshold", "--min-precision", "1"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_NE(r.out.find("threshold  0.900000"), std::string::npos) << r.out;
    const auto none = file("none.csv", "frame,confidence,x,y,w,h\n0,0,,,,\n1,0,,,,\n2,0.8,0.2,0.2,0.3,0.3\n3,0,,,,\n");
    EXPECT_EQ(invoke({"eval", "--annotations", a, "--predictions", none, "--auto-threshold"}).code, cli::kData);
}

TEST_F(CliTest, DataErrorsWriteNothing) {
    const auto a = file("a.csv", kAnnotations);
    const auto p = file("p.csv", "frame,confidence,x,y,w,h\n0,0.9,0.9,0.9,0.3,0.3\n");
    const auto r = invoke({"eval", "--annotations", a, "--predictions", p, "--threshold", "0.5", "--report-dir",
                        path("report")});
    EXPECT_EQ(r.code, cli::kData);
    EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(dir / "report"));
    EXPECT_EQ(invoke({"eval", "--annotations", path("missing.csv"), "--predictions", p, "--threshold", "0.5"}).code,
              cli::kData);

    const auto cfg = file("bad.cfg", "sim.duration = 1\nsim.bogus = 2\n");
    const auto s = invoke({"sim", "--config", cfg, "--out", path("trace.csv")});
    EXPECT_EQ(s.code, cli::kData);
    EXPECT_NE(s.err.find("line 2"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "trace.csv"));
}

TEST_F(CliTest, SimIsDeterministicAndFeedsMdpm) {
    const auto cfg = file("short.cfg", "sim.duration = 4\n");
    const auto r1 = invoke({"sim", "--config", cfg, "--seed", "3", "--out", path("t1.csv"), "--frames-out", path("f")});
    const auto r2 = invoke({"sim", "--config", cfg, "--seed", "3", "--out", path("t2.csv")});
    ASSERT_EQ(r1.code, cli::kOk) << r1.err;
    ASSERT_EQ(r2.code, cli::kOk) << r2.err;
    EXPECT_EQ(io::read_text_file(path("t1.csv")), io::read_text_file(path("t2.csv")));
    EXPECT_NE(r1.out.find("ticks 200"), std::string::npos);
    EXPECT_NE(r1.out.find("frames 60"), std::string::npos);

    const auto m = invoke({"mdpm", "--frames", path("f"), "--fps", "15", "--out", path("pred.csv")});
    ASSERT_EQ(m.code, cli::kOk) << m.err;
    const auto preds = io::parse_predictions(io::read_text_file(path("pred.csv")));
    ASSERT_EQ(preds.size(), 60u);
    std::size_t hits = 0;
    for (const auto& p : preds) hits += p.box.has_value();
    EXPECT_GT(hits, 30u);
    EXPECT_EQ(invoke({"mdpm", "--frames", path("nowhere"), "--out", path("x.csv")}).code, cli::kData);
}

TEST_F(CliTest, ServoSim) {
    const auto cfg = file("s.cfg", "sim.duration = 6\ndetector_noise.enabled = false\n");
    const auto r = invoke({"servo-sim", "--config", cfg, "--out", path("cmd.csv")});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_NE(r.out.find("final_half_hold_fraction"), std::string::npos);
    const auto lines = io::split_lines(io::read_text_file(path("cmd.csv")));
    EXPECT_EQ(lines.size(), 61u);  // header + 10 Hz for 6 s
}

TEST_F(CliTest, BinaryExitCodes) {
    const std::string bin = CONVOY_CLI_PATH;
    auto status = [](const std::string& cmd) {
        const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    EXPECT_EQ(status(bin), cli::kUsage);
    EXPECT_EQ(status(bin + " --help"), cli::kOk);
    EXPECT_EQ(status(bin + " eval --annotations /nonexistent --predictions /nonexistent --threshold 0.5"), cli::kData);
}
