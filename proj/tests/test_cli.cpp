#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "conslab/cli.hpp"

using namespace conslab;
namespace fs = std::filesystem;

namespace {

cli::ParseOutcome parse(std::vector<const char*> args) {
    args.insert(args.begin(), "conslab");
    std::ostringstream out, err;
    return cli::parse(static_cast<int>(args.size()), args.data(), out, err);
}

}  // namespace

TEST(CliParse, SuiteAll) {
    const auto r = parse({"suite", "all", "--out", "runs/", "--jobs", "4"});
    ASSERT_TRUE(r.command);
    EXPECT_EQ(r.command->sub, "suite");
    EXPECT_EQ(r.command->ids, std::vector<std::string>{"all"});
    EXPECT_EQ(r.command->out, "runs/");
    EXPECT_EQ(r.command->jobs, 4u);
}

TEST(CliParse, ExperimentWithSeeds) {
    const auto r = parse({"experiment", "E5", "--seeds", "42,137", "--out", "runs/"});
    ASSERT_TRUE(r.command);
    EXPECT_EQ(r.command->sub, "experiment");
    EXPECT_EQ(r.command->ids, std::vector<std::string>{"E5"});
    const Json ov = cli::detail_cli::experiment_overrides(*r.command);
    EXPECT_EQ(ov["seeds"], Json({42, 137}));
}

TEST(CliParse, PredictAndEtaGrid) {
    const auto r = parse({"predict", "--spectrum", "spec.json", "--eta-grid", "1e-4:3e-1:12"});
    ASSERT_TRUE(r.command);
    EXPECT_EQ(r.command->spectrum, "spec.json");
    const Vector g = cli::parse_eta_grid(r.command->eta_grid);
    ASSERT_EQ(g.size(), 12u);
    EXPECT_NEAR(g.front(), 1e-4, 1e-18);
    EXPECT_NEAR(g.back(), 3e-1, 1e-14);
    EXPECT_EQ(cli::parse_eta_grid("0.1,0.2"), (Vector{0.1, 0.2}));
    EXPECT_THROW(cli::parse_eta_grid("1:2"), InvalidInput);
}

TEST(CliParse, UsageErrorsExitTwo) {
    EXPECT_EQ(parse({"train", "--no-such-flag"}).exit_code, cli::kUsage);
    EXPECT_FALSE(parse({"predict"}).command);
    EXPECT_EQ(parse({"predict"}).exit_code, cli::kUsage);
    EXPECT_EQ(parse({"frobnicate"}).exit_code, cli::kUsage);
}

TEST(CliExecute, PredictWritesCsv) {
    const fs::path dir = fs::temp_directory_path() / "conslab_cli_predict";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "spec.json");
        os << R"({"lambdas": [2.0, 0.5, 0.01], "coeffs": [0.5, 0.3, 0.2], "steps": 500})";
    }
    const std::string spec = (dir / "spec.json").string(), out = (dir / "out").string();
    const auto r = parse({"predict", "--spectrum", spec.c_str(), "--eta-grid", "1e-4:1e-1:5", "--out", out.c_str()});
    ASSERT_TRUE(r.command);
    std::ostringstream o, e;
    EXPECT_EQ(cli::execute(*r.command, o, e), cli::kOk);
    std::ifstream csv(dir / "out" / "predict.csv");
    std::string line;
    std::size_t rows = 0;
    std::getline(csv, line);
    EXPECT_EQ(line, "eta,G,G_stable,local_beta,unstable_modes");
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 5u);
    // missing spectrum file: runtime error
    const auto bad = parse({"predict", "--spectrum", "/nonexistent.json", "--out", out.c_str()});
    EXPECT_EQ(cli::execute(*bad.command, o, e), cli::kRuntime);
    fs::remove_all(dir);
}

TEST(CliExecute, ReportAndTrain) {
    const fs::path dir = fs::temp_directory_path() / "conslab_cli_report";
    fs::remove_all(dir);
    const std::string out = dir.string();
    std::ostringstream o, e;
    const auto exp = parse({"experiment", "E2", "--seeds", "42", "--steps", "30", "--out", out.c_str()});
    ASSERT_TRUE(exp.command);
    EXPECT_EQ(cli::execute(*exp.command, o, e), cli::kOk);
    const auto rep = parse({"report", out.c_str()});
    ASSERT_TRUE(rep.command);
    std::ostringstream ro;
    EXPECT_EQ(cli::execute(*rep.command, ro, e), cli::kOk);
    EXPECT_NE(ro.str().find("E2"), std::string::npos);
    const std::string tdir = (dir / "train").string();
    const auto tr = parse({"train", "--n", "30", "--widths", "4,8,3", "--steps", "20",
                           "--out", tdir.c_str()});
    ASSERT_TRUE(tr.command);
    EXPECT_EQ(cli::execute(*tr.command, o, e), cli::kOk);
    EXPECT_TRUE(fs::exists(dir / "train" / "trace.csv"));
    EXPECT_TRUE(fs::exists(dir / "train" / "drift.json"));
    fs::remove_all(dir);
}
