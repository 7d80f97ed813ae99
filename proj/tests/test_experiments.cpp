#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "conslab/experiments.hpp"

using namespace conslab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("conslab_test_" + name);
    fs::remove_all(p);
    return p;
}

Target target(std::string metric, std::string op, double lo = 0.0, double hi = 0.0) {
    Target t;
    t.metric = std::move(metric);
    t.op = std::move(op);
    t.lo = lo;
    t.hi = hi;
    return t;
}

Json read_json(const fs::path& p) {
    std::ifstream is(p);
    return Json::parse(is);
}

}  // namespace

TEST(Registry, HasAllExperimentsWithUniqueIds) {
    const auto ids = all_experiment_ids();
    ASSERT_EQ(ids.size(), 23u);
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 23u);
    EXPECT_EQ(ids.front(), "E1");
    EXPECT_EQ(ids.back(), "E23");
    for (const auto& s : registry()) {
        EXPECT_FALSE(s.name.empty()) << s.id;
        EXPECT_FALSE(s.seeds.empty()) << s.id;
        for (const auto& t : s.targets) EXPECT_NO_THROW(describe(t));
    }
    EXPECT_THROW(find_experiment("E99"), InvalidInput);
}

TEST(Registry, SweepGridsCoverTheClaimedRanges) {
    const ExperimentSpec e5 = find_experiment("E5").spec;
    ASSERT_GE(e5.etas.size(), 2u);
    EXPECT_GE(std::log10(e5.etas.back() / e5.etas.front()), 3.0 - 1e-9);
    const ExperimentSpec e6 = find_experiment("E6").spec;
    EXPECT_EQ(e6.depths.front(), 2u);
    EXPECT_EQ(e6.depths.back(), 8u);
}

TEST(Overrides, MergeAndReject) {
    const ExperimentSpec base = find_experiment("E3").spec;
    const ExperimentSpec s = apply_overrides(base, Json{{"seeds", {7}}, {"steps", 10}});
    EXPECT_EQ(s.seeds, std::vector<std::uint64_t>{7});
    EXPECT_EQ(s.steps, 10u);
    EXPECT_EQ(s.etas, base.etas);
    EXPECT_THROW(apply_overrides(base, Json{{"no_such_field", 1}}), InvalidInput);
    EXPECT_THROW(apply_overrides(base, Json{{"id", "E4"}}), InvalidInput);
    EXPECT_THROW(apply_overrides(base, Json::array()), InvalidInput);
}

TEST(SpecJson, RoundTrip) {
    for (const auto& s : registry()) {
        const Json j = s;
        const ExperimentSpec back = j.get<ExperimentSpec>();
        EXPECT_EQ(Json(back), j) << s.id;
    }
}

TEST(Targets, Operators) {
    ExperimentResult r;
    r.metrics = {{"a", 1.0}, {"b", true}, {"nan", std::nan("")}};
    evaluate_targets(r, {target("a", "<", 2.0),
                         target("a", "<=", 1.0),
                         target("a", ">", 1.0),
                         target("a", ">=", 1.0),
                         target("a", "in", 0.5, 1.5),
                         target("b", "true"),
                         target("missing", "<", 1.0),
                         target("nan", "<", 1.0)});
    const std::vector<bool> pass{true, true, false, true, true, true, false, false};
    for (std::size_t i = 0; i < pass.size(); ++i) EXPECT_EQ(r.outcomes[i].pass, pass[i]) << i;
    EXPECT_FALSE(r.outcomes[6].evaluated);
    EXPECT_FALSE(r.outcomes[7].evaluated);
    EXPECT_FALSE(r.passed());
    Target soft = target("a", ">", 5.0);
    soft.hard = false;
    evaluate_targets(r, {soft});
    EXPECT_TRUE(r.passed());
}

TEST(ParallelMap, PreservesOrderAndPropagatesErrors) {
    for (std::size_t jobs : {1u, 3u}) {
        const auto v = parallel_map(50, jobs, [](std::size_t i) { return i * i; });
        ASSERT_EQ(v.size(), 50u);
        for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(v[i], i * i);
        EXPECT_THROW(parallel_map(10, jobs,
                                  [](std::size_t i) {
                                      if (i == 7) throw InvalidInput("boom");
                                      return i;
                                  }),
                     InvalidInput);
    }
}

TEST(RunExperiment, WritesDeterministicResults) {
    const fs::path a = fresh_dir("e2a"), b = fresh_dir("e2b");
    const Json ov{{"seeds", {42, 137}}, {"steps", 50}};
    const ExperimentResult r1 = run_experiment("E2", ov, a, {1, TracePolicy::FirstSeed});
    const ExperimentResult r2 = run_experiment("E2", ov, b, {2, TracePolicy::None});
    EXPECT_TRUE(fs::exists(a / "E2" / "config.json"));
    EXPECT_TRUE(fs::exists(a / "E2" / "results.json"));
    EXPECT_EQ(r1.to_json(false), r2.to_json(false));
    const Json onfile = read_json(a / "E2" / "results.json");
    EXPECT_TRUE(onfile.contains("timing"));
    EXPECT_EQ(onfile["id"], "E2");
    EXPECT_EQ(read_json(a / "E2" / "config.json")["seeds"], Json({42, 137}));
    EXPECT_TRUE(r1.passed());
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Suite, EmptyAndReport) {
    const fs::path d = fresh_dir("suite");
    const SuiteSummary empty = run_suite({}, 1, d);
    EXPECT_TRUE(empty.rows.empty());
    EXPECT_TRUE(empty.all_passed());
    const SuiteSummary one = run_suite({"E2"}, 1, d, {1, TracePolicy::None}, {}, Json{{"seeds", {42}}, {"steps", 30}});
    ASSERT_EQ(one.rows.size(), 1u);
    EXPECT_TRUE(one.rows[0].error.empty());
    const SuiteSummary back = load_report(d);
    ASSERT_EQ(back.rows.size(), 1u);
    EXPECT_EQ(back.rows[0].id, "E2");
    EXPECT_EQ(back.rows[0].passed, one.rows[0].passed);
    EXPECT_NE(summary_markdown(back).find("E2"), std::string::npos);
    EXPECT_THROW(load_report(d / "nope"), InvalidInput);
    fs::remove_all(d);
}
