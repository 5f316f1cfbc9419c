#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rankmin/cli.hpp"
#include "rankmin/harness.hpp"
#include "test_support.hpp"

using namespace rankmin;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("rankmin_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    out << body;
}

fs::path write_diag_target(const fs::path& dir) {
    Dense A = Dense::Zero(3, 3);
    A.diagonal() << 3, 2, 1;
    std::ofstream out(dir / "A.txt");
    write_dense(out, A);
    return dir / "A.txt";
}

json base_config(const fs::path& target, const fs::path& out_dir) {
    return json{{"problem", {{"kind", "approx"}, {"target_file", target.string()}}},
                {"solver", {{"method", "crfdr"}, {"r", 2}}},
                {"output", {{"dir", out_dir.string()}}}};
}

int run_cli(std::initializer_list<const char*> args) {
    std::vector<const char*> argv = {"rankmin"};
    argv.insert(argv.end(), args);
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST(Config, ParsesAndValidates) {
    RunConfig cfg = parse_config(base_config("A.txt", "out"));
    EXPECT_EQ(cfg.solver.method, "crfdr");
    EXPECT_EQ(cfg.solver.params.r, 2);
    EXPECT_EQ(cfg.out_dir, "out");
}

TEST(Config, RejectsOutOfRangeBetaNamingTheRange) {
    fs::path dir = fresh_dir("badbeta");
    json j = base_config(write_diag_target(dir), "out");
    j["solver"]["beta"] = 1.5;
    spit(dir / "cfg.json", j.dump());
    try {
        execute_run(load_config((dir / "cfg.json").string()), false);
        FAIL() << "expected a validation error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("(0, 1)"), std::string::npos);
    }
}

TEST(Config, RejectsUnknownKeysAndMethods) {
    json j = base_config("A.txt", "out");
    j["solver"]["typo_field"] = 1;
    EXPECT_THROW(parse_config(j), config_error);
    json j2 = base_config("A.txt", "out");
    j2["solver"]["method"] = "sgd";
    EXPECT_THROW(parse_config(j2), config_error);
}

TEST(Run, ReachesEckartYoungOptimumAndWritesFiles) {
    fs::path dir = fresh_dir("run_ey");
    fs::path target = write_diag_target(dir);
    RunConfig cfg = parse_config(base_config(target, dir / "out"));
    RunOutput out = execute_run(cfg);
    EXPECT_NEAR(out.result.f_final, 0.5, 1e-6);
    EXPECT_TRUE(out.result.converged);
    EXPECT_TRUE(out.violations.empty());
    EXPECT_TRUE(out.census_ok);
    EXPECT_TRUE(fs::exists(out.trace_path));
    EXPECT_TRUE(fs::exists(out.summary_path));

    // summary totals equal the last trace row
    std::vector<IterateRecord> rows = read_trace_csv(out.trace_path);
    ASSERT_FALSE(rows.empty());
    EXPECT_TRUE(rows.back().counters == out.result.counters);
}

TEST(Run, IdenticalConfigsProduceIdenticalTraces) {
    fs::path dir = fresh_dir("run_det");
    json j{{"problem",
            {{"kind", "approx"}, {"m", 8}, {"n", 6}, {"data_rank", 2}, {"noise", 0.01},
             {"seed", 7}}},
           {"solver", {{"method", "crfdr"}, {"r", 2}}}};
    RunConfig a = parse_config(j);
    a.out_dir = (dir / "a").string();
    RunConfig b = parse_config(j);
    b.out_dir = (dir / "b").string();
    RunOutput ra = execute_run(a);
    RunOutput rb = execute_run(b);
    EXPECT_EQ(slurp(ra.trace_path), slurp(rb.trace_path));
    EXPECT_EQ(slurp(ra.summary_path), slurp(rb.summary_path));
}

TEST(Gen, ExactLowRankAndDeterministicFiles) {
    ProblemSpec ps;
    ps.kind = "approx";
    ps.m = 6;
    ps.n = 5;
    ps.data_rank = 2;
    ps.noise = 0.0;
    ps.seed = 3;
    GeneratedProblem g = gen_problem(ps);
    Vector sv = singular_values(g.target);
    EXPECT_LE(sv(2), 1e-12 * sv(0));

    fs::path d1 = fresh_dir("gen1"), d2 = fresh_dir("gen2");
    write_problem_files(ps, d1.string());
    write_problem_files(ps, d2.string());
    EXPECT_EQ(slurp(d1 / "A.txt"), slurp(d2 / "A.txt"));
}

TEST(Gen, FullMaskDegeneratesToApproximation) {
    ProblemSpec ps;
    ps.kind = "completion";
    ps.m = 5;
    ps.n = 4;
    ps.data_rank = 2;
    ps.mask_density = 1.0;
    ps.seed = 11;
    GeneratedProblem g = gen_problem(ps);
    ASSERT_TRUE(g.mask.has_value());
    CompletionProblem masked(g.target, *g.mask);
    ApproxProblem plain(g.target);
    Rng rng(13);
    for (int t = 0; t < 10; ++t) {
        Dense X = rng.gaussian_matrix(5, 4);
        EXPECT_DOUBLE_EQ(masked.value(X), plain.value(X));
    }
}

TEST(Gen, RejectsBadRanges) {
    ProblemSpec ps;
    ps.m = 4;
    ps.n = 4;
    ps.data_rank = 5;
    EXPECT_THROW(gen_problem(ps), config_error);
    ps.data_rank = 2;
    ps.mask_density = 0.0;
    ps.kind = "completion";
    EXPECT_THROW(gen_problem(ps), config_error);
}

TEST(Compare, ContrastsLargeScaleSvdCounts) {
    fs::path dir = fresh_dir("cmp");
    // completion instance started from the zero matrix: the first iterations
    // are rank-deficient, where the baseline pays large-scale SVDs
    json jp{{"kind", "completion"}, {"m", 8}, {"n", 6}, {"data_rank", 2},
            {"mask_density", 0.8}, {"seed", 21}};
    json j1{{"problem", jp}, {"solver", {{"method", "rfdr"}, {"r", 2}}}};
    json j2{{"problem", jp}, {"solver", {{"method", "crfdr"}, {"r", 2}}}};
    std::vector<RunConfig> cfgs = {parse_config(j1), parse_config(j2)};
    std::vector<CompareRow> rows = compare_runs(cfgs, dir.string());
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_GE(rows[0].totals.svd_large, 1);
    EXPECT_EQ(rows[1].totals.svd_large, 0);
    EXPECT_TRUE(rows[1].census_ok);
    EXPECT_TRUE(fs::exists(dir / "compare.csv"));
    EXPECT_TRUE(fs::exists(dir / "compare.txt"));
}

TEST(Compare, RejectsSingleConfigAndMismatchedProblems) {
    json jp{{"kind", "approx"}, {"m", 4}, {"n", 4}, {"data_rank", 2}, {"seed", 1}};
    json j1{{"problem", jp}, {"solver", {{"method", "crfdr"}, {"r", 2}}}};
    EXPECT_THROW(compare_runs({parse_config(j1)}, "unused", false), config_error);
    json jp2 = jp;
    jp2["seed"] = 2;
    json j2{{"problem", jp2}, {"solver", {{"method", "crfdr"}, {"r", 2}}}};
    EXPECT_THROW(compare_runs({parse_config(j1), parse_config(j2)}, "unused", false),
                 config_error);
}

TEST(Compare, IdenticalConfigsGiveIdenticalRows) {
    json jp{{"kind", "approx"}, {"m", 6}, {"n", 5}, {"data_rank", 2}, {"seed", 5}};
    json j{{"problem", jp}, {"solver", {{"method", "crfdr"}, {"r", 2}}}};
    std::vector<CompareRow> rows =
        compare_runs({parse_config(j), parse_config(j)}, "unused", false);
    EXPECT_EQ(rows[0].final_f, rows[1].final_f);
    EXPECT_TRUE(rows[0].totals == rows[1].totals);
    EXPECT_EQ(rows[0].iterations, rows[1].iterations);
}

TEST(Check, CleanTracePassesAndTamperedTraceFails) {
    fs::path dir = fresh_dir("check");
    fs::path target = write_diag_target(dir);
    RunConfig cfg = parse_config(base_config(target, dir / "out"));
    RunOutput out = execute_run(cfg);
    CheckOutcome clean = check_files(out.trace_path);
    EXPECT_TRUE(clean.violations.empty());
    EXPECT_GE(clean.records, 2);

    // raise a mid-trace objective value: Armijo and monotonicity both break
    std::vector<IterateRecord> rows = read_trace_csv(out.trace_path);
    ASSERT_GE(rows.size(), 2u);
    rows[1].f = rows[0].f + 1.0;
    write_trace_csv(out.trace_path, rows);
    CheckOutcome bad = check_files(out.trace_path);
    EXPECT_FALSE(bad.violations.empty());
}

TEST(TraceCsv, RoundTripsRecordsExactly) {
    fs::path dir = fresh_dir("csv");
    std::vector<IterateRecord> rows(3);
    rows[0] = IterateRecord{0, 0, 7.25, 1.5, 1.0, 1, 0, 2, 7.25, 0.125,
                            OpCounters{3, 1, 0, 1, 0, 1}};
    rows[1] = IterateRecord{1, 0, 6.0, 0.5, 0.5, 2, 1, 0, 6.0, 0.0625,
                            OpCounters{5, 3, 2, 3, 0, 2}};
    rows[2] = IterateRecord{2, 0, 5.9, 1e-12, 0.0, 2, 0, 0, 5.9, 0.0,
                            OpCounters{5, 4, 2, 3, 0, 2}};
    write_trace_csv((dir / "t.csv").string(), rows);
    std::vector<IterateRecord> back = read_trace_csv((dir / "t.csv").string());
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(back[i].f, rows[i].f);
        EXPECT_EQ(back[i].surrogate, rows[i].surrogate);
        EXPECT_EQ(back[i].alpha, rows[i].alpha);
        EXPECT_TRUE(back[i].counters == rows[i].counters);
    }
}

TEST(Cli, ExitCodesFollowErrorClasses) {
    fs::path dir = fresh_dir("cli");
    fs::path target = write_diag_target(dir);
    json j = base_config(target, dir / "out");
    spit(dir / "cfg.json", j.dump());
    const std::string cfg_path = (dir / "cfg.json").string();

    EXPECT_EQ(run_cli({"run", cfg_path.c_str(), "--quiet"}), exit_ok);

    // invalid parameter range -> config error
    json bad = j;
    bad["solver"]["beta"] = 1.5;
    spit(dir / "bad.json", bad.dump());
    const std::string bad_path = (dir / "bad.json").string();
    EXPECT_EQ(run_cli({"run", bad_path.c_str(), "--quiet"}), exit_config);

    // missing config file -> I/O error
    EXPECT_EQ(run_cli({"run", (dir / "missing.json").string().c_str(), "--quiet"}), exit_io);

    // offline check: clean trace passes, tampered trace exits with the solver code
    const std::string trace = (dir / "out" / "trace.csv").string();
    EXPECT_EQ(run_cli({"check", trace.c_str(), "--quiet"}), exit_ok);
    std::vector<IterateRecord> rows = read_trace_csv(trace);
    rows[1].f = rows[0].f + 1.0;
    write_trace_csv(trace, rows);
    EXPECT_EQ(run_cli({"check", trace.c_str(), "--quiet"}), exit_solver);
}

TEST(Cli, GenWritesProblemFiles) {
    fs::path dir = fresh_dir("cli_gen");
    const std::string out = dir.string();
    EXPECT_EQ(run_cli({"gen", "--kind", "completion", "--m", "6", "--n", "5", "--data-rank",
                       "2", "--mask-density", "0.5", "--seed", "9", "--out", out.c_str(),
                       "--quiet"}),
              exit_ok);
    EXPECT_TRUE(fs::exists(dir / "A.txt"));
    EXPECT_TRUE(fs::exists(dir / "mask.txt"));
    std::ifstream in(dir / "mask.txt");
    Dense mask = read_dense(in);
    for (Index i = 0; i < mask.rows(); ++i)
        for (Index j = 0; j < mask.cols(); ++j)
            EXPECT_TRUE(mask(i, j) == 0.0 || mask(i, j) == 1.0);
}

TEST(Cli, SeedOverrideChangesGeneratedProblem) {
    fs::path dir = fresh_dir("cli_seed");
    json j{{"problem",
            {{"kind", "approx"}, {"m", 6}, {"n", 5}, {"data_rank", 2}, {"seed", 1}}},
           {"solver", {{"method", "crfdr"}, {"r", 2}}},
           {"output", {{"dir", (dir / "o1").string()}}}};
    spit(dir / "cfg.json", j.dump());
    const std::string cfg = (dir / "cfg.json").string();
    const std::string o2 = (dir / "o2").string();
    EXPECT_EQ(run_cli({"run", cfg.c_str(), "--quiet"}), exit_ok);
    EXPECT_EQ(run_cli({"run", cfg.c_str(), "--seed", "2", "--out", o2.c_str(), "--quiet"}),
              exit_ok);
    EXPECT_NE(slurp(dir / "o1" / "trace.csv"), slurp(fs::path(o2) / "trace.csv"));
}

TEST(Run, StartPointFromDenseAndFactoredFiles) {
    fs::path dir = fresh_dir("x0");
    fs::path target = write_diag_target(dir);
    Dense X0 = Dense::Zero(3, 3);
    X0(0, 0) = 2.5;
    X0(1, 1) = 0.5;
    std::ofstream xf(dir / "x0.txt");
    write_dense(xf, X0);
    xf.close();
    std::ofstream ff(dir / "x0f.txt");
    write_factored(ff, svd_thin(X0));
    ff.close();

    json jd = base_config(target, dir / "od");
    jd["solver"]["x0"] = {{"file", (dir / "x0.txt").string()}};
    RunOutput dense_start = execute_run(parse_config(jd), false);
    json jf = base_config(target, dir / "of");
    jf["solver"]["x0"] = {{"factored_file", (dir / "x0f.txt").string()}};
    RunOutput factored_start = execute_run(parse_config(jf), false);
    EXPECT_NEAR(dense_start.result.f_final, 0.5, 1e-6);
    EXPECT_EQ(dense_start.result.iterations, factored_start.result.iterations);
    EXPECT_EQ(dense_start.result.records[0].rank, 2);

    json jb = base_config(target, dir / "ob");
    jb["solver"]["x0"] = {{"file", "a"}, {"factored_file", "b"}};
    EXPECT_THROW(parse_config(jb), config_error);
}

TEST(RankIncreasingMethod, RunsThroughHarness) {
    fs::path dir = fresh_dir("rinc");
    Dense A = Dense::Zero(6, 5);
    A.diagonal().head(4) << 5, 3, 1, 0.1;
    std::ofstream out(dir / "A.txt");
    write_dense(out, A);
    out.close();
    json j{{"problem", {{"kind", "approx"}, {"target_file", (dir / "A.txt").string()}}},
           {"solver",
            {{"method", "rank-increasing"}, {"r", 3}, {"r0", 1}, {"tau", 0.5}, {"eps", 1e-2},
             {"rank_step", 1}}},
           {"output", {{"dir", (dir / "out").string()}}}};
    RunOutput ro = execute_run(parse_config(j));
    EXPECT_NEAR(ro.result.f_final, 0.005, 1e-6);
    EXPECT_TRUE(ro.violations.empty());
    ASSERT_GE(ro.result.stages.size(), 3u);
    json summary;
    std::ifstream sin(ro.summary_path);
    sin >> summary;
    EXPECT_EQ(summary.at("stages").size(), ro.result.stages.size());
}
