#pragma once

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rankmin/harness.hpp"

namespace rankmin {

// Exit codes: 0 ok, 2 configuration error, 3 solver error (including offline
// check violations), 4 I/O error.
inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 2;
inline constexpr int exit_solver = 3;
inline constexpr int exit_io = 4;

inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"first-order descent on the variety of matrices of rank at most r"};
    app.require_subcommand(1);
    app.fallthrough();

    bool quiet = false;
    app.add_flag("--quiet", quiet, "suppress normal output");

    // run
    auto* run_cmd = app.add_subcommand("run", "execute one configured solver run");
    std::string run_config_path, run_out;
    std::int64_t run_seed = -1;
    run_cmd->add_option("config", run_config_path, "JSON run configuration")->required();
    run_cmd->add_option("--out", run_out, "output directory (overrides config)");
    run_cmd->add_option("--seed", run_seed, "problem seed (overrides config)");

    // compare
    auto* cmp_cmd = app.add_subcommand("compare", "run several configs on one problem");
    std::vector<std::string> cmp_paths;
    std::string cmp_out = "compare_out";
    cmp_cmd->add_option("configs", cmp_paths, "JSON run configurations")->required();
    cmp_cmd->add_option("--out", cmp_out, "output directory");

    // gen
    auto* gen_cmd = app.add_subcommand("gen", "generate synthetic problem files");
    ProblemSpec gen_spec;
    std::string gen_out = ".";
    std::int64_t gen_seed = 0;
    gen_cmd->add_option("--kind", gen_spec.kind, "approx | completion");
    gen_cmd->add_option("--m", gen_spec.m, "rows")->required();
    gen_cmd->add_option("--n", gen_spec.n, "columns")->required();
    gen_cmd->add_option("--data-rank", gen_spec.data_rank, "rank of the generated target")
        ->required();
    gen_cmd->add_option("--noise", gen_spec.noise, "Frobenius norm of the additive noise");
    gen_cmd->add_option("--mask-density", gen_spec.mask_density,
                        "observation density for completion masks");
    gen_cmd->add_option("--seed", gen_seed, "generator seed");
    gen_cmd->add_option("--out", gen_out, "output directory");

    // check
    auto* chk_cmd = app.add_subcommand("check", "verify a written trace offline");
    std::string chk_trace, chk_summary;
    chk_cmd->add_option("trace", chk_trace, "trace.csv produced by run")->required();
    chk_cmd->add_option("--summary", chk_summary,
                        "summary.json (default: sibling of the trace)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        app.exit(e);
        return exit_config;
    }

    try {
        if (*run_cmd) {
            RunConfig cfg = load_config(run_config_path);
            if (!run_out.empty()) cfg.out_dir = run_out;
            if (run_seed >= 0) cfg.problem.seed = static_cast<std::uint64_t>(run_seed);
            RunOutput out = execute_run(cfg);
            if (!quiet) {
                std::printf("final_f=%.17g final_surrogate=%.17g iterations=%ld converged=%d\n",
                            out.result.f_final, out.result.surrogate_final,
                            out.result.iterations, out.result.converged ? 1 : 0);
                std::printf("trace:   %s\nsummary: %s\n", out.trace_path.c_str(),
                            out.summary_path.c_str());
            }
            if (!out.violations.empty()) {
                for (const std::string& v : out.violations)
                    std::fprintf(stderr, "violation: %s\n", v.c_str());
                return exit_solver;
            }
            if (!out.census_ok) {
                std::fprintf(stderr, "violation: large-scale SVD count is nonzero\n");
                return exit_solver;
            }
            return exit_ok;
        }
        if (*cmp_cmd) {
            std::vector<RunConfig> cfgs;
            for (const std::string& p : cmp_paths) cfgs.push_back(load_config(p));
            std::vector<CompareRow> rows = compare_runs(cfgs, cmp_out);
            if (!quiet) std::fputs(compare_table(rows).c_str(), stdout);
            for (const CompareRow& r : rows)
                if (!r.census_ok) {
                    std::fprintf(stderr, "violation: %s performed a large-scale SVD\n",
                                 r.label.c_str());
                    return exit_solver;
                }
            return exit_ok;
        }
        if (*gen_cmd) {
            gen_spec.seed = static_cast<std::uint64_t>(gen_seed);
            if (gen_spec.kind != "approx" && gen_spec.kind != "completion")
                throw config_error("--kind must be approx|completion");
            std::vector<std::string> files = write_problem_files(gen_spec, gen_out);
            if (!quiet)
                for (const std::string& f : files) std::printf("wrote %s\n", f.c_str());
            return exit_ok;
        }
        if (*chk_cmd) {
            CheckOutcome out = check_files(chk_trace, chk_summary);
            if (!quiet)
                std::printf("checked %ld records, %zu violation(s)\n", out.records,
                            out.violations.size());
            for (const std::string& v : out.violations)
                std::fprintf(stderr, "violation: %s\n", v.c_str());
            return out.violations.empty() ? exit_ok : exit_solver;
        }
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const solver_error& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return exit_solver;
    } catch (const io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return exit_io;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return exit_io;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_solver;
    }
    return exit_config;
}

}  // namespace rankmin
