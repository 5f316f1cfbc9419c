#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankmin/errors.hpp"
#include "rankmin/geometry.hpp"
#include "rankmin/matcore.hpp"
#include "rankmin/objectives.hpp"
#include "rankmin/random.hpp"
#include "rankmin/solvers.hpp"

namespace rankmin {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct ProblemSpec {
    std::string kind = "approx";  // approx | completion
    std::string target_file;      // when set, the problem is loaded from files
    std::string mask_file;
    long m = 0, n = 0, data_rank = 0;
    double noise = 0.0;
    double mask_density = 1.0;
    std::uint64_t seed = 0;

    bool from_files() const { return !target_file.empty(); }

    bool operator==(const ProblemSpec&) const = default;
};

struct DeltaScheduleSpec {
    std::string kind = "constant";  // constant | multiplier
    double factor = 1.0;
};

struct SolverSpec {
    std::string method = "crfdr";  // crfdr | erfdr-rfd | rfdr | rank-increasing
    SolverParams params;
    SparseConeKind cone = SparseConeKind::OneEntry;
    TieBreak tie = TieBreak::Left;
    bool warm_start = false;
    DeltaScheduleSpec schedule;
    std::string x0_file;           // dense start point; empty: the zero matrix
    std::string x0_factored_file;  // start point as a (U, sigma, V) triplet
    // rank-increasing fields
    int r0 = 1;
    double tau = 0.5;
    double eps = 1e-2;
    int rank_step = 1;
    int max_stages = 64;
    std::string direction = "crfd";  // crfd | rfd (rank-increasing stages)
};

struct RunConfig {
    ProblemSpec problem;
    SolverSpec solver;
    std::string out_dir = ".";
};

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw config_error("unknown key \"" + it.key() + "\" in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw config_error(std::string("bad value for \"") + key + "\": " + e.what());
    }
}

}  // namespace detail

inline SparseConeKind parse_cone(const std::string& s) {
    if (s == "entry") return SparseConeKind::OneEntry;
    if (s == "row") return SparseConeKind::OneRow;
    if (s == "column") return SparseConeKind::OneColumn;
    throw config_error("cone must be one of entry|row|column, got \"" + s + "\"");
}

inline RunConfig parse_config(const json& j) {
    detail::check_keys(j, {"problem", "solver", "output"}, "config");
    if (!j.contains("problem") || !j.contains("solver"))
        throw config_error("config requires \"problem\" and \"solver\" objects");

    RunConfig cfg;
    const json& jp = j.at("problem");
    detail::check_keys(jp,
                       {"kind", "target_file", "mask_file", "m", "n", "data_rank", "noise",
                        "mask_density", "seed"},
                       "problem");
    cfg.problem.kind = detail::get_or<std::string>(jp, "kind", "approx");
    if (cfg.problem.kind != "approx" && cfg.problem.kind != "completion")
        throw config_error("problem.kind must be approx|completion, got \"" + cfg.problem.kind +
                           "\"");
    cfg.problem.target_file = detail::get_or<std::string>(jp, "target_file", "");
    cfg.problem.mask_file = detail::get_or<std::string>(jp, "mask_file", "");
    cfg.problem.m = detail::get_or<long>(jp, "m", 0);
    cfg.problem.n = detail::get_or<long>(jp, "n", 0);
    cfg.problem.data_rank = detail::get_or<long>(jp, "data_rank", 0);
    cfg.problem.noise = detail::get_or<double>(jp, "noise", 0.0);
    cfg.problem.mask_density = detail::get_or<double>(jp, "mask_density", 1.0);
    cfg.problem.seed = detail::get_or<std::uint64_t>(jp, "seed", 0);

    const json& js = j.at("solver");
    detail::check_keys(js,
                       {"method", "r", "cone", "tie_break", "alpha_lo", "alpha_hi", "beta", "c",
                        "kappa1", "kappa2", "delta", "stop_tol", "max_iters",
                        "max_backtracks_cap", "warm_start", "delta_schedule", "x0", "r0", "tau",
                        "eps", "rank_step", "max_stages", "direction"},
                       "solver");
    SolverSpec& s = cfg.solver;
    s.method = detail::get_or<std::string>(js, "method", "crfdr");
    if (s.method != "crfdr" && s.method != "erfdr-rfd" && s.method != "rfdr" &&
        s.method != "rank-increasing")
        throw config_error(
            "solver.method must be crfdr|erfdr-rfd|rfdr|rank-increasing, got \"" + s.method +
            "\"");
    SolverParams& p = s.params;
    p.r = detail::get_or<int>(js, "r", p.r);
    p.alpha_lo = detail::get_or<double>(js, "alpha_lo", p.alpha_lo);
    p.alpha_hi = detail::get_or<double>(js, "alpha_hi", p.alpha_hi);
    p.beta = detail::get_or<double>(js, "beta", p.beta);
    p.c = detail::get_or<double>(js, "c", p.c);
    p.kappa1 = detail::get_or<double>(js, "kappa1", p.kappa1);
    p.kappa2 = detail::get_or<double>(js, "kappa2", p.kappa2);
    p.delta = detail::get_or<double>(js, "delta", p.delta);
    p.stop_tol = detail::get_or<double>(js, "stop_tol", p.stop_tol);
    p.max_iters = detail::get_or<long>(js, "max_iters", p.max_iters);
    p.max_backtracks_cap = detail::get_or<int>(js, "max_backtracks_cap", p.max_backtracks_cap);
    s.cone = parse_cone(detail::get_or<std::string>(js, "cone", "entry"));
    const std::string tie = detail::get_or<std::string>(js, "tie_break", "left");
    if (tie != "left" && tie != "right")
        throw config_error("tie_break must be left|right, got \"" + tie + "\"");
    s.tie = tie == "left" ? TieBreak::Left : TieBreak::Right;
    s.warm_start = detail::get_or<bool>(js, "warm_start", false);
    if (js.contains("delta_schedule")) {
        const json& jd = js.at("delta_schedule");
        if (jd.is_string()) {
            s.schedule.kind = jd.get<std::string>();
        } else if (jd.is_object()) {
            detail::check_keys(jd, {"kind", "factor"}, "delta_schedule");
            s.schedule.kind = detail::get_or<std::string>(jd, "kind", "constant");
            s.schedule.factor = detail::get_or<double>(jd, "factor", 1.0);
        } else {
            throw config_error("delta_schedule must be a string or an object");
        }
        if (s.schedule.kind != "constant" && s.schedule.kind != "multiplier")
            throw config_error("delta_schedule.kind must be constant|multiplier");
        if (s.schedule.kind == "multiplier" && !(s.schedule.factor >= 1.0))
            throw config_error("delta_schedule.factor must be >= 1");
    }
    if (js.contains("x0")) {
        const json& jx = js.at("x0");
        if (jx.is_string()) {
            if (jx.get<std::string>() != "zero")
                throw config_error(
                    "x0 must be \"zero\", {\"file\": path}, or {\"factored_file\": path}");
        } else if (jx.is_object()) {
            detail::check_keys(jx, {"file", "factored_file"}, "x0");
            s.x0_file = detail::get_or<std::string>(jx, "file", "");
            s.x0_factored_file = detail::get_or<std::string>(jx, "factored_file", "");
            if (!s.x0_file.empty() && !s.x0_factored_file.empty())
                throw config_error("x0 takes either \"file\" or \"factored_file\", not both");
        } else {
            throw config_error(
                "x0 must be \"zero\", {\"file\": path}, or {\"factored_file\": path}");
        }
    }
    s.r0 = detail::get_or<int>(js, "r0", 1);
    s.tau = detail::get_or<double>(js, "tau", 0.5);
    s.eps = detail::get_or<double>(js, "eps", 1e-2);
    s.rank_step = detail::get_or<int>(js, "rank_step", 1);
    s.max_stages = detail::get_or<int>(js, "max_stages", 64);
    s.direction = detail::get_or<std::string>(js, "direction", "crfd");
    if (s.direction != "crfd" && s.direction != "rfd")
        throw config_error("direction must be crfd|rfd, got \"" + s.direction + "\"");

    if (j.contains("output")) {
        detail::check_keys(j.at("output"), {"dir"}, "output");
        cfg.out_dir = detail::get_or<std::string>(j.at("output"), "dir", ".");
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw config_error("config parse error in " + path + ": " + e.what());
    }
    return parse_config(j);
}

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

struct GeneratedProblem {
    Dense target;
    std::optional<Dense> mask;
};

// Synthetic target A = L R^T + noise * N with standard-normal factors and a
// Frobenius-normalized noise matrix; optional Bernoulli(mask_density) mask.
inline GeneratedProblem gen_problem(const ProblemSpec& ps) {
    if (ps.m < 1 || ps.n < 1)
        throw config_error("problem generator needs m >= 1 and n >= 1");
    if (ps.data_rank < 1 || ps.data_rank > std::min(ps.m, ps.n))
        throw config_error("data_rank must be in {1, ..., min(m, n)}");
    if (!(ps.noise >= 0.0)) throw config_error("noise must be >= 0");
    if (!(ps.mask_density > 0.0 && ps.mask_density <= 1.0))
        throw config_error("mask_density must be in (0, 1]");
    Rng rng(ps.seed);
    GeneratedProblem out;
    out.target = rng.gaussian_matrix(ps.m, ps.data_rank) *
                 rng.gaussian_matrix(ps.n, ps.data_rank).transpose();
    if (ps.noise > 0.0) {
        Dense N = rng.gaussian_matrix(ps.m, ps.n);
        const double nn = N.norm();
        if (nn > 0.0) out.target += (ps.noise / nn) * N;
    }
    if (ps.kind == "completion") {
        Dense mask(ps.m, ps.n);
        for (Index i = 0; i < ps.m; ++i)
            for (Index j = 0; j < ps.n; ++j)
                mask(i, j) = rng.uniform() < ps.mask_density ? 1.0 : 0.0;
        out.mask = std::move(mask);
    }
    return out;
}

inline Dense load_matrix_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open matrix file: " + path);
    Dense A = read_dense(in);
    if (A.rows() < 1 || A.cols() < 1) throw config_error("matrix file is empty: " + path);
    return A;
}

inline std::unique_ptr<Objective> build_objective(const ProblemSpec& ps) {
    Dense A;
    std::optional<Dense> mask;
    if (ps.from_files()) {
        A = load_matrix_file(ps.target_file);
        if (ps.kind == "completion") {
            if (ps.mask_file.empty())
                throw config_error("completion problem from files needs mask_file");
            mask = load_matrix_file(ps.mask_file);
        }
    } else {
        GeneratedProblem g = gen_problem(ps);
        A = std::move(g.target);
        mask = std::move(g.mask);
    }
    if (ps.kind == "completion") return std::make_unique<CompletionProblem>(A, *mask);
    return std::make_unique<ApproxProblem>(A);
}

// ---------------------------------------------------------------------------
// Trace and summary files
// ---------------------------------------------------------------------------

inline const char* trace_header() {
    return "iter,stage,f,surrogate,alpha,rank,reduced,backtracks,base_f,pred_dec,"
           "f_evals,grad_evals,qr_pivot,svd_small,svd_large,cone_projections";
}

inline void write_trace_csv(const std::string& path, const std::vector<IterateRecord>& records) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open trace file for writing: " + path);
    out << trace_header() << '\n';
    for (const IterateRecord& r : records) {
        out << r.iter << ',' << r.stage << ',' << format_scalar(r.f) << ','
            << format_scalar(r.surrogate) << ',' << format_scalar(r.alpha) << ',' << r.rank << ','
            << r.reduced << ',' << r.backtracks << ',' << format_scalar(r.f_base) << ','
            << format_scalar(r.pred_dec) << ',' << r.counters.f_evals << ','
            << r.counters.grad_evals << ',' << r.counters.qr_pivot << ','
            << r.counters.svd_small << ',' << r.counters.svd_large << ','
            << r.counters.cone_projections << '\n';
    }
    if (!out) throw io_error("write failure on trace file: " + path);
}

inline std::vector<IterateRecord> read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open trace file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw io_error("trace file is empty: " + path);
    if (line != trace_header())
        throw io_error("trace file has an unexpected header: " + path);
    std::vector<IterateRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        IterateRecord r;
        if (!(ss >> r.iter >> r.stage >> r.f >> r.surrogate >> r.alpha >> r.rank >> r.reduced >>
              r.backtracks >> r.f_base >> r.pred_dec >> r.counters.f_evals >>
              r.counters.grad_evals >> r.counters.qr_pivot >> r.counters.svd_small >>
              r.counters.svd_large >> r.counters.cone_projections))
            throw io_error("malformed trace row: " + line);
        out.push_back(r);
    }
    return out;
}

inline json counters_to_json(const OpCounters& c) {
    return json{{"f_evals", c.f_evals},
                {"grad_evals", c.grad_evals},
                {"qr_pivot", c.qr_pivot},
                {"svd_small", c.svd_small},
                {"svd_large", c.svd_large},
                {"cone_projections", c.cone_projections}};
}

inline OpCounters counters_from_json(const json& j) {
    OpCounters c;
    c.f_evals = j.at("f_evals").get<long long>();
    c.grad_evals = j.at("grad_evals").get<long long>();
    c.qr_pivot = j.at("qr_pivot").get<long long>();
    c.svd_small = j.at("svd_small").get<long long>();
    c.svd_large = j.at("svd_large").get<long long>();
    c.cone_projections = j.at("cone_projections").get<long long>();
    return c;
}

// ---------------------------------------------------------------------------
// Offline trace verification
// ---------------------------------------------------------------------------

struct TraceCheckParams {
    double c = 0.0;
    double kappa1 = 0.0;
    double kappa2 = 0.0;
    double alpha_lo = 0.0;
    double beta = 0.0;
    double lipschitz = 0.0;
};

// Re-verifies, from recorded quantities alone: per-step Armijo inequalities,
// objective monotonicity, cumulative-counter monotonicity (and agreement with
// the summary totals when given), and the per-stage running-minimum rate
// bound. Returns human-readable violation messages; empty means clean.
inline std::vector<std::string> verify_trace(const std::vector<IterateRecord>& records,
                                             const TraceCheckParams& tp,
                                             const OpCounters* expected_totals = nullptr) {
    std::vector<std::string> bad;
    if (records.empty()) {
        bad.push_back("trace has no records");
        return bad;
    }
    auto note = [&bad](long iter, const std::string& what) {
        bad.push_back("iter " + std::to_string(iter) + ": " + what);
    };

    for (std::size_t i = 0; i + 1 < records.size(); ++i) {
        const IterateRecord& a = records[i];
        const IterateRecord& b = records[i + 1];
        if (a.alpha > 0.0) {
            const double rhs = a.f_base - tp.c * a.alpha * a.pred_dec;
            if (b.f > rhs + 1e-12 * (1.0 + std::abs(a.f_base)))
                note(a.iter, "Armijo certificate fails: f_next = " + format_scalar(b.f) +
                                 " > " + format_scalar(rhs));
        }
        if (b.f > a.f + 1e-12 * (1.0 + std::abs(a.f)))
            note(a.iter, "objective increased across a step");
        const OpCounters& ca = a.counters;
        const OpCounters& cb = b.counters;
        if (cb.f_evals < ca.f_evals || cb.grad_evals < ca.grad_evals ||
            cb.qr_pivot < ca.qr_pivot || cb.svd_small < ca.svd_small ||
            cb.svd_large < ca.svd_large || cb.cone_projections < ca.cone_projections)
            note(a.iter, "a cumulative counter decreased");
    }
    if (expected_totals && !(records.back().counters == *expected_totals))
        bad.push_back("summary counter totals disagree with the last trace row");

    // Rate bound, per stage: the running minimum of the surrogate over the
    // stage's first k+1 steps is at most
    // sqrt((f_0 - f_end) / (c kappa1 alpha_star (k+1))).
    const double alpha_star =
        std::min(tp.alpha_lo, 2.0 * tp.beta * tp.kappa2 * (1.0 - tp.c) /
                                  std::max(tp.lipschitz, 1e-300));
    const double denom = tp.c * tp.kappa1 * alpha_star;
    if (denom > 0.0) {
        std::size_t i = 0;
        while (i + 1 < records.size()) {
            const int stage = records[i].stage;
            std::size_t end = i;
            while (end + 1 < records.size() && records[end].stage == stage &&
                   records[end].alpha > 0.0)
                ++end;
            // [i, end) are the stage's step records; records[end] holds f_end.
            if (end == i) {
                ++i;
                continue;
            }
            const double f0 = records[i].f;
            const double f_end = records[end].f;
            double running_min = std::numeric_limits<double>::infinity();
            for (std::size_t k = i; k < end; ++k) {
                running_min = std::min(running_min, records[k].surrogate);
                const double rhs =
                    std::sqrt(std::max(0.0, f0 - f_end) / (denom * double(k - i + 1)));
                if (running_min > rhs + 1e-10 * (1.0 + rhs))
                    note(records[k].iter,
                         "rate bound fails: running min " + format_scalar(running_min) + " > " +
                             format_scalar(rhs));
            }
            i = end;
            if (i + 1 < records.size() && records[i].alpha == 0.0) ++i;
        }
    } else {
        bad.push_back("rate bound not checkable: nonpositive c * kappa1 * alpha_star");
    }
    return bad;
}

// ---------------------------------------------------------------------------
// Run execution
// ---------------------------------------------------------------------------

struct RunOutput {
    RunResult result;
    double lipschitz = 0.0;
    std::vector<std::string> violations;
    bool census_ok = true;
    std::string trace_path;
    std::string summary_path;

    bool has_violation(const std::string& needle) const {
        for (const std::string& v : violations)
            if (v.find(needle) != std::string::npos) return true;
        return false;
    }
};

inline DeltaSchedule make_schedule(const DeltaScheduleSpec& spec) {
    if (spec.kind == "multiplier" && spec.factor != 1.0) {
        const double f = spec.factor;
        return [f](long iter, double base) { return base * std::pow(f, double(iter)); };
    }
    return {};
}

inline RunResult dispatch_run(const RunConfig& cfg, const Objective& obj,
                              const FactoredMatrix& X0) {
    const SolverSpec& s = cfg.solver;
    const DeltaSchedule sched = make_schedule(s.schedule);
    if (s.method == "crfdr")
        return crfdr_run(X0, obj, s.params, s.cone, sched, s.tie, s.warm_start);
    if (s.method == "erfdr-rfd")
        return erfdr_run(X0, obj, s.params,
                         DirectionPolicy{DirectionMethod::Rfd, s.cone, s.tie}, sched,
                         s.warm_start);
    if (s.method == "rfdr")  // classic baseline: fixed initial step, constant threshold
        return erfdr_run(X0, obj, s.params,
                         DirectionPolicy{DirectionMethod::Rfd, s.cone, s.tie}, {}, false);
    if (s.method == "rank-increasing") {
        const bool factored = s.direction == "crfd";
        DirectionPolicy policy{factored ? DirectionMethod::Crfd : DirectionMethod::Rfd, s.cone,
                               s.tie};
        return rank_increasing_run(X0, s.r0, obj, s.params, s.tau, s.eps,
                                   increase_by_policy(s.rank_step), policy, factored, sched,
                                   s.warm_start, s.max_stages);
    }
    throw config_error("unknown solver method: " + s.method);
}

inline json summary_to_json(const RunConfig& cfg, const RunOutput& out) {
    const RunResult& r = out.result;
    const SolverParams& p = r.resolved;
    json stages = json::array();
    for (const StageRecord& s : r.stages)
        stages.push_back(json{{"stage", s.stage},
                              {"rank", s.rank},
                              {"tol", s.tol},
                              {"iterations", s.iterations},
                              {"final_surrogate", s.final_surrogate},
                              {"final_f", s.final_f},
                              {"met", s.met}});
    return json{
        {"method", cfg.solver.method},
        {"cone", to_string(cfg.solver.cone)},
        {"m", r.x_final.rows()},
        {"n", r.x_final.cols()},
        {"params",
         json{{"alpha_lo", p.alpha_lo},
              {"alpha_hi", p.alpha_hi},
              {"beta", p.beta},
              {"c", p.c},
              {"kappa1", p.kappa1},
              {"kappa2", p.kappa2},
              {"delta", p.delta},
              {"r", p.r},
              {"stop_tol", p.stop_tol},
              {"max_iters", p.max_iters},
              {"max_backtracks_cap", p.max_backtracks_cap}}},
        {"final_f", r.f_final},
        {"final_surrogate", r.surrogate_final},
        {"iterations", r.iterations},
        {"converged", r.converged},
        {"counters", counters_to_json(r.counters)},
        {"ball_radius", r.ball_radius},
        {"lipschitz", out.lipschitz},
        {"stages", stages},
        {"checks", json{{"violations", out.violations.size()},
                        {"armijo_ok", !out.has_violation("Armijo")},
                        {"rate_bound_ok", !out.has_violation("rate bound")},
                        {"counters_ok", !out.has_violation("counter")},
                        {"census_ok", out.census_ok}}}};
}

// Executes the configured solver, verifies the trace in-process, and (when
// write_files is set) writes trace.csv and summary.json under out_dir.
inline RunOutput execute_run(const RunConfig& cfg, bool write_files = true) {
    validate_params(cfg.solver.params);  // range errors before any file I/O
    std::unique_ptr<Objective> obj = build_objective(cfg.problem);

    FactoredMatrix X0;
    if (!cfg.solver.x0_factored_file.empty()) {
        std::ifstream in(cfg.solver.x0_factored_file);
        if (!in) throw io_error("cannot open x0 file: " + cfg.solver.x0_factored_file);
        X0 = read_factored(in);
        if (!is_valid_factorization(X0, defaults::orth_tol(std::max(X0.rows(), X0.cols()))))
            throw config_error("x0 factored file does not hold a valid (U, sigma, V) triplet");
    } else if (!cfg.solver.x0_file.empty()) {
        X0 = svd_thin(load_matrix_file(cfg.solver.x0_file));
    } else {
        X0 = FactoredMatrix::zero(obj->rows(), obj->cols());
    }
    if (X0.rank() > cfg.solver.params.r)
        throw config_error("x0 has rank " + std::to_string(X0.rank()) +
                           " > r = " + std::to_string(cfg.solver.params.r));

    RunOutput out;
    out.result = dispatch_run(cfg, *obj, X0);

    if (auto hint = obj->lipschitz_hint()) {
        out.lipschitz = *hint;
    } else {
        out.lipschitz = local_lipschitz_estimate(
            *obj, X0.dense(), std::max(out.result.ball_radius, 1e-6), 64, 12345);
    }

    const SolverParams& p = out.result.resolved;
    out.violations = verify_trace(
        out.result.records,
        TraceCheckParams{p.c, p.kappa1, p.kappa2, p.alpha_lo, p.beta, out.lipschitz},
        &out.result.counters);
    const bool factored_method = cfg.solver.method == "crfdr" ||
                                 (cfg.solver.method == "rank-increasing" &&
                                  cfg.solver.direction == "crfd");
    out.census_ok = !factored_method || out.result.counters.svd_large == 0;

    if (write_files) {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(cfg.out_dir, ec);
        if (ec) throw io_error("cannot create output directory: " + cfg.out_dir);
        out.trace_path = (fs::path(cfg.out_dir) / "trace.csv").string();
        out.summary_path = (fs::path(cfg.out_dir) / "summary.json").string();
        write_trace_csv(out.trace_path, out.result.records);
        std::ofstream sf(out.summary_path);
        if (!sf) throw io_error("cannot open summary file for writing: " + out.summary_path);
        sf << summary_to_json(cfg, out).dump(2) << '\n';
        if (!sf) throw io_error("write failure on summary file: " + out.summary_path);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Offline check of written files
// ---------------------------------------------------------------------------

struct CheckOutcome {
    std::vector<std::string> violations;
    long records = 0;
};

inline CheckOutcome check_files(const std::string& trace_path, std::string summary_path = "") {
    namespace fs = std::filesystem;
    if (summary_path.empty())
        summary_path = (fs::path(trace_path).parent_path() / "summary.json").string();
    std::ifstream sf(summary_path);
    if (!sf) throw io_error("cannot open summary file: " + summary_path);
    json js;
    try {
        sf >> js;
    } catch (const json::exception& e) {
        throw io_error("summary parse error: " + std::string(e.what()));
    }
    const std::vector<IterateRecord> records = read_trace_csv(trace_path);
    TraceCheckParams tp;
    OpCounters totals;
    try {
        const json& p = js.at("params");
        tp.c = p.at("c").get<double>();
        tp.kappa1 = p.at("kappa1").get<double>();
        tp.kappa2 = p.at("kappa2").get<double>();
        tp.alpha_lo = p.at("alpha_lo").get<double>();
        tp.beta = p.at("beta").get<double>();
        tp.lipschitz = js.at("lipschitz").get<double>();
        totals = counters_from_json(js.at("counters"));
    } catch (const json::exception& e) {
        throw io_error("summary is missing required fields: " + std::string(e.what()));
    }
    CheckOutcome out;
    out.records = static_cast<long>(records.size());
    out.violations = verify_trace(records, tp, &totals);
    return out;
}

// ---------------------------------------------------------------------------
// Comparison across configurations
// ---------------------------------------------------------------------------

struct CompareRow {
    std::string label;
    std::string method;
    long iterations = 0;
    double final_f = 0.0;
    double final_surrogate = 0.0;
    OpCounters totals;
    bool census_ok = true;
};

inline std::string compare_table(const std::vector<CompareRow>& rows) {
    std::ostringstream os;
    os << "label          method           iters  final_f        f_evals grad qr  svd_s svd_l cone  census\n";
    for (const CompareRow& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "%-14s %-16s %6ld  %-13.6g %7lld %4lld %3lld %5lld %5lld %4lld  %s\n",
                      r.label.c_str(), r.method.c_str(), r.iterations, r.final_f,
                      r.totals.f_evals, r.totals.grad_evals, r.totals.qr_pivot,
                      r.totals.svd_small, r.totals.svd_large, r.totals.cone_projections,
                      r.census_ok ? "ok" : "FAIL");
        os << buf;
    }
    return os.str();
}

// Runs each config over the same problem and tabulates counter totals and
// final objective values. A factored-method run that performed a large-scale
// SVD is flagged as a census failure.
inline std::vector<CompareRow> compare_runs(const std::vector<RunConfig>& cfgs,
                                            const std::string& out_dir, bool write_files = true) {
    if (cfgs.size() < 2) throw config_error("compare needs at least two configs");
    for (std::size_t i = 1; i < cfgs.size(); ++i)
        if (!(cfgs[i].problem == cfgs[0].problem))
            throw config_error("compare: config " + std::to_string(i) +
                               " describes a different problem than config 0");
    namespace fs = std::filesystem;
    std::vector<CompareRow> rows;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        RunConfig cfg = cfgs[i];
        cfg.out_dir = (fs::path(out_dir) / ("run_" + std::to_string(i))).string();
        RunOutput ro = execute_run(cfg, write_files);
        rows.push_back(CompareRow{"run_" + std::to_string(i), cfg.solver.method,
                                  ro.result.iterations, ro.result.f_final,
                                  ro.result.surrogate_final, ro.result.counters, ro.census_ok});
    }
    if (write_files) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        std::ofstream txt(fs::path(out_dir) / "compare.txt");
        txt << compare_table(rows);
        std::ofstream csv(fs::path(out_dir) / "compare.csv");
        csv << "label,method,iterations,final_f,final_surrogate,f_evals,grad_evals,qr_pivot,"
               "svd_small,svd_large,cone_projections,census_ok\n";
        for (const CompareRow& r : rows)
            csv << r.label << ',' << r.method << ',' << r.iterations << ','
                << format_scalar(r.final_f) << ',' << format_scalar(r.final_surrogate) << ','
                << r.totals.f_evals << ',' << r.totals.grad_evals << ',' << r.totals.qr_pivot
                << ',' << r.totals.svd_small << ',' << r.totals.svd_large << ','
                << r.totals.cone_projections << ',' << (r.census_ok ? 1 : 0) << '\n';
        if (!txt || !csv) throw io_error("write failure in compare output");
    }
    return rows;
}

// Writes generated problem files (target, and the mask for completion) into
// out_dir as A.txt / mask.txt.
inline std::vector<std::string> write_problem_files(const ProblemSpec& ps,
                                                    const std::string& out_dir) {
    GeneratedProblem g = gen_problem(ps);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create output directory: " + out_dir);
    std::vector<std::string> written;
    const std::string a_path = (fs::path(out_dir) / "A.txt").string();
    std::ofstream af(a_path);
    if (!af) throw io_error("cannot open " + a_path);
    write_dense(af, g.target);
    written.push_back(a_path);
    if (g.mask) {
        const std::string m_path = (fs::path(out_dir) / "mask.txt").string();
        std::ofstream mf(m_path);
        if (!mf) throw io_error("cannot open " + m_path);
        write_dense(mf, *g.mask);
        written.push_back(m_path);
    }
    return written;
}

}  // namespace rankmin
