#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rankmin/errors.hpp"
#include "rankmin/geometry.hpp"
#include "rankmin/matcore.hpp"
#include "rankmin/objectives.hpp"

namespace rankmin {

// Tuple of line-search and rank-reduction parameters. Nonpositive kappa1,
// delta, or stop_tol request the documented defaults, resolved against the
// problem at run start.
struct SolverParams {
    double alpha_lo = 1e-12;  // smallest admissible initial step
    double alpha_hi = 1.0;    // largest admissible initial step
    double beta = 0.5;        // backtracking shrink factor
    double c = 1e-4;          // Armijo slope fraction
    double kappa1 = 0.0;      // <= 0: min{1/2, cone constant} for sparse-cone
                              // directions, 1/2 for restricted-cone directions
    double kappa2 = 1.0;
    double delta = 0.0;       // <= 0: 1e-3 * sigma_1(X0), or 1e-3 if X0 = 0
    int r = 1;                // target rank, must satisfy r < min{m, n}
    double stop_tol = -1.0;   // < 0: 1e-8 * ||grad f(X0)||, floored at 1e-14
    long max_iters = 10000;
    int max_backtracks_cap = 200;
};

inline void validate_params(const SolverParams& p) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("SolverParams: " + msg); };
    if (!(p.alpha_lo > 0.0)) fail("alpha_lo must be in (0, inf), got " + std::to_string(p.alpha_lo));
    if (!(p.alpha_hi >= p.alpha_lo))
        fail("alpha_hi must be in [alpha_lo, inf), got " + std::to_string(p.alpha_hi));
    if (!(p.beta > 0.0 && p.beta < 1.0))
        fail("beta must be in (0, 1), got " + std::to_string(p.beta));
    if (!(p.c > 0.0 && p.c < 1.0)) fail("c must be in (0, 1), got " + std::to_string(p.c));
    if (!(p.kappa2 > 0.0 && p.kappa2 <= 1.0))
        fail("kappa2 must be in (0, 1], got " + std::to_string(p.kappa2));
    if (p.r < 1) fail("r must be a positive integer, got " + std::to_string(p.r));
    if (p.max_iters < 1) fail("max_iters must be >= 1");
    if (p.max_backtracks_cap < 1) fail("max_backtracks_cap must be >= 1");
}

// Counts of the operations the cost model tracks. f_evals counts line-search
// (while-loop) objective evaluations; base-point values are carried forward
// between iterations and excluded, matching the operation census the detailed
// maps are measured against.
struct OpCounters {
    long long f_evals = 0;
    long long grad_evals = 0;
    long long qr_pivot = 0;
    long long svd_small = 0;
    long long svd_large = 0;
    long long cone_projections = 0;

    OpCounters operator-(const OpCounters& o) const {
        return OpCounters{f_evals - o.f_evals,   grad_evals - o.grad_evals,
                          qr_pivot - o.qr_pivot, svd_small - o.svd_small,
                          svd_large - o.svd_large, cone_projections - o.cone_projections};
    }
    bool operator==(const OpCounters& o) const = default;
};

enum class DirectionSource { RestrictedConeFull, RestrictedConeFixed, SparseCone };

// A search direction G with its certificate: predicted_decrease = <-grad, G>,
// and the kappa1 its construction guarantees against the stationarity measure.
struct DirectionChoice {
    Dense G;
    double predicted_decrease = 0.0;
    double kappa1_used = 0.0;
    DirectionSource source = DirectionSource::RestrictedConeFixed;
    std::optional<FactoredMatrix> factored;  // rank-<=1 SVD form when available
};

enum class DirectionMethod { Crfd, Rfd };

struct DirectionPolicy {
    DirectionMethod method = DirectionMethod::Crfd;
    SparseConeKind cone = SparseConeKind::OneEntry;
    TieBreak tie = TieBreak::Left;
};

// Largest number of backtracking iterations the Armijo search can take:
// max{0, ceil(ln(2 kappa2 (1-c) / (alpha0 L)) / ln beta)}.
inline int max_backtracks_bound(double alpha0, double beta, double c, double kappa2, double L) {
    if (!(alpha0 > 0.0 && L > 0.0 && kappa2 > 0.0) || !(beta > 0.0 && beta < 1.0) ||
        !(c > 0.0 && c < 1.0))
        throw std::invalid_argument("max_backtracks_bound: arguments out of range");
    const double ratio = 2.0 * kappa2 * (1.0 - c) / (alpha0 * L);
    if (ratio >= 1.0) return 0;
    return std::max(0, static_cast<int>(std::ceil(std::log(ratio) / std::log(beta))));
}

// ---------------------------------------------------------------------------
// Direction choices
// ---------------------------------------------------------------------------

// Cheap direction: at full rank, the restricted-cone projection of -grad
// (which needs only the stored factors); below full rank, the sparse-cone
// projection, whose unit-sphere constant certifies kappa1.
inline DirectionChoice choose_direction_crfd(const FactoredMatrix& X, const Dense& grad,
                                             const SolverParams& p, SparseConeKind cone_kind,
                                             TieBreak tie_break, OpCounters& counters) {
    if (X.rank() > p.r)
        throw std::invalid_argument("choose_direction_crfd: rank of X exceeds r");
    const double cone_c = cone_unit_sphere_constant(cone_kind, X.rows(), X.cols());
    if (p.kappa1 > cone_c)
        throw config_error("kappa1 = " + std::to_string(p.kappa1) +
                           " exceeds the unit-sphere constant " + std::to_string(cone_c) +
                           " of the '" + to_string(cone_kind) + "' cone");
    const Dense Z = -grad;
    if (X.rank() == p.r) {
        const double sl = left_candidate_norm_sq(X, Z);
        const double sr = right_candidate_norm_sq(X, Z);
        const bool left = sl > sr || (sl == sr && tie_break == TieBreak::Left);
        Dense G = left ? Dense(X.U * (X.U.transpose() * Z)) : Dense((Z * X.V) * X.V.transpose());
        return DirectionChoice{std::move(G), left ? sl : sr, 0.5,
                               DirectionSource::RestrictedConeFixed, std::nullopt};
    }
    FactoredMatrix Gf = sparse_cone_project(cone_kind, Z);
    ++counters.cone_projections;
    const double nsq = Gf.sigma.squaredNorm();
    return DirectionChoice{Gf.dense(), nsq, cone_c, DirectionSource::SparseCone, std::move(Gf)};
}

// Baseline direction: the restricted-cone projection of -grad including, below
// full rank, the truncated SVD of the normal part (the large-scale operation
// the cheap direction avoids).
inline DirectionChoice choose_direction_rfd(const FactoredMatrix& X, const Dense& grad,
                                            const SolverParams& p, TieBreak tie_break,
                                            OpCounters& counters) {
    if (X.rank() > p.r)
        throw std::invalid_argument("choose_direction_rfd: rank of X exceeds r");
    const Dense Z = -grad;
    Dense G = proj_restricted_fixed(X, Z, tie_break);
    DirectionSource src = DirectionSource::RestrictedConeFixed;
    if (X.rank() < p.r) {
        const Dense N = proj_normal_space(X, Z);
        const FactoredMatrix Ntr = truncate(svd_thin(N), p.r - X.rank());
        ++counters.svd_large;
        G += Ntr.dense();
        src = DirectionSource::RestrictedConeFull;
    }
    const double pred = inner(Z, G);
    return DirectionChoice{std::move(G), pred, 0.5, src, std::nullopt};
}

inline DirectionChoice choose_direction(const FactoredMatrix& X, const Dense& grad,
                                        const SolverParams& p, const DirectionPolicy& policy,
                                        OpCounters& counters) {
    DirectionChoice d = policy.method == DirectionMethod::Crfd
                            ? choose_direction_crfd(X, grad, p, policy.cone, policy.tie, counters)
                            : choose_direction_rfd(X, grad, p, policy.tie, counters);
#ifndef NDEBUG
    // Search-direction condition, checked against the diagnostic measure
    // (this runs the large-scale SVD path, so debug builds only).
    const double s = stationarity_measure(X, grad, p.r);
    const double slack = 1e-10 * (1.0 + grad.squaredNorm());
    assert(d.predicted_decrease >= d.kappa1_used * s * s - slack);
    assert(d.predicted_decrease >= p.kappa2 * d.G.squaredNorm() - slack);
#endif
    return d;
}

// ---------------------------------------------------------------------------
// Line-search map, dense path
// ---------------------------------------------------------------------------

struct StepResult {
    FactoredMatrix x_next;
    double f_next = 0.0;
    double alpha = 0.0;
    int backtracks = 0;
    double predicted_decrease = 0.0;
};

namespace detail {

// The Armijo test is accepted up to a few ulps of the objective scale: once
// the required decrease c alpha <-grad, G> falls to the evaluation noise of
// f, the exact inequality can fail at every alpha even though it holds in
// exact arithmetic, and backtracking would never terminate.
inline double armijo_slack(double f_base, double f_trial) {
    return 4.0 * std::numeric_limits<double>::epsilon() *
           (std::abs(f_base) + std::abs(f_trial));
}

}  // namespace detail

// Backtracking Armijo search along G from X: accepts the first
// alpha = alpha0 * beta^j with f(X + alpha G) <= f(X) - c alpha <-grad, G>,
// then re-factors the accepted point. A zero direction returns the input
// unchanged with zero backtracks.
inline StepResult erfd_step(const FactoredMatrix& X, double f_at_X, const Objective& obj,
                            const SolverParams& p, const DirectionChoice& dir, double alpha0,
                            OpCounters& counters) {
    if (!(alpha0 >= p.alpha_lo && alpha0 <= p.alpha_hi))
        throw std::invalid_argument("erfd_step: alpha0 outside [alpha_lo, alpha_hi]");
    if (dir.G.size() == 0 || dir.predicted_decrease == 0.0)
        return StepResult{X, f_at_X, alpha0, 0, 0.0};
    if (!(dir.predicted_decrease > 0.0))
        throw solver_error("erfd_step: direction with negative predicted decrease");

    const Dense X_dense = X.dense();
    double alpha = alpha0;
    int bt = 0;
    Dense trial;
    double f_trial;
    for (;;) {
        trial = X_dense + alpha * dir.G;
        f_trial = obj.value(trial);
        ++counters.f_evals;
        if (f_trial <= f_at_X - p.c * alpha * dir.predicted_decrease +
                           detail::armijo_slack(f_at_X, f_trial))
            break;
        if (bt >= p.max_backtracks_cap)
            throw line_search_error("erfd_step: backtracking exceeded cap of " +
                                    std::to_string(p.max_backtracks_cap) +
                                    "; gradient and objective are likely inconsistent");
        alpha *= p.beta;
        ++bt;
    }
    FactoredMatrix next = svd_thin(trial);
    ++counters.svd_small;  // recomposition, small-scale in the factored census
    if (next.rank() > p.r)
        throw numerical_error("erfd_step: accepted point left the rank-" + std::to_string(p.r) +
                              " variety");
    return StepResult{std::move(next), f_trial, alpha, bt, dir.predicted_decrease};
}

// Outcome of one iteration map application (with or without the
// rank-reduction candidate).
struct MapResult {
    FactoredMatrix x_next;
    double f_next = 0.0;
    double alpha = 0.0;
    double predicted_decrease = 0.0;
    double f_base = 0.0;  // objective at the winning candidate's base point
    bool reduced_tried = false;
    bool reduced_won = false;
    int backtracks_max = 0;
};

// Rank-reduction wrapper around the line-search map: if X has full target rank
// and its smallest singular value is at most delta_i, a second search from the
// rank-(r-1) truncation competes, and the lower objective value wins (ties
// keep the unreduced candidate).
inline MapResult erfdr_map(const FactoredMatrix& X, double f_at_X, const Dense& grad_at_X,
                           const Objective& obj, const SolverParams& p,
                           const DirectionPolicy& policy, double delta_i, double alpha0,
                           OpCounters& counters) {
    DirectionChoice dir = choose_direction(X, grad_at_X, p, policy, counters);
    StepResult first = erfd_step(X, f_at_X, obj, p, dir, alpha0, counters);
    MapResult out{first.x_next, first.f_next,  first.alpha, first.predicted_decrease,
                  f_at_X,       false,         false,       first.backtracks};
    if (X.rank() == p.r && X.smallest_sigma() <= delta_i) {
        out.reduced_tried = true;
        const FactoredMatrix Xhat = truncate(X, p.r - 1);
        const Dense Xhat_dense = Xhat.dense();
        const double f_hat = obj.value(Xhat_dense);
        Dense grad_hat = obj.gradient(Xhat_dense);
        ++counters.grad_evals;
        DirectionChoice dir_hat = choose_direction(Xhat, grad_hat, p, policy, counters);
        StepResult second = erfd_step(Xhat, f_hat, obj, p, dir_hat, alpha0, counters);
        out.backtracks_max = std::max(out.backtracks_max, second.backtracks);
        if (second.f_next < first.f_next) {
            out.x_next = second.x_next;
            out.f_next = second.f_next;
            out.alpha = second.alpha;
            out.predicted_decrease = second.predicted_decrease;
            out.f_base = f_hat;
            out.reduced_won = true;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detailed factored maps
// ---------------------------------------------------------------------------

namespace detail {

// Shared Armijo loop: trial(alpha) produces the candidate objective value.
template <typename TrialFn>
std::pair<double, int> armijo_search(double& alpha, double f_base, double slope_sq, double c,
                                     double beta, int cap, OpCounters& counters,
                                     const TrialFn& trial) {
    int bt = 0;
    for (;;) {
        const double f_trial = trial(alpha);
        ++counters.f_evals;
        if (f_trial <= f_base - c * alpha * slope_sq + armijo_slack(f_base, f_trial))
            return {f_trial, bt};
        if (bt >= cap)
            throw line_search_error("detailed map: backtracking exceeded cap of " +
                                    std::to_string(cap));
        alpha *= beta;
        ++bt;
    }
}

inline void check_core_reconstruction(const Dense& core, const FactoredMatrix& F, double scale) {
    const double mismatch = (core - F.dense()).norm();
    if (mismatch > 1e-8 * std::max(scale, 1e-300))
        throw numerical_error("detailed map: small-core SVD failed to reconstruct (error " +
                              std::to_string(mismatch) + ")");
}

}  // namespace detail

// Factored implementation of the cheap line-search map. Works on the stored
// SVD throughout: at full target rank the search runs on the one-sided
// coefficient block and re-factors with one small SVD; below full rank it
// merges the sparse-cone direction into the factors with two pivoted QRs and
// one SVD of a core of size at most r. The output reconstructs the same point
// as the dense path with the same direction and step.
inline StepResult crfd_step_detailed(const FactoredMatrix& X, double f_at_X,
                                     const Dense& grad_at_X, const Objective& obj,
                                     const SolverParams& p, SparseConeKind cone_kind,
                                     TieBreak tie_break, double alpha0, OpCounters& counters) {
    if (X.rank() > p.r)
        throw std::invalid_argument("crfd_step_detailed: rank of X exceeds r");
    if (!(alpha0 >= p.alpha_lo && alpha0 <= p.alpha_hi))
        throw std::invalid_argument("crfd_step_detailed: alpha0 outside [alpha_lo, alpha_hi]");
    const Dense G = -grad_at_X;

    if (X.rank() == p.r) {
        const Dense G1 = X.U.transpose() * G;  // r x n
        const Dense G2 = G * X.V;              // m x r
        const double s1 = G1.squaredNorm();
        const double s2 = G2.squaredNorm();
        const bool left = s1 > s2 || (s1 == s2 && tie_break == TieBreak::Left);
        const double s = left ? s1 : s2;
        if (s == 0.0) return StepResult{X, f_at_X, alpha0, 0, 0.0};

        double alpha = alpha0;
        Dense W;
        double f_acc;
        int bt;
        if (left) {
            const Dense X2 = X.sigma.asDiagonal() * X.V.transpose();  // Sigma V^T, r x n
            std::tie(f_acc, bt) = detail::armijo_search(
                alpha, f_at_X, s, p.c, p.beta, p.max_backtracks_cap, counters,
                [&](double a) {
                    W = X2 + a * G1;
                    return obj.value(X.U * W);
                });
            FactoredMatrix core = svd_thin(W);
            ++counters.svd_small;
            detail::check_core_reconstruction(W, core, X.norm() + alpha * std::sqrt(s));
            return StepResult{FactoredMatrix{X.U * core.U, core.sigma, core.V}, f_acc, alpha, bt,
                              s};
        }
        const Dense X1 = X.U * X.sigma.asDiagonal();  // U Sigma, m x r
        std::tie(f_acc, bt) = detail::armijo_search(
            alpha, f_at_X, s, p.c, p.beta, p.max_backtracks_cap, counters, [&](double a) {
                W = X1 + a * G2;
                return obj.value(W * X.V.transpose());
            });
        FactoredMatrix core = svd_thin(W);
        ++counters.svd_small;
        detail::check_core_reconstruction(W, core, X.norm() + alpha * std::sqrt(s));
        return StepResult{FactoredMatrix{core.U, core.sigma, X.V * core.V}, f_acc, alpha, bt, s};
    }

    // rank X < r: sparse-cone direction, already in rank-<=1 SVD form
    const double cone_c = cone_unit_sphere_constant(cone_kind, X.rows(), X.cols());
    if (p.kappa1 > cone_c)
        throw config_error("kappa1 = " + std::to_string(p.kappa1) +
                           " exceeds the unit-sphere constant " + std::to_string(cone_c) +
                           " of the '" + to_string(cone_kind) + "' cone");
    FactoredMatrix Gbar = sparse_cone_project(cone_kind, G);
    ++counters.cone_projections;
    const double s = Gbar.sigma.squaredNorm();
    if (s == 0.0) return StepResult{X, f_at_X, alpha0, 0, 0.0};

    if (X.rank() == 0) {
        // Zero input: X + alpha Gbar is already an SVD; no merge needed.
        const Dense Gd = Gbar.dense();
        double alpha = alpha0;
        auto [f_acc, bt] =
            detail::armijo_search(alpha, f_at_X, s, p.c, p.beta, p.max_backtracks_cap, counters,
                                  [&](double a) { return obj.value(a * Gd); });
        return StepResult{FactoredMatrix{Gbar.U, alpha * Gbar.sigma, Gbar.V}, f_acc, alpha, bt, s};
    }

    Dense Ucat(X.rows(), X.rank() + Gbar.rank());
    Ucat << X.U, Gbar.U;
    Dense Vcat(X.cols(), X.rank() + Gbar.rank());
    Vcat << X.V, Gbar.V;
    const PivotedQR qru = qr_col_pivot(Ucat);
    const PivotedQR qrv = qr_col_pivot(Vcat);
    counters.qr_pivot += 2;
    const Dense R1 = qru.unpivoted_R();  // r1 x (k + kbar)
    const Dense R2 = qrv.unpivoted_R();  // r2 x (k + kbar)

    Vector sig_cat(X.rank() + Gbar.rank());
    sig_cat.head(X.rank()) = X.sigma;

    double alpha = alpha0;
    Dense core;
    auto [f_acc, bt] = detail::armijo_search(
        alpha, f_at_X, s, p.c, p.beta, p.max_backtracks_cap, counters, [&](double a) {
            sig_cat.tail(Gbar.rank()) = a * Gbar.sigma;
            core = R1 * sig_cat.asDiagonal() * R2.transpose();
            return obj.value(qru.Q * core * qrv.Q.transpose());
        });
    FactoredMatrix small = svd_thin(core);
    ++counters.svd_small;
    detail::check_core_reconstruction(core, small, X.norm() + alpha * std::sqrt(s));
    return StepResult{FactoredMatrix{qru.Q * small.U, small.sigma, qrv.Q * small.V}, f_acc, alpha,
                      bt, s};
}

// Factored rank-reduction map: one detailed step; when the input has full
// target rank and its smallest singular value is at most delta_i, a second
// detailed step from the truncation obtained by dropping the last stored
// triplet competes, and the strictly lower objective value wins.
inline MapResult crfdr_step_detailed(const FactoredMatrix& X, double f_at_X,
                                     const Dense& grad_at_X, const Objective& obj,
                                     const SolverParams& p, SparseConeKind cone_kind,
                                     TieBreak tie_break, double delta_i, double alpha0,
                                     OpCounters& counters) {
    StepResult first =
        crfd_step_detailed(X, f_at_X, grad_at_X, obj, p, cone_kind, tie_break, alpha0, counters);
    MapResult out{first.x_next, first.f_next,  first.alpha, first.predicted_decrease,
                  f_at_X,       false,         false,       first.backtracks};
    if (X.rank() == p.r && X.smallest_sigma() <= delta_i) {
        out.reduced_tried = true;
        const FactoredMatrix Xhat = truncate(X, p.r - 1);
        const Dense Xhat_dense = Xhat.dense();
        const double f_hat = obj.value(Xhat_dense);
        Dense grad_hat = obj.gradient(Xhat_dense);
        ++counters.grad_evals;
        StepResult second = crfd_step_detailed(Xhat, f_hat, grad_hat, obj, p, cone_kind, tie_break,
                                               alpha0, counters);
        out.backtracks_max = std::max(out.backtracks_max, second.backtracks);
        if (second.f_next < first.f_next) {
            out.x_next = second.x_next;
            out.f_next = second.f_next;
            out.alpha = second.alpha;
            out.predicted_decrease = second.predicted_decrease;
            out.f_base = f_hat;
            out.reduced_won = true;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Outer loops
// ---------------------------------------------------------------------------

// Per-iteration record. Counters are cumulative after the iteration's step,
// so consecutive-row differences give the per-map operation census.
struct IterateRecord {
    long iter = 0;
    int stage = 0;
    double f = 0.0;
    double surrogate = 0.0;
    double alpha = 0.0;  // 0 on the terminal record
    int rank = 0;
    int reduced = 0;  // 0: branch not tried, 1: tried and lost, 2: tried and won
    int backtracks = 0;
    double f_base = 0.0;
    double pred_dec = 0.0;
    OpCounters counters;
};

struct StageRecord {
    int stage = 0;
    int rank = 0;
    double tol = 0.0;
    long iterations = 0;
    double final_surrogate = 0.0;
    double final_f = 0.0;
    bool met = false;
};

struct RunResult {
    std::vector<IterateRecord> records;
    std::vector<StageRecord> stages;
    FactoredMatrix x_final;
    double f_final = 0.0;
    double surrogate_final = 0.0;
    long iterations = 0;
    bool converged = false;
    OpCounters counters;
    double ball_radius = 0.0;  // rho of the enclosing ball for the rate bound
    SolverParams resolved;     // parameters after default resolution
};

// Stationarity surrogate: the measure itself at full target rank (where only
// the tangent-space projection is needed), the gradient norm below it.
inline double surrogate_measure(const FactoredMatrix& X, const Dense& grad, Index r) {
    return X.rank() == r ? proj_tangent_space(X, -grad).norm() : grad.norm();
}

// Per-iteration rank-reduction threshold: receives the iteration index and the
// resolved base delta; the loop clamps the result from below at the base.
using DeltaSchedule = std::function<double(long iter, double delta_base)>;

using Stepper = std::function<MapResult(const FactoredMatrix& X, double f_at_X, const Dense& grad,
                                        const SolverParams& p, double delta_i, double alpha0,
                                        OpCounters& counters)>;

namespace detail {

struct LoopState {
    FactoredMatrix x;
    double f = 0.0;
    Dense x0_dense;
    double rho = 0.0;
    double prev_alpha = -1.0;
    bool stop_tol_resolved = false;
    long global_iter = 0;
};

// Resolve defaulted kappa1 / delta against the problem; range-check the rest.
inline SolverParams resolve_params(SolverParams p, const FactoredMatrix& X0, Index m, Index n,
                                   const DirectionPolicy& policy, bool factored_path) {
    if (p.kappa1 <= 0.0) {
        p.kappa1 = policy.method == DirectionMethod::Crfd
                       ? std::min(0.5, cone_unit_sphere_constant(policy.cone, m, n))
                       : 0.5;
    }
    if (!(p.kappa1 > 0.0 && p.kappa1 <= 0.5))
        throw std::invalid_argument("SolverParams: kappa1 must be in (0, 1/2], got " +
                                    std::to_string(p.kappa1));
    if (policy.method == DirectionMethod::Crfd &&
        p.kappa1 > cone_unit_sphere_constant(policy.cone, m, n))
        throw config_error("kappa1 = " + std::to_string(p.kappa1) +
                           " exceeds the unit-sphere constant of the '" + to_string(policy.cone) +
                           "' cone for a " + std::to_string(m) + "x" + std::to_string(n) +
                           " problem");
    if (factored_path && p.kappa2 != 1.0)
        throw config_error("the factored crfdr path is defined with kappa2 = 1; got kappa2 = " +
                           std::to_string(p.kappa2));
    if (p.delta <= 0.0) {
        const double s1 = X0.rank() > 0 ? X0.sigma(0) : 0.0;
        p.delta = s1 > 0.0 ? 1e-3 * s1 : 1e-3;
    }
    if (p.r >= std::min(m, n))
        throw std::invalid_argument("SolverParams: r must satisfy r < min{m, n}, got r = " +
                                    std::to_string(p.r) + " with m = " + std::to_string(m) +
                                    ", n = " + std::to_string(n));
    validate_params(p);
    return p;
}

// Iterates the map until the surrogate reaches tol (or hard_tol for global
// convergence), or the step budget runs out. Appends one record per step.
// Returns the last computed surrogate.
inline double run_segment(LoopState& st, const Objective& obj, const SolverParams& p,
                          const Stepper& stepper, const DeltaSchedule& schedule, bool warm_start,
                          int stage, double tol, double hard_tol, bool force_first, long budget,
                          SolverParams& mutable_p, std::vector<IterateRecord>& records,
                          OpCounters& counters, long& steps_taken, bool& hit_hard) {
    bool pending_force = force_first;
    steps_taken = 0;
    hit_hard = false;
    for (;;) {
        const Dense Xd = st.x.dense();
        Dense grad = obj.gradient(Xd);
        ++counters.grad_evals;
        const double gnorm = grad.norm();
        if (!st.stop_tol_resolved) {
            if (mutable_p.stop_tol < 0.0)
                mutable_p.stop_tol = std::max(1e-8 * gnorm, 1e-14);
            st.stop_tol_resolved = true;
        }
        const double hard = hard_tol >= 0.0 ? hard_tol : mutable_p.stop_tol;
        const double surrogate = surrogate_measure(st.x, grad, p.r);
        st.rho = std::max(st.rho,
                          (Xd - st.x0_dense).norm() + (p.alpha_hi / p.kappa2) * gnorm);
        if (surrogate <= hard) {
            hit_hard = true;
            return surrogate;
        }
        if (!pending_force && surrogate <= tol) return surrogate;
        if (steps_taken >= budget) return surrogate;
        pending_force = false;

        const double delta_i =
            schedule ? std::max(p.delta, schedule(st.global_iter, p.delta)) : p.delta;
        const double alpha0 =
            warm_start && st.prev_alpha > 0.0
                ? std::clamp(st.prev_alpha / p.beta, p.alpha_lo, p.alpha_hi)
                : p.alpha_hi;
        MapResult mr = stepper(st.x, st.f, grad, p, delta_i, alpha0, counters);
        records.push_back(IterateRecord{st.global_iter, stage, st.f, surrogate, mr.alpha,
                                        static_cast<int>(st.x.rank()),
                                        mr.reduced_tried ? (mr.reduced_won ? 2 : 1) : 0,
                                        mr.backtracks_max, mr.f_base, mr.predicted_decrease,
                                        counters});
        st.x = mr.x_next;
        st.f = mr.f_next;
        st.prev_alpha = mr.alpha;
        ++st.global_iter;
        ++steps_taken;
    }
}

inline RunResult run_loop(const FactoredMatrix& X0, const Objective& obj, SolverParams p,
                          const DirectionPolicy& policy, bool factored_path,
                          const Stepper& stepper, const DeltaSchedule& schedule,
                          bool warm_start) {
    if (X0.rows() != obj.rows() || X0.cols() != obj.cols())
        throw std::invalid_argument("run: X0 shape does not match the objective");
    p = resolve_params(p, X0, obj.rows(), obj.cols(), policy, factored_path);
    if (X0.rank() > p.r)
        throw std::invalid_argument("run: rank of X0 exceeds the target rank r");

    RunResult out;
    LoopState st;
    st.x = X0;
    st.x0_dense = X0.dense();
    st.f = obj.value(st.x0_dense);

    long steps = 0;
    bool hit_hard = false;
    const double surrogate =
        run_segment(st, obj, p, stepper, schedule, warm_start, 0, /*tol=*/-1.0,
                    /*hard_tol=*/-1.0, /*force_first=*/false, p.max_iters, p, out.records,
                    out.counters, steps, hit_hard);
    out.records.push_back(IterateRecord{st.global_iter, 0, st.f, surrogate, 0.0,
                                        static_cast<int>(st.x.rank()), 0, 0, st.f, 0.0,
                                        out.counters});
    out.x_final = st.x;
    out.f_final = st.f;
    out.surrogate_final = surrogate;
    out.iterations = steps;
    out.converged = hit_hard;
    out.ball_radius = st.rho;
    out.resolved = p;
    return out;
}

}  // namespace detail

// ERFDR loop on the dense path: iterates the rank-reduction map with the given
// direction policy until the stationarity surrogate reaches stop_tol or the
// iteration budget runs out.
inline RunResult erfdr_run(const FactoredMatrix& X0, const Objective& obj, const SolverParams& p,
                           const DirectionPolicy& policy, const DeltaSchedule& schedule = {},
                           bool warm_start = false) {
    Stepper stepper = [&obj, policy](const FactoredMatrix& X, double f, const Dense& g,
                                     const SolverParams& pp, double delta_i, double alpha0,
                                     OpCounters& c) {
        return erfdr_map(X, f, g, obj, pp, policy, delta_i, alpha0, c);
    };
    return detail::run_loop(X0, obj, p, policy, /*factored_path=*/false, stepper, schedule,
                            warm_start);
}

// CRFDR loop on the factored path: same outer iteration, with the detailed
// factored map (never a large-scale SVD).
inline RunResult crfdr_run(const FactoredMatrix& X0, const Objective& obj, const SolverParams& p,
                           SparseConeKind cone_kind, const DeltaSchedule& schedule = {},
                           TieBreak tie_break = TieBreak::Left, bool warm_start = false) {
    DirectionPolicy policy{DirectionMethod::Crfd, cone_kind, tie_break};
    Stepper stepper = [&obj, cone_kind, tie_break](const FactoredMatrix& X, double f,
                                                   const Dense& g, const SolverParams& pp,
                                                   double delta_i, double alpha0, OpCounters& c) {
        return crfdr_step_detailed(X, f, g, obj, pp, cone_kind, tie_break, delta_i, alpha0, c);
    };
    return detail::run_loop(X0, obj, p, policy, /*factored_path=*/true, stepper, schedule,
                            warm_start);
}

// State handed to a rank policy after a stage completes.
struct StageState {
    int stage = 0;
    int rank = 0;      // rank bound r_i of the finished stage
    int target_r = 0;  // overall target rank
    double f = 0.0;
    double surrogate = 0.0;
};

using RankPolicy = std::function<int(const StageState&)>;

inline RankPolicy increase_by_policy(int step) {
    return [step](const StageState& s) { return std::min(s.target_r, s.rank + step); };
}

// Rank-increasing scheme: stage i runs the iteration map at rank bound r_i
// (at least one map application) until the stage surrogate falls to tau^i *
// eps, then a policy picks r_{i+1} in {r_i, ..., r}. Stages stop early on
// global stationarity.
inline RunResult rank_increasing_run(const FactoredMatrix& X0, int r0, const Objective& obj,
                                     const SolverParams& p, double tau, double eps,
                                     const RankPolicy& policy,
                                     const DirectionPolicy& direction, bool factored_path = true,
                                     const DeltaSchedule& schedule = {}, bool warm_start = false,
                                     int max_stages = 64) {
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("rank_increasing_run: tau must be in (0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("rank_increasing_run: eps must be positive");
    if (r0 < 1 || r0 > p.r)
        throw std::invalid_argument("rank_increasing_run: r0 must be in {1, ..., r}");
    if (X0.rank() > r0)
        throw std::invalid_argument("rank_increasing_run: rank of X0 exceeds r0");
    if (max_stages < 1) throw std::invalid_argument("rank_increasing_run: max_stages must be >= 1");

    // Resolve against the overall target rank so stop_tol/delta/kappa1 are
    // consistent across stages.
    SolverParams resolved =
        detail::resolve_params(p, X0, obj.rows(), obj.cols(), direction, factored_path);

    const Objective* obj_ptr = &obj;
    Stepper stepper;
    if (factored_path) {
        if (direction.method != DirectionMethod::Crfd)
            throw config_error("the factored path supports only the cheap direction");
        stepper = [obj_ptr, direction](const FactoredMatrix& X, double f, const Dense& g,
                                       const SolverParams& pp, double delta_i, double alpha0,
                                       OpCounters& c) {
            return crfdr_step_detailed(X, f, g, *obj_ptr, pp, direction.cone, direction.tie,
                                       delta_i, alpha0, c);
        };
    } else {
        stepper = [obj_ptr, direction](const FactoredMatrix& X, double f, const Dense& g,
                                       const SolverParams& pp, double delta_i, double alpha0,
                                       OpCounters& c) {
            return erfdr_map(X, f, g, *obj_ptr, pp, direction, delta_i, alpha0, c);
        };
    }

    RunResult out;
    detail::LoopState st;
    st.x = X0;
    st.x0_dense = X0.dense();
    st.f = obj.value(st.x0_dense);

    int r_i = r0;
    double surrogate = 0.0;
    bool hit_hard = false;
    for (int stage = 0; stage < max_stages; ++stage) {
        SolverParams ps = resolved;
        ps.r = r_i;
        const double tol = std::pow(tau, stage) * eps;
        long steps = 0;
        surrogate = detail::run_segment(st, obj, ps, stepper, schedule, warm_start, stage, tol,
                                        /*hard_tol=*/resolved.stop_tol, /*force_first=*/true,
                                        resolved.max_iters, resolved, out.records, out.counters,
                                        steps, hit_hard);
        out.iterations += steps;
        out.stages.push_back(StageRecord{stage, r_i, tol, steps, surrogate, st.f,
                                         surrogate <= tol});
        if (steps >= resolved.max_iters && surrogate > tol) break;  // inner budget exhausted
        const int r_next =
            policy(StageState{stage, r_i, resolved.r, st.f, surrogate});
        if (r_next < r_i || r_next > resolved.r)
            throw policy_error("rank policy returned " + std::to_string(r_next) +
                               ", outside {" + std::to_string(r_i) + ", ..., " +
                               std::to_string(resolved.r) + "}");
        // Stationarity is relative to the stage's rank bound: a raised bound
        // reopens descent directions, so stop only once the bound is final.
        if (hit_hard && r_next == r_i) break;
        r_i = r_next;
    }
    const int last_stage = out.stages.empty() ? 0 : out.stages.back().stage;
    out.records.push_back(IterateRecord{st.global_iter, last_stage, st.f, surrogate, 0.0,
                                        static_cast<int>(st.x.rank()), 0, 0, st.f, 0.0,
                                        out.counters});
    out.x_final = st.x;
    out.f_final = st.f;
    out.surrogate_final = surrogate;
    out.converged = surrogate <= resolved.stop_tol;
    out.ball_radius = st.rho;
    out.resolved = resolved;
    return out;
}

}  // namespace rankmin
