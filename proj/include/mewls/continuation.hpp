#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mewls/certificates.hpp"
#include "mewls/model.hpp"
#include "mewls/numerics.hpp"

// Branch continuation in the error level E: from the uniform-weight start the
// stationary system F(y; E) = 0 is traced toward a target E by an Euler
// predictor along the exact tangent followed by Newton re-projection onto the
// branch. Correction removes all integrator drift, so the trace inherits the
// algebraic accuracy of Newton rather than an ODE tolerance. Breakdown is
// detected through the smallest eigenvalue of the reduced second-order block
// and localized by bisection in E.

namespace mewls {

struct ContinuationConfig {
    double target_mse = 0.0;       // required; admissible range (0, mse_uw]
    double h0_rel = 1e-3;          // initial step as a fraction of mse_uw
    double h_max_rel = 0.1;
    double h_min_rel = 1e-12;
    double newton_tol = 1e-11;     // certified states satisfy ||F||_inf <= newton_tol*(1+||b||_inf)
    int newton_max_iter = 30;
    double grow_factor = 1.5;
    double shrink_factor = 0.5;
    double boundary_fraction = 0.9;  // fraction-to-boundary damping constant
    double eig_event_tol = 1e-3;     // relative E-width for singularity localization
    int sample_count = 200;          // log-spaced export grid size
    std::vector<double> sample_grid;  // explicit grid; overrides sample_count when nonempty
    std::string seed_metadata;
};

struct BranchSample {
    BranchState state;
    double eig_min_schur = 0.0;
    double sigma_min_weighted = 0.0;
    double entropy = 0.0;
    double gibbs_drift = 0.0;
    int newton_iters = 0;
    double step_size = 0.0;
};

struct Trajectory {
    std::string problem_fingerprint;
    std::vector<BranchSample> samples;  // strictly decreasing in mse
    OlsSummary ols;
    ContinuationConfig config;
};

enum class TerminationReason {
    ReachedTarget,
    BreakdownJacobianSingular,
    BreakdownWeightVanishing,
    BreakdownNewtonStall,
    DegenerateStart,
    EscapeDetected,
};

inline const char* to_string(TerminationReason r) {
    switch (r) {
        case TerminationReason::ReachedTarget: return "ReachedTarget";
        case TerminationReason::BreakdownJacobianSingular: return "BreakdownJacobianSingular";
        case TerminationReason::BreakdownWeightVanishing: return "BreakdownWeightVanishing";
        case TerminationReason::BreakdownNewtonStall: return "BreakdownNewtonStall";
        case TerminationReason::DegenerateStart: return "DegenerateStart";
        case TerminationReason::EscapeDetected: return "EscapeDetected";
    }
    return "Unknown";
}

struct TerminationReport {
    TerminationReason reason = TerminationReason::ReachedTarget;
    double mse_final = 0.0;
    // evidence
    double eig_min = std::numeric_limits<double>::quiet_NaN();
    double min_weight = std::numeric_limits<double>::quiet_NaN();
    double y_inf_norm = std::numeric_limits<double>::quiet_NaN();
    double step_size = std::numeric_limits<double>::quiet_NaN();
    std::string message;
};

struct NewtonResult {
    BranchState state;
    int iterations = 0;
    double residual_norm = 0.0;
};

struct TraceResult {
    Trajectory trajectory;
    TerminationReport report;
};

namespace detail {

// ||y||_inf over the stacked state (lambda, mu, w, x).
inline double state_inf_norm(const BranchState& y) {
    return std::max(std::max(std::abs(y.lambda), std::abs(y.mu)),
                    std::max(inf_norm(y.w), inf_norm(y.x)));
}

// Largest alpha <= 1 with w + alpha*dw >= (1 - tau) w componentwise.
inline double boundary_step_fraction(const Vector& w, const Vector& dw, double tau) {
    double alpha = 1.0;
    for (Index i = 0; i < w.size(); ++i)
        if (dw(i) < 0.0) alpha = std::min(alpha, tau * w(i) / (-dw(i)));
    return alpha;
}

inline BranchState apply_step(const Problem& p, const BranchState& y, const Vector& dy,
                              double alpha) {
    BranchState out = y;
    out.lambda += alpha * dy(0);
    out.mu += alpha * dy(1);
    out.w += alpha * dy.segment(2, p.m);
    out.x += alpha * dy.segment(2 + p.m, p.n);
    return out;
}

inline constexpr double escape_norm = 1e12;
inline constexpr double weight_floor = 1e-300;
inline constexpr int max_trace_steps = 200000;

}  // namespace detail

/// Branch derivative dy/dE at a certified state: the unique solution of
/// J(y) y' = e_2, where e_2 selects the MSE-constraint row.
/// Throws SingularMatrix at degenerate points; callers treat that as a
/// breakdown candidate.
inline Vector branch_tangent(const Problem& p, const BranchState& y) {
    Vector e2 = Vector::Zero(2 + p.m + p.n);
    e2(1) = 1.0;
    return solve_linear(stationarity_jacobian(p, y), e2);
}

/// Newton correction of `guess` onto the branch at fixed error level `mse`.
/// Steps are damped by the fraction-to-boundary rule so weights stay strictly
/// positive throughout. Returns a state with
/// ||F||_inf <= newton_tol * (1 + ||b||_inf).
inline NewtonResult newton_correct(const Problem& p, const BranchState& guess, double mse,
                                   const ContinuationConfig& cfg) {
    if ((guess.w.array() <= 0.0).any())
        throw NonPositiveWeight("newton_correct: guess weights must be strictly positive");

    const double stop_tol = cfg.newton_tol * (1.0 + inf_norm(p.b));
    BranchState y = guess;
    y.mse = mse;

    Vector f = stationarity_residual(p, y);
    double fn = inf_norm(f);
    if (fn <= stop_tol) return {std::move(y), 0, fn};

    double fn_prev = fn;
    for (int it = 1; it <= cfg.newton_max_iter; ++it) {
        const Matrix j = stationarity_jacobian(p, y);
        const Vector dy = solve_linear(j, Vector(-f));
        const double alpha =
            detail::boundary_step_fraction(y.w, dy.segment(2, p.m), cfg.boundary_fraction);
        y = detail::apply_step(p, y, dy, alpha);

        f = stationarity_residual(p, y);
        fn = inf_norm(f);
        if (!std::isfinite(fn))
            throw NewtonDiverged("newton_correct: non-finite residual at iteration " +
                                 std::to_string(it));
        if (fn <= stop_tol) {
            // One polishing step squeezes out the quadratic tail; kept only if
            // it actually improves, so the certified iterate cannot regress.
            try {
                const Matrix j2 = stationarity_jacobian(p, y);
                const Vector dy2 = solve_linear(j2, Vector(-f));
                const double a2 =
                    detail::boundary_step_fraction(y.w, dy2.segment(2, p.m), cfg.boundary_fraction);
                BranchState y2 = detail::apply_step(p, y, dy2, a2);
                Vector f2 = stationarity_residual(p, y2);
                const double fn2 = inf_norm(f2);
                if (std::isfinite(fn2) && fn2 < fn) {
                    y = std::move(y2);
                    fn = fn2;
                }
            } catch (const SingularMatrix&) {
            }
            return {std::move(y), it, fn};
        }
        if (it >= 3 && fn > 10.0 * fn_prev)
            throw NewtonDiverged("newton_correct: residual grew from " + std::to_string(fn_prev) +
                                 " to " + std::to_string(fn));
        fn_prev = fn;
    }
    throw NewtonDiverged("newton_correct: no convergence within " +
                         std::to_string(cfg.newton_max_iter) + " iterations");
}

namespace detail {

inline BranchSample make_sample(const Problem& p, BranchState state, int iters, double h) {
    BranchSample s;
    s.eig_min_schur = schur_min_eigenvalue(p, state);
    s.sigma_min_weighted = weighted_design_min_singular_value(p, state);
    s.entropy = mewls::entropy(state.w);
    s.gibbs_drift = mewls::gibbs_drift(p, state);
    s.newton_iters = iters;
    s.step_size = h;
    s.state = std::move(state);
    return s;
}

// Euler predictor damped so the predicted weights stay strictly positive.
inline BranchState predict(const Problem& p, const BranchState& y, const Vector& tangent,
                           double delta_mse, double tau) {
    const Vector dy = delta_mse * tangent;
    const double alpha = boundary_step_fraction(y.w, dy.segment(2, p.m), tau);
    return apply_step(p, y, dy, alpha);
}

// Bisect in E between a certified positive-eigenvalue state and a bad level
// (eigenvalue crossed or corrector failure) until the bracket is narrower than
// eig_event_tol relative. Returns the localized level and the last good state.
inline std::pair<double, BranchState> localize_singularity(const Problem& p, BranchState good,
                                                           double bad_mse,
                                                           const ContinuationConfig& cfg) {
    double hi = good.mse;
    double lo = bad_mse;
    for (int it = 0; it < 200 && (hi - lo) > cfg.eig_event_tol * hi; ++it) {
        const double mid = 0.5 * (hi + lo);
        BranchState guess = good;
        try {
            guess = predict(p, good, branch_tangent(p, good), mid - good.mse,
                            cfg.boundary_fraction);
        } catch (const SingularMatrix&) {
        }
        try {
            NewtonResult nr = newton_correct(p, guess, mid, cfg);
            if (schur_min_eigenvalue(p, nr.state) > 0.0) {
                good = std::move(nr.state);
                hi = mid;
            } else {
                lo = mid;
            }
        } catch (const Error&) {
            lo = mid;
        }
    }
    return {0.5 * (hi + lo), std::move(good)};
}

}  // namespace detail

/// Trace the branch from the uniform-weight level down toward
/// cfg.target_mse. Returns the accepted samples plus a report classifying why
/// tracing stopped; method-level failures are reported, not thrown.
inline TraceResult trace_branch(const Problem& p, const ContinuationConfig& cfg) {
    if (!(cfg.target_mse > 0.0))
        throw std::invalid_argument("trace_branch: target_mse must be positive");
    if (!(cfg.h_min_rel > 0.0) || !(cfg.h_min_rel < cfg.h0_rel) || !(cfg.h0_rel <= cfg.h_max_rel))
        throw std::invalid_argument("trace_branch: need 0 < h_min_rel < h0_rel <= h_max_rel");
    if (!(cfg.boundary_fraction > 0.0 && cfg.boundary_fraction < 1.0))
        throw std::invalid_argument("trace_branch: boundary_fraction must lie in (0, 1)");

    auto [ols, y0] = ols_initial(p);
    const double mse_uw = ols.mse_uw;
    if (cfg.target_mse > mse_uw * (1.0 + 1e-12))
        throw std::invalid_argument("trace_branch: target_mse " + format17(cfg.target_mse) +
                                    " above admissible range (0, " + format17(mse_uw) + "]");

    TraceResult out;
    out.trajectory.problem_fingerprint = fingerprint(p);
    out.trajectory.ols = ols;
    out.trajectory.config = cfg;

    const Vector r2 = ols.r_star.array().square();
    if (ols.r2_spread <= r2_spread_rel * (1.0 + r2.maxCoeff())) {
        out.report.reason = TerminationReason::DegenerateStart;
        out.report.mse_final = mse_uw;
        out.report.message =
            "squared residuals constant at the uniform-weight start (spread " +
            format17(ols.r2_spread) + "); Jacobian singular, no branch to follow";
        return out;
    }

    out.trajectory.samples.push_back(detail::make_sample(p, y0, 0, 0.0));

    const double target = std::min(cfg.target_mse, mse_uw);
    if (target >= mse_uw * (1.0 - 1e-15)) {
        out.report.reason = TerminationReason::ReachedTarget;
        out.report.mse_final = mse_uw;
        return out;
    }

    auto finish = [&](TerminationReason reason, double mse_final, std::string msg) {
        out.report.reason = reason;
        out.report.mse_final = mse_final;
        out.report.message = std::move(msg);
        const BranchSample& last = out.trajectory.samples.back();
        out.report.eig_min = last.eig_min_schur;
        out.report.min_weight = last.state.w.minCoeff();
        out.report.y_inf_norm = detail::state_inf_norm(last.state);
    };

    BranchState y = y0;
    double h = cfg.h0_rel * mse_uw;
    const double h_min = cfg.h_min_rel * mse_uw;
    const double h_max = cfg.h_max_rel * mse_uw;

    for (int step = 0; step < detail::max_trace_steps; ++step) {
        Vector tangent;
        try {
            tangent = branch_tangent(p, y);
        } catch (const SingularMatrix& e) {
            finish(TerminationReason::BreakdownJacobianSingular, y.mse,
                   std::string("tangent solve failed at an accepted point: ") + e.what());
            out.report.step_size = h;
            return out;
        }

        // Shrink-and-retry until the corrector lands, or give up at h_min.
        NewtonResult nr;
        double mse_next = 0.0;
        bool corrected = false;
        while (!corrected) {
            mse_next = std::max(y.mse - h, target);
            const BranchState guess =
                detail::predict(p, y, tangent, mse_next - y.mse, cfg.boundary_fraction);
            try {
                nr = newton_correct(p, guess, mse_next, cfg);
                corrected = true;
            } catch (const Error&) {
                h *= cfg.shrink_factor;
                if (h < h_min) {
                    finish(TerminationReason::BreakdownNewtonStall, y.mse,
                           "corrector kept failing; step size fell below " + format17(h_min));
                    out.report.step_size = h;
                    return out;
                }
            }
        }

        BranchState& y_new = nr.state;
        const double y_norm = detail::state_inf_norm(y_new);
        if (!(y_norm < detail::escape_norm)) {
            finish(TerminationReason::EscapeDetected, y_new.mse,
                   "state norm exceeded " + format17(detail::escape_norm));
            out.report.y_inf_norm = y_norm;
            out.report.step_size = h;
            return out;
        }
        const double w_min = y_new.w.minCoeff();
        if (w_min < detail::weight_floor) {
            finish(TerminationReason::BreakdownWeightVanishing, y_new.mse,
                   "a weight reached " + format17(w_min));
            out.report.min_weight = w_min;
            out.report.step_size = h;
            return out;
        }

        BranchSample sample = detail::make_sample(p, y_new, nr.iterations, y.mse - mse_next);
        if (!(sample.eig_min_schur > 0.0)) {
            // Eigenvalue crossed between y.mse and mse_next: localize and stop.
            // Bisection states are used for the location only; the stored
            // trajectory ends at the last regularly accepted sample.
            auto [mse_star, last_good] = detail::localize_singularity(p, y, mse_next, cfg);
            finish(TerminationReason::BreakdownJacobianSingular, mse_star,
                   "smallest eigenvalue of the reduced second-order block vanished near E = " +
                       format17(mse_star));
            out.report.eig_min = sample.eig_min_schur;  // value on the crossed side
            out.report.min_weight = last_good.w.minCoeff();
            out.report.y_inf_norm = detail::state_inf_norm(last_good);
            out.report.step_size = h;
            return out;
        }

        // Consistency of the accepted point with the branch structure; a
        // violation here is an implementation bug, not a model outcome.
        if (y_new.mu + 1e-12 * (1.0 + std::abs(y_new.mu)) < y.mu)
            throw std::logic_error("trace_branch: multiplier decreased along the branch");
        if (sample.entropy > entropy(y.w) + 1e-12 * (1.0 + std::abs(sample.entropy)))
            throw std::logic_error("trace_branch: entropy increased along the branch");

        out.trajectory.samples.push_back(std::move(sample));
        y = out.trajectory.samples.back().state;

        if (mse_next <= target) {
            finish(TerminationReason::ReachedTarget, y.mse, "");
            out.report.step_size = h;
            return out;
        }
        if (nr.iterations <= 3) h = std::min(h * cfg.grow_factor, h_max);
    }
    finish(TerminationReason::BreakdownNewtonStall, y.mse, "step budget exhausted");
    return out;
}

namespace detail {

// Predictor-corrector walk from a certified state to the requested level,
// halving the stride whenever the corrector balks. Backstop for gaps too wide
// for a single Newton jump.
inline BranchState walk_to(const Problem& p, BranchState from, double target,
                           const ContinuationConfig& cfg) {
    for (int hops = 0; hops < 200; ++hops) {
        double stride = target - from.mse;
        bool full_stride = true;
        while (true) {
            // land on the target exactly rather than within a rounding ulp
            const double next = full_stride ? target : from.mse + stride;
            BranchState guess = from;
            try {
                guess = predict(p, from, branch_tangent(p, from), next - from.mse,
                                cfg.boundary_fraction);
            } catch (const SingularMatrix&) {
            }
            try {
                from = newton_correct(p, guess, next, cfg).state;
                break;
            } catch (const Error&) {
                stride *= 0.5;
                full_stride = false;
                if (std::abs(stride) < 1e-12 * std::abs(target))
                    throw NewtonDiverged("sample_at: cannot reach E = " + format17(target) +
                                         " from E = " + format17(from.mse));
            }
        }
        if (from.mse == target) return from;
    }
    throw NewtonDiverged("sample_at: walk toward E = " + format17(target) + " did not finish");
}

}  // namespace detail

/// Certified state exactly at the requested level: correct from the stored
/// sample nearest in E, falling back to a sub-stepped walk when the gap is too
/// wide for one correction. Valid for E within the trajectory's sampled range.
inline BranchState sample_at(const Problem& p, const Trajectory& traj, double mse) {
    if (traj.samples.empty()) throw OutOfRange("sample_at: trajectory has no samples");
    const double hi = traj.samples.front().state.mse;
    const double lo = traj.samples.back().state.mse;
    const double slack = 1e-9 * hi;
    if (mse > hi + slack || mse < lo - slack)
        throw OutOfRange("sample_at: E = " + format17(mse) + " outside [" + format17(lo) + ", " +
                         format17(hi) + "]");
    const double e = std::clamp(mse, lo, hi);

    const BranchSample* nearest = &traj.samples.front();
    double best = std::abs(nearest->state.mse - e);
    for (const BranchSample& s : traj.samples) {
        const double d = std::abs(s.state.mse - e);
        if (d < best) {
            best = d;
            nearest = &s;
        }
    }
    try {
        return newton_correct(p, nearest->state, e, traj.config).state;
    } catch (const NewtonDiverged&) {
        return detail::walk_to(p, nearest->state, e, traj.config);
    }
}

/// count log-spaced levels from hi down to lo, endpoints exact.
inline std::vector<double> log_spaced_grid(double hi, double lo, int count) {
    if (!(hi > 0.0) || !(lo > 0.0) || !(lo <= hi))
        throw std::invalid_argument("log_spaced_grid: need 0 < lo <= hi");
    if (count < 2) throw std::invalid_argument("log_spaced_grid: need count >= 2");
    std::vector<double> grid(count);
    const double lh = std::log(hi), ll = std::log(lo);
    for (int k = 0; k < count; ++k)
        grid[k] = std::exp(lh + (ll - lh) * static_cast<double>(k) / (count - 1));
    grid.front() = hi;
    grid.back() = lo;
    return grid;
}

/// Re-express a traced branch on an explicit grid of levels (descending),
/// correcting each grid point onto the branch. The dense-output path for
/// export and diagnostics.
inline Trajectory resample(const Problem& p, const Trajectory& traj,
                           const std::vector<double>& grid) {
    Trajectory out;
    out.problem_fingerprint = traj.problem_fingerprint;
    out.ols = traj.ols;
    out.config = traj.config;
    if (traj.samples.empty()) return out;

    const double hi = traj.samples.front().state.mse;
    const double lo = traj.samples.back().state.mse;
    double prev = std::numeric_limits<double>::infinity();
    for (double e : grid) {
        const double clamped = std::clamp(e, lo, hi);
        if (clamped >= prev) continue;  // keep strictly decreasing
        prev = clamped;
        out.samples.push_back(detail::make_sample(p, sample_at(p, traj, clamped), 0, 0.0));
    }
    return out;
}

/// Default export grid for a trace: sample_count log-spaced levels over the
/// range the trajectory actually covers.
inline Trajectory resample_default(const Problem& p, const Trajectory& traj) {
    if (traj.samples.size() < 2) return traj;
    const double hi = traj.samples.front().state.mse;
    const double lo = traj.samples.back().state.mse;
    return resample(p, traj, log_spaced_grid(hi, lo, std::max(2, traj.config.sample_count)));
}

}  // namespace mewls
