#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mewls/certificates.hpp"
#include "mewls/continuation.hpp"
#include "mewls/model.hpp"
#include "mewls/numerics.hpp"

// Trajectory-level analyses: the entropy/multiplier value curve, the envelope
// identity dH/dE = mu, core-set identification with the limiting interpolant,
// asymptotic rate fits, and a brute-force simplex-grid oracle for tiny
// instances.

namespace mewls {

struct ValueCurvePoint {
    double mse = 0.0;
    double entropy = 0.0;
    double mu = 0.0;
};

struct ValueCurve {
    std::vector<ValueCurvePoint> points;
};

inline ValueCurve value_curve(const Trajectory& traj) {
    ValueCurve curve;
    curve.points.reserve(traj.samples.size());
    for (const BranchSample& s : traj.samples)
        curve.points.push_back({s.state.mse, s.entropy, s.state.mu});
    return curve;
}

struct EnvelopeReport {
    double max_rel_err = 0.0;
    int samples_checked = 0;
};

/// Central-difference check of dH/dE = mu at every interior sample, with
/// difference states obtained by correcting onto the branch at E +- delta.
/// Vacuous trajectories (fewer than three samples) report zero checks.
inline EnvelopeReport envelope_check(const Problem& p, const Trajectory& traj, double delta_rel) {
    EnvelopeReport report;
    if (traj.samples.size() < 3) return report;
    const double hi = traj.samples.front().state.mse;
    const double lo = traj.samples.back().state.mse;
    for (std::size_t i = 1; i + 1 < traj.samples.size(); ++i) {
        const double e = traj.samples[i].state.mse;
        const double mu = traj.samples[i].state.mu;
        const double delta = delta_rel * e;
        if (e + delta > hi || e - delta < lo) continue;
        const double h_plus = entropy(sample_at(p, traj, e + delta).w);
        const double h_minus = entropy(sample_at(p, traj, e - delta).w);
        const double slope = (h_plus - h_minus) / (2.0 * delta);
        report.max_rel_err = std::max(report.max_rel_err, std::abs(slope - mu) / (1.0 + mu));
        ++report.samples_checked;
    }
    return report;
}

struct CoreSetReport {
    std::vector<Index> core_indices;
    Index size = 0;
    double epsilon0 = 0.0;       // s0^2 / ||A||^2
    double s0 = 0.0;             // min over samples of sigma_min(W^{1/2} A)
    double threshold_used = 0.0;
    Vector weights_final;
};

/// Classify the indices whose final weights stay above a threshold. The
/// default threshold is epsilon0 derived from the trajectory's own coercivity
/// estimate; an override is accepted because epsilon0 can be conservative.
inline CoreSetReport core_set(const Problem& p, const Trajectory& traj,
                              std::optional<double> override_threshold = std::nullopt) {
    if (traj.samples.empty())
        throw InsufficientSamples("core_set: trajectory has no samples");

    CoreSetReport report;
    report.s0 = std::numeric_limits<double>::infinity();
    for (const BranchSample& s : traj.samples)
        report.s0 = std::min(report.s0, s.sigma_min_weighted);
    const double a_norm = max_singular_value(p.A);
    report.epsilon0 = report.s0 * report.s0 / (a_norm * a_norm);
    report.threshold_used = override_threshold.value_or(report.epsilon0);
    report.weights_final = traj.samples.back().state.w;

    for (Index i = 0; i < p.m; ++i)
        if (report.weights_final(i) >= report.threshold_used) report.core_indices.push_back(i);
    report.size = static_cast<Index>(report.core_indices.size());

    if (report.size < p.n)
        throw CoreSetRankDeficient("core_set: only " + std::to_string(report.size) +
                                   " indices cleared the threshold; need at least " +
                                   std::to_string(p.n));
    Matrix a_core(report.size, p.n);
    for (Index k = 0; k < report.size; ++k) a_core.row(k) = p.A.row(report.core_indices[k]);
    if (!(min_singular_value(a_core) > rank_tol * max_singular_value(a_core)))
        throw CoreSetRankDeficient("core_set: rows selected by the threshold lose column rank");
    return report;
}

struct LimitInterpolant {
    Vector x;
    Vector residuals_on_core;
};

/// Least-squares fit restricted to the given rows; for a consistent subsystem
/// the residuals vanish and x interpolates those rows exactly.
inline LimitInterpolant limit_interpolant(const Problem& p, const std::vector<Index>& core) {
    if (core.empty()) throw RankDeficient("limit_interpolant: empty index set");
    Matrix a(static_cast<Index>(core.size()), p.n);
    Vector b(static_cast<Index>(core.size()));
    for (std::size_t k = 0; k < core.size(); ++k) {
        if (core[k] < 0 || core[k] >= p.m)
            throw OutOfRange("limit_interpolant: index out of range");
        a.row(static_cast<Index>(k)) = p.A.row(core[k]);
        b(static_cast<Index>(k)) = p.b(core[k]);
    }
    LimitInterpolant out;
    const Vector w = Vector::Constant(a.rows(), 1.0 / static_cast<double>(a.rows()));
    out.x = weighted_least_squares(a, b, w);
    out.residuals_on_core = a * out.x - b;
    return out;
}

struct RateFit {
    Index index = 0;
    double slope = 0.0;
    double correlation = 0.0;
};

struct RateReport {
    std::vector<RateFit> outlier_weight_fits;   // log w_j versus log E, j outside the core
    std::vector<RateFit> inlier_residual_fits;  // log |r_i| versus log E, i in the core
    double mu_log_slope = 0.0;                  // mu versus log(1/E)
    double mu_log_correlation = 0.0;
    double fit_lo = 0.0;
    double fit_hi = 0.0;
    int samples_used = 0;
};

namespace detail {

// Simple line fit y = a + slope * t; returns slope and Pearson correlation.
inline std::pair<double, double> line_fit(const std::vector<double>& t,
                                          const std::vector<double>& y) {
    const double n = static_cast<double>(t.size());
    double st = 0, sy = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        st += t[k];
        sy += y[k];
    }
    const double mt = st / n, my = sy / n;
    double stt = 0, sty = 0, syy = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        stt += (t[k] - mt) * (t[k] - mt);
        sty += (t[k] - mt) * (y[k] - my);
        syy += (y[k] - my) * (y[k] - my);
    }
    const double slope = stt > 0 ? sty / stt : 0.0;
    const double denom = std::sqrt(stt * syy);
    const double corr = denom > 0 ? sty / denom : 0.0;
    return {slope, corr};
}

}  // namespace detail

/// Log-log (weights, residuals) and semi-log (mu) line fits over the samples
/// inside [fit_lo, fit_hi]. Correlations are always reported alongside the
/// slopes; the theory fixes orders, not constants.
inline RateReport rate_report(const Problem& p, const Trajectory& traj,
                              const std::vector<Index>& core, double fit_lo, double fit_hi) {
    if (!(fit_lo > 0.0) || !(fit_lo < fit_hi))
        throw std::invalid_argument("rate_report: need 0 < fit_lo < fit_hi");

    std::vector<const BranchSample*> picked;
    for (const BranchSample& s : traj.samples)
        if (s.state.mse >= fit_lo && s.state.mse <= fit_hi) picked.push_back(&s);
    if (picked.size() < 10)
        throw InsufficientSamples("rate_report: only " + std::to_string(picked.size()) +
                                  " samples inside the fit range; need at least 10");

    RateReport report;
    report.fit_lo = fit_lo;
    report.fit_hi = fit_hi;
    report.samples_used = static_cast<int>(picked.size());

    std::vector<bool> in_core(p.m, false);
    for (Index i : core) in_core[static_cast<std::size_t>(i)] = true;

    std::vector<double> log_e(picked.size());
    for (std::size_t k = 0; k < picked.size(); ++k) log_e[k] = std::log(picked[k]->state.mse);

    std::vector<double> ys(picked.size());
    for (Index j = 0; j < p.m; ++j) {
        if (in_core[static_cast<std::size_t>(j)]) continue;
        for (std::size_t k = 0; k < picked.size(); ++k)
            ys[k] = std::log(std::max(picked[k]->state.w(j), 1e-300));
        auto [slope, corr] = detail::line_fit(log_e, ys);
        report.outlier_weight_fits.push_back({j, slope, corr});
    }
    std::vector<Vector> rs(picked.size());
    for (std::size_t k = 0; k < picked.size(); ++k) rs[k] = residuals(p, picked[k]->state.x);
    for (Index i : core) {
        for (std::size_t k = 0; k < picked.size(); ++k)
            ys[k] = std::log(std::max(std::abs(rs[k](i)), 1e-300));
        auto [slope, corr] = detail::line_fit(log_e, ys);
        report.inlier_residual_fits.push_back({i, slope, corr});
    }
    std::vector<double> log_inv_e(picked.size()), mus(picked.size());
    for (std::size_t k = 0; k < picked.size(); ++k) {
        log_inv_e[k] = -log_e[k];
        mus[k] = picked[k]->state.mu;
    }
    auto [slope, corr] = detail::line_fit(log_inv_e, mus);
    report.mu_log_slope = slope;
    report.mu_log_correlation = corr;
    return report;
}

struct OracleResult {
    Vector w;
    Vector x;
    double entropy = 0.0;
    double mse = 0.0;
};

namespace detail {

// Visit every composition of `total` into `parts` nonnegative integers within
// the per-coordinate bounds.
inline void for_each_composition(int total, int parts, const std::vector<int>& lo,
                                 const std::vector<int>& hi, std::vector<int>& k, int pos,
                                 const std::function<void(const std::vector<int>&)>& visit) {
    if (pos == parts - 1) {
        if (total >= lo[pos] && total <= hi[pos]) {
            k[pos] = total;
            visit(k);
        }
        return;
    }
    int remaining_lo = 0, remaining_hi = 0;
    for (int q = pos + 1; q < parts; ++q) {
        remaining_lo += lo[q];
        remaining_hi += hi[q];
    }
    const int from = std::max(lo[pos], total - remaining_hi);
    const int to = std::min(hi[pos], total - remaining_lo);
    for (int v = from; v <= to; ++v) {
        k[pos] = v;
        for_each_composition(total - v, parts, lo, hi, k, pos + 1, visit);
    }
}

struct OracleScan {
    bool found = false;
    Vector w, x;
    double entropy = -std::numeric_limits<double>::infinity();
    double mse = 0.0;
    int tightness = -1;
};

// One sweep over the lattice {k/total} within the box. A point is feasible
// when its weighted MSE lies within one lattice cell's worth of MSE variation
// around the target; among feasible points the scan prefers the tightest
// MSE match (in band/2^l halvings) and only then the largest entropy,
// otherwise the entropy maximizer would always sit at the band edge. Ties go
// to the lexicographically smallest weight vector so scan order never
// matters.
inline OracleScan scan_lattice(const Problem& p, double target, int total,
                               const std::vector<int>& lo, const std::vector<int>& hi) {
    constexpr int max_tightness = 3;
    OracleScan best;
    std::vector<int> k(static_cast<std::size_t>(p.m), 0);
    const double inv = 1.0 / static_cast<double>(total);
    Vector w(p.m);

    for_each_composition(total, static_cast<int>(p.m), lo, hi, k, 0,
                         [&](const std::vector<int>& counts) {
        for (Index i = 0; i < p.m; ++i) w(i) = counts[static_cast<std::size_t>(i)] * inv;
        Vector x;
        try {
            x = weighted_least_squares(p.A, p.b, w);
        } catch (const RankDeficient&) {
            return;  // boundary point with too little support
        }
        const Vector r = residuals(p, x);
        const Vector r2 = r.array().square();
        const double mse = w.dot(r2);
        // moving one lattice cell of mass changes the MSE by at most this
        const double band = (r2.maxCoeff() - r2.minCoeff()) * inv + 1e-12 * (1.0 + target);
        const double off = std::abs(mse - target);
        if (off > band) return;
        int tight = 0;
        while (tight < max_tightness && off <= band / (2 << tight)) ++tight;
        const double h = entropy(w);
        const bool better =
            tight > best.tightness ||
            (tight == best.tightness &&
             (h > best.entropy ||
              (h == best.entropy &&
               std::lexicographical_compare(w.data(), w.data() + w.size(), best.w.data(),
                                            best.w.data() + best.w.size()))));
        if (!best.found || better) {
            best.found = true;
            best.w = w;
            best.x = x;
            best.entropy = h;
            best.mse = mse;
            best.tightness = tight;
        }
    });
    return best;
}

}  // namespace detail

/// Independent global check of the constrained entropy problem on tiny
/// instances: enumerate the simplex lattice of the given resolution, pick the
/// entropy maximizer among MSE-feasible points, then refine once on a finer
/// local lattice around the winner. Deliberately brute force.
inline OracleResult brute_force_oracle(const Problem& p, double target, int resolution) {
    if (p.m > 5 || p.n > 2)
        throw std::invalid_argument("brute_force_oracle: refusing m > 5 or n > 2 "
                                    "(lattice enumeration grows combinatorially)");
    if (resolution < 2) throw std::invalid_argument("brute_force_oracle: resolution too small");
    if (!(target > 0.0)) throw std::invalid_argument("brute_force_oracle: target must be positive");

    {
        const Vector uniform = Vector::Constant(p.m, 1.0 / static_cast<double>(p.m));
        const Vector x0 = weighted_least_squares(p.A, p.b, uniform);
        const double mse_uw = weighted_mse(uniform, residuals(p, x0));
        if (target > mse_uw * (1.0 + 1e-12))
            throw NoFeasibleGridPoint("brute_force_oracle: target " + format17(target) +
                                      " above the admissible range (0, " + format17(mse_uw) + "]");
    }

    const int m = static_cast<int>(p.m);
    std::vector<int> lo(m, 0), hi(m, resolution);
    detail::OracleScan coarse = detail::scan_lattice(p, target, resolution, lo, hi);
    if (!coarse.found)
        throw NoFeasibleGridPoint("brute_force_oracle: no lattice point within the MSE band; "
                                  "raise the resolution or adjust the target");

    // One refinement: 10x finer lattice around the coarse winner. The box is
    // six coarse cells wide because the coarse winner sits up to several cells
    // from the band center (entropy pulls it to the band edge).
    const int fine = resolution * 10;
    std::vector<int> lo2(m), hi2(m);
    for (int i = 0; i < m; ++i) {
        const int center = static_cast<int>(std::lround(coarse.w(i) * fine));
        lo2[i] = std::max(0, center - 6 * (fine / resolution));
        hi2[i] = std::min(fine, center + 6 * (fine / resolution));
    }
    detail::OracleScan refined = detail::scan_lattice(p, target, fine, lo2, hi2);
    const detail::OracleScan& winner = refined.found ? refined : coarse;

    return {winner.w, winner.x, winner.entropy, winner.mse};
}

}  // namespace mewls
