#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>

#include "mewls/numerics.hpp"

// Problem definition and the pointwise quantities of the maximum-entropy
// weighted least squares (MEWLS) formulation: residuals, entropy, weighted
// MSE, the stationarity map, its Jacobian, the uniform-weight starting point,
// and the Gibbs representation of the weights.

namespace mewls {

// Default feasibility tolerance for branch-certified states.
inline constexpr double default_feas_tol = 1e-8;

// A squared-residual spread at or below r2_spread_rel * (1 + max r^2) means
// the uniform-weight Jacobian is singular and no branch can leave the start.
inline constexpr double r2_spread_rel = 1e-12;

/// An overdetermined system A x = b with full column rank.
struct Problem {
    Matrix A;
    Vector b;
    Index m = 0;
    Index n = 0;

    Problem(Matrix a_, Vector b_) : A(std::move(a_)), b(std::move(b_)), m(A.rows()), n(A.cols()) {
        if (n < 1 || m < n)
            throw std::invalid_argument("Problem: need m >= n >= 1");
        if (b.size() != m)
            throw DimensionMismatch("Problem: b length does not match row count");
        if (!A.allFinite() || !b.allFinite())
            throw std::invalid_argument("Problem: non-finite entries");
        Eigen::JacobiSVD<Matrix> svd(A);
        const auto& sv = svd.singularValues();
        if (!(sv(sv.size() - 1) > rank_tol * sv(0)))
            throw RankDeficient("Problem: design matrix is rank deficient");
    }
};

/// One stationary point (lambda, mu, w, x) at error level `mse`.
struct BranchState {
    double lambda = 0.0;
    double mu = 0.0;
    Vector w;
    Vector x;
    double mse = 0.0;
};

/// Uniform-weight least-squares summary, the branch's starting data.
struct OlsSummary {
    Vector x_star;        // ordinary least-squares solution
    Vector r_star;        // residual A x* - b
    double mse_uw = 0.0;  // mean squared residual under uniform weights
    double r2_spread = 0.0;  // max_i r*_i^2 - min_i r*_i^2
};

inline Vector residuals(const Problem& p, const Vector& x) {
    if (x.size() != p.n)
        throw DimensionMismatch("residuals: x length does not match column count");
    return p.A * x - p.b;
}

/// Shannon entropy -sum w_i log w_i with the convention 0 log 0 = 0.
inline double entropy(const Vector& w) {
    double h = 0.0;
    for (Index i = 0; i < w.size(); ++i)
        if (w(i) > 0.0) h -= w(i) * std::log(w(i));
    return h;
}

inline double weighted_mse(const Vector& w, const Vector& r) {
    if (w.size() != r.size())
        throw DimensionMismatch("weighted_mse: length mismatch");
    return (w.array() * r.array().square()).sum();
}

// Error level below which the system counts as consistent.
inline double mse_floor(const Problem& p) {
    return 1e-14 * (1.0 + p.b.squaredNorm() / static_cast<double>(p.m));
}

/// Uniform-weight starting point of the branch. Throws ZeroResidual when the
/// system is consistent and there is no error level to continue in.
inline std::pair<OlsSummary, BranchState> ols_initial(const Problem& p) {
    const double um = 1.0 / static_cast<double>(p.m);
    const Vector w = Vector::Constant(p.m, um);

    OlsSummary ols;
    ols.x_star = weighted_least_squares(p.A, p.b, w);
    ols.r_star = residuals(p, ols.x_star);
    ols.mse_uw = weighted_mse(w, ols.r_star);
    const Vector r2 = ols.r_star.array().square();
    ols.r2_spread = r2.maxCoeff() - r2.minCoeff();

    if (ols.mse_uw <= mse_floor(p))
        throw ZeroResidual("ols_initial: system is consistent (uniform MSE " +
                           std::to_string(ols.mse_uw) + ")");

    BranchState y;
    y.lambda = std::log(static_cast<double>(p.m)) - 1.0;
    y.mu = 0.0;
    y.w = w;
    y.x = ols.x_star;
    y.mse = ols.mse_uw;
    return {std::move(ols), std::move(y)};
}

/// Stationarity map of the constrained entropy problem, stacked as
/// (normalization, MSE constraint, weight gradient, normal equations);
/// length 2 + m + n.
inline Vector stationarity_residual(const Problem& p, const BranchState& y) {
    if (y.w.size() != p.m || y.x.size() != p.n)
        throw DimensionMismatch("stationarity_residual: state size mismatch");
    if ((y.w.array() <= 0.0).any())
        throw NonPositiveWeight("stationarity_residual: weights must be strictly positive");

    const Vector r = residuals(p, y.x);
    const Vector r2 = r.array().square();

    Vector f(2 + p.m + p.n);
    f(0) = y.w.sum() - 1.0;
    f(1) = y.w.dot(r2) - y.mse;
    f.segment(2, p.m) = y.w.array().log() + (1.0 + y.lambda) + y.mu * r2.array();
    f.segment(2 + p.m, p.n) = p.A.transpose() * (y.w.array() * r.array()).matrix();
    return f;
}

/// Exact Jacobian of the stationarity map with respect to (lambda, mu, w, x).
/// This is the full off-branch form: the MSE row keeps its x-derivative block,
/// which vanishes only once the normal equations hold.
inline Matrix stationarity_jacobian(const Problem& p, const BranchState& y) {
    if (y.w.size() != p.m || y.x.size() != p.n)
        throw DimensionMismatch("stationarity_jacobian: state size mismatch");
    if ((y.w.array() <= 0.0).any())
        throw NonPositiveWeight("stationarity_jacobian: weights must be strictly positive");

    const Index m = p.m, n = p.n;
    const Vector r = residuals(p, y.x);
    const Vector r2 = r.array().square();
    const Vector wr = (y.w.array() * r.array()).matrix();

    Matrix j = Matrix::Zero(2 + m + n, 2 + m + n);
    j.block(0, 2, 1, m).setOnes();
    j.block(1, 2, 1, m) = r2.transpose();
    j.block(1, 2 + m, 1, n) = 2.0 * (p.A.transpose() * wr).transpose();
    j.block(2, 0, m, 1).setOnes();
    j.block(2, 1, m, 1) = r2;
    j.block(2, 2, m, m) = y.w.cwiseInverse().asDiagonal();
    j.block(2, 2 + m, m, n) = 2.0 * y.mu * r.asDiagonal() * p.A;
    j.block(2 + m, 2, n, m) = p.A.transpose() * r.asDiagonal();
    j.block(2 + m, 2 + m, n, n) = p.A.transpose() * y.w.asDiagonal() * p.A;
    return j;
}

/// Weights implied by stationarity at multiplier mu and residual vector r:
/// w_i = exp(-mu r_i^2) / Z. The exponent is shifted by its minimum before
/// exponentiating so large mu never overflows.
inline Vector gibbs_weights(double mu, const Vector& r) {
    if (!std::isfinite(mu) || !r.allFinite())
        throw std::invalid_argument("gibbs_weights: non-finite input");
    Vector e = mu * r.array().square();
    e.array() -= e.minCoeff();
    Vector w = (-e.array()).exp();
    w /= w.sum();
    return w;
}

/// Max-norm distance between the stored weights and the Gibbs weights implied
/// by (mu, x). Small on any certified branch point; grows with state drift.
inline double gibbs_drift(const Problem& p, const BranchState& y) {
    return inf_norm(Vector(y.w - gibbs_weights(y.mu, residuals(p, y.x))));
}

inline std::string format17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Deterministic content hash of (m, n, A, b); FNV-1a over the raw bit
/// patterns, so byte-identical problems hash identically.
inline std::string fingerprint(const Problem& p) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        for (int k = 0; k < 8; ++k) {
            h ^= (v >> (8 * k)) & 0xffull;
            h *= 1099511628211ull;
        }
    };
    auto mix_double = [&](double d) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, sizeof(bits));
        mix(bits);
    };
    mix(static_cast<std::uint64_t>(p.m));
    mix(static_cast<std::uint64_t>(p.n));
    for (Index i = 0; i < p.m; ++i)
        for (Index j = 0; j < p.n; ++j) mix_double(p.A(i, j));
    for (Index i = 0; i < p.m; ++i) mix_double(p.b(i));
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace mewls
