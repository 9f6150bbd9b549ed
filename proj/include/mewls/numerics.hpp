#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "mewls/errors.hpp"

// Dense linear-algebra kernels shared by every other header. Problems here are
// desk-scale (a few thousand rows at most), so everything is a dense
// factorization; the contract is deliberately thin so the backend could be
// swapped without touching callers.

namespace mewls {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Pivots below pivot_floor_rel * ||M||_inf are treated as exact zeros: honest
// singularity reporting is what the breakdown detection downstream relies on.
inline constexpr double pivot_floor_rel = 1e-14;

// Relative singular-value threshold for rank decisions.
inline constexpr double rank_tol = 1e-12;

inline double inf_norm(const Matrix& m) {
    return m.cwiseAbs().rowwise().sum().maxCoeff();
}

inline double inf_norm(const Vector& v) {
    return v.lpNorm<Eigen::Infinity>();
}

/// Solve M v = rhs by row-pivoted LU. Rows are equilibrated to unit max-abs
/// first: the stationarity Jacobians solved here carry 1/w blocks whose scale
/// diverges as weights vanish, and the pivot floor must not chase that scale.
/// Throws SingularMatrix when the smallest pivot of the equilibrated
/// factorization falls below the relative floor.
inline Vector solve_linear(const Matrix& m, const Vector& rhs) {
    if (m.rows() != m.cols())
        throw std::invalid_argument("solve_linear: matrix must be square");
    if (rhs.size() != m.rows())
        throw std::invalid_argument("solve_linear: rhs size mismatch");
    if (!m.allFinite() || !rhs.allFinite())
        throw std::invalid_argument("solve_linear: non-finite input");

    const Vector row_scale = m.cwiseAbs().rowwise().maxCoeff();
    if (!(row_scale.minCoeff() > 0.0))
        throw SingularMatrix("solve_linear: zero row");
    const Matrix scaled = row_scale.cwiseInverse().asDiagonal() * m;
    const Vector scaled_rhs = rhs.array() / row_scale.array();

    Eigen::PartialPivLU<Matrix> lu(scaled);
    const double floor = pivot_floor_rel * inf_norm(scaled);
    const double min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(min_pivot > floor))
        throw SingularMatrix("solve_linear: pivot " + std::to_string(min_pivot) +
                             " below floor " + std::to_string(floor));
    return lu.solve(scaled_rhs);
}

/// Minimize sum_i w_i (a_i^T x - b_i)^2 through an orthogonal factorization of
/// the sqrt(w)-row-scaled matrix; the normal equations are never formed.
inline Vector weighted_least_squares(const Matrix& a, const Vector& b, const Vector& w) {
    if (a.rows() != b.size() || a.rows() != w.size())
        throw std::invalid_argument("weighted_least_squares: size mismatch");
    if ((w.array() < 0.0).any() || !(w.sum() > 0.0))
        throw std::invalid_argument("weighted_least_squares: weights must be >= 0 with positive sum");

    const Vector s = w.array().sqrt();
    const Matrix scaled = s.asDiagonal() * a;
    const Vector rhs = s.array() * b.array();

    Eigen::JacobiSVD<Matrix> svd(scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (!(sv(sv.size() - 1) > rank_tol * sv(0)))
        throw RankDeficient("weighted_least_squares: scaled matrix is rank deficient");
    return svd.solve(rhs);
}

/// Algebraically smallest eigenvalue of (S + S^T)/2. Symmetrizing first
/// absorbs the round-off asymmetry of assembled matrices.
inline double sym_eig_min(const Matrix& s) {
    if (s.rows() != s.cols())
        throw std::invalid_argument("sym_eig_min: matrix must be square");
    if (!s.allFinite())
        throw std::invalid_argument("sym_eig_min: non-finite input");
    const Matrix sym = 0.5 * (s + s.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

inline double min_singular_value(const Matrix& m) {
    if (m.rows() < m.cols())
        throw std::invalid_argument("min_singular_value: need rows >= cols");
    if (!m.allFinite())
        throw std::invalid_argument("min_singular_value: non-finite input");
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues().minCoeff();
}

inline double max_singular_value(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues().maxCoeff();
}

}  // namespace mewls
