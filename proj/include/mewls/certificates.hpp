#pragma once

#include "mewls/model.hpp"
#include "mewls/numerics.hpp"

// Second-order / invertibility certificates evaluated at a single branch
// point. Positive definiteness of the reduced matrix returned by
// schur_complement simultaneously certifies that the stationarity Jacobian is
// nonsingular and that the point is a genuine entropy maximizer, so its
// smallest eigenvalue is the quantity continuation monitors for breakdown.

namespace mewls {

/// Reduced n x n second-order block A^T W A - 2 mu A^T diag(r) W diag(r) A.
inline Matrix schur_complement(const Problem& p, const BranchState& y) {
    const Vector r = residuals(p, y.x);
    const Vector d = (y.w.array() * (1.0 - 2.0 * y.mu * r.array().square())).matrix();
    return p.A.transpose() * d.asDiagonal() * p.A;
}

inline double schur_min_eigenvalue(const Problem& p, const BranchState& y) {
    return sym_eig_min(schur_complement(p, y));
}

/// Smallest singular value of W^{1/2} A; staying bounded away from zero is the
/// uniform-coercivity condition under which only Jacobian singularity can end
/// the branch.
inline double weighted_design_min_singular_value(const Problem& p, const BranchState& y) {
    const Matrix scaled = y.w.array().sqrt().matrix().asDiagonal() * p.A;
    return min_singular_value(scaled);
}

/// 2 mu max_i(w_i r_i^2) ||A||^2 / s0^2: the reduced block stays positive
/// definite while this is below one.
inline double b_positivity_margin(const Problem& p, const BranchState& y, double s0) {
    const Vector r = residuals(p, y.x);
    const double peak = (y.w.array() * r.array().square()).maxCoeff();
    const double a2 = max_singular_value(p.A);
    return 2.0 * y.mu * peak * a2 * a2 / (s0 * s0);
}

}  // namespace mewls
