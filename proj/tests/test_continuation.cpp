#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mewls/continuation.hpp"
#include "mewls/datagen.hpp"

using namespace mewls;

namespace {

ContinuationConfig default_config(double target) {
    ContinuationConfig cfg;
    cfg.target_mse = target;
    return cfg;
}

}  // namespace

TEST_CASE("tangent at the uniform start") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    auto [ols, y] = ols_initial(p);

    // the multiplier grows as E decreases, so its E-derivative is negative
    const Vector t = branch_tangent(p, y);
    CHECK(t(1) < 0.0);

    // finite-difference consistency: walk a small step down in E and compare
    const double h = 1e-6 * ols.mse_uw;
    ContinuationConfig cfg = default_config(1e-4);
    BranchState guess = y;
    const NewtonResult near = newton_correct(p, guess, ols.mse_uw - h, cfg);
    const double fd_mu = (near.state.mu - y.mu) / (-h);
    CHECK(fd_mu == Catch::Approx(t(1)).epsilon(1e-3));
}

TEST_CASE("tangent fails at the degenerate start") {
    auto [ds, p] = example2(Example2Variant::four_point);
    auto [ols, y] = ols_initial(p);
    CHECK_THROWS_AS(branch_tangent(p, y), SingularMatrix);
}

TEST_CASE("newton_correct is a fixed point on branch states") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    auto [ols, y] = ols_initial(p);
    const ContinuationConfig cfg = default_config(1e-4);
    const NewtonResult r = newton_correct(p, y, ols.mse_uw, cfg);
    CHECK(r.iterations <= 1);
    CHECK(inf_norm(Vector(r.state.w - y.w)) <= cfg.newton_tol);
    CHECK(inf_norm(Vector(r.state.x - y.x)) <= cfg.newton_tol);
}

TEST_CASE("newton_correct converges quickly from an Euler predictor") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    auto [ols, y] = ols_initial(p);
    const ContinuationConfig cfg = default_config(1e-4);

    const double e_next = 0.99 * ols.mse_uw;
    const Vector t = branch_tangent(p, y);
    BranchState guess = y;
    guess.lambda += (e_next - y.mse) * t(0);
    guess.mu += (e_next - y.mse) * t(1);
    guess.w += (e_next - y.mse) * t.segment(2, p.m);
    guess.x += (e_next - y.mse) * t.segment(2 + p.m, p.n);

    const NewtonResult r = newton_correct(p, guess, e_next, cfg);
    CHECK(r.iterations <= 4);
    CHECK(inf_norm(stationarity_residual(p, r.state)) <= cfg.newton_tol * (1.0 + inf_norm(p.b)));
}

TEST_CASE("newton_correct recovers from a crushed weight with damping") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    const ContinuationConfig cfg = default_config(1e-4);
    auto res = trace_branch(p, default_config(0.045));
    REQUIRE(res.report.reason == TerminationReason::ReachedTarget);

    BranchState bad = res.trajectory.samples.back().state;
    bad.w(0) *= 0.01;  // one weight 100x too small; stays strictly positive
    const NewtonResult r = newton_correct(p, bad, bad.mse, cfg);
    CHECK(inf_norm(stationarity_residual(p, r.state)) <= cfg.newton_tol * (1.0 + inf_norm(p.b)));
    CHECK(r.state.w.minCoeff() > 0.0);
}

TEST_CASE("eight-point trace stops at the localized singularity") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    const TraceResult res = trace_branch(p, default_config(1e-4));
    CHECK(res.report.reason == TerminationReason::BreakdownJacobianSingular);
    CHECK(res.report.mse_final == Catch::Approx(3.80e-2).margin(2e-3));
    // every stored sample remains strictly on the certified side
    for (const BranchSample& s : res.trajectory.samples) CHECK(s.eig_min_schur > 0.0);
}

TEST_CASE("four-point trace reports a degenerate start and no samples") {
    auto [ds, p] = example2(Example2Variant::four_point);
    const TraceResult res = trace_branch(p, default_config(1e-4));
    CHECK(res.report.reason == TerminationReason::DegenerateStart);
    CHECK(res.trajectory.samples.empty());
}

TEST_CASE("target equal to the start yields a single-sample trajectory") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    auto [ols, y] = ols_initial(p);
    const TraceResult res = trace_branch(p, default_config(ols.mse_uw));
    CHECK(res.report.reason == TerminationReason::ReachedTarget);
    CHECK(res.trajectory.samples.size() == 1);
    CHECK(inf_norm(Vector(res.trajectory.samples[0].state.w - Vector::Constant(p.m, 0.125))) <=
          1e-15);
}

TEST_CASE("target above the start is a precondition violation") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    CHECK_THROWS_AS(trace_branch(p, default_config(0.06)), std::invalid_argument);
    CHECK_THROWS_AS(trace_branch(p, default_config(-1.0)), std::invalid_argument);
}

TEST_CASE("sample_at") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    const TraceResult res = trace_branch(p, default_config(1e-4));
    const Trajectory& traj = res.trajectory;
    REQUIRE(traj.samples.size() >= 3);

    // at a stored level the stored state comes back
    const BranchState& stored = traj.samples[2].state;
    const BranchState same = sample_at(p, traj, stored.mse);
    CHECK(inf_norm(Vector(same.w - stored.w)) <= 1e-12);

    // between neighbors the multiplier interpolates monotonically
    const double e0 = traj.samples[1].state.mse;
    const double e1 = traj.samples[2].state.mse;
    const BranchState mid = sample_at(p, traj, 0.5 * (e0 + e1));
    CHECK(mid.mu > traj.samples[1].state.mu);
    CHECK(mid.mu < traj.samples[2].state.mu);

    const BranchState top = sample_at(p, traj, traj.samples.front().state.mse);
    CHECK(inf_norm(Vector(top.w - Vector::Constant(p.m, 0.125))) <= 1e-12);

    CHECK_THROWS_AS(sample_at(p, traj, 2.0 * traj.samples.front().state.mse), OutOfRange);
    CHECK_THROWS_AS(sample_at(p, traj, 0.5 * traj.samples.back().state.mse), OutOfRange);
}

TEST_CASE("trajectory invariants along the eight-point branch") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    const TraceResult res = trace_branch(p, default_config(1e-4));
    const Trajectory rs = resample(
        p, res.trajectory,
        log_spaced_grid(res.trajectory.samples.front().state.mse,
                        res.trajectory.samples.back().state.mse, 120));
    REQUIRE(rs.samples.size() == 120);

    const double feas = rs.config.newton_tol * (1.0 + inf_norm(p.b));
    double prev_e = 2.0 * rs.samples.front().state.mse;
    double prev_mu = -1.0;
    double prev_h = 1e9;
    for (const BranchSample& s : rs.samples) {
        CHECK(s.state.mse < prev_e);
        CHECK(s.state.mu > prev_mu);
        CHECK(s.entropy < prev_h);
        CHECK(s.eig_min_schur > 0.0);
        CHECK(s.gibbs_drift <= 10.0 * rs.config.newton_tol);
        CHECK(std::abs(s.state.w.sum() - 1.0) <= feas);
        const Vector r = residuals(p, s.state.x);
        CHECK(std::abs(weighted_mse(s.state.w, r) - s.state.mse) <= feas * (1.0 + s.state.mse));
        CHECK(inf_norm(Vector(p.A.transpose() * (s.state.w.array() * r.array()).matrix())) <=
              feas);
        // the symmetric dataset keeps its regression line along the branch
        CHECK(std::abs(s.state.x(0) - 0.5) <= 1e-8);
        CHECK(std::abs(s.state.x(1)) <= 1e-8);
        prev_e = s.state.mse;
        prev_mu = s.state.mu;
        prev_h = s.entropy;
    }
}

TEST_CASE("envelope identity holds along the branch") {
    auto [ds, p] = example2(Example2Variant::eight_point);
    const TraceResult res = trace_branch(p, default_config(1e-4));
    const Trajectory rs = resample(
        p, res.trajectory,
        log_spaced_grid(res.trajectory.samples.front().state.mse,
                        res.trajectory.samples.back().state.mse, 60));
    // dH/dE equals the multiplier: central differences via sample_at
    for (std::size_t i = 5; i < rs.samples.size() - 5; i += 7) {
        const double e = rs.samples[i].state.mse;
        const double delta = 1e-4 * e;
        const double hp = entropy(sample_at(p, rs, e + delta).w);
        const double hm = entropy(sample_at(p, rs, e - delta).w);
        const double slope = (hp - hm) / (2.0 * delta);
        CHECK(std::abs(slope - rs.samples[i].state.mu) / (1.0 + rs.samples[i].state.mu) <= 1e-3);
    }
}
