// Command-line front end: generate datasets, trace branches, run diagnostics,
// and cross-check small instances against the brute-force oracle. All numeric
// CSV output carries 17 significant digits; every output directory gets a
// manifest that is sufficient to reproduce the run.
//
// Exit codes: 0 success, 2 usage or input error, 3 method-level termination
// (breakdown or infeasible target), 1 internal error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mewls/mewls.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

json config_to_json(const mewls::ContinuationConfig& c) {
    return json{{"target_mse", c.target_mse},
                {"h0_rel", c.h0_rel},
                {"h_max_rel", c.h_max_rel},
                {"h_min_rel", c.h_min_rel},
                {"newton_tol", c.newton_tol},
                {"newton_max_iter", c.newton_max_iter},
                {"grow_factor", c.grow_factor},
                {"shrink_factor", c.shrink_factor},
                {"boundary_fraction", c.boundary_fraction},
                {"eig_event_tol", c.eig_event_tol},
                {"sample_count", c.sample_count},
                {"sample_grid", c.sample_grid},
                {"seed_metadata", c.seed_metadata}};
}

void config_from_json(const json& j, mewls::ContinuationConfig& c) {
    c.target_mse = j.value("target_mse", c.target_mse);
    c.h0_rel = j.value("h0_rel", c.h0_rel);
    c.h_max_rel = j.value("h_max_rel", c.h_max_rel);
    c.h_min_rel = j.value("h_min_rel", c.h_min_rel);
    c.newton_tol = j.value("newton_tol", c.newton_tol);
    c.newton_max_iter = j.value("newton_max_iter", c.newton_max_iter);
    c.grow_factor = j.value("grow_factor", c.grow_factor);
    c.shrink_factor = j.value("shrink_factor", c.shrink_factor);
    c.boundary_fraction = j.value("boundary_fraction", c.boundary_fraction);
    c.eig_event_tol = j.value("eig_event_tol", c.eig_event_tol);
    c.sample_count = j.value("sample_count", c.sample_count);
    c.sample_grid = j.value("sample_grid", c.sample_grid);
    c.seed_metadata = j.value("seed_metadata", c.seed_metadata);
}

json termination_to_json(const mewls::TerminationReport& r) {
    json evidence{{"message", r.message}};
    auto put = [&evidence](const char* key, double v) {
        if (std::isfinite(v)) evidence[key] = v;
    };
    put("eig_min", r.eig_min);
    put("min_weight", r.min_weight);
    put("y_inf_norm", r.y_inf_norm);
    put("step_size", r.step_size);
    return json{{"reason", mewls::to_string(r.reason)},
                {"E_final", r.mse_final},
                {"evidence", evidence}};
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw mewls::Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw mewls::Error("cannot open " + path.string());
    return json::parse(in);
}

void write_manifest(const fs::path& dir, json manifest) {
    manifest["tool"] = "mewls";
    manifest["version"] = mewls::version;
    manifest["created_utc"] = utc_now();
    write_json(dir / "manifest.json", manifest);
}

struct GenOptions {
    int example = 0;
    std::string variant = "eight";
    std::uint64_t seed = 1;
    double noise_sigma2 = 0.0;
    std::string out = ".";
};

int cmd_gen(const GenOptions& opt, const std::string& cmdline) {
    const fs::path dir(opt.out);
    fs::create_directories(dir);

    mewls::LabeledDataset ds;
    json echo;
    if (opt.example == 1) {
        mewls::DatasetConfig dc;
        dc.seed = opt.seed;
        dc.noise_sigma2 = opt.noise_sigma2;
        ds = mewls::example1(dc).first;
        echo = json{{"example", 1},
                    {"n_inliers", dc.n_inliers},
                    {"n_outliers", dc.n_outliers},
                    {"intercept", dc.intercept},
                    {"slope", dc.slope},
                    {"noise_sigma2", dc.noise_sigma2},
                    {"band_lo", dc.band_lo},
                    {"band_hi", dc.band_hi},
                    {"outlier_margin", dc.outlier_margin},
                    {"seed", dc.seed},
                    {"rng_id", ds.rng_id}};
    } else {
        const auto variant = opt.variant == "four" ? mewls::Example2Variant::four_point
                                                   : mewls::Example2Variant::eight_point;
        ds = mewls::example2(variant).first;
        echo = json{{"example", 2}, {"variant", opt.variant}};
    }
    mewls::save_dataset_csv(ds, (dir / "dataset.csv").string());
    write_manifest(dir, json{{"command_line", cmdline},
                             {"dataset_config", echo},
                             {"problem_fingerprint", mewls::fingerprint(mewls::to_problem(ds))},
                             {"outputs", json::array({"dataset.csv"})}});
    return 0;
}

struct TraceOptions {
    std::string data;
    double target_mse = 0.0;
    int grid = 0;
    std::string config_file;
    std::string out = ".";
};

int cmd_trace(const TraceOptions& opt, const std::string& cmdline) {
    const mewls::Problem p = mewls::load_problem_auto(opt.data);

    mewls::ContinuationConfig cfg;
    if (!opt.config_file.empty()) config_from_json(load_json(opt.config_file), cfg);
    cfg.target_mse = opt.target_mse;
    if (opt.grid > 0) cfg.sample_count = opt.grid;

    const auto [ols, start] = mewls::ols_initial(p);
    if (!(opt.target_mse > 0.0) || opt.target_mse >= ols.mse_uw) {
        std::cerr << "trace: --target-mse " << mewls::format17(opt.target_mse)
                  << " outside the admissible range (0, " << mewls::format17(ols.mse_uw)
                  << ")\n";
        return 2;
    }

    const fs::path dir(opt.out);
    fs::create_directories(dir);
    mewls::save_problem_csv(p, (dir / "problem.csv").string());

    const mewls::TraceResult result = mewls::trace_branch(p, cfg);

    json outputs = json::array({"problem.csv", "termination.json"});
    if (!result.trajectory.samples.empty()) {
        mewls::Trajectory exported =
            cfg.sample_grid.empty()
                ? mewls::resample_default(p, result.trajectory)
                : mewls::resample(p, result.trajectory, cfg.sample_grid);
        mewls::save_trajectory_csv(exported, (dir / "trajectory.csv").string());
        outputs.push_back("trajectory.csv");
    }
    write_json(dir / "termination.json", termination_to_json(result.report));
    write_manifest(dir, json{{"command_line", cmdline},
                             {"continuation_config", config_to_json(cfg)},
                             {"problem_fingerprint", result.trajectory.problem_fingerprint},
                             {"termination", termination_to_json(result.report)},
                             {"outputs", outputs}});

    if (result.report.reason == mewls::TerminationReason::ReachedTarget) return 0;
    std::cerr << "trace: stopped with " << mewls::to_string(result.report.reason) << " at E = "
              << mewls::format17(result.report.mse_final) << "\n";
    return 3;
}

// Rebuild problem, config, and trajectory from a completed trace directory.
struct LoadedRun {
    mewls::Problem problem;
    mewls::Trajectory trajectory;
};

LoadedRun load_run(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / "problem.csv") ||
        !fs::exists(dir / "trajectory.csv"))
        throw mewls::Error("run directory " + dir.string() +
                           " is missing manifest.json, problem.csv, or trajectory.csv");
    mewls::Problem p = mewls::load_problem_csv((dir / "problem.csv").string());
    mewls::Trajectory traj;
    const json manifest = load_json(dir / "manifest.json");
    if (manifest.contains("continuation_config"))
        config_from_json(manifest["continuation_config"], traj.config);
    traj.problem_fingerprint = mewls::fingerprint(p);
    traj.ols = mewls::ols_initial(p).first;
    traj.samples = mewls::load_trajectory_csv((dir / "trajectory.csv").string(), p);
    return {std::move(p), std::move(traj)};
}

struct DiagnoseOptions {
    std::string run;
    std::optional<double> core_threshold;
    std::optional<double> fit_lo, fit_hi;
    double envelope_delta = 1e-4;
};

int cmd_diagnose(const DiagnoseOptions& opt, const std::string& cmdline) {
    const fs::path dir(opt.run);
    LoadedRun run = load_run(dir);
    const mewls::Problem& p = run.problem;
    const mewls::Trajectory& traj = run.trajectory;

    json out;
    {
        const mewls::ValueCurve curve = mewls::value_curve(traj);
        json points = json::array();
        for (const auto& pt : curve.points)
            points.push_back({{"E", pt.mse}, {"H", pt.entropy}, {"mu", pt.mu}});
        out["value_curve"] = points;
    }
    {
        const mewls::EnvelopeReport env = mewls::envelope_check(p, traj, opt.envelope_delta);
        out["envelope"] = {{"max_rel_err", env.max_rel_err},
                           {"samples_checked", env.samples_checked},
                           {"delta_rel", opt.envelope_delta}};
    }
    try {
        const mewls::CoreSetReport cs = mewls::core_set(p, traj, opt.core_threshold);
        out["core_set"] = {{"indices", cs.core_indices}, {"size", cs.size},
                           {"epsilon0", cs.epsilon0},   {"s0", cs.s0},
                           {"threshold_used", cs.threshold_used}};
        const mewls::LimitInterpolant li = mewls::limit_interpolant(p, cs.core_indices);
        out["limit_interpolant"] = {
            {"x", std::vector<double>(li.x.data(), li.x.data() + li.x.size())},
            {"residuals_on_core",
             std::vector<double>(li.residuals_on_core.data(),
                                 li.residuals_on_core.data() + li.residuals_on_core.size())}};

        const double e_lo = traj.samples.back().state.mse;
        const double e_hi = traj.samples.front().state.mse;
        const double fit_lo = opt.fit_lo.value_or(e_lo);
        const double fit_hi = opt.fit_hi.value_or(std::min(e_hi, std::max(100.0 * fit_lo, 1e-2)));
        try {
            const mewls::RateReport rr = mewls::rate_report(p, traj, cs.core_indices, fit_lo, fit_hi);
            json wfits = json::array(), rfits = json::array();
            for (const auto& f : rr.outlier_weight_fits)
                wfits.push_back({{"index", f.index}, {"slope", f.slope}, {"correlation", f.correlation}});
            for (const auto& f : rr.inlier_residual_fits)
                rfits.push_back({{"index", f.index}, {"slope", f.slope}, {"correlation", f.correlation}});
            out["rates"] = {{"fit_lo", rr.fit_lo},
                            {"fit_hi", rr.fit_hi},
                            {"samples_used", rr.samples_used},
                            {"outlier_weight_fits", wfits},
                            {"inlier_residual_fits", rfits},
                            {"mu_log_slope", rr.mu_log_slope},
                            {"mu_log_correlation", rr.mu_log_correlation}};
        } catch (const mewls::InsufficientSamples& e) {
            out["rates"] = {{"error", e.what()}};
        }
    } catch (const mewls::CoreSetRankDeficient& e) {
        out["core_set"] = {{"error", e.what()}};
    }

    // The run directory already carries its manifest; the diagnose parameters
    // ride along inside the diagnostics file instead of a second manifest.
    out["command_line"] = cmdline;
    out["created_utc"] = utc_now();
    write_json(dir / "diagnostics.json", out);
    return 0;
}

struct OracleOptions {
    std::string data;
    double mse = 0.0;
    int resolution = 200;
    std::string run;
    std::string out = ".";
};

int cmd_oracle(const OracleOptions& opt, const std::string& cmdline) {
    const mewls::Problem p = mewls::load_problem_auto(opt.data);
    if (p.m > 5) {
        std::cerr << "oracle: refusing m = " << p.m
                  << " (> 5); the simplex lattice enumeration grows combinatorially\n";
        return 2;
    }
    const fs::path dir(opt.out);
    fs::create_directories(dir);

    json out{{"E", opt.mse}, {"resolution", opt.resolution}};
    int exit_code = 0;
    try {
        const mewls::OracleResult oracle = mewls::brute_force_oracle(p, opt.mse, opt.resolution);
        out["w"] = std::vector<double>(oracle.w.data(), oracle.w.data() + oracle.w.size());
        out["x"] = std::vector<double>(oracle.x.data(), oracle.x.data() + oracle.x.size());
        out["H"] = oracle.entropy;
        out["achieved_mse"] = oracle.mse;

        if (!opt.run.empty()) {
            LoadedRun run = load_run(fs::path(opt.run));
            if (run.trajectory.problem_fingerprint != mewls::fingerprint(p)) {
                out["comparison"] = {{"error", "trace directory holds a different problem"}};
            } else {
                const mewls::BranchState st = mewls::sample_at(p, run.trajectory, opt.mse);
                std::vector<double> deltas(static_cast<std::size_t>(p.m));
                for (mewls::Index i = 0; i < p.m; ++i) deltas[static_cast<std::size_t>(i)] =
                    oracle.w(i) - st.w(i);
                out["comparison"] = {
                    {"trace_w", std::vector<double>(st.w.data(), st.w.data() + st.w.size())},
                    {"weight_deltas", deltas},
                    {"entropy_delta", oracle.entropy - mewls::entropy(st.w)}};
            }
        }
    } catch (const mewls::NoFeasibleGridPoint& e) {
        out["error"] = e.what();
        std::cerr << "oracle: " << e.what() << "\n";
        exit_code = 3;
    }
    write_json(dir / "oracle.json", out);
    write_manifest(dir, json{{"command_line", cmdline},
                             {"problem_fingerprint", mewls::fingerprint(p)},
                             {"outputs", json::array({"oracle.json"})}});
    return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cmdline = join_args(argc, argv);

    CLI::App app{"maximum-entropy weighted least squares: branch tracing and diagnostics"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "generate a reference dataset");
    gen_cmd->add_option("--example", gen.example, "which experiment (1 or 2)")
        ->required()
        ->check(CLI::IsMember({1, 2}));
    gen_cmd->add_option("--variant", gen.variant, "example 2 variant")
        ->check(CLI::IsMember({"four", "eight"}));
    gen_cmd->add_option("--seed", gen.seed, "RNG seed");
    gen_cmd->add_option("--noise-sigma2", gen.noise_sigma2, "inlier noise variance")
        ->check(CLI::NonNegativeNumber);
    gen_cmd->add_option("--out", gen.out, "output directory");

    TraceOptions trace;
    auto* trace_cmd = app.add_subcommand("trace", "trace the branch down to a target MSE");
    trace_cmd->add_option("--data", trace.data, "dataset or problem CSV")
        ->required()
        ->check(CLI::ExistingFile);
    trace_cmd->add_option("--target-mse", trace.target_mse, "target error level")->required();
    trace_cmd->add_option("--grid", trace.grid, "number of log-spaced export samples");
    trace_cmd->add_option("--config", trace.config_file, "continuation config JSON")
        ->check(CLI::ExistingFile);
    trace_cmd->add_option("--out", trace.out, "output directory");

    DiagnoseOptions diag;
    auto* diag_cmd = app.add_subcommand("diagnose", "analyze a completed trace directory");
    diag_cmd->add_option("--run", diag.run, "trace output directory")->required();
    double core_thr = 0.0, fit_lo = 0.0, fit_hi = 0.0;
    auto* thr_opt = diag_cmd->add_option("--core-threshold", core_thr, "override core-set threshold");
    auto* lo_opt = diag_cmd->add_option("--fit-lo", fit_lo, "rate-fit lower E");
    auto* hi_opt = diag_cmd->add_option("--fit-hi", fit_hi, "rate-fit upper E");
    diag_cmd->add_option("--envelope-delta", diag.envelope_delta,
                         "relative step for the envelope difference");

    OracleOptions oracle;
    auto* oracle_cmd = app.add_subcommand("oracle", "brute-force cross-check (m <= 5)");
    oracle_cmd->add_option("--data", oracle.data, "dataset or problem CSV")
        ->required()
        ->check(CLI::ExistingFile);
    oracle_cmd->add_option("--mse", oracle.mse, "error level to solve at")->required();
    oracle_cmd->add_option("--resolution", oracle.resolution, "simplex lattice resolution")
        ->check(CLI::PositiveNumber);
    oracle_cmd->add_option("--run", oracle.run, "trace directory to compare against");
    oracle_cmd->add_option("--out", oracle.out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen(gen, cmdline);
        if (trace_cmd->parsed()) return cmd_trace(trace, cmdline);
        if (diag_cmd->parsed()) {
            if (*thr_opt) diag.core_threshold = core_thr;
            if (*lo_opt) diag.fit_lo = fit_lo;
            if (*hi_opt) diag.fit_hi = fit_hi;
            return cmd_diagnose(diag, cmdline);
        }
        if (oracle_cmd->parsed()) return cmd_oracle(oracle, cmdline);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mewls::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mewls::DimensionMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mewls::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
