#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mewls/continuation.hpp"
#include "mewls/model.hpp"

// Deterministic dataset generators for the two reference experiments, plus
// CSV ingestion and serialization. Numbers are written with 17 significant
// digits so save/load round-trips are bit exact for finite doubles.

namespace mewls {

enum class PointLabel { inlier, outlier };

/// A labeled 2-D point cloud fitted with the affine design [1, x].
struct LabeledDataset {
    std::vector<double> xs;
    std::vector<double> ys;
    std::vector<PointLabel> labels;
    std::uint64_t seed = 0;
    double noise_sigma2 = 0.0;
    std::string rng_id = "mt19937_64/box-muller";
};

struct DatasetConfig {
    int n_inliers = 10;
    int n_outliers = 10;
    double intercept = 0.0;
    double slope = 0.5;
    double noise_sigma2 = 0.0;  // variance of the Gaussian inlier noise; 0 = exact
    double band_lo = 0.55;      // outlier ordinates drawn uniformly from this band
    double band_hi = 1.0;
    double outlier_margin = 0.1;  // minimum height of an outlier above the line
    std::uint64_t seed = 1;
};

namespace detail {

// Uniforms come from the top 53 bits of mt19937_64; Gaussians via Box-Muller.
// A documented transform keeps the generated bytes pinned to the seed alone.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : gen_(seed) {}

    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double gaussian(double stddev) {
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace detail

inline Problem to_problem(const LabeledDataset& ds) {
    const Index m = static_cast<Index>(ds.xs.size());
    if (m == 0) throw DimensionMismatch("to_problem: dataset is empty");
    Matrix a(m, 2);
    Vector b(m);
    for (Index i = 0; i < m; ++i) {
        a(i, 0) = 1.0;
        a(i, 1) = ds.xs[static_cast<std::size_t>(i)];
        b(i) = ds.ys[static_cast<std::size_t>(i)];
    }
    return Problem(std::move(a), std::move(b));
}

/// Inliers equispaced on [0, 1] along the configured line (optionally with
/// Gaussian noise); outliers reuse the inlier abscissae cyclically with
/// ordinates drawn uniformly from the band, redrawn until they clear the
/// margin above the line.
inline std::pair<LabeledDataset, Problem> example1(const DatasetConfig& cfg) {
    if (cfg.n_inliers < 2) throw std::invalid_argument("example1: need at least two inliers");
    if (cfg.n_outliers < 0) throw std::invalid_argument("example1: negative outlier count");
    if (!(cfg.band_lo >= 0.0 && cfg.band_lo < cfg.band_hi && cfg.band_hi <= 1.0))
        throw std::invalid_argument("example1: band must satisfy 0 <= lo < hi <= 1");
    if (!(cfg.outlier_margin > 0.0)) throw std::invalid_argument("example1: margin must be positive");

    detail::SeededRng rng(cfg.seed);
    LabeledDataset ds;
    ds.seed = cfg.seed;
    ds.noise_sigma2 = cfg.noise_sigma2;
    const auto line = [&cfg](double x) { return cfg.intercept + cfg.slope * x; };

    for (int i = 0; i < cfg.n_inliers; ++i) {
        const double x = static_cast<double>(i) / (cfg.n_inliers - 1);
        double y = line(x);
        if (cfg.noise_sigma2 > 0.0) y += rng.gaussian(std::sqrt(cfg.noise_sigma2));
        ds.xs.push_back(x);
        ds.ys.push_back(y);
        ds.labels.push_back(PointLabel::inlier);
    }
    for (int k = 0; k < cfg.n_outliers; ++k) {
        const double x = ds.xs[static_cast<std::size_t>(k % cfg.n_inliers)];
        double y = 0.0;
        bool placed = false;
        for (int attempt = 0; attempt < 100; ++attempt) {
            y = cfg.band_lo + rng.uniform01() * (cfg.band_hi - cfg.band_lo);
            if (y >= line(x) + cfg.outlier_margin) {
                placed = true;
                break;
            }
        }
        if (!placed) y = 0.5 * (cfg.band_lo + cfg.band_hi) + cfg.outlier_margin;
        ds.xs.push_back(x);
        ds.ys.push_back(y);
        ds.labels.push_back(PointLabel::outlier);
    }
    Problem p = to_problem(ds);
    return {std::move(ds), std::move(p)};
}

enum class Example2Variant { four_point, eight_point };

/// Fixed symmetric datasets around the horizontal line y = 1/2. The
/// four-point variant has constant squared residuals at the uniform-weight
/// fit; the eight-point variant adds four farther points that break that
/// degeneracy while keeping the symmetry.
inline std::pair<LabeledDataset, Problem> example2(Example2Variant variant) {
    LabeledDataset ds;
    ds.xs = {0.3, 0.3, 0.7, 0.7};
    ds.ys = {0.4, 0.6, 0.4, 0.6};
    if (variant == Example2Variant::eight_point) {
        ds.xs.insert(ds.xs.end(), {0.1, 0.1, 0.9, 0.9});
        ds.ys.insert(ds.ys.end(), {0.2, 0.8, 0.2, 0.8});
    }
    ds.labels.assign(ds.xs.size(), PointLabel::inlier);
    ds.rng_id = "none";
    Problem p = to_problem(ds);
    return {std::move(ds), std::move(p)};
}

// ---------------------------------------------------------------------------
// CSV formats.
//
//   dataset:    header "x,y" or "x,y,label"; one point per row
//   problem:    header "a_1,...,a_n,b"; one equation per row
//   trajectory: header "E,lambda,mu,H,eig_min_schur,sigma_min_weighted,
//                w_1..w_m,x_1..x_n"; one sample per row
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_field_double(const std::string& field, long line, long column) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last)
        throw ParseError("not a number: '" + field + "'", line, column);
    return value;
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace detail

inline void save_dataset_csv(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "x,y,label\n";
    for (std::size_t i = 0; i < ds.xs.size(); ++i)
        out << format17(ds.xs[i]) << ',' << format17(ds.ys[i]) << ','
            << (ds.labels[i] == PointLabel::inlier ? "inlier" : "outlier") << '\n';
}

inline LabeledDataset load_dataset_csv(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty()) throw ParseError("empty file", 1);
    const auto header = detail::split_csv_line(lines[0]);
    const bool labeled = header.size() == 3 && header[2] == "label";
    if (!((header.size() == 2 || labeled) && header[0] == "x" && header[1] == "y"))
        throw ParseError("expected header 'x,y' or 'x,y,label'", 1);

    LabeledDataset ds;
    for (std::size_t row = 1; row < lines.size(); ++row) {
        if (lines[row].empty()) continue;
        const long lineno = static_cast<long>(row + 1);
        const auto fields = detail::split_csv_line(lines[row]);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             lineno);
        ds.xs.push_back(detail::parse_field_double(fields[0], lineno, 1));
        ds.ys.push_back(detail::parse_field_double(fields[1], lineno, 2));
        if (labeled) {
            if (fields[2] == "inlier")
                ds.labels.push_back(PointLabel::inlier);
            else if (fields[2] == "outlier")
                ds.labels.push_back(PointLabel::outlier);
            else
                throw ParseError("label must be 'inlier' or 'outlier', found '" + fields[2] + "'",
                                 lineno, 3);
        } else {
            ds.labels.push_back(PointLabel::inlier);
        }
    }
    if (ds.xs.empty()) throw DimensionMismatch("dataset CSV has a header but no rows: " + path);
    return ds;
}

inline void save_problem_csv(const Problem& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (Index j = 0; j < p.n; ++j) out << "a_" << (j + 1) << ',';
    out << "b\n";
    for (Index i = 0; i < p.m; ++i) {
        for (Index j = 0; j < p.n; ++j) out << format17(p.A(i, j)) << ',';
        out << format17(p.b(i)) << '\n';
    }
}

inline Problem load_problem_csv(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty()) throw ParseError("empty file", 1);
    const auto header = detail::split_csv_line(lines[0]);
    if (header.size() < 2 || header.back() != "b")
        throw ParseError("expected header 'a_1,...,a_n,b'", 1);
    const Index n = static_cast<Index>(header.size() - 1);
    for (Index j = 0; j < n; ++j)
        if (header[static_cast<std::size_t>(j)] != "a_" + std::to_string(j + 1))
            throw ParseError("expected column 'a_" + std::to_string(j + 1) + "'", 1, j + 1);

    std::vector<std::vector<double>> rows;
    for (std::size_t row = 1; row < lines.size(); ++row) {
        if (lines[row].empty()) continue;
        const long lineno = static_cast<long>(row + 1);
        const auto fields = detail::split_csv_line(lines[row]);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             lineno);
        std::vector<double> vals;
        for (std::size_t j = 0; j < fields.size(); ++j)
            vals.push_back(detail::parse_field_double(fields[j], lineno, static_cast<long>(j + 1)));
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw DimensionMismatch("problem CSV has a header but no rows: " + path);

    const Index m = static_cast<Index>(rows.size());
    Matrix a(m, n);
    Vector b(m);
    for (Index i = 0; i < m; ++i) {
        for (Index j = 0; j < n; ++j) a(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        b(i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(n)];
    }
    return Problem(std::move(a), std::move(b));
}

/// Load either CSV flavor, deciding from the header: 2-D datasets get the
/// affine design [1, x].
inline Problem load_problem_auto(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty()) throw ParseError("empty file", 1);
    const auto header = detail::split_csv_line(lines[0]);
    if (!header.empty() && header[0] == "x") return to_problem(load_dataset_csv(path));
    return load_problem_csv(path);
}

inline void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    if (traj.samples.empty()) throw Error("save_trajectory_csv: trajectory has no samples");
    const Index m = traj.samples.front().state.w.size();
    const Index n = traj.samples.front().state.x.size();
    out << "E,lambda,mu,H,eig_min_schur,sigma_min_weighted";
    for (Index i = 0; i < m; ++i) out << ",w_" << (i + 1);
    for (Index j = 0; j < n; ++j) out << ",x_" << (j + 1);
    out << '\n';
    for (const BranchSample& s : traj.samples) {
        out << format17(s.state.mse) << ',' << format17(s.state.lambda) << ','
            << format17(s.state.mu) << ',' << format17(s.entropy) << ','
            << format17(s.eig_min_schur) << ',' << format17(s.sigma_min_weighted);
        for (Index i = 0; i < m; ++i) out << ',' << format17(s.state.w(i));
        for (Index j = 0; j < n; ++j) out << ',' << format17(s.state.x(j));
        out << '\n';
    }
}

/// Rebuild the samples of an exported trajectory. Stored columns are taken
/// as-is; the Gibbs drift is recomputed from the state.
inline std::vector<BranchSample> load_trajectory_csv(const std::string& path, const Problem& p) {
    const auto lines = detail::read_lines(path);
    if (lines.empty()) throw ParseError("empty file", 1);
    const auto header = detail::split_csv_line(lines[0]);
    const std::size_t expected = 6 + static_cast<std::size_t>(p.m + p.n);
    if (header.size() != expected || header[0] != "E")
        throw ParseError("unexpected trajectory header for an m=" + std::to_string(p.m) +
                             ", n=" + std::to_string(p.n) + " problem",
                         1);

    std::vector<BranchSample> samples;
    for (std::size_t row = 1; row < lines.size(); ++row) {
        if (lines[row].empty()) continue;
        const long lineno = static_cast<long>(row + 1);
        const auto fields = detail::split_csv_line(lines[row]);
        if (fields.size() != expected)
            throw ParseError("expected " + std::to_string(expected) + " fields, found " +
                                 std::to_string(fields.size()),
                             lineno);
        auto get = [&](std::size_t j) {
            return detail::parse_field_double(fields[j], lineno, static_cast<long>(j + 1));
        };
        BranchSample s;
        s.state.mse = get(0);
        s.state.lambda = get(1);
        s.state.mu = get(2);
        s.entropy = get(3);
        s.eig_min_schur = get(4);
        s.sigma_min_weighted = get(5);
        s.state.w.resize(p.m);
        s.state.x.resize(p.n);
        for (Index i = 0; i < p.m; ++i) s.state.w(i) = get(6 + static_cast<std::size_t>(i));
        for (Index j = 0; j < p.n; ++j)
            s.state.x(j) = get(6 + static_cast<std::size_t>(p.m + j));
        s.gibbs_drift = gibbs_drift(p, s.state);
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw DimensionMismatch("trajectory CSV has no rows: " + path);
    return samples;
}

}  // namespace mewls
