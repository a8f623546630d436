#ifndef VAMOS_SPLINE_HPP
#define VAMOS_SPLINE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vamos/volume.hpp"

namespace vamos {

/// Clamped B-spline curve in voxel coordinates. All three axes share the
/// knot vector and degree.
struct BranchSpline {
    int degree = 2;
    std::vector<double> knots;                  // coeff count + degree + 1 entries
    std::array<std::vector<double>, 3> coeffs;  // x, y, z control values

    std::size_t n_coeffs() const { return coeffs[0].size(); }
    double t_begin() const { return knots[std::size_t(degree)]; }
    double t_end() const { return knots[knots.size() - 1 - std::size_t(degree)]; }

    Vec3 control_point(std::size_t i) const { return {coeffs[0][i], coeffs[1][i], coeffs[2][i]}; }

    friend bool operator==(const BranchSpline&, const BranchSpline&) = default;
};

/// Index l with knots[l] <= t < knots[l+1], restricted to the valid spans.
inline std::size_t find_span(const BranchSpline& s, double t) {
    const std::size_t k = std::size_t(s.degree);
    const std::size_t n = s.n_coeffs();
    if (t >= s.knots[n]) return n - 1;
    if (t <= s.knots[k]) return k;
    const auto it = std::upper_bound(s.knots.begin() + long(k), s.knots.begin() + long(n) + 1, t);
    return std::size_t(it - s.knots.begin()) - 1;
}

/// de Boor evaluation at parameter t (clamped to the domain).
inline Vec3 evaluate(const BranchSpline& s, double t) {
    const int k = s.degree;
    t = std::clamp(t, s.t_begin(), s.t_end());
    const std::size_t l = find_span(s, t);
    std::array<Vec3, 16> d{};
    for (int j = 0; j <= k; ++j) d[std::size_t(j)] = s.control_point(l - std::size_t(k) + std::size_t(j));
    for (int r = 1; r <= k; ++r) {
        for (int j = k; j >= r; --j) {
            const std::size_t i = l - std::size_t(k) + std::size_t(j);
            const double denom = s.knots[i + std::size_t(k) + 1 - std::size_t(r)] - s.knots[i];
            const double alpha = denom > 0 ? (t - s.knots[i]) / denom : 0.0;
            d[std::size_t(j)] = d[std::size_t(j - 1)] * (1.0 - alpha) + d[std::size_t(j)] * alpha;
        }
    }
    return d[std::size_t(k)];
}

/// Non-zero basis values N_{l-k..l}(t) for the span containing t.
inline std::vector<double> basis_functions(const BranchSpline& s, std::size_t span, double t) {
    const int k = s.degree;
    std::vector<double> N(std::size_t(k + 1), 0.0), left(std::size_t(k + 1)), right(std::size_t(k + 1));
    N[0] = 1.0;
    for (int j = 1; j <= k; ++j) {
        left[std::size_t(j)] = t - s.knots[span + 1 - std::size_t(j)];
        right[std::size_t(j)] = s.knots[span + std::size_t(j)] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[std::size_t(r + 1)] + left[std::size_t(j - r)];
            const double tmp = denom > 0 ? N[std::size_t(r)] / denom : 0.0;
            N[std::size_t(r)] = saved + right[std::size_t(r + 1)] * tmp;
            saved = left[std::size_t(j - r)] * tmp;
        }
        N[std::size_t(j)] = saved;
    }
    return N;
}

/// Drops consecutive duplicates.
inline std::vector<Vec3> collapse_duplicates(const std::vector<Vec3>& pts) {
    std::vector<Vec3> out;
    for (const Vec3& p : pts)
        if (out.empty() || norm(p - out.back()) > 1e-12) out.push_back(p);
    return out;
}

/// Cumulative chord length normalised to [0, 1].
inline std::vector<double> chord_parameters(const std::vector<Vec3>& pts) {
    std::vector<double> t(pts.size(), 0.0);
    for (std::size_t i = 1; i < pts.size(); ++i) t[i] = t[i - 1] + norm(pts[i] - pts[i - 1]);
    const double total = t.back();
    if (total > 0)
        for (double& x : t) x /= total;
    return t;
}

/// Number of control values used for n samples at a given degree.
inline std::size_t coefficient_count(std::size_t n_points, int degree) {
    const std::size_t want = std::max<std::size_t>(std::size_t(degree) + 1, (n_points + 3) / 4);
    return std::min(want, n_points);
}

/// Penalised least-squares fit with clamped, interpolated end points.
/// Interior knots sit at quantiles of the chord-length parameters; the
/// penalty is `smoothing` times the squared second differences of the
/// control values.
inline BranchSpline fit_spline(const std::vector<Vec3>& raw_points, int degree = 2, double smoothing = 0.0) {
    if (degree < 1 || degree > 15) throw Error("invalid_degree", "spline degree must be in [1, 15]");
    if (smoothing < 0) throw Error("invalid_smoothing", "smoothing must be >= 0");
    const std::vector<Vec3> pts = collapse_duplicates(raw_points);
    if (pts.size() < std::size_t(degree) + 1)
        throw Error("too_few_points", "need at least degree+1 distinct points, got " + std::to_string(pts.size()));
    const std::vector<double> t = chord_parameters(pts);
    const std::size_t n = pts.size();
    const std::size_t nc = coefficient_count(n, degree);
    const std::size_t k = std::size_t(degree);

    BranchSpline s;
    s.degree = degree;
    s.knots.assign(k + 1, 0.0);
    const std::size_t n_interior = nc - k - 1;
    for (std::size_t j = 1; j <= n_interior; ++j) {
        const double q = double(j) / double(n_interior + 1) * double(n - 1);
        const std::size_t lo = std::size_t(std::floor(q));
        const double f = q - double(lo);
        const double knot = lo + 1 < n ? t[lo] * (1 - f) + t[lo + 1] * f : t[lo];
        s.knots.push_back(knot);
    }
    s.knots.insert(s.knots.end(), k + 1, 1.0);
    for (auto& c : s.coeffs) c.assign(nc, 0.0);

    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(long(n), long(nc));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t span = find_span(s, t[i]);
        const auto N = basis_functions(s, span, t[i]);
        for (std::size_t j = 0; j <= k; ++j) B(long(i), long(span - k + j)) = N[j];
    }
    // second-difference operator over all coefficients
    const long np = nc >= 3 ? long(nc - 2) : 0;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(np, long(nc));
    for (long r = 0; r < np; ++r) {
        D(r, r) = 1;
        D(r, r + 1) = -2;
        D(r, r + 2) = 1;
    }
    const double w = std::sqrt(smoothing);
    const long ni = long(nc) - 2;  // free interior coefficients
    for (int axis = 0; axis < 3; ++axis) {
        const double first = pts.front()[axis], last = pts.back()[axis];
        s.coeffs[std::size_t(axis)].front() = first;
        s.coeffs[std::size_t(axis)].back() = last;
        if (ni <= 0) continue;
        Eigen::MatrixXd A(long(n) + np, ni);
        Eigen::VectorXd b(long(n) + np);
        for (long i = 0; i < long(n); ++i) {
            for (long j = 0; j < ni; ++j) A(i, j) = B(i, j + 1);
            b(i) = pts[std::size_t(i)][axis] - B(i, 0) * first - B(i, long(nc) - 1) * last;
        }
        for (long r = 0; r < np; ++r) {
            for (long j = 0; j < ni; ++j) A(long(n) + r, j) = w * D(r, j + 1);
            b(long(n) + r) = -w * (D(r, 0) * first + D(r, long(nc) - 1) * last);
        }
        const Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
        for (long j = 0; j < ni; ++j) s.coeffs[std::size_t(axis)][std::size_t(j + 1)] = c(j);
    }
    return s;
}

/// Largest distance between each input point and the spline evaluated at
/// that point's chord-length parameter.
inline double max_fit_residual(const BranchSpline& s, const std::vector<Vec3>& raw_points) {
    const auto pts = collapse_duplicates(raw_points);
    const auto t = chord_parameters(pts);
    double worst = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) worst = std::max(worst, norm(evaluate(s, t[i]) - pts[i]));
    return worst;
}

/// Offsets control values by independent uniform draws in [-amplitude, amplitude].
/// With `fix_endpoints` the first and last control point are left alone, so
/// the clamped end points (and the graph connectivity) do not move.
inline BranchSpline perturb_spline(const BranchSpline& s, double amplitude, std::uint64_t seed, bool fix_endpoints = true) {
    if (amplitude < 0) throw Error("invalid_amplitude", "perturbation amplitude must be >= 0");
    BranchSpline out = s;
    if (amplitude == 0) return out;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amplitude, amplitude);
    const std::size_t n = s.n_coeffs();
    for (std::size_t i = 0; i < n; ++i) {
        const bool end = i == 0 || i + 1 == n;
        for (int axis = 0; axis < 3; ++axis) {
            const double delta = u(rng);  // drawn even for fixed ends so streams stay aligned
            if (!(fix_endpoints && end)) out.coeffs[std::size_t(axis)][i] += delta;
        }
    }
    return out;
}

/// n points at uniformly spaced parameters over the spline domain.
inline std::vector<Vec3> evaluate_spline(const BranchSpline& s, std::size_t n) {
    if (n < 2) throw Error("invalid_count", "evaluate_spline needs n >= 2");
    std::vector<Vec3> out(n);
    const double a = s.t_begin(), b = s.t_end();
    for (std::size_t i = 0; i < n; ++i) {
        const double t = i + 1 == n ? b : a + (b - a) * double(i) / double(n - 1);
        out[i] = evaluate(s, t);
    }
    return out;
}

/// Polyline length of a point sequence.
inline double polyline_length(const std::vector<Vec3>& pts) {
    double len = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) len += norm(pts[i] - pts[i - 1]);
    return len;
}

inline nlohmann::json spline_to_json(const BranchSpline& s) {
    return {{"degree", s.degree},
            {"knots", s.knots},
            {"coeffs", {{"x", s.coeffs[0]}, {"y", s.coeffs[1]}, {"z", s.coeffs[2]}}}};
}

inline BranchSpline spline_from_json(const nlohmann::json& j) {
    BranchSpline s;
    try {
        s.degree = j.at("degree").get<int>();
        s.knots = j.at("knots").get<std::vector<double>>();
        s.coeffs[0] = j.at("coeffs").at("x").get<std::vector<double>>();
        s.coeffs[1] = j.at("coeffs").at("y").get<std::vector<double>>();
        s.coeffs[2] = j.at("coeffs").at("z").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_spline", std::string("spline JSON: ") + e.what());
    }
    if (s.coeffs[1].size() != s.n_coeffs() || s.coeffs[2].size() != s.n_coeffs() ||
        s.knots.size() != s.n_coeffs() + std::size_t(s.degree) + 1)
        throw Error("invalid_spline", "knot/coefficient counts are inconsistent");
    return s;
}

}  // namespace vamos

#endif  // VAMOS_SPLINE_HPP
