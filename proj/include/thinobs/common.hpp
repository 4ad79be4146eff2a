// SPDX-License-Identifier: MIT
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace thinobs {

/// Points carry up to three coordinates; only the first `dim` are used.
/// Ordering is (x'', x_n, x_{n+1}), so in 2D a point is (x_n, x_{n+1}).
using Vec3 = std::array<double, 3>;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Index of the last tangential-to-thin-plane coordinate x_n.
constexpr int normal_index(int dim) { return dim - 2; }
/// Index of x_{n+1}, the coordinate normal to the thin plane.
constexpr int vertical_index(int dim) { return dim - 1; }

enum class ErrorKind { validation, numerical };

/// Error type used across the library. The CLI maps `validation` to exit 1
/// and `numerical` to exit 2.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_validation(const std::string& msg) {
    throw Error(ErrorKind::validation, msg);
}
[[noreturn]] inline void fail_numerical(const std::string& msg) {
    throw Error(ErrorKind::numerical, msg);
}

inline void require_dim(int dim) {
    if (dim != 2 && dim != 3) fail_validation("unsupported dimension " + std::to_string(dim));
}

inline double norm(const Vec3& v, int dim) {
    double s = 0;
    for (int i = 0; i < dim; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

inline double distance(const Vec3& a, const Vec3& b, int dim) {
    double s = 0;
    for (int i = 0; i < dim; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b, int dim) {
    double s = 0;
    for (int i = 0; i < dim; ++i) s += a[i] * b[i];
    return s;
}

/// Scalar field with optional analytic derivatives.
struct AnalyticField {
    std::function<double(const Vec3&)> value;
    std::function<Vec3(const Vec3&)> gradient;   ///< may be empty
    std::function<Mat3(const Vec3&)> hessian;    ///< may be empty
};

/// Least-squares line fit; returns (slope, intercept).
inline std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) fail_numerical("line fit needs at least two points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0) fail_numerical("degenerate abscissae in line fit");
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

/// Slope of log(values) against log(radii), skipping non-positive values.
inline double loglog_slope(const std::vector<double>& radii, const std::vector<double>& values) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < radii.size(); ++i) {
        if (radii[i] > 0 && values[i] > 0 && std::isfinite(values[i])) {
            lx.push_back(std::log(radii[i]));
            ly.push_back(std::log(values[i]));
        }
    }
    if (lx.size() < 2) return kNaN;
    return fit_line(lx, ly).first;
}

/// Deterministic 64-bit generator with a portable uniform mapping, so sampled
/// pair sets do not depend on the standard library's distribution code.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9E3779B97F4A7C15ULL) {}
    std::uint64_t next() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) { return std::size_t(next() % n); }

private:
    std::uint64_t state_;
};

/// One row of a decay table.
struct ShellStat {
    double r_lo = 0, r_hi = 0;
    double max_err = 0;
    double mean_sq_err = 0;
    std::size_t count = 0;
};

/// Groups (radius, error) samples into dyadic shells [r_hi/2, r_hi) for
/// r_hi = r_max, r_max/2, ... down to r_min. Empty shells are dropped.
inline std::vector<ShellStat> dyadic_shells(const std::vector<double>& radius,
                                            const std::vector<double>& err,
                                            double r_min, double r_max) {
    std::vector<ShellStat> shells;
    for (double hi = r_max; hi / 2 >= r_min * (1 - 1e-12); hi /= 2) {
        ShellStat s;
        s.r_hi = hi;
        s.r_lo = hi / 2;
        shells.push_back(s);
    }
    for (std::size_t i = 0; i < radius.size(); ++i) {
        const double r = radius[i];
        if (!(r >= r_min) || !(r < r_max) || !std::isfinite(err[i])) continue;
        for (auto& s : shells) {
            if (r >= s.r_lo && r < s.r_hi) {
                s.max_err = std::max(s.max_err, std::abs(err[i]));
                s.mean_sq_err += err[i] * err[i];
                ++s.count;
                break;
            }
        }
    }
    std::vector<ShellStat> out;
    for (auto& s : shells) {
        if (s.count == 0) continue;
        s.mean_sq_err /= double(s.count);
        out.push_back(s);
    }
    return out;
}

/// Log-log slope of shell maxima against the geometric shell midpoint.
inline double shell_slope(const std::vector<ShellStat>& shells) {
    std::vector<double> r, v;
    for (const auto& s : shells) {
        r.push_back(std::sqrt(s.r_lo * s.r_hi));
        v.push_back(s.max_err);
    }
    return loglog_slope(r, v);
}

}  // namespace thinobs
