// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/solver.hpp"

#include <complex>
#include <map>

namespace thinobs {

struct FreeBoundaryPoint {
    Vec3 x{0, 0, 0};      ///< on the thin plane
    Vec3 normal{0, 0, 0};  ///< unit, tangent to the thin plane, pointing into the positivity set
    double kappa = kNaN;
    int line = -1;  ///< lateral line index the point was found on
};

/// Contact set, positivity set and free boundary of a thin-plane trace.
struct FreeBoundaryModel {
    HalfGrid grid;
    double tol_fb = 0;
    std::vector<std::size_t> contact_nodes;
    std::vector<std::size_t> positivity_nodes;
    std::vector<FreeBoundaryPoint> fb_points;  ///< ordered by x'' in 3D
    bool single_valued = true;
    int orientation = 1;  ///< +1 when the contact set lies at smaller x_n

    /// Graph x_n = g(x''); piecewise linear through the fb points (3D) or the
    /// single crossing (2D). Constant extrapolation outside the sampled range.
    double graph(double t) const {
        if (fb_points.empty()) return kNaN;
        const int kn = normal_index(grid.dim);
        if (grid.dim == 2 || fb_points.size() == 1) return fb_points.front().x[kn];
        if (t <= fb_points.front().x[0]) return fb_points.front().x[kn];
        if (t >= fb_points.back().x[0]) return fb_points.back().x[kn];
        auto it = std::lower_bound(fb_points.begin(), fb_points.end(), t,
                                   [](const FreeBoundaryPoint& p, double v) { return p.x[0] < v; });
        const auto& b = *it;
        const auto& a = *(it - 1);
        const double s = (t - a.x[0]) / (b.x[0] - a.x[0]);
        return a.x[kn] + s * (b.x[kn] - a.x[kn]);
    }

    /// Normal of the nearest fb point in x''.
    Vec3 normal_at(double t) const {
        if (fb_points.empty()) fail_numerical("no free boundary points");
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < fb_points.size(); ++i) {
            const double d = std::abs(fb_points[i].x[0] - t);
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return fb_points[best].normal;
    }

    /// Euclidean distance from x to the free boundary curve.
    double distance(const Vec3& x) const {
        if (fb_points.empty()) fail_numerical("no free boundary points");
        const int d = grid.dim, kn = normal_index(d), km = vertical_index(d);
        double plane;
        if (d == 2 || fb_points.size() == 1) {
            if (d == 2) {
                plane = std::abs(x[kn] - fb_points.front().x[kn]);
            } else {
                plane = std::hypot(x[0] - fb_points.front().x[0], x[1] - fb_points.front().x[1]);
            }
        } else {
            plane = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i + 1 < fb_points.size(); ++i) {
                const double ax = fb_points[i].x[0], ay = fb_points[i].x[1];
                const double bx = fb_points[i + 1].x[0], by = fb_points[i + 1].x[1];
                const double ex = bx - ax, ey = by - ay;
                const double len2 = ex * ex + ey * ey;
                double s = len2 > 0 ? ((x[0] - ax) * ex + (x[1] - ay) * ey) / len2 : 0.0;
                s = std::clamp(s, 0.0, 1.0);
                plane = std::min(plane, std::hypot(x[0] - ax - s * ex, x[1] - ay - s * ey));
            }
        }
        return std::hypot(plane, x[km]);
    }

    /// Signed thin-plane offset, positive on the positivity side.
    double side(const Vec3& x) const {
        const int kn = normal_index(grid.dim);
        const double t = grid.dim == 3 ? x[0] : 0.0;
        return orientation * (x[kn] - graph(t));
    }
};

namespace detail {

/// Slope at t of a least-squares quadratic through nearby graph samples.
inline double local_slope(const std::vector<FreeBoundaryPoint>& pts, std::size_t i, int half_width, int kn) {
    const std::size_t lo = i >= std::size_t(half_width) ? i - half_width : 0;
    const std::size_t hi = std::min(pts.size() - 1, i + std::size_t(half_width));
    const int m = int(hi - lo + 1);
    if (m < 2) return 0.0;
    const int deg = m >= 4 ? 2 : 1;
    Eigen::MatrixXd V(m, deg + 1);
    Eigen::VectorXd rhs(m);
    const double t0 = pts[i].x[0];
    for (int r = 0; r < m; ++r) {
        const double t = pts[lo + r].x[0] - t0;
        for (int c = 0; c <= deg; ++c) V(r, c) = std::pow(t, c);
        rhs(r) = pts[lo + r].x[kn];
    }
    const Eigen::VectorXd c = V.colPivHouseholderQr().solve(rhs);
    return c(1);
}

}  // namespace detail

/// Partitions thin-plane nodes at w <= tol_fb and locates the free boundary
/// along x_n-lines. On each contact/positivity edge the crossing is where the
/// linear extrapolation of w^{2/3} from the two nearest positivity nodes
/// reaches tol_fb^{2/3}; w^{2/3} is linear across the boundary for 3/2 growth,
/// while interpolating w itself toward the clamped contact value is biased.
inline FreeBoundaryModel extract_sets(const SignoriniSolution& sol, double tol_fb = 1e-8) {
    const HalfGrid& g = sol.grid;
    const int d = g.dim, kn = normal_index(d);
    FreeBoundaryModel m;
    m.grid = g;
    m.tol_fb = tol_fb;
    for (std::size_t p = 0; p < g.size(); ++p) {
        if (g.kind(p) != NodeKind::thin_plane) continue;
        (sol.w[p] <= tol_fb ? m.contact_nodes : m.positivity_nodes).push_back(p);
    }
    if (m.contact_nodes.empty()) fail_numerical("empty contact set");
    if (m.positivity_nodes.empty()) fail_numerical("empty positivity set");

    const double tau = std::pow(tol_fb, 2.0 / 3.0);
    const int lines_lo = d == 3 ? 1 : 0, lines_hi = d == 3 ? g.shape[0] - 2 : 0;
    int votes = 0;
    for (int line = lines_lo; line <= lines_hi; ++line) {
        int found = 0;
        FreeBoundaryPoint pt;
        for (int j = 1; j + 1 <= g.shape[kn] - 2; ++j) {
            std::array<int, 3> a{0, 0, 0}, b{0, 0, 0};
            if (d == 3) {
                a = {line, j, 0};
                b = {line, j + 1, 0};
            } else {
                a = {j, 0, 0};
                b = {j + 1, 0, 0};
            }
            const double wa = sol.w[g.index(a)], wb = sol.w[g.index(b)];
            const bool ca = wa <= tol_fb, cb = wb <= tol_fb;
            if (ca == cb) continue;
            // positivity node p1 and its next neighbor p2 away from the contact side
            auto c1 = ca ? b : a;
            auto c2 = c1;
            c2[kn] += ca ? 1 : -1;
            const Vec3 x1 = g.coord(c1);
            const double u1 = std::pow(std::max(sol.w[g.index(c1)], 0.0), 2.0 / 3.0);
            double offset = 0.0;  // distance from p1 toward the contact node
            if (c2[kn] >= 0 && c2[kn] < g.shape[kn] &&
                sol.w[g.index(c2)] > tol_fb) {
                const double u2 = std::pow(sol.w[g.index(c2)], 2.0 / 3.0);
                if (u2 > u1) offset = (u1 - tau) / (u2 - u1) * g.h;
                else offset = g.h;
            } else {
                const double u0 = std::pow(std::max(ca ? wa : wb, 0.0), 2.0 / 3.0);
                offset = (u1 - tau) / std::max(u1 - u0, 1e-300) * g.h;
            }
            offset = std::clamp(offset, 0.0, g.h);
            pt.x = x1;
            pt.x[kn] = x1[kn] + (ca ? -offset : offset);
            pt.line = line;
            votes += ca ? 1 : -1;
            ++found;
        }
        if (found > 1) m.single_valued = false;
        if (found == 1) m.fb_points.push_back(pt);
    }
    if (m.fb_points.empty()) fail_numerical("no free boundary crossing found on x_n-lines");
    m.orientation = votes >= 0 ? 1 : -1;

    for (std::size_t i = 0; i < m.fb_points.size(); ++i) {
        Vec3 nu{0, 0, 0};
        if (d == 2) {
            nu[kn] = m.orientation;
        } else {
            const double slope = detail::local_slope(m.fb_points, i, 3, kn);
            const double len = std::hypot(slope, 1.0);
            nu[0] = -slope * m.orientation / len;
            nu[1] = m.orientation / len;
        }
        m.fb_points[i].normal = nu;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Vanishing order.

/// L2 norm of w over B_r^+(x0) intersected with the box. Cells are split into
/// m^d sub-cells whose centers are kept when inside the ball; values come from
/// multilinear interpolation of the nodal field.
inline double half_ball_l2(const SignoriniSolution& sol, const Vec3& x0, double r, int m = 4) {
    const HalfGrid& g = sol.grid;
    const int d = g.dim;
    std::array<int, 3> lo{0, 0, 0}, hi{0, 0, 0};
    for (int a = 0; a < d; ++a) {
        const double origin = a == d - 1 ? 0.0 : -1.0;
        lo[a] = std::clamp(int(std::floor((x0[a] - r - origin) / g.h)), 0, g.shape[a] - 2);
        hi[a] = std::clamp(int(std::ceil((x0[a] + r - origin) / g.h)), 1, g.shape[a] - 1) - 1;
    }
    const double sub = g.h / m;
    const double cell_vol = std::pow(sub, d);
    const int sub_count = d == 3 ? m * m * m : m * m;
    double acc = 0;
    for (int k = lo[2]; k <= (d == 3 ? hi[2] : 0); ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) {
                const Vec3 corner = g.coord({i, j, k});
                for (int s = 0; s < sub_count; ++s) {
                    Vec3 x = corner;
                    int rem = s;
                    for (int a = 0; a < d; ++a) {
                        x[a] += (rem % m + 0.5) * sub;
                        rem /= m;
                    }
                    if (distance(x, x0, d) >= r) continue;
                    const double v = interpolate(g, sol.w, x);
                    acc += v * v * cell_vol;
                }
            }
    return std::sqrt(acc);
}

/// Dyadic radii r_max, r_max/2, ... >= 4h with r_max = min(0.5, distance to
/// the lateral and top faces).
inline std::vector<double> default_radii(const HalfGrid& g, const Vec3& x0) {
    double rmax = 0.5;
    for (int a = 0; a < g.dim - 1; ++a) rmax = std::min(rmax, 1.0 - std::abs(x0[a]));
    rmax = std::min(rmax, 1.0 - x0[g.dim - 1]);
    std::vector<double> r;
    for (double t = rmax; t >= 4 * g.h * (1 - 1e-12); t /= 2) r.push_back(t);
    return r;
}

/// Slope of ln(r^{-(n+1)/2} ||w||_{L2(B_r^+(x0))}) against ln r.
inline double estimate_vanishing_order(const SignoriniSolution& sol, const Vec3& x0,
                                       std::vector<double> radii = {}) {
    if (radii.empty()) radii = default_radii(sol.grid, x0);
    std::vector<double> lr, lv;
    for (double r : radii) {
        if (!(r >= 2 * sol.grid.h)) continue;
        const double n2 = half_ball_l2(sol, x0, r);
        if (!(n2 > 0)) continue;
        lr.push_back(std::log(r));
        lv.push_back(std::log(std::pow(r, -0.5 * sol.grid.dim) * n2));
    }
    if (lr.size() < 3) fail_numerical("fewer than 3 usable radii for the vanishing order");
    return fit_line(lr, lv).first;
}

// ---------------------------------------------------------------------------
// Asymptotic profile.

struct AsymptoticProfile {
    int dim = 3;
    Vec3 x0{0, 0, 0};
    double a = 0;
    Vec3 nu{0, 0, 0};
    Mat3 A = Mat3::Identity();
    Vec3 b{0, 0, 0};  ///< b_e for e = e_k (k <= n) and b_{n+1}
    double fit_residual = 0;
    std::vector<ShellStat> error_table;

    double nu_A_nu() const {
        double s = 0;
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) s += nu[i] * A(i, j) * nu[j];
        return s;
    }
    std::complex<double> arg(const Vec3& x) const {
        const int km = vertical_index(dim);
        double s = 0;
        for (int i = 0; i < dim; ++i) s += (x[i] - x0[i]) * nu[i];
        return {s / std::sqrt(nu_A_nu()), x[km] / std::sqrt(A(km, km))};
    }
    /// W_{x0}(x) with unit-amplitude template when `amp` is 1.
    double value(const Vec3& x, double amp) const {
        const auto z = arg(x);
        return amp * detail::power_terms(z.real(), z.imag()).three_half.real();
    }
    double value(const Vec3& x) const { return value(x, a); }
    Vec3 gradient(const Vec3& x) const {
        const int km = vertical_index(dim);
        const auto z = arg(x);
        const auto p = detail::power_terms(z.real(), z.imag());
        const std::complex<double> c = 1.5 * a * p.half;
        const std::complex<double> I(0, 1);
        Vec3 g{0, 0, 0};
        const double sn = std::sqrt(nu_A_nu());
        for (int k = 0; k < dim; ++k) g[k] = (c * (nu[k] / sn)).real();
        g[km] += (c * I / std::sqrt(A(km, km))).real();
        return g;
    }
    Mat3 hessian(const Vec3& x) const {
        const int km = vertical_index(dim);
        const auto z = arg(x);
        const auto p = detail::power_terms(z.real(), z.imag());
        const std::complex<double> c = 0.75 * a * p.minus_half;
        const std::complex<double> I(0, 1);
        std::complex<double> dz[3] = {0, 0, 0};
        const double sn = std::sqrt(nu_A_nu());
        for (int k = 0; k < dim; ++k) dz[k] = nu[k] / sn;
        dz[km] += I / std::sqrt(A(km, km));
        Mat3 H = Mat3::Zero();
        for (int k = 0; k < dim; ++k)
            for (int l = 0; l < dim; ++l) H(k, l) = (c * dz[k] * dz[l]).real();
        return H;
    }
};

/// Least-squares amplitude of the rotated and stretched model solution over
/// the annulus 4h <= |x - x0| <= 0.2.
inline AsymptoticProfile fit_asymptotic_profile(const SignoriniSolution& sol, const FreeBoundaryModel& fbm,
                                                const MetricField& metric, const Vec3& x0_in,
                                                double r_outer = 0.2) {
    const HalfGrid& g = sol.grid;
    const int d = g.dim, km = vertical_index(d);
    AsymptoticProfile prof;
    prof.dim = d;
    prof.x0 = x0_in;
    prof.x0[km] = 0;
    prof.nu = fbm.normal_at(d == 3 ? prof.x0[0] : 0.0);
    prof.A = metric.eval(prof.x0);
    const double r_inner = 4 * g.h;
    double swp = 0, spp = 0, sww = 0;
    std::vector<std::size_t> nodes;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const Vec3 x = g.coord(p);
        const double r = distance(x, prof.x0, d);
        if (r < r_inner || r > r_outer) continue;
        nodes.push_back(p);
        const double phi = prof.value(x, 1.0);
        swp += sol.w[p] * phi;
        spp += phi * phi;
        sww += sol.w[p] * sol.w[p];
    }
    if (nodes.empty() || spp <= 0) fail_numerical("empty fitting annulus");
    prof.a = swp / spp;
    double res = 0;
    for (std::size_t p : nodes) {
        const double e = sol.w[p] - prof.value(g.coord(p));
        res += e * e;
    }
    prof.fit_residual = sww > 0 ? std::sqrt(res / sww) : 0.0;
    if (!(prof.fit_residual <= 0.5)) fail_numerical("profile fit residual exceeds 50% of signal (point not regular)");

    const double sn = std::sqrt(prof.nu_A_nu());
    for (int k = 0; k < km; ++k) prof.b[k] = 1.5 * prof.nu[k] * prof.a / sn;
    prof.b[km] = 1.5 * prof.a / std::sqrt(prof.A(km, km));

    std::vector<double> rad, err;
    for (std::size_t p : nodes) {
        const Vec3 x = g.coord(p);
        rad.push_back(distance(x, prof.x0, d));
        err.push_back(sol.w[p] - prof.value(x));
    }
    prof.error_table = dyadic_shells(rad, err, r_inner, r_outer);
    return prof;
}

struct DecayReport {
    int order = 0;
    std::vector<ShellStat> shells;
    double exponent = kNaN;
    double predicted_floor = 0;  ///< 3/2 - |beta|; the Hölder gain alpha is not explicit
    bool exact = false;
};

/// Shell-wise decay of |d^beta (w - W_{x0})| for |beta| = order. Orders >= 1
/// are restricted to the non-tangential cone dist(x, Gamma) >= |x - x0|/2.
inline DecayReport check_asymptotic_decay(const SignoriniSolution& sol, const FreeBoundaryModel& fbm,
                                          const MetricField& metric, const AsymptoticProfile& prof, int order,
                                          double r_min = -1, double r_max = 0.25) {
    if (order < 0 || order > 2) fail_validation("decay order must be 0, 1 or 2");
    const HalfGrid& g = sol.grid;
    const int d = g.dim;
    if (r_min < 0) r_min = 2 * g.h;
    std::vector<Vec3> grads;
    std::vector<Mat3> hess;
    if (order == 1) grads = node_gradients(sol, metric);
    if (order == 2) hess = node_hessians(sol);
    std::vector<double> rad, err;
    double scale = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const Vec3 x = g.coord(p);
        const double r = distance(x, prof.x0, d);
        if (r < r_min || r >= r_max) continue;
        if (order >= 1 && fbm.distance(x) < 0.5 * r) continue;
        double e = 0;
        if (order == 0) {
            const double W = prof.value(x);
            e = sol.w[p] - W;
            scale = std::max(scale, std::abs(W));
        } else if (order == 1) {
            const Vec3 gw = prof.gradient(x);
            for (int k = 0; k < d; ++k) {
                e = std::max(e, std::abs(grads[p][k] - gw[k]));
                scale = std::max(scale, std::abs(gw[k]));
            }
        } else {
            if (!hess[p].allFinite()) continue;
            const Mat3 hw = prof.hessian(x);
            e = (hess[p] - hw).topLeftCorner(d, d).cwiseAbs().maxCoeff();
            scale = std::max(scale, hw.topLeftCorner(d, d).cwiseAbs().maxCoeff());
        }
        rad.push_back(r);
        err.push_back(e);
    }
    DecayReport rep;
    rep.order = order;
    rep.predicted_floor = 1.5 - order;
    rep.shells = dyadic_shells(rad, err, r_min, r_max);
    if (rep.shells.size() < 2) fail_numerical("insufficient shells for decay regression");
    double emax = 0;
    for (const auto& s : rep.shells) emax = std::max(emax, s.max_err);
    rep.exact = emax <= 1e-12 * std::max(1.0, scale);
    rep.exponent = rep.exact ? std::numeric_limits<double>::infinity() : shell_slope(rep.shells);
    return rep;
}

/// Vanishing orders at every `stride`-th fb point whose default radius set
/// holds at least three radii.
inline void annotate_vanishing_orders(const SignoriniSolution& sol, FreeBoundaryModel& fbm, int stride = 4) {
    for (std::size_t i = 0; i < fbm.fb_points.size(); i += std::size_t(std::max(1, stride))) {
        auto& p = fbm.fb_points[i];
        if (default_radii(sol.grid, p.x).size() < 3) continue;
        p.kappa = estimate_vanishing_order(sol, p.x);
    }
}

}  // namespace thinobs
