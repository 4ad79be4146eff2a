// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/grushin.hpp"

#include <map>

namespace thinobs {

/// Samples fn on every node of a quarter grid.
inline QuarterGridField sample_quarter(const QuarterGrid& g, const ScalarFn& fn) {
    QuarterGridField u;
    u.grid = g;
    u.values.resize(g.size());
    u.kind.resize(g.size());
    for (std::size_t p = 0; p < g.size(); ++p) {
        const auto c = g.ijk(p);
        u.kind[p] = g.classify(c[0], c[1], c[2]);
        u.values[p] = u.kind[p] == QuarterBc::exterior ? 0.0 : fn(g.coord(p));
    }
    return u;
}

struct PairOptions {
    std::size_t max_pairs = 100000;
    std::uint64_t seed = 7;
    double d_min = 0;  ///< 0 selects the grid spacing
    double d_max = 1;
    double r_max = std::numeric_limits<double>::infinity();  ///< keep nodes with r <= r_max
};

/// Supremum of |u(p) - u(q)| / d(p,q)^alpha over sampled node pairs. Pairs
/// are grouped in dyadic quasi-distance bands [D/2, D); when the full pair set
/// exceeds max_pairs each band gets an equal share drawn at random near an
/// anchor node, plus axis-aligned pairs. The result is a lower bound.
struct PairSeminorm {
    double value = 0;
    std::size_t pairs = 0;
    std::vector<double> band_hi;
    std::vector<double> band_value;
    std::vector<std::size_t> band_count;
};

namespace detail {

inline void require_box(const QuarterGrid& g) {
    if (g.shape != QuarterShape::box) fail_validation("norms need a box-shaped quarter grid");
}

inline PairSeminorm pair_seminorm(const QuarterGrid& g, const std::vector<double>& u, double alpha,
                                  const PairOptions& opt) {
    const int d = g.dim, kn = normal_index(d);
    const double dmin = opt.d_min > 0 ? opt.d_min : g.h;
    PairSeminorm out;
    for (double hi = opt.d_max; hi / 2 >= dmin * (1 - 1e-12); hi /= 2) out.band_hi.push_back(hi);
    const int nb = int(out.band_hi.size());
    if (nb == 0) fail_numerical("empty pair set");
    out.band_value.assign(std::size_t(nb), 0.0);
    out.band_count.assign(std::size_t(nb), 0);
    auto band_of = [&](double dist) {
        if (!(dist >= dmin) || !(dist < opt.d_max)) return -1;
        const int j = int(std::floor(std::log2(opt.d_max / dist)));
        return j >= 0 && j < nb ? j : -1;
    };
    std::vector<std::size_t> nodes;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const Vec3 y = g.coord(p);
        if (std::hypot(y[std::size_t(kn)], y[std::size_t(kn + 1)]) <= opt.r_max) nodes.push_back(p);
    }
    const std::size_t N = nodes.size();
    if (N < 2) fail_numerical("empty pair set");
    // only pairs falling in band `want` (or any band when want < 0) count
    auto record = [&](std::size_t p, std::size_t q, int want, std::vector<double>& bv, std::vector<std::size_t>& bc) {
        const double dist = quasi_metric(g.coord(p), g.coord(q), d);
        const int j = band_of(dist);
        if (j < 0 || (want >= 0 && j != want)) return false;
        bv[std::size_t(j)] = std::max(bv[std::size_t(j)], std::abs(u[p] - u[q]) / std::pow(dist, alpha));
        ++bc[std::size_t(j)];
        return true;
    };
    if (N * (N - 1) / 2 <= opt.max_pairs) {
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = i + 1; k < N; ++k) record(nodes[i], nodes[k], -1, out.band_value, out.band_count);
    } else {
        const std::size_t quota = std::max<std::size_t>(1, opt.max_pairs / std::size_t(nb));
#pragma omp parallel for schedule(dynamic)
        for (int j = 0; j < nb; ++j) {
            std::vector<double> bv(std::size_t(nb), 0.0);
            std::vector<std::size_t> bc(std::size_t(nb), 0);
            Rng rng(opt.seed * 1000003ULL + std::uint64_t(j));
            const double D = out.band_hi[std::size_t(j)];
            const int reach_n = std::max(1, int(std::ceil(D / g.h)));
            const int axis_k = std::max(1, int(std::ceil(0.5 * D / g.h)));
            std::size_t got = 0;
            for (std::size_t attempt = 0; attempt < 20 * quota && got < quota; ++attempt) {
                const std::size_t p = nodes[rng.index(N)];
                const auto c = g.ijk(p);
                const Vec3 y = g.coord(p);
                std::array<int, 3> o = c;
                if (attempt % 4 == 0) {
                    // axis-aligned pair along a normal direction
                    const int ax = 1 + int(rng.index(2));
                    o[std::size_t(ax)] += (rng.index(2) ? axis_k : -axis_k);
                } else {
                    const double r = std::hypot(y[std::size_t(kn)], y[std::size_t(kn + 1)]);
                    const int reach_t = std::max(1, int(std::ceil(2 * D * (r + 2 * D) / g.h)));
                    if (d == 3) o[0] += int(rng.index(std::size_t(2 * reach_t + 1))) - reach_t;
                    o[1] += int(rng.index(std::size_t(2 * reach_n + 1))) - reach_n;
                    o[2] += int(rng.index(std::size_t(2 * reach_n + 1))) - reach_n;
                }
                if (o[0] < 0 || o[0] >= g.nt || o[1] < 0 || o[1] >= g.n || o[2] < 0 || o[2] >= g.n) continue;
                const std::size_t q = g.index(o[0], o[1], o[2]);
                if (q == p) continue;
                const Vec3 yq = g.coord(q);
                if (std::hypot(yq[std::size_t(kn)], yq[std::size_t(kn + 1)]) > opt.r_max) continue;
                if (record(p, q, j, bv, bc)) ++got;
            }
#pragma omp critical
            {
                for (int k = 0; k < nb; ++k) {
                    out.band_value[std::size_t(k)] = std::max(out.band_value[std::size_t(k)], bv[std::size_t(k)]);
                    out.band_count[std::size_t(k)] += bc[std::size_t(k)];
                }
            }
        }
    }
    for (int j = 0; j < nb; ++j) {
        out.pairs += out.band_count[std::size_t(j)];
        out.value = std::max(out.value, out.band_value[std::size_t(j)]);
    }
    if (out.pairs == 0) fail_numerical("empty pair set");
    return out;
}

/// First derivative along coordinate `axis` with five-point stencils
/// (centered inside, one-sided at the edges); exact for quartics.
inline std::vector<double> grid_partial(const QuarterGrid& g, const std::vector<double>& u, int axis) {
    const int kn = normal_index(g.dim);
    const int slot = axis == kn ? 1 : axis == kn + 1 ? 2 : 0;
    const int len = slot == 0 ? g.nt : g.n;
    const double sign = slot == 2 ? -1.0 : 1.0;  // index b runs along -y_{n+1}
    if (len < 5) fail_validation("grid too small for five-point derivatives");
    static constexpr double one_sided[5][5] = {{-25, 48, -36, 16, -3},
                                               {-3, -10, 18, -6, 1},
                                               {1, -8, 0, 8, -1},
                                               {-1, 6, -18, 10, 3},
                                               {3, -16, 36, -48, 25}};
    std::vector<double> out(u.size(), 0.0);
    for (std::size_t p = 0; p < g.size(); ++p) {
        const auto c = g.ijk(p);
        const int i = c[std::size_t(slot)];
        const int start = std::clamp(i - 2, 0, len - 5);
        const int row = i - start;
        double s = 0;
        for (int k = 0; k < 5; ++k) {
            auto cc = c;
            cc[std::size_t(slot)] = start + k;
            s += one_sided[row][k] * u[g.index(cc[0], cc[1], cc[2])];
        }
        out[p] = sign * s / (12 * g.h);
    }
    return out;
}

/// Modified Grushin fields: y_n d_i, y_{n+1} d_i for each tangential i, then d_n, d_{n+1}.
inline std::vector<double> apply_modified_field(const QuarterGrid& g, const std::vector<double>& u, int sigma) {
    const int kn = normal_index(g.dim);
    if (sigma < 2 * kn) {
        auto du = grid_partial(g, u, sigma / 2);
        const int coef = sigma % 2 == 0 ? kn : kn + 1;
        for (std::size_t p = 0; p < g.size(); ++p) du[p] *= g.coord(p)[std::size_t(coef)];
        return du;
    }
    return grid_partial(g, u, sigma == 2 * kn ? kn : kn + 1);
}

/// Grushin fields r d_i (tangential), d_n, d_{n+1}; index runs over coordinates.
inline std::vector<double> apply_grushin_field(const QuarterGrid& g, const std::vector<double>& u, int i) {
    const int kn = normal_index(g.dim);
    auto du = grid_partial(g, u, i);
    if (i < kn)
        for (std::size_t p = 0; p < g.size(); ++p) {
            const Vec3 y = g.coord(p);
            du[p] *= std::hypot(y[std::size_t(kn)], y[std::size_t(kn + 1)]);
        }
    return du;
}

}  // namespace detail

/// [u]_{C^{k,alpha}_*}: the alpha-seminorm of u (k = 0) or the sum over all
/// k-fold compositions of the modified Grushin fields applied to u.
inline PairSeminorm grushin_holder_seminorm(const QuarterGridField& u, double alpha, int k = 0,
                                            const PairOptions& opt = {}) {
    detail::require_box(u.grid);
    if (k < 0 || k > 2) fail_validation("vector field order must be 0, 1 or 2");
    if (!(alpha > 0 && alpha <= 1)) fail_validation("Holder exponent must lie in (0,1]");
    const auto& g = u.grid;
    std::vector<std::vector<double>> fields{u.values};
    const int nf = 2 * (g.dim - 1);
    for (int step = 0; step < k; ++step) {
        std::vector<std::vector<double>> next;
        for (const auto& f : fields)
            for (int s = 0; s < nf; ++s) next.push_back(detail::apply_modified_field(g, f, s));
        fields = std::move(next);
    }
    PairSeminorm total;
    for (const auto& f : fields) {
        auto s = detail::pair_seminorm(g, f, alpha, opt);
        if (total.band_hi.empty()) {
            total = s;
            total.value = s.value;
            continue;
        }
        total.value += s.value;
        total.pairs += s.pairs;
        for (std::size_t j = 0; j < s.band_value.size(); ++j) {
            total.band_value[j] += s.band_value[j];
            total.band_count[j] += s.band_count[j];
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// X and Y spaces

struct AnchorProfile {
    double t = 0;      ///< tangential coordinate (0 in 2D)
    double dn = 0;     ///< d_n at the anchor (f_0 for the Y space)
    double din = 0;    ///< d_{1n}
    double dnn = 0;    ///< d_nn, zero for members of X
    double dnnn = 0;   ///< d_nnn
    double dnmm = 0;   ///< d_{n,n+1,n+1}
    double value = 0;  ///< anchor contribution to the norm
};

struct HolderExponent {
    double alpha = kNaN;
    double confidence = kNaN;  ///< half-spread of the per-level slopes
    double slope = kNaN;
    int levels = 0;
};

struct HolderReport {
    std::string space;  ///< "X" or "Y"
    double alpha = 0, eps = 0;
    double value = 0;  ///< sampled lower bound of the norm
    bool lower_bound = true;
    std::map<std::string, double> terms;
    std::vector<AnchorProfile> anchors;    ///< anchors at even tangential indices
    std::vector<AnchorProfile> profiles;   ///< profile at every tangential node
    std::map<std::string, std::vector<double>> components;  ///< per-node remainder fields
    std::map<std::string, HolderExponent> exponents;
    double reconstruction_residual = 0;
    double remainder_on_dirichlet = 0;  ///< max |remainder| on {y_n = 0} off P
    std::size_t pairs = 0;
};

struct NormOptions {
    PairOptions pairs;
    double tol = 1e-8;  ///< relative reconstruction tolerance
};

namespace detail {

inline std::vector<int> anchor_indices(const QuarterGrid& g) {
    std::vector<int> out;
    for (int it = 0; it < g.nt; it += 2) out.push_back(it);
    return out;
}

inline double remainder_power(const Vec3& y, int dim, double gamma) {
    const int kn = normal_index(dim);
    return std::pow(std::hypot(y[std::size_t(kn)], y[std::size_t(kn + 1)]), gamma);
}

inline PairOptions share_pairs(const PairOptions& opt, std::size_t parts) {
    PairOptions o = opt;
    o.max_pairs = std::max<std::size_t>(2000, opt.max_pairs / std::max<std::size_t>(parts, 1));
    return o;
}

}  // namespace detail

/// Fits an exponent from samples (t, g(t)) on a line: second differences
/// over dyadic separations s give max|D^2_s g| ~ s^{1+alpha}.
inline HolderExponent fit_holder_exponent(const std::vector<std::pair<double, double>>& samples) {
    if (samples.size() < 16) fail_validation("exponent fit needs at least 16 samples");
    auto s = samples;
    std::sort(s.begin(), s.end());
    const double dt = (s.back().first - s.front().first) / double(s.size() - 1);
    if (!(dt > 0)) fail_validation("exponent fit needs distinct abscissae");
    for (std::size_t i = 1; i < s.size(); ++i)
        if (std::abs(s[i].first - s[i - 1].first - dt) > 1e-6 * dt) fail_validation("exponent fit needs uniform spacing");
    std::vector<double> sep, d2;
    const std::size_t n = s.size();
    for (std::size_t k = 1; 2 * k < n; k *= 2) {
        double m = 0;
        for (std::size_t i = k; i + k < n; ++i) m = std::max(m, std::abs(s[i + k].second - 2 * s[i].second + s[i - k].second));
        if (m > 0) {
            sep.push_back(double(k) * dt);
            d2.push_back(m);
        }
    }
    if (sep.size() < 2) fail_numerical("dynamic range under 2 dyadic levels");
    HolderExponent e;
    e.levels = int(sep.size());
    e.slope = loglog_slope(sep, d2);
    e.alpha = std::clamp(e.slope - 1.0, 0.0, 1.0);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 1; i < sep.size(); ++i) {
        const double sl = std::log(d2[i] / d2[i - 1]) / std::log(sep[i] / sep[i - 1]);
        lo = std::min(lo, sl);
        hi = std::max(hi, sl);
    }
    e.confidence = 0.5 * (hi - lo);
    return e;
}

/// Y_{alpha,eps} decomposition f = f_0(y'') y_n + r^{1+2alpha-eps} f_1 and the
/// anchored weighted eps-seminorm.
inline HolderReport y_norm(const QuarterGridField& f, double alpha, double eps, const NormOptions& opt = {}) {
    detail::require_box(f.grid);
    if (!(alpha > 0 && alpha <= 1) || !(eps > 0 && eps <= 1)) fail_validation("alpha and eps must lie in (0,1]");
    const auto& g = f.grid;
    const int kn = normal_index(g.dim);
    const double gamma = 1 + 2 * alpha - eps;
    HolderReport rep;
    rep.space = "Y";
    rep.alpha = alpha;
    rep.eps = eps;

    // f_0 by the four-point one-sided stencil along y_n on P, exact for cubics
    std::vector<double> f0(std::size_t(g.nt));
    for (int it = 0; it < g.nt; ++it) {
        auto v = [&](int a) { return f.values[g.index(it, a, 0)]; };
        f0[std::size_t(it)] = (-11 * v(0) + 18 * v(1) - 9 * v(2) + 2 * v(3)) / (6 * g.h);
        AnchorProfile ap;
        ap.t = g.coord(it, 0, 0)[0] * (g.dim == 3);
        ap.dn = f0[std::size_t(it)];
        rep.profiles.push_back(ap);
    }
    std::vector<double> f1(g.size(), 0.0), f0n(g.size());
    double scale = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const auto c = g.ijk(p);
        const Vec3 y = g.coord(p);
        f0n[p] = f0[std::size_t(c[0])];
        const double lin = f0n[p] * y[std::size_t(kn)];
        const double w = detail::remainder_power(y, g.dim, gamma);
        f1[p] = w > 0 ? (f.values[p] - lin) / w : 0.0;
        rep.reconstruction_residual = std::max(rep.reconstruction_residual, std::abs(lin + w * f1[p] - f.values[p]));
        scale = std::max(scale, std::abs(f.values[p]));
        if (c[1] == 0 && (c[2] > 0)) rep.remainder_on_dirichlet = std::max(rep.remainder_on_dirichlet, std::abs(f1[p]));
    }
    rep.components["f0"] = f0n;
    rep.components["f1"] = f1;
    if (rep.reconstruction_residual > opt.tol * std::max(1.0, scale))
        fail_numerical("decomposition inconsistent: reconstruction residual above tolerance");

    const auto anchors = detail::anchor_indices(g);
    const auto popt = detail::share_pairs(opt.pairs, anchors.size());
    for (int it : anchors) {
        const Vec3 ybar = g.coord(it, 0, 0);
        std::vector<double> w(g.size());
        for (std::size_t p = 0; p < g.size(); ++p) {
            const Vec3 y = g.coord(p);
            const double dist = quasi_metric(y, ybar, g.dim);
            w[p] = dist > 0 ? (f.values[p] - y[std::size_t(kn)] * f0[std::size_t(it)]) / std::pow(dist, gamma) : 0.0;
        }
        const auto s = detail::pair_seminorm(g, w, eps, popt);
        AnchorProfile ap = rep.profiles[std::size_t(it)];
        ap.value = s.value;
        rep.anchors.push_back(ap);
        rep.value = std::max(rep.value, s.value);
        rep.pairs += s.pairs;
    }
    rep.terms["weighted_seminorm"] = rep.value;

    // Euclidean alpha-seminorm of f_0 along P
    double f0h = 0;
    for (int i = 0; i < g.nt; ++i)
        for (int j = i + 1; j < g.nt; ++j)
            f0h = std::max(f0h, std::abs(f0[std::size_t(i)] - f0[std::size_t(j)]) / std::pow((j - i) * g.h, alpha));
    rep.terms["f0_holder"] = f0h;
    return rep;
}

namespace detail {

/// Least-squares fit of v near the anchor (it, 0, 0) by polynomials that
/// vanish on {y_n = 0} and are even in y_{n+1}.
inline AnchorProfile fit_x_profile(const QuarterGridField& v, int it) {
    const auto& g = v.grid;
    const int kn = normal_index(g.dim), km = kn + 1;
    struct Term {
        int p, q, t;
    };
    std::vector<Term> terms{{1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {1, 2, 0}, {4, 0, 0}, {2, 2, 0}};
    if (g.dim == 3) {
        for (Term t : {Term{1, 0, 1}, Term{2, 0, 1}, Term{3, 0, 1}, Term{1, 2, 1}, Term{1, 0, 2}, Term{2, 0, 2}})
            terms.push_back(t);
    }
    const double tbar = g.dim == 3 ? g.coord(it, 0, 0)[0] : 0.0;
    int t0 = it, t1 = it;
    if (g.dim == 3) {
        t0 = std::clamp(it - 2, 0, g.nt - 5);
        t1 = t0 + 4;
    }
    const int amax = std::min(4, g.n - 1), bmax = std::min(4, g.n - 1);
    std::vector<Vec3> pts;
    std::vector<double> vals;
    for (int t = t0; t <= t1; ++t)
        for (int a = 1; a <= amax; ++a)
            for (int b = 0; b <= bmax; ++b) {
                pts.push_back(g.coord(t, a, b));
                vals.push_back(v.values[g.index(t, a, b)]);
            }
    const int nb = int(terms.size()), np = int(pts.size());
    if (np < nb) fail_numerical("profile fit underdetermined at an anchor");
    Eigen::MatrixXd A(np, nb);
    Eigen::VectorXd b(np);
    for (int i = 0; i < np; ++i) {
        const Vec3& y = pts[std::size_t(i)];
        const double dt = g.dim == 3 ? y[0] - tbar : 0.0;
        for (int j = 0; j < nb; ++j) {
            const Term& tm = terms[std::size_t(j)];
            // scaled monomials keep the columns comparable
            A(i, j) = std::pow(y[std::size_t(kn)] / g.h, tm.p) * std::pow(y[std::size_t(km)] / g.h, tm.q) *
                      std::pow(dt / g.h, tm.t);
        }
        b(i) = vals[std::size_t(i)];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < nb) fail_numerical("profile fit underdetermined at an anchor");
    const Eigen::VectorXd c = qr.solve(b);
    auto coef = [&](int p, int q, int t) {
        for (int j = 0; j < nb; ++j) {
            const Term& tm = terms[std::size_t(j)];
            if (tm.p == p && tm.q == q && tm.t == t) return c(j) / std::pow(g.h, p + q + t);
        }
        return 0.0;
    };
    AnchorProfile ap;
    ap.t = tbar;
    ap.dn = coef(1, 0, 0);
    ap.din = coef(1, 0, 1);
    ap.dnn = 2 * coef(2, 0, 0);
    ap.dnnn = 6 * coef(3, 0, 0);
    ap.dnmm = 2 * coef(1, 2, 0);
    return ap;
}

inline double x_profile(const AnchorProfile& a, const Vec3& y, int dim, bool with_tangential) {
    const int kn = normal_index(dim);
    const double yn = y[std::size_t(kn)], ym = y[std::size_t(kn + 1)];
    double s = a.dn * yn + a.dnnn / 6 * yn * yn * yn + a.dnmm / 2 * yn * ym * ym;
    if (with_tangential && dim == 3) s += a.din * (y[0] - a.t) * yn;
    return s;
}

}  // namespace detail

/// X_{alpha,eps} norm: cubic profile at each anchor on P, weighted sup of the
/// profile error, weighted eps-seminorms of Y_i Y_j (v - P), and the remainder
/// fields of the decomposition at every node. The seminorm of v away from the
/// unit cylinder vanishes on this grid, which lies inside B_3^+.
inline HolderReport x_norm(const QuarterGridField& v, double alpha, double eps, const NormOptions& opt = {}) {
    detail::require_box(v.grid);
    if (!(alpha > 0 && alpha <= 1) || !(eps > 0 && eps <= 1)) fail_validation("alpha and eps must lie in (0,1]");
    const auto& g = v.grid;
    const int d = g.dim, kn = normal_index(d), km = kn + 1;
    HolderReport rep;
    rep.space = "X";
    rep.alpha = alpha;
    rep.eps = eps;
    for (int it = 0; it < g.nt; ++it) rep.profiles.push_back(detail::fit_x_profile(v, it));

    // decomposition table at every node against the profile of its own y''
    std::vector<std::vector<double>> grad(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) grad[std::size_t(i)] = detail::grid_partial(g, v.values, i);
    const auto ud = static_cast<std::size_t>(d);
    std::vector<std::vector<std::vector<double>>> hess(ud, std::vector<std::vector<double>>(ud));
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) hess[std::size_t(i)][std::size_t(j)] = detail::grid_partial(g, grad[std::size_t(i)], j);
    auto name = [&](int i) { return i < kn ? std::string("1") : i == kn ? std::string("n") : std::string("m"); };
    const double g1 = 3 + 2 * alpha - eps, gv = 1 + 2 * alpha - eps, gvn = 2 + 2 * alpha - eps;
    std::map<std::string, std::vector<double>> comp;
    auto put = [&](const std::string& key, std::size_t p, double val) {
        auto& vec = comp[key];
        if (vec.empty()) vec.assign(g.size(), 0.0);
        vec[p] = val;
    };
    double scale = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const auto c = g.ijk(p);
        const Vec3 y = g.coord(p);
        const AnchorProfile& a = rep.profiles[std::size_t(c[0])];
        const double yn = y[std::size_t(kn)], ym = y[std::size_t(km)];
        const double r = std::hypot(yn, ym);
        auto rem = [&](double num, double power) { return r > 0 ? num / std::pow(r, power) : 0.0; };
        const double prof = detail::x_profile(a, y, d, false);
        const double C1 = rem(v.values[p] - prof, g1);
        put("C1", p, C1);
        rep.reconstruction_residual = std::max(rep.reconstruction_residual,
                                               std::abs(prof + std::pow(r, g1) * C1 - v.values[p]));
        scale = std::max(scale, std::abs(v.values[p]));
        for (int i = 0; i < kn; ++i) put("V" + name(i), p, rem(grad[std::size_t(i)][p] - a.din * yn, gv));
        put("Vn", p, rem(grad[std::size_t(kn)][p] - a.dn - a.dnnn / 2 * yn * yn - a.dnmm / 2 * ym * ym, gvn));
        put("Vm", p, rem(grad[std::size_t(km)][p] - a.dnmm * yn * ym, gvn));
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                const double h = hess[std::size_t(i)][std::size_t(j)][p];
                double num = h, power = gv;
                if (i < kn && j < kn) power = -1 + 2 * alpha - eps;
                else if (i < kn && j == kn) num = h - a.din, power = 2 * alpha - eps;
                else if (i < kn) power = 2 * alpha - eps;
                else if (i == kn && j == kn) num = h - a.dnnn * yn;
                else if (i == kn) num = h - a.dnmm * ym;
                else num = h - a.dnmm * yn;
                put("C" + name(i) + name(j), p, rem(num, power));
            }
        if (c[1] == 0 && c[2] > 0)
            rep.remainder_on_dirichlet =
                std::max({rep.remainder_on_dirichlet, std::abs(comp["C1"][p]), std::abs(comp["Vm"][p])});
    }
    rep.components = std::move(comp);
    if (rep.reconstruction_residual > opt.tol * std::max(1.0, scale))
        fail_numerical("decomposition inconsistent: reconstruction residual above tolerance");

    const auto anchors = detail::anchor_indices(g);
    const auto popt = detail::share_pairs(opt.pairs, anchors.size() * std::size_t(d * d));
    double linf_max = 0, hold_max = 0;
    for (int it : anchors) {
        AnchorProfile a = rep.profiles[std::size_t(it)];
        const Vec3 ybar = g.coord(it, 0, 0);
        std::vector<double> w(g.size()), dist(g.size());
        double linf = 0;
        for (std::size_t p = 0; p < g.size(); ++p) {
            const Vec3 y = g.coord(p);
            w[p] = v.values[p] - detail::x_profile(a, y, d, true);
            dist[p] = quasi_metric(y, ybar, d);
            if (dist[p] > 0) linf = std::max(linf, std::abs(w[p]) / std::pow(dist[p], 3 + 2 * alpha));
        }
        double hold = 0;
        for (int j = 0; j < d; ++j) {
            const auto yj = detail::apply_grushin_field(g, w, j);
            for (int i = 0; i < d; ++i) {
                auto yy = detail::apply_grushin_field(g, yj, i);
                for (std::size_t p = 0; p < g.size(); ++p) yy[p] = dist[p] > 0 ? yy[p] / std::pow(dist[p], gv) : 0.0;
                const auto s = detail::pair_seminorm(g, yy, eps, popt);
                hold += s.value;
                rep.pairs += s.pairs;
            }
        }
        a.value = linf + hold;
        rep.anchors.push_back(a);
        linf_max = std::max(linf_max, linf);
        hold_max = std::max(hold_max, hold);
        rep.value = std::max(rep.value, a.value);
    }
    rep.terms["weighted_linf"] = linf_max;
    rep.terms["weighted_seminorm"] = hold_max;
    rep.terms["outer_seminorm"] = 0.0;
    if (g.dim == 3 && g.nt >= 16) {
        std::vector<std::pair<double, double>> s;
        for (const auto& a : rep.profiles) s.emplace_back(a.t, a.dn);
        try {
            rep.exponents["dn"] = fit_holder_exponent(s);
        } catch (const Error&) {
            // constant or affine traces have no measurable exponent
        }
    }
    return rep;
}

}  // namespace thinobs
