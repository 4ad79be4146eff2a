// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/grushin_core.hpp"
#include "thinobs/sparse.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <Eigen/SparseLU>

namespace thinobs {

/// All exponents of weighted degree exactly k, in increasing lexicographic order.
inline std::vector<Exponent> homogeneous_basis(int k, int dim) {
    require_dim(dim);
    if (k < 0) fail_validation("homogeneous degree must be nonnegative");
    const int kn = normal_index(dim), km = vertical_index(dim);
    std::vector<Exponent> out;
    const int max_t = dim == 3 ? k / 2 : 0;
    for (int bt = 0; bt <= max_t; ++bt) {
        const int rest = k - 2 * bt;
        for (int bn = 0; bn <= rest; ++bn) {
            Exponent e{0, 0, 0};
            if (dim == 3) e[0] = bt;
            e[kn] = bn;
            e[km] = rest - bn;
            out.push_back(e);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

/// In-place reduced row echelon form over the rationals; returns pivot columns.
inline std::vector<int> rref(std::vector<std::vector<Rational>>& A, int cols) {
    std::vector<int> pivots;
    int row = 0;
    const int rows = int(A.size());
    for (int c = 0; c < cols && row < rows; ++c) {
        int piv = -1;
        for (int r = row; r < rows; ++r)
            if (A[r][c] != 0) {
                piv = r;
                break;
            }
        if (piv < 0) continue;
        std::swap(A[row], A[piv]);
        const Rational lead = A[row][c];
        for (auto& x : A[row]) x /= lead;
        for (int r = 0; r < rows; ++r) {
            if (r == row || A[r][c] == 0) continue;
            const Rational f = A[r][c];
            for (int j = c; j < cols; ++j) A[r][j] -= f * A[row][j];
        }
        pivots.push_back(c);
        ++row;
    }
    return pivots;
}

/// p = 0 on {y_n = 0} and d_{n+1} p = 0 on {y_{n+1} = 0} hold term by term.
inline bool monomial_respects_bc(const Exponent& e, int dim) {
    return e[normal_index(dim)] >= 1 && e[vertical_index(dim)] != 1;
}

}  // namespace detail

/// Reduced echelon basis of the span of `polys` with monomials ordered from
/// the largest exponent down; two spans are equal iff their canonical bases are.
inline std::vector<GrushinPolynomial<Rational>> canonical_span(const std::vector<GrushinPolynomial<Rational>>& polys,
                                                              int dim) {
    std::vector<Exponent> cols;
    for (const auto& p : polys)
        for (const auto& [e, c] : p.terms) cols.push_back(e);
    std::sort(cols.begin(), cols.end(), std::greater<>());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    std::vector<std::vector<Rational>> A;
    for (const auto& p : polys) {
        std::vector<Rational> row(cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j) {
            auto it = p.terms.find(cols[j]);
            if (it != p.terms.end()) row[j] = it->second;
        }
        A.push_back(std::move(row));
    }
    const auto piv = detail::rref(A, int(cols.size()));
    std::vector<GrushinPolynomial<Rational>> out;
    for (std::size_t r = 0; r < piv.size(); ++r) {
        GrushinPolynomial<Rational> p(dim);
        for (std::size_t j = 0; j < cols.size(); ++j) p.add_term(cols[j], A[r][j]);
        out.push_back(std::move(p));
    }
    return out;
}

/// Kernel of Delta_G on homogeneous polynomials of weighted degree k, with the
/// mixed boundary conditions imposed when `with_bc`. Exact rational arithmetic.
inline std::vector<GrushinPolynomial<Rational>> harmonic_polynomials(int k, int dim, bool with_bc) {
    require_dim(dim);
    if (k < 0 || k > 8) fail_validation("harmonic_polynomials supports degrees 0..8");
    std::vector<Exponent> dom;
    for (const auto& e : homogeneous_basis(k, dim))
        if (!with_bc || detail::monomial_respects_bc(e, dim)) dom.push_back(e);
    if (dom.empty()) return {};
    std::vector<GrushinPolynomial<Rational>> images;
    std::map<Exponent, int> img_index;
    for (const auto& e : dom) {
        images.push_back(apply_grushin(GrushinPolynomial<Rational>::monomial(dim, e)));
        for (const auto& [f, c] : images.back().terms) img_index.emplace(f, 0);
    }
    int nr = 0;
    for (auto& [f, i] : img_index) i = nr++;
    const int nc = int(dom.size());
    std::vector<std::vector<Rational>> A(static_cast<std::size_t>(nr), std::vector<Rational>(static_cast<std::size_t>(nc)));
    for (int j = 0; j < nc; ++j)
        for (const auto& [f, c] : images[std::size_t(j)].terms) A[std::size_t(img_index[f])][std::size_t(j)] = c;
    const auto piv = detail::rref(A, nc);
    std::vector<char> is_pivot(std::size_t(nc), 0);
    for (int c : piv) is_pivot[std::size_t(c)] = 1;
    std::vector<GrushinPolynomial<Rational>> null;
    for (int fc = 0; fc < nc; ++fc) {
        if (is_pivot[std::size_t(fc)]) continue;
        GrushinPolynomial<Rational> p(dim);
        p.add_term(dom[std::size_t(fc)], Rational(1));
        for (std::size_t r = 0; r < piv.size(); ++r) p.add_term(dom[std::size_t(piv[r])], -A[r][std::size_t(fc)]);
        null.push_back(std::move(p));
    }
    return canonical_span(null, dim);
}

/// Largest observed d(p,q) / (d(p,s) + d(s,q)) over random triples in [-1,1]^dim.
inline double quasi_triangle_constant(int dim, int samples, std::uint64_t seed) {
    require_dim(dim);
    Rng rng(seed);
    double K = 0;
    for (int s = 0; s < samples; ++s) {
        Vec3 p{0, 0, 0}, q{0, 0, 0}, m{0, 0, 0};
        for (int i = 0; i < dim; ++i) {
            p[i] = rng.uniform(-1, 1);
            q[i] = rng.uniform(-1, 1);
            m[i] = rng.uniform(-1, 1);
        }
        // near-degenerate configurations on P give the largest ratios
        if (s % 2 == 1) {
            for (int i = normal_index(dim); i < dim; ++i) {
                p[i] *= 1e-3;
                q[i] *= 1e-3;
            }
        }
        const double den = quasi_metric(p, m, dim) + quasi_metric(m, q, dim);
        if (den > 0) K = std::max(K, quasi_metric(p, q, dim) / den);
    }
    return K;
}

// ---------------------------------------------------------------------------
// Mixed boundary value problem on the quarter region

enum class QuarterShape { box, disk };
enum class QuarterBc : std::uint8_t { interior, dirichlet, neumann, outer, exterior };

/// Uniform grid: y_n in [0,1], y_{n+1} in [-1,0], and y'' in [-1,1] for dim 3.
/// The disk shape keeps the normal cross-section r <= 1.
struct QuarterGrid {
    int dim = 3;
    int n = 33;   ///< nodes per normal axis
    int nt = 1;   ///< tangential nodes
    double h = 1.0 / 32;
    QuarterShape shape = QuarterShape::box;

    static QuarterGrid make(int dim, int n, QuarterShape shape = QuarterShape::box) {
        require_dim(dim);
        if (n < 5) fail_validation("quarter grid needs at least 5 nodes per axis");
        QuarterGrid g;
        g.dim = dim;
        g.n = n;
        g.h = 1.0 / (n - 1);
        g.nt = dim == 3 ? 2 * (n - 1) + 1 : 1;
        g.shape = shape;
        return g;
    }

    std::size_t size() const { return std::size_t(nt) * std::size_t(n) * std::size_t(n); }
    std::size_t index(int it, int a, int b) const {
        return (std::size_t(it) * std::size_t(n) + std::size_t(a)) * std::size_t(n) + std::size_t(b);
    }
    std::array<int, 3> ijk(std::size_t p) const {
        const int b = int(p % std::size_t(n));
        const int a = int((p / std::size_t(n)) % std::size_t(n));
        return {int(p / (std::size_t(n) * std::size_t(n))), a, b};
    }
    Vec3 coord(int it, int a, int b) const {
        Vec3 y{0, 0, 0};
        if (dim == 3) y[0] = -1.0 + it * h;
        y[normal_index(dim)] = a * h;
        y[vertical_index(dim)] = -b * h;
        return y;
    }
    Vec3 coord(std::size_t p) const {
        const auto c = ijk(p);
        return coord(c[0], c[1], c[2]);
    }
    QuarterBc classify(int it, int a, int b) const {
        if (a == 0) return QuarterBc::dirichlet;
        if (dim == 3 && (it == 0 || it == nt - 1)) return QuarterBc::outer;
        if (shape == QuarterShape::box) {
            if (a == n - 1 || b == n - 1) return QuarterBc::outer;
        } else {
            const long r2 = long(a) * a + long(b) * b, R2 = long(n - 1) * (n - 1);
            if (r2 > R2) return QuarterBc::exterior;
            if (r2 == R2) return QuarterBc::outer;
        }
        return b == 0 ? QuarterBc::neumann : QuarterBc::interior;
    }
};

struct QuarterGridField {
    QuarterGrid grid;
    std::vector<double> values;
    std::vector<QuarterBc> kind;
    double residual = 0;  ///< max interior row residual of the last solve
    int iterations = 0;

    /// Multilinear interpolation; points outside the grid are clamped.
    double interpolate(const Vec3& y) const {
        const auto& g = grid;
        auto locate = [&](double s, int nmax, int& i0, double& t) {
            s = std::clamp(s, 0.0, double(nmax));
            i0 = std::min(int(std::floor(s)), nmax - 1);
            t = s - i0;
        };
        int ia, ib, it = 0;
        double ta, tb, tt = 0;
        locate(y[normal_index(g.dim)] / g.h, g.n - 1, ia, ta);
        locate(-y[vertical_index(g.dim)] / g.h, g.n - 1, ib, tb);
        if (g.dim == 3) locate((y[0] + 1.0) / g.h, g.nt - 1, it, tt);
        double s = 0;
        for (int dt = 0; dt <= (g.dim == 3 ? 1 : 0); ++dt)
            for (int da = 0; da <= 1; ++da)
                for (int db = 0; db <= 1; ++db) {
                    const double w = (g.dim == 3 ? (dt ? tt : 1 - tt) : 1.0) * (da ? ta : 1 - ta) * (db ? tb : 1 - tb);
                    if (w != 0) s += w * values[g.index(it + dt, ia + da, ib + db)];
                }
        return s;
    }
};

/// Second-order stencil of Delta_G at node p of a field, with the Neumann
/// mirror on y_{n+1} = 0. Needs all neighbors to be grid nodes inside the domain.
inline double apply_grushin(const QuarterGridField& u, std::size_t p) {
    const auto& g = u.grid;
    const auto c = g.ijk(p);
    const int it = c[0], a = c[1], b = c[2];
    const bool tang_ok = g.dim == 2 || (it > 0 && it < g.nt - 1);
    if (a < 1 || a > g.n - 2 || b > g.n - 2 || !tang_ok) fail_validation("Grushin stencil out of bounds");
    auto val = [&](int t, int i, int j) {
        const std::size_t q = g.index(t, i, j);
        if (u.kind[q] == QuarterBc::exterior) fail_validation("Grushin stencil out of bounds");
        return u.values[q];
    };
    const double ih2 = 1.0 / (g.h * g.h);
    const double u0 = u.values[p];
    const double mdn = b == 0 ? val(it, a, 1) : val(it, a, b - 1);
    double s = (val(it, a + 1, b) - 2 * u0 + val(it, a - 1, b)) * ih2 + (val(it, a, b + 1) - 2 * u0 + mdn) * ih2;
    if (g.dim == 3) {
        const Vec3 y = g.coord(p);
        const double r2 = y[1] * y[1] + y[2] * y[2];
        s += r2 * (val(it + 1, a, b) - 2 * u0 + val(it - 1, a, b)) * ih2;
    }
    return s;
}

struct BvpOptions {
    double tol_r = 1e-9;           ///< relative interior residual
    std::size_t direct_limit = 60000;  ///< unknowns up to which a sparse LU is used
};

using ScalarFn = std::function<double(const Vec3&)>;

/// Solves Delta_G u = f with u = 0 on {y_n = 0}, d_{n+1} u = 0 on
/// {y_{n+1} = 0} and u = outer on the remaining boundary. On the disk shape the
/// arms that cross r = 1 use Shortley-Weller differences with the boundary
/// value taken at the crossing point.
inline QuarterGridField solve_mixed_bvp(const QuarterGrid& g, const ScalarFn& f, const ScalarFn& outer,
                                        const BvpOptions& opt = {}) {
    const std::size_t N = g.size();
    QuarterGridField u;
    u.grid = g;
    u.values.assign(N, 0.0);
    u.kind.resize(N);
    std::vector<int> unknown(N, -1);
    std::vector<std::size_t> node_of;
    for (std::size_t p = 0; p < N; ++p) {
        const auto c = g.ijk(p);
        u.kind[p] = g.classify(c[0], c[1], c[2]);
        switch (u.kind[p]) {
            case QuarterBc::interior:
            case QuarterBc::neumann:
                unknown[p] = int(node_of.size());
                node_of.push_back(p);
                break;
            case QuarterBc::dirichlet: break;
            case QuarterBc::outer:
            case QuarterBc::exterior: u.values[p] = outer(g.coord(p)); break;
        }
    }
    const int nu = int(node_of.size());
    if (nu == 0) fail_validation("quarter grid has no unknowns");

    const int kn = normal_index(g.dim), km = vertical_index(g.dim);
    const double h = g.h, ih2 = 1.0 / (h * h);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(std::size_t(nu) * 7);
    Eigen::VectorXd rhs(nu);
    for (int r = 0; r < nu; ++r) {
        const std::size_t p = node_of[std::size_t(r)];
        const auto c = g.ijk(p);
        const Vec3 y = g.coord(p);
        double diag = 0, b = f(y);
        auto couple = [&](int t, int i, int j, double coef) {
            const std::size_t q = g.index(t, i, j);
            if (unknown[q] >= 0) trip.emplace_back(r, unknown[q], coef);
            else b -= coef * u.values[q];
        };
        // one normal axis with neighbor offsets toward -/+; exterior neighbors
        // are replaced by the circle crossing
        auto normal_axis = [&](int axis) {
            const int idx = axis == kn ? c[1] : c[2];
            const double s0 = idx * h;
            auto node_at = [&](int k) { return axis == kn ? g.index(c[0], k, c[2]) : g.index(c[0], c[1], k); };
            const bool mirror = axis == km && idx == 0;
            const int lo = mirror ? 1 : idx - 1, hi = idx + 1;
            double th_hi = 1.0, val_hi = 0;
            bool hi_cut = false;
            if (hi < g.n && u.kind[node_at(hi)] == QuarterBc::exterior) {
                const double other = axis == kn ? c[2] * h : c[1] * h;
                const double cross = std::sqrt(std::max(0.0, 1.0 - other * other));
                th_hi = std::max((cross - s0) / h, 1e-8);
                Vec3 yc = y;
                yc[axis] = axis == kn ? cross : -cross;
                val_hi = outer(yc);
                hi_cut = true;
            }
            const double th_lo = 1.0;
            const double cl = 2.0 / (th_lo * (th_lo + th_hi)) * ih2;
            const double ch = 2.0 / (th_hi * (th_lo + th_hi)) * ih2;
            diag -= cl + ch;
            auto emit = [&](int k, double coef) {
                const auto q = node_at(k);
                const auto cc = g.ijk(q);
                couple(cc[0], cc[1], cc[2], coef);
            };
            emit(lo, cl);
            if (hi_cut) b -= ch * val_hi;
            else emit(hi, ch);
        };
        normal_axis(kn);
        normal_axis(km);
        if (g.dim == 3) {
            const double r2 = y[kn] * y[kn] + y[km] * y[km];
            if (r2 > 0) {
                diag -= 2 * r2 * ih2;
                couple(c[0] - 1, c[1], c[2], r2 * ih2);
                couple(c[0] + 1, c[1], c[2], r2 * ih2);
            }
        }
        trip.emplace_back(r, r, diag);
        rhs(r) = b;
    }
    detail::SpMat A(nu, nu);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd x;
    if (std::size_t(nu) <= opt.direct_limit) {
        Eigen::SparseMatrix<double> Ac = A;
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(Ac);
        if (lu.info() != Eigen::Success) fail_numerical("bvp: sparse factorization failed");
        x = lu.solve(rhs);
        u.iterations = 1;
    } else {
        x = detail::solve_sparse(A, rhs, u.iterations, "bvp");
    }
    const double scale = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
    u.residual = (A * x - rhs).lpNorm<Eigen::Infinity>() / scale;
    if (!(u.residual <= opt.tol_r)) fail_numerical("bvp: solver did not converge");
    for (int r = 0; r < nu; ++r) u.values[node_of[std::size_t(r)]] = x(r);
    return u;
}

// ---------------------------------------------------------------------------
// Campanato approximation on cylinders

/// BC-respecting polynomials of weighted degree <= max_degree: the Grushin
/// harmonic ones plus the profile monomials y_n, y_i y_n, y_n^3, y_n y_{n+1}^2.
inline std::vector<GrushinPolynomial<Rational>> campanato_basis(int dim, int max_degree) {
    std::vector<GrushinPolynomial<Rational>> all;
    for (int k = 0; k <= max_degree; ++k)
        for (auto& p : harmonic_polynomials(k, dim, true)) all.push_back(std::move(p));
    const int kn = normal_index(dim), km = vertical_index(dim);
    std::vector<Exponent> prof;
    Exponent e{0, 0, 0};
    e[kn] = 1;
    prof.push_back(e);
    for (int i = 0; i < kn; ++i) {
        Exponent t = e;
        t[i] = 1;
        prof.push_back(t);
    }
    Exponent c3{0, 0, 0};
    c3[kn] = 3;
    prof.push_back(c3);
    Exponent c12{0, 0, 0};
    c12[kn] = 1;
    c12[km] = 2;
    prof.push_back(c12);
    for (const auto& m : prof)
        if (GrushinPolynomial<Rational>::weighted_degree(m, dim) <= max_degree)
            all.push_back(GrushinPolynomial<Rational>::monomial(dim, m));
    return canonical_span(all, dim);
}

struct CampanatoRow {
    double r = 0;
    double mean_sq = 0;  ///< (1/|B_r^+|) int |u - p|^2
    double max_abs = 0;  ///< max |u - p| over quadrature nodes
    double u_mean_sq = 0;
};

struct CampanatoReport {
    Vec3 y0{0, 0, 0};
    int dim = 3;
    int max_degree = 3;
    std::vector<GrushinPolynomial<Rational>> basis;
    std::vector<CampanatoRow> rows;
    std::vector<std::vector<double>> coefficients;  ///< per radius, in basis order
    double slope = kNaN;  ///< log-log slope of mean_sq against r
    bool exact = false;   ///< every mean_sq at round-off level
};

namespace detail {

constexpr int kCampanatoGauss = 20;

inline std::vector<std::pair<double, double>> gauss_nodes(double a, double b) {
    using G = boost::math::quadrature::gauss<double, kCampanatoGauss>;
    std::vector<std::pair<double, double>> out;
    const auto& x = G::abscissa();
    const auto& w = G::weights();
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0) {
            out.emplace_back(mid, half * w[i]);
            continue;
        }
        out.emplace_back(mid - half * x[i], half * w[i]);
        out.emplace_back(mid + half * x[i], half * w[i]);
    }
    return out;
}

/// Weighted least squares of values against the basis evaluated at
/// offsets; fills the row statistics and returns the coefficients.
inline std::vector<double> campanato_fit(const std::vector<GrushinPolynomial<double>>& basis,
                                         const std::vector<Vec3>& offsets, const std::vector<double>& weights,
                                         const std::vector<double>& values, CampanatoRow& row) {
    const int nq = int(offsets.size()), nb = int(basis.size());
    Eigen::MatrixXd A(nq, nb);
    Eigen::VectorXd b(nq), sw(nq);
    double vol = 0;
    for (int i = 0; i < nq; ++i) {
        sw(i) = std::sqrt(weights[std::size_t(i)]);
        vol += weights[std::size_t(i)];
        b(i) = sw(i) * values[std::size_t(i)];
        for (int j = 0; j < nb; ++j) A(i, j) = sw(i) * basis[std::size_t(j)](offsets[std::size_t(i)]);
    }
    // column equilibration: basis members differ by powers of r
    Eigen::VectorXd cn = Eigen::VectorXd::Ones(nb);
    for (int j = 0; j < nb; ++j) {
        const double s = A.col(j).norm();
        if (s > 0) cn(j) = s;
    }
    Eigen::VectorXd c = Eigen::VectorXd::Zero(nb);
    if (nb > 0) c = (A * cn.cwiseInverse().asDiagonal()).colPivHouseholderQr().solve(b).cwiseQuotient(cn);
    const Eigen::VectorXd res = b - A * c;
    row.mean_sq = row.u_mean_sq = row.max_abs = 0;
    for (int i = 0; i < nq; ++i) {
        row.mean_sq += res(i) * res(i);
        row.u_mean_sq += b(i) * b(i);
        if (sw(i) > 0) row.max_abs = std::max(row.max_abs, std::abs(res(i) / sw(i)));
    }
    row.mean_sq /= vol;
    row.u_mean_sq /= vol;
    return {c.data(), c.data() + c.size()};
}

inline void finish_campanato(CampanatoReport& rep) {
    rep.exact = true;
    for (const auto& row : rep.rows)
        if (row.mean_sq > 1e-24 * std::max(row.u_mean_sq, 1e-300)) rep.exact = false;
    if (rep.exact) {
        rep.slope = std::numeric_limits<double>::infinity();
        return;
    }
    std::vector<double> r, v;
    for (const auto& row : rep.rows) {
        r.push_back(row.r);
        v.push_back(row.mean_sq);
    }
    rep.slope = loglog_slope(r, v);
}

inline CampanatoReport campanato_setup(int dim, const Vec3& y0, std::vector<double>& rs, int max_degree,
                                       std::vector<GrushinPolynomial<double>>& basis) {
    require_dim(dim);
    const int kn = normal_index(dim), km = vertical_index(dim);
    if (y0[kn] != 0 || y0[km] != 0) fail_validation("campanato anchor must lie on P");
    std::sort(rs.begin(), rs.end(), std::greater<>());
    if (rs.size() < 3) fail_numerical("fewer than 3 radii resolvable");
    CampanatoReport rep;
    rep.y0 = y0;
    rep.dim = dim;
    rep.max_degree = max_degree;
    rep.basis = campanato_basis(dim, max_degree);
    for (const auto& p : rep.basis) basis.push_back(p.to_double_poly());
    return rep;
}

}  // namespace detail

/// Best L^2(B_r^+(y0)) approximation of u by `campanato_basis` on the cylinders
/// {|y'' - y0''| <= r^2, y_n^2 + y_{n+1}^2 <= r^2} intersected with the quarter.
/// Integrals use tensor Gauss-Legendre rules in (y'', rho, theta).
inline CampanatoReport campanato_decay(const ScalarFn& u, int dim, const Vec3& y0, const std::vector<double>& radii,
                                       int max_degree = 3) {
    std::vector<double> rs;
    for (double r : radii)
        if (r > 0 && std::isfinite(r)) rs.push_back(r);
    std::vector<GrushinPolynomial<double>> basis;
    CampanatoReport rep = detail::campanato_setup(dim, y0, rs, max_degree, basis);
    const int kn = normal_index(dim), km = vertical_index(dim);
    for (double r : rs) {
        std::vector<Vec3> off;
        std::vector<double> wts, vals;
        const auto rho = detail::gauss_nodes(0, r);
        const auto th = detail::gauss_nodes(-0.5 * M_PI, 0);
        const auto tt =
            dim == 3 ? detail::gauss_nodes(-r * r, r * r) : std::vector<std::pair<double, double>>{{0.0, 1.0}};
        for (const auto& [t, wt] : tt)
            for (const auto& [rr, wr] : rho)
                for (const auto& [a, wa] : th) {
                    Vec3 y{0, 0, 0};
                    if (dim == 3) y[0] = t;
                    y[kn] = rr * std::cos(a);
                    y[km] = rr * std::sin(a);
                    off.push_back(y);
                    wts.push_back(wt * wr * wa * rr);
                    Vec3 ya = y;
                    if (dim == 3) ya[0] += y0[0];
                    vals.push_back(u(ya));
                }
        CampanatoRow row;
        row.r = r;
        rep.coefficients.push_back(detail::campanato_fit(basis, off, wts, vals, row));
        rep.rows.push_back(row);
    }
    detail::finish_campanato(rep);
    return rep;
}

/// Grid-field variant: means over the grid nodes inside each cylinder. Radii
/// whose cylinder leaves the grid, or holds too few nodes to determine every
/// basis coefficient, are dropped.
inline CampanatoReport campanato_decay(const QuarterGridField& u, const Vec3& y0, const std::vector<double>& radii,
                                       int max_degree = 3) {
    const auto& g = u.grid;
    const int kn = normal_index(g.dim), km = vertical_index(g.dim);
    const std::size_t nb = campanato_basis(g.dim, max_degree).size();
    struct Sample {
        double r;
        std::vector<Vec3> off;
        std::vector<double> vals;
    };
    std::vector<Sample> keep;
    std::vector<double> rs;
    for (double r : radii) {
        if (!(r > 0) || r > 1) continue;
        if (g.dim == 3 && std::abs(y0[0]) + r * r > 1 + 1e-12) continue;
        Sample s{r, {}, {}};
        std::vector<double> tvals;
        for (std::size_t p = 0; p < g.size(); ++p) {
            if (u.kind[p] == QuarterBc::exterior) continue;
            Vec3 y = g.coord(p);
            if (g.dim == 3) {
                if (std::abs(y[0] - y0[0]) > r * r * (1 + 1e-12)) continue;
                y[0] -= y0[0];
            }
            if (y[kn] * y[kn] + y[km] * y[km] > r * r * (1 + 1e-12)) continue;
            s.off.push_back(y);
            s.vals.push_back(u.values[p]);
            if (g.dim == 3) tvals.push_back(y[0]);
        }
        std::sort(tvals.begin(), tvals.end());
        const bool tang_ok = g.dim == 2 || std::unique(tvals.begin(), tvals.end()) - tvals.begin() >= 3;
        if (s.off.size() < 3 * nb || !tang_ok) continue;
        rs.push_back(r);
        keep.push_back(std::move(s));
    }
    std::vector<GrushinPolynomial<double>> basis;
    CampanatoReport rep = detail::campanato_setup(g.dim, y0, rs, max_degree, basis);
    std::sort(keep.begin(), keep.end(), [](const Sample& a, const Sample& b) { return a.r > b.r; });
    for (const auto& s : keep) {
        CampanatoRow row;
        row.r = s.r;
        const std::vector<double> wts(s.off.size(), 1.0);
        rep.coefficients.push_back(detail::campanato_fit(basis, s.off, wts, s.vals, row));
        rep.rows.push_back(row);
    }
    detail::finish_campanato(rep);
    return rep;
}

}  // namespace thinobs
