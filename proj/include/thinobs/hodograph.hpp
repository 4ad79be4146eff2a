// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/free_boundary.hpp"
#include "thinobs/grushin_core.hpp"

#include <numbers>

namespace thinobs {

/// Value, gradient and Hessian of a Legendre function at an image point y,
/// together with the preimage x = (y'', -d_n v, -d_{n+1} v).
struct LegendreJet {
    Vec3 y{0, 0, 0};
    Vec3 x{0, 0, 0};
    double v = kNaN;
    Vec3 grad{0, 0, 0};
    Mat3 hess = Mat3::Zero();
    bool ok = false;
};

// ---------------------------------------------------------------------------
// The fully nonlinear equation for v.

namespace detail {

inline double det3(const Mat3& M, int i, int j, int kn, int km) {
    Mat3 B;
    B << M(i, j), M(i, kn), M(i, km), M(kn, j), M(kn, kn), M(kn, km), M(km, j), M(km, kn), M(km, km);
    return B.determinant();
}

}  // namespace detail

/// det of the normal 2x2 block of D^2 v.
inline double legendre_J(const Mat3& M, int dim) {
    const int kn = normal_index(dim), km = vertical_index(dim);
    return M(kn, kn) * M(km, km) - M(kn, km) * M(kn, km);
}

/// Second-order part of F for frozen coefficients a: sum_ij a^{ij} G^{ij}(M).
inline double legendre_F_core(const Mat3& a, const Mat3& M, int dim) {
    const int kn = normal_index(dim), km = vertical_index(dim);
    double F = 0;
    for (int i = 0; i < kn; ++i)
        for (int j = 0; j < kn; ++j) F -= a(i, j) * detail::det3(M, i, j, kn, km);
    for (int i = 0; i < kn; ++i) {
        F += 2 * a(i, kn) * (M(i, kn) * M(km, km) - M(i, km) * M(kn, km));
        F += 2 * a(i, km) * (M(i, km) * M(kn, kn) - M(i, kn) * M(kn, km));
    }
    F += a(kn, kn) * M(km, km) + a(km, km) * M(kn, kn) - 2 * a(kn, km) * M(kn, km);
    return F;
}

enum class ResidualMode { homogeneous, inhomogeneous };

/// F(D^2 v, Dv, y) = -J(v) (a^{ij} d_ij w + b^j d_j w) written in Legendre
/// variables, with coefficients composed at x = (y'', -d_n v, -d_{n+1} v).
/// The inhomogeneous mode subtracts the right side: F + J f(x).
inline double legendre_F(const MetricField& metric, const Mat3& M, const Vec3& p, const Vec3& y,
                         ResidualMode mode = ResidualMode::homogeneous,
                         const std::function<double(const Vec3&)>& f = {}) {
    const int d = metric.dim, kn = normal_index(d), km = vertical_index(d);
    Vec3 x = y;
    x[kn] = -p[kn];
    x[km] = -p[km];
    const Mat3 a = metric.eval(x);
    const Vec3 b = metric_divergence(metric, x);
    const double J = legendre_J(M, d);
    double lower = b[kn] * y[kn] + b[km] * y[km];
    for (int t = 0; t < kn; ++t) lower += b[t] * p[t];
    double F = legendre_F_core(a, M, d) - J * lower;
    if (mode == ResidualMode::inhomogeneous && f) F += J * f(x);
    return F;
}

inline double legendre_F(const MetricField& metric, const LegendreJet& j,
                         ResidualMode mode = ResidualMode::homogeneous,
                         const std::function<double(const Vec3&)>& f = {}) {
    return legendre_F(metric, j.hess, j.grad, j.y, mode, f);
}

/// Coefficients of the linearized operator: second(k,l) multiplies d_kl for
/// k <= l (upper triangle), first(k) multiplies d_k.
struct LinearCoefficients {
    Mat3 second = Mat3::Zero();
    Vec3 first{0, 0, 0};

    double apply(const Mat3& H, const Vec3& g, int dim) const {
        double s = 0;
        for (int k = 0; k < dim; ++k) {
            s += first[k] * g[k];
            for (int l = k; l < dim; ++l) s += second(k, l) * H(k, l);
        }
        return s;
    }
};

/// Central differences of F in the Hessian and gradient slots at a jet.
inline LinearCoefficients linearize_F(const MetricField& metric, const LegendreJet& j, double eps = 1e-6,
                                      ResidualMode mode = ResidualMode::homogeneous,
                                      const std::function<double(const Vec3&)>& f = {}) {
    const int d = metric.dim;
    const double sM = eps * std::max(1.0, j.hess.topLeftCorner(d, d).cwiseAbs().maxCoeff());
    const double sp = eps * std::max(1.0, norm(j.grad, d));
    if (sM < 1e-300 || sp < 1e-300) fail_numerical("linearization step size underflow");
    LinearCoefficients c;
    for (int k = 0; k < d; ++k)
        for (int l = k; l < d; ++l) {
            Mat3 E = Mat3::Zero();
            E(k, l) = E(l, k) = 1;
            const double fp = legendre_F(metric, j.hess + sM * E, j.grad, j.y, mode, f);
            const double fm = legendre_F(metric, j.hess - sM * E, j.grad, j.y, mode, f);
            c.second(k, l) = (fp - fm) / (2 * sM);
        }
    for (int k = 0; k < d; ++k) {
        Vec3 gp = j.grad, gm = j.grad;
        gp[k] += sp;
        gm[k] -= sp;
        c.first[k] = (legendre_F(metric, j.hess, gp, j.y, mode, f) - legendre_F(metric, j.hess, gm, j.y, mode, f)) /
                     (2 * sp);
    }
    return c;
}

/// (F(v + eps phi) - F(v - eps phi)) / (2 eps) at one point.
inline double gateaux_derivative(const MetricField& metric, const LegendreJet& j, const Vec3& phi_grad,
                                 const Mat3& phi_hess, double eps = 1e-5) {
    Vec3 gp = j.grad, gm = j.grad;
    for (int k = 0; k < 3; ++k) {
        gp[k] += eps * phi_grad[k];
        gm[k] -= eps * phi_grad[k];
    }
    const double fp = legendre_F(metric, j.hess + eps * phi_hess, gp, j.y);
    const double fm = legendre_F(metric, j.hess - eps * phi_hess, gm, j.y);
    return (fp - fm) / (2 * eps);
}

/// Jet of a polynomial at y.
inline LegendreJet polynomial_jet(const GrushinPolynomial<double>& p, const Vec3& y) {
    const int d = p.dim;
    LegendreJet j;
    j.y = y;
    j.v = p(y);
    j.grad = p.gradient(y);
    j.hess = p.hessian(y);
    j.x = y;
    j.x[normal_index(d)] = -j.grad[normal_index(d)];
    j.x[vertical_index(d)] = -j.grad[vertical_index(d)];
    j.ok = true;
    return j;
}

// ---------------------------------------------------------------------------
// Leading-order profiles at P.

/// Cubic-plus-linear Legendre profile of the rotated model solution at a
/// free boundary point with graph value g_y0 = g(y0'').
inline GrushinPolynomial<double> blowup_legendre(const AsymptoticProfile& prof, double g_y0, const Vec3& y0) {
    const int d = prof.dim, kn = normal_index(d), km = vertical_index(d);
    const double nun = prof.nu[kn];
    if (!(nun > 0)) fail_numerical("graph direction degenerate: normal has no positive x_n component");
    if (!(prof.a > 0)) fail_numerical("profile amplitude must be positive");
    using P = GrushinPolynomial<double>;
    const double c = prof.nu_A_nu() / nun;
    const double lead = -4.0 / (27.0 * prof.a * prof.a);
    Exponent en{0, 0, 0}, enmm{0, 0, 0};
    en[kn] = 3;
    enmm[kn] = 1;
    enmm[km] = 2;
    P v = P::monomial(d, en, lead * c * c * c);
    v += P::monomial(d, enmm, -3.0 * lead * c * prof.A(km, km));
    Exponent lin{0, 0, 0};
    lin[kn] = 1;
    double lin_coef = -g_y0;
    for (int t = 0; t < kn; ++t) {
        const double s = prof.nu[t] / nun;
        Exponent et{0, 0, 0};
        et[t] = 1;
        et[kn] = 1;
        v += P::monomial(d, et, s);
        lin_coef -= s * y0[t];
    }
    v += P::monomial(d, lin, lin_coef);
    return v;
}

/// v_{y0} fitted from data: d_n v(y0) y_n + B.(y''-y0'') y_n + A0/6 y_n^3 + A1/2 y_n y_{n+1}^2.
struct CubicProfile {
    int dim = 3;
    Vec3 y0{0, 0, 0};
    double dn = 0, A0 = 0, A1 = 0;
    Vec3 B{0, 0, 0};
    double c_nn = 0;        ///< coefficient of y_n^2, zero for an exact Legendre function
    double residual = 0;    ///< relative RMS misfit of the full fit
    std::size_t samples = 0;

    GrushinPolynomial<double> poly() const {
        using P = GrushinPolynomial<double>;
        const int kn = normal_index(dim), km = vertical_index(dim);
        P v(dim);
        Exponent e{0, 0, 0};
        e[kn] = 1;
        double lin = dn;
        for (int t = 0; t < kn; ++t) {
            Exponent et{0, 0, 0};
            et[t] = 1;
            et[kn] = 1;
            v += P::monomial(dim, et, B[t]);
            lin -= B[t] * y0[t];
        }
        v += P::monomial(dim, e, lin);
        e[kn] = 3;
        v += P::monomial(dim, e, A0 / 6);
        e[kn] = 1;
        e[km] = 2;
        v += P::monomial(dim, e, A1 / 2);
        return v;
    }
};

namespace detail {

/// Normal-variable exponents (b_n, b_{n+1}) of weighted degree k with the
/// Dirichlet and Neumann structure: b_n >= 1 and b_{n+1} != 1.
inline std::vector<std::pair<int, int>> profile_normal_monomials(int k) {
    std::vector<std::pair<int, int>> out;
    for (int bn = 1; bn <= k; ++bn) {
        const int bm = k - bn;
        if (bm == 1) continue;
        out.emplace_back(bn, bm);
    }
    return out;
}

/// (tangential power, b_n, b_{n+1}) of the profile basis up to weighted degree 5.
inline std::vector<std::array<int, 3>> profile_basis(int dim) {
    std::vector<std::array<int, 3>> basis;
    const int max_t = dim == 3 ? 2 : 0;
    for (int a = 0; a <= max_t; ++a)
        for (int k = 1; 2 * a + k <= 5; ++k)
            for (auto [bn, bm] : profile_normal_monomials(k)) basis.push_back({a, bn, bm});
    return basis;
}

}  // namespace detail

/// Least-squares fit of v near y0 in P by the profile basis y_n^{b_n}
/// y_{n+1}^{b_{n+1}} (y''-y0'')^a with b_n >= 1, b_{n+1} != 1 and weighted
/// degree <= 5, using values and gradients of the data jets with
/// |(y_n, y_{n+1})| <= R and |y'' - y0''| <= R_t. Variables are scaled by R
/// and R_t so all basis columns are O(1).
inline CubicProfile fit_cubic_profile(const std::vector<LegendreJet>& data, const Vec3& y0, int dim, double R,
                                      double R_t, double max_residual = 0.05) {
    const int kn = normal_index(dim), km = vertical_index(dim);
    const auto basis = detail::profile_basis(dim);
    const int nb = int(basis.size());
    const int rows_per = dim + 1;
    std::vector<const LegendreJet*> use;
    for (const auto& j : data) {
        if (!j.ok) continue;
        if (std::hypot(j.y[kn], j.y[km]) > R) continue;
        if (dim == 3 && std::abs(j.y[0] - y0[0]) > R_t) continue;
        use.push_back(&j);
    }
    if (int(use.size()) < 3 * nb) fail_numerical("cubic-profile fit: too few samples near P");
    Eigen::MatrixXd A(use.size() * rows_per, nb);
    Eigen::VectorXd rhs(use.size() * rows_per);
    A.setZero();
    for (std::size_t s = 0; s < use.size(); ++s) {
        const LegendreJet& j = *use[s];
        const double T = dim == 3 ? (j.y[0] - y0[0]) / R_t : 0.0;
        const double yn = j.y[kn] / R, ym = j.y[km] / R;
        const std::size_t r0 = s * rows_per;
        for (int c = 0; c < nb; ++c) {
            const auto [a, bn, bm] = basis[std::size_t(c)];
            const double pt = std::pow(T, a), pn = std::pow(yn, bn), pm = std::pow(ym, bm);
            A(r0, c) = pt * pn * pm;
            // derivatives in scaled variables: d/dyn_s, d/dym_s, d/dT
            A(r0 + 1, c) = pt * (bn > 0 ? bn * std::pow(yn, bn - 1) : 0.0) * pm;
            A(r0 + 2, c) = pt * pn * (bm > 0 ? bm * std::pow(ym, bm - 1) : 0.0);
            if (dim == 3) A(r0 + 3, c) = (a > 0 ? a * std::pow(T, a - 1) : 0.0) * pn * pm;
        }
        // values scaled by R^3, gradients by chain rule in the scaled variables
        const double sv = 1.0 / (R * R * R);
        rhs(r0) = j.v * sv;
        rhs(r0 + 1) = j.grad[kn] * R * sv;
        rhs(r0 + 2) = j.grad[km] * R * sv;
        if (dim == 3) rhs(r0 + 3) = j.grad[0] * R_t * sv;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < nb) fail_numerical("cubic-profile fit: rank deficient basis");
    const Eigen::VectorXd c = qr.solve(rhs);
    const double res = (A * c - rhs).norm() / std::max(rhs.norm(), 1e-300);
    CubicProfile prof;
    prof.dim = dim;
    prof.y0 = y0;
    prof.residual = res;
    prof.samples = use.size();
    // undo scaling: coefficient of T^a yn^bn ym^bm maps to R^3 / (R_t^a R^{bn+bm})
    for (int k = 0; k < nb; ++k) {
        const auto [a, bn, bm] = basis[std::size_t(k)];
        const double coef = c(k) * std::pow(R, 3 - bn - bm) / std::pow(dim == 3 ? R_t : 1.0, a);
        if (a == 0 && bn == 1 && bm == 0) prof.dn = coef;
        if (a == 0 && bn == 2 && bm == 0) prof.c_nn = coef;
        if (a == 0 && bn == 3 && bm == 0) prof.A0 = 6 * coef;
        if (a == 0 && bn == 1 && bm == 2) prof.A1 = 2 * coef;
        if (a == 1 && bn == 1 && bm == 0) prof.B[0] = coef;
    }
    if (res > max_residual) fail_numerical("cubic-profile fit residual too large");
    return prof;
}

// ---------------------------------------------------------------------------
// Expansion around a point of P.

struct ExpansionReport {
    Vec3 y0{0, 0, 0};
    CubicProfile profile;
    Mat3 a_frozen = Mat3::Identity();
    double c0 = 0;      ///< P_{y0}(y) = c0 y_n
    double c0_m = 0;    ///< y_{n+1} coefficient, zero when a^{i,n+1} vanishes
    std::vector<ShellStat> shells;
    double exponent = kNaN;
    double eta0 = 3;
    bool exact = false;
};

namespace detail {

/// Derivative of s -> F_core(a, M0 + s D) at 0 by the five-point rule, exact
/// because F_core is a cubic polynomial in the Hessian entries.
inline double core_directional(const Mat3& a, const Mat3& M0, const Mat3& D, int dim) {
    auto f = [&](double s) { return legendre_F_core(a, M0 + s * D, dim); };
    return (8 * (f(1) - f(-1)) - (f(2) - f(-2))) / 12.0;
}

}  // namespace detail

/// E_{y0} = F(v) - L_{y0} v - P_{y0} at the given jets, shell-binned by the
/// quasi-metric distance to y0.
inline ExpansionReport expand_at_point(const std::vector<LegendreJet>& jets, const CubicProfile& prof,
                                       const MetricField& metric, double r_min, double r_max, double alpha = 1.0) {
    const int d = prof.dim, kn = normal_index(d);
    ExpansionReport rep;
    rep.y0 = prof.y0;
    rep.profile = prof;
    rep.eta0 = std::min(1 + 4 * alpha, 3.0);
    Vec3 x0 = prof.y0;
    x0[kn] = -prof.dn;
    x0[vertical_index(d)] = 0;
    rep.a_frozen = metric.eval(x0);
    const auto vy0 = prof.poly();
    auto P_at = [&](const Vec3& y) {
        const Mat3 M0 = vy0.hessian(y);
        return legendre_F_core(rep.a_frozen, M0, d) - detail::core_directional(rep.a_frozen, M0, M0, d);
    };
    {
        Vec3 e = prof.y0;
        e[kn] += 1;
        rep.c0 = P_at(e) - P_at(prof.y0);
        Vec3 em = prof.y0;
        em[vertical_index(d)] -= 1;
        rep.c0_m = -(P_at(em) - P_at(prof.y0));
    }
    std::vector<double> rad, err;
    double scale = 0;
    for (const auto& j : jets) {
        if (!j.ok) continue;
        const double r = quasi_metric(j.y, prof.y0, d);
        const Mat3 M0 = vy0.hessian(j.y);
        const double Lv = detail::core_directional(rep.a_frozen, M0, j.hess, d);
        const double E = legendre_F(metric, j) - Lv - P_at(j.y);
        rad.push_back(r);
        err.push_back(E);
        scale = std::max(scale, std::abs(Lv));
    }
    rep.shells = dyadic_shells(rad, err, r_min, r_max);
    if (rep.shells.size() < 2) fail_numerical("insufficient shells for expansion decay");
    double emax = 0;
    for (const auto& s : rep.shells) emax = std::max(emax, s.max_err);
    rep.exact = emax <= 1e-12 * std::max(1.0, scale);
    rep.exponent = rep.exact ? std::numeric_limits<double>::infinity() : shell_slope(rep.shells);
    return rep;
}

// ---------------------------------------------------------------------------
// Legendre function of a closed-form field.

/// Legendre transform of an analytic field, evaluated pointwise by inverting
/// y = (x'', d_n w, d_{n+1} w) with Newton's method in the normal variables.
struct LegendreOracle {
    int dim = 3;
    AnalyticField w;
    std::function<double(double)> graph;  ///< free boundary x_n = g(x''), used for the initial guess

    LegendreJet evaluate(const Vec3& y) const {
        const int kn = normal_index(dim), km = vertical_index(dim);
        LegendreJet j;
        j.y = y;
        // model inverse: x_n - g + i x_{n+1} = ((y_n - i y_{n+1}) / 1.5)^2
        const std::complex<double> z = std::pow(std::complex<double>(y[kn], -y[km]) / 1.5, 2);
        Vec3 x = y;
        x[kn] = (graph ? graph(dim == 3 ? y[0] : 0.0) : 0.0) + z.real();
        x[km] = std::max(z.imag(), 0.0);
        auto residual = [&](const Vec3& xx) {
            const Vec3 g = w.gradient(xx);
            return Eigen::Vector2d(g[kn] - y[kn], g[km] - y[km]);
        };
        Eigen::Vector2d G = residual(x);
        const double tol = 1e-13 * std::max(1.0, std::hypot(y[kn], y[km]));
        for (int it = 0; it < 100 && G.norm() > tol; ++it) {
            const Mat3 H = w.hessian(x);
            Eigen::Matrix2d Jn;
            Jn << H(kn, kn), H(kn, km), H(km, kn), H(km, km);
            if (!std::isfinite(Jn.determinant()) || std::abs(Jn.determinant()) < 1e-300) return j;
            const Eigen::Vector2d step = Jn.inverse() * G;
            double lam = 1;
            bool accepted = false;
            for (int ls = 0; ls < 40; ++ls, lam *= 0.5) {
                Vec3 xt = x;
                xt[kn] -= lam * step(0);
                xt[km] -= lam * step(1);
                if (xt[km] < 0) continue;
                const Eigen::Vector2d Gt = residual(xt);
                if (Gt.norm() < G.norm()) {
                    x = xt;
                    G = Gt;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;
        }
        if (!(G.norm() <= 1e-9 * std::max(1.0, std::hypot(y[kn], y[km])))) return j;
        const Vec3 gw = w.gradient(x);
        const Mat3 H = w.hessian(x);
        j.x = x;
        j.v = w.value(x) - x[kn] * y[kn] - x[km] * y[km];
        j.grad = {0, 0, 0};
        for (int t = 0; t < kn; ++t) j.grad[t] = gw[t];
        j.grad[kn] = -x[kn];
        j.grad[km] = -x[km];
        // D^2 v from D^2 w: v_NN = -H_NN^{-1}, v_Nt = H_NN^{-1} H_Nt, v_tt = H_tt - H_tN H_NN^{-1} H_Nt
        Eigen::Matrix2d Hnn;
        Hnn << H(kn, kn), H(kn, km), H(km, kn), H(km, km);
        const Eigen::Matrix2d Hi = Hnn.inverse();
        j.hess.setZero();
        j.hess(kn, kn) = -Hi(0, 0);
        j.hess(kn, km) = j.hess(km, kn) = -Hi(0, 1);
        j.hess(km, km) = -Hi(1, 1);
        for (int t = 0; t < kn; ++t) {
            const Eigen::Vector2d Hnt(H(kn, t), H(km, t));
            const Eigen::Vector2d vn = Hi * Hnt;
            j.hess(kn, t) = j.hess(t, kn) = vn(0);
            j.hess(km, t) = j.hess(t, km) = vn(1);
            for (int s = 0; s < kn; ++s) {
                const Eigen::Vector2d Hns(H(kn, s), H(km, s));
                j.hess(t, s) = H(t, s) - Hnt.dot(Hi * Hns);
            }
        }
        j.ok = std::isfinite(j.v) && j.hess.allFinite();
        return j;
    }
};

/// Sampling radii for expansions of a closed-form Legendre function.
struct OracleExpansionOptions {
    double fit_radius = 0.2;       ///< normal radius of the profile fit data
    double fit_tangential = 0.04;  ///< tangential half-width of the fit data
    double r_max = 0.4;            ///< outer shell radius
    int levels = 6;                ///< dyadic shells below r_max
};

/// Profile fit and expansion error at y0 = (t0, 0, 0) for a closed-form
/// Legendre function. Fit data sit on a polar lattice; error samples fill
/// dyadic shells with tangential offsets scaled like r^2.
inline ExpansionReport expand_oracle_at(const LegendreOracle& L, const MetricField& metric, double t0,
                                        const OracleExpansionOptions& opt = {}) {
    const int d = L.dim, kn = normal_index(d), km = vertical_index(d);
    Vec3 y0{0, 0, 0};
    if (d == 3) y0[0] = t0;
    const int nt = d == 3 ? 4 : 0;
    std::vector<LegendreJet> fit;
    for (int it = -nt; it <= nt; ++it)
        for (int ir = 1; ir <= 10; ++ir)
            for (int ia = 0; ia <= 8; ++ia) {
                const double r = opt.fit_radius * ir / 10.0, th = -0.5 * std::numbers::pi * ia / 8.0;
                Vec3 y = y0;
                if (d == 3) y[0] += opt.fit_tangential * it / 4.0;
                y[kn] = r * std::cos(th);
                y[km] = r * std::sin(th);
                auto j = L.evaluate(y);
                if (j.ok) fit.push_back(j);
            }
    const auto prof = fit_cubic_profile(fit, y0, d, opt.fit_radius, opt.fit_tangential, 0.05);
    std::vector<LegendreJet> pts;
    for (int k = 0; k < opt.levels; ++k) {
        const double rr = opt.r_max / std::pow(2.0, k);
        for (int ia = 1; ia < 8; ++ia)
            for (double fr : {0.55, 0.75, 0.95})
                for (int it = -2; it <= 2; ++it) {
                    if (d == 2 && it != 0) continue;
                    const double r = rr * fr, th = -0.5 * std::numbers::pi * ia / 8.0;
                    Vec3 y = y0;
                    if (d == 3) y[0] += it * 0.5 * r * r;
                    y[kn] = r * std::cos(th);
                    y[km] = r * std::sin(th);
                    auto j = L.evaluate(y);
                    if (j.ok) pts.push_back(j);
                }
    }
    return expand_at_point(pts, prof, metric, opt.r_max / std::pow(2.0, opt.levels), opt.r_max);
}

// ---------------------------------------------------------------------------
// Hodograph map of nodal data.

struct HodographOptions {
    double tol_map = 1e-5;
    int collar_cells = 1;        ///< classification skips nodes this close to the free boundary
    int trusted_cells = 2;       ///< Jacobian and round-trip window starts this far from it
    double trusted_radius = 0.5; ///< and ends here
    std::size_t max_roundtrip = 2000;
    bool strict = true;          ///< throw on Jacobian sign or round-trip failure
};

enum class SampleRegion : std::uint8_t { interior, contact, positivity };

struct HodographSample {
    std::size_t node = 0;
    Vec3 x{0, 0, 0};
    Vec3 y{0, 0, 0};
    Vec3 grad_w{0, 0, 0};
    double w = 0;
    double v = 0;
    double det = kNaN;  ///< det DT = w_nn w_mm - w_nm^2, NaN where no Hessian is available
    Eigen::Matrix2d dxdy = Eigen::Matrix2d::Constant(kNaN);  ///< inverse of the normal Hessian block
    double dist_fb = 0;
    SampleRegion region = SampleRegion::interior;
};

struct QuadrantReport {
    std::size_t checked = 0, misclassified = 0, collar_skipped = 0, frame_skipped = 0;
    std::size_t jac_checked = 0, jac_nonnegative = 0;
    double det_dist_min = kNaN, det_dist_max = kNaN;  ///< range of -det DT * dist(x, Gamma)
    double fb_image_max = 0;                          ///< max |(y_n, y_{n+1})| at fb points
    std::size_t roundtrip_checked = 0;
    double roundtrip_max = 0;
};

struct HodographMap {
    HalfGrid grid;
    int dim = 3;
    double tol_map = 1e-5;
    std::vector<HodographSample> samples;
    std::vector<Vec3> grad;  ///< nodal gradient of w
    std::vector<long> sample_of;
    QuadrantReport report;

    /// T(x) with the gradient interpolated multilinearly.
    Vec3 forward(const Vec3& x) const {
        const int kn = normal_index(dim), km = vertical_index(dim);
        Vec3 y = x;
        y[kn] = interpolate_component(x, kn);
        y[km] = interpolate_component(x, km);
        return y;
    }

    double interpolate_component(const Vec3& x, int k) const {
        std::array<int, 3> base{0, 0, 0};
        std::array<double, 3> t{0, 0, 0};
        for (int a = 0; a < grid.dim; ++a) {
            const double origin = a == grid.dim - 1 ? 0.0 : -1.0;
            const double s = (x[a] - origin) / grid.h;
            const int i = std::clamp(int(std::floor(s)), 0, grid.shape[a] - 2);
            base[a] = i;
            t[a] = std::clamp(s - i, 0.0, 1.0);
        }
        double acc = 0;
        for (int c = 0; c < (1 << grid.dim); ++c) {
            double wgt = 1;
            auto idx = base;
            for (int a = 0; a < grid.dim; ++a) {
                const int bit = (c >> a) & 1;
                idx[a] += bit;
                wgt *= bit ? t[a] : 1 - t[a];
            }
            if (wgt != 0) acc += wgt * grad[grid.index(idx)][k];
        }
        return acc;
    }

    /// T^{-1}(y) by damped Newton in the normal variables, started from the
    /// sample nearest to y in the same tangential plane (excluding `exclude`).
    Vec3 inverse(const Vec3& y, long exclude = -1) const {
        const int kn = normal_index(dim), km = vertical_index(dim);
        long best = -1;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < samples.size(); ++s) {
            if (long(s) == exclude) continue;
            if (dim == 3 && std::abs(samples[s].y[0] - y[0]) > 0.5 * grid.h) continue;
            const double dd = std::hypot(samples[s].y[kn] - y[kn], samples[s].y[km] - y[km]);
            if (dd < bd) {
                bd = dd;
                best = long(s);
            }
        }
        if (best < 0) fail_numerical("hodograph inverse: empty plane");
        Vec3 x = samples[std::size_t(best)].x;
        if (dim == 3) x[0] = y[0];
        auto G = [&](const Vec3& xx) {
            return Eigen::Vector2d(interpolate_component(xx, kn) - y[kn], interpolate_component(xx, km) - y[km]);
        };
        Eigen::Vector2d r = G(x);
        const double eps = 1e-4 * grid.h;
        for (int it = 0; it < 60 && r.norm() > 1e-12; ++it) {
            Eigen::Matrix2d Jm;
            for (int c = 0; c < 2; ++c) {
                const int k = c == 0 ? kn : km;
                Vec3 xp = x, xm = x;
                xp[k] += eps;
                xm[k] -= eps;
                if (xm[km] < 0) {
                    xm = x;
                    Jm.col(c) = (G(xp) - G(xm)) / eps;
                } else {
                    Jm.col(c) = (G(xp) - G(xm)) / (2 * eps);
                }
            }
            if (std::abs(Jm.determinant()) < 1e-300) break;
            const Eigen::Vector2d step = Jm.inverse() * r;
            double lam = 1;
            bool accepted = false;
            for (int ls = 0; ls < 30; ++ls, lam *= 0.5) {
                Vec3 xt = x;
                xt[kn] -= lam * step(0);
                xt[km] = std::max(0.0, xt[km] - lam * step(1));
                const Eigen::Vector2d rt = G(xt);
                if (rt.norm() < r.norm()) {
                    x = xt;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;
        }
        return x;
    }
};

/// Builds T on the nodes of a solution or sampled field (outer nodes
/// excluded), classifies the image, and checks the Jacobian sign and the
/// round trip in the trusted window around the free boundary.
inline HodographMap hodograph_map(const SignoriniSolution& sol, const FreeBoundaryModel& fbm,
                                  const MetricField& metric, const HodographOptions& opt = {}) {
    const HalfGrid& g = sol.grid;
    const int d = g.dim, kn = normal_index(d), km = vertical_index(d);
    HodographMap map;
    map.grid = g;
    map.dim = d;
    map.tol_map = opt.tol_map;
    map.grad = node_gradients(sol, metric);
    const auto hess = node_hessians(sol);
    map.sample_of.assign(g.size(), -1);
    std::vector<char> contact(g.size(), 0);
    for (std::size_t p : fbm.contact_nodes) contact[p] = 1;
    auto& rep = map.report;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const NodeKind kind = g.kind(p);
        if (kind == NodeKind::outer_boundary) continue;
        HodographSample s;
        s.node = p;
        s.x = g.coord(p);
        s.grad_w = map.grad[p];
        s.y = s.x;
        s.y[kn] = s.grad_w[kn];
        s.y[km] = s.grad_w[km];
        s.w = sol.w[p];
        s.v = s.w - s.x[kn] * s.y[kn] - s.x[km] * s.y[km];
        s.dist_fb = fbm.distance(s.x);
        s.region = kind == NodeKind::interior ? SampleRegion::interior
                   : contact[p]               ? SampleRegion::contact
                                              : SampleRegion::positivity;
        if (hess[p].allFinite()) {
            s.det = hess[p](kn, kn) * hess[p](km, km) - hess[p](kn, km) * hess[p](kn, km);
            if (std::abs(s.det) > 0) {
                Eigen::Matrix2d Hn;
                Hn << hess[p](kn, kn), hess[p](kn, km), hess[p](km, kn), hess[p](km, km);
                s.dxdy = Hn.inverse();
            }
        }
        map.sample_of[p] = long(map.samples.size());
        map.samples.push_back(s);

        if (s.dist_fb <= opt.collar_cells * g.h * (1 + 1e-9)) {
            ++rep.collar_skipped;
            continue;
        }
        // gradient stencils touching the outer faces see the boundary data,
        // and the free boundary is not located between a node and the face
        bool frame = false;
        const auto c = g.ijk(p);
        for (int a = 0; a < d; ++a)
            if (c[a] + 1 == g.shape[a] - 1 || (a != km && c[a] == 1)) frame = true;
        if (frame) {
            ++rep.frame_skipped;
            continue;
        }
        ++rep.checked;
        const double tol = opt.tol_map, yn = s.y[kn], ym = s.y[km];
        bool ok = false;
        switch (s.region) {
        case SampleRegion::interior: ok = yn > 0 && ym < 0; break;
        case SampleRegion::contact: ok = std::abs(yn) <= tol && ym <= tol; break;
        case SampleRegion::positivity: ok = yn > 0 && std::abs(ym) <= tol; break;
        }
        if (!ok) ++rep.misclassified;
    }

    for (const auto& fp : fbm.fb_points) {
        const Vec3 y = map.forward(fp.x);
        rep.fb_image_max = std::max(rep.fb_image_max, std::hypot(y[kn], y[km]));
    }

    std::vector<std::size_t> window;
    for (std::size_t s = 0; s < map.samples.size(); ++s) {
        const auto& smp = map.samples[s];
        if (smp.region != SampleRegion::interior || std::isnan(smp.det)) continue;
        if (smp.dist_fb < opt.trusted_cells * g.h || smp.dist_fb > opt.trusted_radius) continue;
        window.push_back(s);
        ++rep.jac_checked;
        if (!(smp.det < 0)) ++rep.jac_nonnegative;
        const double q = -smp.det * smp.dist_fb;
        rep.det_dist_min = std::isnan(rep.det_dist_min) ? q : std::min(rep.det_dist_min, q);
        rep.det_dist_max = std::isnan(rep.det_dist_max) ? q : std::max(rep.det_dist_max, q);
    }
    if (opt.strict && rep.jac_nonnegative > 0) fail_numerical("Jacobian sign violation in the trusted window");

    const std::size_t stride = std::max<std::size_t>(1, window.size() / std::max<std::size_t>(1, opt.max_roundtrip));
    for (std::size_t k = 0; k < window.size(); k += stride) {
        const std::size_t s = window[k];
        const Vec3 xr = map.inverse(map.samples[s].y, long(s));
        rep.roundtrip_max = std::max(rep.roundtrip_max, distance(xr, map.samples[s].x, d));
        ++rep.roundtrip_checked;
    }
    if (opt.strict && rep.roundtrip_max > 2 * g.h) fail_numerical("hodograph round-trip failure");
    return map;
}

// ---------------------------------------------------------------------------
// Legendre function on the image side.

struct LegendreOptions {
    double hy = 0;          ///< resampling spacing; 0 means the x-grid spacing
    double ymax = 1.0;      ///< quarter grid covers [0, ymax] x [-ymax, 0]
    int neighbors = 24;     ///< Hermite fit neighbors
    double radius_ratio = 0.5;  ///< fit support must stay below this fraction of |y_N|
    double max_gap = 0.6 * std::numbers::pi;  ///< largest neighbor direction gap off the axes
    int collar_cells = 4;       ///< P collar in resampling cells
    double tol_dual = 1e-3;
    double fb_fit_radius = 1.0;
    double fb_fit_tangential = 0.25;
    bool strict = true;
};

namespace detail {

struct PlanePoint {
    double yn, ym, v, gn, gm;
    std::size_t sample;
};

/// Bucketed 2D point set of one tangential plane.
struct PlaneIndex {
    std::vector<PlanePoint> pts;
    double cell = 0.05, on = 0, om = 0;
    int nb_n = 0, nb_m = 0;
    std::vector<std::vector<int>> buckets;

    void build(double c) {
        cell = c;
        if (pts.empty()) return;
        double lo_n = pts[0].yn, hi_n = lo_n, lo_m = pts[0].ym, hi_m = lo_m;
        for (const auto& p : pts) {
            lo_n = std::min(lo_n, p.yn);
            hi_n = std::max(hi_n, p.yn);
            lo_m = std::min(lo_m, p.ym);
            hi_m = std::max(hi_m, p.ym);
        }
        on = lo_n;
        om = lo_m;
        nb_n = int((hi_n - lo_n) / cell) + 1;
        nb_m = int((hi_m - lo_m) / cell) + 1;
        buckets.assign(std::size_t(nb_n) * nb_m, {});
        for (int i = 0; i < int(pts.size()); ++i) buckets[bucket(pts[i].yn, pts[i].ym)].push_back(i);
    }
    std::size_t bucket(double yn, double ym) const {
        const int a = std::clamp(int((yn - on) / cell), 0, nb_n - 1);
        const int b = std::clamp(int((ym - om) / cell), 0, nb_m - 1);
        return std::size_t(a) * nb_m + b;
    }

    /// k nearest points, sorted by distance.
    void knn(double qn, double qm, int k, long exclude, std::vector<std::pair<double, int>>& out) const {
        out.clear();
        if (pts.empty()) return;
        const int ca = int(std::floor((qn - on) / cell)), cb = int(std::floor((qm - om) / cell));
        const int max_ring = std::max(nb_n, nb_m) + std::abs(ca) + std::abs(cb) + 2;
        for (int ring = 0; ring <= max_ring; ++ring) {
            for (int a = ca - ring; a <= ca + ring; ++a)
                for (int b = cb - ring; b <= cb + ring; ++b) {
                    if (std::max(std::abs(a - ca), std::abs(b - cb)) != ring) continue;
                    if (a < 0 || b < 0 || a >= nb_n || b >= nb_m) continue;
                    for (int i : buckets[std::size_t(a) * nb_m + b]) {
                        if (long(pts[std::size_t(i)].sample) == exclude) continue;
                        out.emplace_back(std::hypot(pts[std::size_t(i)].yn - qn, pts[std::size_t(i)].ym - qm), i);
                    }
                }
            if (int(out.size()) >= k) {
                std::partial_sort(out.begin(), out.begin() + k, out.end());
                // points beyond this ring are at least ring*cell away
                if (out[std::size_t(k - 1)].first <= ring * cell) {
                    out.resize(std::size_t(k));
                    return;
                }
            }
        }
        std::sort(out.begin(), out.end());
        if (int(out.size()) > k) out.resize(std::size_t(k));
    }
};

struct MlsResult {
    bool ok = false;
    double v = kNaN, dn = kNaN, dm = kNaN, nn = kNaN, nm = kNaN, mm = kNaN;
    double R = 0;
};

/// Largest angular gap of the neighbor directions seen from q.
inline double angular_gap(const PlaneIndex& idx, double qn, double qm, const std::vector<std::pair<double, int>>& nb) {
    std::vector<double> ang;
    for (const auto& [dist, i] : nb) {
        if (dist < 1e-14) continue;
        const auto& p = idx.pts[std::size_t(i)];
        ang.push_back(std::atan2(p.ym - qm, p.yn - qn));
    }
    if (ang.size() < 3) return 2 * std::numbers::pi;
    std::sort(ang.begin(), ang.end());
    double gap = ang.front() + 2 * std::numbers::pi - ang.back();
    for (std::size_t i = 1; i < ang.size(); ++i) gap = std::max(gap, ang[i] - ang[i - 1]);
    return gap;
}

/// Weighted polynomial least squares of total degree `degree` centred at q,
/// with gradient rows when `hermite` is set.
inline MlsResult mls_fit(const PlaneIndex& idx, double qn, double qm, int k, int degree, bool hermite, long exclude,
                         double max_R, double max_gap, std::vector<std::pair<double, int>>& nb) {
    MlsResult res;
    idx.knn(qn, qm, k, exclude, nb);
    if (int(nb.size()) < k) return res;
    if (angular_gap(idx, qn, qm, nb) > max_gap) return res;
    const double R = 1.25 * nb.back().first;
    res.R = R;
    if (R > max_R) return res;
    std::vector<std::pair<int, int>> mono;
    for (int t = 0; t <= degree; ++t)
        for (int i = t; i >= 0; --i) mono.emplace_back(i, t - i);
    const int nc = int(mono.size());
    const int rows = hermite ? 3 * k : k;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, nc);
    Eigen::VectorXd b(rows);
    for (int r = 0; r < k; ++r) {
        const auto& p = idx.pts[std::size_t(nb[std::size_t(r)].second)];
        const double s = (p.yn - qn) / R, u = (p.ym - qm) / R;
        const double q = nb[std::size_t(r)].first / R;
        const double wq = std::pow(1 - q, 4) * (4 * q + 1);  // Wendland C2
        const double sw = std::sqrt(std::max(wq, 1e-12));
        for (int c = 0; c < nc; ++c) {
            const auto [i, j] = mono[std::size_t(c)];
            A(r, c) = sw * std::pow(s, i) * std::pow(u, j);
            if (hermite) {
                A(k + 2 * r, c) = sw * (i > 0 ? i * std::pow(s, i - 1) : 0.0) * std::pow(u, j);
                A(k + 2 * r + 1, c) = sw * std::pow(s, i) * (j > 0 ? j * std::pow(u, j - 1) : 0.0);
            }
        }
        b(r) = sw * p.v;
        if (hermite) {
            b(k + 2 * r) = sw * p.gn * R;
            b(k + 2 * r + 1) = sw * p.gm * R;
        }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < nc) return res;
    const Eigen::VectorXd c = qr.solve(b);
    auto coef = [&](int i, int j) {
        for (int m = 0; m < nc; ++m)
            if (mono[std::size_t(m)].first == i && mono[std::size_t(m)].second == j) return c(m);
        return 0.0;
    };
    res.v = coef(0, 0);
    res.dn = coef(1, 0) / R;
    res.dm = coef(0, 1) / R;
    res.nn = 2 * coef(2, 0) / (R * R);
    res.nm = coef(1, 1) / (R * R);
    res.mm = 2 * coef(0, 2) / (R * R);
    res.ok = true;
    return res;
}

}  // namespace detail

struct LegendreField {
    int dim = 3;
    HalfGrid xgrid;
    double hy = 0;
    int ny = 0;  ///< quarter grid indices 0..ny in y_n and in -y_{n+1}
    int n_planes = 1;
    std::vector<double> plane_t;
    std::vector<LegendreJet> cloud;  ///< one jet per hodograph sample (Hessian unknown)
    std::vector<int> cloud_plane;
    std::vector<LegendreJet> grid;  ///< resampled jets; ok marks trusted points
    int collar_cells = 4;

    double dual_residual = kNaN;   ///< max pairwise |dv + x_N . dy_N| / |dy| relative to max |x_N|
    std::size_t dual_checked = 0;
    double involution_error = kNaN;
    double bc_dirichlet = 0;  ///< max |v| on y_n = 0 samples
    double bc_neumann = 0;    ///< max |d_{n+1} v| on y_{n+1} = 0 samples
    std::vector<double> fb_graph;  ///< x_n = -d_n v(y'', 0, 0) per plane (NaN where no fit)

    std::size_t gidx(int plane, int a, int b) const {
        return (std::size_t(plane) * std::size_t(ny + 1) + std::size_t(a)) * std::size_t(ny + 1) + std::size_t(b);
    }
    Vec3 gcoord(int plane, int a, int b) const {
        Vec3 y{0, 0, 0};
        const int kn = normal_index(dim), km = vertical_index(dim);
        if (dim == 3) y[0] = plane_t[std::size_t(plane)];
        y[kn] = a * hy;
        y[km] = -b * hy;
        return y;
    }
    std::size_t trusted_count() const {
        std::size_t n = 0;
        for (const auto& j : grid) n += j.ok;
        return n;
    }
};

/// Legendre function v = w - x_n y_n - x_{n+1} y_{n+1} on the image cloud,
/// resampled per tangential plane onto a regular quarter grid by a cubic
/// Hermite moving least-squares fit (values and the dual gradients -x).
/// Tangential derivatives come from centred differences across planes.
inline LegendreField legendre_transform(const HodographMap& map, const LegendreOptions& opt = {}) {
    const int d = map.dim, kn = normal_index(d), km = vertical_index(d);
    const HalfGrid& g = map.grid;
    LegendreField lf;
    lf.dim = d;
    lf.xgrid = g;
    lf.hy = opt.hy > 0 ? opt.hy : g.h;
    lf.ny = int(std::floor(opt.ymax / lf.hy + 1e-9));
    lf.collar_cells = opt.collar_cells;
    lf.n_planes = d == 3 ? g.shape[0] : 1;
    for (int i = 0; i < lf.n_planes; ++i) lf.plane_t.push_back(d == 3 ? g.axis_coord(0, i) : 0.0);

    std::vector<detail::PlaneIndex> planes(std::size_t(lf.n_planes));
    for (std::size_t s = 0; s < map.samples.size(); ++s) {
        const auto& smp = map.samples[s];
        LegendreJet j;
        j.x = smp.x;
        j.y = smp.y;
        j.v = smp.v;
        for (int t = 0; t < kn; ++t) j.grad[t] = smp.grad_w[t];
        j.grad[kn] = -smp.x[kn];
        j.grad[km] = -smp.x[km];
        j.ok = true;
        const int plane = d == 3 ? g.ijk(smp.node)[0] : 0;
        lf.cloud.push_back(j);
        lf.cloud_plane.push_back(plane);
        planes[std::size_t(plane)].pts.push_back({smp.y[kn], smp.y[km], smp.v, j.grad[kn], j.grad[km], s});
        if (smp.region == SampleRegion::contact) lf.bc_dirichlet = std::max(lf.bc_dirichlet, std::abs(smp.v));
        if (smp.region == SampleRegion::positivity) lf.bc_neumann = std::max(lf.bc_neumann, std::abs(j.grad[km]));
    }
    for (auto& p : planes) p.build(lf.hy);

    const std::size_t per_plane = std::size_t(lf.ny + 1) * std::size_t(lf.ny + 1);
    lf.grid.assign(std::size_t(lf.n_planes) * per_plane, LegendreJet{});
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < lf.n_planes; ++i) {
        const auto& idx = planes[std::size_t(i)];
        if (idx.pts.size() < std::size_t(opt.neighbors)) continue;
        std::vector<std::pair<double, int>> nb;
        for (int a = 0; a <= lf.ny; ++a)
            for (int b = 0; b <= lf.ny; ++b) {
                LegendreJet& j = lf.grid[lf.gidx(i, a, b)];
                j.y = lf.gcoord(i, a, b);
                const double r = std::hypot(j.y[kn], j.y[km]);
                const double max_R = std::max(opt.radius_ratio * r, 2 * lf.hy);
                // on the axes the data are one-sided by construction
                const double max_gap = (a == 0 || b == 0) ? std::numbers::pi * (1 + 1e-6) : opt.max_gap;
                const auto fit =
                    detail::mls_fit(idx, j.y[kn], j.y[km], opt.neighbors, 3, true, -1, max_R, max_gap, nb);
                if (!fit.ok) continue;
                j.v = fit.v;
                j.grad[kn] = fit.dn;
                j.grad[km] = fit.dm;
                j.hess(kn, kn) = fit.nn;
                j.hess(kn, km) = j.hess(km, kn) = fit.nm;
                j.hess(km, km) = fit.mm;
                j.ok = true;
            }
    }
    if (d == 3) {
        // tangential derivatives need both neighbor planes; compute from a copy
        std::vector<char> ok_in(lf.grid.size());
        std::vector<double> vv(lf.grid.size()), vn(lf.grid.size()), vm(lf.grid.size());
        for (std::size_t q = 0; q < lf.grid.size(); ++q) {
            ok_in[q] = lf.grid[q].ok;
            vv[q] = lf.grid[q].v;
            vn[q] = lf.grid[q].grad[kn];
            vm[q] = lf.grid[q].grad[km];
        }
        const double ht = g.h;
        for (int i = 0; i < lf.n_planes; ++i)
            for (int a = 0; a <= lf.ny; ++a)
                for (int b = 0; b <= lf.ny; ++b) {
                    const std::size_t q = lf.gidx(i, a, b);
                    if (!ok_in[q]) continue;
                    if (i == 0 || i == lf.n_planes - 1) {
                        lf.grid[q].ok = false;
                        continue;
                    }
                    const std::size_t qp = lf.gidx(i + 1, a, b), qm = lf.gidx(i - 1, a, b);
                    if (!ok_in[qp] || !ok_in[qm]) {
                        lf.grid[q].ok = false;
                        continue;
                    }
                    LegendreJet& j = lf.grid[q];
                    j.grad[0] = (vv[qp] - vv[qm]) / (2 * ht);
                    j.hess(0, 0) = (vv[qp] - 2 * vv[q] + vv[qm]) / (ht * ht);
                    j.hess(0, kn) = j.hess(kn, 0) = (vn[qp] - vn[qm]) / (2 * ht);
                    j.hess(0, km) = j.hess(km, 0) = (vm[qp] - vm[qm]) / (2 * ht);
                }
    }
    for (auto& j : lf.grid) {
        if (!j.ok) continue;
        j.x = j.y;
        j.x[kn] = -j.grad[kn];
        j.x[km] = -j.grad[km];
    }

    // dual relations on pairs of x-neighbors in one plane: the trapezoid rule
    // for dv = -x_N . dy_N along the segment between the two image points
    {
        double num = 0, den = 0, inv = 0, wscale = 0;
        std::size_t checked = 0;
        for (std::size_t s = 0; s < map.samples.size(); ++s) {
            const auto& sp = map.samples[s];
            if (std::hypot(sp.y[kn], sp.y[km]) < opt.collar_cells * lf.hy) continue;
            den = std::max(den, std::hypot(sp.x[kn], sp.x[km]));
            for (int k : {kn, km}) {
                const auto c = g.ijk(sp.node);
                if (c[k] + 1 >= g.shape[k]) continue;
                const long q = map.sample_of[sp.node + g.stride(k)];
                if (q < 0) continue;
                const auto& sq = map.samples[std::size_t(q)];
                if (std::hypot(sq.y[kn], sq.y[km]) < opt.collar_cells * lf.hy) continue;
                const double dyn = sq.y[kn] - sp.y[kn], dym = sq.y[km] - sp.y[km];
                const double len = std::hypot(dyn, dym);
                if (len < 1e-12) continue;
                double rhs = -0.5 * ((sp.x[kn] + sq.x[kn]) * dyn + (sp.x[km] + sq.x[km]) * dym);
                if (sp.dxdy.allFinite() && sq.dxdy.allFinite()) {
                    // endpoint correction of the trapezoid rule
                    const Eigen::Vector2d dy(dyn, dym);
                    rhs += (dy.dot(sq.dxdy * dy) - dy.dot(sp.dxdy * dy)) / 12.0;
                }
                num = std::max(num, std::abs(sq.v - sp.v - rhs) / len);
                ++checked;
            }
            // involution through the nearest trusted resampled jet
            const int plane = lf.cloud_plane[s];
            const int a = int(std::lround(sp.y[kn] / lf.hy)), b = int(std::lround(-sp.y[km] / lf.hy));
            if (a >= 0 && b >= 0 && a <= lf.ny && b <= lf.ny) {
                const LegendreJet& j = lf.grid[lf.gidx(plane, a, b)];
                if (j.ok) {
                    const double dn = sp.y[kn] - j.y[kn], dm = sp.y[km] - j.y[km];
                    const double vr = j.v + j.grad[kn] * dn + j.grad[km] * dm +
                                      0.5 * (j.hess(kn, kn) * dn * dn + 2 * j.hess(kn, km) * dn * dm +
                                             j.hess(km, km) * dm * dm);
                    const double wr = vr + sp.x[kn] * sp.y[kn] + sp.x[km] * sp.y[km];
                    inv = std::max(inv, std::abs(wr - sp.w));
                    wscale = std::max(wscale, std::abs(sp.w));
                }
            }
        }
        lf.dual_checked = checked;
        lf.dual_residual = checked ? num / std::max(den, 1e-300) : kNaN;
        lf.involution_error = wscale > 0 ? inv / wscale : kNaN;
        if (opt.strict && checked && lf.dual_residual > opt.tol_dual)
            fail_numerical("dual-relation residual exceeds tol_dual");
    }

    // free boundary from the linear coefficient of the profile fit at each P point
    lf.fb_graph.assign(std::size_t(lf.n_planes), kNaN);
    for (int i = 0; i < lf.n_planes; ++i) {
        if (planes[std::size_t(i)].pts.empty()) continue;
        Vec3 y0{0, 0, 0};
        if (d == 3) y0[0] = lf.plane_t[std::size_t(i)];
        std::vector<LegendreJet> data;
        for (std::size_t s = 0; s < lf.cloud.size(); ++s) {
            if (d == 3 && std::abs(lf.cloud[s].y[0] - y0[0]) > opt.fb_fit_tangential) continue;
            if (std::hypot(lf.cloud[s].y[kn], lf.cloud[s].y[km]) > opt.fb_fit_radius) continue;
            data.push_back(lf.cloud[s]);
        }
        try {
            const auto prof = fit_cubic_profile(data, y0, d, opt.fb_fit_radius, opt.fb_fit_tangential, 0.05);
            lf.fb_graph[std::size_t(i)] = -prof.dn;
        } catch (const Error&) {
        }
    }
    return lf;
}

// ---------------------------------------------------------------------------
// Residual of F on the resampled field.

struct FResidualReport {
    std::vector<ShellStat> shells;  ///< by |(y_n, y_{n+1})|
    double max_abs = 0, mean_abs = 0;
    std::size_t count = 0;
    std::vector<std::pair<std::size_t, double>> values;  ///< (grid index, F)
};

/// F at trusted resampled points with |(y_n, y_{n+1})| >= collar, |y''| <=
/// t_window in 3D, and preimage x at least x_margin inside the outer box
/// faces, where the image cloud ends.
inline FResidualReport nonlinear_residual_F(const LegendreField& lf, const MetricField& metric,
                                            ResidualMode mode = ResidualMode::homogeneous,
                                            const std::function<double(const Vec3&)>& f = {},
                                            double r_max = 1.0, double t_window = 0.5, double x_margin = 0.25) {
    const int d = lf.dim, kn = normal_index(d), km = vertical_index(d);
    FResidualReport rep;
    const double r_min = lf.collar_cells * lf.hy;
    std::vector<double> rad, err;
    for (std::size_t q = 0; q < lf.grid.size(); ++q) {
        const auto& j = lf.grid[q];
        if (!j.ok) continue;
        const double r = std::hypot(j.y[kn], j.y[km]);
        if (r < r_min || r >= r_max) continue;
        if (d == 3 && std::abs(j.y[0]) > t_window) continue;
        bool inside = j.x[km] <= 1 - x_margin;
        for (int k = 0; k < km; ++k) inside = inside && std::abs(j.x[k]) <= 1 - x_margin;
        if (!inside) continue;
        const double F = legendre_F(metric, j, mode, f);
        rep.values.emplace_back(q, F);
        rad.push_back(r);
        err.push_back(F);
        rep.max_abs = std::max(rep.max_abs, std::abs(F));
        rep.mean_abs += std::abs(F);
    }
    rep.count = rad.size();
    if (rep.count == 0) fail_numerical("derivative stencil underdetermined near P: no trusted points");
    rep.mean_abs /= double(rep.count);
    rep.shells = dyadic_shells(rad, err, r_min, r_max);
    return rep;
}

/// Expansion at y0 = (t0, 0, 0) on a resampled Legendre field: the profile is
/// fitted to the image cloud, the error is evaluated at trusted grid jets
/// within `tangential` of t0.
inline ExpansionReport expand_field_at(const LegendreField& lf, const MetricField& metric, double t0,
                                       double radius = 1.0, double tangential = 0.25) {
    const int d = lf.dim;
    Vec3 y0{0, 0, 0};
    if (d == 3) y0[0] = t0;
    std::vector<LegendreJet> fit, pts;
    for (const auto& j : lf.cloud)
        if (d == 2 || std::abs(j.y[0] - t0) <= tangential) fit.push_back(j);
    const auto prof = fit_cubic_profile(fit, y0, d, radius, tangential, 0.05);
    for (const auto& j : lf.grid)
        if (j.ok && (d == 2 || std::abs(j.y[0] - t0) <= tangential)) pts.push_back(j);
    return expand_at_point(pts, prof, metric, lf.collar_cells * lf.hy, radius);
}

// ---------------------------------------------------------------------------
// Tangential flow.

/// Radial cutoff in (y_n, y_{n+1}): 1 for r^2 <= 1/4, 0 for r^2 >= 1/2, joined
/// by the quintic smoothstep in r^2.
inline double flow_cutoff(double r2) {
    if (r2 <= 0.25) return 1.0;
    if (r2 >= 0.5) return 0.0;
    const double s = (r2 - 0.25) / 0.25;
    return 1.0 - s * s * s * (10 - 15 * s + 6 * s * s);
}

/// Phi_a(y) = (phi(1), y_n, y_{n+1}) with phi' = a ((3/4)^2 - |phi|^2)_+^5 eta,
/// phi(0) = y'', integrated by fixed-step RK4.
inline Vec3 flow_diffeomorphism(const Vec3& a, const Vec3& y, int dim = 3, int steps = 200) {
    const int kn = normal_index(dim), km = vertical_index(dim);
    const double eta = flow_cutoff(y[kn] * y[kn] + y[km] * y[km]);
    bool zero = eta == 0;
    if (!zero) {
        zero = true;
        for (int t = 0; t < kn; ++t) zero = zero && a[t] == 0;
    }
    if (zero || kn == 0) return y;
    auto rhs = [&](const Vec3& phi) {
        double n2 = 0;
        for (int t = 0; t < kn; ++t) n2 += phi[t] * phi[t];
        const double base = std::max(0.5625 - n2, 0.0);
        const double s = base * base * base * base * base * eta;
        Vec3 out{0, 0, 0};
        for (int t = 0; t < kn; ++t) out[t] = a[t] * s;
        return out;
    };
    Vec3 phi{0, 0, 0};
    for (int t = 0; t < kn; ++t) phi[t] = y[t];
    const double dt = 1.0 / steps;
    for (int s = 0; s < steps; ++s) {
        const Vec3 k1 = rhs(phi);
        const Vec3 k2 = rhs(add(phi, scale(k1, dt / 2)));
        const Vec3 k3 = rhs(add(phi, scale(k2, dt / 2)));
        const Vec3 k4 = rhs(add(phi, scale(k3, dt)));
        for (int t = 0; t < kn; ++t) phi[t] += dt / 6 * (k1[t] + 2 * k2[t] + 2 * k3[t] + k4[t]);
    }
    Vec3 out = y;
    for (int t = 0; t < kn; ++t) out[t] = phi[t];
    return out;
}

}  // namespace thinobs
