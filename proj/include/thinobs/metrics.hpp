// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/common.hpp"

#include <complex>
#include <optional>
#include <sstream>

namespace thinobs {

enum class RegularityTag { analytic, holder, sobolev };

struct RegularityClass {
    RegularityTag tag = RegularityTag::analytic;
    int k = 0;          ///< Ckγ order
    double gamma = 1;   ///< Ckγ exponent
    double p = 0;       ///< W1p exponent

    std::string str() const {
        std::ostringstream os;
        switch (tag) {
        case RegularityTag::analytic: os << "analytic"; break;
        case RegularityTag::holder: os << "C" << k << "," << gamma; break;
        case RegularityTag::sobolev: os << "W1," << p; break;
        }
        return os.str();
    }
};

/// Gradient tensor: grad[k](i, j) = d_k a^{ij}.
using MetricGradient = std::array<Mat3, 3>;

/// Coefficient tensor a^{ij}(x) on the closed half box.
struct MetricField {
    int dim = 3;
    std::function<Mat3(const Vec3&)> eval;
    std::function<MetricGradient(const Vec3&)> grad_eval;  ///< empty when not available
    RegularityClass regularity;
    double lambda = 0.5;
    double Lambda = 2.0;
    bool diagonal = true;  ///< structural flag: off-diagonal entries vanish identically
    std::string kind = "flat";
};

inline MetricField make_flat(int dim) {
    require_dim(dim);
    MetricField m;
    m.dim = dim;
    m.eval = [dim](const Vec3&) {
        Mat3 a = Mat3::Zero();
        for (int i = 0; i < dim; ++i) a(i, i) = 1.0;
        return a;
    };
    m.grad_eval = [](const Vec3&) {
        MetricGradient g;
        for (auto& gk : g) gk.setZero();
        return g;
    };
    m.regularity = {RegularityTag::analytic, 0, 1, 0};
    m.kind = "flat";
    return m;
}

/// Constant tensor; used for validation tests and anisotropic experiments.
inline MetricField make_constant_metric(int dim, const Mat3& a) {
    require_dim(dim);
    MetricField m = make_flat(dim);
    Mat3 c = Mat3::Zero();
    c.topLeftCorner(dim, dim) = a.topLeftCorner(dim, dim);
    m.eval = [c](const Vec3&) { return c; };
    bool diag = true;
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            if (i != j && c(i, j) != 0.0) diag = false;
    m.diagonal = diag;
    m.kind = "constant";
    return m;
}

/// d_k a^{ij}(x), analytic when available, otherwise by central differences.
inline MetricGradient metric_gradient(const MetricField& m, const Vec3& x) {
    if (m.grad_eval) return m.grad_eval(x);
    MetricGradient g;
    const double step = 1e-5;
    for (int k = 0; k < 3; ++k) {
        g[k].setZero();
        if (k >= m.dim) continue;
        Vec3 xp = x, xm = x;
        xp[k] += step;
        xm[k] -= step;
        g[k] = (m.eval(xp) - m.eval(xm)) / (2 * step);
    }
    return g;
}

/// Divergence of the coefficient rows, b^j = sum_i d_i a^{ij}.
inline Vec3 metric_divergence(const MetricField& m, const Vec3& x) {
    const MetricGradient g = metric_gradient(m, x);
    Vec3 b{0, 0, 0};
    for (int j = 0; j < m.dim; ++j)
        for (int i = 0; i < m.dim; ++i) b[j] += g[i](i, j);
    return b;
}

// ---------------------------------------------------------------------------
// Generators h for the pullback construction.

/// Monotone scalar map with h(0) = 0 and h'(0) = 1.
struct Generator {
    std::string kind;                  ///< "poly" or "abs_power"
    std::vector<double> coefficients;  ///< poly: c0 + c1 t + c2 t^2 + ...
    double linear = 1, amplitude = 0, exponent = 2;  ///< abs_power: linear t + amplitude |t|^exponent

    double value(double t) const {
        if (kind == "poly") {
            double s = 0;
            for (std::size_t i = coefficients.size(); i-- > 0;) s = s * t + coefficients[i];
            return s;
        }
        return linear * t + amplitude * std::pow(std::abs(t), exponent);
    }
    double d1(double t) const {
        if (kind == "poly") {
            double s = 0;
            for (std::size_t i = coefficients.size(); i-- > 1;) s = s * t + double(i) * coefficients[i];
            return s;
        }
        const double sg = t > 0 ? 1.0 : (t < 0 ? -1.0 : 0.0);
        return linear + amplitude * exponent * sg * std::pow(std::abs(t), exponent - 1);
    }
    double d2(double t) const {
        if (kind == "poly") {
            double s = 0;
            for (std::size_t i = coefficients.size(); i-- > 2;)
                s = s * t + double(i) * double(i - 1) * coefficients[i];
            return s;
        }
        if (exponent == 2) return 2 * amplitude;
        if (t == 0) return exponent > 2 ? 0.0 : std::numeric_limits<double>::infinity();
        return amplitude * exponent * (exponent - 1) * std::pow(std::abs(t), exponent - 2);
    }
    bool smooth() const { return kind == "poly" || exponent == 2 || amplitude == 0; }
};

inline Generator make_poly_generator(std::vector<double> coefficients) {
    Generator g;
    g.kind = "poly";
    g.coefficients = std::move(coefficients);
    return g;
}

inline Generator make_abs_power_generator(double linear, double amplitude, double exponent) {
    Generator g;
    g.kind = "abs_power";
    g.linear = linear;
    g.amplitude = amplitude;
    g.exponent = exponent;
    return g;
}

/// Inverse of a monotone generator on a bracket, by safeguarded Newton.
class GeneratorInverse {
public:
    GeneratorInverse() = default;
    GeneratorInverse(const Generator& h, double y_lo, double y_hi) : h_(h) {
        // widen the bracket until it covers [y_lo, y_hi]
        lo_ = -1;
        hi_ = 1;
        for (int it = 0; it < 60 && h_.value(lo_) > y_lo; ++it) lo_ *= 1.5;
        for (int it = 0; it < 60 && h_.value(hi_) < y_hi; ++it) hi_ *= 1.5;
        if (h_.value(lo_) > y_lo || h_.value(hi_) < y_hi)
            fail_validation("h does not cover the required range");
        const int samples = 4001;
        double prev = h_.value(lo_);
        for (int i = 1; i < samples; ++i) {
            const double t = lo_ + (hi_ - lo_) * i / (samples - 1);
            const double v = h_.value(t);
            if (!(v > prev) || !(h_.d1(t) > 0)) fail_validation("h not monotone on domain");
            prev = v;
        }
    }

    double operator()(double y) const {
        double a = lo_, b = hi_;
        double t = std::clamp(y, a, b);
        for (int it = 0; it < 200; ++it) {
            const double r = h_.value(t) - y;
            if (std::abs(r) <= 1e-12 * std::max(1.0, std::abs(y))) return t;
            if (r > 0) b = t; else a = t;
            const double d = h_.d1(t);
            double tn = t - r / d;
            if (!(tn > a && tn < b) || !std::isfinite(tn)) tn = 0.5 * (a + b);
            if (std::abs(tn - t) < 1e-15 * std::max(1.0, std::abs(t))) return tn;
            t = tn;
        }
        if (std::abs(h_.value(t) - y) > 1e-10) fail_numerical("generator inversion did not converge");
        return t;
    }

    double lo() const { return lo_; }
    double hi() const { return hi_; }

private:
    Generator h_;
    double lo_ = -1, hi_ = 1;
};

/// Exact thin obstacle solution for the pushforward of the Laplacian under
/// (x1, x2, x3) -> (x1, h(x2), x3).
struct ExactSolutionOracle {
    Generator h;
    GeneratorInverse h_inv;
    MetricField metric;
    AnalyticField w_exact;

    double fb_graph_exact(double y1) const { return h.value(y1); }
};

namespace detail {

inline std::complex<double> upper(double re, double im) {
    return {re, im > 0 ? im : 0.0};
}

/// Re (s + i t)^{3/2} together with the complex factors needed for derivatives.
struct PowerTerms {
    std::complex<double> z, half, three_half, minus_half;
};

inline PowerTerms power_terms(double s, double t) {
    PowerTerms p;
    p.z = upper(s, t);
    p.half = std::sqrt(p.z);
    p.three_half = p.z * p.half;
    p.minus_half = 1.0 / p.half;
    return p;
}

}  // namespace detail

/// w_{3/2}(x) = Re(x_n + i x_{n+1})^{3/2} with unit amplitude.
inline AnalyticField make_model_field(int dim, double amplitude = 1.0) {
    require_dim(dim);
    const int kn = normal_index(dim), km = vertical_index(dim);
    AnalyticField f;
    f.value = [=](const Vec3& x) {
        return amplitude * detail::power_terms(x[kn], x[km]).three_half.real();
    };
    f.gradient = [=](const Vec3& x) {
        const auto p = detail::power_terms(x[kn], x[km]);
        Vec3 g{0, 0, 0};
        g[kn] = amplitude * 1.5 * p.half.real();
        g[km] = amplitude * (1.5 * p.half * std::complex<double>(0, 1)).real();
        return g;
    };
    f.hessian = [=](const Vec3& x) {
        const auto p = detail::power_terms(x[kn], x[km]);
        const std::complex<double> c = 0.75 * p.minus_half;
        const std::complex<double> I(0, 1);
        Mat3 H = Mat3::Zero();
        H(kn, kn) = amplitude * c.real();
        H(kn, km) = H(km, kn) = amplitude * (c * I).real();
        H(km, km) = amplitude * (c * I * I).real();
        return H;
    };
    return f;
}

inline ExactSolutionOracle make_pullback_oracle(const Generator& h, int dim = 3) {
    if (dim != 3) fail_validation("pullback oracle is defined in dimension 3 only");
    if (std::abs(h.value(0.0)) > 1e-14) fail_validation("h(0) != 0");
    if (std::abs(h.d1(0.0) - 1.0) > 1e-12) fail_validation("h'(0) != 1");
    ExactSolutionOracle o;
    o.h = h;
    o.h_inv = GeneratorInverse(h, -1.5, 1.5);
    const GeneratorInverse inv = o.h_inv;

    MetricField m;
    m.dim = 3;
    m.kind = "pullback";
    m.diagonal = true;
    m.eval = [h, inv](const Vec3& y) {
        const double s = inv(y[1]);
        const double d = h.d1(s);
        Mat3 a = Mat3::Zero();
        a(0, 0) = 1.0 / d;
        a(1, 1) = d;
        a(2, 2) = 1.0 / d;
        return a;
    };
    if (h.smooth()) {
        m.grad_eval = [h, inv](const Vec3& y) {
            const double s = inv(y[1]);
            const double d = h.d1(s), dd = h.d2(s);
            MetricGradient g;
            for (auto& gk : g) gk.setZero();
            g[1](0, 0) = -dd / (d * d * d);
            g[1](1, 1) = dd / d;
            g[1](2, 2) = -dd / (d * d * d);
            return g;
        };
        m.regularity = {RegularityTag::analytic, 0, 1, 0};
    } else {
        // h' is Hölder with exponent (exponent - 1); the tensor inherits it
        m.regularity = {RegularityTag::holder, 0, std::min(1.0, h.exponent - 1.0), 0};
    }
    o.metric = m;

    const double r2 = std::sqrt(0.5);
    AnalyticField w;
    w.value = [inv, r2](const Vec3& y) {
        const double s = inv(y[1]);
        return detail::power_terms((s - y[0]) * r2, y[2]).three_half.real();
    };
    w.gradient = [h, inv, r2](const Vec3& y) {
        const double s = inv(y[1]);
        const auto p = detail::power_terms((s - y[0]) * r2, y[2]);
        const std::complex<double> c = 1.5 * p.half;
        const std::complex<double> I(0, 1);
        return Vec3{(c * (-r2)).real(), (c * (r2 / h.d1(s))).real(), (c * I).real()};
    };
    w.hessian = [h, inv, r2](const Vec3& y) {
        const double s = inv(y[1]);
        const double d = h.d1(s), dd = h.d2(s);
        const auto p = detail::power_terms((s - y[0]) * r2, y[2]);
        const std::complex<double> I(0, 1);
        const std::complex<double> dz[3] = {-r2, r2 / d, I};
        const std::complex<double> c2 = 0.75 * p.minus_half;
        const std::complex<double> c1 = 1.5 * p.half;
        Mat3 H = Mat3::Zero();
        for (int k = 0; k < 3; ++k)
            for (int l = 0; l < 3; ++l) H(k, l) = (c2 * dz[k] * dz[l]).real();
        H(1, 1) += (c1 * (-r2 * dd / (d * d * d))).real();
        return H;
    };
    o.w_exact = w;
    return o;
}

// ---------------------------------------------------------------------------
// Normalization checks.

struct NormalizationReport {
    bool symmetric = true, a1 = true, a2 = true, a3 = true;
    double symmetry_violation = 0, a1_violation = 0, a2_violation = 0, a3_violation = 0;
    bool all_pass() const { return symmetric && a1 && a2 && a3; }
};

inline NormalizationReport validate_normalization(const MetricField& m, double tol = 1e-12,
                                                  int samples_per_axis = 9) {
    NormalizationReport rep;
    const int d = m.dim;
    const Mat3 a0 = m.eval(Vec3{0, 0, 0});
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            rep.a1_violation = std::max(rep.a1_violation, std::abs(a0(i, j) - (i == j ? 1.0 : 0.0)));
    rep.a1 = rep.a1_violation <= tol;

    std::array<int, 3> cnt{1, 1, 1};
    for (int k = 0; k < d; ++k) cnt[k] = samples_per_axis;
    for (int i0 = 0; i0 < cnt[0]; ++i0)
        for (int i1 = 0; i1 < cnt[1]; ++i1)
            for (int i2 = 0; i2 < cnt[2]; ++i2) {
                const int idx[3] = {i0, i1, i2};
                Vec3 x{0, 0, 0};
                for (int k = 0; k < d; ++k) {
                    const double t = double(idx[k]) / (samples_per_axis - 1);
                    x[k] = (k == d - 1) ? t : -1.0 + 2.0 * t;
                }
                const Mat3 a = m.eval(x);
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < d; ++j)
                        rep.symmetry_violation = std::max(rep.symmetry_violation, std::abs(a(i, j) - a(j, i)));
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.topLeftCorner(d, d));
                const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
                rep.a2_violation = std::max({rep.a2_violation, m.lambda - lo, hi - m.Lambda});
                if (idx[d - 1] == 0) {
                    for (int i = 0; i < d - 1; ++i)
                        rep.a3_violation = std::max(rep.a3_violation, std::abs(a(i, d - 1)));
                }
            }
    rep.symmetric = rep.symmetry_violation <= tol;
    rep.a2 = rep.a2_violation <= tol;
    rep.a3 = rep.a3_violation <= tol;
    rep.a2_violation = std::max(0.0, rep.a2_violation);
    return rep;
}

// ---------------------------------------------------------------------------
// Problem data and obstacle reduction.

struct ProblemSpec {
    MetricField metric;
    AnalyticField f;              ///< empty value means f = 0
    AnalyticField obstacle;       ///< thin-plane obstacle; empty value means zero
    AnalyticField boundary_data;  ///< Dirichlet data on the outer boundary

    double f_at(const Vec3& x) const { return f.value ? f.value(x) : 0.0; }
    bool has_obstacle() const { return static_cast<bool>(obstacle.value); }
};

/// Replaces the obstacle by zero. The obstacle is extended to the half box as
/// a function independent of x_{n+1}; the new unknown is w - phi.
inline ProblemSpec reduce_obstacle(const ProblemSpec& spec) {
    if (!spec.has_obstacle()) return spec;
    const int d = spec.metric.dim;
    const int km = vertical_index(d);
    const AnalyticField phi = spec.obstacle;
    auto flatten = [km](Vec3 x) {
        x[km] = 0.0;
        return x;
    };
    const double step = 1e-4;
    std::function<Vec3(const Vec3&)> grad = phi.gradient;
    if (!grad) {
        grad = [phi, d, km, step](const Vec3& x) {
            Vec3 g{0, 0, 0};
            for (int k = 0; k < d; ++k) {
                if (k == km) continue;
                Vec3 xp = x, xm = x;
                xp[k] += step;
                xm[k] -= step;
                g[k] = (phi.value(xp) - phi.value(xm)) / (2 * step);
            }
            return g;
        };
    }
    std::function<Mat3(const Vec3&)> hess = phi.hessian;
    if (!hess) {
        hess = [grad, d, km, step](const Vec3& x) {
            Mat3 H = Mat3::Zero();
            for (int k = 0; k < d; ++k) {
                if (k == km) continue;
                Vec3 xp = x, xm = x;
                xp[k] += step;
                xm[k] -= step;
                const Vec3 gp = grad(xp), gm = grad(xm);
                for (int l = 0; l < d; ++l) H(l, k) = (gp[l] - gm[l]) / (2 * step);
            }
            return Mat3(0.5 * (H + H.transpose()));
        };
    }
    {
        const Vec3 probe{0.1, 0.2, 0.0};
        const Mat3 H = hess(probe);
        if (!H.allFinite()) fail_validation("obstacle not differentiable at required order");
    }

    ProblemSpec out = spec;
    const MetricField metric = spec.metric;
    const ProblemSpec original = spec;
    out.f.value = [original, metric, grad, hess, flatten, d, km](const Vec3& x) {
        const Vec3 xf = flatten(x);
        Vec3 g = grad(xf);
        g[km] = 0.0;
        Mat3 H = hess(xf);
        H.row(km).setZero();
        H.col(km).setZero();
        const Mat3 a = metric.eval(x);
        const Vec3 b = metric_divergence(metric, x);
        double div = 0;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) div += a(i, j) * H(i, j);
        for (int j = 0; j < d; ++j) div += b[j] * g[j];
        return original.f_at(x) - div;
    };
    out.f.gradient = nullptr;
    out.f.hessian = nullptr;
    const AnalyticField bd = spec.boundary_data;
    out.boundary_data.value = [bd, phi, flatten](const Vec3& x) { return bd.value(x) - phi.value(flatten(x)); };
    out.boundary_data.gradient = nullptr;
    out.boundary_data.hessian = nullptr;
    out.obstacle = AnalyticField{};
    return out;
}

}  // namespace thinobs
