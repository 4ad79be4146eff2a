// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/common.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <map>
#include <sstream>

namespace thinobs {

using Rational = boost::multiprecision::cpp_rational;

inline double to_double(double x) { return x; }
inline double to_double(const Rational& q) { return q.convert_to<double>(); }

/// Point of the image space with coordinates (y'', y_n, y_{n+1}).
struct GrushinPoint {
    int dim = 3;
    Vec3 y{0, 0, 0};

    double r() const { return std::hypot(y[normal_index(dim)], y[vertical_index(dim)]); }
    bool in_quarter() const { return y[normal_index(dim)] >= 0 && y[vertical_index(dim)] <= 0; }
};

/// Anisotropic dilation (lambda^2 y'', lambda y_n, lambda y_{n+1}).
inline Vec3 dilate(double lambda, const Vec3& y, int dim) {
    if (!(lambda > 0)) fail_validation("dilation factor must be positive");
    Vec3 out = y;
    const int kn = normal_index(dim);
    for (int i = 0; i < kn; ++i) out[i] *= lambda * lambda;
    for (int i = kn; i < dim; ++i) out[i] *= lambda;
    return out;
}

/// Algebraic quasi-metric equivalent to the Carnot-Caratheodory distance of
/// the Grushin vector fields.
inline double quasi_metric(const Vec3& p, const Vec3& q, int dim) {
    const int kn = normal_index(dim), km = vertical_index(dim);
    double tang = 0;
    for (int i = 0; i < kn; ++i) tang += (p[i] - q[i]) * (p[i] - q[i]);
    tang = std::sqrt(tang);
    double d = std::abs(p[kn] - q[kn]) + std::abs(p[km] - q[km]);
    if (tang > 0) {
        // paired sums keep d(p,q) == d(q,p) bitwise
        const double den = (std::abs(p[kn]) + std::abs(q[kn])) + (std::abs(p[km]) + std::abs(q[km])) + std::sqrt(tang);
        d += tang / den;
    }
    return d;
}

using Exponent = std::array<int, 3>;

/// Polynomial in (y'', y_n, y_{n+1}) with coefficients in C (double or Rational).
/// Tangential variables carry weight 2, normal ones weight 1.
template <class C>
struct GrushinPolynomial {
    int dim = 3;
    std::map<Exponent, C> terms;

    GrushinPolynomial() = default;
    explicit GrushinPolynomial(int d) : dim(d) {}

    static GrushinPolynomial monomial(int d, Exponent e, C c = C(1)) {
        GrushinPolynomial p(d);
        if (c != C(0)) p.terms[e] = c;
        return p;
    }

    static int weighted_degree(const Exponent& e, int d) {
        int k = 0;
        for (int i = 0; i < d; ++i) k += (i < normal_index(d) ? 2 : 1) * e[i];
        return k;
    }

    bool is_zero() const { return terms.empty(); }

    /// Maximal weighted degree; -1 for the zero polynomial.
    int degree() const {
        int k = -1;
        for (const auto& [e, c] : terms) k = std::max(k, weighted_degree(e, dim));
        return k;
    }

    bool is_homogeneous(int k) const {
        for (const auto& [e, c] : terms)
            if (weighted_degree(e, dim) != k) return false;
        return true;
    }

    /// p = 0 on {y_n = 0}.
    bool vanishes_on_dirichlet() const {
        const int kn = normal_index(dim);
        for (const auto& [e, c] : terms)
            if (e[kn] == 0) return false;
        return true;
    }

    /// d_{n+1} p = 0 on {y_{n+1} = 0}.
    bool satisfies_neumann() const {
        const int km = vertical_index(dim);
        for (const auto& [e, c] : terms)
            if (e[km] == 1) return false;
        return true;
    }

    void add_term(const Exponent& e, const C& c) {
        if (c == C(0)) return;
        auto it = terms.find(e);
        if (it == terms.end()) {
            terms.emplace(e, c);
        } else {
            it->second += c;
            if (it->second == C(0)) terms.erase(it);
        }
    }

    GrushinPolynomial& operator+=(const GrushinPolynomial& o) {
        for (const auto& [e, c] : o.terms) add_term(e, c);
        return *this;
    }
    GrushinPolynomial& operator-=(const GrushinPolynomial& o) {
        for (const auto& [e, c] : o.terms) add_term(e, -c);
        return *this;
    }
    GrushinPolynomial& operator*=(const C& s) {
        if (s == C(0)) {
            terms.clear();
            return *this;
        }
        for (auto& [e, c] : terms) c *= s;
        return *this;
    }
    friend GrushinPolynomial operator+(GrushinPolynomial a, const GrushinPolynomial& b) { return a += b; }
    friend GrushinPolynomial operator-(GrushinPolynomial a, const GrushinPolynomial& b) { return a -= b; }
    friend GrushinPolynomial operator*(GrushinPolynomial a, const C& s) { return a *= s; }
    friend GrushinPolynomial operator*(const C& s, GrushinPolynomial a) { return a *= s; }
    friend GrushinPolynomial operator*(const GrushinPolynomial& a, const GrushinPolynomial& b) {
        GrushinPolynomial r(a.dim);
        for (const auto& [ea, ca] : a.terms)
            for (const auto& [eb, cb] : b.terms) r.add_term({ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]}, ca * cb);
        return r;
    }
    friend bool operator==(const GrushinPolynomial& a, const GrushinPolynomial& b) {
        return a.dim == b.dim && a.terms == b.terms;
    }

    GrushinPolynomial derivative(int k) const {
        GrushinPolynomial r(dim);
        for (const auto& [e, c] : terms) {
            if (e[k] == 0) continue;
            Exponent f = e;
            --f[k];
            r.add_term(f, c * C(e[k]));
        }
        return r;
    }

    template <class T>
    T evaluate_as(const std::array<T, 3>& y) const {
        T s(0);
        for (const auto& [e, c] : terms) {
            T m(c);
            for (int i = 0; i < dim; ++i)
                for (int k = 0; k < e[i]; ++k) m *= y[i];
            s += m;
        }
        return s;
    }

    double operator()(const Vec3& y) const {
        double s = 0;
        for (const auto& [e, c] : terms) {
            double m = to_double(c);
            for (int i = 0; i < dim; ++i) m *= std::pow(y[i], e[i]);
            s += m;
        }
        return s;
    }

    Vec3 gradient(const Vec3& y) const {
        Vec3 g{0, 0, 0};
        for (int k = 0; k < dim; ++k) g[k] = derivative(k)(y);
        return g;
    }

    Mat3 hessian(const Vec3& y) const {
        Mat3 H = Mat3::Zero();
        for (int k = 0; k < dim; ++k) {
            const auto dk = derivative(k);
            for (int l = k; l < dim; ++l) H(k, l) = H(l, k) = dk.derivative(l)(y);
        }
        return H;
    }

    GrushinPolynomial<double> to_double_poly() const {
        GrushinPolynomial<double> r(dim);
        for (const auto& [e, c] : terms) r.add_term(e, to_double(c));
        return r;
    }

    std::string str() const {
        if (terms.empty()) return "0";
        static const char* names3[3] = {"y1", "yn", "ym"};
        static const char* names2[3] = {"yn", "ym", ""};
        const char* const* names = dim == 3 ? names3 : names2;
        std::ostringstream os;
        bool first = true;
        for (auto it = terms.rbegin(); it != terms.rend(); ++it) {
            if (!first) os << " + ";
            first = false;
            os << "(" << it->second << ")";
            for (int i = 0; i < dim; ++i) {
                if (it->first[i] == 0) continue;
                os << "*" << names[i];
                if (it->first[i] > 1) os << "^" << it->first[i];
            }
        }
        return os.str();
    }
};

/// Delta_G p = (y_n^2 + y_{n+1}^2) Delta'' p + d_nn p + d_{n+1,n+1} p.
template <class C>
GrushinPolynomial<C> apply_grushin(const GrushinPolynomial<C>& p) {
    const int d = p.dim, kn = normal_index(d), km = vertical_index(d);
    GrushinPolynomial<C> tang(d);
    for (int i = 0; i < kn; ++i) tang += p.derivative(i).derivative(i);
    Exponent en{0, 0, 0}, em{0, 0, 0};
    en[kn] = 2;
    em[km] = 2;
    const auto r2 = GrushinPolynomial<C>::monomial(d, en) + GrushinPolynomial<C>::monomial(d, em);
    return r2 * tang + p.derivative(kn).derivative(kn) + p.derivative(km).derivative(km);
}

/// Delta_G applied to a C^2 function given its Hessian at y.
inline double apply_grushin(const Mat3& hess, const Vec3& y, int dim) {
    const int kn = normal_index(dim), km = vertical_index(dim);
    double tang = 0;
    for (int i = 0; i < kn; ++i) tang += hess(i, i);
    return (y[kn] * y[kn] + y[km] * y[km]) * tang + hess(kn, kn) + hess(km, km);
}

}  // namespace thinobs
