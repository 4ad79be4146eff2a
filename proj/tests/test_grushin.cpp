#include "thinobs/grushin.hpp"

#include <gtest/gtest.h>

using namespace thinobs;

namespace {

using RP = GrushinPolynomial<Rational>;

RP rmono(int dim, Exponent e, Rational c = 1) { return RP::monomial(dim, e, c); }

// y_n^3 - 3 y_n y_{n+1}^2 in the given dimension
RP model_cubic(int dim) {
    const int kn = normal_index(dim), km = vertical_index(dim);
    Exponent a{0, 0, 0}, b{0, 0, 0};
    a[kn] = 3;
    b[kn] = 1;
    b[km] = 2;
    return rmono(dim, a) + rmono(dim, b, -3);
}

bool spans_contain(const std::vector<RP>& basis, const RP& p) {
    auto extended = basis;
    extended.push_back(p);
    return canonical_span(extended, p.dim).size() == basis.size();
}

double max_error(const QuarterGridField& u, const ScalarFn& exact) {
    double e = 0;
    for (std::size_t p = 0; p < u.grid.size(); ++p)
        if (u.kind[p] != QuarterBc::exterior) e = std::max(e, std::abs(u.values[p] - exact(u.grid.coord(p))));
    return e;
}

}  // namespace

TEST(QuasiMetric, Examples) {
    EXPECT_EQ(quasi_metric({0.3, 0.2, -0.1}, {0.3, 0.2, -0.1}, 3), 0.0);
    EXPECT_DOUBLE_EQ(quasi_metric({0.5, 0, 0}, {-0.5, 0, 0}, 3), 1.0);
    EXPECT_DOUBLE_EQ(quasi_metric({1, 0, 0}, {0, 1, 0}, 3), 1.5);
    const Vec3 p = dilate(2, {1, 0, 0}, 3), q = dilate(2, {0, 1, 0}, 3);
    EXPECT_EQ(p[0], 4.0);
    EXPECT_EQ(q[1], 2.0);
    EXPECT_DOUBLE_EQ(quasi_metric(p, q, 3), 3.0);
    const Vec3 y{0.3, -0.2, 0.7};
    EXPECT_EQ(dilate(1, y, 3), y);
    EXPECT_THROW(dilate(0, y, 3), Error);
}

TEST(QuasiMetric, SymmetricAndHomogeneous) {
    Rng rng(5);
    for (int s = 0; s < 1000; ++s) {
        Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vec3 q{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double lambda = rng.uniform(0.1, 4);
        const double d = quasi_metric(p, q, 3);
        EXPECT_EQ(d, quasi_metric(q, p, 3));
        EXPECT_NEAR(quasi_metric(dilate(lambda, p, 3), dilate(lambda, q, 3), 3), lambda * d, 1e-12 * lambda * d);
        EXPECT_GT(d, 0.0);
    }
}

TEST(QuasiMetric, TriangleConstantIsBounded) {
    const double K = quasi_triangle_constant(3, 10000, 1);
    EXPECT_GE(K, 1.0);
    EXPECT_LE(K, 4.0);
}

TEST(GrushinOperator, PolynomialExamples) {
    const int d = 3;
    EXPECT_TRUE(apply_grushin(rmono(d, {1, 1, 0})).is_zero());
    EXPECT_TRUE(apply_grushin(model_cubic(d)).is_zero());
    const RP expected = rmono(d, {0, 2, 0}, 2) + rmono(d, {0, 0, 2}, 2);
    EXPECT_TRUE(apply_grushin(rmono(d, {2, 0, 0})) == expected);
    EXPECT_TRUE(apply_grushin(rmono(d, {0, 3, 0})) == rmono(d, {0, 1, 0}, 6));
}

TEST(GrushinOperator, StencilIsExactOnQuadratics) {
    const auto g = QuarterGrid::make(3, 9);
    QuarterGridField u;
    u.grid = g;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const auto c = g.ijk(p);
        u.kind.push_back(g.classify(c[0], c[1], c[2]));
        const Vec3 y = g.coord(p);
        u.values.push_back(y[0] * y[0] + 0.5 * y[1] * y[1]);
    }
    for (std::size_t p = 0; p < g.size(); ++p) {
        if (u.kind[p] != QuarterBc::interior && u.kind[p] != QuarterBc::neumann) continue;
        const Vec3 y = g.coord(p);
        EXPECT_NEAR(apply_grushin(u, p), 2 * (y[1] * y[1] + y[2] * y[2]) + 1.0, 1e-10);
    }
    EXPECT_THROW(apply_grushin(u, g.index(3, 0, 2)), Error);
}

TEST(GrushinOperator, HessianForm) {
    Mat3 H = Mat3::Zero();
    H(0, 0) = 2;
    H(1, 1) = 3;
    H(2, 2) = -1;
    EXPECT_DOUBLE_EQ(apply_grushin(H, {0, 0.5, -0.5}, 3), 0.5 * 2 + 3 - 1);
}

TEST(HomogeneousBasis, Examples) {
    EXPECT_EQ(homogeneous_basis(1, 3).size(), 2u);
    EXPECT_EQ(homogeneous_basis(2, 3).size(), 4u);
    const auto b3 = homogeneous_basis(3, 3);
    ASSERT_EQ(b3.size(), 6u);
    const std::vector<Exponent> expected{{0, 0, 3}, {0, 1, 2}, {0, 2, 1}, {0, 3, 0}, {1, 0, 1}, {1, 1, 0}};
    EXPECT_EQ(b3, expected);
    EXPECT_THROW(homogeneous_basis(-1, 3), Error);
}

TEST(HomogeneousBasis, MatchesEnumeration) {
    for (int dim : {2, 3})
        for (int k = 0; k <= 8; ++k) {
            std::size_t count = 0;
            for (int a = 0; a <= k; ++a)
                for (int b = 0; b <= k; ++b)
                    for (int c = 0; c <= k; ++c) {
                        if (dim == 2 && a > 0) continue;
                        if ((dim == 3 ? 2 * a : 0) + b + c == k) ++count;
                    }
            EXPECT_EQ(homogeneous_basis(k, dim).size(), count) << dim << " " << k;
            for (const auto& e : homogeneous_basis(k, dim)) EXPECT_EQ(RP::weighted_degree(e, dim), k);
        }
}

TEST(Polynomial, DilationLawIsExact) {
    for (int k = 1; k <= 5; ++k)
        for (const auto& p : harmonic_polynomials(k, 3, false)) {
            const std::array<Rational, 3> y{Rational(1, 3), Rational(-2, 5), Rational(3, 7)};
            const Rational lambda(3, 2);
            const std::array<Rational, 3> dy{lambda * lambda * y[0], lambda * y[1], lambda * y[2]};
            Rational lk = 1;
            for (int i = 0; i < k; ++i) lk *= lambda;
            EXPECT_EQ(p.evaluate_as(dy), lk * p.evaluate_as(y));
            EXPECT_TRUE(p.is_homogeneous(k));
        }
}

TEST(Harmonics, AnnihilatedExactly) {
    for (int dim : {2, 3})
        for (int k = 0; k <= 5; ++k)
            for (bool bc : {false, true})
                for (const auto& p : harmonic_polynomials(k, dim, bc)) {
                    EXPECT_TRUE(apply_grushin(p).is_zero()) << p.str();
                    if (bc) {
                        EXPECT_TRUE(p.vanishes_on_dirichlet());
                        EXPECT_TRUE(p.satisfies_neumann());
                    }
                }
}

TEST(Harmonics, LowDegreesWithBoundaryConditions) {
    for (int dim : {2, 3}) {
        const int kn = normal_index(dim);
        Exponent en{0, 0, 0};
        en[kn] = 1;
        const auto k1 = harmonic_polynomials(1, dim, true);
        ASSERT_EQ(k1.size(), 1u);
        EXPECT_TRUE(k1[0] == rmono(dim, en));
        EXPECT_TRUE(harmonic_polynomials(2, dim, true).empty());
        EXPECT_TRUE(harmonic_polynomials(4, dim, true).empty());
    }
    const auto k3 = harmonic_polynomials(3, 2, true);
    ASSERT_EQ(k3.size(), 1u);
    EXPECT_TRUE(spans_contain(k3, model_cubic(2)));
}

TEST(Harmonics, TangentialProductHasWeightedDegreeThree) {
    // y1 y_n carries weight 2 + 1
    const auto k3 = harmonic_polynomials(3, 3, true);
    ASSERT_EQ(k3.size(), 2u);
    EXPECT_TRUE(spans_contain(k3, rmono(3, {1, 1, 0})));
    EXPECT_TRUE(spans_contain(k3, model_cubic(3)));
}

TEST(Harmonics, DegreeCap) { EXPECT_THROW(harmonic_polynomials(9, 3, true), Error); }

TEST(MixedBvp, RecoversHarmonicData) {
    const auto g = QuarterGrid::make(3, 17);
    const ScalarFn exact = [](const Vec3& y) { return y[0] * y[1]; };
    const auto u = solve_mixed_bvp(g, [](const Vec3&) { return 0.0; }, exact);
    EXPECT_LE(max_error(u, exact), 1e-8);
}

TEST(MixedBvp, ZeroDataGivesZero) {
    const auto g = QuarterGrid::make(3, 17);
    const ScalarFn zero = [](const Vec3&) { return 0.0; };
    const auto u = solve_mixed_bvp(g, zero, zero);
    EXPECT_EQ(max_error(u, zero), 0.0);
}

TEST(MixedBvp, IsLinear) {
    const auto g = QuarterGrid::make(3, 17);
    const ScalarFn zero = [](const Vec3&) { return 0.0; };
    const ScalarFn f1 = [](const Vec3& y) { return 6 * y[1]; };
    const ScalarFn f2 = [](const Vec3& y) { return std::cos(3 * y[0]) * y[1] * y[2]; };
    const auto u1 = solve_mixed_bvp(g, f1, zero);
    const auto u2 = solve_mixed_bvp(g, f2, zero);
    const auto u12 = solve_mixed_bvp(g, [&](const Vec3& y) { return f1(y) + f2(y); }, zero);
    double e = 0, s = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        e = std::max(e, std::abs(u12.values[p] - u1.values[p] - u2.values[p]));
        s = std::max(s, std::abs(u12.values[p]));
    }
    EXPECT_GT(s, 0.0);
    EXPECT_LE(e, 1e-8 * s);
}

TEST(MixedBvp, ManufacturedCubicConvergesAtSecondOrder) {
    const ScalarFn exact = [](const Vec3& y) { return y[0] * y[0] * y[0]; };
    const ScalarFn f = [](const Vec3& y) { return 6 * y[0]; };
    std::vector<double> err;
    for (int n : {33, 65, 129}) {
        const auto g = QuarterGrid::make(2, n, QuarterShape::disk);
        err.push_back(max_error(solve_mixed_bvp(g, f, exact), exact));
    }
    EXPECT_GE(std::log2(err[0] / err[1]), 1.8);
    EXPECT_GE(std::log2(err[1] / err[2]), 1.8);
}

TEST(MixedBvp, ThreeDimensionalCubicIsReproducedOnTheBox) {
    const auto g = QuarterGrid::make(3, 17);
    const ScalarFn exact = [](const Vec3& y) { return y[1] * y[1] * y[1]; };
    const auto u = solve_mixed_bvp(g, [](const Vec3& y) { return 6 * y[1]; }, exact);
    EXPECT_LE(max_error(u, exact), 1e-8);
}

TEST(Campanato, HarmonicCubicIsExact) {
    const auto p = model_cubic(3).to_double_poly();
    const auto rep = campanato_decay([&](const Vec3& y) { return p(y); }, 3, {0.3, 0, 0}, {0.5, 0.25, 0.125});
    EXPECT_TRUE(rep.exact);
}

TEST(Campanato, SolvedCubicIsRepresented) {
    const auto g = QuarterGrid::make(3, 17);
    const ScalarFn exact = [](const Vec3& y) { return y[1] * y[1] * y[1]; };
    const auto u = solve_mixed_bvp(g, [](const Vec3& y) { return 6 * y[1]; }, exact);
    const auto rep = campanato_decay(u, {0, 0, 0}, {0.9, 0.7, 0.5});
    ASSERT_EQ(rep.rows.size(), 3u);
    for (const auto& row : rep.rows) EXPECT_LE(row.mean_sq, 1e-16 * std::max(row.u_mean_sq, 1e-300) + 1e-18);
}

TEST(Campanato, DegreeFiveHarmonicSlopeIsTen) {
    const auto k5 = harmonic_polynomials(5, 3, true);
    ASSERT_FALSE(k5.empty());
    for (const auto& member : k5) {
        const auto p = member.to_double_poly();
        const auto rep =
            campanato_decay([&](const Vec3& y) { return p(y); }, 3, {0, 0, 0}, {0.5, 0.25, 0.125, 0.0625});
        EXPECT_FALSE(rep.exact);
        EXPECT_NEAR(rep.slope, 10.0, 0.5) << member.str();
    }
}

TEST(Campanato, Errors) {
    const ScalarFn u = [](const Vec3& y) { return y[1]; };
    EXPECT_THROW(campanato_decay(u, 3, {0, 0.1, 0}, {0.5, 0.25, 0.125}), Error);
    EXPECT_THROW(campanato_decay(u, 3, {0, 0, 0}, {0.5, 0.25}), Error);
}
