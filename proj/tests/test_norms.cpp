#include "thinobs/norms.hpp"

#include <gtest/gtest.h>

using namespace thinobs;

namespace {

constexpr double kAlpha = 0.5, kEps = 0.25;

const QuarterGrid& grid() {
    static const auto g = QuarterGrid::make(3, 17);
    return g;
}

double r_of(const Vec3& y) { return std::hypot(y[1], y[2]); }

double max_abs(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

std::vector<std::pair<double, double>> line_samples(double (*g)(double), int n = 129) {
    std::vector<std::pair<double, double>> s;
    for (int i = 0; i < n; ++i) {
        const double t = -1.0 + 2.0 * i / (n - 1);
        s.emplace_back(t, g(t));
    }
    return s;
}

}  // namespace

TEST(Seminorm, ConstantFieldIsZero) {
    const auto u = sample_quarter(grid(), [](const Vec3&) { return 4.2; });
    EXPECT_EQ(grushin_holder_seminorm(u, kAlpha).value, 0.0);
    // stencil weights sum to zero only up to rounding
    EXPECT_LE(grushin_holder_seminorm(u, kAlpha, 1).value, 1e-10);
}

TEST(Seminorm, NormalCoordinateHasLipschitzSeminormOne) {
    const auto u = sample_quarter(grid(), [](const Vec3& y) { return y[1]; });
    const auto s = grushin_holder_seminorm(u, 1.0);
    EXPECT_NEAR(s.value, 1.0, 1e-12);
    EXPECT_GT(s.pairs, 0u);
    EXPECT_EQ(s.band_hi.front(), 1.0);
}

TEST(Seminorm, SquareRootOnThePlane) {
    PairOptions opt;
    opt.r_max = 0;
    const auto u = sample_quarter(grid(), [](const Vec3& y) { return std::sqrt(std::abs(y[0])); });
    EXPECT_NEAR(grushin_holder_seminorm(u, 1.0, 0, opt).value, 1.0, 1e-12);
}

TEST(Seminorm, Errors) {
    const auto u = sample_quarter(grid(), [](const Vec3& y) { return y[1]; });
    EXPECT_THROW(grushin_holder_seminorm(u, kAlpha, 3), Error);
    EXPECT_THROW(grushin_holder_seminorm(u, 0.0), Error);
    PairOptions none;
    none.d_max = grid().h / 4;
    EXPECT_THROW(grushin_holder_seminorm(u, kAlpha, 0, none), Error);
    const auto disk = sample_quarter(QuarterGrid::make(2, 17, QuarterShape::disk), [](const Vec3&) { return 0.0; });
    EXPECT_THROW(grushin_holder_seminorm(disk, kAlpha), Error);
}

TEST(YNorm, MultipleOfNormalCoordinate) {
    const auto f = sample_quarter(grid(), [](const Vec3& y) { return 2.5 * y[1]; });
    const auto rep = y_norm(f, kAlpha, kEps);
    for (const auto& a : rep.profiles) EXPECT_NEAR(a.dn, 2.5, 1e-12);
    EXPECT_LE(max_abs(rep.components.at("f1")), 1e-12);
    EXPECT_LE(rep.terms.at("weighted_seminorm"), 1e-10);
    EXPECT_LE(rep.terms.at("f0_holder"), 1e-10);
}

TEST(YNorm, TangentialCoefficient) {
    const auto f = sample_quarter(grid(), [](const Vec3& y) { return y[1] * y[0]; });
    const auto rep = y_norm(f, kAlpha, kEps);
    for (const auto& a : rep.profiles) EXPECT_NEAR(a.dn, a.t, 1e-12);
    EXPECT_LE(max_abs(rep.components.at("f1")), 1e-10);
    EXPECT_LE(rep.remainder_on_dirichlet, 1e-10);
    // [y_1]_{C^{0,1/2}} on [-1,1] is 2^{1/2}
    EXPECT_NEAR(rep.terms.at("f0_holder"), std::sqrt(2.0), 1e-12);
}

TEST(YNorm, RadialCubeHasPowerRemainder) {
    const auto f = sample_quarter(grid(), [](const Vec3& y) { return std::pow(r_of(y), 3); });
    const double eps = 0.5;
    const auto rep = y_norm(f, 1.0, eps);
    for (const auto& a : rep.profiles) EXPECT_NEAR(a.dn, 0.0, 1e-12);
    const auto& f1 = rep.components.at("f1");
    for (std::size_t p = 0; p < grid().size(); ++p)
        EXPECT_NEAR(f1[p], std::pow(r_of(grid().coord(p)), eps), 1e-12);
    EXPECT_TRUE(std::isfinite(rep.value));
    EXPECT_GT(rep.value, 0.0);
    EXPECT_LE(rep.reconstruction_residual, 1e-12);
}

TEST(YNorm, Homogeneity) {
    const auto base = [](const Vec3& y) { return y[1] * y[0] * y[0] + std::pow(r_of(y), 2.5) * (1 + y[0]); };
    const auto f = sample_quarter(grid(), base);
    const auto f2 = sample_quarter(grid(), [&](const Vec3& y) { return -2.0 * base(y); });
    const auto f3 = sample_quarter(grid(), [&](const Vec3& y) { return 3.0 * base(y); });
    const double v = y_norm(f, kAlpha, kEps).value;
    EXPECT_GT(v, 0.0);
    EXPECT_EQ(y_norm(f2, kAlpha, kEps).value, 2.0 * v);
    EXPECT_NEAR(y_norm(f3, kAlpha, kEps).value, 3.0 * v, 1e-13 * v);
}

TEST(YNorm, RejectsFieldOutsideTheSpace) {
    // nonzero trace on P cannot be written as f_0 y_n + r^gamma f_1
    const auto f = sample_quarter(grid(), [](const Vec3&) { return 1.0; });
    try {
        y_norm(f, kAlpha, kEps);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
    EXPECT_THROW(y_norm(f, 1.5, kEps), Error);
}

TEST(XNorm, HarmonicCubicProfile) {
    const auto v = sample_quarter(grid(), [](const Vec3& y) { return y[1] * y[1] * y[1] - 3 * y[1] * y[2] * y[2]; });
    const auto rep = x_norm(v, kAlpha, kEps);
    for (const auto& a : rep.profiles) {
        EXPECT_NEAR(a.dnnn, 6.0, 1e-8);
        EXPECT_NEAR(a.dnmm, -6.0, 1e-8);
        EXPECT_NEAR(a.dn, 0.0, 1e-10);
        EXPECT_NEAR(a.din, 0.0, 1e-10);
        EXPECT_NEAR(a.dnn, 0.0, 1e-8);
    }
    for (const auto& [name, comp] : rep.components) EXPECT_LE(max_abs(comp), 1e-6) << name;
    EXPECT_LE(rep.remainder_on_dirichlet, 1e-8);
    EXPECT_LE(rep.terms.at("weighted_linf"), 1e-6);
}

TEST(XNorm, NormalCoordinate) {
    const auto v = sample_quarter(grid(), [](const Vec3& y) { return y[1]; });
    const auto rep = x_norm(v, kAlpha, kEps);
    for (const auto& a : rep.profiles) {
        EXPECT_NEAR(a.dn, 1.0, 1e-10);
        EXPECT_NEAR(a.din, 0.0, 1e-10);
        EXPECT_NEAR(a.dnnn, 0.0, 1e-8);
        EXPECT_NEAR(a.dnmm, 0.0, 1e-8);
    }
    EXPECT_TRUE(std::isfinite(rep.value));
    EXPECT_LE(rep.value, 1e-6);
}

TEST(XNorm, AnchorDependentMixedDerivative) {
    const auto v = sample_quarter(grid(), [](const Vec3& y) { return y[1] * y[0] * y[0]; });
    const auto rep = x_norm(v, kAlpha, kEps);
    for (const auto& a : rep.profiles) {
        EXPECT_NEAR(a.din, 2 * a.t, 1e-8);
        EXPECT_NEAR(a.dn, a.t * a.t, 1e-8);
    }
    // remainder y_n (y_1 - t)^2 is bounded by d^5 <= d^{3+2 alpha}
    EXPECT_TRUE(std::isfinite(rep.terms.at("weighted_linf")));
    EXPECT_LE(rep.terms.at("weighted_linf"), 10.0);
}

TEST(HolderExponent, SmoothCaseSaturates) {
    const auto e = fit_holder_exponent(line_samples([](double t) { return t * t; }));
    EXPECT_GE(e.alpha, 0.9);
    EXPECT_LE(e.alpha, 1.0);
}

TEST(HolderExponent, RoughGraphs) {
    EXPECT_NEAR(fit_holder_exponent(line_samples([](double t) { return t + 0.2 * std::pow(std::abs(t), 1.5); })).alpha,
                0.5, 0.1);
    EXPECT_NEAR(fit_holder_exponent(line_samples([](double t) { return t + 0.2 * std::pow(std::abs(t), 1.8); })).alpha,
                0.8, 0.1);
}

TEST(HolderExponent, ConsistentOnPurePowers) {
    for (double beta : {0.3, 0.5, 0.7}) {
        std::vector<std::pair<double, double>> s;
        for (int i = 0; i < 129; ++i) {
            const double t = -1.0 + i / 64.0;
            s.emplace_back(t, std::pow(std::abs(t), 1 + beta));
        }
        const auto e = fit_holder_exponent(s);
        EXPECT_NEAR(e.alpha, beta, 0.1) << beta;
        EXPECT_GE(e.levels, 2);
    }
}

TEST(HolderExponent, Errors) {
    EXPECT_THROW(fit_holder_exponent(line_samples([](double t) { return t; }, 8)), Error);
    // affine data has no second differences
    EXPECT_THROW(fit_holder_exponent(line_samples([](double t) { return 1 + t; })), Error);
    auto s = line_samples([](double t) { return t * t; });
    s[3].first += 1e-3;
    EXPECT_THROW(fit_holder_exponent(s), Error);
}

TEST(APriori, RatioIsBoundedOverManufacturedPairs) {
    using Fn = std::function<double(const Vec3&)>;
    auto r2 = [](const Vec3& y) { return y[1] * y[1] + y[2] * y[2]; };
    // (u, Delta_G u) with Delta_G = r^2 d_11 + d_nn + d_mm
    const std::vector<std::pair<Fn, Fn>> cases{
        {[](const Vec3& y) { return y[1] * y[0] * y[0]; }, [=](const Vec3& y) { return 2 * r2(y) * y[1]; }},
        {[](const Vec3& y) { return std::pow(y[1], 5); }, [](const Vec3& y) { return 20 * std::pow(y[1], 3); }},
        {[](const Vec3& y) { return std::pow(y[1], 3) * y[2] * y[2]; },
         [](const Vec3& y) { return 6 * y[1] * y[2] * y[2] + 2 * std::pow(y[1], 3); }},
        {[](const Vec3& y) { return y[1] * std::pow(y[0], 4); },
         [=](const Vec3& y) { return 12 * y[0] * y[0] * r2(y) * y[1]; }},
        {[](const Vec3& y) { return std::pow(y[1], 3) * y[0] * y[0]; },
         [=](const Vec3& y) { return 2 * r2(y) * std::pow(y[1], 3) + 6 * y[1] * y[0] * y[0]; }},
    };
    double worst = 0;
    for (std::size_t k = 0; k < cases.size(); ++k) {
        const auto u = sample_quarter(grid(), cases[k].first);
        const auto f = sample_quarter(grid(), cases[k].second);
        const double xu = x_norm(u, kAlpha, kEps).value, yf = y_norm(f, kAlpha, kEps).value;
        ASSERT_GT(yf, 0.0) << k;
        ASSERT_TRUE(std::isfinite(xu)) << k;
        worst = std::max(worst, xu / yf);
    }
    EXPECT_LE(worst, 1e3);
}
