#include "thinobs/metrics.hpp"

#include <gtest/gtest.h>

using namespace thinobs;

namespace {

Generator quadratic_h() { return make_poly_generator({0, 1, 0.1}); }

// FD divergence of a^{ij} d_j w with the analytic gradient of w.
double fd_divergence(const MetricField& m, const AnalyticField& w, const Vec3& x, double s) {
    double div = 0;
    for (int i = 0; i < m.dim; ++i) {
        Vec3 xp = x, xm = x;
        xp[i] += s;
        xm[i] -= s;
        const Mat3 ap = m.eval(xp), am = m.eval(xm);
        const Vec3 gp = w.gradient(xp), gm = w.gradient(xm);
        double fp = 0, fm = 0;
        for (int j = 0; j < m.dim; ++j) {
            fp += ap(i, j) * gp[j];
            fm += am(i, j) * gm[j];
        }
        div += (fp - fm) / (2 * s);
    }
    return div;
}

}  // namespace

TEST(Metrics, FlatIsIdentityWithZeroGradient) {
    for (int dim : {2, 3}) {
        const auto m = make_flat(dim);
        const Vec3 x{0.3, -0.2, 0.4};
        const Mat3 a = m.eval(x);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) EXPECT_EQ(a(i, j), i == j ? 1.0 : 0.0);
        const auto g = metric_gradient(m, x);
        for (const auto& gk : g) EXPECT_EQ(gk.cwiseAbs().maxCoeff(), 0.0);
        const auto rep = validate_normalization(m);
        EXPECT_TRUE(rep.all_pass());
        EXPECT_EQ(rep.a1_violation, 0.0);
        EXPECT_EQ(rep.a2_violation, 0.0);
    }
}

TEST(Metrics, FlatRejectsUnsupportedDimension) {
    EXPECT_THROW(make_flat(4), Error);
    try {
        make_flat(5);
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::validation);
    }
}

TEST(Metrics, EllipticityViolationIsMeasured) {
    Mat3 a = Mat3::Identity();
    a(0, 0) = 3;
    const auto rep = validate_normalization(make_constant_metric(3, a));
    EXPECT_FALSE(rep.a2);
    EXPECT_NEAR(rep.a2_violation, 1.0, 1e-12);
    EXPECT_FALSE(rep.a1);
}

TEST(Metrics, ThinPlaneCrossTermViolatesA3) {
    Mat3 a = Mat3::Identity();
    a(0, 2) = a(2, 0) = 0.1;
    const auto rep = validate_normalization(make_constant_metric(3, a));
    EXPECT_FALSE(rep.a3);
    EXPECT_NEAR(rep.a3_violation, 0.1, 1e-15);
    EXPECT_TRUE(rep.symmetric);
}

TEST(Metrics, PullbackMetricIsNormalized) {
    const auto o = make_pullback_oracle(quadratic_h());
    const Mat3 a0 = o.metric.eval({0, 0, 0});
    EXPECT_LE((a0 - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    const auto rep = validate_normalization(o.metric);
    EXPECT_TRUE(rep.a1);
    EXPECT_TRUE(rep.a2);
    EXPECT_TRUE(rep.a3);
    EXPECT_TRUE(o.metric.diagonal);
}

TEST(Metrics, PullbackGradientMatchesDifferences) {
    const auto o = make_pullback_oracle(quadratic_h());
    const Vec3 x{0.2, 0.3, 0.1};
    const auto g = o.metric.grad_eval(x);
    MetricField m = o.metric;
    m.grad_eval = nullptr;
    const auto gd = metric_gradient(m, x);
    for (int k = 0; k < 3; ++k) EXPECT_LE((g[k] - gd[k]).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Metrics, OracleVanishesOnContactSetAndIsNonnegative) {
    const auto o = make_pullback_oracle(quadratic_h());
    for (int i = -20; i <= 20; ++i) {
        const double y1 = 0.04 * i;
        const double g = o.fb_graph_exact(y1);
        for (int k = 0; k <= 20; ++k) {
            const double y2 = -1.0 + 0.1 * k;
            const double w = o.w_exact.value({y1, y2, 0.0});
            EXPECT_GE(w, 0.0);
            if (y2 <= g) {
                EXPECT_EQ(w, 0.0) << y1 << " " << y2;
            }
            if (y2 > g + 1e-3) {
                EXPECT_GT(w, 0.0);
            }
        }
    }
}

TEST(Metrics, OraclePushforwardResidualConvergesAtSecondOrder) {
    const auto o = make_pullback_oracle(quadratic_h());
    Rng rng(11);
    double e1 = 0, e2 = 0;
    for (int k = 0; k < 20; ++k) {
        const Vec3 x{rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.2, 0.8)};
        e1 = std::max(e1, std::abs(fd_divergence(o.metric, o.w_exact, x, 0.02)));
        e2 = std::max(e2, std::abs(fd_divergence(o.metric, o.w_exact, x, 0.01)));
    }
    EXPECT_GT(e1, 0.0);
    EXPECT_GE(std::log2(e1 / e2), 1.8);
}

TEST(Metrics, IdentityGeneratorGivesFlatMetricAndRotatedModel) {
    const auto o = make_pullback_oracle(make_poly_generator({0, 1}));
    const Vec3 y{0.3, -0.1, 0.2};
    EXPECT_LE((o.metric.eval(y) - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-14);
    const std::complex<double> z((y[1] - y[0]) / std::sqrt(2.0), y[2]);
    EXPECT_NEAR(o.w_exact.value(y), std::pow(z, 1.5).real(), 1e-13);
    EXPECT_NEAR(o.fb_graph_exact(0.37), 0.37, 0.0);
}

TEST(Metrics, RoughGeneratorHasHolderRegularity) {
    const auto o = make_pullback_oracle(make_abs_power_generator(1, 0.2, 1.5));
    EXPECT_EQ(o.metric.regularity.tag, RegularityTag::holder);
    EXPECT_NEAR(o.metric.regularity.gamma, 0.5, 1e-15);
    EXPECT_NEAR(o.fb_graph_exact(0.25), 0.25 + 0.2 * 0.125, 1e-15);
}

TEST(Metrics, OracleRejectsBadGenerators) {
    EXPECT_THROW(make_pullback_oracle(make_poly_generator({0.1, 1})), Error);
    EXPECT_THROW(make_pullback_oracle(make_poly_generator({0, 2})), Error);
    EXPECT_THROW(make_pullback_oracle(make_poly_generator({0, 1, 2})), Error);  // h' < 0 near -1
    EXPECT_THROW(make_pullback_oracle(quadratic_h(), 2), Error);
}

TEST(Metrics, ModelFieldDerivativesMatchDifferences) {
    const auto w = make_model_field(3);
    const Vec3 x{0.1, -0.3, 0.25};
    const double s = 1e-6;
    const Vec3 g = w.gradient(x);
    for (int k = 0; k < 3; ++k) {
        Vec3 xp = x, xm = x;
        xp[k] += s;
        xm[k] -= s;
        EXPECT_NEAR(g[k], (w.value(xp) - w.value(xm)) / (2 * s), 1e-7);
        const Vec3 gp = w.gradient(xp), gm = w.gradient(xm);
        for (int l = 0; l < 3; ++l) EXPECT_NEAR(w.hessian(x)(l, k), (gp[l] - gm[l]) / (2 * s), 1e-6);
    }
    // harmonic away from the thin plane
    EXPECT_NEAR(w.hessian(x).trace(), 0.0, 1e-12);
    EXPECT_EQ(w.value({0.2, -0.5, 0.0}), 0.0);
}

TEST(Metrics, ReduceObstacleZeroIsUnchanged) {
    ProblemSpec spec;
    spec.metric = make_flat(3);
    spec.boundary_data = make_model_field(3);
    const auto out = reduce_obstacle(spec);
    EXPECT_FALSE(out.f.value);
    const Vec3 x{0.1, 0.2, 0.3};
    EXPECT_EQ(out.boundary_data.value(x), spec.boundary_data.value(x));
}

TEST(Metrics, ReduceObstacleConcaveQuadraticGivesConstantSource) {
    for (int dim : {2, 3}) {
        ProblemSpec spec;
        spec.metric = make_flat(dim);
        spec.boundary_data = make_model_field(dim);
        const int km = vertical_index(dim);
        spec.obstacle.value = [km](const Vec3& x) {
            double s = 0;
            for (int i = 0; i < km; ++i) s += x[i] * x[i];
            return -s;
        };
        const auto out = reduce_obstacle(spec);
        EXPECT_FALSE(out.has_obstacle());
        const int n = dim - 1;
        for (const Vec3& x : {Vec3{0.1, 0.2, 0.3}, Vec3{-0.5, 0.4, 0.0}})
            EXPECT_NEAR(out.f_at(x), 2.0 * n, 1e-6);
        const Vec3 x{0.3, 0.2, 0.5};
        Vec3 xf = x;
        xf[km] = 0;
        EXPECT_NEAR(out.boundary_data.value(x), spec.boundary_data.value(x) - spec.obstacle.value(xf), 1e-15);
    }
}

TEST(Metrics, ReduceObstacleLinearGivesZeroSource) {
    ProblemSpec spec;
    spec.metric = make_flat(3);
    spec.boundary_data = make_model_field(3);
    spec.obstacle.value = [](const Vec3& x) { return 0.3 * x[0] - 0.7 * x[1] + 0.1; };
    const auto out = reduce_obstacle(spec);
    EXPECT_NEAR(out.f_at({0.2, -0.4, 0.6}), 0.0, 1e-8);
}

TEST(Metrics, ReduceObstacleRejectsNonDifferentiableObstacle) {
    ProblemSpec spec;
    spec.metric = make_flat(3);
    spec.obstacle.value = [](const Vec3&) { return kNaN; };
    EXPECT_THROW(reduce_obstacle(spec), Error);
}
