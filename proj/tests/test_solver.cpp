#include "thinobs/split.hpp"

#include <gtest/gtest.h>

using namespace thinobs;

namespace {

ProblemSpec flat_spec(int dim = 3) {
    ProblemSpec s;
    s.metric = make_flat(dim);
    s.boundary_data = make_model_field(dim);
    return s;
}

ProblemSpec pullback_spec() {
    const auto o = make_pullback_oracle(make_poly_generator({0, 1, 0.1}));
    ProblemSpec s;
    s.metric = o.metric;
    s.boundary_data = o.w_exact;
    return s;
}

double max_abs(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Max |A w| / diag at interior nodes with x_{n+1} >= 0.25 and |x''|, |x_n| <= 0.75.
double stencil_defect(const ProblemSpec& spec, int n) {
    const auto g = HalfGrid::make(3, n);
    const auto op = assemble(spec, g);
    std::vector<double> w(g.size());
    for (std::size_t p = 0; p < g.size(); ++p) w[p] = spec.boundary_data.value(g.coord(p));
    double e = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        const Vec3 x = g.coord(p);
        if (g.kind(p) != NodeKind::interior || x[2] < 0.25 || x[2] > 0.75) continue;
        if (std::abs(x[0]) > 0.75 || std::abs(x[1]) > 0.75) continue;
        e = std::max(e, std::abs(op.apply_row(p, w)) / op.diag[p]);
    }
    return e;
}

}  // namespace

TEST(Grid, ShapeAndNodeKinds) {
    const auto g = HalfGrid::make(3, 33);
    EXPECT_EQ(g.shape[0], 33);
    EXPECT_EQ(g.shape[2], 17);
    EXPECT_DOUBLE_EQ(g.h, 1.0 / 16);
    EXPECT_EQ(g.kind({0, 5, 5}), NodeKind::outer_boundary);
    EXPECT_EQ(g.kind({5, 5, 16}), NodeKind::outer_boundary);
    EXPECT_EQ(g.kind({5, 5, 0}), NodeKind::thin_plane);
    EXPECT_EQ(g.kind({5, 5, 3}), NodeKind::interior);
    const auto c = g.locate({0.0, 0.0, 0.0});
    EXPECT_EQ(c[0], 16);
    EXPECT_EQ(c[2], 0);
    for (std::size_t p : {std::size_t(0), std::size_t(1234), g.size() - 1}) EXPECT_EQ(g.index(g.ijk(p)), p);
    EXPECT_THROW(HalfGrid::make(3, 32), Error);
    EXPECT_THROW(HalfGrid::make(4, 33), Error);
}

TEST(Assemble, RequiresSpacingAtMostOneSixteenth) {
    EXPECT_THROW(assemble(flat_spec(), HalfGrid::make(3, 17)), Error);
    EXPECT_NO_THROW(assemble(flat_spec(), HalfGrid::make(3, 33)));
}

TEST(Assemble, FlatInteriorRowsAreTheLaplacianStencil) {
    const auto g = HalfGrid::make(3, 33);
    const auto op = assemble(flat_spec(), g);
    const double ih2 = 1.0 / (g.h * g.h);
    for (std::size_t p = 0; p < g.size(); ++p) {
        if (g.kind(p) != NodeKind::interior) continue;
        ASSERT_EQ(op.row_ptr[p + 1] - op.row_ptr[p], 6u);
        EXPECT_NEAR(op.diag[p], 6 * ih2, 1e-9);
        for (std::size_t e = op.row_ptr[p]; e < op.row_ptr[p + 1]; ++e) EXPECT_NEAR(op.val[e], -ih2, 1e-9);
    }
}

TEST(Assemble, RowSumsVanish) {
    for (const auto& spec : {flat_spec(), pullback_spec()}) {
        const auto g = HalfGrid::make(3, 33);
        const auto op = assemble(spec, g);
        const std::vector<double> ones(g.size(), 1.0);
        for (std::size_t p = 0; p < g.size(); ++p) {
            if (op.weight[p] == 0) continue;
            EXPECT_NEAR(op.apply_row(p, ones) / op.diag[p], 0.0, 1e-12);
        }
    }
}

TEST(Assemble, PullbackStencilDefectIsSecondOrder) {
    const auto spec = pullback_spec();
    const double e33 = stencil_defect(spec, 33), e65 = stencil_defect(spec, 65);
    EXPECT_GT(e33, 0.0);
    EXPECT_GE(std::log2(e33 / e65), 1.8);
}

TEST(Signorini, ZeroDataGivesZeroSolution) {
    ProblemSpec spec;
    spec.metric = make_flat(3);
    spec.boundary_data.value = [](const Vec3&) { return 0.0; };
    const auto g = HalfGrid::make(3, 33);
    const auto sol = solve_signorini(assemble(spec, g), spec, SolverOptions{});
    EXPECT_TRUE(sol.converged);
    EXPECT_EQ(max_abs(sol.w), 0.0);
}

TEST(Signorini, FlatModelInvariants) {
    const auto spec = flat_spec();
    const auto g = HalfGrid::make(3, 33);
    const auto op = assemble(spec, g);
    SolverOptions opt;
    const auto sol = solve_signorini(op, spec, opt);
    const auto rep = residual_report(sol, op);
    EXPECT_TRUE(rep.converged);
    EXPECT_LE(rep.interior_residual, opt.tol_r);
    EXPECT_GE(rep.min_thin_w, -opt.tol_c);
    EXPECT_LE(rep.max_flux, opt.tol_c);
    EXPECT_LE(rep.max_complementarity, opt.tol_c);
    double emax = 0, wmax = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        emax = std::max(emax, std::abs(sol.w[p] - spec.boundary_data.value(g.coord(p))));
        wmax = std::max(wmax, std::abs(sol.w[p]));
    }
    EXPECT_LE(emax / wmax, 5e-2);
}

TEST(Signorini, TwoDimensionalModelRecovery) {
    const auto spec = flat_spec(2);
    const auto g = HalfGrid::make(2, 65);
    const auto sol = solve_signorini(assemble(spec, g), spec, SolverOptions{});
    double emax = 0, wmax = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        emax = std::max(emax, std::abs(sol.w[p] - spec.boundary_data.value(g.coord(p))));
        wmax = std::max(wmax, std::abs(sol.w[p]));
    }
    EXPECT_LE(emax / wmax, 5e-2);
}

TEST(Signorini, EnergyDecreasesMonotonically) {
    const auto spec = pullback_spec();
    const auto g = HalfGrid::make(3, 33);
    SolverOptions opt;
    opt.record_energy = true;
    opt.omega = 1.2;
    const auto sol = solve_signorini(assemble(spec, g), spec, opt);
    ASSERT_GT(sol.energy.size(), 10u);
    for (std::size_t k = 1; k < sol.energy.size(); ++k)
        EXPECT_LE(sol.energy[k], sol.energy[k - 1] + 1e-12 * std::abs(sol.energy[k - 1])) << k;
}

TEST(Signorini, ComparisonPrinciple) {
    auto lo = flat_spec(), hi = flat_spec();
    const auto model = make_model_field(3);
    hi.boundary_data.value = [model](const Vec3& x) { return model.value(x) + 0.05; };
    const auto g = HalfGrid::make(3, 33);
    const auto a = solve_signorini(assemble(lo, g), lo, SolverOptions{});
    const auto b = solve_signorini(assemble(hi, g), hi, SolverOptions{});
    for (std::size_t p = 0; p < g.size(); ++p) EXPECT_LE(a.w[p], b.w[p] + 1e-8);
}

TEST(Signorini, InitialGuessDoesNotChangeTheLimit) {
    const auto spec = flat_spec();
    const auto g = HalfGrid::make(3, 33);
    const auto op = assemble(spec, g);
    const auto a = solve_signorini(op, spec, SolverOptions{});
    const std::vector<double> guess(g.size(), 0.3);
    const auto b = solve_signorini(op, spec, SolverOptions{}, &guess);
    for (std::size_t p = 0; p < g.size(); ++p) EXPECT_NEAR(a.w[p], b.w[p], 1e-6);
}

TEST(Signorini, Errors) {
    const auto spec = flat_spec();
    const auto g = HalfGrid::make(3, 33);
    const auto op = assemble(spec, g);
    SolverOptions bad;
    bad.omega = 2.0;
    try {
        solve_signorini(op, spec, bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::validation);
    }
    SolverOptions few;
    few.max_iter = 5;
    try {
        solve_signorini(op, spec, few);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
    const std::vector<double> wrong(3, 0.0);
    EXPECT_THROW(solve_signorini(op, spec, SolverOptions{}, &wrong), Error);
}

TEST(Residuals, ExactSamplesSatisfyComplementarity) {
    const auto o = make_pullback_oracle(make_poly_generator({0, 1, 0.1}));
    const auto g = HalfGrid::make(3, 33);
    const auto sol = sample_field(g, o.w_exact, o.metric);
    double comp = 0, wmin = 0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        if (g.kind(p) != NodeKind::thin_plane) continue;
        comp = std::max(comp, std::abs(sol.w[p] * sol.flux[p]));
        wmin = std::min(wmin, sol.w[p]);
    }
    EXPECT_LE(comp, 1e-8);
    EXPECT_GE(wmin, 0.0);
}

TEST(Residuals, ZeroFieldReportsSourceNorm) {
    ProblemSpec spec;
    spec.metric = make_flat(3);
    spec.f.value = [](const Vec3&) { return 0.1; };
    spec.boundary_data.value = [](const Vec3&) { return 0.0; };
    const auto g = HalfGrid::make(3, 33);
    const auto op = assemble(spec, g);
    const auto rep = residual_report(op, std::vector<double>(g.size(), 0.0));
    EXPECT_GT(rep.source_norm, 0.0);
    EXPECT_DOUBLE_EQ(rep.interior_residual, rep.source_norm);
    EXPECT_EQ(rep.max_complementarity, 0.0);
}

TEST(Split, FlatZeroSourceGivesVanishingCorrection) {
    const auto spec = flat_spec();
    const auto g = HalfGrid::make(3, 33);
    const auto op = assemble(spec, g);
    const auto sol = solve_signorini(op, spec, SolverOptions{});
    const auto fbm = extract_sets(sol);
    const auto sp = solve_split(spec, op, sol, fbm);
    EXPECT_LE(max_abs(sp.u_tilde), 1e-6);
    EXPECT_LE(sp.consistency, 1e-6);
}

TEST(Split, ConstantSourceGivesNonzeroCorrection) {
    auto spec = flat_spec();
    spec.f.value = [](const Vec3&) { return 0.1; };
    const auto g = HalfGrid::make(3, 33);
    const auto op = assemble(spec, g);
    const auto sol = solve_signorini(op, spec, SolverOptions{});
    const auto fbm = extract_sets(sol);
    const auto sp = solve_split(spec, op, sol, fbm);
    EXPECT_GT(max_abs(sp.u_tilde), 1e-4);
    EXPECT_LE(sp.consistency, 1e-6);
}
