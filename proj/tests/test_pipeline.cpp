#include "thinobs/pipeline.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace thinobs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("thinobs_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::string validation_message(const Json& j) {
    try {
        validate_config(j);
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::validation);
        return e.what();
    }
    ADD_FAILURE() << "config accepted: " << j.dump();
    return {};
}

Json oracle_config(int n) {
    Json j = Json::parse(R"({
        "dim": 3,
        "metric": {"kind": "pullback", "h": {"kind": "poly", "coefficients": [0, 1, 0.1]}},
        "stages": ["oracle", "analyze-fb", "hodograph", "norms"]
    })");
    j["grid"]["n_per_axis"] = n;
    return j;
}

}  // namespace

TEST(Config, MinimalFlatConfigGetsDefaults) {
    const auto c = validate_config(Json::parse(R"({"metric": {"kind": "flat"}})"));
    EXPECT_EQ(c.dim, 3);
    EXPECT_EQ(c.solver.tol_c, 1e-8);
    EXPECT_EQ(c.n_per_axis, 65);
    EXPECT_EQ(c.stages, (std::vector<std::string>{"solve", "analyze-fb"}));
    EXPECT_EQ(c.normalized["grid"]["n_per_axis"], 65);
    EXPECT_EQ(c.normalized["seed"], 7);
}

TEST(Config, PullbackWithoutGeneratorNamesTheField) {
    const auto msg = validation_message(Json::parse(R"({"metric": {"kind": "pullback"}})"));
    EXPECT_NE(msg.find("metric.h"), std::string::npos) << msg;
}

TEST(Config, HodographNeedsAField) {
    const auto msg = validation_message(Json::parse(R"({"stages": ["hodograph"]})"));
    EXPECT_NE(msg.find("requires 'solve' or 'oracle'"), std::string::npos) << msg;
}

TEST(Config, FiveDimensionsIsAValidationError) {
    try {
        validate_config(Json::parse(R"({"dim": 5})"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(exit_code_for(e), 1);
        EXPECT_EQ(std::string(e.what()), "dim: unsupported dimension 5 (supported: 2, 3)");
    }
}

TEST(Config, UnknownKeysAndStages) {
    EXPECT_EQ(validation_message(Json::parse(R"({"grid": {"n": 33}})")), "grid.n: unknown key");
    EXPECT_EQ(validation_message(Json::parse(R"({"stages": ["solve", "plot"]})")), "stages[1]: unknown stage 'plot'");
    EXPECT_EQ(validation_message(Json::parse(R"({"solver": {"omega": "fast"}})")), "solver.omega: expected a number");
    EXPECT_EQ(validation_message(Json::parse(R"({"grid": {"n_per_axis": 64}})")),
              "grid.n_per_axis: must be odd and at least 5");
    validation_message(Json::parse(R"({"stages": ["oracle", "solve"]})"));
    validation_message(Json::parse(R"({"source": {"f": 0.1}, "stages": ["oracle"]})"));
    validation_message(Json::parse(R"({"dim": 2, "metric": {"kind": "pullback", "h": {"kind": "poly", "coefficients": [0, 1]}}})"));
}

TEST(Config, GeneratorValidation) {
    const auto msg = validation_message(
        Json::parse(R"({"metric": {"kind": "pullback", "h": {"kind": "poly", "coefficients": [0, 2]}}})"));
    EXPECT_EQ(msg, "metric.h: h'(0) must equal 1");
    const auto c = validate_config(Json::parse(
        R"({"metric": {"kind": "pullback", "h": {"kind": "abs_power", "amplitude": 0.2, "exponent": 1.5}}})"));
    EXPECT_FALSE(c.h.smooth());
}

TEST(Pipeline, OracleRunWritesArtifacts) {
    const auto dir = scratch("oracle");
    const auto res = run_pipeline(validate_config(oracle_config(33)), dir);
    ASSERT_EQ(res.exit_code, 0) << res.message;
    for (const char* f : {"w.csv", "report.json", "fb_points.csv", "fb_graph.csv", "profiles.json", "legendre.csv",
                          "F_residual.csv", "expansion.json", "exponents.csv", "summary.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const Json sm = Json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(sm["status"], "ok");
    std::vector<std::string> names;
    for (const auto& s : sm["stages"]) names.push_back(s["name"]);
    EXPECT_EQ(names, (std::vector<std::string>{"oracle", "analyze-fb", "hodograph", "norms"}));
    for (const auto& s : sm["stages"])
        if (s["name"] == "analyze-fb")
            for (const auto& c : s["checks"])
                if (c["name"] == "graph_error_cells") {
                    EXPECT_TRUE(c["pass"].get<bool>());
                }
}

TEST(Pipeline, DecayTablesAndExponentSummaryLayout) {
    const auto dir = scratch("layout");
    const auto res = run_pipeline(validate_config(oracle_config(33)), dir);
    ASSERT_EQ(res.exit_code, 0) << res.message;
    const auto rows = lines(dir / "F_residual.csv");
    ASSERT_GE(rows.size(), 3u);
    EXPECT_EQ(rows[0], "r,max_err,mean_sq_err,count");
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double r = std::stod(rows[i].substr(0, rows[i].find(',')));
        EXPECT_LT(r, prev);
        prev = r;
    }
    const auto ex = lines(dir / "exponents.csv");
    ASSERT_GE(ex.size(), 2u);
    EXPECT_EQ(ex[0], "name,estimate,window,predicted");
    EXPECT_EQ(ex[1].rfind("fb_graph_holder,", 0), 0u);
}

TEST(Pipeline, RerunIsByteIdentical) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    const auto cfg = validate_config(oracle_config(33));
    ASSERT_EQ(run_pipeline(cfg, a).exit_code, 0);
    ASSERT_EQ(run_pipeline(cfg, b).exit_code, 0);
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        const auto other = b / e.path().filename();
        ASSERT_TRUE(fs::exists(other)) << other;
        EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path().filename();
        ++compared;
    }
    EXPECT_GE(compared, 10u);
}

TEST(Pipeline, FlatSolveReportsThreeHalvesAtFreeBoundary) {
    const auto dir = scratch("flat");
    const auto res = run_pipeline(validate_config(Json::parse(R"({"metric": {"kind": "flat"}})")), dir);
    ASSERT_EQ(res.exit_code, 0) << res.message;
    EXPECT_TRUE(res.summary["invariants_pass"].get<bool>());
    const Json prof = Json::parse(slurp(dir / "profiles.json"));
    ASSERT_EQ(prof.size(), 3u);
    for (const auto& p : prof) EXPECT_NEAR(p["kappa"].get<double>(), 1.5, 0.05);
}

TEST(Pipeline, NumericalFailureExitsWithTwoAndNamesTheStage) {
    const auto dir = scratch("fail");
    const auto cfg = validate_config(Json::parse(R"({"grid": {"n_per_axis": 33}, "solver": {"max_iter": 5}})"));
    const auto res = run_pipeline(cfg, dir);
    EXPECT_EQ(res.exit_code, 2);
    EXPECT_EQ(res.message.rfind("solve: ", 0), 0u) << res.message;
    const Json sm = Json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(sm["status"], "error");
    EXPECT_EQ(sm["error"]["stage"], "solve");
}

TEST(Pipeline, StoredFieldRoundTrip) {
    const auto dir = scratch("stored"), out = scratch("stored_fb");
    auto j = oracle_config(33);
    j["stages"] = {"oracle"};
    ASSERT_EQ(run_pipeline(validate_config(j), dir).exit_code, 0);
    RunConfig cfg;
    auto st = load_field_run(dir, cfg);
    EXPECT_EQ(cfg.metric_kind, "pullback");
    const auto direct = sample_field(HalfGrid::make(3, 33), st.spec.boundary_data, st.spec.metric);
    ASSERT_EQ(st.sol->w.size(), direct.w.size());
    for (std::size_t p = 0; p < direct.w.size(); ++p) EXPECT_EQ(st.sol->w[p], direct.w[p]);
    cfg.stages = {"analyze-fb"};
    EXPECT_EQ(run_pipeline(cfg, out, std::move(st)).exit_code, 0);
    EXPECT_TRUE(fs::exists(out / "fb_points.csv"));
}

TEST(Pipeline, QuarterFieldCsvRoundTrip) {
    const auto dir = scratch("quarter");
    fs::create_directories(dir);
    const auto g = QuarterGrid::make(3, 9);
    const auto u = sample_quarter(g, [](const Vec3& y) { return y[1] * y[0] + 0.1; });
    write_quarter_field(dir / "u.csv", u);
    const auto v = read_quarter_field((dir / "u.csv").string());
    ASSERT_EQ(v.values.size(), u.values.size());
    for (std::size_t p = 0; p < u.values.size(); ++p) EXPECT_EQ(v.values[p], u.values[p]);
    EXPECT_THROW(read_quarter_field((dir / "missing.csv").string()), Error);
}
