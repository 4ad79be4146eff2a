// SPDX-License-Identifier: MIT
// Command line front end: solve, analyze-fb, hodograph, grushin, norms, pipeline.

#include "thinobs/pipeline.hpp"

#include "CLI11.hpp"

#include <omp.h>

#include <iostream>

using namespace thinobs;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::string out;
    long seed = -1;
    int threads = 0;
};

RunConfig load_config(const Globals& g, const std::vector<std::string>& stages) {
    if (g.config.empty()) fail_validation("--config: required");
    Json j = read_json_file(g.config);
    if (!stages.empty()) j["stages"] = stages;
    if (g.seed >= 0) j["seed"] = g.seed;
    return validate_config(j);
}

fs::path out_dir(const Globals& g, const RunConfig& cfg) { return g.out.empty() ? fs::path(cfg.output) : fs::path(g.out); }

int finish(const PipelineResult& r) {
    if (r.exit_code != 0) std::cerr << "error: " << r.message << "\n";
    return r.exit_code;
}

/// Reruns one stage on the field stored by an earlier solve or oracle run.
int rerun_on_field(const std::string& stage, const std::string& in, const std::string& out) {
    RunConfig cfg;
    PipelineState st = load_field_run(in, cfg);
    RunConfig staged = cfg;
    staged.stages = {stage};
    staged.normalized["stages"] = staged.stages;
    return finish(run_pipeline(staged, out, std::move(st)));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Thin obstacle problem: solver, free boundary, hodograph and Grushin analysis"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "run configuration (JSON)");
    app.add_option("--out", g.out, "output directory or file");
    app.add_option("--seed", g.seed, "override the configured seed")->check(CLI::NonNegativeNumber);
    app.add_option("--threads", g.threads, "OpenMP thread count (0 keeps the runtime default)")
        ->check(CLI::NonNegativeNumber);

    auto* solve = app.add_subcommand("solve", "solve the discrete problem and write w.csv and report.json");
    solve->fallthrough();

    std::string in_dir;
    auto* fb = app.add_subcommand("analyze-fb", "free boundary, vanishing orders and profiles of a stored run");
    fb->add_option("--in", in_dir, "directory of a solve run")->required();
    fb->fallthrough();

    std::string hod_in;
    auto* hod = app.add_subcommand("hodograph", "hodograph map, Legendre field and expansions of a stored run");
    hod->add_option("--in", hod_in, "directory of a solve or oracle run")->required();
    hod->fallthrough();

    std::string task;
    int gdim = 3, max_degree = 5;
    auto* gr = app.add_subcommand("grushin", "harmonic bases, mixed BVP convergence and Campanato decay");
    gr->add_option("--task", task, "harmonics | bvp | campanato")
        ->required()
        ->check(CLI::IsMember({"harmonics", "bvp", "campanato"}));
    gr->add_option("--dim", gdim, "dimension for the harmonic basis")->check(CLI::IsMember({2, 3}));
    gr->add_option("--max-degree", max_degree, "largest weighted degree")->check(CLI::Range(0, 8));
    gr->fallthrough();

    std::string space, field_in;
    double alpha = 0.5, eps = 0.25;
    int order = 0;
    auto* nm = app.add_subcommand("norms", "sampled X, Y or Hölder norms of a quarter-grid field");
    nm->add_option("--space", space, "X | Y | holder")->required()->check(CLI::IsMember({"X", "Y", "holder"}));
    nm->add_option("--alpha", alpha, "Hölder exponent")->check(CLI::Range(0.0, 1.0));
    nm->add_option("--eps", eps, "weight offset")->check(CLI::Range(0.0, 1.0));
    nm->add_option("--order", order, "derivative order of the Hölder seminorm")->check(CLI::Range(0, 2));
    nm->add_option("--in", field_in, "field CSV")->required();
    nm->fallthrough();

    auto* pipe = app.add_subcommand("pipeline", "run every configured stage and write summary.json");
    pipe->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (g.threads > 0) omp_set_num_threads(g.threads);

    try {
        if (solve->parsed()) {
            const auto cfg = load_config(g, {"solve"});
            return finish(run_pipeline(cfg, out_dir(g, cfg)));
        }
        if (fb->parsed()) {
            if (g.out.empty()) fail_validation("--out: required");
            return rerun_on_field("analyze-fb", in_dir, g.out);
        }
        if (hod->parsed()) {
            if (g.out.empty()) fail_validation("--out: required");
            return rerun_on_field("hodograph", hod_in, g.out);
        }
        if (gr->parsed()) {
            Json j = g.config.empty() ? Json::object() : read_json_file(g.config);
            j["stages"] = {"grushin"};
            j["dim"] = gdim;
            j["grushin"]["tasks"] = {task};
            j["grushin"]["max_degree"] = max_degree;
            const auto cfg = validate_config(j);
            return finish(run_pipeline(cfg, out_dir(g, cfg)));
        }
        if (nm->parsed()) {
            if (g.out.empty()) fail_validation("--out: required");
            const auto u = read_quarter_field(field_in);
            NormOptions opt;
            opt.pairs.seed = g.seed >= 0 ? std::uint64_t(g.seed) : 7;
            Json rep;
            if (space == "X") rep = holder_report_json(x_norm(u, alpha, eps, opt));
            else if (space == "Y") rep = holder_report_json(y_norm(u, alpha, eps, opt));
            else rep = seminorm_report_json(grushin_holder_seminorm(u, alpha, order, opt.pairs), alpha);
            const fs::path out(g.out);
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            write_json(out, rep);
            return 0;
        }
        if (pipe->parsed()) {
            const auto cfg = load_config(g, {});
            return finish(run_pipeline(cfg, out_dir(g, cfg)));
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
