#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "flmm/cli.hpp"

namespace {

struct RawArgs {
    std::string config_path;
    std::string input, output_dir, design, mean_spec, predict, scenario;
    int k_mean = 0, k_cov = 0, grid_d = 0, iterate = 0, threads = 0, replicates = -1;
    double var_level = 0, tol = 0, lambda_mean = 0, lambda_cov = 0;
    std::uint64_t seed = 0;
    std::vector<double> domain;
    std::vector<int> fixed_lags;
    std::vector<std::string> covariates;
    bool no_fix_truncation = false;
};

void add_common(CLI::App* sub, RawArgs& a) {
    sub->add_option("--config", a.config_path, "JSON configuration file");
    sub->add_option("--input", a.input, "input path");
    sub->add_option("--output-dir", a.output_dir, "artifact directory");
    sub->add_option("--seed", a.seed, "random seed");
    sub->add_option("--threads", a.threads, "worker threads");
}

void add_model(CLI::App* sub, RawArgs& a) {
    sub->add_option("--design", a.design, "fri or crossed")
        ->check(CLI::IsMember({"fri", "crossed"}));
    sub->add_option("--mean", a.mean_spec, "mean terms, e.g. \"t + t:order\"");
    sub->add_option("--k-mean", a.k_mean, "basis size per mean term");
    sub->add_option("--k-cov", a.k_cov, "marginal basis size for covariances");
    sub->add_option("--grid-d", a.grid_d, "evaluation grid size");
    sub->add_option("--var-level", a.var_level, "explained-variance level");
    sub->add_option("--fixed-lags", a.fixed_lags, "components per process (B C E)")
        ->expected(3);
    sub->add_option("--predict", a.predict, "eblup, famm, or both")
        ->check(CLI::IsMember({"eblup", "famm", "both"}));
    sub->add_option("--lambda-mean", a.lambda_mean, "fixed mean smoothing parameter");
    sub->add_option("--lambda-cov", a.lambda_cov, "fixed covariance smoothing parameter");
}

// Flags override config-file entries, which override the defaults.
void merge(flmm::cli::RunConfig& cfg, CLI::App* sub, const RawArgs& a) {
    if (!a.config_path.empty()) {
        std::ifstream in(a.config_path);
        if (!in) throw std::runtime_error("cannot open config " + a.config_path);
        flmm::cli::apply_config_file(cfg, nlohmann::json::parse(in));
    }
    auto hit = [&](const char* name) { return sub->count(name) > 0; };
    if (hit("--input")) cfg.input = a.input;
    if (hit("--output-dir")) cfg.output_dir = a.output_dir;
    if (hit("--seed")) cfg.seed = a.seed;
    if (hit("--threads")) cfg.threads = a.threads;
    if (sub->get_option_no_throw("--design") && hit("--design")) cfg.design = a.design;
    if (sub->get_option_no_throw("--mean") && hit("--mean")) cfg.mean_spec = a.mean_spec;
    if (sub->get_option_no_throw("--k-mean") && hit("--k-mean")) cfg.k_mean = a.k_mean;
    if (sub->get_option_no_throw("--k-cov") && hit("--k-cov")) cfg.k_cov = a.k_cov;
    if (sub->get_option_no_throw("--grid-d") && hit("--grid-d")) cfg.grid_d = a.grid_d;
    if (sub->get_option_no_throw("--var-level") && hit("--var-level")) cfg.var_level = a.var_level;
    if (sub->get_option_no_throw("--predict") && hit("--predict")) cfg.predict = a.predict;
    if (sub->get_option_no_throw("--lambda-mean") && hit("--lambda-mean"))
        cfg.lambda_mean = a.lambda_mean;
    if (sub->get_option_no_throw("--lambda-cov") && hit("--lambda-cov"))
        cfg.lambda_cov = a.lambda_cov;
    if (sub->get_option_no_throw("--fixed-lags") && hit("--fixed-lags"))
        cfg.fixed_lags = std::array<int, 3>{a.fixed_lags[0], a.fixed_lags[1], a.fixed_lags[2]};
    if (sub->get_option_no_throw("--iterate") && hit("--iterate")) cfg.iterate = a.iterate;
    if (sub->get_option_no_throw("--tol") && hit("--tol")) cfg.tol = a.tol;
    if (sub->get_option_no_throw("--domain") && hit("--domain"))
        cfg.domain = std::make_pair(a.domain[0], a.domain[1]);
    if (sub->get_option_no_throw("--covariates") && hit("--covariates"))
        cfg.schema.covariates = a.covariates;
    if (sub->get_option_no_throw("--scenario") && hit("--scenario"))
        cfg.scenario_preset = a.scenario;
    if (sub->get_option_no_throw("--replicates") && hit("--replicates"))
        cfg.replicates = a.replicates;
    if (sub->get_option_no_throw("--no-fix-truncation") && hit("--no-fix-truncation"))
        cfg.fix_truncation = false;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Functional linear mixed models for irregularly sampled curves"};
    app.require_subcommand(1);
    RawArgs a;

    CLI::App* fit = app.add_subcommand("fit", "fit a curve set and write all artifacts");
    add_common(fit, a);
    add_model(fit, a);
    fit->add_option("--iterate", a.iterate, "extra refinement passes");
    fit->add_option("--tol", a.tol, "relative mean change to stop iterating");
    fit->add_option("--domain", a.domain, "domain bounds t_lo t_hi")->expected(2);
    fit->add_option("--covariates", a.covariates, "covariate column names");

    CLI::App* sim = app.add_subcommand("simulate", "run a replicated scenario study");
    add_common(sim, a);
    add_model(sim, a);
    sim->add_option("--scenario", a.scenario, "named scenario preset (sparse)");
    sim->add_option("--replicates", a.replicates, "number of replicates");
    sim->add_flag("--no-fix-truncation", a.no_fix_truncation,
                  "truncate by explained variance instead of the true counts");

    CLI::App* dec = app.add_subcommand("decompose", "eigen analysis of exported surfaces");
    add_common(dec, a);
    dec->add_option("--var-level", a.var_level, "explained-variance level");
    dec->add_option("--fixed-lags", a.fixed_lags, "components per process (B C E)")->expected(3);

    CLI11_PARSE(app, argc, argv);

    flmm::cli::RunConfig cfg;
    CLI::App* active = fit->parsed() ? fit : (sim->parsed() ? sim : dec);
    cfg.command = fit->parsed() ? "fit" : (sim->parsed() ? "simulate" : "decompose");
    try {
        merge(cfg, active, a);
        return flmm::cli::run(cfg);
    } catch (const std::exception& e) {
        std::cerr << "{\"error\": \"" << e.what() << "\"}\n";
        return 1;
    }
}
