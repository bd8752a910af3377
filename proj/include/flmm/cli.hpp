#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flmm/pipeline.hpp"
#include "flmm/sim.hpp"

namespace flmm::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline std::string num17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---- run configuration ---------------------------------------------------

// All knobs of the three subcommands. Values resolve as
// built-in defaults < config file < explicit command-line flags.
struct RunConfig {
    std::string command;  // fit | simulate | decompose
    std::string input;
    std::string output_dir = "out";
    std::string design;  // "", "fri", "crossed"
    std::string mean_spec = "t";
    int k_mean = 8;
    int k_cov = 5;
    int mean_penalty_order = 3;
    int cov_penalty_order = 3;
    int grid_d = 100;
    double var_level = 0.95;
    std::optional<std::array<int, 3>> fixed_lags;
    std::string predict = "eblup";  // eblup | famm | both
    int iterate = 0;
    double tol = 1e-4;
    std::uint64_t seed = 1;
    int threads = 1;
    std::optional<double> lambda_mean, lambda_cov;
    std::optional<std::pair<double, double>> domain;
    CsvSchema schema;
    // simulate:
    std::string scenario_preset;  // e.g. "sparse"
    json scenario;                // explicit scenario description
    int replicates = -1;          // <0: take from scenario
    bool fix_truncation = true;

    json echo() const {
        json j;
        j["command"] = command;
        j["input"] = input;
        j["output_dir"] = output_dir;
        j["design"] = design;
        j["mean"] = mean_spec;
        j["k_mean"] = k_mean;
        j["k_cov"] = k_cov;
        j["mean_penalty_order"] = mean_penalty_order;
        j["cov_penalty_order"] = cov_penalty_order;
        j["grid_d"] = grid_d;
        j["var_level"] = var_level;
        if (fixed_lags) j["fixed_lags"] = {(*fixed_lags)[0], (*fixed_lags)[1], (*fixed_lags)[2]};
        j["predict"] = predict;
        j["iterate"] = iterate;
        j["tol"] = tol;
        j["seed"] = seed;
        j["threads"] = threads;
        if (lambda_mean) j["lambda_mean"] = *lambda_mean;
        if (lambda_cov) j["lambda_cov"] = *lambda_cov;
        if (domain) j["domain"] = {domain->first, domain->second};
        if (!scenario_preset.empty()) j["scenario"] = scenario_preset;
        if (!scenario.is_null()) j["scenario_config"] = scenario;
        if (replicates >= 0) j["replicates"] = replicates;
        j["fix_truncation"] = fix_truncation;
        return j;
    }
};

inline void apply_config_file(RunConfig& cfg, const json& j) {
    auto get = [&](const char* key, auto& slot) {
        if (j.contains(key)) slot = j.at(key).template get<std::decay_t<decltype(slot)>>();
    };
    get("input", cfg.input);
    get("output_dir", cfg.output_dir);
    get("design", cfg.design);
    get("mean", cfg.mean_spec);
    get("k_mean", cfg.k_mean);
    get("k_cov", cfg.k_cov);
    get("mean_penalty_order", cfg.mean_penalty_order);
    get("cov_penalty_order", cfg.cov_penalty_order);
    get("grid_d", cfg.grid_d);
    get("var_level", cfg.var_level);
    get("predict", cfg.predict);
    get("iterate", cfg.iterate);
    get("tol", cfg.tol);
    get("threads", cfg.threads);
    get("fix_truncation", cfg.fix_truncation);
    get("replicates", cfg.replicates);
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("lambda_mean")) cfg.lambda_mean = j.at("lambda_mean").get<double>();
    if (j.contains("lambda_cov")) cfg.lambda_cov = j.at("lambda_cov").get<double>();
    if (j.contains("domain"))
        cfg.domain = std::make_pair(j.at("domain").at(0).get<double>(),
                                    j.at("domain").at(1).get<double>());
    if (j.contains("fixed_lags")) {
        std::array<int, 3> lags{0, 0, 0};
        for (int x = 0; x < 3 && x < static_cast<int>(j.at("fixed_lags").size()); ++x)
            lags[x] = j.at("fixed_lags").at(x).get<int>();
        cfg.fixed_lags = lags;
    }
    if (j.contains("schema")) {
        const json& s = j.at("schema");
        auto gs = [&](const char* key, std::string& slot) {
            if (s.contains(key)) slot = s.at(key).get<std::string>();
        };
        gs("curve_id", cfg.schema.curve_id);
        gs("g1", cfg.schema.g1);
        gs("g2", cfg.schema.g2);
        gs("rep", cfg.schema.rep);
        gs("t", cfg.schema.t);
        gs("y", cfg.schema.y);
    }
    if (j.contains("covariates"))
        cfg.schema.covariates = j.at("covariates").get<std::vector<std::string>>();
    if (j.contains("scenario")) {
        if (j.at("scenario").is_string()) cfg.scenario_preset = j.at("scenario").get<std::string>();
        else cfg.scenario = j.at("scenario");
    }
}

// ---- scenario parsing ------------------------------------------------------

inline ScenarioConfig scenario_from_json(const json& j) {
    ScenarioConfig cfg = sparse_scenario();
    if (j.is_null()) return cfg;
    if (j.contains("design"))
        cfg.kind = j.at("design").get<std::string>() == "fri" ? GroupingDesign::Kind::SingleFri
                                                              : GroupingDesign::Kind::Crossed;
    if (j.contains("I")) cfg.levels_g1 = j.at("I").get<int>();
    if (j.contains("J")) cfg.levels_g2 = j.at("J").get<int>();
    if (j.contains("H")) cfg.reps = j.at("H").get<int>();
    if (j.contains("points")) {
        cfg.points_min = j.at("points").at("min").get<int>();
        cfg.points_max = j.at("points").at("max").get<int>();
    }
    if (j.contains("domain")) {
        cfg.t_lo = j.at("domain").at(0).get<double>();
        cfg.t_hi = j.at("domain").at(1).get<double>();
    }
    if (j.contains("sigma2")) cfg.sigma2 = j.at("sigma2").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("replicates")) cfg.replicates = j.at("replicates").get<int>();
    if (j.contains("center_decorrelate"))
        cfg.center_decorrelate = j.at("center_decorrelate").get<bool>();
    if (j.contains("covariates")) cfg.n_covariates = j.at("covariates").get<int>();
    if (j.contains("mean")) {
        cfg.mean.clear();
        for (const auto& m : j.at("mean")) {
            MeanScenarioTerm term;
            term.fn = m.at("fn").get<std::string>();
            if (m.contains("covariate")) {
                const std::string name = m.at("covariate").get<std::string>();
                if (name.size() < 2 || name[0] != 'x')
                    throw std::invalid_argument("scenario mean covariate must be x1..xP");
                term.covariate = std::stoi(name.substr(1)) - 1;
            }
            cfg.mean.push_back(term);
        }
    }
    if (j.contains("processes")) {
        const json& ps = j.at("processes");
        const char* names[3] = {"B", "C", "E"};
        for (int x = 0; x < 3; ++x) {
            if (!ps.contains(names[x])) {
                cfg.process[x].eigenvalues.resize(0);
                continue;
            }
            const json& p = ps.at(names[x]);
            cfg.process[x].family = ef_family_from_string(p.at("family").get<std::string>());
            const auto vals = p.at("eigenvalues").get<std::vector<double>>();
            cfg.process[x].eigenvalues =
                Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
        }
    }
    return cfg;
}

inline ScenarioConfig resolve_scenario(const RunConfig& cfg) {
    ScenarioConfig sc;
    if (!cfg.scenario_preset.empty()) {
        if (cfg.scenario_preset != "sparse")
            throw std::invalid_argument("unknown scenario preset: " + cfg.scenario_preset);
        sc = sparse_scenario();
    } else {
        sc = scenario_from_json(cfg.scenario);
    }
    if (cfg.replicates >= 0) sc.replicates = cfg.replicates;
    sc.seed = cfg.seed;
    sc.check();
    return sc;
}

// ---- artifact writers ------------------------------------------------------

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

inline void write_json(const fs::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline void write_matrix_csv(const fs::path& path, const Eigen::VectorXd& grid,
                             const Eigen::MatrixXd& m) {
    std::ostringstream out;
    out << "t";
    for (Eigen::Index j = 0; j < grid.size(); ++j) out << "," << num17(grid[j]);
    out << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << num17(grid[i]);
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << "," << num17(m(i, j));
        out << "\n";
    }
    write_text(path, out.str());
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> read_matrix_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);  // header carries the grid
    const auto head = detail::split_csv_line(line);
    const int d = static_cast<int>(head.size()) - 1;
    Eigen::VectorXd grid(d);
    for (int j = 0; j < d; ++j) grid[j] = std::stod(head[j + 1]);
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": truncated");
        const auto f = detail::split_csv_line(line);
        if (static_cast<int>(f.size()) != d + 1)
            throw std::runtime_error(path.string() + ": ragged row");
        for (int j = 0; j < d; ++j) m(i, j) = std::stod(f[j + 1]);
    }
    return {grid, m};
}

inline json mean_model_json(const MeanModel& m) {
    json terms = json::array();
    for (const auto& t : m.terms) {
        json jt;
        jt["label"] = t.spec.label;
        jt["covariate"] = t.spec.covariate < 0 ? "" : m.covariate_names[t.spec.covariate];
        jt["k"] = t.basis.size;
        jt["degree"] = t.basis.degree;
        jt["penalty_order"] = t.penalty_order;
        jt["lambda"] = t.lambda;
        jt["knots"] = t.basis.knots;
        jt["coefficients"] = std::vector<double>(t.coef.data(), t.coef.data() + t.coef.size());
        terms.push_back(jt);
    }
    return json{{"terms", terms}};
}

inline void write_mean_artifacts(const fs::path& dir, const MeanModel& m,
                                 const Eigen::VectorXd& grid, const std::string& suffix) {
    write_json(dir / ("mean_model" + suffix + ".json"), mean_model_json(m));
    std::ostringstream out;
    out << "term,t,value\n";
    for (std::size_t p = 0; p < m.terms.size(); ++p) {
        const Eigen::VectorXd v = m.term_values(static_cast<int>(p), grid);
        for (Eigen::Index i = 0; i < grid.size(); ++i)
            out << m.terms[p].spec.label << "," << num17(grid[i]) << "," << num17(v[i]) << "\n";
    }
    write_text(dir / ("mean_fit" + suffix + ".csv"), out.str());
}

inline void write_eigen_artifacts(const fs::path& dir, const EigenSystem& es) {
    std::ostringstream out;
    out << "t";
    for (int x = 0; x < 3; ++x)
        for (int k = 0; k < es.proc[x].retained; ++k)
            out << "," << process_name(static_cast<Process>(x)) << "_" << k + 1;
    out << "\n";
    for (Eigen::Index i = 0; i < es.grid.size(); ++i) {
        out << num17(es.grid[i]);
        for (int x = 0; x < 3; ++x)
            for (int k = 0; k < es.proc[x].retained; ++k) out << "," << num17(es.proc[x].vectors(i, k));
        out << "\n";
    }
    write_text(dir / "eigenfunctions.csv", out.str());

    json j;
    j["grid_d"] = es.grid.size();
    j["spacing"] = es.spacing;
    j["sigma2"] = es.sigma2;
    if (es.level > 0) j["var_level"] = es.level;
    for (int x = 0; x < 3; ++x) {
        if (!es.proc[x].present) continue;
        json jp;
        jp["retained"] = es.proc[x].retained;
        jp["eigenvalues"] = std::vector<double>(es.proc[x].values.data(),
                                                es.proc[x].values.data() + es.proc[x].values.size());
        j["processes"][process_name(static_cast<Process>(x))] = jp;
    }
    write_json(dir / "eigen.json", j);

    const VarianceDecomposition vd = variance_decomposition(es);
    json jv;
    jv["total"] = vd.total;
    jv["sigma2_share"] = vd.sigma2_share;
    json comps = json::array();
    for (const auto& c : vd.components)
        comps.push_back(json{{"process", process_name(c.process)},
                             {"k", c.k},
                             {"eigenvalue", c.value},
                             {"share", c.share},
                             {"retained", c.retained}});
    jv["components"] = comps;
    write_json(dir / "variance_decomposition.json", jv);
}

inline void write_prediction_artifacts(const fs::path& dir, const CurveSet& cs,
                                       const EigenSystem& es, const PredictionResult& pred,
                                       const std::string& suffix) {
    {
        std::ostringstream out;
        out << "process,level,component,value\n";
        for (int x = 0; x < 3; ++x) {
            const auto& xi = pred.xi[x];
            for (Eigen::Index l = 0; l < xi.rows(); ++l) {
                std::string label;
                if (x == 0) label = cs.g1_labels[l];
                else if (x == 1) label = cs.g2_labels[l];
                else label = cs.curve_labels[l];
                for (Eigen::Index k = 0; k < xi.cols(); ++k)
                    out << process_name(static_cast<Process>(x)) << "," << label << "," << k + 1
                        << "," << num17(xi(l, k)) << "\n";
            }
        }
        write_text(dir / ("predicted_weights" + suffix + ".csv"), out.str());
    }
    {
        std::ostringstream out;
        out << "process,level,t,value\n";
        for (int x = 0; x < 3; ++x) {
            const auto& curves = pred.curves_grid[x];
            if (curves.cols() != es.grid.size()) continue;
            for (Eigen::Index l = 0; l < curves.rows(); ++l) {
                std::string label;
                if (x == 0) label = cs.g1_labels[l];
                else if (x == 1) label = cs.g2_labels[l];
                else label = cs.curve_labels[l];
                for (Eigen::Index i = 0; i < es.grid.size(); ++i)
                    out << process_name(static_cast<Process>(x)) << "," << label << ","
                        << num17(es.grid[i]) << "," << num17(curves(l, i)) << "\n";
            }
        }
        write_text(dir / ("fitted_curves" + suffix + ".csv"), out.str());
    }
    {
        std::ostringstream out;
        out << "curve_id,t,y,fitted\n";
        for (std::size_t i = 0; i < cs.n_points(); ++i)
            out << cs.curve_labels[cs.points[i].curve] << "," << num17(cs.points[i].t) << ","
                << num17(cs.points[i].y) << "," << num17(pred.fitted[i]) << "\n";
        write_text(dir / ("fitted_responses" + suffix + ".csv"), out.str());
    }
}

inline void write_bands(const fs::path& dir, const EigenSystem& es,
                        const std::vector<FammBand>& bands) {
    std::ostringstream out;
    out << "term,t,est,lo,hi\n";
    for (const auto& b : bands)
        for (Eigen::Index i = 0; i < es.grid.size(); ++i)
            out << b.term << "," << num17(es.grid[i]) << "," << num17(b.est[i]) << ","
                << num17(b.lo[i]) << "," << num17(b.hi[i]) << "\n";
    write_text(dir / "bands.csv", out.str());
}

inline void write_manifest(const fs::path& dir, const RunConfig& cfg) {
    json j;
    j["tool"] = "flmm";
    j["version"] = "0.1.0";
    j["command"] = cfg.command;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["config"] = cfg.echo();
    write_json(dir / "manifest.json", j);
}

// ---- subcommands -----------------------------------------------------------

inline PredictMethod predict_method(const std::string& s) {
    if (s == "eblup") return PredictMethod::Eblup;
    if (s == "famm") return PredictMethod::Famm;
    if (s == "both") return PredictMethod::Both;
    throw std::invalid_argument("predict must be eblup, famm, or both");
}

inline PipelineOptions pipeline_options(const RunConfig& cfg,
                                        const std::vector<std::string>& covariate_names) {
    PipelineOptions opt;
    opt.mean_terms = parse_mean_terms(cfg.mean_spec, covariate_names);
    opt.mean.k = cfg.k_mean;
    opt.mean.penalty_order = cfg.mean_penalty_order;
    opt.mean.fixed_lambda = cfg.lambda_mean;
    opt.cov.k = cfg.k_cov;
    opt.cov.penalty_order = cfg.cov_penalty_order;
    opt.cov.fixed_lambda = cfg.lambda_cov;
    opt.grid_d = cfg.grid_d;
    opt.var_level = cfg.var_level;
    opt.fixed_lags = cfg.fixed_lags;
    opt.method = predict_method(cfg.predict);
    return opt;
}

inline int cmd_fit(const RunConfig& cfg) {
    if (cfg.input.empty()) throw std::invalid_argument("fit: --input required");
    CurveSet cs = load_curveset(cfg.input, cfg.schema, cfg.domain);
    if (cfg.design == "fri" && cs.has_g2) {
        cs.has_g2 = false;
        cs.g2_labels.clear();
        for (auto& p : cs.points) p.g2 = -1;
        for (auto& g : cs.curve_g2) g = -1;
    } else if (cfg.design == "crossed" && !cs.has_g2) {
        throw std::invalid_argument("fit: crossed design requested but no g2 column present");
    }

    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);

    PipelineOptions opt = pipeline_options(cfg, cs.covariate_names);
    PipelineResult r = fit_pipeline(cs, opt);
    if (cfg.iterate > 0) {
        PipelineOptions iter_opt = opt;
        if (iter_opt.method == PredictMethod::Famm) iter_opt.method = PredictMethod::Both;
        if (!r.eblup) {
            PipelineResult full = fit_pipeline(cs, iter_opt);
            r = std::move(full);
        }
        r = iterate(cs, iter_opt, std::move(r), cfg.iterate, cfg.tol);
    }

    write_manifest(dir, cfg);
    write_mean_artifacts(dir, r.mean, r.es.grid, "");
    for (int x = 0; x < 3; ++x)
        if (r.cov.has_process(static_cast<Process>(x)))
            write_matrix_csv(dir / (std::string("covariance_") +
                                    process_name(static_cast<Process>(x)) + ".csv"),
                             r.es.grid, evaluate_surface(r.cov, static_cast<Process>(x), r.es.grid));
    json jc;
    jc["sigma2"] = r.cov.sigma2;
    jc["sigma2_clamped"] = r.cov.sigma2_clamped;
    jc["lambda"] = r.cov.lambda;
    jc["n_products"] = r.cov.n_products;
    jc["domain"] = {cs.t_lo, cs.t_hi};
    jc["grid_d"] = cfg.grid_d;
    jc["design"] = cs.has_g2 ? "crossed" : "fri";
    write_json(dir / "covariance.json", jc);
    write_eigen_artifacts(dir, r.es);
    if (r.eblup) write_prediction_artifacts(dir, cs, r.es, *r.eblup, "");
    if (r.famm) {
        write_prediction_artifacts(dir, cs, r.es, r.famm->pred, "_famm");
        write_mean_artifacts(dir, r.famm->mean, r.es.grid, "_famm");
        write_bands(dir, r.es, r.famm->bands);
    }
    if (!r.warnings.empty()) {
        json jw = r.warnings;
        write_json(dir / "warnings.json", jw);
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    }
    return 0;
}

inline int cmd_simulate(const RunConfig& cfg) {
    const ScenarioConfig sc = resolve_scenario(cfg);
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);

    StudyOptions opt;
    opt.threads = cfg.threads;
    opt.fix_truncation = cfg.fix_truncation;
    std::vector<MeanTermSpec> terms;
    for (std::size_t p = 0; p < sc.mean.size(); ++p) {
        MeanTermSpec t;
        t.covariate = sc.mean[p].covariate;
        t.label = t.covariate < 0 ? "t" : ("t:x" + std::to_string(t.covariate + 1));
        terms.push_back(t);
    }
    opt.pipeline.mean_terms = terms;
    opt.pipeline.mean.k = cfg.k_mean;
    opt.pipeline.mean.penalty_order = cfg.mean_penalty_order;
    opt.pipeline.mean.fixed_lambda = cfg.lambda_mean;
    opt.pipeline.cov.k = cfg.k_cov;
    opt.pipeline.cov.penalty_order = cfg.cov_penalty_order;
    opt.pipeline.cov.fixed_lambda = cfg.lambda_cov;
    opt.pipeline.grid_d = cfg.grid_d;
    opt.pipeline.var_level = cfg.var_level;
    opt.pipeline.method = predict_method(cfg.predict);

    const RrmseReport report = run_study(sc, opt);

    write_manifest(dir, cfg);
    json j;
    j["replicates"] = report.replicates;
    j["failures"] = report.failures;
    j["errors"] = report.errors;
    for (const auto& [key, v] : report.values) j["rrmse"][key] = v;
    write_json(dir / "rrmse_report.json", j);

    std::ostringstream out;
    out << "X,L";
    const int kmax = 3;
    for (int k = 1; k <= kmax; ++k) out << ",phi_" << k;
    for (int k = 1; k <= kmax; ++k) out << ",nu_" << k;
    for (int k = 1; k <= kmax; ++k) out << ",xi_" << k;
    out << ",K,X_curves,Y,mu,sigma2\n";
    const int levels[3] = {sc.levels_g1,
                           sc.kind == GroupingDesign::Kind::Crossed ? sc.levels_g2 : 0,
                           sc.levels_g1 * (sc.kind == GroupingDesign::Kind::Crossed ? sc.levels_g2 : 1) * sc.reps};
    auto cell = [&](const std::string& key) {
        auto it = report.values.find(key);
        return it == report.values.end() ? std::string() : num17(it->second);
    };
    for (int x = 0; x < 3; ++x) {
        const std::string px = process_name(static_cast<Process>(x));
        if (sc.process[x].eigenvalues.size() == 0) continue;
        out << px << "," << levels[x];
        for (int k = 1; k <= kmax; ++k) out << "," << cell("phi_" + px + std::to_string(k));
        for (int k = 1; k <= kmax; ++k) out << "," << cell("nu_" + px + std::to_string(k));
        for (int k = 1; k <= kmax; ++k) out << "," << cell("xi_" + px + std::to_string(k));
        out << "," << cell("K_" + px) << "," << cell("X_" + px) << ",,,\n";
    }
    out << "Y,";
    for (int k = 0; k < 3 * kmax; ++k) out << ",";
    out << ",," << cell("Y") << "," << cell("mu") << "," << cell("sigma2") << "\n";
    write_text(dir / "rrmse_table.csv", out.str());
    return report.failures == report.replicates ? 1 : 0;
}

inline int cmd_decompose(const RunConfig& cfg) {
    if (cfg.input.empty()) throw std::invalid_argument("decompose: --input required");
    const fs::path in(cfg.input);
    std::ifstream meta_in(in / "covariance.json");
    if (!meta_in) throw std::runtime_error("decompose: missing covariance.json in " + cfg.input);
    json meta = json::parse(meta_in);

    RawSurfaces raw;
    raw.sigma2 = meta.at("sigma2").get<double>();
    raw.t_lo = meta.at("domain").at(0).get<double>();
    raw.t_hi = meta.at("domain").at(1).get<double>();
    for (int x = 0; x < 3; ++x) {
        const fs::path p =
            in / (std::string("covariance_") + process_name(static_cast<Process>(x)) + ".csv");
        if (fs::exists(p)) raw.k[x] = read_matrix_csv(p).second;
    }

    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    std::vector<std::string> warnings;
    const EigenSystem es = cfg.fixed_lags ? decompose_fixed(raw, *cfg.fixed_lags, &warnings)
                                          : decompose(raw, cfg.var_level);
    write_manifest(dir, cfg);
    write_eigen_artifacts(dir, es);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    return 0;
}

inline int run(const RunConfig& cfg) {
    try {
        if (cfg.command == "fit") return cmd_fit(cfg);
        if (cfg.command == "simulate") return cmd_simulate(cfg);
        if (cfg.command == "decompose") return cmd_decompose(cfg);
        throw std::invalid_argument("unknown command: " + cfg.command);
    } catch (const std::exception& e) {
        json err;
        err["error"] = e.what();
        err["command"] = cfg.command;
        std::cerr << err.dump() << "\n";
        std::error_code ec;
        fs::create_directories(cfg.output_dir, ec);
        if (!ec) {
            std::ofstream out(fs::path(cfg.output_dir) / "error.json");
            if (out) out << err.dump(2) << "\n";
        }
        return 1;
    }
}

}  // namespace flmm::cli
