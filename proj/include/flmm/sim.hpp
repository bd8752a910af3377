#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "flmm/pipeline.hpp"

namespace flmm {

using ScalarFn = std::function<double(double)>;

// Shifted Legendre polynomial on [0, 1], normalized to unit L2 norm.
inline ScalarFn legendre_orthonormal(int degree) {
    switch (degree) {
        case 0: return [](double) { return 1.0; };
        case 1: return [](double t) { return std::sqrt(3.0) * (2.0 * t - 1.0); };
        case 2: return [](double t) { return std::sqrt(5.0) * (6.0 * t * t - 6.0 * t + 1.0); };
        case 3:
            return [](double t) {
                return std::sqrt(7.0) * (20.0 * t * t * t - 30.0 * t * t + 12.0 * t - 1.0);
            };
        default:
            throw std::invalid_argument("legendre_orthonormal: degree 0..3 supported");
    }
}

enum class EfFamily { LegendreEven, LegendreOdd, FourierSinCos, FourierSin };

// Orthonormal function systems on [0, 1] used to build the true processes.
inline std::vector<ScalarFn> eigenfunction_family(EfFamily f, int count) {
    std::vector<ScalarFn> out;
    for (int k = 0; k < count; ++k) {
        switch (f) {
            case EfFamily::LegendreEven: out.push_back(legendre_orthonormal(2 * k)); break;
            case EfFamily::LegendreOdd: out.push_back(legendre_orthonormal(2 * k + 1)); break;
            case EfFamily::FourierSinCos: {
                const int harmonic = k / 2 + 1;
                if (k % 2 == 0)
                    out.push_back([harmonic](double t) {
                        return std::sqrt(2.0) * std::sin(2.0 * M_PI * harmonic * t);
                    });
                else
                    out.push_back([harmonic](double t) {
                        return std::sqrt(2.0) * std::cos(2.0 * M_PI * harmonic * t);
                    });
                break;
            }
            case EfFamily::FourierSin:
                out.push_back([k](double t) { return std::sqrt(2.0) * std::sin(M_PI * (k + 1) * t); });
                break;
        }
    }
    return out;
}

inline EfFamily ef_family_from_string(const std::string& s) {
    if (s == "legendre_even") return EfFamily::LegendreEven;
    if (s == "legendre_odd") return EfFamily::LegendreOdd;
    if (s == "fourier") return EfFamily::FourierSinCos;
    if (s == "fourier_sin") return EfFamily::FourierSin;
    throw std::invalid_argument("unknown eigenfunction family: " + s);
}

inline ScalarFn mean_function(const std::string& name) {
    if (name == "zero") return [](double) { return 0.0; };
    if (name == "one") return [](double) { return 1.0; };
    if (name == "sin_plus_t") return [](double t) { return std::sin(t) + t; };
    if (name == "sin2pi") return [](double t) { return std::sin(2.0 * M_PI * t); };
    if (name == "cos2pi") return [](double t) { return std::cos(2.0 * M_PI * t); };
    if (name == "one_plus_half_cos2pi")
        return [](double t) { return 1.0 + 0.5 * std::cos(2.0 * M_PI * t); };
    throw std::invalid_argument("unknown mean function: " + name);
}

struct ProcessScenario {
    EfFamily family = EfFamily::LegendreEven;
    Eigen::VectorXd eigenvalues;  // positive, descending
};

struct MeanScenarioTerm {
    std::string fn = "zero";
    int covariate = -1;  // -1: intercept term
};

struct ScenarioConfig {
    GroupingDesign::Kind kind = GroupingDesign::Kind::Crossed;
    int levels_g1 = 40, levels_g2 = 40, reps = 3;
    int points_min = 3, points_max = 10;
    double t_lo = 0.0, t_hi = 1.0;
    std::vector<MeanScenarioTerm> mean{{"sin_plus_t", -1}};
    int n_covariates = 0;  // dummy covariates drawn Bernoulli(1/2) per curve
    std::array<ProcessScenario, 3> process;
    double sigma2 = 0.05;
    std::uint64_t seed = 1;
    int replicates = 1;
    bool center_decorrelate = true;

    void check() const {
        if (points_min < 1 || points_max < points_min)
            throw std::invalid_argument("scenario: point-count bounds must satisfy 1 <= min <= max");
        if (!(t_hi > t_lo)) throw std::invalid_argument("scenario: empty domain");
        for (const auto& p : process) {
            for (Eigen::Index k = 0; k < p.eigenvalues.size(); ++k) {
                if (p.eigenvalues[k] <= 0.0)
                    throw std::invalid_argument("scenario: eigenvalues must be positive");
                if (k > 0 && p.eigenvalues[k] > p.eigenvalues[k - 1])
                    throw std::invalid_argument("scenario: eigenvalues must be descending");
            }
        }
    }
};

// The sparse crossed setting: 40 x 40 levels observed three times each,
// 3..10 points per curve on [0,1], nu_k = 2/k, sigma2 = 0.05,
// mu(t) = sin(t) + t, Legendre processes for the grouped effects and a
// sine/cosine pair for the smooth error.
inline ScenarioConfig sparse_scenario() {
    ScenarioConfig cfg;
    cfg.process[0] = {EfFamily::LegendreEven, Eigen::Vector2d(2.0, 1.0)};
    cfg.process[1] = {EfFamily::LegendreOdd, Eigen::Vector2d(2.0, 1.0)};
    cfg.process[2] = {EfFamily::FourierSinCos, Eigen::Vector2d(2.0, 1.0)};
    return cfg;
}

// Everything needed to score a fit against the generating truth.
struct TruthBundle {
    std::array<std::vector<ScalarFn>, 3> phi;
    std::array<Eigen::MatrixXd, 3> xi;  // levels x components, post adjustment
    std::array<Eigen::VectorXd, 3> nu;
    std::vector<ScalarFn> mean_terms;
    std::vector<MeanScenarioTerm> mean_spec;
    double sigma2 = 0.0;

    double mean_at(double t, const Eigen::RowVectorXd& x) const {
        double v = 0.0;
        for (std::size_t p = 0; p < mean_terms.size(); ++p) {
            const int c = mean_spec[p].covariate;
            v += (c < 0 ? 1.0 : x[c]) * mean_terms[p](t);
        }
        return v;
    }

    // Smooth part of the response for one point.
    double smooth_at(const CurveSet& cs, const ObsPoint& p) const {
        const Eigen::RowVectorXd x = cs.covariates.cols() > 0
                                         ? Eigen::RowVectorXd(cs.covariates.row(p.curve))
                                         : Eigen::RowVectorXd(0);
        double v = mean_at(p.t, x);
        const std::array<int, 3> level{p.g1, p.g2, p.curve};
        for (int xp = 0; xp < 3; ++xp) {
            if (xi[xp].size() == 0 || level[xp] < 0) continue;
            for (int k = 0; k < xi[xp].cols(); ++k)
                v += xi[xp](level[xp], k) * phi[xp][k](p.t);
        }
        return v;
    }
};

namespace detail {

// Centres the weight columns, whitens them with the inverse Cholesky factor
// of the empirical covariance (1/L convention), and rescales so the empirical
// covariance equals diag(nu) exactly.
inline void center_decorrelate(Eigen::MatrixXd& w, const Eigen::VectorXd& nu) {
    const int l = static_cast<int>(w.rows());
    const int n = static_cast<int>(w.cols());
    if (n == 0) return;
    w.rowwise() -= w.colwise().mean();
    if (l <= n) return;  // too few levels to whiten
    const Eigen::MatrixXd cov = w.transpose() * w / static_cast<double>(l);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) return;
    w = llt.matrixL().solve(w.transpose()).transpose();
    w *= nu.cwiseSqrt().asDiagonal();
}

}  // namespace detail

inline std::pair<CurveSet, TruthBundle> generate(const ScenarioConfig& cfg, std::uint64_t seed) {
    cfg.check();
    const bool crossed = cfg.kind == GroupingDesign::Kind::Crossed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif_t(cfg.t_lo, cfg.t_hi);
    std::uniform_int_distribution<int> unif_d(cfg.points_min, cfg.points_max);
    std::normal_distribution<double> gauss;
    std::bernoulli_distribution coin(0.5);

    CurveSet cs;
    cs.t_lo = cfg.t_lo;
    cs.t_hi = cfg.t_hi;
    cs.has_g2 = crossed;

    const int n_curves = cfg.levels_g1 * (crossed ? cfg.levels_g2 : 1) * cfg.reps;
    TruthBundle truth;
    truth.sigma2 = cfg.sigma2;
    truth.mean_spec = cfg.mean;
    for (const auto& m : cfg.mean) truth.mean_terms.push_back(mean_function(m.fn));

    const std::array<int, 3> levels{cfg.levels_g1, crossed ? cfg.levels_g2 : 0, n_curves};
    for (int x = 0; x < 3; ++x) {
        const int n = static_cast<int>(cfg.process[x].eigenvalues.size());
        truth.nu[x] = cfg.process[x].eigenvalues;
        truth.phi[x] = eigenfunction_family(cfg.process[x].family, n);
        truth.xi[x].resize(levels[x], n);
        for (int l = 0; l < levels[x]; ++l)
            for (int k = 0; k < n; ++k)
                truth.xi[x](l, k) = std::sqrt(truth.nu[x][k]) * gauss(rng);
        if (cfg.center_decorrelate && levels[x] > 0)
            detail::center_decorrelate(truth.xi[x], truth.nu[x]);
    }

    cs.covariates.resize(n_curves, cfg.n_covariates);
    for (int j = 0; j < cfg.n_covariates; ++j) {
        cs.covariate_names.push_back("x" + std::to_string(j + 1));
        for (int c = 0; c < n_curves; ++c) cs.covariates(c, j) = coin(rng) ? 1.0 : 0.0;
    }

    int curve = 0;
    for (int i = 0; i < cfg.levels_g1; ++i) {
        for (int j = 0; j < (crossed ? cfg.levels_g2 : 1); ++j) {
            for (int h = 0; h < cfg.reps; ++h, ++curve) {
                cs.curve_labels.push_back(std::to_string(curve));
                cs.curve_g1.push_back(i);
                cs.curve_g2.push_back(crossed ? j : -1);
                cs.curve_rep.push_back(h);
                const int d = unif_d(rng);
                std::vector<double> ts(d);
                for (auto& t : ts) t = unif_t(rng);
                std::sort(ts.begin(), ts.end());
                for (double t : ts) {
                    ObsPoint p;
                    p.curve = curve;
                    p.g1 = i;
                    p.g2 = crossed ? j : -1;
                    p.rep = h;
                    p.t = t;
                    cs.points.push_back(p);
                }
            }
        }
    }
    for (int i = 0; i < cfg.levels_g1; ++i) cs.g1_labels.push_back(std::to_string(i));
    if (crossed)
        for (int j = 0; j < cfg.levels_g2; ++j) cs.g2_labels.push_back(std::to_string(j));

    for (auto& p : cs.points) {
        p.y = truth.smooth_at(cs, p);
        if (cfg.sigma2 > 0.0) p.y += std::sqrt(cfg.sigma2) * gauss(rng);
    }
    cs.finalize();
    return {std::move(cs), std::move(truth)};
}

// ---- error metrics ----------------------------------------------------

inline double rrmse(const Eigen::VectorXd& truth, const Eigen::VectorXd& est) {
    if (truth.size() != est.size()) throw std::invalid_argument("rrmse: size mismatch");
    const double denom = truth.squaredNorm();
    if (denom <= 0.0)
        throw std::domain_error("rrmse: reference is identically zero, use an absolute RMSE");
    return std::sqrt((truth - est).squaredNorm() / denom);
}

inline double rrmse(double truth, double est) {
    return rrmse(Eigen::VectorXd::Constant(1, truth), Eigen::VectorXd::Constant(1, est));
}

inline double rrmse(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& est) {
    return rrmse(Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(truth.data(), truth.size())),
                 Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(est.data(), est.size())));
}

// Eigenfunctions are unique up to sign; the mirrored estimate is also scored
// and the smaller error kept.
inline double rrmse_signflip(const Eigen::VectorXd& truth, const Eigen::VectorXd& est,
                             int* sign = nullptr) {
    const double plus = rrmse(truth, est);
    const double minus = rrmse(truth, Eigen::VectorXd(-est));
    if (sign) *sign = plus <= minus ? 1 : -1;
    return std::min(plus, minus);
}

// ---- study harness -----------------------------------------------------

struct StudyOptions {
    PipelineOptions pipeline;
    int threads = 1;
    bool fix_truncation = true;  // use the generating component counts
};

struct RrmseReport {
    int replicates = 0;
    int failures = 0;
    std::map<std::string, double> values;  // averages over successful replicates
    std::vector<std::string> errors;
};

namespace detail {

inline void score_replicate(const CurveSet& cs, const TruthBundle& truth,
                            const PipelineResult& fit, bool famm,
                            std::map<std::string, double>& score) {
    const Eigen::VectorXd& grid = fit.es.grid;
    const MeanModel& mean = famm && fit.famm ? fit.famm->mean : fit.mean;
    const PredictionResult& pred = famm && fit.famm ? fit.famm->pred : *fit.eblup;

    // Mean terms on the grid.
    double mu_sum = 0.0;
    for (std::size_t p = 0; p < truth.mean_terms.size(); ++p) {
        Eigen::VectorXd tv(grid.size());
        for (Eigen::Index i = 0; i < grid.size(); ++i) tv[i] = truth.mean_terms[p](grid[i]);
        const double e = rrmse(tv, mean.term_values(static_cast<int>(p), grid));
        score["f" + std::to_string(p)] = e;
        mu_sum += e;
    }
    score["mu"] = mu_sum / static_cast<double>(truth.mean_terms.size());

    for (int x = 0; x < 3; ++x) {
        const auto& pe = fit.es.proc[x];
        if (!pe.present || truth.nu[x].size() == 0) continue;
        const std::string px = process_name(static_cast<Process>(x));
        const int ntrue = static_cast<int>(truth.nu[x].size());

        Eigen::MatrixXd phi_true(grid.size(), ntrue);
        for (int k = 0; k < ntrue; ++k)
            for (Eigen::Index i = 0; i < grid.size(); ++i)
                phi_true(i, k) = truth.phi[x][k](grid[i]);

        // Surface rrMSE.
        Eigen::MatrixXd k_true = Eigen::MatrixXd::Zero(grid.size(), grid.size());
        for (int k = 0; k < ntrue; ++k)
            k_true += truth.nu[x][k] * phi_true.col(k) * phi_true.col(k).transpose();
        score["K_" + px] = rrmse(k_true, evaluate_surface(fit.cov, static_cast<Process>(x), grid));

        std::vector<int> signs(ntrue, 1);
        for (int k = 0; k < ntrue && k < pe.retained; ++k) {
            score["phi_" + px + std::to_string(k + 1)] =
                rrmse_signflip(phi_true.col(k), pe.vectors.col(k), &signs[k]);
            score["nu_" + px + std::to_string(k + 1)] = rrmse(truth.nu[x][k], pe.values[k]);
        }
        for (int k = 0; k < ntrue && k < static_cast<int>(pred.xi[x].cols()); ++k)
            score["xi_" + px + std::to_string(k + 1)] =
                rrmse(Eigen::VectorXd(truth.xi[x].col(k)),
                      Eigen::VectorXd(signs[k] * pred.xi[x].col(k)));

        // Random-effect curves stacked over levels.
        Eigen::MatrixXd curves_true = truth.xi[x] * phi_true.transpose();
        score["X_" + px] = rrmse(curves_true, pred.curves_grid[x]);
    }

    // Smooth response at the observation points.
    Eigen::VectorXd y_true(cs.n_points());
    for (std::size_t i = 0; i < cs.n_points(); ++i) y_true[i] = truth.smooth_at(cs, cs.points[i]);
    score["Y"] = rrmse(y_true, pred.fitted);
    if (truth.sigma2 > 0.0) score["sigma2"] = rrmse(truth.sigma2, fit.cov.sigma2);
}

}  // namespace detail

// Runs generate -> fit -> score across replicates with per-replicate seeds
// seed + r; failures are recorded and excluded from the averages.
inline RrmseReport run_study(const ScenarioConfig& cfg, const StudyOptions& opt) {
    cfg.check();
    RrmseReport report;
    report.replicates = cfg.replicates;
    std::vector<std::map<std::string, double>> per_rep(cfg.replicates);
    std::vector<std::string> errors(cfg.replicates);
    std::atomic<int> next{0};

    auto worker = [&]() {
        for (int r = next.fetch_add(1); r < cfg.replicates; r = next.fetch_add(1)) {
            try {
                auto [cs, truth] = generate(cfg, cfg.seed + static_cast<std::uint64_t>(r));
                PipelineOptions popt = opt.pipeline;
                if (opt.fix_truncation) {
                    popt.fixed_lags = {static_cast<int>(truth.nu[0].size()),
                                       static_cast<int>(truth.nu[1].size()),
                                       static_cast<int>(truth.nu[2].size())};
                }
                const bool famm = popt.method == PredictMethod::Famm;
                if (famm) popt.method = PredictMethod::Both;
                PipelineResult fit = fit_pipeline(cs, popt);
                detail::score_replicate(cs, truth, fit, famm, per_rep[r]);
            } catch (const std::exception& e) {
                errors[r] = e.what();
            }
        }
    };
    const int nthreads = std::max(1, std::min(opt.threads, cfg.replicates));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::map<std::string, std::pair<double, int>> agg;
    for (int r = 0; r < cfg.replicates; ++r) {
        if (!errors[r].empty()) {
            ++report.failures;
            report.errors.push_back("replicate " + std::to_string(r) + ": " + errors[r]);
            continue;
        }
        for (const auto& [key, v] : per_rep[r]) {
            agg[key].first += v;
            agg[key].second += 1;
        }
    }
    for (const auto& [key, sv] : agg)
        if (sv.second > 0) report.values[key] = sv.first / sv.second;
    return report;
}

}  // namespace flmm
