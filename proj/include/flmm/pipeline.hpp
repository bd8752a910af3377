#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flmm/covfit.hpp"
#include "flmm/famm.hpp"
#include "flmm/fdata.hpp"
#include "flmm/fpca.hpp"
#include "flmm/meanfit.hpp"
#include "flmm/predict.hpp"

namespace flmm {

enum class PredictMethod { Eblup, Famm, Both };

struct PipelineOptions {
    std::vector<MeanTermSpec> mean_terms{{"t", -1}};
    MeanFitOptions mean;
    CovFitOptions cov;
    int grid_d = 100;
    double var_level = 0.95;
    std::optional<std::array<int, 3>> fixed_lags;
    PredictMethod method = PredictMethod::Eblup;
    bool center_random_effects = true;
};

struct PipelineResult {
    MeanModel mean;
    CovarianceFit cov;
    EigenSystem es;
    std::optional<PredictionResult> eblup;
    std::optional<FammFit> famm;
    std::vector<std::string> warnings;
    int iterations = 0;
};

namespace detail {

inline Eigen::VectorXd centered_responses(const CurveSet& cs) {
    Eigen::VectorXd y(cs.n_points());
    for (std::size_t i = 0; i < cs.n_points(); ++i) y[i] = cs.points[i].y;
    return y;
}

inline void finish_predictions(const CurveSet& cs, const MeanModel& mean,
                               const CurveSet& centered, const PipelineOptions& opt,
                               PipelineResult& r) {
    if (opt.method == PredictMethod::Eblup || opt.method == PredictMethod::Both) {
        if (r.es.total_retained() > 0) {
            const BlupSystem sys = build_blup_system(centered, r.es);
            PredictionResult pred =
                predict_eblup(sys, centered_responses(centered), r.es, &r.warnings);
            pred.fitted = pred.fitted_centered;
            for (std::size_t i = 0; i < cs.n_points(); ++i)
                pred.fitted[i] += cs.points[i].y - centered.points[i].y;
            r.eblup = std::move(pred);
        } else {
            r.warnings.push_back("no retained components; weight prediction skipped");
        }
    }
    if (opt.method == PredictMethod::Famm || opt.method == PredictMethod::Both) {
        FammOptions fo;
        fo.mean = opt.mean;
        fo.center_random_effects = opt.center_random_effects;
        FammFit famm = fit_famm(cs, r.es, opt.mean_terms, fo);
        r.warnings.insert(r.warnings.end(), famm.warnings.begin(), famm.warnings.end());
        r.famm = std::move(famm);
    }
}

}  // namespace detail

// Steps 1-4: working-independence mean, product-regression covariances,
// eigen structure, weight prediction.
inline PipelineResult fit_pipeline(const CurveSet& cs, const PipelineOptions& opt) {
    PipelineResult r;
    r.mean = fit_mean(cs, opt.mean_terms, opt.mean, &r.warnings);
    const CurveSet centered = center_responses(cs, r.mean);
    r.cov = fit_covariances(centered, opt.cov);
    r.warnings.insert(r.warnings.end(), r.cov.warnings.begin(), r.cov.warnings.end());
    r.es = opt.fixed_lags ? decompose_fixed(r.cov, opt.grid_d, *opt.fixed_lags, &r.warnings)
                          : decompose(r.cov, opt.grid_d, opt.var_level);
    detail::finish_predictions(cs, r.mean, centered, opt, r);
    return r;
}

namespace detail {

inline Eigen::VectorXd stacked_mean_terms(const MeanModel& m, const Eigen::VectorXd& grid) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(m.terms.size()) * grid.size());
    for (std::size_t p = 0; p < m.terms.size(); ++p)
        out.segment(static_cast<Eigen::Index>(p) * grid.size(), grid.size()) =
            m.term_values(static_cast<int>(p), grid);
    return out;
}

}  // namespace detail

// Refits with the predicted random-effect curves removed from the responses,
// then repeats steps 2-4; stops when the mean stabilizes on the grid, the
// iteration budget is exhausted, or the change grows twice in a row.
inline PipelineResult iterate(const CurveSet& cs, const PipelineOptions& opt,
                              PipelineResult state, int max_iters, double tol) {
    if (max_iters <= 0) return state;
    if (!state.eblup)
        throw std::invalid_argument("iterate: needs a completed weight prediction pass");
    Eigen::VectorXd prev = detail::stacked_mean_terms(state.mean, state.es.grid);
    double prev_delta = std::numeric_limits<double>::infinity();
    bool grew_once = false;
    for (int it = 0; it < max_iters; ++it) {
        CurveSet adjusted = cs;
        for (std::size_t i = 0; i < cs.n_points(); ++i)
            adjusted.points[i].y -= state.eblup->fitted_centered[i];

        PipelineResult next;
        next.warnings = state.warnings;
        next.iterations = state.iterations + 1;
        next.mean = fit_mean(adjusted, opt.mean_terms, opt.mean, &next.warnings);
        const CurveSet centered = center_responses(cs, next.mean);
        next.cov = fit_covariances(centered, opt.cov);
        next.es = opt.fixed_lags
                      ? decompose_fixed(next.cov, opt.grid_d, *opt.fixed_lags, &next.warnings)
                      : decompose(next.cov, opt.grid_d, opt.var_level);
        PipelineOptions inner = opt;
        if (inner.method == PredictMethod::Famm) inner.method = PredictMethod::Both;
        detail::finish_predictions(cs, next.mean, centered, inner, next);
        if (!next.eblup) throw std::runtime_error("iterate: prediction lost all components");

        const Eigen::VectorXd cur = detail::stacked_mean_terms(next.mean, next.es.grid);
        const double denom = std::max(prev.norm(), 1e-12);
        const double delta = (cur - prev).norm() / denom;
        state = std::move(next);
        prev = cur;
        if (delta < tol) break;
        if (delta > prev_delta) {
            if (grew_once) {
                state.warnings.push_back("iteration diverging; stopped early");
                break;
            }
            grew_once = true;
        } else {
            grew_once = false;
        }
        prev_delta = delta;
    }
    return state;
}

}  // namespace flmm
