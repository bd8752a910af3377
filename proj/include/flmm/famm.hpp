#pragma once

#include <Eigen/Core>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flmm/meanfit.hpp"
#include "flmm/predict.hpp"

namespace flmm {

struct FammOptions {
    MeanFitOptions mean;
    // Centres each functional random effect across its levels,
    // sum_l X_l(t) == 0, by projecting the solution onto the constraint.
    bool center_random_effects = true;
    double z_quantile = 1.959963984540054;  // two-sided 95%
    int max_edf_cols = 1500;
};

struct FammBand {
    std::string term;
    Eigen::VectorXd est, lo, hi;  // on the eigen grid
};

// Joint penalized fit of the mean and the basis weights. The FPC blocks are
// penalized by diag(1/nu) per level with the smoothing parameter held fixed
// at one after scaling by the step-2 noise variance, matching the
// distributional assumption xi ~ N(0, diag(nu)); only the mean smoothing
// parameters are selected.
struct FammFit {
    MeanModel mean;
    PredictionResult pred;        // method tag "FAMM"
    std::vector<FammBand> bands;
    std::vector<double> mean_lambdas;
    double lambda_star = 1.0;     // fixed FPC-block smoothing parameter
    double sigma2_resid = 0.0;
    double edf = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> warnings;
};

namespace detail {

struct FammDesign {
    Eigen::SparseMatrix<double> x;
    int p_mean = 0;
    std::vector<int> mean_offsets;
    BlupSystem blup;  // FPC part; columns appear after the mean block
};

inline FammDesign build_famm_design(const CurveSet& cs, const EigenSystem& es,
                                    const std::vector<MeanTerm>& terms) {
    FammDesign d;
    d.blup = build_blup_system(cs, es);
    for (const auto& t : terms) {
        d.mean_offsets.push_back(d.p_mean);
        d.p_mean += t.basis.size;
    }
    const int p = d.p_mean + d.blup.n_coef();
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> loc;
    for (std::size_t i = 0; i < cs.n_points(); ++i) {
        const ObsPoint& pt = cs.points[i];
        for (std::size_t m = 0; m < terms.size(); ++m) {
            const auto& term = terms[m];
            const double w =
                term.spec.covariate < 0 ? 1.0 : cs.covariates(pt.curve, term.spec.covariate);
            if (w == 0.0) continue;
            const int s = term.basis.span(pt.t);
            loc.resize(term.basis.degree + 1);
            term.basis.eval_local(pt.t, s, loc.data());
            for (int j = 0; j <= term.basis.degree; ++j)
                trip.emplace_back(static_cast<int>(i),
                                  d.mean_offsets[m] + s - term.basis.degree + j, w * loc[j]);
        }
    }
    for (int k = 0; k < d.blup.phi.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(d.blup.phi, k); it; ++it)
            trip.emplace_back(static_cast<int>(it.row()), d.p_mean + static_cast<int>(it.col()),
                              it.value());
    d.x.resize(static_cast<int>(cs.n_points()), p);
    d.x.setFromTriplets(trip.begin(), trip.end());
    return d;
}

}  // namespace detail

inline FammFit fit_famm(const CurveSet& cs, const EigenSystem& es,
                        const std::vector<MeanTermSpec>& specs, const FammOptions& opt = {}) {
    FammFit out;
    out.pred.method = "FAMM";

    // With nothing retained the joint fit is the working-independence fit.
    if (es.total_retained() == 0) {
        out.mean = fit_mean(cs, specs, opt.mean, &out.warnings);
        for (const auto& t : out.mean.terms) out.mean_lambdas.push_back(t.lambda);
        Eigen::VectorXd fitted(cs.n_points());
        for (std::size_t i = 0; i < cs.n_points(); ++i)
            fitted[i] = out.mean.predict_point(
                cs.points[i].t, cs.covariates.cols() > 0
                                    ? Eigen::RowVectorXd(cs.covariates.row(cs.points[i].curve))
                                    : Eigen::RowVectorXd(0));
        out.pred.fitted = out.pred.fitted_centered = fitted;
        const GroupingDesign gd = cs.design();
        const std::array<int, 3> levels{gd.levels_g1, gd.levels_g2, gd.n_curves};
        for (int x = 0; x < 3; ++x) {
            out.pred.xi[x] = Eigen::MatrixXd::Zero(levels[x], 0);
            out.pred.curves_grid[x] = Eigen::MatrixXd::Zero(levels[x], es.grid.size());
        }
        return out;
    }

    // Mean terms reuse the step-1 basis layout.
    MeanModel model;
    model.covariate_names = cs.covariate_names;
    for (const auto& s : specs) {
        MeanTerm term;
        term.spec = s;
        term.basis = SplineBasis::uniform(opt.mean.k, cs.t_lo, cs.t_hi);
        term.penalty_order = opt.mean.penalty_order;
        model.terms.push_back(std::move(term));
    }

    detail::FammDesign dsg = detail::build_famm_design(cs, es, model.terms);
    const int p = static_cast<int>(dsg.x.cols());
    const int nt = static_cast<int>(model.terms.size());
    Eigen::VectorXd y(cs.n_points());
    for (std::size_t i = 0; i < cs.n_points(); ++i) y[i] = cs.points[i].y;

    const Eigen::SparseMatrix<double> xtx =
        Eigen::SparseMatrix<double>(dsg.x.transpose()) * dsg.x;
    const Eigen::VectorXd xty = dsg.x.transpose() * y;
    const double yty = y.squaredNorm();
    const double n = static_cast<double>(cs.n_points());

    const double sigma2_fix = es.sigma2;
    const PenaltyMatrix marg_pen = nt > 0 ? difference_penalty(opt.mean.k, opt.mean.penalty_order)
                                          : PenaltyMatrix{};
    int mean_rank = 0;
    double mean_logpdet1 = 0.0;  // log pseudo-det of one mean block at lambda 1
    if (nt > 0) mean_logpdet1 = logpdet_sym(marg_pen.s, &mean_rank);

    // Fixed FPC penalty: sigma2 * diag(1/nu) on every level block.
    Eigen::VectorXd fpc_pen = Eigen::VectorXd::Zero(dsg.blup.n_coef());
    for (int j = 0; j < dsg.blup.n_coef(); ++j)
        fpc_pen[j] = sigma2_fix / dsg.blup.g_diag[j];
    double fpc_logpdet = 0.0;
    int fpc_rank = 0;
    if (sigma2_fix > 0.0) {
        fpc_rank = dsg.blup.n_coef();
        fpc_logpdet = fpc_pen.array().log().sum();
    }

    auto assemble = [&](const std::vector<double>& lam) {
        std::vector<Eigen::Triplet<double>> trip;
        for (int m = 0; m < nt; ++m)
            for (int i = 0; i < opt.mean.k; ++i)
                for (int j = 0; j < opt.mean.k; ++j)
                    if (marg_pen.s(i, j) != 0.0)
                        trip.emplace_back(dsg.mean_offsets[m] + i, dsg.mean_offsets[m] + j,
                                          lam[m] * marg_pen.s(i, j));
        for (int j = 0; j < dsg.blup.n_coef(); ++j)
            if (fpc_pen[j] > 0.0) trip.emplace_back(dsg.p_mean + j, dsg.p_mean + j, fpc_pen[j]);
        Eigen::SparseMatrix<double> s(p, p);
        s.setFromTriplets(trip.begin(), trip.end());
        return Eigen::SparseMatrix<double>(xtx + s);
    };

    auto penalty_of = [&](const std::vector<double>& lam, const Eigen::VectorXd& beta) {
        double pen = 0.0;
        for (int m = 0; m < nt; ++m) {
            const Eigen::VectorXd seg = beta.segment(dsg.mean_offsets[m], opt.mean.k);
            pen += lam[m] * seg.dot(marg_pen.s * seg);
        }
        pen += beta.tail(dsg.blup.n_coef()).cwiseAbs2().dot(fpc_pen);
        return pen;
    };

    const double mp = p - nt * mean_rank - fpc_rank;
    auto reml = [&](const std::vector<double>& lam,
                    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>& ldlt,
                    Eigen::VectorXd& beta) {
        ldlt.compute(assemble(lam));
        if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
            return std::numeric_limits<double>::infinity();
        beta = ldlt.solve(xty);
        const double rss =
            std::max(0.0, yty - 2.0 * beta.dot(xty) + beta.dot(xtx * beta));
        const double rsspen = std::max(rss + penalty_of(lam, beta), 1e-280);
        double logpdet_s = fpc_logpdet;
        for (int m = 0; m < nt; ++m)
            logpdet_s += mean_rank * std::log(lam[m]) + mean_logpdet1;
        const double logdet_a = ldlt.vectorD().array().log().sum();
        return (n - mp) * std::log(rsspen) + logdet_a - logpdet_s;
    };

    std::vector<double> lambdas(nt, opt.mean.fixed_lambda.value_or(1.0));
    if (!opt.mean.fixed_lambda && nt > 0) {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
        Eigen::VectorXd beta_tmp;
        const int sweeps = nt > 1 ? 2 : 1;
        for (int sweep = 0; sweep < sweeps; ++sweep) {
            for (int m = 0; m < nt; ++m) {
                auto score = [&](double loglam) {
                    lambdas[m] = std::exp(loglam);
                    return reml(lambdas, ldlt, beta_tmp);
                };
                const double lo = -12.0, hi = 12.0;
                const int ngrid = 25;
                double best_x = lo, best_f = std::numeric_limits<double>::infinity();
                for (int i = 0; i < ngrid; ++i) {
                    const double xg = lo + (hi - lo) * i / (ngrid - 1);
                    const double f = score(xg);
                    if (f < best_f) { best_f = f; best_x = xg; }
                }
                const double h = (hi - lo) / (ngrid - 1);
                double a = std::max(lo, best_x - h), b = std::min(hi, best_x + h);
                const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
                double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
                double f1 = score(x1), f2 = score(x2);
                for (int it = 0; it < 50 && (b - a) > 1e-8; ++it) {
                    if (f1 <= f2) { b = x2; x2 = x1; f2 = f1; x1 = b - gr * (b - a); f1 = score(x1); }
                    else { a = x1; x1 = x2; f1 = f2; x2 = a + gr * (b - a); f2 = score(x2); }
                }
                const double xstar = f1 <= f2 ? x1 : x2;
                lambdas[m] = std::exp(std::min(f1, f2) < best_f ? xstar : best_x);
            }
        }
    }

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(assemble(lambdas));
    bool spd = ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 0.0;
    Eigen::MatrixXd dense_pinv;
    if (!spd) {
        out.warnings.push_back("joint system rank deficient; generalized inverse used");
        dense_pinv = pseudo_inverse_sym(Eigen::MatrixXd(assemble(lambdas)));
    }
    auto solve_a = [&](const Eigen::VectorXd& rhs) -> Eigen::VectorXd {
        return spd ? Eigen::VectorXd(ldlt.solve(rhs)) : Eigen::VectorXd(dense_pinv * rhs);
    };

    Eigen::VectorXd beta = solve_a(xty);

    // Sum-to-zero centring of each random process, per component, imposed by
    // projecting the unconstrained solution: beta <- beta - Y (C Y)^{-1} C beta
    // with A Y = C'.
    Eigen::MatrixXd ymat;       // p x n_con
    Eigen::MatrixXd minv;       // (C Y)^{-1}
    std::vector<std::pair<int, int>> con;  // (process, component)
    if (opt.center_random_effects) {
        for (int x = 0; x < 3; ++x)
            if (dsg.blup.levels[x] > 1)
                for (int k = 0; k < dsg.blup.lags[x]; ++k) con.emplace_back(x, k);
    }
    if (!con.empty()) {
        const int nc = static_cast<int>(con.size());
        Eigen::MatrixXd ct = Eigen::MatrixXd::Zero(p, nc);  // C'
        for (int c = 0; c < nc; ++c) {
            const auto [x, k] = con[c];
            for (int l = 0; l < dsg.blup.levels[x]; ++l)
                ct(dsg.p_mean + dsg.blup.col_offset[x] + l * dsg.blup.lags[x] + k, c) = 1.0;
        }
        ymat.resize(p, nc);
        for (int c = 0; c < nc; ++c) ymat.col(c) = solve_a(ct.col(c));
        const Eigen::MatrixXd m = ct.transpose() * ymat;  // C Y
        minv = pseudo_inverse_sym(0.5 * (m + m.transpose()));
        beta -= ymat * (minv * (ct.transpose() * beta));
    }

    const double rss = std::max(0.0, yty - 2.0 * beta.dot(xty) + beta.dot(xtx * beta));
    const double pen = penalty_of(lambdas, beta);
    out.sigma2_resid = (rss + pen) / std::max(1.0, n - mp);
    out.mean_lambdas = lambdas;

    for (int m = 0; m < nt; ++m) {
        model.terms[m].coef = beta.segment(dsg.mean_offsets[m], opt.mean.k);
        model.terms[m].lambda = lambdas[m];
    }
    out.mean = model;

    const Eigen::VectorXd xi = beta.tail(dsg.blup.n_coef());
    for (int x = 0; x < 3; ++x) {
        const int nlag = dsg.blup.lags[x];
        const int nlev = dsg.blup.levels[x];
        out.pred.xi[x].resize(nlev, nlag);
        for (int l = 0; l < nlev; ++l)
            for (int k = 0; k < nlag; ++k)
                out.pred.xi[x](l, k) = xi[dsg.blup.col_offset[x] + l * nlag + k];
        out.pred.curves_grid[x] =
            nlag > 0
                ? Eigen::MatrixXd(out.pred.xi[x] * es.proc[x].vectors.leftCols(nlag).transpose())
                : Eigen::MatrixXd::Zero(nlev, es.grid.size());
    }
    out.pred.fitted = dsg.x * beta;
    out.pred.fitted_centered = dsg.blup.phi * xi;

    // Point-wise bands for the mean terms from the constraint-corrected
    // coefficient covariance sigma2 * (A^{-1} - Y (C Y)^{-1} Y').
    if (nt > 0) {
        Eigen::MatrixXd w(p, dsg.p_mean);
        for (int j = 0; j < dsg.p_mean; ++j) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
            e[j] = 1.0;
            w.col(j) = solve_a(e);
        }
        Eigen::MatrixXd v_mean = w.topRows(dsg.p_mean);
        if (!con.empty()) {
            const Eigen::MatrixXd ym = ymat.topRows(dsg.p_mean);
            v_mean -= ym * minv * ym.transpose();
        }
        v_mean *= out.sigma2_resid;
        for (int m = 0; m < nt; ++m) {
            const Eigen::MatrixXd bg = model.terms[m].basis.eval(es.grid);
            FammBand band;
            band.term = model.terms[m].spec.label;
            band.est = bg * model.terms[m].coef;
            band.lo.resize(es.grid.size());
            band.hi.resize(es.grid.size());
            const Eigen::MatrixXd vb =
                v_mean.block(dsg.mean_offsets[m], dsg.mean_offsets[m], opt.mean.k, opt.mean.k);
            for (Eigen::Index i = 0; i < es.grid.size(); ++i) {
                const Eigen::VectorXd row = bg.row(i).transpose();
                const double sd = std::sqrt(std::max(0.0, row.dot(vb * row)));
                band.lo[i] = band.est[i] - opt.z_quantile * sd;
                band.hi[i] = band.est[i] + opt.z_quantile * sd;
            }
            out.bands.push_back(std::move(band));
        }
    }

    // Effective dimension, p - tr(A^{-1} S); skipped for very wide systems.
    if (p <= opt.max_edf_cols) {
        double tr = 0.0;
        for (int m = 0; m < nt; ++m) {
            for (int i = 0; i < opt.mean.k; ++i) {
                Eigen::VectorXd s_col = Eigen::VectorXd::Zero(p);
                for (int j = 0; j < opt.mean.k; ++j)
                    s_col[dsg.mean_offsets[m] + j] = lambdas[m] * marg_pen.s(j, i);
                tr += solve_a(s_col)[dsg.mean_offsets[m] + i];
            }
        }
        for (int j = 0; j < dsg.blup.n_coef(); ++j) {
            if (fpc_pen[j] <= 0.0) continue;
            Eigen::VectorXd s_col = Eigen::VectorXd::Zero(p);
            s_col[dsg.p_mean + j] = fpc_pen[j];
            tr += solve_a(s_col)[dsg.p_mean + j];
        }
        out.edf = p - tr;
    }
    return out;
}

}  // namespace flmm
