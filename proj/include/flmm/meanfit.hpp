#pragma once

#include <Eigen/Core>

#include <cctype>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flmm/basis.hpp"
#include "flmm/fdata.hpp"

namespace flmm {

// One additive term f_p(t) * x_p of the varying-coefficient mean.
// covariate == -1 denotes the functional intercept f_0(t).
struct MeanTermSpec {
    std::string label;
    int covariate = -1;
};

// Parses specifications like "t + t:order + t:stress1".
inline std::vector<MeanTermSpec> parse_mean_terms(const std::string& spec,
                                                  const std::vector<std::string>& covariate_names) {
    std::vector<MeanTermSpec> out;
    std::string token;
    auto flush = [&]() {
        std::string s;
        for (char c : token)
            if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
        token.clear();
        if (s.empty()) return;
        MeanTermSpec term;
        term.label = s;
        if (s == "t") {
            term.covariate = -1;
        } else if (s.rfind("t:", 0) == 0) {
            const std::string name = s.substr(2);
            int ix = -1;
            for (size_t i = 0; i < covariate_names.size(); ++i)
                if (covariate_names[i] == name) ix = static_cast<int>(i);
            if (ix < 0) throw std::invalid_argument("unknown covariate in mean term: " + name);
            term.covariate = ix;
        } else {
            throw std::invalid_argument("cannot parse mean term '" + s + "' (expected t or t:<covariate>)");
        }
        out.push_back(term);
    };
    for (char c : spec) {
        if (c == '+') flush();
        else token.push_back(c);
    }
    flush();
    if (out.empty()) throw std::invalid_argument("empty mean specification");
    return out;
}

struct MeanTerm {
    MeanTermSpec spec;
    SplineBasis basis;
    Eigen::VectorXd coef;
    double lambda = 0.0;
    int penalty_order = 3;
};

struct MeanModel {
    std::vector<MeanTerm> terms;
    std::vector<std::string> covariate_names;

    int n_coef() const {
        int p = 0;
        for (const auto& t : terms) p += t.basis.size;
        return p;
    }

    double predict_point(double t, const Eigen::RowVectorXd& x) const {
        double mu = 0.0;
        for (const auto& term : terms) {
            const double w = term.spec.covariate < 0 ? 1.0 : x[term.spec.covariate];
            if (w == 0.0) continue;
            mu += w * term.basis.eval_row(t).dot(term.coef);
        }
        return mu;
    }

    Eigen::VectorXd predict(const Eigen::VectorXd& ts, const Eigen::RowVectorXd& x) const {
        Eigen::VectorXd out(ts.size());
        for (Eigen::Index i = 0; i < ts.size(); ++i) out[i] = predict_point(ts[i], x);
        return out;
    }

    // Evaluates a single term function f_p on a grid.
    Eigen::VectorXd term_values(int p, const Eigen::VectorXd& ts) const {
        return terms.at(p).basis.eval(ts) * terms.at(p).coef;
    }
};

struct MeanFitOptions {
    int k = 8;
    int penalty_order = 3;
    SmoothCriterion criterion = SmoothCriterion::Reml;
    std::optional<double> fixed_lambda;
};

// Working-independence penalized fit of the additive varying-coefficient
// mean over the pooled scatter of all observation points.
inline MeanModel fit_mean(const CurveSet& cs, const std::vector<MeanTermSpec>& specs,
                          const MeanFitOptions& opt = {},
                          std::vector<std::string>* warnings = nullptr) {
    auto warn = [&](const std::string& w) {
        if (warnings) warnings->push_back(w);
    };
    MeanModel model;
    model.covariate_names = cs.covariate_names;
    const int nt = static_cast<int>(specs.size());
    const int p = nt * opt.k;
    if (static_cast<std::int64_t>(cs.n_points()) <= p)
        warn("fewer observation points than mean coefficients");

    for (const auto& s : specs) {
        if (s.covariate >= static_cast<int>(cs.covariate_names.size()))
            throw std::invalid_argument("mean term references missing covariate");
        if (s.covariate >= 0) {
            const auto col = cs.covariates.col(s.covariate);
            if ((col.array() == col[0]).all())
                warn("covariate " + cs.covariate_names[s.covariate] +
                     " is constant; term confounded with the intercept");
        }
        MeanTerm term;
        term.spec = s;
        term.basis = SplineBasis::uniform(opt.k, cs.t_lo, cs.t_hi);
        term.penalty_order = opt.penalty_order;
        model.terms.push_back(std::move(term));
    }

    NormalEqAccumulator acc(p);
    std::vector<int> idx(nt * (model.terms[0].basis.degree + 1));
    std::vector<double> val(idx.size());
    std::vector<double> loc(model.terms[0].basis.degree + 1);
    for (const auto& pt : cs.points) {
        int nnz = 0;
        for (int m = 0; m < nt; ++m) {
            const auto& term = model.terms[m];
            const double w =
                term.spec.covariate < 0 ? 1.0 : cs.covariates(pt.curve, term.spec.covariate);
            if (w == 0.0) continue;
            const int s = term.basis.span(pt.t);
            term.basis.eval_local(pt.t, s, loc.data());
            for (int j = 0; j <= term.basis.degree; ++j) {
                idx[nnz] = m * opt.k + s - term.basis.degree + j;
                val[nnz] = w * loc[j];
                ++nnz;
            }
        }
        acc.add_sparse(idx.data(), val.data(), nnz, pt.y);
    }

    std::vector<PenaltySpec> pens;
    const PenaltyMatrix pm = difference_penalty(opt.k, opt.penalty_order);
    for (int m = 0; m < nt; ++m) {
        PenaltySpec ps;
        ps.offset = m * opt.k;
        ps.s = pm.s;
        if (opt.fixed_lambda) {
            ps.lambda = *opt.fixed_lambda;
        } else {
            ps.select = true;
        }
        pens.push_back(std::move(ps));
    }

    PenalizedLsFit fit = solve_penalized_ls(acc.result(), pens, opt.criterion);
    if (warnings)
        warnings->insert(warnings->end(), fit.warnings.begin(), fit.warnings.end());
    for (int m = 0; m < nt; ++m) {
        model.terms[m].coef = fit.coef.segment(m * opt.k, opt.k);
        model.terms[m].lambda = fit.lambdas[m];
    }
    return model;
}

inline MeanModel fit_mean(const CurveSet& cs, const std::string& spec,
                          const MeanFitOptions& opt = {},
                          std::vector<std::string>* warnings = nullptr) {
    return fit_mean(cs, parse_mean_terms(spec, cs.covariate_names), opt, warnings);
}

// Subtracts the fitted mean from every observation.
inline CurveSet center_responses(const CurveSet& cs, const MeanModel& mean) {
    if (!mean.terms.empty()) {
        for (const auto& term : mean.terms)
            if (term.spec.covariate >= static_cast<int>(cs.covariate_names.size()) ||
                (term.spec.covariate >= 0 && cs.covariates.cols() <= term.spec.covariate))
                throw std::invalid_argument("center_responses: covariate schema mismatch");
    }
    CurveSet out = cs;
    for (auto& p : out.points) {
        const Eigen::RowVectorXd x =
            cs.covariates.cols() > 0 ? Eigen::RowVectorXd(cs.covariates.row(p.curve))
                                     : Eigen::RowVectorXd(0);
        p.y -= mean.predict_point(p.t, x);
    }
    return out;
}

}  // namespace flmm
