#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flmm/numerics.hpp"

namespace flmm {

// B-spline basis on equidistant knots that extend degree intervals beyond
// each boundary. On this knot layout the basis sums to one on the whole
// domain and coefficient sequences that are affine in the index represent
// exactly the affine functions, so difference penalties have the usual
// polynomial null space in function space.
struct SplineBasis {
    int degree = 3;
    int size = 0;               // number of basis functions K
    double lo = 0.0, hi = 1.0;
    std::vector<double> knots;  // size + degree + 1 entries

    static SplineBasis uniform(int k, double lo, double hi, int degree = 3) {
        if (k < degree + 1) throw std::invalid_argument("SplineBasis: need K >= degree+1");
        if (!(hi > lo)) throw std::invalid_argument("SplineBasis: empty domain");
        SplineBasis b;
        b.degree = degree;
        b.size = k;
        b.lo = lo;
        b.hi = hi;
        b.knots.resize(k + degree + 1);
        const double h = (hi - lo) / (k - degree);
        for (int i = 0; i < k + degree + 1; ++i) b.knots[i] = lo + (i - degree) * h;
        return b;
    }

    bool contains(double t) const {
        const double eps = 1e-12 * (hi - lo);
        return t >= lo - eps && t <= hi + eps;
    }

    // Index of the knot span containing t; the nonzero basis functions are
    // span-degree .. span.
    int span(double t) const {
        if (!contains(t))
            throw std::out_of_range("SplineBasis: point outside domain");
        t = std::min(std::max(t, lo), hi);
        const double h = (hi - lo) / (size - degree);
        int s = degree + static_cast<int>((t - lo) / h);
        s = std::min(std::max(s, degree), size - 1);
        while (s > degree && t < knots[s]) --s;
        while (s < size - 1 && t >= knots[s + 1]) ++s;
        return s;
    }

    // de Boor evaluation of the degree+1 local basis values at t.
    void eval_local(double t, int s, double* out) const {
        out[0] = 1.0;
        std::vector<double> left(degree + 1), right(degree + 1);
        t = std::min(std::max(t, lo), hi);
        for (int j = 1; j <= degree; ++j) {
            left[j] = t - knots[s + 1 - j];
            right[j] = knots[s + j] - t;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double tmp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            out[j] = saved;
        }
    }

    Eigen::RowVectorXd eval_row(double t) const {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(size);
        const int s = span(t);
        std::vector<double> loc(degree + 1);
        eval_local(t, s, loc.data());
        for (int j = 0; j <= degree; ++j) row[s - degree + j] = loc[j];
        return row;
    }

    Eigen::MatrixXd eval(const Eigen::VectorXd& ts) const {
        Eigen::MatrixXd m(ts.size(), size);
        for (Eigen::Index i = 0; i < ts.size(); ++i) m.row(i) = eval_row(ts[i]);
        return m;
    }
};

struct PenaltyMatrix {
    int order = 0;
    Eigen::MatrixXd s;  // K x K, symmetric PSD, rank K - order
};

// d-th order difference operator, (K-d) x K.
inline Eigen::MatrixXd difference_operator(int k, int d) {
    if (d < 1 || k <= d)
        throw std::invalid_argument("difference_operator: need K > d >= 1");
    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(k - 1, k);
    for (int i = 0; i < k - 1; ++i) {
        delta(i, i) = -1.0;
        delta(i, i + 1) = 1.0;
    }
    Eigen::MatrixXd out = delta;
    for (int j = 1; j < d; ++j) {
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k - j - 1, k - j);
        for (int i = 0; i < k - j - 1; ++i) {
            next(i, i) = -1.0;
            next(i, i + 1) = 1.0;
        }
        out = next * out;
    }
    return out;
}

inline PenaltyMatrix difference_penalty(int k, int d) {
    const Eigen::MatrixXd delta = difference_operator(k, d);
    return PenaltyMatrix{d, delta.transpose() * delta};
}

// Accumulated sufficient statistics X'X, X'y, y'y for a streamed design.
struct NormalEq {
    Eigen::MatrixXd xtx;
    Eigen::VectorXd xty;
    double yty = 0.0;
    std::int64_t nrows = 0;
};

class NormalEqAccumulator {
public:
    explicit NormalEqAccumulator(int ncols)
        : ncols_(ncols),
          xtx_(Eigen::MatrixXd::Zero(ncols, ncols)),
          xty_(Eigen::VectorXd::Zero(ncols)) {}

    void add(const double* row, double y) {
        for (int i = 0; i < ncols_; ++i) {
            if (row[i] == 0.0) continue;
            for (int j = i; j < ncols_; ++j) xtx_(i, j) += row[i] * row[j];
            xty_[i] += row[i] * y;
        }
        yty_ += y * y;
        ++nrows_;
    }

    // Sparse row given as parallel index/value arrays.
    void add_sparse(const int* idx, const double* val, int nnz, double y) {
        for (int a = 0; a < nnz; ++a) {
            const int i = idx[a];
            if (i < 0 || i >= ncols_) throw std::out_of_range("NormalEqAccumulator: column index");
            for (int b = a; b < nnz; ++b) {
                const int j = idx[b];
                if (j >= i)
                    xtx_(i, j) += val[a] * val[b];
                else
                    xtx_(j, i) += val[a] * val[b];
            }
            xty_[i] += val[a] * y;
        }
        yty_ += y * y;
        ++nrows_;
    }

    // Partial sums combine by addition, so chunked accumulation over any
    // partition of the rows gives the same result up to reassociation.
    void merge(const NormalEqAccumulator& other) {
        if (other.ncols_ != ncols_) throw std::invalid_argument("NormalEqAccumulator: ncols mismatch");
        xtx_ += other.xtx_;
        xty_ += other.xty_;
        yty_ += other.yty_;
        nrows_ += other.nrows_;
    }

    NormalEq result() const {
        NormalEq ne;
        ne.xtx = xtx_.selfadjointView<Eigen::Upper>();
        ne.xty = xty_;
        ne.yty = yty_;
        ne.nrows = nrows_;
        return ne;
    }

    int ncols() const { return ncols_; }

private:
    int ncols_;
    Eigen::MatrixXd xtx_;
    Eigen::VectorXd xty_;
    double yty_ = 0.0;
    std::int64_t nrows_ = 0;
};

template <class RowFn>
NormalEq accumulate_normal_equations(RowFn&& stream, int ncols) {
    NormalEqAccumulator acc(ncols);
    stream(acc);
    return acc.result();
}

enum class SmoothCriterion { Reml, Gcv };

// One quadratic penalty lambda * theta' S theta acting on a contiguous
// coefficient block. Blocks sharing a group id share one smoothing parameter.
struct PenaltySpec {
    int offset = 0;
    Eigen::MatrixXd s;
    double lambda = 1.0;
    bool select = false;
    int group = -1;  // defaults to its own index
};

struct PenalizedLsFit {
    Eigen::VectorXd coef;
    std::vector<double> lambdas;       // per penalty block
    double edf = 0.0;
    double rss = 0.0;
    double penalty = 0.0;
    double sigma2 = 0.0;               // rss / (n - edf)
    Eigen::MatrixXd cov_unscaled;      // (X'X + S_lambda)^{-1}
    double criterion = std::numeric_limits<double>::quiet_NaN();
    bool used_pinv = false;
    std::vector<std::string> warnings;
};

namespace detail {

struct PenaltyInfo {
    int rank = 0;
    double logpdet = 0.0;  // of S at lambda = 1
};

inline Eigen::MatrixXd assemble_system(const NormalEq& ne,
                                       const std::vector<PenaltySpec>& pens,
                                       const std::vector<double>& lambdas) {
    Eigen::MatrixXd a = ne.xtx;
    for (size_t m = 0; m < pens.size(); ++m) {
        const auto& p = pens[m];
        const int k = static_cast<int>(p.s.rows());
        a.block(p.offset, p.offset, k, k) += lambdas[m] * p.s;
    }
    return a;
}

struct EvalOut {
    double criterion;
    Eigen::VectorXd coef;
    double rsspen;
};

// Gaussian REML score profiled over the error variance, up to constants:
//   (n - Mp) * log(rss + pen) + log|X'X + S| - log|S|+
// Mp is the total null-space dimension of the assembled penalty.
inline EvalOut eval_criterion(const NormalEq& ne, const std::vector<PenaltySpec>& pens,
                              const std::vector<PenaltyInfo>& info,
                              const std::vector<double>& lambdas,
                              SmoothCriterion crit) {
    const int p = static_cast<int>(ne.xtx.rows());
    Eigen::MatrixXd a = assemble_system(ne, pens, lambdas);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    EvalOut out;
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
        a += (1e-10 * a.trace() / std::max(1, p)) * Eigen::MatrixXd::Identity(p, p);
        ldlt.compute(a);
        if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
            out.criterion = std::numeric_limits<double>::infinity();
            out.coef = Eigen::VectorXd::Zero(p);
            out.rsspen = ne.yty;
            return out;
        }
    }
    out.coef = ldlt.solve(ne.xty);
    const double rss = std::max(0.0, ne.yty - 2.0 * out.coef.dot(ne.xty) +
                                          out.coef.dot(ne.xtx * out.coef));
    double pen = 0.0;
    for (size_t m = 0; m < pens.size(); ++m) {
        const auto& pb = pens[m];
        const int k = static_cast<int>(pb.s.rows());
        const Eigen::VectorXd seg = out.coef.segment(pb.offset, k);
        pen += lambdas[m] * seg.dot(pb.s * seg);
    }
    out.rsspen = std::max(rss + pen, 1e-280);

    int rank_total = 0;
    double logpdet_s = 0.0;
    for (size_t m = 0; m < pens.size(); ++m) {
        if (lambdas[m] <= 0.0) continue;
        rank_total += info[m].rank;
        logpdet_s += info[m].rank * std::log(lambdas[m]) + info[m].logpdet;
    }
    const double n = static_cast<double>(ne.nrows);
    if (crit == SmoothCriterion::Reml) {
        const double logdet_a = ldlt.vectorD().array().log().sum();
        const double mp = p - rank_total;
        out.criterion = (n - mp) * std::log(out.rsspen) + logdet_a - logpdet_s;
    } else {
        const Eigen::MatrixXd ainv_xtx = ldlt.solve(ne.xtx);
        const double edf = ainv_xtx.trace();
        const double denom = std::max(1e-8, n - edf);
        out.criterion = n * std::max(rss, 1e-280) / (denom * denom);
    }
    return out;
}

}  // namespace detail

// Minimizes ||y - X theta||^2 + sum_m lambda_m theta' S_m theta given the
// normal equations. Smoothing parameters flagged select are chosen by the
// requested criterion: a coarse grid on log(lambda) in [-12, 12] followed by
// golden-section refinement, coordinate-wise with two sweeps when several
// groups are selectable.
inline PenalizedLsFit solve_penalized_ls(const NormalEq& ne, std::vector<PenaltySpec> pens,
                                         SmoothCriterion crit = SmoothCriterion::Reml) {
    const int p = static_cast<int>(ne.xtx.rows());
    for (size_t m = 0; m < pens.size(); ++m) {
        if (pens[m].group < 0) pens[m].group = static_cast<int>(m);
        if (pens[m].offset < 0 || pens[m].offset + pens[m].s.rows() > p)
            throw std::invalid_argument("solve_penalized_ls: penalty block out of range");
    }

    std::vector<detail::PenaltyInfo> info(pens.size());
    for (size_t m = 0; m < pens.size(); ++m)
        info[m].logpdet = logpdet_sym(pens[m].s, &info[m].rank);

    std::vector<int> groups;
    for (const auto& pb : pens)
        if (pb.select && std::find(groups.begin(), groups.end(), pb.group) == groups.end())
            groups.push_back(pb.group);

    std::vector<double> lambdas(pens.size());
    for (size_t m = 0; m < pens.size(); ++m) lambdas[m] = pens[m].lambda;

    PenalizedLsFit fit;
    const bool trivial_response = ne.xty.cwiseAbs().maxCoeff() == 0.0;

    if (!groups.empty() && !trivial_response) {
        auto set_group = [&](int g, double loglam) {
            for (size_t m = 0; m < pens.size(); ++m)
                if (pens[m].select && pens[m].group == g) lambdas[m] = std::exp(loglam);
        };
        auto score = [&](int g, double loglam) {
            set_group(g, loglam);
            return detail::eval_criterion(ne, pens, info, lambdas, crit).criterion;
        };
        const double lo = -12.0, hi = 12.0;
        const int sweeps = groups.size() > 1 ? 2 : 1;
        for (int sweep = 0; sweep < sweeps; ++sweep) {
            for (int g : groups) {
                const int ngrid = 25;
                double best_x = lo, best_f = std::numeric_limits<double>::infinity();
                for (int i = 0; i < ngrid; ++i) {
                    const double x = lo + (hi - lo) * i / (ngrid - 1);
                    const double f = score(g, x);
                    if (f < best_f) { best_f = f; best_x = x; }
                }
                const double h = (hi - lo) / (ngrid - 1);
                double a = std::max(lo, best_x - h), b = std::min(hi, best_x + h);
                const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
                double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
                double f1 = score(g, x1), f2 = score(g, x2);
                for (int it = 0; it < 60 && (b - a) > 1e-9; ++it) {
                    if (f1 <= f2) { b = x2; x2 = x1; f2 = f1; x1 = b - gr * (b - a); f1 = score(g, x1); }
                    else { a = x1; x1 = x2; f1 = f2; x2 = a + gr * (b - a); f2 = score(g, x2); }
                }
                const double xstar = f1 <= f2 ? x1 : x2;
                set_group(g, std::min(f1, f2) < best_f ? xstar : best_x);
            }
        }
    } else if (!groups.empty()) {
        // Nothing to fit against; any lambda gives the zero solution.
        for (size_t m = 0; m < pens.size(); ++m)
            if (pens[m].select) lambdas[m] = 1.0;
    }

    // Final solve at the chosen lambdas.
    Eigen::MatrixXd a = detail::assemble_system(ne, pens, lambdas);
    SymSolveResult inv = sym_inverse(a);
    if (inv.used_pinv) {
        fit.used_pinv = true;
        fit.warnings.push_back("penalized normal matrix rank deficient; generalized inverse used");
    }
    fit.coef = inv.inverse * ne.xty;
    // Iterative refinement with extended-precision residuals; the assembled
    // system can span ~12 orders of magnitude when a penalty is huge.
    for (int step = 0; step < 30; ++step) {
        Eigen::VectorXd resid(p);
        for (int i = 0; i < p; ++i) {
            long double s = ne.xty[i];
            for (int j = 0; j < p; ++j)
                s -= static_cast<long double>(a(i, j)) * static_cast<long double>(fit.coef[j]);
            resid[i] = static_cast<double>(s);
        }
        const Eigen::VectorXd delta = inv.inverse * resid;
        fit.coef += delta;
        if (delta.norm() <= 1e-15 * fit.coef.norm()) break;
    }
    fit.cov_unscaled = inv.inverse;
    fit.lambdas = lambdas;
    fit.rss = std::max(0.0, ne.yty - 2.0 * fit.coef.dot(ne.xty) +
                                fit.coef.dot(ne.xtx * fit.coef));
    for (size_t m = 0; m < pens.size(); ++m) {
        const int k = static_cast<int>(pens[m].s.rows());
        const Eigen::VectorXd seg = fit.coef.segment(pens[m].offset, k);
        fit.penalty += lambdas[m] * seg.dot(pens[m].s * seg);
    }
    fit.edf = (inv.inverse * ne.xtx).trace();
    const double denom = std::max(1.0, static_cast<double>(ne.nrows) - fit.edf);
    fit.sigma2 = fit.rss / denom;
    fit.criterion = detail::eval_criterion(ne, pens, info, lambdas, crit).criterion;
    return fit;
}

inline PenalizedLsFit solve_penalized_ls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                         std::vector<PenaltySpec> pens,
                                         SmoothCriterion crit = SmoothCriterion::Reml) {
    if (x.rows() != y.size()) throw std::invalid_argument("solve_penalized_ls: row mismatch");
    NormalEq ne;
    ne.xtx = x.transpose() * x;
    ne.xty = x.transpose() * y;
    ne.yty = y.squaredNorm();
    ne.nrows = x.rows();
    return solve_penalized_ls(ne, std::move(pens), crit);
}

}  // namespace flmm
