#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flmm/basis.hpp"
#include "flmm/fdata.hpp"

namespace flmm {

enum class Process { B = 0, C = 1, E = 2 };

inline const char* process_name(Process p) {
    switch (p) {
        case Process::B: return "B";
        case Process::C: return "C";
        default: return "E";
    }
}

// One cross product of centred responses. a and b index into cs.points;
// same_g1 etc. are the indicator covariates of the product regression.
struct ProductRow {
    std::size_t a = 0, b = 0;
    double t = 0.0, tp = 0.0;
    double value = 0.0;  // y_a * y_b
    bool same_g1 = false, same_g2 = false, same_curve = false, same_point = false;
};

// Visits every ordered pair of observation points sharing the first or the
// second grouping level (both orders, self pairs included). Pairs within one
// (g1, g2) cell are emitted exactly once.
template <class Fn>
void enumerate_products(const CurveSet& cs, Fn&& fn) {
    const std::size_t n = cs.points.size();
    std::vector<std::vector<std::size_t>> by_g1(cs.n_g1());
    for (std::size_t i = 0; i < n; ++i) by_g1[cs.points[i].g1].push_back(i);

    auto emit = [&](std::size_t a, std::size_t b, bool via_g1) {
        const ObsPoint& pa = cs.points[a];
        const ObsPoint& pb = cs.points[b];
        ProductRow r;
        r.a = a;
        r.b = b;
        r.t = pa.t;
        r.tp = pb.t;
        r.value = pa.y * pb.y;
        r.same_g1 = pa.g1 == pb.g1;
        r.same_g2 = cs.has_g2 && pa.g2 == pb.g2;
        r.same_curve = pa.curve == pb.curve;
        r.same_point = a == b;
        (void)via_g1;
        fn(r);
    };

    for (const auto& grp : by_g1)
        for (std::size_t a : grp)
            for (std::size_t b : grp) emit(a, b, true);

    if (cs.has_g2) {
        std::vector<std::vector<std::size_t>> by_g2(cs.n_g2());
        for (std::size_t i = 0; i < n; ++i) by_g2[cs.points[i].g2].push_back(i);
        for (const auto& grp : by_g2)
            for (std::size_t a : grp)
                for (std::size_t b : grp)
                    if (cs.points[a].g1 != cs.points[b].g1) emit(a, b, false);
    }
}

inline std::int64_t product_count(const CurveSet& cs) {
    std::int64_t c = 0;
    std::vector<std::int64_t> d1(cs.n_g1(), 0), d2(cs.n_g2(), 0);
    std::map<std::pair<int, int>, std::int64_t> cell;
    for (const auto& p : cs.points) {
        ++d1[p.g1];
        if (cs.has_g2) {
            ++d2[p.g2];
            ++cell[{p.g1, p.g2}];
        }
    }
    for (auto v : d1) c += v * v;
    for (auto v : d2) c += v * v;
    for (const auto& [key, v] : cell) c -= v * v;
    return c;
}

struct CovFitOptions {
    int k = 5;
    int penalty_order = 3;
    SmoothCriterion criterion = SmoothCriterion::Reml;
    std::optional<double> fixed_lambda;
    // Per-surface override (B, C, E); entries < 0 keep the shared behaviour.
    std::optional<std::array<double, 3>> surface_lambdas;
    bool streamed = false;  // literal row streaming instead of the grouped path
};

// Smooth method-of-moments estimate: three tensor-product spline surfaces
// plus the white-noise variance, fitted jointly to the response products.
struct CovarianceFit {
    SplineBasis marginal;
    GroupingDesign design;
    std::array<Eigen::MatrixXd, 3> coef;  // K x K per process; C empty for single-fRI
    double sigma2 = 0.0;
    bool sigma2_clamped = false;
    double lambda = 0.0;
    std::int64_t n_products = 0;
    std::vector<std::string> warnings;

    bool has_process(Process p) const {
        return p != Process::C || design.kind == GroupingDesign::Kind::Crossed;
    }
};

namespace detail {

// Row-major flattening of the tensor coefficient (k, l) -> k * K + l, matching
// design entries b_k(t) * b_l(t').
inline void add_kron(Eigen::MatrixXd& dst, int row0, int col0, const Eigen::MatrixXd& p,
                     const Eigen::MatrixXd& q) {
    const int k = static_cast<int>(p.rows());
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            dst.block(row0 + i * k, col0 + j * k, k, k) += p(i, j) * q;
}

inline Eigen::VectorXd vec_outer(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const int k = static_cast<int>(a.size());
    Eigen::VectorXd v(k * k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) v[i * k + j] = a[i] * b[j];
    return v;
}

// Sufficient statistics of one point group: P = sum u u', q = sum y u,
// s = sum y^2, d = point count.
struct GroupStat {
    Eigen::MatrixXd p;
    Eigen::VectorXd q;
    double s = 0.0;
    std::int64_t d = 0;
    explicit GroupStat(int k = 0)
        : p(Eigen::MatrixXd::Zero(k, k)), q(Eigen::VectorXd::Zero(k)) {}
    void add(const Eigen::VectorXd& u, double y) {
        p.selfadjointView<Eigen::Upper>().rankUpdate(u);
        q += y * u;
        s += y * y;
        ++d;
    }
    void sym() { p = p.selfadjointView<Eigen::Upper>(); }
};

}  // namespace detail

// All ordered pairs within a g1 group contribute P_g (x) P_g to the B block
// of the normal equations, and likewise for the other groupings, so the
// product regression collapses to per-group Gram matrices. The streamed path
// accumulates literal rows and is kept as a cross-check.
inline CovarianceFit fit_covariances(const CurveSet& cs, const CovFitOptions& opt = {}) {
    const GroupingDesign design = cs.design();
    const bool crossed = design.kind == GroupingDesign::Kind::Crossed;
    if (design.levels_g1 <= 1 && (!crossed || design.levels_g2 <= 1) && design.n_curves <= 1)
        throw std::invalid_argument("fit_covariances: degenerate design, one level in every grouping");

    const int k = opt.k;
    const int kk = k * k;
    const int nsurf = crossed ? 3 : 2;
    const int p = nsurf * kk + 1;
    const int off_b = 0;
    const int off_c = crossed ? kk : -1;
    const int off_e = crossed ? 2 * kk : kk;
    const int off_sigma = nsurf * kk;

    CovarianceFit out;
    out.marginal = SplineBasis::uniform(k, cs.t_lo, cs.t_hi);
    out.design = design;

    NormalEq ne;
    if (!opt.streamed) {
        // Per-point basis rows.
        const std::size_t npts = cs.points.size();
        Eigen::MatrixXd u(npts, k);
        for (std::size_t i = 0; i < npts; ++i) u.row(i) = out.marginal.eval_row(cs.points[i].t);

        detail::GroupStat total(k);
        std::vector<detail::GroupStat> g1_stat(design.levels_g1, detail::GroupStat(k));
        std::vector<detail::GroupStat> g2_stat(crossed ? design.levels_g2 : 0, detail::GroupStat(k));
        std::map<std::pair<int, int>, detail::GroupStat> cell_stat;
        std::vector<detail::GroupStat> curve_stat(design.n_curves, detail::GroupStat(k));
        for (std::size_t i = 0; i < npts; ++i) {
            const ObsPoint& pt = cs.points[i];
            const Eigen::VectorXd ui = u.row(i).transpose();
            total.add(ui, pt.y);
            g1_stat[pt.g1].add(ui, pt.y);
            if (crossed) {
                g2_stat[pt.g2].add(ui, pt.y);
                auto it = cell_stat.try_emplace(std::make_pair(pt.g1, pt.g2), k).first;
                it->second.add(ui, pt.y);
            }
            curve_stat[pt.curve].add(ui, pt.y);
        }
        total.sym();
        for (auto& g : g1_stat) g.sym();
        for (auto& g : g2_stat) g.sym();
        for (auto& [key, g] : cell_stat) g.sym();
        for (auto& g : curve_stat) g.sym();

        ne.xtx = Eigen::MatrixXd::Zero(p, p);
        ne.xty = Eigen::VectorXd::Zero(p);
        for (const auto& g : g1_stat) {
            detail::add_kron(ne.xtx, off_b, off_b, g.p, g.p);
            ne.xty.segment(off_b, kk) += detail::vec_outer(g.q, g.q);
            ne.yty += g.s * g.s;
            ne.nrows += g.d * g.d;
        }
        if (crossed) {
            for (const auto& g : g2_stat) {
                detail::add_kron(ne.xtx, off_c, off_c, g.p, g.p);
                ne.xty.segment(off_c, kk) += detail::vec_outer(g.q, g.q);
                ne.yty += g.s * g.s;
                ne.nrows += g.d * g.d;
            }
            for (const auto& [key, g] : cell_stat) {
                detail::add_kron(ne.xtx, off_b, off_c, g.p, g.p);
                ne.yty -= g.s * g.s;
                ne.nrows -= g.d * g.d;
            }
        }
        for (const auto& g : curve_stat) {
            Eigen::MatrixXd kron = Eigen::MatrixXd::Zero(kk, kk);
            detail::add_kron(kron, 0, 0, g.p, g.p);
            ne.xtx.block(off_e, off_e, kk, kk) += kron;
            ne.xtx.block(off_b, off_e, kk, kk) += kron;
            if (crossed) ne.xtx.block(off_c, off_e, kk, kk) += kron;
            ne.xty.segment(off_e, kk) += detail::vec_outer(g.q, g.q);
        }
        // Self pairs carry the noise column.
        Eigen::VectorXd diag_col = Eigen::VectorXd::Zero(kk);
        double sigma_y = 0.0;
        for (std::size_t i = 0; i < npts; ++i) {
            const Eigen::VectorXd ui = u.row(i).transpose();
            diag_col += detail::vec_outer(ui, ui);
            sigma_y += cs.points[i].y * cs.points[i].y;
        }
        ne.xtx.block(off_b, off_sigma, kk, 1) += diag_col;
        if (crossed) ne.xtx.block(off_c, off_sigma, kk, 1) += diag_col;
        ne.xtx.block(off_e, off_sigma, kk, 1) += diag_col;
        ne.xtx(off_sigma, off_sigma) += static_cast<double>(npts);
        ne.xty[off_sigma] += sigma_y;
        ne.xtx = ne.xtx.selfadjointView<Eigen::Upper>();
    } else {
        NormalEqAccumulator acc(p);
        std::vector<int> idx(p);
        std::vector<double> val(p);
        Eigen::RowVectorXd ua(k), ub(k);
        enumerate_products(cs, [&](const ProductRow& r) {
            ua = out.marginal.eval_row(cs.points[r.a].t);
            ub = out.marginal.eval_row(cs.points[r.b].t);
            int nnz = 0;
            auto add_block = [&](int off) {
                for (int i = 0; i < k; ++i) {
                    if (ua[i] == 0.0) continue;
                    for (int j = 0; j < k; ++j) {
                        if (ub[j] == 0.0) continue;
                        idx[nnz] = off + i * k + j;
                        val[nnz] = ua[i] * ub[j];
                        ++nnz;
                    }
                }
            };
            if (r.same_g1) add_block(off_b);
            if (crossed && r.same_g2) add_block(off_c);
            if (r.same_curve) add_block(off_e);
            if (r.same_point) {
                idx[nnz] = off_sigma;
                val[nnz] = 1.0;
                ++nnz;
            }
            acc.add_sparse(idx.data(), val.data(), nnz, r.value);
        });
        ne = acc.result();
    }
    out.n_products = ne.nrows;

    const PenaltyMatrix marg_pen = difference_penalty(k, opt.penalty_order);
    Eigen::MatrixXd s_tt = Eigen::MatrixXd::Zero(kk, kk);
    detail::add_kron(s_tt, 0, 0, marg_pen.s, marg_pen.s);

    std::vector<PenaltySpec> pens;
    for (int m = 0; m < nsurf; ++m) {
        PenaltySpec ps;
        ps.offset = m * kk;
        ps.s = s_tt;
        ps.group = 0;  // isotropic penalty shared across the surfaces
        if (opt.surface_lambdas && (*opt.surface_lambdas)[m] >= 0.0) {
            ps.lambda = (*opt.surface_lambdas)[m];
            ps.group = 100 + m;
        } else if (opt.fixed_lambda) {
            ps.lambda = *opt.fixed_lambda;
        } else {
            ps.select = true;
        }
        pens.push_back(std::move(ps));
    }

    PenalizedLsFit fit = solve_penalized_ls(ne, pens, opt.criterion);
    out.warnings = fit.warnings;
    out.lambda = fit.lambdas[0];

    auto reshape = [&](int off) {
        Eigen::MatrixXd c(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) c(i, j) = fit.coef[off + i * k + j];
        return c;
    };
    out.coef[0] = reshape(off_b);
    if (crossed) out.coef[1] = reshape(off_c);
    out.coef[2] = reshape(off_e);
    const double sigma2_raw = fit.coef[off_sigma];
    out.sigma2 = std::max(0.0, sigma2_raw);
    out.sigma2_clamped = sigma2_raw < 0.0;
    return out;
}

// Symmetrized surface evaluation (M + M') / 2 on an arbitrary grid.
inline Eigen::MatrixXd evaluate_surface(const CovarianceFit& fit, Process proc,
                                        const Eigen::VectorXd& grid) {
    if (!fit.has_process(proc))
        throw std::invalid_argument("evaluate_surface: no such process in this design");
    for (Eigen::Index i = 0; i < grid.size(); ++i)
        if (!fit.marginal.contains(grid[i]))
            throw std::out_of_range("evaluate_surface: grid point outside domain");
    const Eigen::MatrixXd b = fit.marginal.eval(grid);
    const Eigen::MatrixXd m = b * fit.coef[static_cast<int>(proc)] * b.transpose();
    return 0.5 * (m + m.transpose());
}

}  // namespace flmm
