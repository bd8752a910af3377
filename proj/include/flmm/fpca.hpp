#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flmm/covfit.hpp"
#include "flmm/numerics.hpp"

namespace flmm {

struct ProcessEigen {
    Eigen::VectorXd values;   // descending, trimmed at zero
    Eigen::MatrixXd vectors;  // D x n, orthonormal under weight `spacing`
    int retained = 0;
    bool present = false;
};

// Rescaled eigen structure of the three auto-covariance operators evaluated
// on an equidistant grid with endpoints on the domain boundary. Eigenvalues
// are scaled by the grid spacing a, eigenvectors by 1/sqrt(a), so retained
// columns satisfy a * Phi' Phi = I.
struct EigenSystem {
    Eigen::VectorXd grid;
    double spacing = 0.0;
    double domain_len = 0.0;
    std::array<ProcessEigen, 3> proc;
    double sigma2 = 0.0;
    double level = -1.0;  // explained-variance level; -1 when lags were fixed

    const ProcessEigen& operator[](Process p) const { return proc[static_cast<int>(p)]; }
    ProcessEigen& operator[](Process p) { return proc[static_cast<int>(p)]; }

    int total_retained() const {
        int n = 0;
        for (const auto& pe : proc) n += pe.retained;
        return n;
    }
};

struct TruncationChoice {
    std::array<int, 3> lags{0, 0, 0};
    double achieved = 0.0;
};

// Greedy component selection by decreasing eigenvalue across all processes
// until the explained share (including the noise term sigma2 * |T|) reaches
// `level`. Ties are broken in process order B, C, E.
inline TruncationChoice select_components(const std::array<Eigen::VectorXd, 3>& values,
                                          double sigma2_abs, double level) {
    if (!(level > 0.0 && level <= 1.0))
        throw std::invalid_argument("select_components: level must be in (0, 1]");
    double total = sigma2_abs;
    for (const auto& v : values) total += v.sum();
    if (total <= 0.0) throw std::runtime_error("select_components: no signal");

    TruncationChoice out;
    double cum = sigma2_abs;
    while (cum / total < level) {
        int best = -1;
        double best_val = 0.0;
        for (int x = 0; x < 3; ++x) {
            const int next = out.lags[x];
            if (next >= values[x].size()) continue;
            const double v = values[x][next];
            if (v > best_val) {
                best_val = v;
                best = x;
            }
        }
        if (best < 0) break;  // nothing positive left
        ++out.lags[best];
        cum += best_val;
    }
    out.achieved = cum / total;
    return out;
}

// Evaluated covariance matrices on the shared grid, as produced by step 2 or
// read back from exported surfaces.
struct RawSurfaces {
    std::array<std::optional<Eigen::MatrixXd>, 3> k;
    double sigma2 = 0.0;
    double t_lo = 0.0, t_hi = 1.0;
};

inline RawSurfaces raw_surfaces(const CovarianceFit& fit, int d) {
    RawSurfaces raw;
    raw.sigma2 = fit.sigma2;
    raw.t_lo = fit.marginal.lo;
    raw.t_hi = fit.marginal.hi;
    const Eigen::VectorXd grid = linspace(fit.marginal.lo, fit.marginal.hi, d);
    for (int x = 0; x < 3; ++x)
        if (fit.has_process(static_cast<Process>(x)))
            raw.k[x] = evaluate_surface(fit, static_cast<Process>(x), grid);
    return raw;
}

namespace detail {

inline ProcessEigen decompose_surface(const Eigen::MatrixXd& m, double spacing) {
    ProcessEigen pe;
    pe.present = true;
    SymEigen e = jacobi_eigen(m);
    pe.values = spacing * e.values.cwiseMax(0.0);  // trim negatives, rescale by a
    pe.vectors = e.vectors / std::sqrt(spacing);
    // Deterministic sign: largest-magnitude entry positive.
    for (int j = 0; j < pe.vectors.cols(); ++j) {
        Eigen::Index ix;
        pe.vectors.col(j).cwiseAbs().maxCoeff(&ix);
        if (pe.vectors(ix, j) < 0) pe.vectors.col(j) = -pe.vectors.col(j);
    }
    return pe;
}

inline EigenSystem decompose_common(const RawSurfaces& raw) {
    int d = 0;
    for (const auto& m : raw.k)
        if (m) d = static_cast<int>(m->rows());
    if (d < 10) throw std::invalid_argument("decompose: need grid size >= 10");
    EigenSystem es;
    es.grid = linspace(raw.t_lo, raw.t_hi, d);
    es.domain_len = raw.t_hi - raw.t_lo;
    es.spacing = es.domain_len / (d - 1);
    es.sigma2 = raw.sigma2;
    for (int x = 0; x < 3; ++x) {
        if (!raw.k[x]) continue;
        if (raw.k[x]->rows() != d || raw.k[x]->cols() != d)
            throw std::invalid_argument("decompose: surfaces disagree on grid size");
        es.proc[x] = decompose_surface(*raw.k[x], es.spacing);
    }
    bool any_signal = false;
    for (const auto& pe : es.proc)
        if (pe.present && pe.values.size() > 0 && pe.values[0] > 0.0) any_signal = true;
    if (!any_signal) throw std::runtime_error("decompose: no signal, all eigenvalues nonpositive");
    return es;
}

}  // namespace detail

inline EigenSystem decompose(const RawSurfaces& raw, double level) {
    EigenSystem es = detail::decompose_common(raw);
    es.level = level;
    std::array<Eigen::VectorXd, 3> vals;
    for (int x = 0; x < 3; ++x)
        vals[x] = es.proc[x].present ? es.proc[x].values : Eigen::VectorXd();
    const TruncationChoice tc =
        select_components(vals, es.sigma2 * es.domain_len, level);
    for (int x = 0; x < 3; ++x) es.proc[x].retained = tc.lags[x];
    return es;
}

inline EigenSystem decompose_fixed(const RawSurfaces& raw, std::array<int, 3> lags,
                                   std::vector<std::string>* warnings = nullptr) {
    EigenSystem es = detail::decompose_common(raw);
    for (int x = 0; x < 3; ++x) {
        const auto& pe = es.proc[x];
        int npos = 0;
        while (npos < pe.values.size() && pe.values[npos] > 0.0) ++npos;
        const int want = pe.present ? lags[x] : 0;
        es.proc[x].retained = std::min(want, npos);
        if (warnings && es.proc[x].retained < want)
            warnings->push_back(std::string("process ") + process_name(static_cast<Process>(x)) +
                                ": only " + std::to_string(npos) +
                                " positive eigenvalues available");
    }
    return es;
}

inline EigenSystem decompose(const CovarianceFit& fit, int d, double level) {
    return decompose(raw_surfaces(fit, d), level);
}

inline EigenSystem decompose_fixed(const CovarianceFit& fit, int d, std::array<int, 3> lags,
                                   std::vector<std::string>* warnings = nullptr) {
    return decompose_fixed(raw_surfaces(fit, d), lags, warnings);
}

struct VarianceShare {
    Process process;
    int k = 0;           // 1-based component index
    double value = 0.0;  // eigenvalue
    double share = 0.0;
    bool retained = false;
};

// Shares of the integrated response variance, computed over all obtained
// eigenvalues plus sigma2 * |T|.
struct VarianceDecomposition {
    std::vector<VarianceShare> components;
    double sigma2_share = 0.0;
    double total = 0.0;
};

inline VarianceDecomposition variance_decomposition(const EigenSystem& es) {
    VarianceDecomposition vd;
    vd.total = es.sigma2 * es.domain_len;
    for (int x = 0; x < 3; ++x)
        if (es.proc[x].present) vd.total += es.proc[x].values.sum();
    if (vd.total <= 0.0) throw std::runtime_error("variance_decomposition: zero total variance");
    for (int x = 0; x < 3; ++x) {
        const auto& pe = es.proc[x];
        if (!pe.present) continue;
        for (int j = 0; j < pe.values.size(); ++j) {
            if (pe.values[j] <= 0.0 && j >= pe.retained) continue;
            VarianceShare s;
            s.process = static_cast<Process>(x);
            s.k = j + 1;
            s.value = pe.values[j];
            s.share = pe.values[j] / vd.total;
            s.retained = j < pe.retained;
            vd.components.push_back(s);
        }
    }
    vd.sigma2_share = es.sigma2 * es.domain_len / vd.total;
    return vd;
}

// Linear interpolation of the retained eigenfunctions onto arbitrary points.
inline Eigen::MatrixXd interpolate_eigenfunctions(const EigenSystem& es, Process p,
                                                  const Eigen::VectorXd& ts) {
    const ProcessEigen& pe = es[p];
    const int n = pe.retained;
    Eigen::MatrixXd out(ts.size(), n);
    const double lo = es.grid[0];
    const double hi = es.grid[es.grid.size() - 1];
    for (Eigen::Index i = 0; i < ts.size(); ++i) {
        const double t = ts[i];
        if (t < lo - 1e-12 || t > hi + 1e-12)
            throw std::out_of_range("interpolate_eigenfunctions: extrapolation requested");
        double pos = (std::min(std::max(t, lo), hi) - lo) / es.spacing;
        int j = std::min(static_cast<int>(pos), static_cast<int>(es.grid.size()) - 2);
        const double w = pos - j;
        for (int c = 0; c < n; ++c)
            out(i, c) = (1.0 - w) * pe.vectors(j, c) + w * pe.vectors(j + 1, c);
    }
    return out;
}

}  // namespace flmm
