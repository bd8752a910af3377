#pragma once

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace flmm {

inline Eigen::VectorXd linspace(double lo, double hi, int n) {
    if (n < 1) throw std::invalid_argument("linspace: need n >= 1");
    Eigen::VectorXd v(n);
    if (n == 1) { v[0] = lo; return v; }
    const double step = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) v[i] = lo + i * step;
    v[n - 1] = hi;
    return v;
}

struct SymEigen {
    Eigen::VectorXd values;   // descending
    Eigen::MatrixXd vectors;  // columns match values
};

// Cyclic Jacobi for symmetric matrices. Rotations are applied until the
// off-diagonal Frobenius norm drops below tol relative to the input scale.
inline SymEigen jacobi_eigen(Eigen::MatrixXd a, double tol = 1e-12, int max_sweeps = 100) {
    const int n = static_cast<int>(a.rows());
    if (a.cols() != n) throw std::invalid_argument("jacobi_eigen: matrix must be square");
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    const double scale = std::max(1.0, a.norm());

    auto off_norm = [&]() {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(2.0 * s);
    };

    for (int sweep = 0; sweep < max_sweeps && off_norm() > tol * scale; ++sweep) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return a(i, i) > a(j, j); });
    SymEigen out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (int i = 0; i < n; ++i) {
        out.values[i] = a(order[i], order[i]);
        out.vectors.col(i) = v.col(order[i]);
    }
    return out;
}

// Moore-Penrose pseudo-inverse of a symmetric matrix. Eigenvalues with
// magnitude below cutoff * max|eigenvalue| are treated as zero.
inline Eigen::MatrixXd pseudo_inverse_sym(const Eigen::MatrixXd& a, double cutoff = 1e-10) {
    SymEigen e = jacobi_eigen(a);
    const double thresh = cutoff * std::max(1e-300, e.values.cwiseAbs().maxCoeff());
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(e.values.size());
    for (int i = 0; i < e.values.size(); ++i)
        if (std::abs(e.values[i]) > thresh) inv[i] = 1.0 / e.values[i];
    return e.vectors * inv.asDiagonal() * e.vectors.transpose();
}

struct SymSolveResult {
    Eigen::MatrixXd inverse;  // inverse or pseudo-inverse of the system matrix
    bool used_pinv = false;
    bool used_jitter = false;
};

// Solve a symmetric (nominally positive definite) system by LDLT. On
// near-singularity a small ridge proportional to trace/n is added once; the
// jittered factorization must clear a gate well above the ridge itself,
// otherwise genuine rank deficiency is handed to the pseudo-inverse.
inline SymSolveResult sym_inverse(const Eigen::MatrixXd& a) {
    const int n = static_cast<int>(a.rows());
    SymSolveResult r;
    auto try_ldlt = [&](const Eigen::MatrixXd& m, double floor_abs, Eigen::MatrixXd& inv) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
        if (ldlt.info() != Eigen::Success) return false;
        const Eigen::VectorXd d = ldlt.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        if (d.minCoeff() <= std::max(dmax * 1e-13, floor_abs)) return false;
        inv = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
        return true;
    };
    if (try_ldlt(a, 0.0, r.inverse)) return r;
    const double jitter = 1e-10 * a.trace() / std::max(1, n);
    if (jitter > 0 && try_ldlt(a + jitter * Eigen::MatrixXd::Identity(n, n), 50.0 * jitter,
                               r.inverse)) {
        r.used_jitter = true;
        return r;
    }
    r.inverse = pseudo_inverse_sym(a);
    r.used_pinv = true;
    return r;
}

// log determinant of a symmetric positive definite matrix; throws if not PD.
inline double logdet_spd(const Eigen::MatrixXd& a) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("logdet_spd: matrix not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// log pseudo-determinant (product of eigenvalues above cutoff * max).
inline double logpdet_sym(const Eigen::MatrixXd& a, int* rank = nullptr, double cutoff = 1e-10) {
    SymEigen e = jacobi_eigen(a);
    const double thresh = cutoff * std::max(1e-300, e.values.cwiseAbs().maxCoeff());
    double s = 0.0;
    int r = 0;
    for (int i = 0; i < e.values.size(); ++i) {
        if (e.values[i] > thresh) { s += std::log(e.values[i]); ++r; }
    }
    if (rank) *rank = r;
    return s;
}

}  // namespace flmm
