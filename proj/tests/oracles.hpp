// Independent reference implementations used only by the test suites. These
// deliberately avoid the library's evaluation paths: direct recursions,
// explicit matrix products, brute-force enumeration, dense textbook solves.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

#include "flmm/fdata.hpp"

namespace oracle {

// Cox-de Boor recursion written directly from the definition:
// N_{i,0}(t) = 1 on [t_i, t_{i+1}), N_{i,p} = w N_{i,p-1} + (1-w) N_{i+1,p-1}.
inline double coxdeboor(const std::vector<double>& knots, int i, int p, double t,
                        double right_end) {
    if (p == 0) {
        if (t == right_end)  // clamp the right boundary into the last interval
            return knots[i] < t && t <= knots[i + 1] ? 1.0 : 0.0;
        return t >= knots[i] && t < knots[i + 1] ? 1.0 : 0.0;
    }
    double left = 0.0, right = 0.0;
    if (knots[i + p] > knots[i])
        left = (t - knots[i]) / (knots[i + p] - knots[i]) * coxdeboor(knots, i, p - 1, t, right_end);
    if (knots[i + p + 1] > knots[i + 1])
        right = (knots[i + p + 1] - t) / (knots[i + p + 1] - knots[i + 1]) *
                coxdeboor(knots, i + 1, p - 1, t, right_end);
    return left + right;
}

// d-th order forward difference matrix built by explicit multiplication.
inline Eigen::MatrixXd diff_matrix(int k, int d) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Identity(k, k);
    for (int step = 0; step < d; ++step) {
        const int rows = static_cast<int>(out.rows()) - 1;
        Eigen::MatrixXd next(rows, out.cols());
        for (int i = 0; i < rows; ++i) next.row(i) = out.row(i + 1) - out.row(i);
        out = next;
    }
    return out;
}

// Textbook penalized normal equations solved by full-pivot LU.
inline Eigen::VectorXd penalized_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                       const Eigen::MatrixXd& s, double lambda) {
    const Eigen::MatrixXd a = x.transpose() * x + lambda * s;
    return Eigen::FullPivLU<Eigen::MatrixXd>(a).solve(x.transpose() * y);
}

// Brute-force enumeration of the qualifying ordered point pairs.
struct PairCount {
    std::int64_t total = 0;
    std::int64_t same_curve = 0;
    std::int64_t same_point = 0;
};

inline PairCount count_pairs(const flmm::CurveSet& cs) {
    PairCount c;
    const auto& pts = cs.points;
    for (std::size_t a = 0; a < pts.size(); ++a) {
        for (std::size_t b = 0; b < pts.size(); ++b) {
            const bool same_g1 = pts[a].g1 == pts[b].g1;
            const bool same_g2 = cs.has_g2 && pts[a].g2 == pts[b].g2;
            if (!same_g1 && !same_g2) continue;
            ++c.total;
            if (pts[a].curve == pts[b].curve) ++c.same_curve;
            if (a == b) ++c.same_point;
        }
    }
    return c;
}

// Direct mixed-model predictor G Phi' (sigma2 I + Phi G Phi')^{-1} y.
inline Eigen::VectorXd direct_blup(const Eigen::MatrixXd& phi, const Eigen::VectorXd& g_diag,
                                   double sigma2, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd v =
        sigma2 * Eigen::MatrixXd::Identity(phi.rows(), phi.rows()) +
        phi * g_diag.asDiagonal() * phi.transpose();
    return g_diag.asDiagonal() * phi.transpose() *
           Eigen::FullPivLU<Eigen::MatrixXd>(v).solve(y);
}

// Plain loop rrMSE.
inline double rrmse_loops(const std::vector<double>& truth, const std::vector<double>& est) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        num += (truth[i] - est[i]) * (truth[i] - est[i]);
        den += truth[i] * truth[i];
    }
    return std::sqrt(num / den);
}

}  // namespace oracle
