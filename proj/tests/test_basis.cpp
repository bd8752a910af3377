#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "flmm/basis.hpp"
#include "oracles.hpp"

using namespace flmm;

TEST_CASE("basis rows sum to one and stay in [0,1]") {
    const SplineBasis b = SplineBasis::uniform(8, 0.0, 1.0);
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double t = i < 2 ? (i == 0 ? 0.0 : 1.0) : u(rng);
        const Eigen::RowVectorXd row = b.eval_row(t);
        REQUIRE(row.sum() == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(row.minCoeff() >= 0.0);
        REQUIRE(row.maxCoeff() <= 1.0);
    }
}

TEST_CASE("at most degree+1 basis functions are active anywhere") {
    const SplineBasis b = SplineBasis::uniform(8, 0.0, 1.0);
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const double t = i < 2 ? (i == 0 ? 0.0 : 1.0) : u(rng);
        const Eigen::RowVectorXd row = b.eval_row(t);
        int active = 0;
        for (int j = 0; j < 8; ++j)
            if (row[j] != 0.0) ++active;
        REQUIRE(active <= b.degree + 1);
        REQUIRE(active >= 1);
    }
}

TEST_CASE("index-affine coefficients reproduce affine functions exactly") {
    const SplineBasis b = SplineBasis::uniform(9, 0.0, 2.0);
    Eigen::VectorXd coef(9);
    for (int k = 0; k < 9; ++k) coef[k] = 1.5 + 0.25 * k;
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    // Greville abscissae of a uniform knot grid are affine in the index, so
    // this coefficient sequence is an exact line in t.
    const double h = 2.0 / (9 - b.degree);
    for (int i = 0; i < 60; ++i) {
        const double t = u(rng);
        const double want = 1.5 + 0.25 * ((t - 0.0) / h + 0.5 * (b.degree - 1));
        REQUIRE(b.eval_row(t).dot(coef) == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("evaluation matches the direct Cox-de Boor recursion") {
    for (int k : {4, 5, 8, 12}) {
        const SplineBasis b = SplineBasis::uniform(k, -1.0, 2.5);
        std::mt19937 rng(11 + k);
        std::uniform_real_distribution<double> u(-1.0, 2.5);
        for (int rep = 0; rep < 50; ++rep) {
            const double t = rep == 0 ? -1.0 : (rep == 1 ? 2.5 : u(rng));
            const Eigen::RowVectorXd row = b.eval_row(t);
            for (int i = 0; i < k; ++i) {
                const double want = oracle::coxdeboor(b.knots, i, b.degree, t, b.hi);
                REQUIRE(row[i] == Catch::Approx(want).margin(1e-12));
            }
        }
    }
}

TEST_CASE("points outside the domain are rejected") {
    const SplineBasis b = SplineBasis::uniform(6, 0.0, 1.0);
    REQUIRE_THROWS_AS(b.eval_row(1.5), std::out_of_range);
    REQUIRE_THROWS_AS(b.eval_row(-0.2), std::out_of_range);
}

TEST_CASE("first difference penalty of size three") {
    const PenaltyMatrix p = difference_penalty(3, 1);
    Eigen::MatrixXd want(3, 3);
    want << 1, -1, 0, -1, 2, -1, 0, -1, 1;
    REQUIRE((p.s - want).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("constants lie in the penalty null space") {
    for (int k : {4, 6, 9})
        for (int d : {1, 2, 3}) {
            const PenaltyMatrix p = difference_penalty(k, d);
            const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k);
            REQUIRE((p.s * ones).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-12));
            REQUIRE((p.s - p.s.transpose()).cwiseAbs().maxCoeff() ==
                    Catch::Approx(0.0).margin(1e-14));
        }
}

TEST_CASE("second difference penalty matches the explicit product") {
    const PenaltyMatrix p = difference_penalty(5, 2);
    const Eigen::MatrixXd delta = oracle::diff_matrix(5, 2);
    const Eigen::MatrixXd want = delta.transpose() * delta;
    REQUIRE((p.s - want).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-13));
}

TEST_CASE("penalty rejects K <= d") {
    REQUIRE_THROWS_AS(difference_penalty(3, 3), std::invalid_argument);
    REQUIRE_THROWS_AS(difference_penalty(2, 3), std::invalid_argument);
}

namespace {

struct RandomProblem {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
};

RandomProblem random_problem(int n, int p, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> g;
    RandomProblem prob;
    prob.x.resize(n, p);
    prob.y.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) prob.x(i, j) = g(rng);
        prob.y[i] = g(rng);
    }
    return prob;
}

}  // namespace

TEST_CASE("unpenalized limit equals ordinary least squares") {
    const RandomProblem prob = random_problem(40, 6, 3);
    std::vector<PenaltySpec> pens{{0, difference_penalty(6, 2).s, 0.0, false, -1}};
    const PenalizedLsFit fit = solve_penalized_ls(prob.x, prob.y, pens);
    const Eigen::VectorXd ols =
        (prob.x.transpose() * prob.x).ldlt().solve(prob.x.transpose() * prob.y);
    REQUIRE((fit.coef - ols).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("huge second-order penalty shrinks a spline fit to the best line") {
    const SplineBasis b = SplineBasis::uniform(8, 0.0, 1.0);
    std::mt19937 rng(5);
    std::normal_distribution<double> g;
    const int n = 120;
    Eigen::VectorXd ts(n), y(n);
    for (int i = 0; i < n; ++i) {
        ts[i] = static_cast<double>(i) / (n - 1);
        y[i] = std::sin(6.0 * ts[i]) + 0.1 * g(rng);
    }
    const Eigen::MatrixXd x = b.eval(ts);
    std::vector<PenaltySpec> pens{{0, difference_penalty(8, 2).s, 1e12, false, -1}};
    const PenalizedLsFit fit = solve_penalized_ls(x, y, pens);
    const Eigen::VectorXd fitted = x * fit.coef;

    Eigen::MatrixXd lin(n, 2);
    lin.col(0).setOnes();
    lin.col(1) = ts;
    const Eigen::VectorXd beta = (lin.transpose() * lin).ldlt().solve(lin.transpose() * y);
    const Eigen::VectorXd line = lin * beta;
    REQUIRE((fitted - line).norm() / line.norm() < 1e-6);
}

TEST_CASE("fixed-lambda solve matches an independent dense solver") {
    const RandomProblem prob = random_problem(50, 10, 17);
    const Eigen::MatrixXd s = difference_penalty(10, 2).s;
    std::vector<PenaltySpec> pens{{0, s, 1.0, false, -1}};
    const PenalizedLsFit fit = solve_penalized_ls(prob.x, prob.y, pens);
    const Eigen::VectorXd want = oracle::penalized_solve(prob.x, prob.y, s, 1.0);
    REQUIRE((fit.coef - want).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("penalized solution solves the augmented least-squares system") {
    const RandomProblem prob = random_problem(60, 8, 23);
    const double lambda = 3.7;
    const Eigen::MatrixXd delta = oracle::diff_matrix(8, 2);
    std::vector<PenaltySpec> pens{{0, Eigen::MatrixXd(delta.transpose() * delta), lambda, false, -1}};
    const PenalizedLsFit fit = solve_penalized_ls(prob.x, prob.y, pens);

    Eigen::MatrixXd aug(prob.x.rows() + delta.rows(), 8);
    aug.topRows(prob.x.rows()) = prob.x;
    aug.bottomRows(delta.rows()) = std::sqrt(lambda) * delta;
    Eigen::VectorXd yaug = Eigen::VectorXd::Zero(aug.rows());
    yaug.head(prob.y.size()) = prob.y;
    const Eigen::VectorXd want = aug.colPivHouseholderQr().solve(yaug);
    REQUIRE((fit.coef - want).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("rank-deficient system falls back to a generalized inverse with a warning") {
    Eigen::MatrixXd x(6, 4);
    x.setZero();
    x.col(0).setOnes();
    x.col(1) = x.col(0);  // exact collinearity
    x(0, 2) = 1.0;
    x(1, 3) = 1.0;
    Eigen::VectorXd y(6);
    y << 1, 2, 3, 4, 5, 6;
    std::vector<PenaltySpec> pens;
    const PenalizedLsFit fit = solve_penalized_ls(x, y, pens);
    REQUIRE(fit.used_pinv);
    REQUIRE_FALSE(fit.warnings.empty());
    REQUIRE(fit.coef.allFinite());
}

namespace {

double criterion_at(const NormalEq& ne, const Eigen::MatrixXd& s, double lambda,
                    SmoothCriterion crit) {
    std::vector<PenaltySpec> pens{{0, s, lambda, false, -1}};
    return solve_penalized_ls(ne, pens, crit).criterion;
}

}  // namespace

TEST_CASE("selected smoothing parameter attains the grid minimum of the criterion") {
    const SplineBasis b = SplineBasis::uniform(8, 0.0, 1.0);
    std::mt19937 rng(29);
    std::normal_distribution<double> g;
    const int n = 200;
    Eigen::VectorXd ts(n), y(n);
    for (int i = 0; i < n; ++i) {
        ts[i] = static_cast<double>(i) / (n - 1);
        y[i] = std::sin(4.0 * ts[i]) + 0.3 * g(rng);
    }
    const Eigen::MatrixXd x = b.eval(ts);
    NormalEq ne;
    ne.xtx = x.transpose() * x;
    ne.xty = x.transpose() * y;
    ne.yty = y.squaredNorm();
    ne.nrows = n;
    const Eigen::MatrixXd s = difference_penalty(8, 3).s;

    for (SmoothCriterion crit : {SmoothCriterion::Reml, SmoothCriterion::Gcv}) {
        std::vector<PenaltySpec> pens{{0, s, 1.0, true, -1}};
        const PenalizedLsFit fit = solve_penalized_ls(ne, pens, crit);
        double grid_min = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 200; ++i) {
            const double lambda = std::exp(-12.0 + 24.0 * i / 199.0);
            grid_min = std::min(grid_min, criterion_at(ne, s, lambda, crit));
        }
        REQUIRE(fit.criterion <= grid_min + 1e-6 * std::abs(grid_min));
    }
}

TEST_CASE("effective degrees of freedom decrease in lambda") {
    const SplineBasis b = SplineBasis::uniform(10, 0.0, 1.0);
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g;
    const int n = 150;
    Eigen::VectorXd ts(n), y(n);
    for (int i = 0; i < n; ++i) {
        ts[i] = u(rng);
        y[i] = g(rng);
    }
    const Eigen::MatrixXd x = b.eval(ts);
    const Eigen::MatrixXd s = difference_penalty(10, 2).s;
    double prev = std::numeric_limits<double>::infinity();
    for (double loglam = -6; loglam <= 10; loglam += 2) {
        std::vector<PenaltySpec> pens{{0, s, std::exp(loglam), false, -1}};
        const PenalizedLsFit fit = solve_penalized_ls(x, y, pens);
        REQUIRE(fit.edf <= prev + 1e-8);
        prev = fit.edf;
    }
}

TEST_CASE("empty accumulator yields zero sums") {
    NormalEqAccumulator acc(3);
    const NormalEq ne = acc.result();
    REQUIRE(ne.nrows == 0);
    REQUIRE(ne.yty == 0.0);
    REQUIRE(ne.xtx.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(ne.xty.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("three hand-written rows accumulate to the hand-computed sums") {
    NormalEqAccumulator acc(2);
    const double rows[3][2] = {{1.0, 2.0}, {0.0, 1.0}, {3.0, -1.0}};
    const double ys[3] = {1.0, -1.0, 2.0};
    for (int i = 0; i < 3; ++i) acc.add(rows[i], ys[i]);
    const NormalEq ne = acc.result();
    REQUIRE(ne.nrows == 3);
    REQUIRE(ne.xtx(0, 0) == Catch::Approx(10.0));
    REQUIRE(ne.xtx(0, 1) == Catch::Approx(-1.0));
    REQUIRE(ne.xtx(1, 0) == Catch::Approx(-1.0));
    REQUIRE(ne.xtx(1, 1) == Catch::Approx(6.0));
    REQUIRE(ne.xty[0] == Catch::Approx(7.0));
    REQUIRE(ne.xty[1] == Catch::Approx(-1.0));
    REQUIRE(ne.yty == Catch::Approx(6.0));
}

TEST_CASE("chunked accumulation agrees up to reassociation") {
    std::mt19937 rng(41);
    std::normal_distribution<double> g;
    const int n = 100000, p = 6;
    std::vector<std::array<double, 6>> rows(n);
    std::vector<double> ys(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) rows[i][j] = g(rng);
        ys[i] = g(rng);
    }
    NormalEqAccumulator one(p);
    for (int i = 0; i < n; ++i) one.add(rows[i].data(), ys[i]);

    NormalEqAccumulator head(p), tail(p);
    for (int i = 0; i < n; ++i) (i % 3 == 0 ? head : tail).add(rows[i].data(), ys[i]);
    head.merge(tail);

    const NormalEq a = one.result();
    const NormalEq b = head.result();
    REQUIRE(a.nrows == b.nrows);
    REQUIRE((a.xtx - b.xtx).cwiseAbs().maxCoeff() / a.xtx.cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE((a.xty - b.xty).cwiseAbs().maxCoeff() / a.xty.cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE(std::abs(a.yty - b.yty) / a.yty < 1e-9);
}

TEST_CASE("jacobi eigensolver reproduces a known spectrum") {
    std::mt19937 rng(47);
    std::normal_distribution<double> g;
    const int n = 12;
    Eigen::MatrixXd q(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) q(i, j) = g(rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
    const Eigen::MatrixXd u = qr.householderQ();
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i) d[i] = n - i;
    const Eigen::MatrixXd a = u * d.asDiagonal() * u.transpose();
    const SymEigen e = jacobi_eigen(a);
    for (int i = 0; i < n; ++i) REQUIRE(e.values[i] == Catch::Approx(d[i]).margin(1e-9));
    REQUIRE((e.vectors * e.values.asDiagonal() * e.vectors.transpose() - a)
                .cwiseAbs()
                .maxCoeff() < 1e-9);
}
