#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "transfqi/bspline.hpp"
#include "transfqi/rng.hpp"

using namespace transfqi;

namespace {

// Independent textbook recursion: N_{i,0}(u) indicator, then the two-term
// Cox-de Boor formula. Deliberately naive; used only as an oracle.
double naive_cox_de_boor(const std::vector<double>& t, int i, int k, double u) {
    if (k == 0) {
        const bool last = static_cast<std::size_t>(i + 2) == t.size() ||
                          t[i + 1] == t.back();
        if (last && u == t[i + 1] && t[i] < t[i + 1]) return 1.0;
        return (t[i] <= u && u < t[i + 1]) ? 1.0 : 0.0;
    }
    double left = 0.0, right = 0.0;
    if (t[i + k] != t[i])
        left = (u - t[i]) / (t[i + k] - t[i]) * naive_cox_de_boor(t, i, k - 1, u);
    if (t[i + k + 1] != t[i + 1])
        right = (t[i + k + 1] - u) / (t[i + k + 1] - t[i + 1]) *
                naive_cox_de_boor(t, i + 1, k - 1, u);
    return left + right;
}

std::vector<double> clamped_knots(int degree, int knots_per_dim) {
    std::vector<double> t;
    for (int i = 0; i <= degree; ++i) t.push_back(-1.0);
    for (int i = 1; i < knots_per_dim - 1; ++i)
        t.push_back(-1.0 + 2.0 * i / (knots_per_dim - 1));
    for (int i = 0; i <= degree; ++i) t.push_back(1.0);
    return t;
}

} // namespace

TEST_CASE("degree-0 splines are indicators") {
    BSplineBasis basis(2, 0, 5, BasisMode::additive);
    CHECK(basis.per_dim_count() == 4);
    Eigen::VectorXd x(2);
    x << -0.9, 0.3;
    const Eigen::VectorXd phi = eval_phi(basis, x);
    for (int k = 0; k < 2; ++k) {
        int nonzero = 0;
        for (int j = 0; j < 4; ++j)
            if (phi(k * 4 + j) != 0.0) {
                ++nonzero;
                CHECK(phi(k * 4 + j) == 1.0);
            }
        CHECK(nonzero == 1);
    }
    CHECK(phi(phi.size() - 1) == 1.0); // intercept
}

TEST_CASE("partition of unity at random interior points") {
    Rng rng = make_rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int degree : {0, 1, 2, 3}) {
        BSplineBasis basis(1, degree, 6);
        for (int trial = 0; trial < 1000; ++trial) {
            const double x = u(rng);
            const Eigen::VectorXd fam = basis.eval_dim(x);
            CHECK(std::abs(fam.sum() - 1.0) < 1e-10);
            CHECK(fam.minCoeff() >= 0.0);
            CHECK(fam.maxCoeff() <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("partition of unity holds at the domain endpoints") {
    BSplineBasis basis(1, 3, 5);
    for (double x : {-1.0, 1.0}) {
        const Eigen::VectorXd fam = basis.eval_dim(x);
        CHECK(std::abs(fam.sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("cubic values agree with the naive recursion oracle") {
    const int degree = 3, knots_per_dim = 6;
    BSplineBasis basis(1, degree, knots_per_dim);
    const auto t = clamped_knots(degree, knots_per_dim);
    Rng rng = make_rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> points;
    for (int i = 0; i < 200; ++i) points.push_back(u(rng));
    // include interior knots themselves
    for (int i = 1; i < knots_per_dim - 1; ++i)
        points.push_back(-1.0 + 2.0 * i / (knots_per_dim - 1));
    for (double x : points) {
        const Eigen::VectorXd fam = basis.eval_dim(x);
        for (int j = 0; j < basis.per_dim_count(); ++j)
            CHECK(fam(j) == doctest::Approx(naive_cox_de_boor(t, j, degree, x)).epsilon(1e-12));
    }
}

TEST_CASE("cubic locality: at most degree+1 nonzero values per dimension") {
    BSplineBasis basis(1, 3, 8);
    Rng rng = make_rng(23);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        const Eigen::VectorXd fam = basis.eval_dim(u(rng));
        int nonzero = 0;
        for (int j = 0; j < fam.size(); ++j) nonzero += fam(j) != 0.0;
        CHECK(nonzero <= 4);
    }
}

TEST_CASE("coordinates outside the domain are rejected") {
    BSplineBasis basis(1, 3, 5);
    CHECK_THROWS_AS(basis.eval_dim(1.5), std::domain_error);
    CHECK_THROWS_AS(basis.eval_dim(-1.0000001), std::domain_error);
}

TEST_CASE("tensor mode has b^d coordinates that multiply out") {
    BSplineBasis basis(2, 1, 4, BasisMode::tensor);
    CHECK(basis.p() == 16);
    Eigen::VectorXd x(2);
    x << 0.2, -0.4;
    const Eigen::VectorXd phi = eval_phi(basis, x);
    const Eigen::VectorXd f0 = basis.eval_dim(x(0)), f1 = basis.eval_dim(x(1));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(phi(i * 4 + j) == doctest::Approx(f0(i) * f1(j)).epsilon(1e-14));
    CHECK(std::abs(phi.sum() - 1.0) < 1e-10);
}

TEST_CASE("xi has exactly one active block") {
    BSplineBasis basis(2, 2, 4);
    FeatureMap map(basis, 3);
    Eigen::VectorXd x(2);
    x << 0.1, 0.9;
    const Eigen::VectorXd xi = eval_xi(map, x, 1);
    CHECK(xi.size() == 3 * basis.p());
    CHECK(xi.head(basis.p()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(xi.tail(basis.p()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((xi.segment(basis.p(), basis.p()) - eval_phi(basis, x)).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK_THROWS_AS(eval_xi(map, x, 3), ValidationError);
    CHECK_THROWS_AS(eval_xi(map, x, -1), ValidationError);
}

TEST_CASE("xi dot beta equals the per-block inner product") {
    BSplineBasis basis(3, 3, 4);
    FeatureMap map(basis, 2);
    Rng rng = make_rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd x(3);
        for (int j = 0; j < 3; ++j) x(j) = u(rng);
        Eigen::VectorXd beta(map.q());
        for (long j = 0; j < beta.size(); ++j) beta(j) = g(rng);
        const int a = trial % 2;
        const double via_xi = eval_xi(map, x, a).dot(beta);
        const double via_block =
            eval_phi(basis, x).dot(beta.segment(a * basis.p(), basis.p()));
        CHECK(via_xi == doctest::Approx(via_block).epsilon(1e-12));
    }
}

TEST_CASE("state squashing") {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
    CHECK(squash_state(x).cwiseAbs().maxCoeff() == 0.0);
    x << 1e6, -1e6, 1.0;
    const Eigen::VectorXd s = squash_state(x);
    CHECK(std::abs(s(0) - 1.0) < 1e-12);
    CHECK(std::abs(s(1) + 1.0) < 1e-12);
    CHECK(s(2) == doctest::Approx(0.7615941559557649).epsilon(1e-12));
    // Large inputs saturate to exactly +-1 in floating point, which is still
    // inside the (closed) basis domain; moderate inputs stay strictly inside.
    Rng rng = make_rng(3);
    std::normal_distribution<double> g(0.0, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd y(3);
        for (int j = 0; j < 3; ++j) y(j) = g(rng);
        const Eigen::VectorXd sq = squash_state(y);
        CHECK(sq.minCoeff() >= -1.0);
        CHECK(sq.maxCoeff() <= 1.0);
        if (y.cwiseAbs().maxCoeff() <= 5.0) {
            CHECK(sq.minCoeff() > -1.0);
            CHECK(sq.maxCoeff() < 1.0);
        }
    }
}

TEST_CASE("Q evaluation and clipping") {
    BSplineBasis basis(1, 3, 4);
    FeatureMap map(basis, 2);
    Eigen::VectorXd x(1);
    x << 0.25;

    QCoefficients zero{Eigen::VectorXd::Zero(map.q()), 1.0};
    CHECK(eval_q(map, zero, x, 0) == 0.0);

    QCoefficients big{Eigen::VectorXd::Constant(map.q(), 5.0), 1.0};
    CHECK(eval_q(map, big, x, 0, true) == 1.0);
    CHECK(eval_q(map, big, x, 0, false) > 1.0);

    Rng rng = make_rng(41);
    std::normal_distribution<double> g(0.0, 1.0);
    QCoefficients c{Eigen::VectorXd::NullaryExpr(map.q(), [&](long) { return g(rng); }),
                    100.0};
    const Eigen::VectorXd xi = eval_xi(map, x, 1);
    double naive = 0.0;
    for (long j = 0; j < xi.size(); ++j) naive += xi(j) * c.beta(j);
    CHECK(eval_q(map, c, x, 1) == doctest::Approx(naive).epsilon(1e-12));
}
