#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "transfqi/diagnostics.hpp"
#include "transfqi/rng.hpp"
#include "transfqi/simenv.hpp"

using namespace transfqi;

namespace {

// One-step trajectories with 1-d states drawn uniformly on (-1, 1) and a
// reward given by rew(state, action).
template <class F>
TaskDataset synthetic_task(const F& rew, int n, std::uint64_t seed, int task_id) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> u(-0.999, 0.999);
    std::uniform_int_distribution<int> coin(0, 1);
    TaskDataset ds;
    ds.task_id = task_id;
    for (int i = 0; i < n; ++i) {
        Transition tr;
        tr.state = Eigen::VectorXd::Constant(1, u(rng));
        tr.next_state = Eigen::VectorXd::Constant(1, u(rng));
        tr.action = coin(rng);
        tr.reward = rew(tr.state(0), tr.action);
        ds.trajectories.push_back({tr});
    }
    return ds;
}

} // namespace

TEST_CASE("reward regression recovers an exact sieve reward") {
    const FeatureMap map(BSplineBasis(1, 2, 4, BasisMode::tensor), 2);
    Rng rng = make_rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    const Eigen::VectorXd beta_true =
        Eigen::VectorXd::NullaryExpr(map.q(), [&](long) { return g(rng); });
    const auto rew = [&](double s, int a) {
        return eval_xi(map, Eigen::VectorXd::Constant(1, s), a).dot(beta_true);
    };
    const TaskDataset ds = synthetic_task(rew, 400, 9, 0);
    const Eigen::VectorXd beta = estimate_reward_coeffs(ds, map, 1e-12);
    CHECK((beta - beta_true).cwiseAbs().maxCoeff() < 1e-5);

    TaskDataset empty;
    CHECK_THROWS_AS(estimate_reward_coeffs(empty, map), ValidationError);
}

TEST_CASE("h_r is the worst l1 distance from the target coefficients") {
    Eigen::VectorXd b0(3), b1(3), b2(3);
    b0 << 1, 0, -1;
    b1 << 1, 0.5, -1;     // l1 distance 0.5
    b2 << 0, 1, 1;        // l1 distance 4
    const DiscrepancyEstimates est = estimate_hr({b0, b1, b2});
    REQUIRE(est.per_task_l1.size() == 2);
    CHECK(est.per_task_l1[0] == doctest::Approx(0.5));
    CHECK(est.per_task_l1[1] == doctest::Approx(4.0));
    CHECK(est.h_r_hat == doctest::Approx(4.0));

    const DiscrepancyEstimates solo = estimate_hr({b0});
    CHECK(solo.h_r_hat == 0.0);
    CHECK(solo.per_task_l1.empty());

    CHECK_THROWS_AS(estimate_hr({}), ValidationError);
    Eigen::VectorXd short_vec(2);
    short_vec << 1, 2;
    CHECK_THROWS_AS(estimate_hr({b0, short_vec}), ValidationError);
}

TEST_CASE("h_r on reward-perturbed simulated tasks grows with sigma_c") {
    const FeatureMap map(BSplineBasis(3, 1, 3, BasisMode::additive), 2);
    QuadEnvSpec target = make_target_spec(41, 0.9);
    target.reward_noise_sd = 0.0;
    auto hr_at = [&](double sigma) {
        const QuadEnvSpec src = make_source_spec(target, {sigma, 77});
        std::vector<Eigen::VectorXd> coeffs;
        coeffs.push_back(estimate_reward_coeffs(simulate_task(target, 300, 5, 5), map));
        coeffs.push_back(estimate_reward_coeffs(simulate_task(src, 300, 5, 6, 1), map));
        return estimate_hr(coeffs).h_r_hat;
    };
    const double at0 = hr_at(0.0);
    const double at1 = hr_at(1.0);
    CHECK(at1 > at0);
}

TEST_CASE("c_sigma plug-in") {
    const FeatureMap map(BSplineBasis(1, 2, 4, BasisMode::tensor), 2);
    const auto rew = [](double, int) { return 0.0; };
    const TaskDataset a = synthetic_task(rew, 300, 1, 0);
    const TaskDataset b = synthetic_task(rew, 300, 2, 1);

    SUBCASE("a single task gives exactly 1") {
        CHECK(estimate_c_sigma({a}, map) == 1.0);
    }

    SUBCASE("identical tasks give exactly 1") {
        TaskDataset copy = a;
        copy.task_id = 1;
        CHECK(estimate_c_sigma({a, copy}, map, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("matches a direct dense-inverse computation") {
        const long q = map.q();
        std::vector<Eigen::MatrixXd> sig;
        std::vector<double> ns;
        for (const TaskDataset* ds : {&a, &b}) {
            Eigen::MatrixXd S = Eigen::MatrixXd::Zero(q, q);
            for (const auto& traj : ds->trajectories)
                for (const auto& tr : traj) {
                    const Eigen::VectorXd xi = eval_xi(map, tr.state, tr.action);
                    S += xi * xi.transpose();
                }
            ns.push_back(static_cast<double>(ds->n_samples()));
            sig.push_back(S / ns.back());
        }
        const Eigen::MatrixXd sbar =
            (ns[0] * sig[0] + ns[1] * sig[1]) / (ns[0] + ns[1]);
        double worst = 0.0;
        for (const auto& S : sig) {
            const Eigen::MatrixXd M = sbar.inverse() * (S - sbar);
            worst = std::max(worst, M.cwiseAbs().colwise().sum().maxCoeff());
        }
        CHECK(estimate_c_sigma({a, b}, map, 0.0) ==
              doctest::Approx(1.0 + worst).epsilon(1e-6));
        CHECK(estimate_c_sigma({a, b}, map, 0.0) > 1.0);
    }

    SUBCASE("order of datasets does not matter") {
        CHECK(estimate_c_sigma({a, b}, map, 0.0) ==
              doctest::Approx(estimate_c_sigma({b, a}, map, 0.0)).epsilon(1e-10));
    }

    SUBCASE("rejects empty input") {
        CHECK_THROWS_AS(estimate_c_sigma({}, map), ValidationError);
        TaskDataset empty;
        CHECK_THROWS_AS(estimate_c_sigma({a, empty}, map), ValidationError);
    }
}
