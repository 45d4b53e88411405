#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "test_util.hpp"
#include "transfqi/fqi.hpp"
#include "transfqi/mdp.hpp"
#include "transfqi/simenv.hpp"

using namespace transfqi;

namespace {

TaskDataset quad_data(int n_traj, std::uint64_t seed, int task_id) {
    QuadEnvSpec spec = make_target_spec(101, 0.9);
    return simulate_task(spec, n_traj, 5, seed, task_id);
}

FeatureMap small_map() {
    return FeatureMap(BSplineBasis(3, 1, 3, BasisMode::additive), 2);
}

} // namespace

TEST_CASE("split_dataset partitions trajectories") {
    const TaskDataset data = quad_data(23, 7, 0);
    const auto subsets = split_dataset(data, 5, 99);
    REQUIRE(subsets.size() == 5);
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& s : subsets) {
        CHECK(s.size() >= 4);
        CHECK(s.size() <= 5);
        total += s.size();
        for (int i : s) {
            CHECK(i >= 0);
            CHECK(i < 23);
            CHECK(seen.insert(i).second); // disjoint
        }
    }
    CHECK(total == 23);

    const auto again = split_dataset(data, 5, 99);
    CHECK(again == subsets);
    const auto other = split_dataset(data, 5, 100);
    CHECK(other != subsets);

    CHECK_THROWS_AS(split_dataset(data, 0, 1), ValidationError);
    CHECK_THROWS_AS(split_dataset(data, 24, 1), ValidationError);
}

TEST_CASE("pseudo response") {
    const FeatureMap map = small_map();
    const TaskDataset data = quad_data(3, 11, 0);
    std::vector<const Transition*> samples;
    for (const auto& traj : data.trajectories)
        for (const auto& tr : traj) samples.push_back(&tr);

    SUBCASE("gamma=0 returns raw rewards") {
        QCoefficients c{Eigen::VectorXd::Ones(map.q()), 100.0};
        const Eigen::VectorXd y = pseudo_response(samples, c, map, 0.0);
        for (std::size_t i = 0; i < samples.size(); ++i)
            CHECK(y(i) == samples[i]->reward);
    }

    SUBCASE("matches a by-hand max over actions") {
        Rng rng = make_rng(5);
        std::normal_distribution<double> g(0.0, 1.0);
        QCoefficients c{Eigen::VectorXd::NullaryExpr(map.q(), [&](long) { return g(rng); }),
                        100.0};
        const double gamma = 0.8;
        const Eigen::VectorXd y = pseudo_response(samples, c, map, gamma, false);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const double q0 = eval_q(map, c, samples[i]->next_state, 0, false);
            const double q1 = eval_q(map, c, samples[i]->next_state, 1, false);
            CHECK(y(i) == doctest::Approx(samples[i]->reward + gamma * std::max(q0, q1))
                              .epsilon(1e-12));
        }
    }

    SUBCASE("clipping caps the continuation value") {
        QCoefficients c{Eigen::VectorXd::Constant(map.q(), 50.0), 1.0};
        const Eigen::VectorXd y = pseudo_response(samples, c, map, 0.5, true);
        for (std::size_t i = 0; i < samples.size(); ++i)
            CHECK(y(i) == doctest::Approx(samples[i]->reward + 0.5).epsilon(1e-12));
    }
}

TEST_CASE("single-task FQI on a one-hot basis reproduces value iteration") {
    // Deterministic chain, one sample per (s,a) cell, indicator basis: each
    // least-squares update is then an exact Bellman backup.
    TabularMDP mdp;
    mdp.n_states = 4;
    mdp.n_actions = 2;
    mdp.gamma = 0.85;
    mdp.reward.resize(4, 2);
    mdp.transition = Eigen::MatrixXd::Zero(4, 8);
    for (int s = 0; s < 4; ++s)
        for (int a = 0; a < 2; ++a) {
            mdp.reward(s, a) = std::cos(2.0 + 5 * s + a);
            mdp.p(s, a, (s + 1 + 2 * a) % 4) = 1.0;
        }
    mdp.r_max = mdp.reward.cwiseAbs().maxCoeff();

    const BSplineBasis basis(1, 0, 5, BasisMode::tensor);
    const FeatureMap map(basis, 2);
    auto cell = [](int s) { return Eigen::VectorXd::Constant(1, -1.0 + (2.0 * s + 1.0) / 4.0); };
    TaskDataset data;
    data.task_id = 0;
    for (int s = 0; s < 4; ++s)
        for (int a = 0; a < 2; ++a) {
            Transition tr;
            tr.state = cell(s);
            tr.next_state = cell((s + 1 + 2 * a) % 4);
            tr.action = a;
            tr.reward = mdp.reward(s, a);
            data.trajectories.push_back({tr});
        }

    EngineConfig cfg;
    cfg.gamma = mdp.gamma;
    cfg.upsilon = 40;
    cfg.reuse_all_data = true;
    cfg.clipping = false;
    cfg.ridge_eps = 0.0;
    const SingleFQIResult fit = run_single_fqi(data, map, cfg);
    REQUIRE(fit.beta_iters.size() == 40);

    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(4, 2);
    for (int tau = 0; tau < 40; ++tau) {
        q = bellman_backup(mdp, q);
        for (int s = 0; s < 4; ++s)
            for (int a = 0; a < 2; ++a)
                CHECK(eval_xi(map, cell(s), a).dot(fit.beta_iters[tau]) ==
                      doctest::Approx(q(s, a)).epsilon(1e-9));
    }
}

TEST_CASE("two-step result satisfies the decomposition beta_k = w + delta_k") {
    const FeatureMap map = small_map();
    std::vector<TaskDataset> tasks{quad_data(20, 3, 0), quad_data(20, 4, 1)};
    EngineConfig cfg;
    cfg.upsilon = 3;
    cfg.seed = 17;
    cfg.lambda = 0.1; // fixed penalty keeps this test fast
    const TransFQIResult res = run_transfqi(tasks, map, cfg);
    REQUIRE(res.beta_hat.size() == 2);
    REQUIRE(res.delta_hat.size() == 2);
    for (int k = 0; k < 2; ++k) {
        CHECK((res.beta_hat[k].beta - res.w_hat.beta - res.delta_hat[k].beta)
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
        CHECK(res.beta_hat[k].beta.allFinite());
    }
    CHECK(res.history.size() == static_cast<std::size_t>(3 * 2));
    CHECK(res.target_w_iters.size() == 3);
    CHECK(res.target_beta_iters.size() == 3);
    for (const auto& row : res.history) CHECK(row.chosen_lambda == 0.1);
}

TEST_CASE("one-step sets all task coefficients to the pooled fit") {
    const FeatureMap map = small_map();
    std::vector<TaskDataset> tasks{quad_data(15, 5, 0), quad_data(15, 6, 1)};
    EngineConfig cfg;
    cfg.upsilon = 2;
    cfg.seed = 23;
    const TransFQIResult res = run_onestep(tasks, map, cfg);
    for (int k = 0; k < 2; ++k) {
        CHECK(res.delta_hat[k].beta.cwiseAbs().maxCoeff() == 0.0);
        CHECK((res.beta_hat[k].beta - res.w_hat.beta).cwiseAbs().maxCoeff() == 0.0);
    }
    for (const auto& row : res.history) CHECK(row.l1_delta == 0.0);
}

TEST_CASE("engine is deterministic for a fixed seed") {
    const FeatureMap map = small_map();
    std::vector<TaskDataset> tasks{quad_data(12, 8, 0), quad_data(12, 9, 1)};
    EngineConfig cfg;
    cfg.upsilon = 2;
    cfg.seed = 31;
    cfg.lambda = 0.05;
    const TransFQIResult a = run_transfqi(tasks, map, cfg);
    const TransFQIResult b = run_transfqi(tasks, map, cfg);
    CHECK((a.w_hat.beta - b.w_hat.beta).cwiseAbs().maxCoeff() == 0.0);
    for (int k = 0; k < 2; ++k)
        CHECK((a.beta_hat[k].beta - b.beta_hat[k].beta).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.split == b.split);
}

TEST_CASE("gaussian initialization runs and reaches finite coefficients") {
    const FeatureMap map = small_map();
    std::vector<TaskDataset> tasks{quad_data(12, 13, 0)};
    EngineConfig cfg;
    cfg.upsilon = 2;
    cfg.seed = 41;
    cfg.init = EngineConfig::Init::gaussian;
    cfg.lambda = 0.1;
    const TransFQIResult res = run_transfqi(tasks, map, cfg);
    CHECK(res.beta_hat[0].beta.allFinite());
}

TEST_CASE("cross-validated penalty path runs end to end") {
    const FeatureMap map = small_map();
    std::vector<TaskDataset> tasks{quad_data(15, 19, 0), quad_data(15, 20, 1)};
    EngineConfig cfg;
    cfg.upsilon = 2;
    cfg.seed = 47;
    cfg.lambda_grid_size = 5;
    cfg.cv_folds = 3;
    const TransFQIResult res = run_transfqi(tasks, map, cfg);
    for (const auto& row : res.history) {
        CHECK(row.chosen_lambda >= 0.0);
        CHECK(std::isfinite(row.chosen_lambda));
    }

    cfg.cv_once = true;
    const TransFQIResult frozen = run_transfqi(tasks, map, cfg);
    // with cv_once the per-task penalty is constant across iterations
    for (int k = 0; k < 2; ++k) {
        double first = -1.0;
        for (const auto& row : frozen.history)
            if (row.task_id == tasks[k].task_id) {
                if (first < 0.0)
                    first = row.chosen_lambda;
                else
                    CHECK(row.chosen_lambda == first);
            }
    }
}

TEST_CASE("input validation") {
    const FeatureMap map = small_map();
    EngineConfig cfg;
    cfg.upsilon = 2;
    CHECK_THROWS_AS(run_transfqi({}, map, cfg), ValidationError);
    CHECK_THROWS_AS(run_transfqi({quad_data(8, 1, 1)}, map, cfg), ValidationError);
    CHECK_THROWS_AS(run_transfqi({quad_data(8, 1, 0), quad_data(8, 2, 0)}, map, cfg),
                    ValidationError);
    CHECK_THROWS_AS(run_single_fqi(quad_data(8, 1, 3), map, cfg), ValidationError);

    cfg.upsilon = 50; // more subsets than trajectories
    CHECK_THROWS_AS(run_transfqi({quad_data(8, 1, 0)}, map, cfg), ValidationError);
}
