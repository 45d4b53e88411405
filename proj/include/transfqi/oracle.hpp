#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <future>
#include <nlohmann/json.hpp>
#include <vector>

#include "transfqi/bspline.hpp"
#include "transfqi/errors.hpp"
#include "transfqi/fqi.hpp"
#include "transfqi/mdp.hpp"
#include "transfqi/rng.hpp"
#include "transfqi/simenv.hpp"

namespace transfqi {

struct EvalPoint {
    Eigen::VectorXd raw_state; // pre-squash state
    int action = 0;
};

struct QStarReference {
    enum class Method { mc_rollout, large_sample_fqi, tabular_exact };
    Method method = Method::mc_rollout;
    std::vector<EvalPoint> eval_points;
    Eigen::VectorXd values;
    Eigen::VectorXd stderrs;
    double vmax = 0.0;
};

struct OracleConfig {
    int n_ref_traj = 2000;
    int n_eval_points = 200;
    int n_rollouts = 500;
    double trunc_tol = 1e-3;
};

// Smallest H with gamma^H * vmax <= tol.
inline int truncation_horizon(double gamma, double vmax, double tol) {
    if (gamma <= 0.0 || vmax <= 0.0) return 1;
    int h = 1;
    double f = gamma;
    while (f * vmax > tol && h < 100000) {
        f *= gamma;
        ++h;
    }
    return h;
}

// Average discounted return over rollouts that start at (x, a) and then
// follow the greedy policy of `policy_coeffs`.
inline std::pair<double, double> mc_policy_value(const QuadEnvSpec& spec,
                                                 const FeatureMap& map,
                                                 const QCoefficients& policy_coeffs,
                                                 const Eigen::VectorXd& x_raw, int a,
                                                 int n_rollouts, int horizon,
                                                 std::uint64_t seed) {
    double sum = 0.0, sum_sq = 0.0;
    for (int rollout = 0; rollout < n_rollouts; ++rollout) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(rollout)));
        std::normal_distribution<double> g(0.0, 1.0);
        Eigen::Vector3d x = x_raw;
        int a_idx = a;
        double ret = 0.0, disc = 1.0;
        for (int t = 0; t < horizon; ++t) {
            const double av = action_value(a_idx);
            double reward = av * x.dot(spec.c_matrix * x);
            if (spec.reward_noise_sd > 0.0) reward += spec.reward_noise_sd * g(rng);
            ret += disc * reward;
            disc *= spec.gamma;
            Eigen::Vector3d next =
                spec.dyn_scale * Eigen::Vector3d(av * x(0), -av * x(1), av * x(2));
            if (spec.state_noise_sd > 0.0)
                for (int j = 0; j < 3; ++j) next(j) += spec.state_noise_sd * g(rng);
            x = next;
            a_idx = greedy_action(map, policy_coeffs, squash_state(x));
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    const double mean = sum / n_rollouts;
    const double var = std::max(0.0, sum_sq / n_rollouts - mean * mean);
    const double se = n_rollouts > 1 ? std::sqrt(var / (n_rollouts - 1)) : 0.0;
    return {mean, se};
}

// Tabular analogue used to validate the rollout machinery against exact
// dynamic programming.
inline std::pair<double, double> mc_policy_value(const TabularMDP& mdp,
                                                 const std::vector<int>& policy, int s0,
                                                 int a0, int n_rollouts, int horizon,
                                                 std::uint64_t seed) {
    double sum = 0.0, sum_sq = 0.0;
    for (int rollout = 0; rollout < n_rollouts; ++rollout) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(rollout)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        int s = s0, a = a0;
        double ret = 0.0, disc = 1.0;
        for (int t = 0; t < horizon; ++t) {
            ret += disc * mdp.reward(s, a);
            disc *= mdp.gamma;
            const double r = u(rng);
            double acc = 0.0;
            int sp = mdp.n_states - 1;
            for (int j = 0; j < mdp.n_states; ++j) {
                acc += mdp.p(s, a, j);
                if (r <= acc) {
                    sp = j;
                    break;
                }
            }
            s = sp;
            a = policy[s];
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    const double mean = sum / n_rollouts;
    const double var = std::max(0.0, sum_sq / n_rollouts - mean * mean);
    const double se = n_rollouts > 1 ? std::sqrt(var / (n_rollouts - 1)) : 0.0;
    return {mean, se};
}

// Large-sample single-task FQI fit provides the rollout policy; MC rollouts
// under that policy provide the reference values at eval points drawn from
// the (x0, a0) distribution.
inline QStarReference build_reference(const QuadEnvSpec& spec, const FeatureMap& map,
                                      const OracleConfig& oracle_cfg,
                                      const EngineConfig& engine_cfg, std::uint64_t seed,
                                      int threads = 1) {
    const TaskDataset big =
        simulate_task(spec, oracle_cfg.n_ref_traj, 5, derive_seed(seed, 0xb16u));
    EngineConfig cfg = engine_cfg;
    cfg.gamma = spec.gamma;
    cfg.seed = derive_seed(seed, 0xf17u);
    const SingleFQIResult fit = run_single_fqi(big, map, cfg);

    QStarReference ref;
    ref.method = QStarReference::Method::mc_rollout;
    ref.vmax = fit.coeffs.vmax;
    const int horizon =
        truncation_horizon(spec.gamma, ref.vmax, oracle_cfg.trunc_tol);

    Rng rng = make_rng(derive_seed(seed, 0xe7a1u));
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> coin(0, 1);
    ref.eval_points.resize(oracle_cfg.n_eval_points);
    for (auto& pt : ref.eval_points) {
        pt.raw_state = Eigen::VectorXd(3);
        for (int j = 0; j < 3; ++j) pt.raw_state(j) = g(rng);
        pt.action = coin(rng);
    }

    ref.values.resize(oracle_cfg.n_eval_points);
    ref.stderrs.resize(oracle_cfg.n_eval_points);
    auto eval_range = [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const auto [v, se] = mc_policy_value(
                spec, map, fit.coeffs, ref.eval_points[i].raw_state,
                ref.eval_points[i].action, oracle_cfg.n_rollouts, horizon,
                derive_seed(seed, 0x30c7u, static_cast<std::uint64_t>(i)));
            ref.values(i) = std::clamp(v, -ref.vmax, ref.vmax);
            ref.stderrs(i) = se;
        }
    };
    if (threads <= 1) {
        eval_range(0, oracle_cfg.n_eval_points);
    } else {
        std::vector<std::future<void>> futs;
        const int chunk = (oracle_cfg.n_eval_points + threads - 1) / threads;
        for (int b = 0; b < oracle_cfg.n_eval_points; b += chunk)
            futs.push_back(std::async(std::launch::async, eval_range, b,
                                      std::min(b + chunk, oracle_cfg.n_eval_points)));
        for (auto& f : futs) f.get();
    }
    return ref;
}

// Mean absolute deviation of Q(.,.;coeffs) from the reference values.
inline double eval_error(const FeatureMap& map, const QCoefficients& coeffs,
                         const QStarReference& ref, bool clip = true) {
    if (ref.eval_points.empty()) throw ValidationError("eval_error: empty reference");
    double sum = 0.0;
    for (std::size_t i = 0; i < ref.eval_points.size(); ++i) {
        const double qhat = eval_q(map, coeffs, squash_state(ref.eval_points[i].raw_state),
                                   ref.eval_points[i].action, clip);
        sum += std::abs(qhat - ref.values(static_cast<long>(i)));
    }
    return sum / static_cast<double>(ref.eval_points.size());
}

inline void to_json(nlohmann::json& j, const QStarReference& ref) {
    std::vector<std::vector<double>> states;
    std::vector<int> actions;
    for (const auto& pt : ref.eval_points) {
        states.push_back({pt.raw_state.begin(), pt.raw_state.end()});
        actions.push_back(pt.action);
    }
    j = nlohmann::json{{"method", "mc_rollout"},
                       {"vmax", ref.vmax},
                       {"states", states},
                       {"actions", actions},
                       {"values", std::vector<double>(ref.values.begin(), ref.values.end())},
                       {"stderrs", std::vector<double>(ref.stderrs.begin(), ref.stderrs.end())}};
}

inline void from_json(const nlohmann::json& j, QStarReference& ref) {
    ref.method = QStarReference::Method::mc_rollout;
    ref.vmax = j.at("vmax").get<double>();
    const auto states = j.at("states").get<std::vector<std::vector<double>>>();
    const auto actions = j.at("actions").get<std::vector<int>>();
    const auto values = j.at("values").get<std::vector<double>>();
    const auto stderrs = j.at("stderrs").get<std::vector<double>>();
    if (states.size() != actions.size() || states.size() != values.size())
        throw ValidationError("QStarReference: inconsistent JSON arrays");
    ref.eval_points.clear();
    for (std::size_t i = 0; i < states.size(); ++i) {
        EvalPoint pt;
        pt.raw_state = Eigen::Map<const Eigen::VectorXd>(states[i].data(),
                                                         static_cast<long>(states[i].size()));
        pt.action = actions[i];
        ref.eval_points.push_back(std::move(pt));
    }
    ref.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<long>(values.size()));
    ref.stderrs =
        Eigen::Map<const Eigen::VectorXd>(stderrs.data(), static_cast<long>(stderrs.size()));
}

} // namespace transfqi
