#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

#include "transfqi/dataset.hpp"
#include "transfqi/errors.hpp"
#include "transfqi/rng.hpp"

namespace transfqi {

// Finite MDP {X, A, P, r, gamma} used as an exact oracle.
// transition(s, a*n_states + s') stores P(s'|s,a).
struct TabularMDP {
    int n_states = 0;
    int n_actions = 0;
    Eigen::MatrixXd transition; // n_states x (n_actions * n_states), rows (s), blocks (a)
    Eigen::MatrixXd reward;     // n_states x n_actions
    double gamma = 0.0;
    double r_max = 0.0;

    double p(int s, int a, int sp) const { return transition(s, a * n_states + sp); }
    double& p(int s, int a, int sp) { return transition(s, a * n_states + sp); }

    void validate(double row_tol = 1e-12) const {
        if (n_states <= 0 || n_actions <= 0)
            throw ValidationError("TabularMDP: n_states and n_actions must be positive");
        if (gamma < 0.0 || gamma >= 1.0)
            throw ValidationError("TabularMDP: gamma must lie in [0,1)");
        if (reward.rows() != n_states || reward.cols() != n_actions)
            throw ValidationError("TabularMDP: reward shape mismatch");
        if (transition.rows() != n_states ||
            transition.cols() != static_cast<long>(n_actions) * n_states)
            throw ValidationError("TabularMDP: transition shape mismatch");
        for (int s = 0; s < n_states; ++s) {
            for (int a = 0; a < n_actions; ++a) {
                double sum = 0.0;
                for (int sp = 0; sp < n_states; ++sp) {
                    const double v = p(s, a, sp);
                    if (v < 0.0) throw ValidationError("TabularMDP: negative transition probability");
                    sum += v;
                }
                if (std::abs(sum - 1.0) > row_tol)
                    throw ValidationError("TabularMDP: transition row does not sum to 1");
            }
        }
        if (reward.cwiseAbs().maxCoeff() > r_max + 1e-12)
            throw ValidationError("TabularMDP: reward exceeds declared R_max");
    }

    double v_max() const { return r_max / (1.0 - gamma); }
};

struct QTable {
    Eigen::MatrixXd values; // n_states x n_actions
    int iterations = 0;
};

// Sup-norm difference of Q* between two MDPs against its reward/transition
// discrepancy bound.
struct DiscrepancyReport {
    double sup_delta_q = 0.0;
    double bound = 0.0;
    double sup_delta_r = 0.0;
    double tv_delta_rho = 0.0;
};

// Applies the Bellman optimality operator once.
inline Eigen::MatrixXd bellman_backup(const TabularMDP& mdp, const Eigen::MatrixXd& q) {
    const Eigen::VectorXd vmax = q.rowwise().maxCoeff();
    Eigen::MatrixXd out(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            double cont = 0.0;
            for (int sp = 0; sp < mdp.n_states; ++sp) cont += mdp.p(s, a, sp) * vmax(sp);
            out(s, a) = mdp.reward(s, a) + mdp.gamma * cont;
        }
    return out;
}

inline QTable value_iteration(const TabularMDP& mdp, double tol = 1e-10,
                              int max_iter = 100000) {
    if (tol <= 0.0) throw ValidationError("value_iteration: tol must be positive");
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
    double residual = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        Eigen::MatrixXd next = bellman_backup(mdp, q);
        residual = (next - q).cwiseAbs().maxCoeff();
        q = std::move(next);
        if (residual <= tol) return QTable{q, it};
    }
    throw SolverError("value_iteration: no convergence within max_iter", residual);
}

// Argmax action per state; ties broken by lowest action index.
inline std::vector<int> greedy_policy(const QTable& q) {
    std::vector<int> pi(q.values.rows());
    for (int s = 0; s < q.values.rows(); ++s) {
        int best = 0;
        for (int a = 1; a < q.values.cols(); ++a)
            if (q.values(s, a) > q.values(s, best)) best = a;
        pi[s] = best;
    }
    return pi;
}

inline DiscrepancyReport check_qstar_bound(const TabularMDP& target, const TabularMDP& source,
                                      double tol = 1e-12) {
    if (target.n_states != source.n_states || target.n_actions != source.n_actions)
        throw ValidationError("check_qstar_bound: MDP shapes differ");
    if (target.gamma != source.gamma)
        throw ValidationError("check_qstar_bound: discount factors differ");

    const QTable q0 = value_iteration(target, tol);
    const QTable qk = value_iteration(source, tol);

    DiscrepancyReport rep;
    rep.sup_delta_q = (qk.values - q0.values).cwiseAbs().maxCoeff();
    rep.sup_delta_r = (source.reward - target.reward).cwiseAbs().maxCoeff();

    // Finite-sum analogue of the integral over x': for each landing state,
    // take the sup over (x, a) of the transition-density difference.
    double sum_sup = 0.0;
    for (int sp = 0; sp < target.n_states; ++sp) {
        double sup = 0.0;
        for (int s = 0; s < target.n_states; ++s)
            for (int a = 0; a < target.n_actions; ++a)
                sup = std::max(sup, std::abs(source.p(s, a, sp) - target.p(s, a, sp)));
        sum_sup += sup;
    }
    rep.tv_delta_rho = sum_sup;

    const double g = target.gamma;
    const double rmax = std::max(target.reward.cwiseAbs().maxCoeff(),
                                 source.reward.cwiseAbs().maxCoeff());
    rep.bound = rep.sup_delta_r / (1.0 - g) + g * rmax / ((1.0 - g) * (1.0 - g)) * sum_sup;
    return rep;
}

// Draws offline trajectories under a behavior policy. States are stored as
// 1-dimensional vectors holding the state index.
inline TaskDataset sample_trajectories(const TabularMDP& mdp,
                                       const Eigen::MatrixXd& behavior, // n_states x n_actions
                                       const Eigen::VectorXd& initial,  // n_states
                                       int count, int horizon, std::uint64_t seed,
                                       double reward_noise_sd = 0.0, int task_id = 0) {
    auto check_dist = [](const Eigen::VectorXd& v, const char* what) {
        if (v.minCoeff() < 0.0 || std::abs(v.sum() - 1.0) > 1e-9)
            throw ValidationError(std::string("sample_trajectories: invalid ") + what);
    };
    check_dist(initial, "initial distribution");
    if (behavior.rows() != mdp.n_states || behavior.cols() != mdp.n_actions)
        throw ValidationError("sample_trajectories: behavior shape mismatch");
    for (int s = 0; s < mdp.n_states; ++s)
        check_dist(behavior.row(s).transpose(), "behavior row");

    auto draw = [](Rng& rng, const Eigen::VectorXd& probs) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double r = u(rng), acc = 0.0;
        for (int i = 0; i < probs.size(); ++i) {
            acc += probs(i);
            if (r <= acc) return i;
        }
        return static_cast<int>(probs.size()) - 1;
    };

    TaskDataset ds;
    ds.task_id = task_id;
    ds.trajectories.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> noise(0.0, 1.0);
        Trajectory traj;
        traj.reserve(horizon);
        int s = draw(rng, initial);
        for (int t = 0; t < horizon; ++t) {
            const int a = draw(rng, behavior.row(s).transpose());
            double r = mdp.reward(s, a);
            if (reward_noise_sd > 0.0) r += reward_noise_sd * noise(rng);
            Eigen::VectorXd probs(mdp.n_states);
            for (int sp = 0; sp < mdp.n_states; ++sp) probs(sp) = mdp.p(s, a, sp);
            const int sp = draw(rng, probs);
            Transition tr;
            tr.state = Eigen::VectorXd::Constant(1, static_cast<double>(s));
            tr.action = a;
            tr.reward = r;
            tr.next_state = Eigen::VectorXd::Constant(1, static_cast<double>(sp));
            traj.push_back(std::move(tr));
            s = sp;
        }
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

inline void to_json(nlohmann::json& j, const TabularMDP& mdp) {
    std::vector<double> reward, transition;
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) reward.push_back(mdp.reward(s, a));
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            for (int sp = 0; sp < mdp.n_states; ++sp) transition.push_back(mdp.p(s, a, sp));
    j = nlohmann::json{{"n_states", mdp.n_states}, {"n_actions", mdp.n_actions},
                       {"gamma", mdp.gamma},       {"r_max", mdp.r_max},
                       {"reward", reward},         {"transition", transition}};
}

inline void from_json(const nlohmann::json& j, TabularMDP& mdp) {
    mdp.n_states = j.at("n_states").get<int>();
    mdp.n_actions = j.at("n_actions").get<int>();
    mdp.gamma = j.at("gamma").get<double>();
    mdp.r_max = j.value("r_max", 0.0);
    const auto reward = j.at("reward").get<std::vector<double>>();
    const auto transition = j.at("transition").get<std::vector<double>>();
    if (reward.size() != static_cast<std::size_t>(mdp.n_states) * mdp.n_actions ||
        transition.size() !=
            static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states)
        throw ValidationError("TabularMDP: JSON array sizes inconsistent with shape");
    mdp.reward.resize(mdp.n_states, mdp.n_actions);
    mdp.transition.resize(mdp.n_states, static_cast<long>(mdp.n_actions) * mdp.n_states);
    std::size_t idx = 0;
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) mdp.reward(s, a) = reward[idx++];
    idx = 0;
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            for (int sp = 0; sp < mdp.n_states; ++sp) mdp.p(s, a, sp) = transition[idx++];
    if (mdp.r_max == 0.0) mdp.r_max = mdp.reward.cwiseAbs().maxCoeff();
}

} // namespace transfqi
