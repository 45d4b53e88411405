#pragma once

#include <Eigen/Dense>
#include <vector>

#include "transfqi/bspline.hpp"
#include "transfqi/dataset.hpp"
#include "transfqi/errors.hpp"
#include "transfqi/regress.hpp"

namespace transfqi {

struct DiscrepancyEstimates {
    double h_r_hat = 0.0;
    double c_sigma_hat = 1.0;
    std::vector<double> per_task_l1; // ||beta_r^(k) - beta_r^(0)||_1 per source
};

// Sieve projection of the immediate reward: ridge-stabilized regression of
// observed rewards on xi features.
inline Eigen::VectorXd estimate_reward_coeffs(const TaskDataset& dataset,
                                              const FeatureMap& map,
                                              double ridge_eps = -1.0) {
    if (dataset.n_samples() == 0)
        throw ValidationError("estimate_reward_coeffs: empty dataset");
    Eigen::MatrixXd Z(dataset.n_samples(), map.q());
    Eigen::VectorXd y(dataset.n_samples());
    long r = 0;
    for (const auto& traj : dataset.trajectories)
        for (const auto& tr : traj) {
            Z.row(r) = eval_xi(map, tr.state, tr.action).transpose();
            y(r) = tr.reward;
            ++r;
        }
    if (ridge_eps < 0.0) ridge_eps = auto_ridge_eps(Z) + 1e-12;
    return ols_fit(Z, y, ridge_eps);
}

// h_r plug-in: max l1 distance of source reward coefficients from the
// target's. coeff_list[0] is the target.
inline DiscrepancyEstimates estimate_hr(const std::vector<Eigen::VectorXd>& coeff_list) {
    if (coeff_list.empty()) throw ValidationError("estimate_hr: no coefficients");
    DiscrepancyEstimates est;
    for (std::size_t k = 1; k < coeff_list.size(); ++k) {
        if (coeff_list[k].size() != coeff_list[0].size())
            throw ValidationError("estimate_hr: coefficient length mismatch");
        est.per_task_l1.push_back((coeff_list[k] - coeff_list[0]).lpNorm<1>());
    }
    est.h_r_hat = 0.0;
    for (double v : est.per_task_l1) est.h_r_hat = std::max(est.h_r_hat, v);
    return est;
}

// C_Sigma plug-in: 1 + max_k || Sbar^{-1} (S_k - Sbar) ||_1 with empirical
// covariances S_k = Z_k' Z_k / n_k and their n_k-weighted average Sbar.
// The matrix norm is the max absolute column sum.
inline double estimate_c_sigma(const std::vector<TaskDataset>& datasets,
                               const FeatureMap& map, double ridge_eps = -1.0) {
    if (datasets.empty()) throw ValidationError("estimate_c_sigma: no datasets");
    const long q = map.q();
    std::vector<Eigen::MatrixXd> sigma;
    std::vector<double> weights;
    double n_total = 0.0;
    for (const auto& ds : datasets) {
        const double n = static_cast<double>(ds.n_samples());
        if (n == 0.0) throw ValidationError("estimate_c_sigma: empty dataset");
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(q, q);
        for (const auto& traj : ds.trajectories)
            for (const auto& tr : traj) {
                const Eigen::VectorXd xi = eval_xi(map, tr.state, tr.action);
                S.noalias() += xi * xi.transpose();
            }
        S /= n;
        sigma.push_back(std::move(S));
        weights.push_back(n);
        n_total += n;
    }
    if (sigma.size() == 1) return 1.0;

    Eigen::MatrixXd sbar = Eigen::MatrixXd::Zero(q, q);
    for (std::size_t k = 0; k < sigma.size(); ++k) sbar += (weights[k] / n_total) * sigma[k];

    Eigen::MatrixXd stab = sbar;
    const double eps = ridge_eps >= 0.0 ? ridge_eps : 1e-10 * sbar.trace() / q;
    stab.diagonal().array() += eps;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(stab);
    double worst = 0.0;
    for (const auto& S : sigma) {
        const Eigen::MatrixXd M = ldlt.solve(S - sbar);
        if (!M.allFinite()) {
            const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
            throw SolverError("estimate_c_sigma: singular averaged covariance",
                              d.maxCoeff() / std::max(d.minCoeff(), 1e-300));
        }
        worst = std::max(worst, M.cwiseAbs().colwise().sum().maxCoeff());
    }
    return 1.0 + worst;
}

} // namespace transfqi
