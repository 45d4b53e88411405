#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "transfqi/bspline.hpp"
#include "transfqi/dataset.hpp"
#include "transfqi/errors.hpp"
#include "transfqi/regress.hpp"
#include "transfqi/rng.hpp"

namespace transfqi {

struct EngineConfig {
    double gamma = 0.9;
    int upsilon = 10;

    enum class Init { zero, gaussian };
    Init init = Init::zero;
    double init_sd = 0.1; // N(0, 0.01) when init == gaussian

    std::uint64_t seed = 0;

    std::optional<double> lambda; // fixed penalty; unset -> cross-validation
    int lambda_grid_size = 20;
    int cv_folds = 5;
    bool cv_once = false;        // freeze the CV choice after the first iteration
    bool reuse_all_data = false; // every iteration sees the full dataset

    bool clipping = true;
    double vmax = 0.0; // 0 -> max observed |reward| / (1 - gamma)

    double ridge_eps = -1.0; // negative -> scale-aware default
    double lasso_tol = 1e-9;
    int lasso_max_iter = 10000;
};

struct FqiHistoryRow {
    int tau = 0;
    int task_id = 0;
    double l1_delta = 0.0;
    double linf_beta_change = 0.0;
    double chosen_lambda = 0.0;
    double step1_residual = 0.0;
};

struct TransFQIResult {
    QCoefficients w_hat;
    std::vector<QCoefficients> beta_hat;  // aligned with input datasets
    std::vector<QCoefficients> delta_hat; // beta_hat[k] = w_hat + delta_hat[k]
    std::vector<std::vector<std::vector<int>>> split; // [task][subset] -> trajectory idx
    std::vector<FqiHistoryRow> history;
    std::vector<Eigen::VectorXd> target_w_iters; // pooled coefficients after each tau
    std::vector<Eigen::VectorXd> target_beta_iters; // target beta after each tau
};

struct SingleFQIResult {
    QCoefficients coeffs;
    std::vector<FqiHistoryRow> history;
    std::vector<Eigen::VectorXd> beta_iters;
};

// Random trajectory-level partition into upsilon near-equal subsets. All T
// steps of a trajectory land in the same subset.
inline std::vector<std::vector<int>> split_dataset(const TaskDataset& data, int upsilon,
                                                   std::uint64_t seed) {
    if (upsilon < 1) throw ValidationError("split_dataset: upsilon must be >= 1");
    const int n_traj = static_cast<int>(data.trajectories.size());
    if (n_traj < upsilon)
        throw ValidationError("split_dataset: fewer trajectories than subsets");
    std::vector<int> order(n_traj);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> subsets(upsilon);
    for (int i = 0; i < n_traj; ++i) subsets[i % upsilon].push_back(order[i]);
    for (auto& s : subsets) std::sort(s.begin(), s.end());
    return subsets;
}

// Y = R + gamma * max_a' Qhat(next_state, a') for each transition.
inline Eigen::VectorXd pseudo_response(const std::vector<const Transition*>& samples,
                                       const QCoefficients& coeffs_prev,
                                       const FeatureMap& map, double gamma,
                                       bool clip = true) {
    Eigen::VectorXd y(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double cont =
            gamma != 0.0 ? max_q(map, coeffs_prev, samples[i]->next_state, clip) : 0.0;
        y(i) = samples[i]->reward + gamma * cont;
    }
    return y;
}

namespace detail {

struct PreparedTask {
    const TaskDataset* data = nullptr;
    Eigen::MatrixXd rows;                      // feature row per (traj, t), traversal order
    std::vector<const Transition*> samples;    // aligned with rows
    std::vector<int> row_traj;                 // trajectory index per row
    std::vector<std::pair<long, long>> traj_range; // row range [begin,end) per trajectory
};

inline PreparedTask prepare_task(const TaskDataset& data, const FeatureMap& map) {
    PreparedTask pt;
    pt.data = &data;
    const long n = static_cast<long>(data.n_samples());
    pt.rows.resize(n, map.q());
    pt.samples.reserve(n);
    pt.row_traj.reserve(n);
    long r = 0;
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        const long begin = r;
        for (const auto& tr : data.trajectories[i]) {
            pt.rows.row(r) = eval_xi(map, tr.state, tr.action).transpose();
            pt.samples.push_back(&tr);
            pt.row_traj.push_back(static_cast<int>(i));
            ++r;
        }
        pt.traj_range.emplace_back(begin, r);
    }
    return pt;
}

struct SubsetView {
    Eigen::MatrixXd Z;
    std::vector<const Transition*> samples;
    std::vector<int> traj;
};

inline SubsetView gather(const PreparedTask& pt, const std::vector<int>& traj_idx) {
    long n = 0;
    for (int t : traj_idx) n += pt.traj_range[t].second - pt.traj_range[t].first;
    SubsetView v;
    v.Z.resize(n, pt.rows.cols());
    v.samples.reserve(n);
    v.traj.reserve(n);
    long r = 0;
    for (int t : traj_idx) {
        for (long i = pt.traj_range[t].first; i < pt.traj_range[t].second; ++i) {
            v.Z.row(r++) = pt.rows.row(i);
            v.samples.push_back(pt.samples[i]);
            v.traj.push_back(t);
        }
    }
    return v;
}

enum class Mode { single, onestep, twostep };

inline TransFQIResult run_engine(const std::vector<TaskDataset>& datasets,
                                 const FeatureMap& map, const EngineConfig& config,
                                 Mode mode) {
    if (datasets.empty()) throw ValidationError("fqi: no datasets given");
    int n_target = 0;
    for (const auto& d : datasets) n_target += (d.task_id == 0);
    if (n_target != 1)
        throw ValidationError("fqi: task_id 0 must be present exactly once");
    if (config.upsilon < 1) throw ValidationError("fqi: upsilon must be >= 1");

    const int K1 = static_cast<int>(datasets.size());
    const long q = map.q();

    double vmax = config.vmax;
    if (vmax <= 0.0) {
        double rmax = 0.0;
        for (const auto& d : datasets) rmax = std::max(rmax, d.max_abs_reward());
        vmax = rmax / (1.0 - config.gamma);
    }

    std::vector<PreparedTask> prepared;
    prepared.reserve(K1);
    for (const auto& d : datasets) prepared.push_back(prepare_task(d, map));

    TransFQIResult res;
    res.split.resize(K1);
    for (int k = 0; k < K1; ++k) {
        if (config.reuse_all_data) {
            std::vector<int> all(datasets[k].trajectories.size());
            std::iota(all.begin(), all.end(), 0);
            res.split[k].assign(config.upsilon, all);
        } else {
            res.split[k] = split_dataset(datasets[k], config.upsilon,
                                         derive_seed(config.seed, 0x5b17u, k));
        }
    }

    // Initial estimators.
    std::vector<QCoefficients> beta(K1);
    for (int k = 0; k < K1; ++k) {
        beta[k].vmax = vmax;
        if (config.init == EngineConfig::Init::gaussian) {
            Rng rng = make_rng(derive_seed(config.seed, 0x1217u, k));
            std::normal_distribution<double> g(0.0, config.init_sd);
            beta[k].beta = Eigen::VectorXd::NullaryExpr(q, [&](long) { return g(rng); });
        } else {
            beta[k].beta = Eigen::VectorXd::Zero(q);
        }
    }

    std::vector<double> frozen_lambda(K1, -1.0);
    QCoefficients w{Eigen::VectorXd::Zero(q), vmax};

    static std::atomic<bool> warned_small{false};

    for (int tau = 1; tau <= config.upsilon; ++tau) {
        // Pseudo-responses on this iteration's subsets, per task.
        std::vector<SubsetView> views(K1);
        std::vector<Eigen::VectorXd> ys(K1);
        long n_total = 0;
        for (int k = 0; k < K1; ++k) {
            views[k] = gather(prepared[k], res.split[k][tau - 1]);
            ys[k] = pseudo_response(views[k].samples, beta[k], map, config.gamma,
                                    config.clipping);
            n_total += views[k].Z.rows();
        }

        // Step I: pooled least squares across all tasks.
        Eigen::MatrixXd Zpool(n_total, q);
        Eigen::VectorXd ypool(n_total);
        long r0 = 0;
        for (int k = 0; k < K1; ++k) {
            Zpool.middleRows(r0, views[k].Z.rows()) = views[k].Z;
            ypool.segment(r0, views[k].Z.rows()) = ys[k];
            r0 += views[k].Z.rows();
        }
        if (n_total < q && !warned_small.exchange(true))
            std::cerr << "fqi: subset size " << n_total << " below feature count " << q
                      << "; ridge stabilization in effect\n";
        const double eps = config.ridge_eps >= 0.0 ? config.ridge_eps : auto_ridge_eps(Zpool);
        Eigen::VectorXd w_vec;
        try {
            w_vec = ols_fit(Zpool, ypool, eps);
        } catch (const SolverError& e) {
            throw SolverError("fqi: Step I failed at tau=" + std::to_string(tau) + ": " +
                                  e.what(),
                              e.diagnostic());
        }
        w.beta = w_vec;
        const double step1_residual =
            std::sqrt((ypool - Zpool * w_vec).squaredNorm() / static_cast<double>(n_total));

        // Step II: per-task l1-penalized bias correction.
        for (int k = 0; k < K1; ++k) {
            Eigen::VectorXd delta = Eigen::VectorXd::Zero(q);
            double chosen_lambda = std::numeric_limits<double>::infinity();
            if (mode == Mode::twostep) {
                const Eigen::VectorXd resid = ys[k] - views[k].Z * w_vec;
                double lam;
                if (config.lambda) {
                    lam = *config.lambda;
                } else if (config.cv_once && frozen_lambda[k] >= 0.0) {
                    lam = frozen_lambda[k];
                } else {
                    std::vector<int> traj_ids = views[k].traj;
                    std::sort(traj_ids.begin(), traj_ids.end());
                    traj_ids.erase(std::unique(traj_ids.begin(), traj_ids.end()),
                                   traj_ids.end());
                    const int folds =
                        std::min<int>(config.cv_folds, static_cast<int>(traj_ids.size()));
                    const auto grid =
                        default_lambda_grid(views[k].Z, resid, config.lambda_grid_size);
                    if (folds >= 2) {
                        DesignMatrix dm{views[k].Z, views[k].traj};
                        lam = cross_validate_lambda(dm, resid, grid, folds,
                                                    derive_seed(config.seed, 0xc5f0u + tau, k),
                                                    config.lasso_tol, config.lasso_max_iter);
                    } else {
                        // too few trajectories to cross-validate
                        lam = 0.5 * lambda_max(views[k].Z, resid);
                    }
                    if (config.cv_once) frozen_lambda[k] = lam;
                }
                chosen_lambda = lam;
                try {
                    delta = lasso_fit(views[k].Z, resid, lam, config.lasso_tol,
                                      config.lasso_max_iter)
                                .delta;
                } catch (const SolverError& e) {
                    throw SolverError("fqi: Step II failed at tau=" + std::to_string(tau) +
                                          ", k=" + std::to_string(datasets[k].task_id) +
                                          ": " + e.what(),
                                      e.diagnostic());
                }
            }
            const Eigen::VectorXd new_beta = w_vec + delta;
            FqiHistoryRow row;
            row.tau = tau;
            row.task_id = datasets[k].task_id;
            row.l1_delta = delta.lpNorm<1>();
            row.linf_beta_change = (new_beta - beta[k].beta).cwiseAbs().maxCoeff();
            row.chosen_lambda = mode == Mode::twostep ? chosen_lambda : 0.0;
            row.step1_residual = step1_residual;
            res.history.push_back(row);

            beta[k].beta = new_beta;
            if (res.delta_hat.size() < static_cast<std::size_t>(K1))
                res.delta_hat.push_back(QCoefficients{delta, vmax});
            else
                res.delta_hat[k] = QCoefficients{delta, vmax};
        }

        res.target_w_iters.push_back(w_vec);
        for (int k = 0; k < K1; ++k)
            if (datasets[k].task_id == 0) res.target_beta_iters.push_back(beta[k].beta);
    }

    res.w_hat = w;
    res.beta_hat = beta;
    return res;
}

} // namespace detail

// Algorithm: per iteration, pooled Step I across all tasks, then per-task
// lasso bias correction (Step II), beta_k = w + delta_k.
inline TransFQIResult run_transfqi(const std::vector<TaskDataset>& datasets,
                                   const FeatureMap& map, const EngineConfig& config) {
    return detail::run_engine(datasets, map, config, detail::Mode::twostep);
}

// Step I only; every task shares the pooled coefficients.
inline TransFQIResult run_onestep(const std::vector<TaskDataset>& datasets,
                                  const FeatureMap& map, const EngineConfig& config) {
    return detail::run_engine(datasets, map, config, detail::Mode::onestep);
}

// Plain FQI on a single task.
inline SingleFQIResult run_single_fqi(const TaskDataset& dataset, const FeatureMap& map,
                                      const EngineConfig& config) {
    if (dataset.task_id != 0)
        throw ValidationError("run_single_fqi: dataset must have task_id 0");
    TransFQIResult r = detail::run_engine({dataset}, map, config, detail::Mode::single);
    return SingleFQIResult{r.beta_hat[0], std::move(r.history),
                           std::move(r.target_beta_iters)};
}

} // namespace transfqi
