#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "transfqi/errors.hpp"
#include "transfqi/rng.hpp"

namespace transfqi {

// Feature rows plus the trajectory each row came from (used for grouped
// cross-validation folds).
struct DesignMatrix {
    Eigen::MatrixXd Z;
    std::vector<int> traj; // traj[i] = trajectory id of row i; may be empty

    void validate() const {
        if (Z.rows() < 1 || Z.cols() < 1)
            throw ValidationError("DesignMatrix: need at least one row and column");
        if (!Z.allFinite())
            throw ValidationError("DesignMatrix: non-finite entries");
        if (!traj.empty() && static_cast<long>(traj.size()) != Z.rows())
            throw ValidationError("DesignMatrix: trajectory labels do not match rows");
    }
};

struct LassoSolution {
    Eigen::VectorXd delta;
    double lambda = 0.0;
    int iterations = 0;
    double kkt_violation = 0.0;
    std::vector<double> objective_history; // one entry per sweep
};

// Solves (Z'Z/n + ridge_eps I) w = Z'y/n via LDLT. ridge_eps = 0 requires a
// numerically nonsingular Gram matrix.
inline Eigen::VectorXd ols_fit(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                               double ridge_eps = 0.0) {
    if (y.size() != Z.rows())
        throw ValidationError("ols_fit: response length mismatch");
    const double n = static_cast<double>(Z.rows());
    Eigen::MatrixXd G = (Z.transpose() * Z) / n;
    G.diagonal().array() += ridge_eps;
    const Eigen::VectorXd b = Z.transpose() * y / n;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    const Eigen::VectorXd w = ldlt.solve(b);
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    const double cond = d.maxCoeff() / std::max(d.minCoeff(), 1e-300);
    const double back_err = (G * w - b).norm();
    // A rank-deficient Gram matrix keeps the normal equations consistent, so
    // the back-error check alone misses exact collinearity.
    if (!w.allFinite() || back_err > 1e-8 * (b.norm() + 1.0) ||
        (ridge_eps == 0.0 && cond > 1e12))
        throw SolverError("ols_fit: singular or ill-conditioned Gram matrix", cond);
    return w;
}

inline Eigen::VectorXd ols_fit(const DesignMatrix& Z, const Eigen::VectorXd& y,
                               double ridge_eps = 0.0) {
    Z.validate();
    return ols_fit(Z.Z, y, ridge_eps);
}

// Default ridge level used when a caller asks for automatic stabilization.
inline double auto_ridge_eps(const Eigen::MatrixXd& Z) {
    const double n = static_cast<double>(Z.rows());
    return 1e-8 * Z.squaredNorm() / (n * Z.cols());
}

inline double soft_threshold(double z, double lambda) {
    if (z > lambda) return z - lambda;
    if (z < -lambda) return z + lambda;
    return 0.0;
}

// Minimizes (1/2n)||r - Z d||^2 + lambda ||d||_1 by cyclic coordinate
// descent with exact per-coordinate soft-threshold updates.
inline LassoSolution lasso_fit(const Eigen::MatrixXd& Z, const Eigen::VectorXd& r,
                               double lambda, double tol = 1e-9, int max_iter = 10000) {
    if (r.size() != Z.rows())
        throw ValidationError("lasso_fit: response length mismatch");
    if (lambda < 0.0) throw ValidationError("lasso_fit: lambda must be nonnegative");

    const long q = Z.cols();
    const double n = static_cast<double>(Z.rows());

    LassoSolution sol;
    sol.lambda = lambda;
    sol.delta = Eigen::VectorXd::Zero(q);
    if (std::isinf(lambda)) return sol; // infinite penalty pins delta at zero

    const Eigen::VectorXd col_sq = Z.colwise().squaredNorm() / n;
    Eigen::VectorXd resid = r;

    auto objective = [&]() {
        return resid.squaredNorm() / (2.0 * n) + lambda * sol.delta.lpNorm<1>();
    };
    auto kkt = [&]() {
        double worst = 0.0;
        for (long j = 0; j < q; ++j) {
            const double g = Z.col(j).dot(resid) / n;
            if (sol.delta(j) == 0.0)
                worst = std::max(worst, std::max(0.0, std::abs(g) - lambda));
            else
                worst = std::max(worst, std::abs(g - lambda * (sol.delta(j) > 0 ? 1.0 : -1.0)));
        }
        return worst;
    };

    for (int sweep = 1; sweep <= max_iter; ++sweep) {
        double max_change = 0.0;
        for (long j = 0; j < q; ++j) {
            if (col_sq(j) == 0.0) continue;
            const double old = sol.delta(j);
            const double rho = Z.col(j).dot(resid) / n + col_sq(j) * old;
            const double updated = soft_threshold(rho, lambda) / col_sq(j);
            if (updated != old) {
                resid -= (updated - old) * Z.col(j);
                sol.delta(j) = updated;
            }
            max_change = std::max(max_change, std::abs(updated - old));
        }
        sol.iterations = sweep;
        sol.objective_history.push_back(objective());
        // relative criterion: a rank-deficient design lets coordinates drift
        // along near-null directions, so absolute changes can stall above tol
        if (max_change <= tol * std::max(1.0, sol.delta.cwiseAbs().maxCoeff())) {
            sol.kkt_violation = kkt();
            return sol;
        }
    }
    sol.kkt_violation = kkt();
    throw SolverError("lasso_fit: max_iter exceeded", sol.kkt_violation);
}

inline LassoSolution lasso_fit(const DesignMatrix& Z, const Eigen::VectorXd& r,
                               double lambda, double tol = 1e-9, int max_iter = 10000) {
    Z.validate();
    return lasso_fit(Z.Z, r, lambda, tol, max_iter);
}

// Smallest lambda that already yields delta = 0.
inline double lambda_max(const Eigen::MatrixXd& Z, const Eigen::VectorXd& r) {
    return (Z.transpose() * r).cwiseAbs().maxCoeff() / static_cast<double>(Z.rows());
}

inline std::vector<double> default_lambda_grid(const Eigen::MatrixXd& Z,
                                               const Eigen::VectorXd& r, int size = 20) {
    const double lmax = lambda_max(Z, r);
    std::vector<double> grid(size);
    for (int i = 0; i < size; ++i) {
        // log-spaced over [1e-4, 1] * lambda_max
        const double t = size == 1 ? 1.0 : static_cast<double>(i) / (size - 1);
        grid[i] = lmax * std::pow(10.0, -4.0 * (1.0 - t));
    }
    return grid;
}

// Grouped K-fold CV: all rows of one trajectory share a fold. Picks the
// lambda minimizing mean held-out squared error; ties go to the larger
// lambda.
inline double cross_validate_lambda(const DesignMatrix& Z, const Eigen::VectorXd& r,
                                    const std::vector<double>& grid, int folds,
                                    std::uint64_t seed, double tol = 1e-9,
                                    int max_iter = 10000) {
    Z.validate();
    if (grid.empty()) throw ValidationError("cross_validate_lambda: empty grid");
    if (folds < 2) throw ValidationError("cross_validate_lambda: folds must be >= 2");
    if (Z.traj.empty())
        throw ValidationError("cross_validate_lambda: trajectory labels required");

    std::vector<int> ids = Z.traj;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (static_cast<int>(ids.size()) < folds)
        throw ValidationError("cross_validate_lambda: fewer trajectories than folds");

    Rng rng = make_rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    // fold of trajectory ids[i] is i % folds
    std::vector<std::pair<int, int>> traj_fold;
    traj_fold.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        traj_fold.emplace_back(ids[i], static_cast<int>(i % folds));
    auto fold_of = [&](int traj_id) {
        for (const auto& [t, f] : traj_fold)
            if (t == traj_id) return f;
        return 0;
    };

    std::vector<double> mse(grid.size(), 0.0);
    for (int f = 0; f < folds; ++f) {
        std::vector<long> train, test;
        for (long i = 0; i < Z.Z.rows(); ++i)
            (fold_of(Z.traj[i]) == f ? test : train).push_back(i);
        if (test.empty() || train.empty()) continue;
        Eigen::MatrixXd Ztr(train.size(), Z.Z.cols()), Zte(test.size(), Z.Z.cols());
        Eigen::VectorXd rtr(train.size()), rte(test.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            Ztr.row(i) = Z.Z.row(train[i]);
            rtr(i) = r(train[i]);
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
            Zte.row(i) = Z.Z.row(test[i]);
            rte(i) = r(test[i]);
        }
        for (std::size_t g = 0; g < grid.size(); ++g) {
            try {
                const LassoSolution s = lasso_fit(Ztr, rtr, grid[g], tol, max_iter);
                mse[g] += (rte - Zte * s.delta).squaredNorm() / rte.size() / folds;
            } catch (const SolverError&) {
                // non-converging candidate; never select it
                mse[g] = std::numeric_limits<double>::infinity();
            }
        }
    }

    std::size_t best = 0;
    for (std::size_t g = 1; g < grid.size(); ++g) {
        if (mse[g] < mse[best] || (mse[g] == mse[best] && grid[g] > grid[best])) best = g;
    }
    return grid[best];
}

} // namespace transfqi
