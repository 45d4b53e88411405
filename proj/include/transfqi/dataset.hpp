#pragma once

#include <Eigen/Dense>
#include <vector>

#include "transfqi/errors.hpp"

namespace transfqi {

struct Transition {
    Eigen::VectorXd state;
    int action = 0;
    double reward = 0.0;
    Eigen::VectorXd next_state;
};

using Trajectory = std::vector<Transition>;

// A task's offline transitions organized as trajectories.
// task_id 0 is the target task; positive ids are source tasks.
struct TaskDataset {
    int task_id = 0;
    std::vector<Trajectory> trajectories;

    std::size_t n_samples() const {
        std::size_t n = 0;
        for (const auto& traj : trajectories) n += traj.size();
        return n;
    }

    int state_dim() const {
        for (const auto& traj : trajectories)
            if (!traj.empty()) return static_cast<int>(traj.front().state.size());
        return 0;
    }

    double max_abs_reward() const {
        double m = 0.0;
        for (const auto& traj : trajectories)
            for (const auto& tr : traj) m = std::max(m, std::abs(tr.reward));
        return m;
    }

    void validate() const {
        const int d = state_dim();
        for (const auto& traj : trajectories) {
            for (const auto& tr : traj) {
                if (tr.state.size() != d || tr.next_state.size() != d)
                    throw ValidationError("TaskDataset: inconsistent state dimension");
                if (tr.action < 0)
                    throw ValidationError("TaskDataset: negative action index");
            }
        }
    }
};

} // namespace transfqi
