#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "transfqi/bspline.hpp"
#include "transfqi/dataset.hpp"
#include "transfqi/errors.hpp"
#include "transfqi/rng.hpp"

namespace transfqi {

// Linear-Gaussian dynamics with a quadratic reward:
//   x_{t+1} = dyn_scale * diag(a, -a, a) x_t + eps,   r_t = a * x_t' C x_t + eps_r
// Actions are +-1 (index 0 -> -1, index 1 -> +1). Estimators see
// tanh-squashed states; the raw chain drives the dynamics.
struct QuadEnvSpec {
    Eigen::Matrix3d c_matrix = Eigen::Matrix3d::Zero();
    double dyn_scale = 0.75;
    double state_noise_sd = 0.5;
    double reward_noise_sd = 0.5;
    double gamma = 0.9;

    static constexpr int dim = 3;
    static constexpr int n_actions = 2;

    void validate() const {
        if (!c_matrix.allFinite()) throw ValidationError("QuadEnvSpec: non-finite C matrix");
        if (state_noise_sd < 0.0 || reward_noise_sd < 0.0)
            throw ValidationError("QuadEnvSpec: negative noise sd");
    }
};

struct SourcePerturbation {
    double sigma_c = 0.0;
    std::uint64_t seed = 0;
};

inline double action_value(int action_index) { return action_index == 0 ? -1.0 : 1.0; }

// Target reward matrix: diagonal ~ N(0,1), off-diagonal ~ N(0, 1/4).
inline QuadEnvSpec make_target_spec(std::uint64_t seed, double gamma) {
    QuadEnvSpec spec;
    spec.gamma = gamma;
    Rng rng = make_rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            spec.c_matrix(i, j) = (i == j ? 1.0 : 0.5) * g(rng);
    return spec;
}

// Source reward matrix: C + entrywise N(0, sigma_c^2) perturbation.
inline QuadEnvSpec make_source_spec(const QuadEnvSpec& target, const SourcePerturbation& pert) {
    if (pert.sigma_c < 0.0) throw ValidationError("make_source_spec: negative sigma_c");
    QuadEnvSpec spec = target;
    if (pert.sigma_c > 0.0) {
        Rng rng = make_rng(pert.seed);
        std::normal_distribution<double> g(0.0, pert.sigma_c);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) spec.c_matrix(i, j) += g(rng);
    }
    return spec;
}

inline TaskDataset simulate_task(const QuadEnvSpec& spec, int n_traj, int horizon,
                                 std::uint64_t seed, int task_id = 0) {
    spec.validate();
    TaskDataset ds;
    ds.task_id = task_id;
    ds.trajectories.reserve(std::max(n_traj, 0));
    for (int i = 0; i < n_traj; ++i) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> g(0.0, 1.0);
        std::uniform_int_distribution<int> coin(0, 1);
        Eigen::Vector3d x;
        for (int j = 0; j < 3; ++j) x(j) = g(rng);
        Trajectory traj;
        traj.reserve(horizon);
        for (int t = 0; t < horizon; ++t) {
            const int a_idx = coin(rng);
            const double a = action_value(a_idx);
            double reward = a * x.dot(spec.c_matrix * x);
            if (spec.reward_noise_sd > 0.0) reward += spec.reward_noise_sd * g(rng);
            Eigen::Vector3d next = spec.dyn_scale * Eigen::Vector3d(a * x(0), -a * x(1), a * x(2));
            if (spec.state_noise_sd > 0.0)
                for (int j = 0; j < 3; ++j) next(j) += spec.state_noise_sd * g(rng);
            Transition tr;
            tr.state = squash_state(x);
            tr.action = a_idx;
            tr.reward = reward;
            tr.next_state = squash_state(next);
            traj.push_back(std::move(tr));
            x = next;
        }
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Transition CSV: task_id,traj_id,t,s_1..s_d,action,reward,sp_1..sp_d

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void save_transitions_csv(const std::vector<TaskDataset>& tasks, std::ostream& os) {
    int d = 0;
    for (const auto& t : tasks) d = std::max(d, t.state_dim());
    os << "task_id,traj_id,t";
    for (int j = 1; j <= d; ++j) os << ",s_" << j;
    os << ",action,reward";
    for (int j = 1; j <= d; ++j) os << ",sp_" << j;
    os << "\n";
    for (const auto& task : tasks) {
        for (std::size_t i = 0; i < task.trajectories.size(); ++i) {
            const auto& traj = task.trajectories[i];
            for (std::size_t t = 0; t < traj.size(); ++t) {
                const auto& tr = traj[t];
                os << task.task_id << ',' << i << ',' << t;
                for (int j = 0; j < d; ++j) os << ',' << format_double(tr.state(j));
                os << ',' << tr.action << ',' << format_double(tr.reward);
                for (int j = 0; j < d; ++j) os << ',' << format_double(tr.next_state(j));
                os << "\n";
            }
        }
    }
}

inline void save_transitions_csv(const std::vector<TaskDataset>& tasks,
                                 const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ValidationError("save_transitions_csv: cannot open " + path);
    save_transitions_csv(tasks, f);
}

// Parses the transition CSV back into per-task datasets (sorted by task_id).
// Rows of one trajectory must appear in order with contiguous t from 0.
inline std::vector<TaskDataset> load_transitions_csv(std::istream& is, int state_dim) {
    std::string line;
    if (!std::getline(is, line))
        throw ValidationError("load_transitions_csv: missing header");
    {
        std::ostringstream expect;
        expect << "task_id,traj_id,t";
        for (int j = 1; j <= state_dim; ++j) expect << ",s_" << j;
        expect << ",action,reward";
        for (int j = 1; j <= state_dim; ++j) expect << ",sp_" << j;
        if (line != expect.str())
            throw ValidationError("load_transitions_csv: header does not match schema");
    }

    std::vector<TaskDataset> tasks;
    auto task_slot = [&](int task_id) -> TaskDataset& {
        for (auto& t : tasks)
            if (t.task_id == task_id) return t;
        tasks.push_back(TaskDataset{task_id, {}});
        return tasks.back();
    };

    int last_task = -1, last_traj = -1, last_t = -1;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        const std::size_t expected = 5 + 2 * static_cast<std::size_t>(state_dim);
        if (cells.size() != expected)
            throw ValidationError("load_transitions_csv: line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(expected) + " fields");
        try {
            std::size_t c = 0;
            const int task_id = std::stoi(cells[c++]);
            const int traj_id = std::stoi(cells[c++]);
            const int t = std::stoi(cells[c++]);
            Transition tr;
            tr.state.resize(state_dim);
            for (int j = 0; j < state_dim; ++j) tr.state(j) = std::stod(cells[c++]);
            tr.action = std::stoi(cells[c++]);
            if (tr.action < 0)
                throw ValidationError("load_transitions_csv: line " +
                                      std::to_string(line_no) + ": negative action");
            tr.reward = std::stod(cells[c++]);
            tr.next_state.resize(state_dim);
            for (int j = 0; j < state_dim; ++j) tr.next_state(j) = std::stod(cells[c++]);

            TaskDataset& task = task_slot(task_id);
            const bool new_traj = task_id != last_task || traj_id != last_traj;
            if (new_traj) {
                if (t != 0)
                    throw ValidationError("load_transitions_csv: line " +
                                          std::to_string(line_no) +
                                          ": trajectory does not start at t=0");
                task.trajectories.emplace_back();
            } else if (t != last_t + 1) {
                throw ValidationError("load_transitions_csv: line " + std::to_string(line_no) +
                                      ": non-contiguous t within trajectory");
            }
            task.trajectories.back().push_back(std::move(tr));
            last_task = task_id;
            last_traj = traj_id;
            last_t = t;
        } catch (const ValidationError&) {
            throw;
        } catch (const std::exception&) {
            throw ValidationError("load_transitions_csv: line " + std::to_string(line_no) +
                                  ": malformed row");
        }
    }
    std::sort(tasks.begin(), tasks.end(),
              [](const TaskDataset& a, const TaskDataset& b) { return a.task_id < b.task_id; });
    return tasks;
}

inline std::vector<TaskDataset> load_transitions_csv(const std::string& path, int state_dim) {
    std::ifstream f(path);
    if (!f) throw ValidationError("load_transitions_csv: cannot open " + path);
    return load_transitions_csv(f, state_dim);
}

} // namespace transfqi
