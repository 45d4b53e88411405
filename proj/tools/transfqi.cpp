// Experiment CLI: dataset simulation, experiment grids, Q* reference
// construction, reporting, and self-checks.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "transfqi/harness.hpp"
#include "transfqi/mdp.hpp"

namespace fs = std::filesystem;
using namespace transfqi;

namespace {

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    fs::create_directories(out_dir);
    for (std::size_t si = 0; si < cfg.env.sigma_c.size(); ++si) {
        const double sigma = cfg.env.sigma_c[si];
        const QuadEnvSpec target = [&] {
            QuadEnvSpec s = make_target_spec(derive_seed(seed, 0xA0u, 0), cfg.gamma);
            s.state_noise_sd = cfg.env.state_noise_sd;
            s.reward_noise_sd = cfg.env.reward_noise_sd;
            return s;
        }();
        const QuadEnvSpec source = make_source_spec(
            target, SourcePerturbation{sigma, derive_seed(seed, 0xE0u, 0, si)});
        for (std::size_t ii = 0; ii < cfg.env.i_source.size(); ++ii) {
            const int i_src = cfg.env.i_source[ii];
            std::vector<TaskDataset> tasks;
            tasks.push_back(simulate_task(target, cfg.env.i_target, cfg.env.horizon,
                                          derive_seed(seed, 0xB0u, 0), 0));
            tasks.push_back(simulate_task(source, i_src, cfg.env.horizon,
                                          derive_seed(seed, 0xF0u, 0, si * 1024 + ii), 1));
            std::ostringstream name;
            name << "transitions_sigma" << sigma << "_isrc" << i_src << ".csv";
            save_transitions_csv(tasks, (fs::path(out_dir) / name.str()).string());
        }
    }
    std::cout << "wrote transition CSVs to " << out_dir << "\n";
    return 0;
}

int cmd_oracle(const std::string& config_path, const std::string& out_dir,
               std::uint64_t seed, int threads) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    fs::create_directories(out_dir);
    QuadEnvSpec spec = make_target_spec(derive_seed(seed, 0xA0u, 0), cfg.gamma);
    spec.state_noise_sd = cfg.env.state_noise_sd;
    spec.reward_noise_sd = cfg.env.reward_noise_sd;
    const FeatureMap map(cfg.basis.make(QuadEnvSpec::dim), QuadEnvSpec::n_actions);
    EngineConfig ecfg = cfg.engine;
    ecfg.gamma = cfg.gamma;
    const QStarReference ref = build_reference(spec, map, cfg.oracle, ecfg,
                                               derive_seed(seed, 0xC0u, 0), threads);
    nlohmann::json j = ref;
    std::ofstream f(fs::path(out_dir) / "oracle.json");
    f << j.dump(2) << "\n";
    std::cout << "wrote oracle.json (" << ref.eval_points.size() << " eval points)\n";
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, int threads,
            std::optional<std::uint64_t> seed_override) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (seed_override) cfg.master_seed = *seed_override;
    fs::create_directories(out_dir);
    const std::vector<ResultRow> rows = run_experiment(cfg, threads);
    {
        std::ofstream f(fs::path(out_dir) / "results.csv");
        write_results_csv(rows, f);
    }
    {
        std::ofstream f(fs::path(out_dir) / "timings.csv");
        write_timings_csv(rows, f);
    }
    int failures = 0;
    for (const auto& r : rows) failures += !r.note.empty();
    std::cout << "wrote " << rows.size() << " result rows to " << out_dir << "/results.csv";
    if (failures) std::cout << " (" << failures << " rows carry error notes)";
    std::cout << "\n";
    return 0;
}

int cmd_report(const std::string& results_path, const std::string& out_dir) {
    const int panels = report(results_path, out_dir);
    std::cout << "wrote summary.csv and " << panels << " SVG panel(s) to " << out_dir << "\n";
    return 0;
}

TabularMDP random_mdp(Rng& rng, int n_states, int n_actions, double gamma) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    TabularMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.reward.resize(n_states, n_actions);
    mdp.transition.resize(n_states, static_cast<long>(n_actions) * n_states);
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            mdp.reward(s, a) = 2.0 * u(rng) - 1.0;
            double sum = 0.0;
            for (int sp = 0; sp < n_states; ++sp) {
                mdp.p(s, a, sp) = u(rng) + 1e-3;
                sum += mdp.p(s, a, sp);
            }
            for (int sp = 0; sp < n_states; ++sp) mdp.p(s, a, sp) /= sum;
        }
    mdp.r_max = mdp.reward.cwiseAbs().maxCoeff();
    return mdp;
}

// Fast verification pass: the Q* difference bound on random tabular pairs,
// and sieve FQI against exact value iteration on a one-hot basis.
int cmd_check() {
    Rng rng = make_rng(20240901);
    std::uniform_int_distribution<int> ns(3, 6), na(2, 3);
    for (int trial = 0; trial < 200; ++trial) {
        const double gamma = trial % 2 == 0 ? 0.5 : 0.9;
        const int n = ns(rng), m = na(rng);
        const TabularMDP a = random_mdp(rng, n, m, gamma);
        TabularMDP b = random_mdp(rng, n, m, gamma);
        const DiscrepancyReport rep = check_qstar_bound(a, b);
        if (rep.sup_delta_q > rep.bound + 1e-9) {
            std::cerr << "check: bound violated on trial " << trial << "\n";
            return 2;
        }
    }
    std::cout << "check: Q*-difference bound holds on 200 random MDP pairs\n";

    // Deterministic 5-state/2-action chain; one sample per (s,a) cell makes
    // the indicator-basis FQI update an exact Bellman backup.
    TabularMDP mdp;
    mdp.n_states = 5;
    mdp.n_actions = 2;
    mdp.gamma = 0.9;
    mdp.reward.resize(5, 2);
    mdp.transition = Eigen::MatrixXd::Zero(5, 10);
    for (int s = 0; s < 5; ++s)
        for (int a = 0; a < 2; ++a) {
            mdp.reward(s, a) = std::sin(1.0 + s + 3 * a);
            mdp.p(s, a, (s + 1 + a) % 5) = 1.0;
        }
    mdp.r_max = mdp.reward.cwiseAbs().maxCoeff();

    const BSplineBasis basis(1, 0, 6, BasisMode::tensor);
    const FeatureMap map(basis, 2);
    TaskDataset data;
    data.task_id = 0;
    for (int s = 0; s < 5; ++s)
        for (int a = 0; a < 2; ++a) {
            Transition tr;
            tr.state = Eigen::VectorXd::Constant(1, -1.0 + (2.0 * s + 1.0) / 5.0);
            const int sp = (s + 1 + a) % 5;
            tr.next_state = Eigen::VectorXd::Constant(1, -1.0 + (2.0 * sp + 1.0) / 5.0);
            tr.action = a;
            tr.reward = mdp.reward(s, a);
            data.trajectories.push_back({tr});
        }

    EngineConfig ecfg;
    ecfg.gamma = mdp.gamma;
    ecfg.upsilon = 50;
    ecfg.reuse_all_data = true;
    ecfg.clipping = false;
    ecfg.ridge_eps = 0.0;
    const SingleFQIResult fit = run_single_fqi(data, map, ecfg);

    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(5, 2);
    for (int tau = 0; tau < 50; ++tau) {
        q = bellman_backup(mdp, q);
        const Eigen::VectorXd& beta = fit.beta_iters[tau];
        double dev = 0.0;
        for (int s = 0; s < 5; ++s)
            for (int a = 0; a < 2; ++a) {
                const Eigen::VectorXd xi =
                    eval_xi(map, Eigen::VectorXd::Constant(1, -1.0 + (2.0 * s + 1.0) / 5.0), a);
                dev = std::max(dev, std::abs(xi.dot(beta) - q(s, a)));
            }
        if (dev > 1e-9) {
            std::cerr << "check: FQI/value-iteration deviation " << dev << " at tau "
                      << tau + 1 << "\n";
            return 2;
        }
    }
    std::cout << "check: sieve FQI matches value iteration for 50 iterations\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transferred fitted Q-iteration experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", results_path;
    std::uint64_t seed = 1;
    bool seed_given = false;
    int threads = 1;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        if (needs_config)
            sub->add_option("--config", config_path, "experiment config JSON")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
            seed_given = true;
        });
        sub->add_option("--threads", threads, "worker threads");
    };

    CLI::App* sim = app.add_subcommand("simulate", "emit transition CSVs for the grid");
    add_common(sim, true);
    CLI::App* run = app.add_subcommand("run", "execute the experiment grid");
    add_common(run, true);
    CLI::App* orc = app.add_subcommand("oracle", "build and cache a Q* reference");
    add_common(orc, true);
    CLI::App* rep = app.add_subcommand("report", "summaries and SVG boxplots");
    rep->add_option("--results", results_path, "results.csv path")->required();
    rep->add_option("--out", out_dir, "output directory");
    CLI::App* chk = app.add_subcommand("check", "run built-in verification suites");
    (void)chk;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed()) return cmd_simulate(config_path, out_dir, seed);
        if (run->parsed())
            return cmd_run(config_path, out_dir, threads,
                           seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt);
        if (orc->parsed()) return cmd_oracle(config_path, out_dir, seed, threads);
        if (rep->parsed()) return cmd_report(results_path, out_dir);
        if (chk->parsed()) return cmd_check();
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
