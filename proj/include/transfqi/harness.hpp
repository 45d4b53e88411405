#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <tuple>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "transfqi/bspline.hpp"
#include "transfqi/diagnostics.hpp"
#include "transfqi/errors.hpp"
#include "transfqi/fqi.hpp"
#include "transfqi/oracle.hpp"
#include "transfqi/simenv.hpp"
#include "transfqi/stats.hpp"

namespace transfqi {

struct BasisConfig {
    int degree = 3;
    int knots_per_dim = 2;
    std::string mode = "additive";

    BSplineBasis make(int dim) const {
        return BSplineBasis(dim, degree, knots_per_dim,
                            mode == "tensor" ? BasisMode::tensor : BasisMode::additive);
    }
};

struct EnvConfig {
    int i_target = 20;
    std::vector<int> i_source = {10, 20, 40, 80};
    int horizon = 5;
    std::vector<double> sigma_c = {0.25, 0.5, 0.75, 1.0};
    double state_noise_sd = 0.5;
    double reward_noise_sd = 0.5;
};

struct ExperimentConfig {
    double gamma = 0.9;
    BasisConfig basis;
    EngineConfig engine;
    EnvConfig env;
    OracleConfig oracle;
    int replications = 50;
    std::uint64_t master_seed = 1;
    std::vector<std::string> methods = {"no_transfer", "one_step", "two_step"};

    void validate() const {
        if (replications < 1) throw ValidationError("ExperimentConfig: replications >= 1");
        if (methods.empty()) throw ValidationError("ExperimentConfig: methods nonempty");
        for (const auto& m : methods)
            if (m != "no_transfer" && m != "one_step" && m != "two_step")
                throw ValidationError("ExperimentConfig: unknown method " + m);
        for (double s : env.sigma_c)
            if (s < 0.0) throw ValidationError("ExperimentConfig: sigma_c must be >= 0");
        if (gamma < 0.0 || gamma >= 1.0)
            throw ValidationError("ExperimentConfig: gamma must lie in [0,1)");
    }
};

struct ResultRow {
    double sigma_c = 0.0;
    int i_source = 0;
    std::string method;
    int replication = 0;
    double mean_abs_error = 0.0;
    double h_r_hat = 0.0;
    double c_sigma_hat = 1.0;
    double runtime_ms = 0.0;
    std::string note; // empty on success
};

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c.gamma = j.value("gamma", 0.9);
    if (j.contains("basis")) {
        const auto& b = j.at("basis");
        c.basis.degree = b.value("degree", 3);
        c.basis.knots_per_dim = b.value("knots_per_dim", 2);
        c.basis.mode = b.value("mode", "additive");
    }
    if (j.contains("engine")) {
        const auto& e = j.at("engine");
        c.engine.upsilon = e.value("upsilon", 10);
        if (e.contains("lambda") && !e.at("lambda").is_null())
            c.engine.lambda = e.at("lambda").get<double>();
        c.engine.lambda_grid_size = e.value("lambda_grid_size", 20);
        c.engine.cv_folds = e.value("cv_folds", 5);
        c.engine.cv_once = e.value("cv_once", false);
        c.engine.reuse_all_data = e.value("reuse_all_data", false);
        c.engine.clipping = e.value("clipping", true);
        c.engine.ridge_eps = e.value("ridge_eps", -1.0);
        c.engine.lasso_tol = e.value("lasso_tol", 1e-9);
        c.engine.lasso_max_iter = e.value("lasso_max_iter", 10000);
        const std::string init = e.value("init", "zero");
        c.engine.init =
            init == "gaussian" ? EngineConfig::Init::gaussian : EngineConfig::Init::zero;
    }
    if (j.contains("env")) {
        const auto& e = j.at("env");
        c.env.i_target = e.value("i_target", 20);
        c.env.i_source = e.value("i_source", std::vector<int>{10, 20, 40, 80});
        c.env.horizon = e.value("horizon", 5);
        c.env.sigma_c = e.value("sigma_c", std::vector<double>{0.25, 0.5, 0.75, 1.0});
        c.env.state_noise_sd = e.value("state_noise_sd", 0.5);
        c.env.reward_noise_sd = e.value("reward_noise_sd", 0.5);
    }
    if (j.contains("oracle")) {
        const auto& o = j.at("oracle");
        c.oracle.n_ref_traj = o.value("n_ref_traj", 2000);
        c.oracle.n_eval_points = o.value("n_eval_points", 200);
        c.oracle.n_rollouts = o.value("n_rollouts", 500);
        c.oracle.trunc_tol = o.value("trunc_tol", 1e-3);
    }
    c.replications = j.value("replications", 50);
    c.master_seed = j.value("master_seed", std::uint64_t{1});
    c.methods = j.value("methods",
                        std::vector<std::string>{"no_transfer", "one_step", "two_step"});
    c.validate();
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("config file not found: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    return j.get<ExperimentConfig>();
}

namespace detail {

struct RepOutput {
    std::vector<ResultRow> rows; // grid order within the replication
};

inline QuadEnvSpec make_env_target(const ExperimentConfig& cfg, int rep) {
    QuadEnvSpec spec = make_target_spec(derive_seed(cfg.master_seed, 0xA0u, rep), cfg.gamma);
    spec.state_noise_sd = cfg.env.state_noise_sd;
    spec.reward_noise_sd = cfg.env.reward_noise_sd;
    return spec;
}

// One replication: shared target data and Q* reference, then every
// (sigma_c, i_source, method) cell.
inline RepOutput run_replication(const ExperimentConfig& cfg, const FeatureMap& map,
                                 int rep) {
    RepOutput out;
    const QuadEnvSpec target_spec = make_env_target(cfg, rep);
    const TaskDataset target_ds =
        simulate_task(target_spec, cfg.env.i_target, cfg.env.horizon,
                      derive_seed(cfg.master_seed, 0xB0u, rep), 0);

    EngineConfig ecfg = cfg.engine;
    ecfg.gamma = cfg.gamma;

    EngineConfig ref_cfg = ecfg;
    ref_cfg.reuse_all_data = false;
    const QStarReference ref = build_reference(
        target_spec, map, cfg.oracle, ref_cfg, derive_seed(cfg.master_seed, 0xC0u, rep));

    const Eigen::VectorXd target_reward_coeffs = estimate_reward_coeffs(target_ds, map);

    bool want_no_transfer = false, want_one = false, want_two = false;
    for (const auto& m : cfg.methods) {
        want_no_transfer |= m == "no_transfer";
        want_one |= m == "one_step";
        want_two |= m == "two_step";
    }

    // no_transfer ignores the source grid entirely; compute once.
    double nt_error = 0.0, nt_ms = 0.0;
    std::string nt_note;
    if (want_no_transfer) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            EngineConfig c = ecfg;
            c.seed = derive_seed(cfg.master_seed, 0xD0u, rep);
            const SingleFQIResult fit = run_single_fqi(target_ds, map, c);
            nt_error = eval_error(map, fit.coeffs, ref);
        } catch (const std::exception& e) {
            nt_note = e.what();
        }
        nt_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          t0)
                    .count();
    }

    for (std::size_t si = 0; si < cfg.env.sigma_c.size(); ++si) {
        const double sigma = cfg.env.sigma_c[si];
        const QuadEnvSpec source_spec = make_source_spec(
            target_spec,
            SourcePerturbation{sigma, derive_seed(cfg.master_seed, 0xE0u, rep, si)});
        for (std::size_t ii = 0; ii < cfg.env.i_source.size(); ++ii) {
            const int i_src = cfg.env.i_source[ii];
            const TaskDataset source_ds = simulate_task(
                source_spec, i_src, cfg.env.horizon,
                derive_seed(cfg.master_seed, 0xF0u, rep, si * 1024 + ii), 1);

            double h_r = 0.0, c_sigma = 1.0;
            try {
                const Eigen::VectorXd src_coeffs = estimate_reward_coeffs(source_ds, map);
                h_r = estimate_hr({target_reward_coeffs, src_coeffs}).h_r_hat;
                c_sigma = estimate_c_sigma({target_ds, source_ds}, map);
            } catch (const std::exception&) {
                // leave defaults; per-method notes carry engine failures
            }

            for (const auto& method : cfg.methods) {
                ResultRow row;
                row.sigma_c = sigma;
                row.i_source = i_src;
                row.method = method;
                row.replication = rep;
                row.h_r_hat = h_r;
                row.c_sigma_hat = method == "no_transfer" ? 1.0 : c_sigma;
                if (method == "no_transfer") {
                    row.mean_abs_error = nt_error;
                    row.runtime_ms = nt_ms;
                    row.note = nt_note;
                } else {
                    const auto t0 = std::chrono::steady_clock::now();
                    try {
                        EngineConfig c = ecfg;
                        c.seed = derive_seed(cfg.master_seed, 0xD1u, rep,
                                             (si * 1024 + ii) * 4 + (method == "two_step"));
                        const std::vector<TaskDataset> tasks = {target_ds, source_ds};
                        const TransFQIResult fit = method == "two_step"
                                                       ? run_transfqi(tasks, map, c)
                                                       : run_onestep(tasks, map, c);
                        row.mean_abs_error = eval_error(map, fit.beta_hat[0], ref);
                    } catch (const std::exception& e) {
                        row.note = e.what();
                    }
                    row.runtime_ms = std::chrono::duration<double, std::milli>(
                                         std::chrono::steady_clock::now() - t0)
                                         .count();
                }
                out.rows.push_back(std::move(row));
            }
        }
    }
    return out;
}

} // namespace detail

// Executes the full grid. Rows are returned in deterministic order
// (sigma_c, i_source, replication, method) regardless of thread count.
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, int threads = 1) {
    cfg.validate();
    const FeatureMap map(cfg.basis.make(QuadEnvSpec::dim), QuadEnvSpec::n_actions);

    std::vector<detail::RepOutput> reps(cfg.replications);
    if (threads <= 1) {
        for (int rep = 0; rep < cfg.replications; ++rep)
            reps[rep] = detail::run_replication(cfg, map, rep);
    } else {
        std::vector<std::future<void>> futs;
        std::atomic<int> next{0};
        for (int w = 0; w < threads; ++w)
            futs.push_back(std::async(std::launch::async, [&]() {
                for (int rep = next.fetch_add(1); rep < cfg.replications;
                     rep = next.fetch_add(1))
                    reps[rep] = detail::run_replication(cfg, map, rep);
            }));
        for (auto& f : futs) f.get();
    }

    // Reorder: replication-major within each grid cell.
    std::vector<ResultRow> rows;
    const std::size_t cells_per_rep =
        cfg.env.sigma_c.size() * cfg.env.i_source.size() * cfg.methods.size();
    const std::size_t per_cell = cfg.methods.size();
    for (std::size_t si = 0; si < cfg.env.sigma_c.size(); ++si)
        for (std::size_t ii = 0; ii < cfg.env.i_source.size(); ++ii)
            for (int rep = 0; rep < cfg.replications; ++rep)
                for (std::size_t m = 0; m < per_cell; ++m) {
                    const std::size_t idx =
                        (si * cfg.env.i_source.size() + ii) * per_cell + m;
                    rows.push_back(reps[rep].rows.at(idx));
                }
    (void)cells_per_rep;
    return rows;
}

// results.csv holds the deterministic columns; runtimes go to a separate
// timings file so repeated runs with one master_seed are byte-identical.
inline void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& os) {
    os << "sigma_c,i_source,method,replication,mean_abs_error,h_r_hat,c_sigma_hat,note\n";
    for (const auto& r : rows) {
        os << format_double(r.sigma_c) << ',' << r.i_source << ',' << r.method << ','
           << r.replication << ',' << format_double(r.mean_abs_error) << ','
           << format_double(r.h_r_hat) << ',' << format_double(r.c_sigma_hat) << ','
           << r.note << "\n";
    }
}

inline void write_timings_csv(const std::vector<ResultRow>& rows, std::ostream& os) {
    os << "sigma_c,i_source,method,replication,runtime_ms\n";
    for (const auto& r : rows)
        os << format_double(r.sigma_c) << ',' << r.i_source << ',' << r.method << ','
           << r.replication << ',' << format_double(r.runtime_ms) << "\n";
}

inline std::vector<ResultRow> read_results_csv(std::istream& is) {
    std::vector<ResultRow> rows;
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("results CSV: missing header");
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        while (cells.size() < 8) cells.push_back("");
        try {
            ResultRow r;
            r.sigma_c = std::stod(cells[0]);
            r.i_source = std::stoi(cells[1]);
            r.method = cells[2];
            r.replication = std::stoi(cells[3]);
            r.mean_abs_error = std::stod(cells[4]);
            r.h_r_hat = std::stod(cells[5]);
            r.c_sigma_hat = std::stod(cells[6]);
            r.note = cells[7];
            rows.push_back(std::move(r));
        } catch (const std::exception&) {
            throw ValidationError("results CSV: malformed line " + std::to_string(line_no));
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Reporting: summary CSV plus one SVG boxplot panel per sigma_c.

struct ReportGroup {
    double sigma_c = 0.0;
    int i_source = 0;
    std::string method;
    BoxStats stats;
};

inline std::vector<ReportGroup> summarize_results(const std::vector<ResultRow>& rows) {
    if (rows.empty()) throw ValidationError("report: empty input");
    std::map<std::tuple<double, int, std::string>, std::vector<double>> groups;
    for (const auto& r : rows)
        if (r.note.empty())
            groups[{r.sigma_c, r.i_source, r.method}].push_back(r.mean_abs_error);
    if (groups.empty()) throw ValidationError("report: no successful rows");
    std::vector<ReportGroup> out;
    for (const auto& [key, vals] : groups) {
        ReportGroup g;
        g.sigma_c = std::get<0>(key);
        g.i_source = std::get<1>(key);
        g.method = std::get<2>(key);
        g.stats = box_stats(vals);
        out.push_back(std::move(g));
    }
    return out;
}

inline void write_summary_csv(const std::vector<ReportGroup>& groups, std::ostream& os) {
    os << "sigma_c,i_source,method,n,median,q1,q3,lo_whisker,hi_whisker\n";
    for (const auto& g : groups)
        os << format_double(g.sigma_c) << ',' << g.i_source << ',' << g.method << ','
           << g.stats.n << ',' << format_double(g.stats.median) << ','
           << format_double(g.stats.q1) << ',' << format_double(g.stats.q3) << ','
           << format_double(g.stats.lo_whisker) << ',' << format_double(g.stats.hi_whisker)
           << "\n";
}

// One panel: boxes grouped by i_source, one box per method within a group.
inline std::string render_boxplot_svg(const std::vector<ReportGroup>& panel,
                                      double sigma_c) {
    std::vector<int> i_values;
    std::vector<std::string> methods;
    double lo = 1e300, hi = -1e300;
    for (const auto& g : panel) {
        if (std::find(i_values.begin(), i_values.end(), g.i_source) == i_values.end())
            i_values.push_back(g.i_source);
        if (std::find(methods.begin(), methods.end(), g.method) == methods.end())
            methods.push_back(g.method);
        lo = std::min(lo, g.stats.lo_whisker);
        hi = std::max(hi, g.stats.hi_whisker);
    }
    std::sort(i_values.begin(), i_values.end());
    if (hi <= lo) hi = lo + 1.0;
    const double pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;

    const double W = 720, H = 420, ml = 60, mr = 20, mt = 40, mb = 50;
    const double plot_w = W - ml - mr, plot_h = H - mt - mb;
    auto ycoord = [&](double v) { return mt + plot_h * (1.0 - (v - lo) / (hi - lo)); };
    const std::vector<std::string> colors = {"#4477aa", "#ee6677", "#228833", "#ccbb44"};

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    svg << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << "estimation error, sigma_c=" << sigma_c << "</text>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << mt + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w
        << "\" y2=\"" << mt + plot_h << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        svg << "<text x=\"" << ml - 6 << "\" y=\"" << ycoord(v) + 4
            << "\" text-anchor=\"end\" font-size=\"11\">" << static_cast<int>(v * 100) / 100.0
            << "</text>\n";
    }

    const double group_w = plot_w / i_values.size();
    const double box_w = 0.7 * group_w / methods.size();
    for (std::size_t gi = 0; gi < i_values.size(); ++gi) {
        const double gx = ml + group_w * (gi + 0.5);
        svg << "<text x=\"" << gx << "\" y=\"" << mt + plot_h + 18
            << "\" text-anchor=\"middle\" font-size=\"12\">I1=" << i_values[gi]
            << "</text>\n";
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const ReportGroup* g = nullptr;
            for (const auto& cand : panel)
                if (cand.i_source == i_values[gi] && cand.method == methods[mi]) g = &cand;
            if (!g) continue;
            const double cx =
                gx + (static_cast<double>(mi) - (methods.size() - 1) / 2.0) * box_w * 1.15;
            const std::string& col = colors[mi % colors.size()];
            const double x0 = cx - box_w / 2, x1 = cx + box_w / 2;
            svg << "<line x1=\"" << cx << "\" y1=\"" << ycoord(g->stats.lo_whisker)
                << "\" x2=\"" << cx << "\" y2=\"" << ycoord(g->stats.hi_whisker)
                << "\" stroke=\"" << col << "\"/>\n";
            svg << "<rect x=\"" << x0 << "\" y=\"" << ycoord(g->stats.q3) << "\" width=\""
                << box_w << "\" height=\"" << ycoord(g->stats.q1) - ycoord(g->stats.q3)
                << "\" fill=\"" << col << "\" fill-opacity=\"0.35\" stroke=\"" << col
                << "\"/>\n";
            svg << "<line x1=\"" << x0 << "\" y1=\"" << ycoord(g->stats.median) << "\" x2=\""
                << x1 << "\" y2=\"" << ycoord(g->stats.median) << "\" stroke=\"" << col
                << "\" stroke-width=\"2\"/>\n";
        }
    }
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        svg << "<rect x=\"" << ml + 8 + 130.0 * mi << "\" y=\"" << mt - 12
            << "\" width=\"12\" height=\"12\" fill=\"" << colors[mi % colors.size()]
            << "\" fill-opacity=\"0.5\"/>\n";
        svg << "<text x=\"" << ml + 24 + 130.0 * mi << "\" y=\"" << mt - 2
            << "\" font-size=\"12\">" << methods[mi] << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

// Writes summary.csv and boxplot_sigma_<v>.svg files. Returns the number of
// SVG panels written.
inline int report(const std::string& results_path, const std::string& out_dir) {
    std::ifstream f(results_path);
    if (!f) throw ValidationError("report: cannot open " + results_path);
    const std::vector<ResultRow> rows = read_results_csv(f);
    const std::vector<ReportGroup> groups = summarize_results(rows);

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream s(std::filesystem::path(out_dir) / "summary.csv");
        write_summary_csv(groups, s);
    }

    std::vector<double> sigmas;
    for (const auto& g : groups)
        if (std::find(sigmas.begin(), sigmas.end(), g.sigma_c) == sigmas.end())
            sigmas.push_back(g.sigma_c);
    std::sort(sigmas.begin(), sigmas.end());
    for (double s : sigmas) {
        std::vector<ReportGroup> panel;
        for (const auto& g : groups)
            if (g.sigma_c == s) panel.push_back(g);
        std::ostringstream name;
        name << "boxplot_sigma_" << s << ".svg";
        std::ofstream out(std::filesystem::path(out_dir) / name.str());
        out << render_boxplot_svg(panel, s);
    }
    return static_cast<int>(sigmas.size());
}

} // namespace transfqi
