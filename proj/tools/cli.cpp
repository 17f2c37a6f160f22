#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "otakf/bench_io.hpp"

namespace otakf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string join_diag(const MatrixXd& m) {
    std::string s;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (i) s += ';';
        s += format_double(m(i, i));
    }
    return s;
}

std::optional<VectorXd> parse_diag(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) {
        try {
            values.push_back(std::stod(item));
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }
    if (values.empty()) return std::nullopt;
    return Eigen::Map<VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::optional<std::string> comment_value(const std::vector<std::string>& comments,
                                         const std::string& key) {
    for (const auto& c : comments) {
        if (c.rfind(key + "=", 0) == 0) return c.substr(key.size() + 1);
    }
    return std::nullopt;
}

json resolved_json(const RunConfig& cfg) {
    json j = {{"command", cfg.command},
              {"model", cfg.model},
              {"T", cfg.T},
              {"seed", cfg.seed},
              {"runs", cfg.runs ? json(*cfg.runs) : json(nullptr)},
              {"inv_r2_db", cfg.inv_r2_db ? json(*cfg.inv_r2_db) : json(nullptr)},
              {"nu_db", cfg.nu_db},
              {"method", cfg.method},
              {"oracle", cfg.oracle},
              {"adapt", bench::to_json(cfg.adapt)},
              {"out", cfg.out},
              {"config_file", cfg.config_file},
              {"verbosity", cfg.verbosity}};
    if (cfg.command == "bench") {
        j["suite"] = cfg.suite;
        j["levels"] = cfg.levels;
        j["drift_mode"] = cfg.drift_mode;
        j["threads"] = cfg.threads;
        j["full"] = cfg.full;
    }
    if (cfg.command == "filter") j["inputs"] = cfg.inputs;
    return j;
}

std::vector<std::string> artifact_header(const RunConfig& cfg) {
    return {"otakf " + bench::tool_version(), "config=" + resolved_json(cfg).dump()};
}

void write_comments(std::ostream& out, const std::vector<std::string>& lines) {
    for (const auto& l : lines) out << "# " << l << '\n';
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    return f;
}

fs::path output_dir(const RunConfig& cfg) {
    fs::path dir(cfg.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir)) throw std::runtime_error("cannot create directory '" + cfg.out + "'");
    return dir;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
    const SsmSpec spec = SsmSpec::of(parse_model(cfg.model));
    bench::DriftScenario sc = bench::default_scenario(spec);
    sc.true_cov = flag_covariances(cfg, spec);
    sc.T = cfg.T;
    sc.seed = cfg.seed;
    sc.runs = cfg.runs.value_or(1);
    sc.validate();
    const fs::path dir = output_dir(cfg);
    for (int r = 0; r < sc.runs; ++r) {
        const Trajectory traj = bench::scenario_trajectory(sc, r);
        std::vector<std::string> comments = artifact_header(cfg);
        comments.push_back("model=" + cfg.model);
        comments.push_back("seed=" + std::to_string(traj.seed));
        comments.push_back("T=" + std::to_string(traj.length()));
        comments.push_back("true_Q_diag=" + join_diag(traj.true_cov.Q));
        comments.push_back("true_R_diag=" + join_diag(traj.true_cov.R));
        const fs::path path = dir / (cfg.model + "_seed" + std::to_string(traj.seed) + ".csv");
        std::ofstream f = open_output(path);
        write_trajectory_csv(f, traj, comments);
        out << "wrote " << path.string() << " (T=" << traj.length() << ", n=" << spec.state_dim
            << ", m=" << spec.meas_dim << ", seed=" << traj.seed << ")\n";
    }
    return kSuccess;
}

CovariancePair file_covariances(const std::vector<std::string>& comments, const SsmSpec& spec) {
    const auto q = comment_value(comments, "true_Q_diag");
    const auto r = comment_value(comments, "true_R_diag");
    if (!q || !r) return {};
    const auto qd = parse_diag(*q);
    const auto rd = parse_diag(*r);
    if (!qd || !rd || qd->size() != spec.state_dim || rd->size() != spec.meas_dim) {
        throw ParseError("malformed true covariance metadata");
    }
    return {qd->asDiagonal(), rd->asDiagonal()};
}

void write_estimates(std::ostream& f, const RunConfig& cfg, const std::vector<std::string>& meta,
                     const Trajectory& traj, const std::vector<StateEstimate>& estimates) {
    write_comments(f, artifact_header(cfg));
    write_comments(f, meta);
    f << 't';
    for (int i = 1; i <= traj.spec.state_dim; ++i) f << ",xhat" << i;
    f << ",mse\n";
    std::vector<double> step;
    if (traj.has_truth()) step = bench::per_step_mse(estimates, traj.states);
    for (std::size_t t = 0; t < estimates.size(); ++t) {
        f << t + 1;
        for (Eigen::Index i = 0; i < estimates[t].mean.size(); ++i) {
            f << ',' << format_double(estimates[t].mean(i));
        }
        f << ',' << (step.empty() ? std::string() : format_double(step[t])) << '\n';
    }
}

void write_diagnostics(std::ostream& f, const RunConfig& cfg, const OtakResult& res,
                       const SsmSpec& spec) {
    write_comments(f, artifact_header(cfg));
    f << "t,lr,skipped,clamped";
    for (int k = 1; k <= cfg.adapt.inner_iters; ++k) f << ",loss" << k;
    for (int i = 1; i <= spec.state_dim; ++i) f << ",q2_" << i;
    for (int i = 1; i <= spec.meas_dim; ++i) f << ",r2_" << i;
    f << '\n';
    for (std::size_t t = 0; t < res.theta_trace.size(); ++t) {
        const AdaptDiagnostics& d = res.diagnostics[t];
        f << t + 1 << ',' << format_double(d.lr) << ',' << d.skipped << ',' << d.clamped;
        for (int k = 0; k < cfg.adapt.inner_iters; ++k) {
            f << ',';
            if (k < static_cast<int>(d.losses.size())) f << format_double(d.losses[k]);
        }
        const NoiseParams& th = res.theta_trace[t];
        for (Eigen::Index i = 0; i < th.log_q.size(); ++i) f << ',' << format_double(th.Q()(i, i));
        for (Eigen::Index i = 0; i < th.log_r.size(); ++i) f << ',' << format_double(th.R()(i, i));
        f << '\n';
    }
}

int cmd_filter(const RunConfig& cfg, std::ostream& out) {
    const SsmSpec spec = SsmSpec::of(parse_model(cfg.model));
    if (cfg.method != "fixed" && cfg.method != "otak") {
        throw UsageError("--method must be 'fixed' or 'otak'");
    }
    const fs::path dir = output_dir(cfg);
    for (const auto& input : cfg.inputs) {
        std::ifstream in(input);
        if (!in) throw std::runtime_error("cannot open '" + input + "'");
        std::vector<std::string> comments;
        Trajectory traj;
        try {
            traj = read_trajectory_csv(in, spec, &comments);
        } catch (const ParseError& e) {
            throw ParseError(input + ": " + e.what());
        }
        CovariancePair cov = flag_covariances(cfg, spec);
        std::string source = "flags";
        if (cfg.oracle) {
            CovariancePair from_file = file_covariances(comments, spec);
            if (from_file.Q.size() > 0) {
                cov = from_file;
                source = "file metadata";
            }
        }
        cov.validate(spec.state_dim, spec.meas_dim);
        const NoiseParams theta = NoiseParams::from_covariances(cov);
        const StateEstimate initial = initial_estimate(traj);
        const std::vector<std::string> meta = {
            "input=" + input, "method=" + cfg.method,
            "assumed_Q_diag=" + join_diag(cov.Q), "assumed_R_diag=" + join_diag(cov.R),
            "covariance_source=" + source};

        std::vector<StateEstimate> estimates;
        const std::string stem = fs::path(input).stem().string();
        if (cfg.method == "fixed") {
            estimates = run_filter(traj, theta, initial);
        } else {
            OtakResult res = run_otak_filter(traj, theta, cfg.adapt, initial);
            estimates = res.estimates;
            std::ofstream f = open_output(dir / (stem + "_diagnostics.csv"));
            write_diagnostics(f, cfg, res, spec);
        }
        std::ofstream f = open_output(dir / (stem + "_estimates.csv"));
        write_estimates(f, cfg, meta, traj, estimates);
        if (traj.has_truth()) {
            out << input << ": MSE " << std::fixed << std::setprecision(4)
                << bench::mse_db(estimates, traj.states) << " dB\n";
            out.unsetf(std::ios::floatfield);
        } else {
            out << input << ": no ground truth, estimates written\n";
        }
    }
    return kSuccess;
}

struct Suite {
    SsmSpec spec;
    std::vector<double> levels;
    std::vector<bench::Method> methods;
};

Suite make_suite(const std::string& name) {
    using bench::Method;
    if (name == "lorenz-drift") {
        return {SsmSpec::lorenz(), {-10, 0, 10, 20, 30},
                {Method::fixed_ekf_nominal, Method::fixed_ekf_oracle, Method::otak}};
    }
    if (name == "ablation") {
        return {SsmSpec::lorenz(), {20}, bench::all_methods()};
    }
    if (name == "nclt-synthetic") {
        return {SsmSpec::nclt(), {-30, -20, -10},
                {Method::fixed_ekf_nominal, Method::fixed_ekf_oracle, Method::otak}};
    }
    throw UsageError("unknown suite '" + name + "'");
}

void print_table(std::ostream& out, const bench::SweepTable& table) {
    out << std::left << std::setw(20) << "method";
    for (double l : table.levels_db) out << std::right << std::setw(18) << (format_double(l) + " dB");
    out << '\n';
    for (std::size_t k = 0; k < table.results.front().methods.size(); ++k) {
        out << std::left << std::setw(20) << bench::method_name(table.results.front().methods[k].method);
        for (const auto& sr : table.results) {
            const auto& m = sr.methods[k];
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(2) << m.mean_db << " +- " << m.std_db;
            if (m.failures) cell << " (" << m.failures << "f)";
            out << std::right << std::setw(18) << cell.str();
        }
        out << '\n';
    }
}

int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    Suite suite = make_suite(cfg.suite);
    if (!cfg.levels.empty()) suite.levels = cfg.levels;
    bench::DriftScenario base = bench::default_scenario(suite.spec);
    base.T = cfg.T;
    base.seed = cfg.seed;
    base.runs = cfg.full ? 100 : cfg.runs.value_or(20);
    base.adapt = cfg.adapt;
    const bench::DriftMode mode = bench::parse_drift_mode(cfg.drift_mode);

    const bench::SweepTable table =
        bench::drift_sweep(base, suite.levels, suite.methods, mode, cfg.nu_db, cfg.threads);

    const fs::path dir = output_dir(cfg);
    json doc = {{"tool", "otakf"},
                {"version", bench::tool_version()},
                {"suite", cfg.suite},
                {"drift_mode", cfg.drift_mode},
                {"levels_db", table.levels_db},
                {"run_config", resolved_json(cfg)},
                {"scenarios", json::array()}};
    for (const auto& sr : table.results) doc["scenarios"].push_back(bench::scenario_json(sr));
    {
        std::ofstream f = open_output(dir / (cfg.suite + ".json"));
        f << doc.dump(2) << '\n';
    }
    {
        std::ofstream f = open_output(dir / (cfg.suite + "_runs.csv"));
        write_comments(f, artifact_header(cfg));
        bench::write_runs_csv(f, table);
    }
    {
        std::ofstream f = open_output(dir / (cfg.suite + "_curves.csv"));
        write_comments(f, artifact_header(cfg));
        bench::write_curves_csv(f, table);
    }

    out << "suite " << cfg.suite << ": mean MSE [dB] +- std over " << base.runs << " runs, T="
        << base.T << '\n';
    print_table(out, table);
    const int split = std::min(25, base.T - 1);
    for (const auto& sr : table.results) {
        for (const auto& m : sr.methods) {
            if (m.method == bench::Method::fixed_ekf_oracle || m.curve_db.empty()) continue;
            const auto& oracle = sr.get(bench::Method::fixed_ekf_oracle);
            if (oracle.curve_db.empty()) continue;
            const auto gap = bench::convergence_curve(m, oracle, split);
            out << "gap to oracle at " << format_double(sr.scenario.level_db) << " dB, "
                << bench::method_name(m.method) << ": steps 1-" << split << ' ' << std::fixed
                << std::setprecision(2) << gap.early << " dB, later " << gap.late << " dB\n";
            out.unsetf(std::ios::floatfield);
        }
    }

    bool ok = true;
    for (const auto& sr : table.results) {
        if (sr.ok()) continue;
        ok = false;
        err << "scenario " << format_double(sr.scenario.level_db) << " dB failed:";
        for (const auto& m : sr.methods) {
            err << ' ' << bench::method_name(m.method) << '=' << m.failures << '/' << sr.scenario.runs;
        }
        err << '\n';
    }
    return ok ? kSuccess : kRuntimeFailure;
}

}  // namespace

CovariancePair flag_covariances(const RunConfig& cfg, const SsmSpec& spec) {
    if (spec.model == Model::nclt) {
        CovariancePair cov = bench::nominal_covariances(spec);
        if (cfg.inv_r2_db) {
            cov.R = std::pow(10.0, -*cfg.inv_r2_db / 10.0) * MatrixXd::Identity(2, 2);
        }
        return cov;
    }
    return covariance_from_ratio(cfg.nu_db, cfg.inv_r2_db.value_or(0.0), spec);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    CLI::App app{"Optimal-transport adaptive extended Kalman filtering", "otakf"};
    app.set_version_flag("--version", bench::tool_version());
    app.set_config("--config", "", "key=value file; command-line flags take precedence");
    app.require_subcommand(1);

    app.add_option("--model", cfg.model, "lorenz | nclt | linear1d")
        ->check(CLI::IsMember({"lorenz", "nclt", "linear1d"}));
    app.add_option("--T", cfg.T, "trajectory length")->check(CLI::PositiveNumber);
    app.add_option("--seed", cfg.seed, "base seed")->envname("OTAKF_SEED");
    app.add_option("--runs", cfg.runs, "number of seeds / Monte-Carlo runs")
        ->check(CLI::PositiveNumber);
    app.add_option("--inv-r2-db", cfg.inv_r2_db, "1/r^2 in dB");
    app.add_option("--nu-db", cfg.nu_db, "q^2/r^2 in dB");
    app.add_option("--method", cfg.method, "fixed | otak")->check(CLI::IsMember({"fixed", "otak"}));
    app.add_flag("--oracle", cfg.oracle, "filter with the generating covariances");
    app.add_option("--W", cfg.adapt.window, "residual window length")->check(CLI::PositiveNumber);
    app.add_option("--lr", cfg.adapt.lr, "adaptation learning rate")->check(CLI::NonNegativeNumber);
    app.add_option("--particles", cfg.adapt.particles, "source particles")
        ->check(CLI::Range(2, 1 << 20));
    app.add_option("--inner-k", cfg.adapt.inner_iters, "adaptation iterations per step")
        ->check(CLI::PositiveNumber);
    app.add_option("--ipot-iters", cfg.adapt.ipot_iters, "IPOT outer iterations")
        ->check(CLI::PositiveNumber);
    app.add_option("--epsilon-scale", cfg.adapt.epsilon_scale, "proximal step as a fraction of median cost")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", cfg.out, "output directory");
    app.add_option("--suite", cfg.suite, "lorenz-drift | ablation | nclt-synthetic")
        ->check(CLI::IsMember({"lorenz-drift", "ablation", "nclt-synthetic"}));
    app.add_option("--levels", cfg.levels, "drift levels in dB (overrides the suite's)");
    app.add_option("--drift-mode", cfg.drift_mode, "measurement | ratio")
        ->check(CLI::IsMember({"measurement", "ratio"}));
    app.add_option("--threads", cfg.threads, "worker threads for Monte-Carlo runs")
        ->check(CLI::PositiveNumber);
    app.add_flag("--full", cfg.full, "100 runs per scenario");
    app.add_flag("-v,--verbose", cfg.verbosity, "echo the resolved configuration to stderr");

    CLI::App* simulate = app.add_subcommand("simulate", "write simulated trajectory CSVs");
    CLI::App* filter = app.add_subcommand("filter", "filter trajectory CSVs");
    CLI::App* bench_cmd = app.add_subcommand("bench", "run a benchmark suite");
    filter->add_option("inputs", cfg.inputs, "trajectory CSV files")->required();
    for (CLI::App* sub : {simulate, filter, bench_cmd}) sub->fallthrough();

    try {
        app.parse(argc, argv);
        if ((simulate->parsed() || filter->parsed()) && app.count("--model") == 0) {
            throw CLI::RequiredError("--model");
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kUsageError;
    }
    cfg.command = simulate->parsed() ? "simulate" : filter->parsed() ? "filter" : "bench";
    cfg.adapt.seed = cfg.seed;
    if (auto* c = app.get_config_ptr(); c && c->count() > 0) cfg.config_file = c->as<std::string>();
    if (cfg.verbosity > 0) err << resolved_json(cfg).dump(2) << '\n';

    try {
        cfg.adapt.validate();
        if (cfg.T < 2) throw InvalidInput("--T must be >= 2");
    } catch (const InvalidInput& e) {
        err << "invalid configuration: " << e.what() << '\n';
        return kUsageError;
    }

    try {
        if (cfg.command == "simulate") return cmd_simulate(cfg, out);
        if (cfg.command == "filter") return cmd_filter(cfg, out);
        return cmd_bench(cfg, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
}

}  // namespace otakf::cli
