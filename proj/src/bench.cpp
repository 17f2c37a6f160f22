#include "otakf/bench.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <thread>

namespace otakf::bench {

namespace {

struct RunOutput {
    bool ok = false;
    std::vector<double> step_mse;
    double mse_db = 0.0;
    std::vector<NoiseParams> theta;
    double seconds = 0.0;
};

bool all_finite(const std::vector<StateEstimate>& estimates) {
    return std::all_of(estimates.begin(), estimates.end(),
                       [](const StateEstimate& e) { return e.mean.allFinite(); });
}

std::uint64_t adapt_seed(std::uint64_t base, int run) {
    // splitmix64 step so neighbouring runs get unrelated particle streams
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(run + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

AdaptConfig config_for(Method method, const AdaptConfig& base) {
    AdaptConfig cfg = base;
    if (method == Method::otak_no_warmup) cfg.warmup = false;
    if (method == Method::otak_pointwise) cfg.target = TargetMode::single_point;
    return cfg;
}

RunOutput run_method(Method method, const Trajectory& traj, const DriftScenario& sc, int run) {
    RunOutput out;
    const auto start = std::chrono::steady_clock::now();
    try {
        const StateEstimate initial = initial_estimate(traj);
        std::vector<StateEstimate> estimates;
        switch (method) {
            case Method::fixed_ekf_nominal:
                estimates = run_filter(traj, NoiseParams::from_covariances(sc.nominal), initial);
                break;
            case Method::fixed_ekf_oracle:
                estimates = run_filter(traj, NoiseParams::from_covariances(sc.true_cov), initial);
                break;
            case Method::otak:
            case Method::otak_no_warmup:
            case Method::otak_pointwise: {
                AdaptConfig cfg = config_for(method, sc.adapt);
                cfg.seed = adapt_seed(sc.adapt.seed, run);
                OtakResult res =
                    run_otak_filter(traj, NoiseParams::from_covariances(sc.nominal), cfg, initial);
                estimates = std::move(res.estimates);
                out.theta = std::move(res.theta_trace);
                break;
            }
        }
        if (all_finite(estimates)) {
            out.step_mse = per_step_mse(estimates, traj.states);
            out.mse_db = mse_db(estimates, traj.states);
            out.ok = std::isfinite(out.mse_db);
        }
    } catch (const std::exception&) {
        out.ok = false;
    }
    out.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

VectorXd scenario_x0(const DriftScenario& sc) {
    return sc.x0 ? *sc.x0 : default_initial_state(sc.spec);
}

Trajectory scenario_trajectory(const DriftScenario& sc, int run, const VectorXd& x0) {
    const std::uint64_t seed = sc.seed + static_cast<std::uint64_t>(run);
    std::vector<double> controls;
    if (sc.spec.model == Model::nclt) {
        controls = piecewise_speed_profile(sc.T, sc.nclt_segment, sc.nclt_v_min, sc.nclt_v_max,
                                           seed ^ 0x5851f42d4c957f2dULL);
    }
    return simulate(sc.spec, sc.true_cov, x0, sc.T, seed, controls);
}

}  // namespace

CovariancePair nominal_covariances(const SsmSpec& spec) {
    if (spec.model == Model::nclt) {
        VectorXd q(5);
        q << 1.0, 1.0, 1e-3, 1e-3, 1e-3;
        return {q.asDiagonal(), 100.0 * MatrixXd::Identity(2, 2)};
    }
    return covariance_from_ratio(0.0, 0.0, spec);
}

DriftScenario default_scenario(const SsmSpec& spec) {
    DriftScenario sc;
    sc.spec = spec;
    sc.nominal = nominal_covariances(spec);
    sc.true_cov = sc.nominal;
    return sc;
}

Trajectory scenario_trajectory(const DriftScenario& sc, int run) {
    sc.validate();
    return scenario_trajectory(sc, run, scenario_x0(sc));
}

std::string_view method_name(Method method) {
    switch (method) {
        case Method::fixed_ekf_nominal: return "fixed_ekf_nominal";
        case Method::fixed_ekf_oracle: return "fixed_ekf_oracle";
        case Method::otak: return "otak";
        case Method::otak_no_warmup: return "otak_no_warmup";
        case Method::otak_pointwise: return "otak_pointwise";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (Method m : all_methods()) {
        if (method_name(m) == name) return m;
    }
    throw InvalidInput("unknown method '" + std::string(name) + "'");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods{Method::fixed_ekf_nominal, Method::fixed_ekf_oracle,
                                             Method::otak, Method::otak_no_warmup,
                                             Method::otak_pointwise};
    return methods;
}

std::string_view drift_mode_name(DriftMode mode) {
    return mode == DriftMode::measurement ? "measurement" : "ratio";
}

DriftMode parse_drift_mode(std::string_view name) {
    if (name == "measurement") return DriftMode::measurement;
    if (name == "ratio") return DriftMode::ratio;
    throw InvalidInput("unknown drift mode '" + std::string(name) + "'");
}

void DriftScenario::validate() const {
    spec.validate();
    if (runs < 1) throw InvalidInput("DriftScenario: runs must be >= 1");
    if (T < 2) throw InvalidInput("DriftScenario: T must be >= 2");
    nominal.validate(spec.state_dim, spec.meas_dim);
    true_cov.validate(spec.state_dim, spec.meas_dim);
    adapt.validate();
    if (x0 && x0->size() != spec.state_dim) throw InvalidInput("DriftScenario: x0 dimension");
}

CovariancePair drifted_covariances(const CovariancePair& nominal, double level_db, DriftMode mode,
                                   double nu_db, const SsmSpec& spec) {
    if (mode == DriftMode::ratio) return covariance_from_ratio(nu_db, level_db, spec);
    const double r2 = std::pow(10.0, -level_db / 10.0);
    return {nominal.Q, r2 * MatrixXd::Identity(spec.meas_dim, spec.meas_dim)};
}

const MethodResult& ScenarioResult::get(Method m) const {
    for (const auto& r : methods) {
        if (r.method == m) return r;
    }
    throw InvalidInput("ScenarioResult: method '" + std::string(method_name(m)) + "' not run");
}

bool ScenarioResult::ok() const {
    return std::none_of(methods.begin(), methods.end(), [this](const MethodResult& r) {
        return r.failed_policy(scenario.runs);
    });
}

double mse_db(const std::vector<StateEstimate>& estimates, const std::vector<VectorXd>& truth) {
    if (estimates.empty()) throw InvalidInput("mse_db: empty input");
    if (estimates.size() != truth.size()) throw InvalidInput("mse_db: length mismatch");
    double total = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        total += (estimates[t].mean - truth[t]).squaredNorm();
    }
    const double mse = total / static_cast<double>(truth.size() * truth.front().size());
    return mse > 0.0 ? std::max(10.0 * std::log10(mse), -300.0) : -300.0;
}

std::vector<double> per_step_mse(const std::vector<StateEstimate>& estimates,
                                 const std::vector<VectorXd>& truth) {
    if (estimates.size() != truth.size()) throw InvalidInput("per_step_mse: length mismatch");
    std::vector<double> out(truth.size());
    for (std::size_t t = 0; t < truth.size(); ++t) {
        out[t] = (estimates[t].mean - truth[t]).squaredNorm() /
                 static_cast<double>(truth[t].size());
    }
    return out;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 0.0};
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

ScenarioResult run_scenario(const DriftScenario& sc, const std::vector<Method>& methods,
                            int threads) {
    sc.validate();
    if (methods.empty()) throw InvalidInput("run_scenario: no methods requested");
    const VectorXd x0 = scenario_x0(sc);
    const std::size_t n_methods = methods.size();

    std::vector<std::uint64_t> hashes(sc.runs);
    std::vector<std::vector<RunOutput>> outputs(sc.runs, std::vector<RunOutput>(n_methods));

    auto do_run = [&](int run) {
        const Trajectory traj = scenario_trajectory(sc, run, x0);
        hashes[run] = trajectory_hash(traj);
        for (std::size_t k = 0; k < n_methods; ++k) {
            outputs[run][k] = run_method(methods[k], traj, sc, run);
        }
    };

    const int workers = std::clamp(threads, 1, sc.runs);
    if (workers == 1) {
        for (int run = 0; run < sc.runs; ++run) do_run(run);
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (int run = w; run < sc.runs; run += workers) do_run(run);
            });
        }
    }

    ScenarioResult result;
    result.scenario = sc;
    result.trajectory_hashes = hashes;
    for (std::size_t k = 0; k < n_methods; ++k) {
        MethodResult mr;
        mr.method = methods[k];
        std::vector<double> curve(sc.T, 0.0);
        std::vector<VectorXd> theta_sum;
        int ok_runs = 0;
        for (int run = 0; run < sc.runs; ++run) {
            const RunOutput& o = outputs[run][k];
            mr.seconds += o.seconds;
            if (!o.ok) {
                ++mr.failures;
                continue;
            }
            ++ok_runs;
            mr.run_mse_db.push_back(o.mse_db);
            mr.run_index.push_back(run);
            for (int t = 0; t < sc.T; ++t) curve[t] += o.step_mse[t];
            if (!o.theta.empty()) {
                if (theta_sum.empty()) {
                    theta_sum.assign(sc.T, VectorXd::Zero(o.theta.front().size()));
                }
                for (int t = 0; t < sc.T; ++t) theta_sum[t] += o.theta[t].flat();
            }
        }
        std::tie(mr.mean_db, mr.std_db) = mean_std(mr.run_mse_db);
        if (ok_runs > 0) {
            mr.curve_db.resize(sc.T);
            for (int t = 0; t < sc.T; ++t) {
                const double m = curve[t] / ok_runs;
                mr.curve_db[t] = m > 0.0 ? std::max(10.0 * std::log10(m), -300.0) : -300.0;
            }
            for (auto& th : theta_sum) mr.theta_mean.push_back(th / ok_runs);
        }
        result.methods.push_back(std::move(mr));
    }
    return result;
}

SweepTable drift_sweep(const DriftScenario& base, const std::vector<double>& levels_db,
                       const std::vector<Method>& methods, DriftMode mode, double nu_db,
                       int threads) {
    if (levels_db.empty()) throw InvalidInput("drift_sweep: no drift levels");
    SweepTable table;
    table.levels_db = levels_db;
    for (double level : levels_db) {
        DriftScenario sc = base;
        sc.true_cov = drifted_covariances(base.nominal, level, mode, nu_db, base.spec);
        sc.level_db = level;
        table.results.push_back(run_scenario(sc, methods, threads));
    }
    return table;
}

ConvergenceGap convergence_curve(const MethodResult& result, const MethodResult& oracle,
                                 int split) {
    const int T = static_cast<int>(result.curve_db.size());
    if (T == 0 || oracle.curve_db.size() != result.curve_db.size()) {
        throw InvalidInput("convergence_curve: curves missing or of different length");
    }
    if (split < 1 || split >= T) throw InvalidInput("convergence_curve: split out of range");
    ConvergenceGap gap;
    for (int t = 0; t < split; ++t) gap.early += result.curve_db[t] - oracle.curve_db[t];
    for (int t = split; t < T; ++t) gap.late += result.curve_db[t] - oracle.curve_db[t];
    gap.early /= split;
    gap.late /= (T - split);
    return gap;
}

double early_curve_std(const MethodResult& result, int last) {
    if (last < 2 || last > static_cast<int>(result.curve_db.size())) {
        throw InvalidInput("early_curve_std: range out of bounds");
    }
    return mean_std({result.curve_db.begin(), result.curve_db.begin() + last}).second;
}

}  // namespace otakf::bench
