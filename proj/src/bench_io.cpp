#include "otakf/bench_io.hpp"

#include <ostream>

namespace otakf::bench {

using nlohmann::json;

namespace {

std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::string_view target_name(TargetMode mode) {
    return mode == TargetMode::windowed ? "windowed" : "single_point";
}

std::string_view mask_name(AdaptMask mask) {
    switch (mask) {
        case AdaptMask::measurement: return "measurement";
        case AdaptMask::process: return "process";
        case AdaptMask::both: return "both";
    }
    return "unknown";
}

AdaptConfig effective_config(Method method, const AdaptConfig& base) {
    AdaptConfig cfg = base;
    if (method == Method::otak_no_warmup) cfg.warmup = false;
    if (method == Method::otak_pointwise) cfg.target = TargetMode::single_point;
    return cfg;
}

}  // namespace

std::string tool_version() { return OTAKF_VERSION; }

json to_json(const SsmSpec& spec) {
    return {{"model", model_name(spec.model)},
            {"state_dim", spec.state_dim},
            {"meas_dim", spec.meas_dim},
            {"dt", spec.dt},
            {"taylor_order", spec.taylor_order},
            {"linear_coeff", spec.linear_coeff}};
}

json to_json(const AdaptConfig& cfg) {
    return {{"window", cfg.window},
            {"particles", cfg.particles},
            {"inner_iters", cfg.inner_iters},
            {"lr", cfg.lr},
            {"weight_decay", cfg.weight_decay},
            {"epsilon_scale", cfg.epsilon_scale},
            {"epsilon_floor", cfg.epsilon_floor},
            {"ipot_iters", cfg.ipot_iters},
            {"ipot_inner", cfg.ipot_inner},
            {"ipot_tol", cfg.ipot_tol},
            {"warmup", cfg.warmup},
            {"target", target_name(cfg.target)},
            {"mask", mask_name(cfg.mask)},
            {"seed", cfg.seed},
            {"adam", {{"beta1", kAdamBeta1}, {"beta2", kAdamBeta2}, {"eps", kAdamEps}}},
            {"log_std_limit", kLogStdLimit}};
}

json to_json(const DriftScenario& sc) {
    json j = {{"spec", to_json(sc.spec)},
              {"nominal", {{"Q_diag", to_vec(sc.nominal.Q.diagonal())},
                           {"R_diag", to_vec(sc.nominal.R.diagonal())}}},
              {"true", {{"Q_diag", to_vec(sc.true_cov.Q.diagonal())},
                        {"R_diag", to_vec(sc.true_cov.R.diagonal())}}},
              {"T", sc.T},
              {"runs", sc.runs},
              {"seed", sc.seed},
              {"level_db", sc.level_db},
              {"adapt", to_json(sc.adapt)}};
    if (sc.x0) j["x0"] = to_vec(*sc.x0);
    if (sc.spec.model == Model::nclt) {
        j["nclt_speed_profile"] = {
            {"segment", sc.nclt_segment}, {"v_min", sc.nclt_v_min}, {"v_max", sc.nclt_v_max}};
    }
    return j;
}

json to_json(const MethodResult& r) {
    json theta = json::array();
    for (const auto& th : r.theta_mean) theta.push_back(to_vec(th));
    return {{"method", method_name(r.method)},
            {"mean_db", r.mean_db},
            {"std_db", r.std_db},
            {"std_definition", "sample std of per-run MSE dB"},
            {"run_mse_db", r.run_mse_db},
            {"run_index", r.run_index},
            {"curve_db", r.curve_db},
            {"theta_mean", theta},
            {"failures", r.failures},
            {"seconds", r.seconds}};
}

json ablation_diff(Method method, const AdaptConfig& base) {
    const json ref = to_json(effective_config(Method::otak, base));
    const json eff = to_json(effective_config(method, base));
    json diff = json::object();
    for (auto it = ref.begin(); it != ref.end(); ++it) {
        if (eff[it.key()] != it.value()) diff[it.key()] = {it.value(), eff[it.key()]};
    }
    return diff;
}

json scenario_json(const ScenarioResult& result, const json& run_config) {
    json methods = json::array();
    json diffs = json::object();
    for (const auto& m : result.methods) {
        methods.push_back(to_json(m));
        if (m.method == Method::otak_no_warmup || m.method == Method::otak_pointwise) {
            diffs[std::string(method_name(m.method))] =
                ablation_diff(m.method, result.scenario.adapt);
        }
    }
    std::vector<std::string> hashes;
    for (auto h : result.trajectory_hashes) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        hashes.emplace_back(buf);
    }
    json j = {{"tool", "otakf"},
              {"version", tool_version()},
              {"scenario", to_json(result.scenario)},
              {"trajectory_hashes", hashes},
              {"ablation_config_diff", diffs},
              {"mse_definition", "10 log10 of mean squared state error; curves average linear MSE "
                                 "over runs before conversion"},
              {"failure_policy", "non-finite runs excluded; >10% failures fails the scenario"},
              {"scenario_ok", result.ok()},
              {"methods", methods}};
    if (!run_config.is_null()) j["run_config"] = run_config;
    return j;
}

void write_runs_csv(std::ostream& out, const SweepTable& table) {
    out << "method,level_db,run,mse_db\n";
    for (const auto& sr : table.results) {
        for (const auto& m : sr.methods) {
            for (std::size_t i = 0; i < m.run_mse_db.size(); ++i) {
                out << method_name(m.method) << ',' << format_double(sr.scenario.level_db) << ','
                    << m.run_index[i] << ',' << format_double(m.run_mse_db[i]) << '\n';
            }
        }
    }
}

void write_curves_csv(std::ostream& out, const SweepTable& table) {
    out << "method,level_db,t,mse_db\n";
    for (const auto& sr : table.results) {
        for (const auto& m : sr.methods) {
            for (std::size_t t = 0; t < m.curve_db.size(); ++t) {
                out << method_name(m.method) << ',' << format_double(sr.scenario.level_db) << ','
                    << t + 1 << ',' << format_double(m.curve_db[t]) << '\n';
            }
        }
    }
}

}  // namespace otakf::bench
