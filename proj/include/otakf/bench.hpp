#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "otakf/adapt.hpp"

namespace otakf::bench {

enum class Method { fixed_ekf_nominal, fixed_ekf_oracle, otak, otak_no_warmup, otak_pointwise };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();

/// How a drift level in dB maps to the generating covariances.
///   measurement: only R drifts, r^2 = 10^(-level/10); Q stays at the nominal value.
///   ratio: nu is held at `nu_db` and both covariances follow covariance_from_ratio.
enum class DriftMode { measurement, ratio };

std::string_view drift_mode_name(DriftMode mode);
DriftMode parse_drift_mode(std::string_view name);

struct DriftScenario {
    SsmSpec spec;
    CovariancePair nominal;
    CovariancePair true_cov;
    int T = 100;
    int runs = 20;
    std::uint64_t seed = 1;
    std::optional<VectorXd> x0;  // defaults to default_initial_state(spec)
    AdaptConfig adapt;
    double level_db = 0.0;       // reporting label only
    int nclt_segment = 25;       // nclt speed-profile segment length
    double nclt_v_min = 0.5;
    double nclt_v_max = 2.0;

    void validate() const;
};

/// Covariances the fixed filter assumes by default: q^2 = r^2 = 1 for lorenz and linear1d,
/// Q = diag(1, 1, 1e-3, 1e-3, 1e-3) and R = 100 I for nclt.
CovariancePair nominal_covariances(const SsmSpec& spec);

/// Matched scenario (true = nominal) with library defaults for everything else.
DriftScenario default_scenario(const SsmSpec& spec);

/// Trajectory of one run: seed + run, nclt speed profile derived from the same seed.
Trajectory scenario_trajectory(const DriftScenario& sc, int run);

/// Generating covariances at a drift level relative to the nominal pair.
CovariancePair drifted_covariances(const CovariancePair& nominal, double level_db, DriftMode mode,
                                   double nu_db, const SsmSpec& spec);

struct MethodResult {
    Method method = Method::otak;
    std::vector<double> run_mse_db;   // one per successful run
    std::vector<int> run_index;       // which run each entry came from
    double mean_db = 0.0;
    double std_db = 0.0;              // sample std of per-run dB values
    std::vector<double> curve_db;     // per-step, dB of the run-averaged linear MSE
    std::vector<VectorXd> theta_mean; // run-averaged theta per step (adaptive methods)
    int failures = 0;
    double seconds = 0.0;

    bool failed_policy(int runs) const { return failures * 10 > runs; }
};

struct ScenarioResult {
    DriftScenario scenario;
    std::vector<MethodResult> methods;
    std::vector<std::uint64_t> trajectory_hashes;

    const MethodResult& get(Method m) const;
    bool ok() const;
};

/// 10 log10 of the mean squared state error over all steps and components, floored at -300 dB.
double mse_db(const std::vector<StateEstimate>& estimates, const std::vector<VectorXd>& truth);

/// Mean squared error per step (averaged over state components).
std::vector<double> per_step_mse(const std::vector<StateEstimate>& estimates,
                                 const std::vector<VectorXd>& truth);

/// Sample mean and sample standard deviation (n - 1).
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Simulates `runs` paired trajectories and runs each method on every one of them.
/// Runs use seed + run_index; adaptive variants share the same particle draws per run.
ScenarioResult run_scenario(const DriftScenario& sc, const std::vector<Method>& methods,
                            int threads = 1);

struct SweepTable {
    std::vector<double> levels_db;
    std::vector<ScenarioResult> results;  // one per level
};

SweepTable drift_sweep(const DriftScenario& base, const std::vector<double>& levels_db,
                       const std::vector<Method>& methods, DriftMode mode, double nu_db,
                       int threads = 1);

struct ConvergenceGap {
    double early = 0.0;  // mean dB gap to the oracle over steps [1, split]
    double late = 0.0;   // mean dB gap over (split, T]
};

ConvergenceGap convergence_curve(const MethodResult& result, const MethodResult& oracle,
                                 int split);

/// Temporal standard deviation of the per-step MSE-dB curve over steps [1, last].
double early_curve_std(const MethodResult& result, int last);

}  // namespace otakf::bench
