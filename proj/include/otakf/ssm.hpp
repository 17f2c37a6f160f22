#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "otakf/errors.hpp"

namespace otakf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Model { lorenz, nclt, linear1d };

std::string_view model_name(Model model);
Model parse_model(std::string_view name);

/// State-space model descriptor. Construct through the named factories so that
/// dimensions always agree with the model variant.
struct SsmSpec {
    Model model = Model::linear1d;
    int state_dim = 1;
    int meas_dim = 1;
    double dt = 1.0;
    int taylor_order = 10;      // lorenz only
    double linear_coeff = 1.0;  // linear1d only: f(x) = a x

    static SsmSpec lorenz(double dt = 0.02, int taylor_order = 10);
    static SsmSpec nclt(double dt = 1.0);
    static SsmSpec linear1d(double coeff = 1.0);
    static SsmSpec of(Model model);

    /// Throws InvalidInput if the dimensions or constants are inconsistent.
    void validate() const;
};

struct CovariancePair {
    MatrixXd Q;
    MatrixXd R;

    /// Throws InvalidInput unless both are symmetric PSD with dims (n, m).
    void validate(int n, int m) const;
};

/// Lorenz drift matrix A(x) evaluated at the current state.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> lorenz_drift_matrix(const Eigen::Matrix<Scalar, 3, 1>& x) {
    Eigen::Matrix<Scalar, 3, 3> a;
    a << Scalar(-10), Scalar(10), Scalar(0),
         Scalar(28), Scalar(-1), -x(0),
         Scalar(0), x(0), Scalar(-8.0 / 3.0);
    return a;
}

/// Truncated Taylor series of exp(M): sum_{k=0}^{order} M^k / k!.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> taylor_expm(const Eigen::Matrix<Scalar, 3, 3>& m, int order) {
    Eigen::Matrix<Scalar, 3, 3> result = Eigen::Matrix<Scalar, 3, 3>::Identity();
    Eigen::Matrix<Scalar, 3, 3> term = Eigen::Matrix<Scalar, 3, 3>::Identity();
    for (int k = 1; k <= order; ++k) {
        term = (term * m) / Scalar(k);
        result += term;
    }
    return result;
}

/// One noise-free Lorenz step, x_t = exp(A(x) dt) x with a frozen-at-x drift matrix.
/// Scalar may be complex for complex-step differentiation.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> lorenz_transition(const Eigen::Matrix<Scalar, 3, 1>& x, double dt,
                                              int taylor_order) {
    if (taylor_order < 1) throw InvalidInput("lorenz_transition: taylor_order must be >= 1");
    for (int i = 0; i < 3; ++i) {
        using std::abs;
        if (!std::isfinite(abs(x(i)))) {
            throw InvalidInput("lorenz_transition: non-finite state component " + std::to_string(i));
        }
    }
    const Eigen::Matrix<Scalar, 3, 3> a = lorenz_drift_matrix<Scalar>(x) * Scalar(dt);
    return taylor_expm<Scalar>(a, taylor_order) * x;
}

/// Planar kinematic step driven by the speed command v_c; heading is carried unwrapped.
template <typename Scalar>
Eigen::Matrix<Scalar, 5, 1> nclt_transition(const Eigen::Matrix<Scalar, 5, 1>& x, double v_c,
                                            double dt) {
    using std::cos;
    using std::sin;
    const Scalar heading = x(4);
    Eigen::Matrix<Scalar, 5, 1> next;
    next << x(0) + Scalar(dt * v_c) * cos(heading),
            x(1) + Scalar(dt * v_c) * sin(heading),
            Scalar(v_c) * cos(heading),
            Scalar(v_c) * sin(heading),
            heading;
    return next;
}

/// Noise-free transition f(x) for any model. `control` is the nclt speed command.
VectorXd transition(const SsmSpec& spec, const VectorXd& x, double control = 0.0);

/// Noise-free measurement h(x).
VectorXd measure(const SsmSpec& spec, const VectorXd& x);

/// Measurement Jacobian; constant for all supported models.
MatrixXd measurement_jacobian(const SsmSpec& spec);

/// Diagonal covariances from the process-to-measurement ratio nu = q^2/r^2 and 1/r^2, both in dB.
CovariancePair covariance_from_ratio(double nu_db, double inv_r2_db, const SsmSpec& spec);

/// Noise-free burn-in from (1,1,1) that places the start point on the attractor.
VectorXd lorenz_initial_state(const SsmSpec& spec, int burn_in = 100);

/// Default starting state per model (lorenz: burned-in, others: zero).
VectorXd default_initial_state(const SsmSpec& spec);

/// Piecewise-constant speed profile used for synthetic nclt runs.
std::vector<double> piecewise_speed_profile(int T, int segment_length, double v_min, double v_max,
                                            std::uint64_t seed);

struct Trajectory {
    SsmSpec spec;
    CovariancePair true_cov;
    std::uint64_t seed = 0;
    std::optional<VectorXd> initial_state;  // x_0, the state before the first measurement
    std::vector<VectorXd> states;           // x_1..x_T
    std::vector<VectorXd> measurements;     // y_1..y_T
    std::vector<double> controls;           // v_c per step; empty unless nclt

    int length() const { return static_cast<int>(measurements.size()); }
    double control(int t) const { return controls.empty() ? 0.0 : controls[t]; }
    bool has_truth() const { return !states.empty(); }
};

/// Rolls x_t = f(x_{t-1}) + w_t, y_t = h(x_t) + v_t forward from x0 with a seeded generator.
Trajectory simulate(const SsmSpec& spec, const CovariancePair& cov, const VectorXd& x0, int T,
                    std::uint64_t seed, std::vector<double> controls = {});

/// FNV-1a over the raw bytes of states and measurements; used to prove paired runs.
std::uint64_t trajectory_hash(const Trajectory& traj);

/// CSV with header `t,x1..xn,y1..ym[,vc]`. Row t=0 carries x_0 with empty measurement
/// cells. Lines starting with '#' are metadata comments.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj,
                          const std::vector<std::string>& comments = {});
Trajectory read_trajectory_csv(std::istream& in, const SsmSpec& spec,
                               std::vector<std::string>* comments = nullptr);

/// Shortest representation that parses back to the identical double.
std::string format_double(double value);

}  // namespace otakf
