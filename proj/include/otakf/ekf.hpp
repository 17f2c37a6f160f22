#pragma once

#include <vector>

#include "otakf/ssm.hpp"

namespace otakf {

/// Mean and covariance of the latent state, either prior or posterior.
struct StateEstimate {
    VectorXd mean;
    MatrixXd cov;
};

/// Adapted noise parameters: log standard deviations of diagonal Q-hat and R-hat.
struct NoiseParams {
    VectorXd log_q;
    VectorXd log_r;

    MatrixXd Q() const { return (2.0 * log_q.array()).exp().matrix().asDiagonal(); }
    MatrixXd R() const { return (2.0 * log_r.array()).exp().matrix().asDiagonal(); }

    int size() const { return static_cast<int>(log_q.size() + log_r.size()); }

    /// Stacked [log_q; log_r].
    VectorXd flat() const;
    static NoiseParams from_flat(const VectorXd& theta, int n);

    /// Diagonals of the given covariances; zero variances map to the log-space floor.
    static NoiseParams from_covariances(const CovariancePair& cov);
};

/// Lower bound for log standard deviations; also the clamp used during adaptation.
inline constexpr double kLogStdLimit = 12.0;

/// One-step predictive measurement distribution N(h(x_prior), S).
struct PredictiveMeasurement {
    VectorXd mean;
    MatrixXd S;
    MatrixXd chol_S;  // lower triangular, S + jitter I = chol_S chol_S^T
    MatrixXd H;
    MatrixXd R;       // R-hat that entered S
    double jitter = 0.0;
};

/// Symmetrize as (M + M^T) / 2.
inline MatrixXd symmetrized(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// Transition Jacobian. Central differences with step 1e-6 max(1, |x_i|) for lorenz and
/// nclt, exact for linear1d.
MatrixXd jacobian_f(const SsmSpec& spec, const VectorXd& x, double control = 0.0);

/// Cholesky factor with the jitter ladder 0, 1e-12, 1e-9, 1e-6 (scaled by the mean diagonal).
/// Returns the factor and writes the jitter used.
MatrixXd cholesky_with_jitter(const MatrixXd& s, double* jitter_used = nullptr);

StateEstimate predict(const StateEstimate& prev, const NoiseParams& theta, const SsmSpec& spec,
                      double control = 0.0);

PredictiveMeasurement predictive_measurement(const StateEstimate& prior, const NoiseParams& theta,
                                             const SsmSpec& spec);

/// Joseph-form measurement update.
StateEstimate update(const StateEstimate& prior, const PredictiveMeasurement& pm,
                     const VectorXd& y, const SsmSpec& spec);

/// Initial estimate: x_0 from the trajectory if recorded, else the first measurement lifted
/// through the pseudo-inverse of H. Covariance defaults to the identity.
StateEstimate initial_estimate(const Trajectory& traj);

/// Non-adaptive EKF over the whole trajectory. Returns posteriors for t = 1..T.
std::vector<StateEstimate> run_filter(const Trajectory& traj, const NoiseParams& theta,
                                      const StateEstimate& initial);

}  // namespace otakf
