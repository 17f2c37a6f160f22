#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <vector>

#include "otakf/ekf.hpp"
#include "otakf/ot.hpp"

namespace otakf {

/// Bounded FIFO of the most recent innovations e_k = y_k - h(x_{k|k-1}).
class ResidualWindow {
public:
    explicit ResidualWindow(int capacity);

    void push(VectorXd residual);
    int size() const { return static_cast<int>(buffer_.size()); }
    int capacity() const { return capacity_; }
    bool empty() const { return buffer_.empty(); }
    bool full() const { return size() == capacity_; }
    /// Oldest first.
    const VectorXd& operator[](int i) const { return buffer_[static_cast<std::size_t>(i)]; }

private:
    int capacity_;
    std::deque<VectorXd> buffer_;
};

/// Which loss drives adaptation. `single_point` drops the residual window so the target
/// degenerates to {y_t}; the source-to-target cost then reduces to the mean squared
/// predictive-measurement error.
enum class TargetMode { windowed, single_point };

/// Which noise parameters receive optimizer updates. Gradients are always computed for all.
enum class AdaptMask { measurement, process, both };

struct AdaptConfig {
    int window = 20;
    int particles = 64;
    int inner_iters = 3;
    double lr = 0.1;
    double weight_decay = 1e-3;
    double epsilon_scale = 0.05;
    double epsilon_floor = 1e-6;
    int ipot_iters = 50;
    int ipot_inner = 1;
    double ipot_tol = 1e-6;
    bool warmup = true;
    TargetMode target = TargetMode::windowed;
    AdaptMask mask = AdaptMask::measurement;
    std::uint64_t seed = 0;

    void validate() const;
    ot::SolverOptions solver_options() const;
};

/// Adam moments with bias correction and decoupled weight decay.
struct OptimizerState {
    VectorXd first_moment;
    VectorXd second_moment;
    long step = 0;

    static OptimizerState zeros(int dim);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// eta_t = min(eta, t eta / W) for t >= 1.
double warmup_lr(int t, int window, double lr);

/// z_i = mean + chol_S eps_i with uniform weights. `draws` is m x N standard normal.
ot::DiscreteMeasure<double> build_source(const PredictiveMeasurement& pm, const MatrixXd& draws);

/// Pseudo-measurements y + e_j for every stored residual, uniform weights.
ot::DiscreteMeasure<double> build_target(const VectorXd& y, const ResidualWindow& window);

/// m x N matrix of standard normal draws.
MatrixXd standard_normal_draws(std::mt19937_64& rng, int dim, int count);

/// Forward-mode derivative of the Cholesky factor: dL = L Phi(L^-1 dS L^-T), where Phi keeps
/// the strict lower triangle and halves the diagonal.
MatrixXd cholesky_derivative(const MatrixXd& chol, const MatrixXd& dS);

struct ThetaGradient {
    VectorXd grad;  // stacked [d/dlog_q; d/dlog_r]
    double loss = 0.0;
    ot::TransportPlan<double> plan;
};

/// Gradient of the OT loss in theta through S(theta) = H (F P F^T + Q(theta)) H^T + R(theta)
/// and its Cholesky factor, with the previous posterior and the draws held fixed and the
/// transport plan frozen at the solver output.
ThetaGradient theta_gradient(const NoiseParams& theta, const StateEstimate& previous,
                             const VectorXd& y, const ResidualWindow& window,
                             const AdaptConfig& cfg, const MatrixXd& draws, const SsmSpec& spec,
                             double control = 0.0);

/// Loss of the full sample -> solve -> sum(pi C) pipeline for the given theta and draws.
/// This is the quantity theta_gradient differentiates; tests difference it directly.
double pipeline_loss(const NoiseParams& theta, const StateEstimate& previous, const VectorXd& y,
                     const ResidualWindow& window, const AdaptConfig& cfg, const MatrixXd& draws,
                     const SsmSpec& spec, double control = 0.0);

struct AdaptDiagnostics {
    int t = 0;
    double lr = 0.0;
    std::vector<double> losses;  // one per inner iteration
    bool skipped = false;
    bool clamped = false;
};

struct AdaptStepResult {
    NoiseParams theta;
    OptimizerState optimizer;
    AdaptDiagnostics diagnostics;
};

/// K inner iterations of predict -> source/target -> IPOT -> gradient -> Adam step.
/// Performs no update when the window is empty.
AdaptStepResult adapt_step(const NoiseParams& theta, const OptimizerState& optimizer,
                           const StateEstimate& previous, const VectorXd& y,
                           const ResidualWindow& window, const AdaptConfig& cfg, int t,
                           std::mt19937_64& rng, const SsmSpec& spec, double control = 0.0);

struct OtakResult {
    std::vector<StateEstimate> estimates;   // posteriors, t = 1..T
    std::vector<NoiseParams> theta_trace;   // theta used for the update at each step
    std::vector<AdaptDiagnostics> diagnostics;
};

/// Online adaptive filter: a plain EKF step at t = 1 seeds the window, then every later step
/// inserts its innovation, adapts theta, and updates with the adapted parameters.
OtakResult run_otak_filter(const Trajectory& traj, const NoiseParams& theta0,
                           const AdaptConfig& cfg, const StateEstimate& initial);

struct InnovationStats {
    VectorXd mean;
    MatrixXd cov;  // unbiased, 1/(k-1)
};

InnovationStats innovation_stats(const ResidualWindow& window);

}  // namespace otakf
