#include "otakf/adapt.hpp"

#include <algorithm>
#include <string>

namespace otakf {

ResidualWindow::ResidualWindow(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw InvalidInput("ResidualWindow: capacity must be >= 1");
}

void ResidualWindow::push(VectorXd residual) {
    if (!buffer_.empty() && residual.size() != buffer_.front().size()) {
        throw InvalidInput("ResidualWindow: residual dimension changed");
    }
    buffer_.push_back(std::move(residual));
    if (size() > capacity_) buffer_.pop_front();
}

void AdaptConfig::validate() const {
    if (window < 1) throw InvalidInput("AdaptConfig: window must be >= 1");
    if (particles < 2) throw InvalidInput("AdaptConfig: particles must be >= 2");
    if (inner_iters < 1) throw InvalidInput("AdaptConfig: inner iterations must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw InvalidInput("AdaptConfig: learning rate must be finite and >= 0");
    }
    if (!(weight_decay >= 0.0)) throw InvalidInput("AdaptConfig: weight decay must be >= 0");
    if (!(epsilon_scale > 0.0)) throw InvalidInput("AdaptConfig: epsilon scale must be > 0");
    if (ipot_iters < 1 || ipot_inner < 1) {
        throw InvalidInput("AdaptConfig: ipot iterations must be >= 1");
    }
}

ot::SolverOptions AdaptConfig::solver_options() const {
    ot::SolverOptions opts;
    opts.max_iter = ipot_iters;
    opts.inner_iters = ipot_inner;
    opts.tol = ipot_tol;
    return opts;
}

OptimizerState OptimizerState::zeros(int dim) {
    return {VectorXd::Zero(dim), VectorXd::Zero(dim), 0};
}

double warmup_lr(int t, int window, double lr) {
    if (t < 1) throw InvalidInput("warmup_lr: t must be >= 1");
    if (window < 1) throw InvalidInput("warmup_lr: window must be >= 1");
    if (t >= window) return lr;
    return std::min(lr, static_cast<double>(t) * lr / static_cast<double>(window));
}

ot::DiscreteMeasure<double> build_source(const PredictiveMeasurement& pm, const MatrixXd& draws) {
    if (draws.rows() != pm.mean.size()) throw InvalidInput("build_source: draw dimension mismatch");
    MatrixXd points = pm.chol_S * draws;
    points.colwise() += pm.mean;
    return ot::DiscreteMeasure<double>::uniform(std::move(points));
}

ot::DiscreteMeasure<double> build_target(const VectorXd& y, const ResidualWindow& window) {
    if (window.empty()) throw InsufficientData("build_target: residual window is empty");
    MatrixXd points(y.size(), window.size());
    for (int j = 0; j < window.size(); ++j) points.col(j) = y + window[j];
    return ot::DiscreteMeasure<double>::uniform(std::move(points));
}

MatrixXd standard_normal_draws(std::mt19937_64& rng, int dim, int count) {
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXd draws(dim, count);
    for (int i = 0; i < count; ++i) {
        for (int d = 0; d < dim; ++d) draws(d, i) = normal(rng);
    }
    return draws;
}

MatrixXd cholesky_derivative(const MatrixXd& chol, const MatrixXd& dS) {
    const auto lower = chol.triangularView<Eigen::Lower>();
    // X = L^-1 dS L^-T
    const MatrixXd left = lower.solve(dS);
    const MatrixXd x = lower.solve(left.transpose()).transpose();
    MatrixXd phi = x.triangularView<Eigen::StrictlyLower>();
    phi.diagonal() = 0.5 * x.diagonal();
    return chol * phi;
}

namespace {

struct SourceTarget {
    PredictiveMeasurement pm;
    ot::DiscreteMeasure<double> source;
    ot::DiscreteMeasure<double> target;
};

SourceTarget build_problem(const NoiseParams& theta, const StateEstimate& previous,
                           const VectorXd& y, const ResidualWindow& window,
                           const AdaptConfig& cfg, const MatrixXd& draws, const SsmSpec& spec,
                           double control) {
    const StateEstimate prior = predict(previous, theta, spec, control);
    PredictiveMeasurement pm = predictive_measurement(prior, theta, spec);
    auto source = build_source(pm, draws);
    auto target = cfg.target == TargetMode::windowed
                      ? build_target(y, window)
                      : ot::DiscreteMeasure<double>::uniform(MatrixXd(y));
    return {std::move(pm), std::move(source), std::move(target)};
}

ot::TransportPlan<double> solve_plan(const SourceTarget& st, const AdaptConfig& cfg) {
    const MatrixXd cost = ot::cost_matrix<double>(st.source.points, st.target.points);
    ot::SolverOptions opts = cfg.solver_options();
    opts.epsilon = ot::default_epsilon<double>(cost, cfg.epsilon_scale, cfg.epsilon_floor);
    return ot::ipot<double>(st.source.weights, st.target.weights, cost, opts);
}

}  // namespace

ThetaGradient theta_gradient(const NoiseParams& theta, const StateEstimate& previous,
                             const VectorXd& y, const ResidualWindow& window,
                             const AdaptConfig& cfg, const MatrixXd& draws, const SsmSpec& spec,
                             double control) {
    const SourceTarget st = build_problem(theta, previous, y, window, cfg, draws, spec, control);
    ThetaGradient out;
    out.plan = solve_plan(st, cfg);
    const auto lg =
        ot::ot_loss_and_point_grad<double>(out.plan.plan, st.source.points, st.target.points);
    out.loss = lg.loss;

    // dL/dchol_S = sum_i g_i eps_i^T, since z_i = mean + chol_S eps_i and the mean is fixed.
    const MatrixXd chol_grad = lg.grad * draws.transpose();
    const int n = spec.state_dim;
    const int m = spec.meas_dim;
    const MatrixXd& H = st.pm.H;
    out.grad.resize(n + m);
    for (int k = 0; k < n; ++k) {
        const double q2 = std::exp(2.0 * theta.log_q(k));
        const MatrixXd dS = 2.0 * q2 * H.col(k) * H.col(k).transpose();
        out.grad(k) = (cholesky_derivative(st.pm.chol_S, dS).cwiseProduct(chol_grad)).sum();
    }
    for (int k = 0; k < m; ++k) {
        MatrixXd dS = MatrixXd::Zero(m, m);
        dS(k, k) = 2.0 * std::exp(2.0 * theta.log_r(k));
        out.grad(n + k) = (cholesky_derivative(st.pm.chol_S, dS).cwiseProduct(chol_grad)).sum();
    }
    for (int k = 0; k < n + m; ++k) {
        if (!std::isfinite(out.grad(k))) {
            throw NumericError("theta_gradient: non-finite gradient component " +
                               std::to_string(k));
        }
    }
    return out;
}

double pipeline_loss(const NoiseParams& theta, const StateEstimate& previous, const VectorXd& y,
                     const ResidualWindow& window, const AdaptConfig& cfg, const MatrixXd& draws,
                     const SsmSpec& spec, double control) {
    const SourceTarget st = build_problem(theta, previous, y, window, cfg, draws, spec, control);
    return solve_plan(st, cfg).objective;
}

AdaptStepResult adapt_step(const NoiseParams& theta, const OptimizerState& optimizer,
                           const StateEstimate& previous, const VectorXd& y,
                           const ResidualWindow& window, const AdaptConfig& cfg, int t,
                           std::mt19937_64& rng, const SsmSpec& spec, double control) {
    cfg.validate();
    AdaptStepResult out{theta, optimizer, {}};
    out.diagnostics.t = t;
    out.diagnostics.lr = cfg.warmup ? warmup_lr(std::max(t, 1), cfg.window, cfg.lr) : cfg.lr;
    if (window.empty()) {
        out.diagnostics.skipped = true;
        return out;
    }
    const int n = spec.state_dim;
    const int dim = n + spec.meas_dim;
    if (out.optimizer.first_moment.size() != dim) out.optimizer = OptimizerState::zeros(dim);

    const bool adapt_q = cfg.mask != AdaptMask::measurement;
    const bool adapt_r = cfg.mask != AdaptMask::process;
    const double lr = out.diagnostics.lr;

    for (int k = 0; k < cfg.inner_iters; ++k) {
        const MatrixXd draws = standard_normal_draws(rng, spec.meas_dim, cfg.particles);
        const ThetaGradient tg =
            theta_gradient(out.theta, previous, y, window, cfg, draws, spec, control);
        out.diagnostics.losses.push_back(tg.loss);

        auto& opt = out.optimizer;
        opt.step += 1;
        const double bias1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(opt.step));
        const double bias2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(opt.step));
        VectorXd flat = out.theta.flat();
        for (int i = 0; i < dim; ++i) {
            if ((i < n && !adapt_q) || (i >= n && !adapt_r)) continue;
            const double g = tg.grad(i);
            opt.first_moment(i) = kAdamBeta1 * opt.first_moment(i) + (1.0 - kAdamBeta1) * g;
            opt.second_moment(i) = kAdamBeta2 * opt.second_moment(i) + (1.0 - kAdamBeta2) * g * g;
            const double m_hat = opt.first_moment(i) / bias1;
            const double v_hat = opt.second_moment(i) / bias2;
            double next = flat(i) - lr * (m_hat / (std::sqrt(v_hat) + kAdamEps)) -
                          lr * cfg.weight_decay * flat(i);
            if (next > kLogStdLimit || next < -kLogStdLimit) {
                next = std::clamp(next, -kLogStdLimit, kLogStdLimit);
                out.diagnostics.clamped = true;
            }
            flat(i) = next;
        }
        out.theta = NoiseParams::from_flat(flat, n);
    }
    return out;
}

OtakResult run_otak_filter(const Trajectory& traj, const NoiseParams& theta0,
                           const AdaptConfig& cfg, const StateEstimate& initial) {
    cfg.validate();
    if (traj.length() < 2) throw InvalidInput("run_otak_filter: trajectory needs >= 2 steps");
    const SsmSpec& spec = traj.spec;
    std::mt19937_64 rng(cfg.seed);
    ResidualWindow window(cfg.window);
    NoiseParams theta = theta0;
    OptimizerState optimizer = OptimizerState::zeros(theta.size());

    OtakResult out;
    out.estimates.reserve(traj.length());
    out.theta_trace.reserve(traj.length());
    out.diagnostics.reserve(traj.length());

    StateEstimate post = initial;
    for (int step = 0; step < traj.length(); ++step) {
        const int t = step + 1;
        const double control = traj.control(step);
        const VectorXd& y = traj.measurements[step];
        if (t >= 2) {
            // The prior mean does not depend on theta, so the innovation is fixed for this step.
            const VectorXd residual = y - measure(spec, transition(spec, post.mean, control));
            window.push(residual);
            AdaptStepResult res =
                adapt_step(theta, optimizer, post, y, window, cfg, t, rng, spec, control);
            theta = std::move(res.theta);
            optimizer = std::move(res.optimizer);
            out.diagnostics.push_back(std::move(res.diagnostics));
        } else {
            AdaptDiagnostics d;
            d.t = t;
            d.skipped = true;
            out.diagnostics.push_back(d);
        }
        const StateEstimate prior = predict(post, theta, spec, control);
        const PredictiveMeasurement pm = predictive_measurement(prior, theta, spec);
        if (t == 1) window.push(y - pm.mean);
        post = update(prior, pm, y, spec);
        out.estimates.push_back(post);
        out.theta_trace.push_back(theta);
    }
    return out;
}

InnovationStats innovation_stats(const ResidualWindow& window) {
    const int k = window.size();
    if (k < 2) throw InsufficientData("innovation_stats: need at least two residuals");
    const auto dim = window[0].size();
    InnovationStats out;
    out.mean = VectorXd::Zero(dim);
    for (int j = 0; j < k; ++j) out.mean += window[j];
    out.mean /= static_cast<double>(k);
    out.cov = MatrixXd::Zero(dim, dim);
    for (int j = 0; j < k; ++j) {
        const VectorXd d = window[j] - out.mean;
        out.cov += d * d.transpose();
    }
    out.cov /= static_cast<double>(k - 1);
    return out;
}

}  // namespace otakf
