#include "otakf/ekf.hpp"

#include <algorithm>

namespace otakf {

VectorXd NoiseParams::flat() const {
    VectorXd theta(size());
    theta << log_q, log_r;
    return theta;
}

NoiseParams NoiseParams::from_flat(const VectorXd& theta, int n) {
    if (n < 0 || n > theta.size()) throw InvalidInput("NoiseParams::from_flat: bad split");
    return {theta.head(n), theta.tail(theta.size() - n)};
}

NoiseParams NoiseParams::from_covariances(const CovariancePair& cov) {
    auto log_std = [](const MatrixXd& m) {
        VectorXd out(m.rows());
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double var = m(i, i);
            out(i) = var > 0.0 ? std::max(0.5 * std::log(var), -kLogStdLimit) : -kLogStdLimit;
        }
        return out;
    };
    return {log_std(cov.Q), log_std(cov.R)};
}

MatrixXd jacobian_f(const SsmSpec& spec, const VectorXd& x, double control) {
    if (x.size() != spec.state_dim) throw InvalidInput("jacobian_f: dimension mismatch");
    if (spec.model == Model::linear1d) {
        return MatrixXd::Constant(1, 1, spec.linear_coeff);
    }
    const int n = spec.state_dim;
    MatrixXd jac(n, n);
    for (int i = 0; i < n; ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(x(i)));
        VectorXd plus = x;
        VectorXd minus = x;
        plus(i) += h;
        minus(i) -= h;
        jac.col(i) = (transition(spec, plus, control) - transition(spec, minus, control)) /
                     (plus(i) - minus(i));
    }
    return jac;
}

MatrixXd cholesky_with_jitter(const MatrixXd& s, double* jitter_used) {
    if (!s.allFinite()) throw NumericError("cholesky: non-finite matrix");
    const double scale = std::max(s.diagonal().cwiseAbs().mean(), 1e-300);
    const double ladder[] = {0.0, 1e-12, 1e-9, 1e-6};
    const Eigen::Index m = s.rows();
    for (double rel : ladder) {
        const double jitter = rel * scale;
        Eigen::LLT<MatrixXd> llt(s + jitter * MatrixXd::Identity(m, m));
        if (llt.info() == Eigen::Success) {
            if (jitter_used) *jitter_used = jitter;
            return llt.matrixL();
        }
    }
    throw NumericError("cholesky: matrix not positive definite after jitter 1e-6");
}

StateEstimate predict(const StateEstimate& prev, const NoiseParams& theta, const SsmSpec& spec,
                      double control) {
    const MatrixXd F = jacobian_f(spec, prev.mean, control);
    return {transition(spec, prev.mean, control),
            symmetrized(F * prev.cov * F.transpose() + theta.Q())};
}

PredictiveMeasurement predictive_measurement(const StateEstimate& prior, const NoiseParams& theta,
                                             const SsmSpec& spec) {
    PredictiveMeasurement pm;
    pm.H = measurement_jacobian(spec);
    pm.R = theta.R();
    pm.mean = measure(spec, prior.mean);
    pm.S = symmetrized(pm.H * prior.cov * pm.H.transpose() + pm.R);
    pm.chol_S = cholesky_with_jitter(pm.S, &pm.jitter);
    return pm;
}

StateEstimate update(const StateEstimate& prior, const PredictiveMeasurement& pm,
                     const VectorXd& y, const SsmSpec& spec) {
    if (y.size() != spec.meas_dim || prior.mean.size() != spec.state_dim) {
        throw InvalidInput("update: dimension mismatch");
    }
    // K = P H^T S^-1, solved through the Cholesky factor.
    const MatrixXd PHt = prior.cov * pm.H.transpose();
    const auto chol = pm.chol_S.triangularView<Eigen::Lower>();
    const MatrixXd gain_t = chol.transpose().solve(chol.solve(PHt.transpose()));
    const MatrixXd K = gain_t.transpose();
    if (!K.allFinite()) throw NumericError("update: singular innovation covariance");

    const int n = spec.state_dim;
    const MatrixXd IKH = MatrixXd::Identity(n, n) - K * pm.H;
    StateEstimate post;
    post.mean = prior.mean + K * (y - pm.mean);
    post.cov = symmetrized(IKH * prior.cov * IKH.transpose() + K * pm.R * K.transpose());
    return post;
}

StateEstimate initial_estimate(const Trajectory& traj) {
    const auto& spec = traj.spec;
    StateEstimate est;
    est.cov = MatrixXd::Identity(spec.state_dim, spec.state_dim);
    if (traj.initial_state) {
        est.mean = *traj.initial_state;
    } else {
        if (traj.measurements.empty()) throw InvalidInput("initial_estimate: empty trajectory");
        const MatrixXd H = measurement_jacobian(spec);
        est.mean = H.completeOrthogonalDecomposition().pseudoInverse() * traj.measurements.front();
    }
    return est;
}

std::vector<StateEstimate> run_filter(const Trajectory& traj, const NoiseParams& theta,
                                      const StateEstimate& initial) {
    if (traj.length() < 1) throw InvalidInput("run_filter: empty trajectory");
    std::vector<StateEstimate> out;
    out.reserve(traj.length());
    StateEstimate post = initial;
    for (int t = 0; t < traj.length(); ++t) {
        const StateEstimate prior = predict(post, theta, traj.spec, traj.control(t));
        const PredictiveMeasurement pm = predictive_measurement(prior, theta, traj.spec);
        post = update(prior, pm, traj.measurements[t], traj.spec);
        out.push_back(post);
    }
    return out;
}

}  // namespace otakf
