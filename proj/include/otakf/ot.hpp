#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "otakf/errors.hpp"

namespace otakf::ot {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Weighted point cloud. Points are stored column-wise (dim x count).
template <typename Scalar>
struct DiscreteMeasure {
    Matrix<Scalar> points;
    Vector<Scalar> weights;

    Eigen::Index size() const { return points.cols(); }
    Eigen::Index dim() const { return points.rows(); }

    static DiscreteMeasure uniform(Matrix<Scalar> pts) {
        const auto count = pts.cols();
        return {std::move(pts), Vector<Scalar>::Constant(count, Scalar(1) / Scalar(count))};
    }

    void validate() const {
        if (weights.size() != points.cols()) {
            throw InvalidInput("DiscreteMeasure: weight count does not match point count");
        }
        if (weights.size() == 0) throw InvalidInput("DiscreteMeasure: empty measure");
        if ((weights.array() < Scalar(0)).any()) {
            throw InvalidInput("DiscreteMeasure: negative weight");
        }
        if (std::abs(weights.sum() - Scalar(1)) > Scalar(1e-12)) {
            throw InvalidInput("DiscreteMeasure: weights do not sum to one");
        }
    }
};

template <typename Scalar>
struct TransportPlan {
    Matrix<Scalar> plan;
    Matrix<Scalar> cost;
    Scalar objective = 0;
    int iterations_used = 0;
    bool log_domain = false;
};

struct SolverOptions {
    double epsilon = 0.0;    // <= 0 selects default_epsilon(C)
    int max_iter = 50;       // sinkhorn sweeps or ipot outer iterations
    int inner_iters = 1;     // ipot inner scaling sweeps (L)
    double tol = 1e-6;       // early-exit threshold
    bool log_domain_fallback = true;
};

/// C_ij = 1/2 ||src_i - tgt_j||^2 for column-stored points.
template <typename Scalar>
Matrix<Scalar> cost_matrix(const Matrix<Scalar>& src, const Matrix<Scalar>& tgt) {
    if (src.rows() != tgt.rows()) throw InvalidInput("cost_matrix: point dimensions differ");
    Matrix<Scalar> c(src.cols(), tgt.cols());
    for (Eigen::Index j = 0; j < tgt.cols(); ++j) {
        for (Eigen::Index i = 0; i < src.cols(); ++i) {
            c(i, j) = Scalar(0.5) * (src.col(i) - tgt.col(j)).squaredNorm();
        }
    }
    return c;
}

/// Regularization policy: scale * median(C), floored.
template <typename Scalar>
Scalar default_epsilon(const Matrix<Scalar>& c, double scale = 0.05, double floor = 1e-6) {
    std::vector<Scalar> values(c.data(), c.data() + c.size());
    if (values.empty()) return Scalar(floor);
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    Scalar median = *mid;
    if (values.size() % 2 == 0) {
        median = (median + *std::max_element(values.begin(), mid)) / Scalar(2);
    }
    return std::max(Scalar(scale) * median, Scalar(floor));
}

/// Largest absolute deviation of the plan's row and column sums from the marginals.
template <typename Scalar>
Scalar marginal_violation(const Matrix<Scalar>& plan, const Vector<Scalar>& a,
                          const Vector<Scalar>& b) {
    const Scalar rows = (plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
    const Scalar cols = (plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
    return std::max(rows, cols);
}

namespace detail {

template <typename Scalar>
void check_problem(const Vector<Scalar>& a, const Vector<Scalar>& b, const Matrix<Scalar>& c) {
    if (c.rows() != a.size() || c.cols() != b.size()) {
        throw InvalidInput("ot: cost matrix shape does not match marginals");
    }
    if (a.size() == 0 || b.size() == 0) throw InvalidInput("ot: empty marginal");
    if (!c.allFinite()) throw InvalidInput("ot: non-finite cost entries");
}

template <typename Scalar>
Scalar resolve_epsilon(const SolverOptions& opts, const Matrix<Scalar>& c) {
    const Scalar eps = opts.epsilon > 0.0 ? Scalar(opts.epsilon) : default_epsilon(c);
    if (!(eps > Scalar(0))) throw InvalidInput("ot: epsilon must be positive");
    return eps;
}

[[noreturn]] inline void throw_underflow(const char* solver, Eigen::Index row, bool column) {
    throw NumericError(std::string(solver) + ": kernel underflow, all-zero " +
                       (column ? "column " : "row ") + std::to_string(row) +
                       " (epsilon too small for this cost scale)");
}

/// Index of a row of K diag(v) that is zero, denormal or non-finite (its reciprocal would
/// overflow), or -1.
template <typename Scalar>
Eigen::Index degenerate_row(const Vector<Scalar>& kv) {
    const Scalar tiny = std::numeric_limits<Scalar>::min() * Scalar(1e10);
    for (Eigen::Index i = 0; i < kv.size(); ++i) {
        if (!(kv(i) > tiny) || !std::isfinite(kv(i))) return i;
    }
    return -1;
}

template <typename Scalar>
Vector<Scalar> row_logsumexp(const Matrix<Scalar>& m) {
    Vector<Scalar> out(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const Scalar mx = m.row(i).maxCoeff();
        out(i) = std::isfinite(mx) ? mx + std::log((m.row(i).array() - mx).exp().sum()) : mx;
    }
    return out;
}

template <typename Scalar>
Vector<Scalar> col_logsumexp(const Matrix<Scalar>& m) {
    Vector<Scalar> out(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const Scalar mx = m.col(j).maxCoeff();
        out(j) = std::isfinite(mx) ? mx + std::log((m.col(j).array() - mx).exp().sum()) : mx;
    }
    return out;
}

template <typename Scalar>
TransportPlan<Scalar> finish(Matrix<Scalar> plan, const Matrix<Scalar>& c, int iters, bool logd) {
    TransportPlan<Scalar> out;
    out.objective = (plan.array() * c.array()).sum();
    out.plan = std::move(plan);
    out.cost = c;
    out.iterations_used = iters;
    out.log_domain = logd;
    return out;
}

template <typename Scalar>
TransportPlan<Scalar> sinkhorn_log(const Vector<Scalar>& a, const Vector<Scalar>& b,
                                   const Matrix<Scalar>& c, Scalar eps, const SolverOptions& opts) {
    const Vector<Scalar> log_a = a.array().log();
    const Vector<Scalar> log_b = b.array().log();
    const Matrix<Scalar> log_k = -c / eps;
    Vector<Scalar> f = Vector<Scalar>::Zero(a.size());
    Vector<Scalar> g = Vector<Scalar>::Zero(b.size());
    Matrix<Scalar> log_plan;
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        f = log_a - row_logsumexp<Scalar>(log_k.rowwise() + g.transpose());
        g = log_b - col_logsumexp<Scalar>(log_k.colwise() + f);
        log_plan = (log_k.colwise() + f).rowwise() + g.transpose();
        const Matrix<Scalar> plan = log_plan.array().exp();
        if (marginal_violation<Scalar>(plan, a, b) < Scalar(opts.tol)) {
            ++it;
            break;
        }
    }
    return finish<Scalar>(log_plan.array().exp(), c, it, true);
}

template <typename Scalar>
TransportPlan<Scalar> ipot_log(const Vector<Scalar>& a, const Vector<Scalar>& b,
                               const Matrix<Scalar>& c, Scalar eps, const SolverOptions& opts) {
    const Vector<Scalar> log_a = a.array().log();
    const Vector<Scalar> log_b = b.array().log();
    const Matrix<Scalar> log_g = -c / eps;
    Matrix<Scalar> log_plan =
        Matrix<Scalar>::Constant(a.size(), b.size(), -std::log(Scalar(a.size() * b.size())));
    Vector<Scalar> f(a.size());
    Vector<Scalar> g = log_b;
    Matrix<Scalar> plan = log_plan.array().exp();
    int k = 0;
    for (; k < opts.max_iter; ++k) {
        const Matrix<Scalar> log_q = log_g + log_plan;
        for (int l = 0; l < opts.inner_iters; ++l) {
            f = log_a - row_logsumexp<Scalar>(log_q.rowwise() + g.transpose());
            g = log_b - col_logsumexp<Scalar>(log_q.colwise() + f);
        }
        log_plan = (log_q.colwise() + f).rowwise() + g.transpose();
        Matrix<Scalar> next = log_plan.array().exp();
        const Scalar change = (next - plan).cwiseAbs().sum();
        plan = std::move(next);
        if (change < Scalar(opts.tol) && marginal_violation<Scalar>(plan, a, b) < Scalar(opts.tol)) {
            ++k;
            break;
        }
    }
    return finish<Scalar>(std::move(plan), c, k, true);
}

}  // namespace detail

/// Entropic OT by alternating scaling on K = exp(-C/eps). The reported objective is the
/// transport cost sum(pi C) without the entropy term.
template <typename Scalar>
TransportPlan<Scalar> sinkhorn(const Vector<Scalar>& a, const Vector<Scalar>& b,
                               const Matrix<Scalar>& c, const SolverOptions& opts = {}) {
    detail::check_problem(a, b, c);
    const Scalar eps = detail::resolve_epsilon(opts, c);
    const Matrix<Scalar> kernel = (-c / eps).array().exp();

    Vector<Scalar> u = Vector<Scalar>::Ones(a.size());
    Vector<Scalar> v = Vector<Scalar>::Ones(b.size());
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        const Vector<Scalar> kv = kernel * v;
        if (const auto bad = detail::degenerate_row<Scalar>(kv); bad >= 0) {
            if (opts.log_domain_fallback) return detail::sinkhorn_log(a, b, c, eps, opts);
            detail::throw_underflow("sinkhorn", bad, false);
        }
        u = a.cwiseQuotient(kv);
        const Vector<Scalar> ktu = kernel.transpose() * u;
        if (const auto bad = detail::degenerate_row<Scalar>(ktu); bad >= 0) {
            if (opts.log_domain_fallback) return detail::sinkhorn_log(a, b, c, eps, opts);
            detail::throw_underflow("sinkhorn", bad, true);
        }
        v = b.cwiseQuotient(ktu);
        // Columns are exact after the v update; the row residual measures convergence.
        const Vector<Scalar> rows = u.cwiseProduct(kernel * v);
        if ((rows - a).cwiseAbs().maxCoeff() < Scalar(opts.tol)) {
            ++it;
            break;
        }
    }
    Matrix<Scalar> plan = u.asDiagonal() * kernel * v.asDiagonal();
    return detail::finish<Scalar>(std::move(plan), c, it, false);
}

/// Inexact proximal-point OT. Starting from the uniform coupling, each outer iteration
/// rescales Q = G .* pi with `inner_iters` scaling sweeps and sets pi = diag(a) Q diag(b).
/// Stops after max_iter outer iterations, or earlier once both the plan change (L1) and the
/// marginal violation drop below tol.
template <typename Scalar>
TransportPlan<Scalar> ipot(const Vector<Scalar>& a, const Vector<Scalar>& b,
                           const Matrix<Scalar>& c, const SolverOptions& opts = {}) {
    detail::check_problem(a, b, c);
    if (opts.max_iter < 1) throw InvalidInput("ipot: outer iterations must be >= 1");
    if (opts.inner_iters < 1) throw InvalidInput("ipot: inner iterations must be >= 1");
    const Scalar eps = detail::resolve_epsilon(opts, c);
    const Matrix<Scalar> kernel = (-c / eps).array().exp();

    Matrix<Scalar> plan =
        Matrix<Scalar>::Constant(a.size(), b.size(), Scalar(1) / Scalar(a.size() * b.size()));
    Vector<Scalar> u(a.size());
    Vector<Scalar> v = b;
    int k = 0;
    for (; k < opts.max_iter; ++k) {
        const Matrix<Scalar> q = kernel.cwiseProduct(plan);
        for (int l = 0; l < opts.inner_iters; ++l) {
            const Vector<Scalar> qv = q * v;
            if (const auto bad = detail::degenerate_row<Scalar>(qv); bad >= 0) {
                if (opts.log_domain_fallback) return detail::ipot_log(a, b, c, eps, opts);
                detail::throw_underflow("ipot", bad, false);
            }
            u = a.cwiseQuotient(qv);
            const Vector<Scalar> qtu = q.transpose() * u;
            if (const auto bad = detail::degenerate_row<Scalar>(qtu); bad >= 0) {
                if (opts.log_domain_fallback) return detail::ipot_log(a, b, c, eps, opts);
                detail::throw_underflow("ipot", bad, true);
            }
            v = b.cwiseQuotient(qtu);
        }
        Matrix<Scalar> next = u.asDiagonal() * q * v.asDiagonal();
        const Scalar change = (next - plan).cwiseAbs().sum();
        plan = std::move(next);
        if (change < Scalar(opts.tol) && marginal_violation<Scalar>(plan, a, b) < Scalar(opts.tol)) {
            ++k;
            break;
        }
    }
    return detail::finish<Scalar>(std::move(plan), c, k, false);
}

/// Exact Kantorovich solution by the transportation simplex (north-west corner start,
/// MODI potentials). Intended as a test oracle; N * W must not exceed 1e4.
TransportPlan<double> lp_exact(const Vector<double>& a, const Vector<double>& b,
                               const Matrix<double>& c);

/// Symmetric PSD square root; negative eigenvalues are clamped to zero.
template <typename Scalar>
Matrix<Scalar> psd_sqrt(const Matrix<Scalar>& s) {
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(s);
    const Vector<Scalar> root = eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

/// Closed-form squared 2-Wasserstein distance between N(m1, S1) and N(m2, S2).
template <typename Scalar>
Scalar gaussian_w2_sq(const Vector<Scalar>& m1, const Matrix<Scalar>& s1,
                      const Vector<Scalar>& m2, const Matrix<Scalar>& s2) {
    const auto d = m1.size();
    if (m2.size() != d || s1.rows() != d || s1.cols() != d || s2.rows() != d || s2.cols() != d) {
        throw InvalidInput("gaussian_w2_sq: dimension mismatch");
    }
    for (const auto* s : {&s1, &s2}) {
        if ((*s - s->transpose()).cwiseAbs().maxCoeff() > Scalar(1e-8)) {
            throw InvalidInput("gaussian_w2_sq: covariance is not symmetric");
        }
    }
    const Matrix<Scalar> root1 = psd_sqrt<Scalar>(s1);
    const Matrix<Scalar> cross = root1 * s2 * root1;
    const Matrix<Scalar> cross_root = psd_sqrt<Scalar>(Scalar(0.5) * (cross + cross.transpose()));
    const Scalar bures = (s1 + s2 - Scalar(2) * cross_root).trace();
    return (m1 - m2).squaredNorm() + std::max(bures, Scalar(0));
}

template <typename Scalar>
struct LossAndGradient {
    Scalar loss = 0;
    Matrix<Scalar> grad;  // dim x N, column i is dL/dz_i
};

/// L = sum pi_ij C_ij and its gradient in the source points with the plan held fixed:
/// dL/dz_i = sum_j pi_ij (z_i - t_j).
template <typename Scalar>
LossAndGradient<Scalar> ot_loss_and_point_grad(const Matrix<Scalar>& plan,
                                               const Matrix<Scalar>& src,
                                               const Matrix<Scalar>& tgt) {
    if (plan.rows() != src.cols() || plan.cols() != tgt.cols() || src.rows() != tgt.rows()) {
        throw InvalidInput("ot_loss_and_point_grad: shape mismatch");
    }
    LossAndGradient<Scalar> out;
    out.loss = (plan.array() * cost_matrix<Scalar>(src, tgt).array()).sum();
    const Vector<Scalar> row_mass = plan.rowwise().sum();
    out.grad = src * row_mass.asDiagonal() - tgt * plan.transpose();
    return out;
}

}  // namespace otakf::ot
