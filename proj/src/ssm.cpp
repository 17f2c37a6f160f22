#include "otakf/ssm.hpp"

#include <charconv>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace otakf {

namespace {

void check_symmetric_psd(const MatrixXd& m, int dim, const char* name) {
    if (m.rows() != dim || m.cols() != dim) {
        throw InvalidInput(std::string(name) + ": expected " + std::to_string(dim) + "x" +
                           std::to_string(dim) + " matrix");
    }
    if (!m.allFinite()) throw InvalidInput(std::string(name) + ": non-finite entries");
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
        throw InvalidInput(std::string(name) + ": not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if (eig.eigenvalues().minCoeff() < -1e-12 * scale) {
        throw InvalidInput(std::string(name) + ": not positive semidefinite");
    }
}

// Symmetric square root with negative eigenvalues clamped; works for singular covariances.
MatrixXd noise_factor(const MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    const VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

VectorXd standard_normal(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = normal(rng);
    return v;
}

void check_dim(const VectorXd& x, int dim, const char* what) {
    if (x.size() != dim) {
        throw InvalidInput(std::string(what) + ": expected dimension " + std::to_string(dim) +
                           ", got " + std::to_string(x.size()));
    }
}

double parse_cell(std::string_view cell, int line_no) {
    double value = 0.0;
    const auto* first = cell.data();
    const auto* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw ParseError("trajectory csv line " + std::to_string(line_no) + ": cannot parse '" +
                         std::string(cell) + "'");
    }
    return value;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

std::string_view model_name(Model model) {
    switch (model) {
        case Model::lorenz: return "lorenz";
        case Model::nclt: return "nclt";
        case Model::linear1d: return "linear1d";
    }
    return "unknown";
}

Model parse_model(std::string_view name) {
    if (name == "lorenz") return Model::lorenz;
    if (name == "nclt" || name == "nclt_kinematic") return Model::nclt;
    if (name == "linear1d" || name == "linear_1d") return Model::linear1d;
    throw InvalidInput("unknown model '" + std::string(name) + "'");
}

SsmSpec SsmSpec::lorenz(double dt, int taylor_order) {
    SsmSpec s{Model::lorenz, 3, 3, dt, taylor_order, 1.0};
    s.validate();
    return s;
}

SsmSpec SsmSpec::nclt(double dt) {
    SsmSpec s{Model::nclt, 5, 2, dt, 10, 1.0};
    s.validate();
    return s;
}

SsmSpec SsmSpec::linear1d(double coeff) {
    SsmSpec s{Model::linear1d, 1, 1, 1.0, 10, coeff};
    s.validate();
    return s;
}

SsmSpec SsmSpec::of(Model model) {
    switch (model) {
        case Model::lorenz: return lorenz();
        case Model::nclt: return nclt();
        case Model::linear1d: return linear1d();
    }
    throw InvalidInput("unknown model");
}

void SsmSpec::validate() const {
    int n = 0, m = 0;
    switch (model) {
        case Model::lorenz: n = 3; m = 3; break;
        case Model::nclt: n = 5; m = 2; break;
        case Model::linear1d: n = 1; m = 1; break;
    }
    if (state_dim != n || meas_dim != m) {
        throw InvalidInput("SsmSpec: dimensions do not match model " +
                           std::string(model_name(model)));
    }
    // dt = 0 is allowed only as a degenerate lorenz test case (exp(0) = I).
    if (!(dt > 0.0) && !(model == Model::lorenz && dt == 0.0)) {
        throw InvalidInput("SsmSpec: dt must be positive");
    }
    if (taylor_order < 1) throw InvalidInput("SsmSpec: taylor_order must be >= 1");
    if (!std::isfinite(linear_coeff)) throw InvalidInput("SsmSpec: non-finite linear coefficient");
}

void CovariancePair::validate(int n, int m) const {
    check_symmetric_psd(Q, n, "process covariance Q");
    check_symmetric_psd(R, m, "measurement covariance R");
}

VectorXd transition(const SsmSpec& spec, const VectorXd& x, double control) {
    check_dim(x, spec.state_dim, "transition");
    switch (spec.model) {
        case Model::lorenz: {
            const Eigen::Vector3d s = x;
            return lorenz_transition<double>(s, spec.dt, spec.taylor_order);
        }
        case Model::nclt: {
            const Eigen::Matrix<double, 5, 1> s = x;
            return nclt_transition<double>(s, control, spec.dt);
        }
        case Model::linear1d: return spec.linear_coeff * x;
    }
    throw InvalidInput("transition: unknown model");
}

VectorXd measure(const SsmSpec& spec, const VectorXd& x) {
    check_dim(x, spec.state_dim, "measure");
    switch (spec.model) {
        case Model::lorenz:
        case Model::linear1d: return x;
        case Model::nclt: return x.head(2);
    }
    throw InvalidInput("measure: unknown model");
}

MatrixXd measurement_jacobian(const SsmSpec& spec) {
    MatrixXd h = MatrixXd::Zero(spec.meas_dim, spec.state_dim);
    for (int i = 0; i < spec.meas_dim; ++i) h(i, i) = 1.0;
    return h;
}

CovariancePair covariance_from_ratio(double nu_db, double inv_r2_db, const SsmSpec& spec) {
    const double r2 = std::pow(10.0, -inv_r2_db / 10.0);
    const double q2 = r2 * std::pow(10.0, nu_db / 10.0);
    return {q2 * MatrixXd::Identity(spec.state_dim, spec.state_dim),
            r2 * MatrixXd::Identity(spec.meas_dim, spec.meas_dim)};
}

VectorXd lorenz_initial_state(const SsmSpec& spec, int burn_in) {
    VectorXd x = VectorXd::Ones(3);
    for (int i = 0; i < burn_in; ++i) x = transition(spec, x);
    return x;
}

VectorXd default_initial_state(const SsmSpec& spec) {
    if (spec.model == Model::lorenz) return lorenz_initial_state(spec);
    return VectorXd::Zero(spec.state_dim);
}

std::vector<double> piecewise_speed_profile(int T, int segment_length, double v_min, double v_max,
                                            std::uint64_t seed) {
    if (segment_length < 1) throw InvalidInput("piecewise_speed_profile: segment_length < 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> speed(v_min, v_max);
    std::vector<double> out(static_cast<std::size_t>(std::max(T, 0)));
    double current = speed(rng);
    for (int t = 0; t < T; ++t) {
        if (t > 0 && t % segment_length == 0) current = speed(rng);
        out[t] = current;
    }
    return out;
}

Trajectory simulate(const SsmSpec& spec, const CovariancePair& cov, const VectorXd& x0, int T,
                    std::uint64_t seed, std::vector<double> controls) {
    spec.validate();
    if (T < 1) throw InvalidInput("simulate: T must be >= 1");
    check_dim(x0, spec.state_dim, "simulate x0");
    cov.validate(spec.state_dim, spec.meas_dim);
    if (!controls.empty() && static_cast<int>(controls.size()) != T) {
        throw InvalidInput("simulate: control sequence length must equal T");
    }
    if (spec.model == Model::nclt && controls.empty()) controls.assign(T, 0.0);

    const MatrixXd process_factor = noise_factor(cov.Q);
    const MatrixXd meas_factor = noise_factor(cov.R);
    std::mt19937_64 rng(seed);

    Trajectory traj;
    traj.spec = spec;
    traj.true_cov = cov;
    traj.seed = seed;
    traj.initial_state = x0;
    traj.controls = std::move(controls);
    traj.states.reserve(T);
    traj.measurements.reserve(T);

    VectorXd x = x0;
    for (int t = 0; t < T; ++t) {
        const VectorXd w = standard_normal(rng, spec.state_dim);
        const VectorXd v = standard_normal(rng, spec.meas_dim);
        x = transition(spec, x, traj.control(t)) + process_factor * w;
        traj.states.push_back(x);
        traj.measurements.push_back(measure(spec, x) + meas_factor * v);
    }
    return traj;
}

std::uint64_t trajectory_hash(const Trajectory& traj) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const VectorXd& v) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t i = 0; i < static_cast<std::size_t>(v.size()) * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& s : traj.states) mix(s);
    for (const auto& y : traj.measurements) mix(y);
    if (!traj.controls.empty()) {
        mix(Eigen::Map<const VectorXd>(traj.controls.data(),
                                       static_cast<Eigen::Index>(traj.controls.size())));
    }
    return h;
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw NumericError("format_double: conversion failed");
    return std::string(buf, ptr);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj,
                          const std::vector<std::string>& comments) {
    const int n = traj.spec.state_dim;
    const int m = traj.spec.meas_dim;
    const bool with_controls = !traj.controls.empty();
    for (const auto& c : comments) out << "# " << c << '\n';
    out << 't';
    for (int i = 1; i <= n; ++i) out << ",x" << i;
    for (int i = 1; i <= m; ++i) out << ",y" << i;
    if (with_controls) out << ",vc";
    out << '\n';
    if (traj.initial_state) {
        out << 0;
        for (int i = 0; i < n; ++i) out << ',' << format_double((*traj.initial_state)(i));
        for (int i = 0; i < m; ++i) out << ',';
        if (with_controls) out << ',';
        out << '\n';
    }
    for (int t = 0; t < traj.length(); ++t) {
        out << t + 1;
        for (int i = 0; i < n; ++i) {
            out << ',' << (traj.has_truth() ? format_double(traj.states[t](i)) : std::string());
        }
        for (int i = 0; i < m; ++i) out << ',' << format_double(traj.measurements[t](i));
        if (with_controls) out << ',' << format_double(traj.controls[t]);
        out << '\n';
    }
}

Trajectory read_trajectory_csv(std::istream& in, const SsmSpec& spec,
                               std::vector<std::string>* comments) {
    const int n = spec.state_dim;
    const int m = spec.meas_dim;
    Trajectory traj;
    traj.spec = spec;

    std::string line;
    int line_no = 0;
    bool header_seen = false;
    bool with_controls = false;
    bool any_missing_state = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (comments) comments->push_back(line.size() > 2 ? line.substr(2) : std::string());
            continue;
        }
        const auto cells = split(line, ',');
        if (!header_seen) {
            const int expected = 1 + n + m;
            if (static_cast<int>(cells.size()) != expected &&
                static_cast<int>(cells.size()) != expected + 1) {
                throw ParseError("trajectory csv line " + std::to_string(line_no) +
                                 ": header has " + std::to_string(cells.size()) +
                                 " columns, expected " + std::to_string(expected) + " or " +
                                 std::to_string(expected + 1) + " for model " +
                                 std::string(model_name(spec.model)));
            }
            if (cells[0] != "t") {
                throw ParseError("trajectory csv line " + std::to_string(line_no) +
                                 ": first header column must be 't'");
            }
            with_controls = static_cast<int>(cells.size()) == expected + 1;
            header_seen = true;
            continue;
        }
        const int width = 1 + n + m + (with_controls ? 1 : 0);
        if (static_cast<int>(cells.size()) != width) {
            throw ParseError("trajectory csv line " + std::to_string(line_no) + ": expected " +
                             std::to_string(width) + " cells, got " +
                             std::to_string(cells.size()));
        }
        const double t = parse_cell(cells[0], line_no);
        VectorXd x(n);
        bool state_present = true;
        for (int i = 0; i < n; ++i) {
            if (cells[1 + i].empty()) {
                state_present = false;
            } else {
                x(i) = parse_cell(cells[1 + i], line_no);
            }
        }
        if (t == 0.0) {
            if (!state_present) {
                throw ParseError("trajectory csv line " + std::to_string(line_no) +
                                 ": initial-state row needs all state cells");
            }
            traj.initial_state = x;
            continue;
        }
        VectorXd y(m);
        for (int i = 0; i < m; ++i) y(i) = parse_cell(cells[1 + n + i], line_no);
        if (state_present) {
            traj.states.push_back(x);
        } else {
            any_missing_state = true;
        }
        traj.measurements.push_back(y);
        if (with_controls) traj.controls.push_back(parse_cell(cells[width - 1], line_no));
    }
    if (!header_seen) throw ParseError("trajectory csv: missing header row");
    if (traj.measurements.empty()) throw ParseError("trajectory csv: no measurement rows");
    if (any_missing_state) traj.states.clear();
    if (spec.model == Model::nclt && traj.controls.empty()) {
        traj.controls.assign(traj.measurements.size(), 0.0);
    }
    return traj;
}

}  // namespace otakf
