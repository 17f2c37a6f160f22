#include <queue>
#include <utility>

#include "otakf/ot.hpp"

namespace otakf::ot {

namespace {

struct BasicCell {
    int row;
    int col;
    double flow;
};

// Nodes 0..N-1 are sources, N..N+W-1 are sinks. The basis is a spanning tree on them.
class TransportSimplex {
public:
    TransportSimplex(const Vector<double>& a, const Vector<double>& b, const Matrix<double>& c)
        : a_(a), b_(b), c_(c), n_(static_cast<int>(a.size())), w_(static_cast<int>(b.size())) {
        north_west_corner();
    }

    int solve(int max_pivots) {
        for (int pivot = 0; pivot < max_pivots; ++pivot) {
            compute_potentials();
            int best_i = -1, best_j = -1;
            double best = -kReducedCostTol;
            for (int j = 0; j < w_; ++j) {
                for (int i = 0; i < n_; ++i) {
                    const double reduced = c_(i, j) - u_[i] - v_[j];
                    if (reduced < best) {
                        best = reduced;
                        best_i = i;
                        best_j = j;
                    }
                }
            }
            if (best_i < 0) return pivot;
            enter(best_i, best_j);
        }
        throw NumericError("lp_exact: pivot limit reached without optimality");
    }

    Matrix<double> plan() const {
        Matrix<double> p = Matrix<double>::Zero(n_, w_);
        for (const auto& cell : basis_) p(cell.row, cell.col) += std::max(cell.flow, 0.0);
        return p;
    }

private:
    static constexpr double kReducedCostTol = 1e-12;

    void north_west_corner() {
        std::vector<double> supply(a_.data(), a_.data() + n_);
        std::vector<double> demand(b_.data(), b_.data() + w_);
        int i = 0, j = 0;
        while (true) {
            const double x = std::min(supply[i], demand[j]);
            basis_.push_back({i, j, x});
            supply[i] -= x;
            demand[j] -= x;
            if (i == n_ - 1 && j == w_ - 1) break;
            // Advance exactly one index per cell so the basis keeps N + W - 1 cells.
            if (j == w_ - 1 || (i < n_ - 1 && supply[i] <= demand[j])) {
                ++i;
            } else {
                ++j;
            }
        }
    }

    std::vector<std::vector<std::pair<int, int>>> adjacency() const {
        std::vector<std::vector<std::pair<int, int>>> adj(n_ + w_);
        for (int k = 0; k < static_cast<int>(basis_.size()); ++k) {
            adj[basis_[k].row].push_back({n_ + basis_[k].col, k});
            adj[n_ + basis_[k].col].push_back({basis_[k].row, k});
        }
        return adj;
    }

    void compute_potentials() {
        const auto adj = adjacency();
        u_.assign(n_, 0.0);
        v_.assign(w_, 0.0);
        std::vector<bool> seen(n_ + w_, false);
        std::queue<int> frontier;
        frontier.push(0);
        seen[0] = true;
        while (!frontier.empty()) {
            const int node = frontier.front();
            frontier.pop();
            for (const auto& [next, k] : adj[node]) {
                if (seen[next]) continue;
                seen[next] = true;
                const auto& cell = basis_[k];
                if (next >= n_) {
                    v_[cell.col] = c_(cell.row, cell.col) - u_[cell.row];
                } else {
                    u_[cell.row] = c_(cell.row, cell.col) - v_[cell.col];
                }
                frontier.push(next);
            }
        }
    }

    // Path of basis-cell indices from source node `row` to sink node `n + col` in the tree.
    std::vector<int> tree_path(int row, int col) const {
        const auto adj = adjacency();
        std::vector<int> parent_cell(n_ + w_, -1);
        std::vector<int> parent_node(n_ + w_, -1);
        std::vector<bool> seen(n_ + w_, false);
        std::queue<int> frontier;
        frontier.push(row);
        seen[row] = true;
        const int goal = n_ + col;
        while (!frontier.empty() && !seen[goal]) {
            const int node = frontier.front();
            frontier.pop();
            for (const auto& [next, k] : adj[node]) {
                if (seen[next]) continue;
                seen[next] = true;
                parent_cell[next] = k;
                parent_node[next] = node;
                frontier.push(next);
            }
        }
        if (!seen[goal]) throw NumericError("lp_exact: basis is not a spanning tree");
        std::vector<int> path;
        for (int node = goal; node != row; node = parent_node[node]) {
            path.push_back(parent_cell[node]);
        }
        std::reverse(path.begin(), path.end());
        return path;
    }

    void enter(int row, int col) {
        // Cycle: entering cell (+), then the tree path from row to col alternating -, +, -, ...
        const std::vector<int> path = tree_path(row, col);
        int leaving = -1;
        double theta = std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < path.size(); p += 2) {
            const double flow = basis_[path[p]].flow;
            if (flow < theta) {
                theta = flow;
                leaving = path[p];
            }
        }
        theta = std::max(theta, 0.0);
        for (std::size_t p = 0; p < path.size(); ++p) {
            basis_[path[p]].flow += (p % 2 == 0) ? -theta : theta;
        }
        basis_[leaving] = {row, col, theta};
    }

    const Vector<double>& a_;
    const Vector<double>& b_;
    const Matrix<double>& c_;
    int n_;
    int w_;
    std::vector<BasicCell> basis_;
    std::vector<double> u_;
    std::vector<double> v_;
};

}  // namespace

TransportPlan<double> lp_exact(const Vector<double>& a, const Vector<double>& b,
                               const Matrix<double>& c) {
    detail::check_problem(a, b, c);
    if (a.size() * b.size() > 10000) throw InvalidInput("lp_exact: N*W exceeds 1e4");
    if (std::abs(a.sum() - b.sum()) > 1e-9) {
        throw InvalidInput("lp_exact: marginals carry different total mass");
    }
    TransportSimplex simplex(a, b, c);
    const int pivots = simplex.solve(50 * static_cast<int>(a.size() * b.size()) + 100);
    return detail::finish<double>(simplex.plan(), c, pivots, false);
}

}  // namespace otakf::ot
