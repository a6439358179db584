#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sinkflow/errors.hpp"
#include "sinkflow/matrix.hpp"

namespace sinkflow::ot {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Empirical measure: points (n, d) with nonnegative weights summing to 1.
struct SampleBatch {
    Matrix points;
    std::vector<double> weights;

    static SampleBatch uniform(Matrix pts) {
        SampleBatch b;
        const std::size_t n = pts.rows();
        b.points = std::move(pts);
        b.weights.assign(n, n ? 1.0 / static_cast<double>(n) : 0.0);
        return b;
    }

    std::size_t size() const { return points.rows(); }
    std::size_t dim() const { return points.cols(); }

    void validate() const {
        if (points.rows() < 1 || points.cols() < 1)
            throw ValidationError("sample batch must have at least one point and one dimension");
        if (weights.size() != points.rows())
            throw SchemaError("weight count does not match point count");
        if (!points.all_finite()) throw NumericError("sample batch contains non-finite coordinates");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw ValidationError("sample weights must be nonnegative");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9) throw ValidationError("sample weights must sum to 1");
    }
};

struct CostMatrix {
    Matrix entries;
    std::string metric_tag = "sqeuclidean";
};

struct SinkhornConfig {
    double epsilon = 0.05;
    int max_iterations = 500;
    double marginal_tolerance = 1e-6;
    bool debias = true;

    void validate() const {
        if (!(epsilon > 0.0)) throw ValidationError("sinkhorn epsilon must be > 0");
        if (max_iterations < 1) throw ValidationError("sinkhorn max_iterations must be >= 1");
        if (!(marginal_tolerance > 0.0)) throw ValidationError("sinkhorn marginal_tolerance must be > 0");
    }
};

struct TransportPlan {
    Matrix coupling;               // (n, m), nonnegative
    std::vector<double> dual_u;    // length n
    std::vector<double> dual_v;    // length m
    int iterations_used = 0;
    bool converged = false;
};

// Pairwise squared Euclidean distances between the rows of a and b.
inline CostMatrix cost_matrix(const SampleBatch& a, const SampleBatch& b) {
    if (a.dim() != b.dim()) throw SchemaError("cost_matrix: batches have different dimensions");
    const std::size_t n = a.size(), m = b.size(), d = a.dim();
    CostMatrix cost;
    cost.entries = Matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = a.points.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* y = b.points.row_ptr(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = x[k] - y[k];
                acc += diff * diff;
            }
            cost.entries(i, j) = acc;
        }
    }
    return cost;
}

namespace detail {

// log of weights, with zero-mass entries mapped to -inf so they drop out of
// every log-sum-exp below.
inline std::vector<double> log_weights(const std::vector<double>& w) {
    std::vector<double> lw(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) lw[i] = w[i] > 0.0 ? std::log(w[i]) : kNegInf;
    return lw;
}

// log sum_j exp(t[j] - s[j]) over entries with t[j] > -inf; s is a row of C/eps.
inline double logsumexp_row(const double* s, const double* t, std::size_t m) {
    double mx = kNegInf;
    for (std::size_t j = 0; j < m; ++j) {
        const double v = t[j] - s[j];
        if (v > mx) mx = v;
    }
    if (mx == kNegInf) return kNegInf;
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double v = t[j] - s[j];
        if (v != kNegInf) acc += std::exp(v - mx);
    }
    return mx + std::log(acc);
}

struct SolveResult {
    TransportPlan plan;
    double transport_term = 0.0;   // sum_ij coupling * cost
    double dual_value = 0.0;       // <alpha, u> + <beta, v>
};

inline void build_coupling(const Matrix& cost, double eps, const std::vector<double>& wa,
                           const std::vector<double>& wb, const std::vector<double>& u,
                           const std::vector<double>& v, Matrix& coupling) {
    const std::size_t n = cost.rows(), m = cost.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double* crow = cost.row_ptr(i);
        double* prow = coupling.row_ptr(i);
        if (wa[i] == 0.0) {
            for (std::size_t j = 0; j < m; ++j) prow[j] = 0.0;
            continue;
        }
        for (std::size_t j = 0; j < m; ++j)
            prow[j] = wb[j] == 0.0 ? 0.0 : wa[i] * wb[j] * std::exp((u[i] + v[j] - crow[j]) / eps);
    }
}

inline double marginal_l1_error(const Matrix& coupling, const std::vector<double>& wa,
                                const std::vector<double>& wb) {
    const std::size_t n = coupling.rows(), m = coupling.cols();
    double err = 0.0;
    std::vector<double> col(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* prow = coupling.row_ptr(i);
        double rs = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            rs += prow[j];
            col[j] += prow[j];
        }
        err += std::abs(rs - wa[i]);
    }
    for (std::size_t j = 0; j < m; ++j) err += std::abs(col[j] - wb[j]);
    return err;
}

// Alternating log-domain Sinkhorn iterations on the dual potentials.
inline SolveResult solve(const SampleBatch& a, const SampleBatch& b, const CostMatrix& cost,
                         const SinkhornConfig& cfg) {
    const std::size_t n = a.size(), m = b.size();
    const Matrix& C = cost.entries;
    if (!C.all_finite()) throw NumericError("sinkhorn: cost matrix contains non-finite entries");
    const double eps = cfg.epsilon;

    // scaled cost rows, C/eps, in both orientations for cache-friendly sweeps
    Matrix s(n, m), st(m, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double v = C(i, j) / eps;
            s(i, j) = v;
            st(j, i) = v;
        }

    const std::vector<double> lwa = log_weights(a.weights);
    const std::vector<double> lwb = log_weights(b.weights);
    std::vector<double> u(n, 0.0), v(m, 0.0);
    std::vector<double> t(std::max(n, m), 0.0);

    SolveResult res;
    res.plan.coupling = Matrix(n, m);
    int it = 0;
    bool converged = false;
    while (it < cfg.max_iterations) {
        ++it;
        // u_i = -eps * lse_j(log wb_j + (v_j - C_ij)/eps)
        for (std::size_t j = 0; j < m; ++j) t[j] = lwb[j] == kNegInf ? kNegInf : lwb[j] + v[j] / eps;
        for (std::size_t i = 0; i < n; ++i) u[i] = -eps * logsumexp_row(s.row_ptr(i), t.data(), m);
        for (std::size_t i = 0; i < n; ++i) t[i] = lwa[i] == kNegInf ? kNegInf : lwa[i] + u[i] / eps;
        for (std::size_t j = 0; j < m; ++j) v[j] = -eps * logsumexp_row(st.row_ptr(j), t.data(), n);

        if (it == 1 || it % 10 == 0 || it == cfg.max_iterations) {
            build_coupling(C, eps, a.weights, b.weights, u, v, res.plan.coupling);
            if (marginal_l1_error(res.plan.coupling, a.weights, b.weights) <= cfg.marginal_tolerance) {
                converged = true;
                break;
            }
        }
    }
    build_coupling(C, eps, a.weights, b.weights, u, v, res.plan.coupling);

    // zero-mass rows get a neutral potential so duals stay finite
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(u[i])) u[i] = 0.0;
    for (std::size_t j = 0; j < m; ++j)
        if (!std::isfinite(v[j])) v[j] = 0.0;

    res.plan.dual_u = u;
    res.plan.dual_v = v;
    res.plan.iterations_used = it;
    res.plan.converged = converged;
    for (std::size_t i = 0; i < n; ++i) {
        const double* prow = res.plan.coupling.row_ptr(i);
        const double* crow = C.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) res.transport_term += prow[j] * crow[j];
        res.dual_value += a.weights[i] * u[i];
    }
    for (std::size_t j = 0; j < m; ++j) res.dual_value += b.weights[j] * v[j];
    return res;
}

// Self-transport OT_eps(a, a). The optimal potentials are symmetric, so a
// damped fixed-point update on a single potential vector converges faster
// than alternating sweeps and yields a symmetric coupling.
inline SolveResult solve_self(const SampleBatch& a, const CostMatrix& cost, const SinkhornConfig& cfg) {
    const std::size_t n = a.size();
    const Matrix& C = cost.entries;
    if (!C.all_finite()) throw NumericError("sinkhorn: cost matrix contains non-finite entries");
    const double eps = cfg.epsilon;

    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s(i, j) = C(i, j) / eps;

    const std::vector<double> lw = log_weights(a.weights);
    std::vector<double> f(n, 0.0), t(n, 0.0), fnew(n, 0.0);

    SolveResult res;
    res.plan.coupling = Matrix(n, n);
    int it = 0;
    bool converged = false;
    while (it < cfg.max_iterations) {
        ++it;
        for (std::size_t j = 0; j < n; ++j) t[j] = lw[j] == kNegInf ? kNegInf : lw[j] + f[j] / eps;
        for (std::size_t i = 0; i < n; ++i)
            fnew[i] = 0.5 * (f[i] - eps * logsumexp_row(s.row_ptr(i), t.data(), n));
        f = fnew;

        if (it == 1 || it % 10 == 0 || it == cfg.max_iterations) {
            build_coupling(C, eps, a.weights, a.weights, f, f, res.plan.coupling);
            if (marginal_l1_error(res.plan.coupling, a.weights, a.weights) <= cfg.marginal_tolerance) {
                converged = true;
                break;
            }
        }
    }
    build_coupling(C, eps, a.weights, a.weights, f, f, res.plan.coupling);

    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(f[i])) f[i] = 0.0;
    res.plan.dual_u = f;
    res.plan.dual_v = f;
    res.plan.iterations_used = it;
    res.plan.converged = converged;
    for (std::size_t i = 0; i < n; ++i) {
        const double* prow = res.plan.coupling.row_ptr(i);
        const double* crow = C.row_ptr(i);
        for (std::size_t j = 0; j < n; ++j) res.transport_term += prow[j] * crow[j];
        res.dual_value += 2.0 * a.weights[i] * f[i];
    }
    return res;
}

}  // namespace detail

// Entropic coupling between a and b via log-domain Sinkhorn iterations.
// Failing to converge within cfg.max_iterations is reported through
// TransportPlan::converged, not as an error.
inline TransportPlan sinkhorn_plan(const SampleBatch& a, const SampleBatch& b, const SinkhornConfig& cfg) {
    cfg.validate();
    a.validate();
    b.validate();
    return detail::solve(a, b, cost_matrix(a, b), cfg).plan;
}

// Transport term sum_ij coupling_ij * cost_ij of a solved plan. The entropic
// regularizer is excluded here; the divergence below debias-cancels on this
// same quantity.
inline double ot_cost(const TransportPlan& plan, const CostMatrix& cost, const SinkhornConfig& cfg) {
    (void)cfg;
    if (plan.coupling.rows() != cost.entries.rows() || plan.coupling.cols() != cost.entries.cols())
        throw SchemaError("ot_cost: plan and cost shapes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < plan.coupling.rows(); ++i) {
        const double* prow = plan.coupling.row_ptr(i);
        const double* crow = cost.entries.row_ptr(i);
        for (std::size_t j = 0; j < plan.coupling.cols(); ++j) acc += prow[j] * crow[j];
    }
    return acc;
}

// Debiased Sinkhorn divergence
//   S(a, b) = OT(a, b) - 1/2 [OT(a, a) + OT(b, b)]
// where each OT term is the optimal entropic cost <alpha,u> + <beta,v>
// (equal to the transport term plus the epsilon-scaled relative entropy of
// the plan). On this value the divergence is zero at a == b, symmetric,
// nonnegative, and the fixed-plan rule in divergence_gradient is its exact
// position gradient. With cfg.debias false only the cross term is returned.
inline double sinkhorn_divergence(const SampleBatch& a, const SampleBatch& b, const SinkhornConfig& cfg) {
    cfg.validate();
    a.validate();
    b.validate();
    if (a.dim() != b.dim()) throw SchemaError("sinkhorn_divergence: batches have different dimensions");
    const double cross = detail::solve(a, b, cost_matrix(a, b), cfg).dual_value;
    if (!cfg.debias) return cross;
    const double self_a = detail::solve_self(a, cost_matrix(a, a), cfg).dual_value;
    const double self_b = detail::solve_self(b, cost_matrix(b, b), cfg).dual_value;
    return cross - 0.5 * (self_a + self_b);
}

struct DivergenceGradient {
    Matrix gradient;           // (m, d): d S / d b.points
    bool approximate = false;  // true when any plan hit the iteration cap
};

// Gradient of the debiased divergence with respect to the points of b,
// evaluated at the converged potentials with the plans held fixed:
//   d OT / d y_j = sum_i pi_ij * 2 (y_j - x_i)
// applied to the cross plan and the b-self plan; the a-self term does not
// depend on b.
inline DivergenceGradient divergence_gradient(const SampleBatch& a, const SampleBatch& b,
                                              const SinkhornConfig& cfg) {
    cfg.validate();
    a.validate();
    b.validate();
    if (a.dim() != b.dim()) throw SchemaError("divergence_gradient: batches have different dimensions");
    const std::size_t n = a.size(), m = b.size(), d = b.dim();

    const auto cross = detail::solve(a, b, cost_matrix(a, b), cfg);
    DivergenceGradient out;
    out.gradient = Matrix(m, d);
    Matrix& G = out.gradient;

    // cross term: 2 (colsum_j y_j - sum_i pi_ij x_i)
    for (std::size_t i = 0; i < n; ++i) {
        const double* prow = cross.plan.coupling.row_ptr(i);
        const double* x = a.points.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double p = prow[j];
            if (p == 0.0) continue;
            const double* y = b.points.row_ptr(j);
            double* grow = G.row_ptr(j);
            for (std::size_t k = 0; k < d; ++k) grow[k] += 2.0 * p * (y[k] - x[k]);
        }
    }
    out.approximate = !cross.plan.converged;

    if (cfg.debias) {
        const auto self_b = detail::solve_self(b, cost_matrix(b, b), cfg);
        out.approximate = out.approximate || !self_b.plan.converged;
        // minus one half of: sum_l pi_jl 2(y_j - y_l) + sum_k pi_kj 2(y_j - y_k)
        for (std::size_t j = 0; j < m; ++j) {
            const double* y = b.points.row_ptr(j);
            double* grow = G.row_ptr(j);
            for (std::size_t l = 0; l < m; ++l) {
                const double p = self_b.plan.coupling(j, l) + self_b.plan.coupling(l, j);
                if (p == 0.0) continue;
                const double* yl = b.points.row_ptr(l);
                for (std::size_t k = 0; k < d; ++k) grow[k] -= p * (y[k] - yl[k]);
            }
        }
    }
    return out;
}

namespace detail {

struct FusedDivergence {
    double value = 0.0;
    Matrix gradient;  // (m, d)
    bool approximate = false;
};

// Divergence value and its gradient from one set of solves; the training
// loop calls this once per mini-batch instead of paying for the plans twice.
inline FusedDivergence divergence_and_gradient(const SampleBatch& a, const SampleBatch& b,
                                               const SinkhornConfig& cfg) {
    const std::size_t n = a.size(), m = b.size(), d = b.dim();
    const auto cross = solve(a, b, cost_matrix(a, b), cfg);
    const auto self_a = solve_self(a, cost_matrix(a, a), cfg);
    const auto self_b = solve_self(b, cost_matrix(b, b), cfg);

    FusedDivergence out;
    out.value = cross.dual_value - 0.5 * (self_a.dual_value + self_b.dual_value);
    out.approximate = !(cross.plan.converged && self_a.plan.converged && self_b.plan.converged);
    out.gradient = Matrix(m, d);
    Matrix& G = out.gradient;
    for (std::size_t i = 0; i < n; ++i) {
        const double* prow = cross.plan.coupling.row_ptr(i);
        const double* x = a.points.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double p = prow[j];
            if (p == 0.0) continue;
            const double* y = b.points.row_ptr(j);
            double* grow = G.row_ptr(j);
            for (std::size_t k = 0; k < d; ++k) grow[k] += 2.0 * p * (y[k] - x[k]);
        }
    }
    for (std::size_t j = 0; j < m; ++j) {
        const double* y = b.points.row_ptr(j);
        double* grow = G.row_ptr(j);
        for (std::size_t l = 0; l < m; ++l) {
            const double p = self_b.plan.coupling(j, l) + self_b.plan.coupling(l, j);
            if (p == 0.0) continue;
            const double* yl = b.points.row_ptr(l);
            for (std::size_t k = 0; k < d; ++k) grow[k] -= p * (y[k] - yl[k]);
        }
    }
    return out;
}

// Union-find over the n + m nodes of the bipartite support graph.
class DisjointSet {
public:
    explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
        return x;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent_[a] = b;
        return true;
    }

private:
    std::vector<std::size_t> parent_;
};

// Cost of the basic solution associated with a spanning tree of the bipartite
// graph, or NaN when the tree induces a negative flow (infeasible basis).
inline double tree_vertex_cost(const std::vector<std::pair<int, int>>& edges, const Matrix& C,
                               std::size_t n, std::size_t m) {
    const std::size_t nodes = n + m;
    std::vector<double> demand(nodes);
    for (std::size_t i = 0; i < n; ++i) demand[i] = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < m; ++j) demand[n + j] = -1.0 / static_cast<double>(m);

    std::vector<int> degree(nodes, 0);
    std::vector<std::vector<int>> incident(nodes);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const std::size_t u = static_cast<std::size_t>(edges[e].first);
        const std::size_t w = n + static_cast<std::size_t>(edges[e].second);
        ++degree[u];
        ++degree[w];
        incident[u].push_back(static_cast<int>(e));
        incident[w].push_back(static_cast<int>(e));
    }

    // peel leaves; each leaf's incident edge must carry the leaf's remaining mass
    std::vector<std::size_t> stack;
    std::vector<bool> used_edge(edges.size(), false);
    for (std::size_t v = 0; v < nodes; ++v)
        if (degree[v] == 1) stack.push_back(v);
    double total = 0.0;
    while (!stack.empty()) {
        const std::size_t v = stack.back();
        stack.pop_back();
        if (degree[v] != 1) continue;
        int eidx = -1;
        for (int e : incident[v])
            if (!used_edge[static_cast<std::size_t>(e)]) eidx = e;
        if (eidx < 0) continue;
        used_edge[static_cast<std::size_t>(eidx)] = true;
        const std::size_t i = static_cast<std::size_t>(edges[static_cast<std::size_t>(eidx)].first);
        const std::size_t j = static_cast<std::size_t>(edges[static_cast<std::size_t>(eidx)].second);
        const std::size_t other = (v == i) ? n + j : i;
        const double flow = (v < n) ? demand[v] : -demand[v];
        if (flow < -1e-12) return std::numeric_limits<double>::quiet_NaN();
        total += std::max(flow, 0.0) * C(i, j);
        demand[other] += demand[v];
        demand[v] = 0.0;
        --degree[v];
        if (--degree[other] == 1) stack.push_back(other);
    }
    return total;
}

inline void enumerate_trees(std::size_t next_edge, std::size_t chosen, DisjointSet uf,
                            std::vector<std::pair<int, int>>& current,
                            const std::vector<std::pair<int, int>>& all_edges, const Matrix& C,
                            std::size_t n, std::size_t m, double& best) {
    const std::size_t need = n + m - 1;
    if (chosen == need) {
        const double c = tree_vertex_cost(current, C, n, m);
        if (!std::isnan(c)) best = std::min(best, c);
        return;
    }
    if (all_edges.size() - next_edge < need - chosen) return;
    for (std::size_t e = next_edge; e + (need - chosen) <= all_edges.size() + 0; ++e) {
        DisjointSet trial = uf;
        const auto [i, j] = all_edges[e];
        if (!trial.unite(static_cast<std::size_t>(i), n + static_cast<std::size_t>(j))) continue;
        current.push_back(all_edges[e]);
        enumerate_trees(e + 1, chosen + 1, trial, current, all_edges, C, n, m, best);
        current.pop_back();
    }
}

}  // namespace detail

// Exact unregularized OT cost for tiny uniform batches: permutation
// enumeration when sizes match, exhaustive search over the vertices of the
// transportation polytope (spanning trees of the bipartite support graph)
// otherwise. Validation oracle only.
inline double exact_ot_oracle(const SampleBatch& a, const SampleBatch& b) {
    a.validate();
    b.validate();
    const std::size_t n = a.size(), m = b.size();
    if (n > 6 || m > 6) throw CapabilityError("exact_ot_oracle supports at most 6 points per batch");
    for (double w : a.weights)
        if (std::abs(w - 1.0 / static_cast<double>(n)) > 1e-9)
            throw CapabilityError("exact_ot_oracle requires uniform weights");
    for (double w : b.weights)
        if (std::abs(w - 1.0 / static_cast<double>(m)) > 1e-9)
            throw CapabilityError("exact_ot_oracle requires uniform weights");

    const Matrix C = cost_matrix(a, b).entries;
    if (n == m) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        double best = std::numeric_limits<double>::infinity();
        do {
            double c = 0.0;
            for (std::size_t i = 0; i < n; ++i) c += C(i, perm[i]);
            best = std::min(best, c / static_cast<double>(n));
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }
    if (n == 1 || m == 1) {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) c += a.weights[i] * b.weights[j] * C(i, j);
        return c;
    }

    std::vector<std::pair<int, int>> edges;
    edges.reserve(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
    std::vector<std::pair<int, int>> current;
    double best = std::numeric_limits<double>::infinity();
    detail::enumerate_trees(0, 0, detail::DisjointSet(n + m), current, edges, C, n, m, best);
    return best;
}

}  // namespace sinkflow::ot
