#pragma once
#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "mechbench/graph.hpp"

namespace mech::ad {

namespace detail {

/// LU with partial pivoting, in place. Returns false if exactly singular.
inline bool lu_factor(double* a, int n, int* piv) {
    for (int i = 0; i < n; ++i) piv[i] = i;
    for (int c = 0; c < n; ++c) {
        int best = c;
        double bv = std::fabs(a[c * n + c]);
        for (int r = c + 1; r < n; ++r) {
            double v = std::fabs(a[r * n + c]);
            if (v > bv) { bv = v; best = r; }
        }
        if (bv == 0.0) return false;
        if (best != c) {
            for (int j = 0; j < n; ++j) std::swap(a[c * n + j], a[best * n + j]);
            std::swap(piv[c], piv[best]);
        }
        double inv = 1.0 / a[c * n + c];
        for (int r = c + 1; r < n; ++r) {
            double f = a[r * n + c] * inv;
            a[r * n + c] = f;
            for (int j = c + 1; j < n; ++j) a[r * n + j] -= f * a[c * n + j];
        }
    }
    return true;
}

inline void lu_solve(const double* lu, int n, const int* piv, const double* b, double* x) {
    for (int i = 0; i < n; ++i) x[i] = b[piv[i]];
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) x[i] -= lu[i * n + j] * x[j];
    for (int i = n - 1; i >= 0; --i) {
        for (int j = i + 1; j < n; ++j) x[i] -= lu[i * n + j] * x[j];
        x[i] /= lu[i * n + i];
    }
}

/// Infinity-norm condition estimate via the explicit inverse (n is small here).
inline double condition_inf(const double* a, const double* lu, int n, const int* piv) {
    double norm_a = 0.0;
    std::vector<double> e(n), col(n);
    std::vector<double> inv_row_sum(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += std::fabs(a[i * n + j]);
        norm_a = std::max(norm_a, s);
    }
    for (int j = 0; j < n; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        lu_solve(lu, n, piv, e.data(), col.data());
        for (int i = 0; i < n; ++i) inv_row_sum[i] += std::fabs(col[i]);
    }
    double norm_inv = 0.0;
    for (int i = 0; i < n; ++i) norm_inv = std::max(norm_inv, inv_row_sum[i]);
    return norm_a * norm_inv;
}

/// Solve A x = b with a condition guard. A is overwritten.
inline void guarded_solve(std::vector<double>& a, int n, const double* b, double* x,
                          double max_condition, bool transpose) {
    std::vector<double> a0;
    if (max_condition > 0) a0 = a;  // keep original for the condition estimate
    if (transpose) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) std::swap(a[i * n + j], a[j * n + i]);
    }
    std::vector<int> piv(n);
    if (!lu_factor(a.data(), n, piv.data()))
        throw degenerate_error("linear solve: singular matrix");
    if (max_condition > 0) {
        double cond = condition_inf(a0.data(), a.data(), n, piv.data());
        if (!(cond <= max_condition))
            throw degenerate_error("linear solve: condition estimate " +
                                   std::to_string(cond) + " exceeds bound");
    }
    lu_solve(a.data(), n, piv.data(), b, x);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Numeric forward evaluation and reverse-mode sweep, laned over L samples.
// Value layout: vals[node * L + lane]; slot layout: slots[slot * L + lane].
// ---------------------------------------------------------------------------

template <int L>
void eval_lanes(const Tape& t, std::span<const double> slots, std::span<double> vals,
                NodeId upto = kNoNode) {
    const std::size_t n = (upto == kNoNode) ? t.nodes.size() : upto + 1;
    const Node* nodes = t.nodes.data();
    const NodeId* args = t.args.data();
    double* v = vals.data();
    for (std::size_t i = 0; i < n; ++i) {
        const Node nd = nodes[i];
        double* out = v + i * L;
        switch (nd.op) {
            case Op::Const: {
                double c = t.consts[nd.a];
                for (int l = 0; l < L; ++l) out[l] = c;
                break;
            }
            case Op::Input: {
                const double* s = slots.data() + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = s[l];
                break;
            }
            case Op::Add: {
                const double* x = v + std::size_t(nd.a) * L;
                const double* y = v + std::size_t(nd.b) * L;
                for (int l = 0; l < L; ++l) out[l] = x[l] + y[l];
                break;
            }
            case Op::Sub: {
                const double* x = v + std::size_t(nd.a) * L;
                const double* y = v + std::size_t(nd.b) * L;
                for (int l = 0; l < L; ++l) out[l] = x[l] - y[l];
                break;
            }
            case Op::Mul: {
                const double* x = v + std::size_t(nd.a) * L;
                const double* y = v + std::size_t(nd.b) * L;
                for (int l = 0; l < L; ++l) out[l] = x[l] * y[l];
                break;
            }
            case Op::Div: {
                const double* x = v + std::size_t(nd.a) * L;
                const double* y = v + std::size_t(nd.b) * L;
                for (int l = 0; l < L; ++l) out[l] = x[l] / y[l];
                break;
            }
            case Op::Neg: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = -x[l];
                break;
            }
            case Op::Sin: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = std::sin(x[l]);
                break;
            }
            case Op::Cos: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = std::cos(x[l]);
                break;
            }
            case Op::Tanh: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = std::tanh(x[l]);
                break;
            }
            case Op::Softplus: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l)
                    out[l] = x[l] > 30.0 ? x[l] : std::log1p(std::exp(x[l]));
                break;
            }
            case Op::Sigmoid: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = 1.0 / (1.0 + std::exp(-x[l]));
                break;
            }
            case Op::Exp: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = std::exp(x[l]);
                break;
            }
            case Op::Log: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = std::log(x[l]);
                break;
            }
            case Op::Sqrt: {
                const double* x = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) out[l] = std::sqrt(x[l]);
                break;
            }
            case Op::Sum: {
                const NodeId* a = args + nd.a;
                double acc[L];
                for (int l = 0; l < L; ++l) acc[l] = 0.0;
                for (NodeId k = 0; k < nd.b; ++k) {
                    const double* x = v + std::size_t(a[k]) * L;
                    for (int l = 0; l < L; ++l) acc[l] += x[l];
                }
                for (int l = 0; l < L; ++l) out[l] = acc[l];
                break;
            }
            case Op::Dot: {
                const NodeId* a = args + nd.a;
                double acc[L];
                for (int l = 0; l < L; ++l) acc[l] = 0.0;
                for (NodeId k = 0; k < nd.b; ++k) {
                    const double* x = v + std::size_t(a[2 * k]) * L;
                    const double* y = v + std::size_t(a[2 * k + 1]) * L;
                    for (int l = 0; l < L; ++l) acc[l] += x[l] * y[l];
                }
                for (int l = 0; l < L; ++l) out[l] = acc[l];
                break;
            }
            case Op::SolveOut: {
                if (nd.b != 0) break;  // filled when component 0 was reached
                const SolveRec& rec = t.solves[nd.a];
                const int dim = static_cast<int>(rec.dim);
                std::vector<double> a(dim * dim), b(dim), x(dim);
                for (int l = 0; l < L; ++l) {
                    for (int k = 0; k < dim * dim; ++k)
                        a[k] = v[std::size_t(args[rec.mat + k]) * L + l];
                    for (int k = 0; k < dim; ++k)
                        b[k] = v[std::size_t(args[rec.rhs + k]) * L + l];
                    detail::guarded_solve(a, dim, b.data(), x.data(), rec.max_condition, false);
                    for (int k = 0; k < dim; ++k)
                        v[(std::size_t(rec.first_out) + k) * L + l] = x[k];
                }
                break;
            }
        }
    }
}

/**
 * Reverse-mode accumulation over the tape values produced by eval_lanes.
 * Seeds d(root)/d(root) = seed and adds each input slot's adjoint into
 * slot_grads (caller zeroes it). Exact reverse-mode: every rule is the local
 * partial of the recorded operation, including the linear-solve adjoint
 * (solve with the transposed matrix).
 */
template <int L>
void reverse_lanes(const Tape& t, NodeId root, std::span<const double> vals,
                   std::span<double> adj, std::span<double> slot_grads,
                   double seed = 1.0) {
    const Node* nodes = t.nodes.data();
    const NodeId* args = t.args.data();
    const double* v = vals.data();
    double* ad = adj.data();
    std::memset(ad, 0, sizeof(double) * (std::size_t(root) + 1) * L);
    for (int l = 0; l < L; ++l) ad[std::size_t(root) * L + l] = seed;

    for (std::int64_t i = root; i >= 0; --i) {
        const Node nd = nodes[i];
        double* g = ad + std::size_t(i) * L;
        bool any = false;
        for (int l = 0; l < L; ++l) any |= (g[l] != 0.0);
        if (!any && nd.op != Op::SolveOut) continue;
        switch (nd.op) {
            case Op::Const: break;
            case Op::Input: {
                double* s = slot_grads.data() + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) s[l] += g[l];
                break;
            }
            case Op::Add: {
                double* x = ad + std::size_t(nd.a) * L;
                double* y = ad + std::size_t(nd.b) * L;
                for (int l = 0; l < L; ++l) { x[l] += g[l]; y[l] += g[l]; }
                break;
            }
            case Op::Sub: {
                double* x = ad + std::size_t(nd.a) * L;
                double* y = ad + std::size_t(nd.b) * L;
                for (int l = 0; l < L; ++l) { x[l] += g[l]; y[l] -= g[l]; }
                break;
            }
            case Op::Mul: {
                double* x = ad + std::size_t(nd.a) * L;
                double* y = ad + std::size_t(nd.b) * L;
                const double* xv = v + std::size_t(nd.a) * L;
                const double* yv = v + std::size_t(nd.b) * L;
                for (int l = 0; l < L; ++l) { x[l] += g[l] * yv[l]; y[l] += g[l] * xv[l]; }
                break;
            }
            case Op::Div: {
                double* x = ad + std::size_t(nd.a) * L;
                double* y = ad + std::size_t(nd.b) * L;
                const double* yv = v + std::size_t(nd.b) * L;
                const double* ov = v + std::size_t(i) * L;
                for (int l = 0; l < L; ++l) {
                    double inv = 1.0 / yv[l];
                    x[l] += g[l] * inv;
                    y[l] -= g[l] * ov[l] * inv;
                }
                break;
            }
            case Op::Neg: {
                double* x = ad + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) x[l] -= g[l];
                break;
            }
            case Op::Sin: {
                double* x = ad + std::size_t(nd.a) * L;
                const double* xv = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) x[l] += g[l] * std::cos(xv[l]);
                break;
            }
            case Op::Cos: {
                double* x = ad + std::size_t(nd.a) * L;
                const double* xv = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) x[l] -= g[l] * std::sin(xv[l]);
                break;
            }
            case Op::Tanh: {
                double* x = ad + std::size_t(nd.a) * L;
                const double* ov = v + std::size_t(i) * L;
                for (int l = 0; l < L; ++l) x[l] += g[l] * (1.0 - ov[l] * ov[l]);
                break;
            }
            case Op::Softplus: {
                double* x = ad + std::size_t(nd.a) * L;
                const double* xv = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) x[l] += g[l] / (1.0 + std::exp(-xv[l]));
                break;
            }
            case Op::Sigmoid: {
                double* x = ad + std::size_t(nd.a) * L;
                const double* ov = v + std::size_t(i) * L;
                for (int l = 0; l < L; ++l) x[l] += g[l] * ov[l] * (1.0 - ov[l]);
                break;
            }
            case Op::Exp: {
                double* x = ad + std::size_t(nd.a) * L;
                const double* ov = v + std::size_t(i) * L;
                for (int l = 0; l < L; ++l) x[l] += g[l] * ov[l];
                break;
            }
            case Op::Log: {
                double* x = ad + std::size_t(nd.a) * L;
                const double* xv = v + std::size_t(nd.a) * L;
                for (int l = 0; l < L; ++l) x[l] += g[l] / xv[l];
                break;
            }
            case Op::Sqrt: {
                double* x = ad + std::size_t(nd.a) * L;
                const double* ov = v + std::size_t(i) * L;
                for (int l = 0; l < L; ++l) x[l] += g[l] * 0.5 / ov[l];
                break;
            }
            case Op::Sum: {
                const NodeId* a = args + nd.a;
                for (NodeId k = 0; k < nd.b; ++k) {
                    double* x = ad + std::size_t(a[k]) * L;
                    for (int l = 0; l < L; ++l) x[l] += g[l];
                }
                break;
            }
            case Op::Dot: {
                const NodeId* a = args + nd.a;
                for (NodeId k = 0; k < nd.b; ++k) {
                    double* x = ad + std::size_t(a[2 * k]) * L;
                    double* y = ad + std::size_t(a[2 * k + 1]) * L;
                    const double* xv = v + std::size_t(a[2 * k]) * L;
                    const double* yv = v + std::size_t(a[2 * k + 1]) * L;
                    for (int l = 0; l < L; ++l) {
                        x[l] += g[l] * yv[l];
                        y[l] += g[l] * xv[l];
                    }
                }
                break;
            }
            case Op::SolveOut: {
                const SolveRec& rec = t.solves[nd.a];
                const int dim = static_cast<int>(rec.dim);
                // Process the whole record once, at the highest-index output
                // the sweep visits (components above the root have adjoint 0);
                // all uses of every component lie above it, so the output
                // adjoints are final here.
                if (nd.b != rec.dim - 1 && i != root) break;
                const int seen = static_cast<int>(i - rec.first_out) + 1;
                std::vector<double> a(dim * dim), xbar(dim), lambda(dim);
                for (int l = 0; l < L; ++l) {
                    bool lane_any = false;
                    for (int k = 0; k < dim; ++k) {
                        xbar[k] = k < seen ? ad[(std::size_t(rec.first_out) + k) * L + l] : 0.0;
                        lane_any |= (xbar[k] != 0.0);
                    }
                    if (!lane_any) continue;
                    for (int k = 0; k < dim * dim; ++k)
                        a[k] = v[std::size_t(args[rec.mat + k]) * L + l];
                    // A^T lambda = xbar; then rhs_bar = lambda, A_bar = -lambda x^T.
                    detail::guarded_solve(a, dim, xbar.data(), lambda.data(), 0.0, true);
                    for (int k = 0; k < dim; ++k)
                        ad[std::size_t(args[rec.rhs + k]) * L + l] += lambda[k];
                    for (int r = 0; r < dim; ++r)
                        for (int c = 0; c < dim; ++c)
                            ad[std::size_t(args[rec.mat + r * dim + c]) * L + l] -=
                                lambda[r] * v[(std::size_t(rec.first_out) + c) * L + l];
                }
                i = rec.first_out;  // skip the remaining components
                break;
            }
        }
    }
}

/// Scratch buffers for repeated single-sample evaluation of one tape.
class EvalBuffer {
public:
    explicit EvalBuffer(const Tape& t) : tape_(&t) {}

    /// Forward-evaluate the full tape and return the value of `node`.
    double value(std::span<const double> slots, NodeId node) {
        vals_.resize(tape_->size());
        eval_lanes<1>(*tape_, slots, vals_);
        return vals_[node];
    }

    /// Forward-evaluate the full tape and gather several node values.
    void values(std::span<const double> slots, std::span<const NodeId> nodes,
                std::span<double> out) {
        vals_.resize(tape_->size());
        eval_lanes<1>(*tape_, slots, vals_);
        for (std::size_t i = 0; i < nodes.size(); ++i) out[i] = vals_[nodes[i]];
    }

    /// Numeric gradient of `root` with respect to every slot (after value()/values()).
    void slot_gradient(NodeId root, std::span<double> grads) {
        adj_.resize(tape_->size());
        std::fill(grads.begin(), grads.end(), 0.0);
        reverse_lanes<1>(*tape_, root, vals_, adj_, grads);
    }

    const std::vector<double>& raw_values() const { return vals_; }

private:
    const Tape* tape_;
    std::vector<double> vals_;
    std::vector<double> adj_;
};

// ---------------------------------------------------------------------------
// Symbolic (graph-transform) differentiation: the adjoint of `root` with
// respect to each requested node is returned as a new node on the same tape,
// so results can be differentiated again.
// ---------------------------------------------------------------------------

namespace detail {

/// One pending adjoint contribution: either a node, or a lazy product x*y
/// (kept unexpanded so that fan-in collapses into a single Dot node).
struct Contrib {
    NodeId x;
    NodeId y;  // kNoNode => plain term x
};

inline NodeId combine_contribs(Tape& t, std::vector<Contrib>& cs) {
    if (cs.empty()) return t.constant(0.0);
    if (cs.size() == 1) {
        const Contrib& c = cs[0];
        return c.y == kNoNode ? c.x : t.mul(c.x, c.y);
    }
    std::vector<NodeId> u, v, linear;
    for (const Contrib& c : cs) {
        if (c.y == kNoNode) linear.push_back(c.x);
        else { u.push_back(c.x); v.push_back(c.y); }
    }
    NodeId acc = kNoNode;
    if (!u.empty()) acc = t.dot(u, v);
    if (!linear.empty()) {
        NodeId s = t.sum(std::span<const NodeId>(linear.data(), linear.size()));
        acc = (acc == kNoNode) ? s : t.add(acc, s);
    }
    return acc;
}

}  // namespace detail

/**
 * Graph-transform reverse sweep. Only nodes that lie between the `wrt` set and
 * `root` receive adjoint nodes; everything else is skipped, which keeps
 * higher-order transforms from dragging in parameter-only subgraphs.
 */
inline std::vector<NodeId> adjoint_nodes(Tape& t, NodeId root,
                                         std::span<const NodeId> wrt) {
    const std::size_t n = root + 1;
    std::vector<char> active(n, 0);
    for (NodeId w : wrt)
        if (w <= root) active[w] = 1;
    // Forward sweep: a node is active if any operand is.
    for (std::size_t i = 0; i < n; ++i) {
        if (active[i]) continue;
        const Node& nd = t.nodes[i];
        switch (nd.op) {
            case Op::Const:
            case Op::Input:
                break;
            case Op::Add: case Op::Sub: case Op::Mul: case Op::Div:
                active[i] = active[nd.a] | active[nd.b];
                break;
            case Op::Neg: case Op::Sin: case Op::Cos: case Op::Tanh:
            case Op::Softplus: case Op::Sigmoid: case Op::Exp: case Op::Log:
            case Op::Sqrt:
                active[i] = active[nd.a];
                break;
            case Op::Sum: {
                for (NodeId k = 0; k < nd.b && !active[i]; ++k)
                    active[i] = active[t.args[nd.a + k]];
                break;
            }
            case Op::Dot: {
                for (NodeId k = 0; k < 2 * nd.b && !active[i]; ++k)
                    active[i] = active[t.args[nd.a + k]];
                break;
            }
            case Op::SolveOut: {
                const SolveRec& rec = t.solves[nd.a];
                for (std::uint32_t k = 0; k < rec.dim * rec.dim && !active[i]; ++k)
                    active[i] = active[t.args[rec.mat + k]];
                for (std::uint32_t k = 0; k < rec.dim && !active[i]; ++k)
                    active[i] = active[t.args[rec.rhs + k]];
                break;
            }
        }
    }

    std::vector<std::vector<detail::Contrib>> contribs(n);
    std::vector<NodeId> adj(n, kNoNode);
    NodeId one = t.constant(1.0);

    auto push_to = [&](NodeId target, detail::Contrib c) {
        if (active[target]) contribs[target].push_back(c);
    };

    if (active[root]) contribs[root].push_back({one, kNoNode});

    for (std::int64_t i = root; i >= 0; --i) {
        if (!active[i] || contribs[i].empty()) continue;
        NodeId g = detail::combine_contribs(t, contribs[i]);
        contribs[i].clear();
        contribs[i].shrink_to_fit();
        adj[i] = g;
        if (t.is_const(g) && t.const_value(g) == 0.0) continue;
        const Node nd = t.nodes[i];  // copy: t.nodes may reallocate below
        switch (nd.op) {
            case Op::Const:
            case Op::Input:
                break;
            case Op::Add:
                push_to(nd.a, {g, kNoNode});
                push_to(nd.b, {g, kNoNode});
                break;
            case Op::Sub:
                push_to(nd.a, {g, kNoNode});
                push_to(nd.b, {t.neg(g), kNoNode});
                break;
            case Op::Mul:
                push_to(nd.a, {g, nd.b});
                push_to(nd.b, {g, nd.a});
                break;
            case Op::Div: {
                NodeId inv_b = t.div(one, nd.b);
                push_to(nd.a, {g, inv_b});
                // d/db (a/b) = -y/b where y is this node
                push_to(nd.b, {t.neg(t.mul(g, static_cast<NodeId>(i))), inv_b});
                break;
            }
            case Op::Neg:
                push_to(nd.a, {t.neg(g), kNoNode});
                break;
            case Op::Sin:
                push_to(nd.a, {g, t.cos(nd.a)});
                break;
            case Op::Cos:
                push_to(nd.a, {t.neg(g), t.sin(nd.a)});
                break;
            case Op::Tanh: {
                NodeId y = static_cast<NodeId>(i);
                push_to(nd.a, {g, t.sub(one, t.mul(y, y))});
                break;
            }
            case Op::Softplus:
                push_to(nd.a, {g, t.sigmoid(nd.a)});
                break;
            case Op::Sigmoid: {
                NodeId y = static_cast<NodeId>(i);
                push_to(nd.a, {g, t.mul(y, t.sub(one, y))});
                break;
            }
            case Op::Exp:
                push_to(nd.a, {g, static_cast<NodeId>(i)});
                break;
            case Op::Log:
                push_to(nd.a, {g, t.div(one, nd.a)});
                break;
            case Op::Sqrt: {
                NodeId y = static_cast<NodeId>(i);
                push_to(nd.a, {g, t.div(t.constant(0.5), y)});
                break;
            }
            case Op::Sum:
                for (NodeId k = 0; k < nd.b; ++k)
                    push_to(t.args[nd.a + k], {g, kNoNode});
                break;
            case Op::Dot:
                for (NodeId k = 0; k < nd.b; ++k) {
                    NodeId u = t.args[nd.a + 2 * k], v = t.args[nd.a + 2 * k + 1];
                    push_to(u, {g, v});
                    push_to(v, {g, u});
                }
                break;
            case Op::SolveOut:
                throw std::logic_error(
                    "symbolic differentiation through a linear solve is not supported");
        }
    }

    std::vector<NodeId> out(wrt.size());
    NodeId zero = t.constant(0.0);
    for (std::size_t k = 0; k < wrt.size(); ++k)
        out[k] = (wrt[k] <= root && adj[wrt[k]] != kNoNode) ? adj[wrt[k]] : zero;
    return out;
}

}  // namespace mech::ad
