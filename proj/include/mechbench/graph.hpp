#pragma once
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace mech::ad {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xffffffffu;

enum class Op : std::uint8_t {
    Const,     ///< a = index into constant pool
    Input,     ///< a = slot index
    Add, Sub, Mul, Div,
    Neg, Sin, Cos, Tanh, Softplus, Sigmoid, Exp, Log, Sqrt,
    Sum,       ///< n-ary sum; args[a .. a+b)
    Dot,       ///< sum of products; args[a .. a+2b) as (u0,v0,u1,v1,...)
    SolveOut,  ///< a = solve record index, b = output component
};

struct Node {
    Op op;
    NodeId a = 0;
    NodeId b = 0;
};

/// Dense linear system embedded in a graph: A x = rhs, with A read from
/// dim*dim argument nodes (row-major) and rhs from dim argument nodes.
/// The dim output values are exposed as consecutive SolveOut nodes.
struct SolveRec {
    std::uint32_t dim = 0;
    std::uint32_t mat = 0;    ///< offset into args
    std::uint32_t rhs = 0;    ///< offset into args
    NodeId first_out = 0;
    double max_condition = 1e12;
};

/// Thrown when a linear solve inside a graph is numerically degenerate
/// (condition estimate above the record's bound).
struct degenerate_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when an evaluation or gradient encounters non-finite values.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/**
 * Append-only record of a scalar computation. Nodes reference only earlier
 * nodes, so the graph is acyclic by construction and a single forward sweep
 * evaluates it. Builders constant-fold aggressively; derivative transforms
 * (autodiff.hpp) append new nodes to the same tape, which is what lets
 * differentiation compose to arbitrary depth.
 */
class Tape {
public:
    std::vector<Node> nodes;
    std::vector<double> consts;
    std::vector<NodeId> args;
    std::vector<SolveRec> solves;

    std::uint32_t n_slots = 0;

    std::size_t size() const { return nodes.size(); }

    bool is_const(NodeId id) const { return nodes[id].op == Op::Const; }
    double const_value(NodeId id) const { return consts[nodes[id].a]; }

    NodeId constant(double v) {
        auto it = const_cache_.find(v);
        if (it != const_cache_.end()) return it->second;
        NodeId id = push(Op::Const, static_cast<NodeId>(consts.size()), 0);
        consts.push_back(v);
        const_cache_.emplace(v, id);
        return id;
    }

    NodeId input(std::uint32_t slot) {
        if (slot >= n_slots) n_slots = slot + 1;
        return push(Op::Input, slot, 0);
    }

    std::vector<NodeId> inputs(std::uint32_t first_slot, std::uint32_t count) {
        std::vector<NodeId> ids(count);
        for (std::uint32_t i = 0; i < count; ++i) ids[i] = input(first_slot + i);
        return ids;
    }

    NodeId add(NodeId x, NodeId y) {
        if (is_const(x) && is_const(y)) return constant(const_value(x) + const_value(y));
        if (is_const(x) && const_value(x) == 0.0) return y;
        if (is_const(y) && const_value(y) == 0.0) return x;
        return push(Op::Add, x, y);
    }

    NodeId sub(NodeId x, NodeId y) {
        if (is_const(x) && is_const(y)) return constant(const_value(x) - const_value(y));
        if (is_const(y) && const_value(y) == 0.0) return x;
        if (is_const(x) && const_value(x) == 0.0) return neg(y);
        return push(Op::Sub, x, y);
    }

    NodeId mul(NodeId x, NodeId y) {
        if (is_const(x) && is_const(y)) return constant(const_value(x) * const_value(y));
        if (is_const(x)) {
            if (const_value(x) == 1.0) return y;
            if (const_value(x) == 0.0) return constant(0.0);
        }
        if (is_const(y)) {
            if (const_value(y) == 1.0) return x;
            if (const_value(y) == 0.0) return constant(0.0);
        }
        return push(Op::Mul, x, y);
    }

    NodeId div(NodeId x, NodeId y) {
        if (is_const(x) && is_const(y)) return constant(const_value(x) / const_value(y));
        if (is_const(y) && const_value(y) == 1.0) return x;
        if (is_const(x) && const_value(x) == 0.0) return constant(0.0);
        return push(Op::Div, x, y);
    }

    NodeId neg(NodeId x) {
        if (is_const(x)) return constant(-const_value(x));
        if (nodes[x].op == Op::Neg) return nodes[x].a;
        return push(Op::Neg, x, 0);
    }

    NodeId sin(NodeId x)  { return unary(Op::Sin, x); }
    NodeId cos(NodeId x)  { return unary(Op::Cos, x); }
    NodeId tanh(NodeId x) { return unary(Op::Tanh, x); }
    NodeId softplus(NodeId x) { return unary(Op::Softplus, x); }
    NodeId sigmoid(NodeId x)  { return unary(Op::Sigmoid, x); }
    NodeId exp(NodeId x)  { return unary(Op::Exp, x); }
    NodeId log(NodeId x)  { return unary(Op::Log, x); }
    NodeId sqrt(NodeId x) { return unary(Op::Sqrt, x); }

    NodeId square(NodeId x) { return mul(x, x); }

    /// n-ary sum; folds constants and drops zeros.
    NodeId sum(std::span<const NodeId> terms) {
        double c = 0.0;
        std::vector<NodeId> kept;
        kept.reserve(terms.size());
        for (NodeId t : terms) {
            if (is_const(t)) c += const_value(t);
            else kept.push_back(t);
        }
        if (c != 0.0) kept.push_back(constant(c));
        if (kept.empty()) return constant(0.0);
        if (kept.size() == 1) return kept[0];
        if (kept.size() == 2) return push(Op::Add, kept[0], kept[1]);
        NodeId off = static_cast<NodeId>(args.size());
        args.insert(args.end(), kept.begin(), kept.end());
        return push(Op::Sum, off, static_cast<NodeId>(kept.size()));
    }
    NodeId sum(std::initializer_list<NodeId> terms) {
        return sum(std::span<const NodeId>(terms.begin(), terms.size()));
    }

    /// Sum of products u_k * v_k. Pairs with a constant factor are folded or
    /// rewritten; the remainder becomes a single Dot node.
    NodeId dot(std::span<const NodeId> u, std::span<const NodeId> v) {
        if (u.size() != v.size()) throw std::invalid_argument("dot: length mismatch");
        std::vector<NodeId> pairs;   // interleaved u,v
        std::vector<NodeId> linear;  // terms that reduced to a single node
        pairs.reserve(2 * u.size());
        double c = 0.0;
        for (std::size_t k = 0; k < u.size(); ++k) {
            NodeId a = u[k], b = v[k];
            if (is_const(a) && is_const(b)) { c += const_value(a) * const_value(b); continue; }
            if ((is_const(a) && const_value(a) == 0.0) ||
                (is_const(b) && const_value(b) == 0.0)) continue;
            if (is_const(a) && const_value(a) == 1.0) { linear.push_back(b); continue; }
            if (is_const(b) && const_value(b) == 1.0) { linear.push_back(a); continue; }
            pairs.push_back(a);
            pairs.push_back(b);
        }
        NodeId dot_node = kNoNode;
        if (!pairs.empty()) {
            if (pairs.size() == 2) {
                dot_node = mul(pairs[0], pairs[1]);
            } else {
                NodeId off = static_cast<NodeId>(args.size());
                args.insert(args.end(), pairs.begin(), pairs.end());
                dot_node = push(Op::Dot, off, static_cast<NodeId>(pairs.size() / 2));
            }
        }
        if (dot_node != kNoNode) linear.push_back(dot_node);
        if (c != 0.0) linear.push_back(constant(c));
        return sum(std::span<const NodeId>(linear.data(), linear.size()));
    }

    /// Appends a dim x dim linear solve A x = rhs; returns the dim solution nodes.
    std::vector<NodeId> linear_solve(std::span<const NodeId> a_rowmajor,
                                     std::span<const NodeId> rhs,
                                     double max_condition = 1e12) {
        std::uint32_t n = static_cast<std::uint32_t>(rhs.size());
        if (a_rowmajor.size() != static_cast<std::size_t>(n) * n)
            throw std::invalid_argument("linear_solve: matrix/rhs shape mismatch");
        SolveRec rec;
        rec.dim = n;
        rec.max_condition = max_condition;
        rec.mat = static_cast<std::uint32_t>(args.size());
        args.insert(args.end(), a_rowmajor.begin(), a_rowmajor.end());
        rec.rhs = static_cast<std::uint32_t>(args.size());
        args.insert(args.end(), rhs.begin(), rhs.end());
        rec.first_out = static_cast<NodeId>(nodes.size());
        std::uint32_t solve_idx = static_cast<std::uint32_t>(solves.size());
        std::vector<NodeId> out(n);
        for (std::uint32_t k = 0; k < n; ++k) out[k] = push(Op::SolveOut, solve_idx, k);
        solves.push_back(rec);
        return out;
    }

private:
    std::unordered_map<double, NodeId> const_cache_;

    NodeId push(Op op, NodeId a, NodeId b) {
        nodes.push_back(Node{op, a, b});
        return static_cast<NodeId>(nodes.size() - 1);
    }

    NodeId unary(Op op, NodeId x) {
        if (is_const(x)) {
            double v = const_value(x);
            switch (op) {
                case Op::Sin: return constant(std::sin(v));
                case Op::Cos: return constant(std::cos(v));
                case Op::Tanh: return constant(std::tanh(v));
                case Op::Softplus: return constant(v > 30.0 ? v : std::log1p(std::exp(v)));
                case Op::Sigmoid: return constant(1.0 / (1.0 + std::exp(-v)));
                case Op::Exp: return constant(std::exp(v));
                case Op::Log: return constant(std::log(v));
                case Op::Sqrt: return constant(std::sqrt(v));
                default: break;
            }
        }
        return push(op, x, 0);
    }
};

/// Value-semantics wrapper for ergonomic formula building.
class Expr {
public:
    Expr() : t_(nullptr), id_(kNoNode) {}
    Expr(Tape& t, NodeId id) : t_(&t), id_(id) {}

    NodeId id() const { return id_; }
    Tape& tape() const { return *t_; }

    friend Expr operator+(Expr x, Expr y) { return {x.tape(), x.tape().add(x.id_, y.id_)}; }
    friend Expr operator-(Expr x, Expr y) { return {x.tape(), x.tape().sub(x.id_, y.id_)}; }
    friend Expr operator*(Expr x, Expr y) { return {x.tape(), x.tape().mul(x.id_, y.id_)}; }
    friend Expr operator/(Expr x, Expr y) { return {x.tape(), x.tape().div(x.id_, y.id_)}; }
    friend Expr operator-(Expr x) { return {x.tape(), x.tape().neg(x.id_)}; }

    friend Expr operator+(Expr x, double c) { return x + Expr(x.tape(), x.tape().constant(c)); }
    friend Expr operator+(double c, Expr x) { return x + c; }
    friend Expr operator-(Expr x, double c) { return x - Expr(x.tape(), x.tape().constant(c)); }
    friend Expr operator-(double c, Expr x) { return Expr(x.tape(), x.tape().constant(c)) - x; }
    friend Expr operator*(Expr x, double c) { return x * Expr(x.tape(), x.tape().constant(c)); }
    friend Expr operator*(double c, Expr x) { return x * c; }
    friend Expr operator/(Expr x, double c) { return x / Expr(x.tape(), x.tape().constant(c)); }
    friend Expr operator/(double c, Expr x) { return Expr(x.tape(), x.tape().constant(c)) / x; }

    friend Expr sin(Expr x)  { return {x.tape(), x.tape().sin(x.id_)}; }
    friend Expr cos(Expr x)  { return {x.tape(), x.tape().cos(x.id_)}; }
    friend Expr sqrt(Expr x) { return {x.tape(), x.tape().sqrt(x.id_)}; }
    friend Expr square(Expr x) { return {x.tape(), x.tape().square(x.id_)}; }

private:
    Tape* t_;
    NodeId id_;
};

}  // namespace mech::ad
