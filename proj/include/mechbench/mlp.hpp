#pragma once
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechbench/autodiff.hpp"
#include "mechbench/graph.hpp"
#include "mechbench/rng.hpp"

namespace mech {

enum class Activation { Tanh, Softplus };

inline std::string to_string(Activation a) {
    return a == Activation::Tanh ? "tanh" : "softplus";
}
inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "softplus") return Activation::Softplus;
    throw std::invalid_argument("unknown activation: " + s);
}

/// Architecture of a scalar-output dense network. Hidden layers share one
/// smooth activation; the output is linear.
struct MlpSpec {
    std::vector<int> layer_sizes;
    Activation activation = Activation::Tanh;

    int input_dim() const { return layer_sizes.front(); }
    int n_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (int l = 0; l + 1 < static_cast<int>(layer_sizes.size()); ++l)
            n += std::size_t(layer_sizes[l]) * layer_sizes[l + 1] + layer_sizes[l + 1];
        return n;
    }

    void validate() const {
        if (layer_sizes.size() < 2)
            throw std::invalid_argument("MlpSpec: need at least input and output layer");
        if (layer_sizes.back() != 1)
            throw std::invalid_argument("MlpSpec: output must be scalar");
        for (int s : layer_sizes)
            if (s <= 0) throw std::invalid_argument("MlpSpec: layer sizes must be positive");
    }
};

/// Flat parameter set. Layout per layer: weight matrix row-major
/// [out][in], then bias [out]; layers in order.
struct MlpParams {
    MlpSpec spec;
    std::vector<double> values;

    bool finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

/// Glorot-uniform initialization, per layer in ±sqrt(6/(fan_in+fan_out)).
inline MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    MlpParams p{spec, std::vector<double>(spec.param_count())};
    Rng rng(seed);
    std::size_t at = 0;
    for (int l = 0; l + 1 < static_cast<int>(spec.layer_sizes.size()); ++l) {
        int fan_in = spec.layer_sizes[l], fan_out = spec.layer_sizes[l + 1];
        double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (int i = 0; i < fan_in * fan_out; ++i)
            p.values[at++] = rng.uniform(-bound, bound);
        for (int i = 0; i < fan_out; ++i) p.values[at++] = 0.0;
    }
    return p;
}

/// How network parameters enter a graph: as input slots (trainable) or baked
/// as constants (inference on a fixed parameter set).
struct ParamBinding {
    const MlpParams* bake = nullptr;
    std::uint32_t slot_base = 0;

    static ParamBinding slots(std::uint32_t base) { return {nullptr, base}; }
    static ParamBinding constants(const MlpParams& p) { return {&p, 0}; }
};

/// Appends the network's forward pass to `t`; returns the scalar output node.
inline ad::NodeId build_mlp(ad::Tape& t, const MlpSpec& spec,
                            std::span<const ad::NodeId> x, ParamBinding bind) {
    spec.validate();
    if (static_cast<int>(x.size()) != spec.input_dim())
        throw std::invalid_argument("build_mlp: input dimension mismatch, expected " +
                                    std::to_string(spec.input_dim()) + " got " +
                                    std::to_string(x.size()));
    std::size_t at = 0;
    auto param = [&]() -> ad::NodeId {
        ad::NodeId n = bind.bake ? t.constant(bind.bake->values[at])
                                 : t.input(bind.slot_base + static_cast<std::uint32_t>(at));
        ++at;
        return n;
    };
    std::vector<ad::NodeId> h(x.begin(), x.end());
    for (int l = 0; l + 1 < static_cast<int>(spec.layer_sizes.size()); ++l) {
        int in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
        bool last = (l + 2 == static_cast<int>(spec.layer_sizes.size()));
        std::vector<std::vector<ad::NodeId>> w(out);
        for (int i = 0; i < out; ++i) {
            w[i].resize(in);
            for (int j = 0; j < in; ++j) w[i][j] = param();
        }
        std::vector<ad::NodeId> next(out);
        for (int i = 0; i < out; ++i) {
            ad::NodeId z = t.add(t.dot(w[i], h), param());
            // biases come after the full weight matrix in the flat layout
            next[i] = z;
        }
        if (!last) {
            for (int i = 0; i < out; ++i)
                next[i] = spec.activation == Activation::Tanh ? t.tanh(next[i])
                                                              : t.softplus(next[i]);
        }
        h = std::move(next);
    }
    return h[0];
}

// --- direct (single-shot) operations; hot paths use compiled tapes instead ---

inline void check_input_dim(const MlpParams& p, std::span<const double> x) {
    if (static_cast<int>(x.size()) != p.spec.input_dim())
        throw std::invalid_argument("mlp: input length " + std::to_string(x.size()) +
                                    " does not match spec input dim " +
                                    std::to_string(p.spec.input_dim()));
}

inline double mlp_forward(const MlpParams& p, std::span<const double> x) {
    check_input_dim(p, x);
    ad::Tape t;
    auto xs = t.inputs(0, static_cast<std::uint32_t>(x.size()));
    ad::NodeId out = build_mlp(t, p.spec, xs, ParamBinding::constants(p));
    ad::EvalBuffer buf(t);
    return buf.value(x, out);
}

/// ∇ₓ of the network output. The underlying adjoints are graph nodes, so the
/// same construction nests inside larger graphs (see models/training).
inline std::vector<double> input_gradient(const MlpParams& p, std::span<const double> x) {
    check_input_dim(p, x);
    ad::Tape t;
    auto xs = t.inputs(0, static_cast<std::uint32_t>(x.size()));
    ad::NodeId out = build_mlp(t, p.spec, xs, ParamBinding::constants(p));
    auto g = ad::adjoint_nodes(t, out, xs);
    ad::EvalBuffer buf(t);
    std::vector<double> result(x.size());
    buf.values(x, g, result);
    return result;
}

/// Selected block of ∂²out/∂x∂x (rows × cols index sets).
inline std::vector<double> input_hessian_block(const MlpParams& p,
                                               std::span<const double> x,
                                               std::span<const int> rows,
                                               std::span<const int> cols) {
    check_input_dim(p, x);
    int d = p.spec.input_dim();
    for (int r : rows)
        if (r < 0 || r >= d) throw std::out_of_range("input_hessian_block: row index");
    for (int c : cols)
        if (c < 0 || c >= d) throw std::out_of_range("input_hessian_block: col index");
    ad::Tape t;
    auto xs = t.inputs(0, static_cast<std::uint32_t>(d));
    ad::NodeId out = build_mlp(t, p.spec, xs, ParamBinding::constants(p));
    auto g = ad::adjoint_nodes(t, out, xs);
    std::vector<ad::NodeId> entries;
    entries.reserve(rows.size() * cols.size());
    for (int r : rows) {
        auto row = ad::adjoint_nodes(t, g[r], xs);
        for (int c : cols) entries.push_back(row[c]);
    }
    ad::EvalBuffer buf(t);
    std::vector<double> result(entries.size());
    buf.values(x, entries, result);
    return result;
}

/**
 * Exact reverse-mode gradient of a scalar graph node with respect to a
 * contiguous range of parameter slots. The graph may contain nodes produced
 * by adjoint_nodes (nested derivatives of any depth).
 */
inline std::vector<double> parameter_gradient(const ad::Tape& t, ad::NodeId loss,
                                              std::span<const double> slot_values,
                                              std::uint32_t param_slot_base,
                                              std::size_t param_count) {
    std::vector<double> vals(t.size());
    ad::eval_lanes<1>(t, slot_values, vals);
    if (!std::isfinite(vals[loss]))
        throw ad::numeric_error("parameter_gradient: loss is not finite");
    std::vector<double> adj(t.size());
    std::vector<double> slot_grads(t.n_slots, 0.0);
    ad::reverse_lanes<1>(t, loss, vals, adj, slot_grads);
    std::vector<double> out(param_count);
    for (std::size_t i = 0; i < param_count; ++i) {
        out[i] = slot_grads[param_slot_base + i];
        if (!std::isfinite(out[i]))
            throw ad::numeric_error("parameter_gradient: non-finite gradient entry");
    }
    return out;
}

}  // namespace mech
