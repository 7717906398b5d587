#pragma once
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "mechbench/datasets.hpp"
#include "mechbench/integrators.hpp"
#include "mechbench/mlp.hpp"
#include "mechbench/systems.hpp"

namespace mech {

inline constexpr double kLnnRidge = 1e-6;

/// Learns a scalar H(q,p); dynamics are its symplectic gradient.
struct HnnModel {
    MlpParams net;
};

/// Learns a scalar L(q,q̇); accelerations come from the Euler–Lagrange solve.
struct LnnModel {
    MlpParams net;
    double ridge = kLnnRidge;
};

/// Separable H = K(p) + V(q) as two sub-networks; rolls out via leapfrog.
struct SrnnModel {
    MlpParams k_net;
    MlpParams v_net;
};

/// A network as a scalar field over graph inputs (parameters baked).
inline ScalarFieldBuilder mlp_field(MlpParams p) {
    auto sp = std::make_shared<MlpParams>(std::move(p));
    return [sp](ad::Tape& t, std::span<const ad::NodeId> xs) {
        return build_mlp(t, sp->spec, xs, ParamBinding::constants(*sp));
    };
}

// ---------------------------------------------------------------------------
// HNN
// ---------------------------------------------------------------------------

inline std::vector<double> hnn_time_derivative(const HnnModel& m, const PhaseState& s) {
    if (s.dim() != m.net.spec.input_dim())
        throw std::invalid_argument("hnn_time_derivative: state/net dimension mismatch");
    HamiltonianDerivative flow(mlp_field(m.net), s.dim());
    std::vector<double> out(s.dim());
    flow(s.v, out);
    return out;
}

/// Mean over the batch of ∥∂H/∂p − q̇∥² + ∥∂H/∂q + ṗ∥² (one pooled squared
/// norm of the symplectic-gradient residual).
inline double hnn_loss(const HnnModel& m,
                       const std::vector<std::vector<double>>& states,
                       const std::vector<std::vector<double>>& labels) {
    if (states.empty() || states.size() != labels.size())
        throw std::invalid_argument("hnn_loss: empty or mismatched batch");
    HamiltonianDerivative flow(mlp_field(m.net), static_cast<int>(states[0].size()));
    std::vector<double> pred(states[0].size());
    double total = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        flow(states[i], pred);
        for (std::size_t j = 0; j < pred.size(); ++j) {
            double d = pred[j] - labels[i][j];
            total += d * d;
        }
    }
    return total / double(states.size());
}

// ---------------------------------------------------------------------------
// LNN
// ---------------------------------------------------------------------------

inline std::vector<double> lnn_acceleration(const LnnModel& m, const PhaseState& s) {
    if (s.dim() != m.net.spec.input_dim())
        throw std::invalid_argument("lnn_acceleration: state/net dimension mismatch");
    int n = s.n();
    LagrangianAccel accel(mlp_field(m.net), n, m.ridge);
    std::vector<double> out(n);
    accel(s.v, out);
    return out;
}

inline double lnn_loss(const LnnModel& m,
                       const std::vector<std::vector<double>>& states,
                       const std::vector<std::vector<double>>& labels) {
    if (states.empty() || states.size() != labels.size())
        throw std::invalid_argument("lnn_loss: empty or mismatched batch");
    int n = static_cast<int>(states[0].size()) / 2;
    LagrangianAccel accel(mlp_field(m.net), n, m.ridge);
    std::vector<double> pred(n);
    double total = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        accel(states[i], pred);
        for (int j = 0; j < n; ++j) {
            double d = pred[j] - labels[i][j];
            total += d * d;
        }
    }
    return total / double(states.size());
}

// ---------------------------------------------------------------------------
// SRNN
// ---------------------------------------------------------------------------

/// Compiled V'(q) and K'(p) of an SRNN (or of any pair of scalar fields).
class SeparableModelGrads {
public:
    SeparableModelGrads(const ScalarFieldBuilder& v_field,
                        const ScalarFieldBuilder& k_field, int n)
        : buf_v_(tape_v_), buf_k_(tape_k_) {
        auto qs = tape_v_.inputs(0, static_cast<std::uint32_t>(n));
        gv_ = ad::adjoint_nodes(tape_v_, v_field(tape_v_, qs), qs);
        buf_v_ = ad::EvalBuffer(tape_v_);
        auto ps = tape_k_.inputs(0, static_cast<std::uint32_t>(n));
        gk_ = ad::adjoint_nodes(tape_k_, k_field(tape_k_, ps), ps);
        buf_k_ = ad::EvalBuffer(tape_k_);
    }

    GradFn grad_V() {
        return [this](std::span<const double> q, std::span<double> g) {
            buf_v_.values(q, gv_, g);
        };
    }
    GradFn grad_K() {
        return [this](std::span<const double> p, std::span<double> g) {
            buf_k_.values(p, gk_, g);
        };
    }

private:
    ad::Tape tape_v_, tape_k_;
    std::vector<ad::NodeId> gv_, gk_;
    ad::EvalBuffer buf_v_, buf_k_;
};

inline Trajectory srnn_rollout(const SrnnModel& m, const PhaseState& z0, double dt,
                               std::size_t n_steps) {
    SeparableModelGrads grads(mlp_field(m.v_net), mlp_field(m.k_net), z0.n());
    return leapfrog_integrate(grads.grad_V(), grads.grad_K(), z0, dt, n_steps);
}

/// Σ_{i=1..T} ∥z_i − ẑ_i∥² per trajectory (rollout from its own z0), averaged
/// over the batch. Grids must be uniform.
inline double srnn_loss(const SrnnModel& m, const std::vector<Trajectory>& observed) {
    if (observed.empty()) throw std::invalid_argument("srnn_loss: empty batch");
    int n = static_cast<int>(observed[0].states[0].size()) / 2;
    SeparableModelGrads grads(mlp_field(m.v_net), mlp_field(m.k_net), n);
    auto gv = grads.grad_V();
    auto gk = grads.grad_K();
    double total = 0.0;
    for (const Trajectory& obs : observed) {
        if (obs.size() < 2) throw std::invalid_argument("srnn_loss: trajectory too short");
        double dt = obs.times[1] - obs.times[0];
        for (std::size_t i = 2; i < obs.times.size(); ++i)
            if (std::fabs((obs.times[i] - obs.times[i - 1]) - dt) > 1e-9 * std::fabs(dt))
                throw std::invalid_argument("srnn_loss: non-uniform time grid");
        PhaseState z0{Convention::Hamiltonian, obs.states[0]};
        Trajectory pred = leapfrog_integrate(gv, gk, z0, dt, obs.size() - 1);
        for (std::size_t i = 1; i < obs.size(); ++i)
            for (std::size_t j = 0; j < obs.states[i].size(); ++j) {
                double d = pred.states[i][j] - obs.states[i][j];
                total += d * d;
            }
    }
    return total / double(observed.size());
}

// ---------------------------------------------------------------------------
// Field-level rollouts. The same entry points serve trained networks and the
// analytic-energy fields, which is what the exact-model oracles rely on.
// ---------------------------------------------------------------------------

inline IntegratorConfig eval_rk45() {
    IntegratorConfig c;
    c.method = Method::RK45;
    c.rtol = 1e-9;
    c.atol = 1e-12;
    return c;
}

inline Trajectory rollout_hamiltonian_field(const ScalarFieldBuilder& field, int dim,
                                            const PhaseState& s0,
                                            std::span<const double> sample_times,
                                            const IntegratorConfig& icfg = eval_rk45()) {
    HamiltonianDerivative flow(field, dim);
    DerivFn f = [&flow](std::span<const double> y, std::span<double> dy) { flow(y, dy); };
    if (icfg.method == Method::Euler) {
        double dt = sample_times[1] - sample_times[0];
        return euler_integrate(f, s0.v, dt, sample_times.size() - 1, sample_times[0]);
    }
    return rk45_integrate(f, s0.v, sample_times, icfg);
}

inline Trajectory rollout_lagrangian_field(const ScalarFieldBuilder& field, int n,
                                           double ridge, const PhaseState& s0,
                                           std::span<const double> sample_times,
                                           const IntegratorConfig& icfg = eval_rk45()) {
    LagrangianAccel accel(field, n, ridge);
    std::vector<double> a(n);
    DerivFn f = [&](std::span<const double> y, std::span<double> dy) {
        for (int i = 0; i < n; ++i) dy[i] = y[n + i];
        accel(y, {a.data(), a.size()});
        for (int i = 0; i < n; ++i) dy[n + i] = a[i];
    };
    if (icfg.method == Method::Euler) {
        double dt = sample_times[1] - sample_times[0];
        return euler_integrate(f, s0.v, dt, sample_times.size() - 1, sample_times[0]);
    }
    return rk45_integrate(f, s0.v, sample_times, icfg);
}

/// Bouncing-ball variant: fixed-step Euler with the external contact rule.
inline Trajectory rollout_hamiltonian_field_contact(const ScalarFieldBuilder& field,
                                                    const PhaseState& s0, double dt,
                                                    std::size_t n_steps, double rho) {
    HamiltonianDerivative flow(field, 2);
    DerivFn f = [&flow](std::span<const double> y, std::span<double> dy) { flow(y, dy); };
    return integrate_with_contact(f, s0.v, dt, n_steps, rho);
}

inline Trajectory rollout_lagrangian_field_contact(const ScalarFieldBuilder& field,
                                                   double ridge, const PhaseState& s0,
                                                   double dt, std::size_t n_steps,
                                                   double rho) {
    LagrangianAccel accel(field, 1, ridge);
    std::vector<double> a(1);
    DerivFn f = [&](std::span<const double> y, std::span<double> dy) {
        dy[0] = y[1];
        accel(y, {a.data(), 1});
        dy[1] = a[0];
    };
    return integrate_with_contact(f, s0.v, dt, n_steps, rho);
}

/// Model-appropriate rollout on the dataset grid for one test initial state.
inline Trajectory rollout_model(const ExperimentConfig& cfg, const HnnModel& m,
                                const PhaseState& s0,
                                std::span<const double> sample_times) {
    if (cfg.system.tag == SystemTag::BouncingBall) {
        double dt = sample_times[1] - sample_times[0];
        return rollout_hamiltonian_field_contact(mlp_field(m.net), s0, dt,
                                                 sample_times.size() - 1,
                                                 cfg.restitution_eval);
    }
    return rollout_hamiltonian_field(mlp_field(m.net), cfg.phase_dim(), s0, sample_times);
}

inline Trajectory rollout_model(const ExperimentConfig& cfg, const LnnModel& m,
                                const PhaseState& s0,
                                std::span<const double> sample_times) {
    int n = cfg.phase_dim() / 2;
    if (cfg.system.tag == SystemTag::BouncingBall) {
        double dt = sample_times[1] - sample_times[0];
        return rollout_lagrangian_field_contact(mlp_field(m.net), m.ridge, s0, dt,
                                                sample_times.size() - 1,
                                                cfg.restitution_eval);
    }
    return rollout_lagrangian_field(mlp_field(m.net), n, m.ridge, s0, sample_times);
}

inline Trajectory rollout_model(const ExperimentConfig& cfg, const SrnnModel& m,
                                const PhaseState& s0,
                                std::span<const double> sample_times) {
    double dt = sample_times[1] - sample_times[0];
    std::size_t n_steps = sample_times.size() - 1;
    if (cfg.system.tag == SystemTag::BouncingBall) {
        SeparableModelGrads grads(mlp_field(m.v_net), mlp_field(m.k_net), s0.n());
        return leapfrog_with_contact(grads.grad_V(), grads.grad_K(), s0, dt, n_steps,
                                     cfg.restitution_eval);
    }
    return srnn_rollout(m, s0, dt, n_steps);
}

}  // namespace mech
