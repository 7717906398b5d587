#pragma once
// Shared test utilities: finite-difference oracles and loss-gradient probes
// built independently of the code paths they check.
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "mechbench/metrics.hpp"
#include "mechbench/models.hpp"
#include "mechbench/rng.hpp"
#include "mechbench/training.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor = 1e-3) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

/// Central finite difference of a scalar function along one coordinate.
inline double fd_partial(const std::function<double(std::span<const double>)>& f,
                         std::vector<double> x, std::size_t i, double h = 1e-6) {
    double xi = x[i];
    x[i] = xi + h;
    double up = f(x);
    x[i] = xi - h;
    double dn = f(x);
    return (up - dn) / (2.0 * h);
}

/// Loss value as a plain function of the flat parameter vector, evaluated with
/// the reference (model-level, non-training) implementations.
inline double hnn_loss_at(const mech::MlpSpec& spec, std::span<const double> params,
                          const std::vector<std::vector<double>>& states,
                          const std::vector<std::vector<double>>& labels) {
    mech::HnnModel m{{spec, {params.begin(), params.end()}}};
    return mech::hnn_loss(m, states, labels);
}

inline double lnn_loss_at(const mech::MlpSpec& spec, std::span<const double> params,
                          const std::vector<std::vector<double>>& states,
                          const std::vector<std::vector<double>>& labels,
                          double ridge) {
    mech::LnnModel m{{spec, {params.begin(), params.end()}}, ridge};
    return mech::lnn_loss(m, states, labels);
}

inline double srnn_loss_at(const mech::MlpSpec& spec, std::span<const double> k_params,
                           std::span<const double> v_params,
                           const std::vector<mech::Trajectory>& observed) {
    mech::SrnnModel m{{spec, {k_params.begin(), k_params.end()}},
                      {spec, {v_params.begin(), v_params.end()}}};
    return mech::srnn_loss(m, observed);
}

/// Analytic loss + parameter gradient via the same tape layout the trainers
/// use (parameters in leading slots, one sample's inputs after them).
struct LossProbe {
    mech::ad::Tape tape;
    mech::ad::NodeId loss{0};
    std::size_t n_params = 0;
    std::vector<double> slots;  // params first, then sample slots

    std::pair<double, std::vector<double>> eval(std::span<const double> params) {
        for (std::size_t i = 0; i < n_params; ++i) slots[i] = params[i];
        std::vector<double> vals(tape.size());
        std::vector<double> grad = mech::parameter_gradient(
            tape, loss, slots, 0, n_params);
        mech::ad::EvalBuffer buf(tape);
        double v = buf.value(slots, loss);
        return {v, std::move(grad)};
    }
};

inline mech::ad::NodeId sq_norm_diff(mech::ad::Tape& t,
                                     std::span<const mech::ad::NodeId> a,
                                     std::span<const mech::ad::NodeId> b) {
    std::vector<mech::ad::NodeId> terms;
    for (std::size_t i = 0; i < a.size(); ++i)
        terms.push_back(t.square(t.sub(a[i], b[i])));
    return t.sum(terms);
}

/// HNN single-sample loss graph: ∥J∇H − ż∥².
inline LossProbe hnn_probe(const mech::MlpSpec& spec, std::span<const double> state,
                           std::span<const double> label) {
    namespace ad = mech::ad;
    LossProbe p;
    p.n_params = spec.param_count();
    auto P = static_cast<std::uint32_t>(p.n_params);
    int dim = spec.input_dim(), n = dim / 2;
    auto xs = p.tape.inputs(P, static_cast<std::uint32_t>(dim));
    ad::NodeId h = mech::build_mlp(p.tape, spec, xs, mech::ParamBinding::slots(0));
    auto g = ad::adjoint_nodes(p.tape, h, xs);
    auto lbl = p.tape.inputs(P + dim, static_cast<std::uint32_t>(dim));
    std::vector<ad::NodeId> pred(dim);
    for (int i = 0; i < n; ++i) {
        pred[i] = g[n + i];
        pred[n + i] = p.tape.neg(g[i]);
    }
    p.loss = sq_norm_diff(p.tape, pred, lbl);
    p.slots.assign(p.n_params + 2 * dim, 0.0);
    for (int i = 0; i < dim; ++i) {
        p.slots[P + i] = state[i];
        p.slots[P + dim + i] = label[i];
    }
    return p;
}

/// LNN single-sample loss graph: ∥M⁻¹(∇_q L − (∂²L/∂q̇∂q) q̇) − a∥².
inline LossProbe lnn_probe(const mech::MlpSpec& spec, std::span<const double> state,
                           std::span<const double> label, double ridge) {
    namespace ad = mech::ad;
    LossProbe p;
    p.n_params = spec.param_count();
    auto P = static_cast<std::uint32_t>(p.n_params);
    int dim = spec.input_dim(), n = dim / 2;
    auto xs = p.tape.inputs(P, static_cast<std::uint32_t>(dim));
    ad::NodeId l = mech::build_mlp(p.tape, spec, xs, mech::ParamBinding::slots(0));
    auto g = ad::adjoint_nodes(p.tape, l, xs);
    std::vector<ad::NodeId> mat(std::size_t(n) * n), rhs(n);
    ad::NodeId rid = p.tape.constant(ridge);
    for (int i = 0; i < n; ++i) {
        auto row = ad::adjoint_nodes(p.tape, g[n + i], xs);
        std::vector<ad::NodeId> dots;
        for (int j = 0; j < n; ++j) {
            mat[std::size_t(i) * n + j] = row[n + j];
            dots.push_back(p.tape.mul(row[j], xs[n + j]));
        }
        mat[std::size_t(i) * n + i] = p.tape.add(mat[std::size_t(i) * n + i], rid);
        rhs[i] = p.tape.sub(g[i], p.tape.sum(dots));
    }
    auto acc = p.tape.linear_solve(mat, rhs);
    auto lbl = p.tape.inputs(P + dim, static_cast<std::uint32_t>(n));
    p.loss = sq_norm_diff(p.tape, acc, lbl);
    p.slots.assign(p.n_params + dim + n, 0.0);
    for (int i = 0; i < dim; ++i) p.slots[P + i] = state[i];
    for (int i = 0; i < n; ++i) p.slots[P + dim + i] = label[i];
    return p;
}

/// SRNN window loss graph: symbolic leapfrog rollout against observations.
/// Parameter layout: K net first, then V net (matching the trainer).
inline LossProbe srnn_probe(const mech::MlpSpec& spec, const mech::Trajectory& window) {
    namespace ad = mech::ad;
    LossProbe p;
    std::size_t pc = spec.param_count();
    p.n_params = 2 * pc;
    auto P = static_cast<std::uint32_t>(p.n_params);
    int n = spec.input_dim();
    double dt = window.times[1] - window.times[0];
    std::size_t steps = window.size() - 1;

    auto qs = p.tape.inputs(P, static_cast<std::uint32_t>(n));
    auto ps = p.tape.inputs(P + n, static_cast<std::uint32_t>(n));
    std::vector<ad::NodeId> q(qs.begin(), qs.end()), mom(ps.begin(), ps.end());
    auto obs = p.tape.inputs(P + 2 * n, static_cast<std::uint32_t>(steps * 2 * n));

    auto grad_of = [&](std::uint32_t base, std::span<const ad::NodeId> in) {
        ad::NodeId e = mech::build_mlp(p.tape, spec, in, mech::ParamBinding::slots(base));
        return ad::adjoint_nodes(p.tape, e, in);
    };
    ad::NodeId half = p.tape.constant(0.5 * dt), full = p.tape.constant(dt);
    std::vector<ad::NodeId> terms;
    auto gv = grad_of(static_cast<std::uint32_t>(pc), q);
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<ad::NodeId> ph(n), q1(n), p1(n);
        for (int i = 0; i < n; ++i)
            ph[i] = p.tape.sub(mom[i], p.tape.mul(half, gv[i]));
        auto gk = grad_of(0, ph);
        for (int i = 0; i < n; ++i) q1[i] = p.tape.add(q[i], p.tape.mul(full, gk[i]));
        gv = grad_of(static_cast<std::uint32_t>(pc), q1);
        for (int i = 0; i < n; ++i)
            p1[i] = p.tape.sub(ph[i], p.tape.mul(half, gv[i]));
        for (int i = 0; i < n; ++i) {
            terms.push_back(p.tape.square(
                p.tape.sub(q1[i], obs[s * 2 * n + i])));
            terms.push_back(p.tape.square(
                p.tape.sub(p1[i], obs[s * 2 * n + n + i])));
        }
        q = std::move(q1);
        mom = std::move(p1);
    }
    p.loss = p.tape.sum(terms);
    p.slots.assign(p.n_params + 2 * n + steps * 2 * n, 0.0);
    for (int i = 0; i < 2 * n; ++i) p.slots[P + i] = window.states[0][i];
    for (std::size_t s = 0; s < steps; ++s)
        for (int i = 0; i < 2 * n; ++i)
            p.slots[P + 2 * n + s * 2 * n + i] = window.states[s + 1][i];
    return p;
}

// ---------------------------------------------------------------------------
// Gradient-oracle sweep: random small networks, analytic vs finite difference
// ---------------------------------------------------------------------------

struct OracleReport {
    int cases = 0;
    double max_input_grad = 0.0;
    double max_hessian = 0.0;
    double max_hnn = 0.0;
    double max_lnn = 0.0;
    double max_srnn = 0.0;
    double max_value_gap = 0.0;  // probe loss vs reference loss implementation
};

inline OracleReport run_gradient_oracles(int n_cases, std::uint64_t seed,
                                         int fd_params_per_case = 12) {
    using namespace mech;
    OracleReport rep;
    Rng rng(seed);
    for (int c = 0; c < n_cases; ++c) {
        int n = 1 + int(rng.below(2));  // 1 or 2 coordinates
        int dim = 2 * n;
        MlpSpec spec{{dim, 8, 8, 1},
                     rng.below(2) ? Activation::Tanh : Activation::Softplus};
        MlpParams params = init_mlp(spec, rng.next_u64());
        for (double& v : params.values) v += rng.uniform(-0.3, 0.3);

        std::vector<double> x(dim), label(dim), acc(n);
        for (double& v : x) v = rng.uniform(-1.5, 1.5);
        for (double& v : label) v = rng.uniform(-1.0, 1.0);
        for (double& v : acc) v = rng.uniform(-1.0, 1.0);

        // input gradient and Hessian of the raw network
        auto forward = [&](std::span<const double> xi) {
            return mlp_forward(params, xi);
        };
        auto grad = input_gradient(params, x);
        for (int i = 0; i < dim; ++i)
            rep.max_input_grad = std::max(
                rep.max_input_grad, rel_err(grad[i], fd_partial(forward, x, i)));
        std::vector<int> idx(dim);
        for (int i = 0; i < dim; ++i) idx[i] = i;
        auto hess = input_hessian_block(params, x, idx, idx);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) {
                auto gi = [&](std::span<const double> xi) {
                    return input_gradient(params, xi)[i];
                };
                rep.max_hessian = std::max(
                    rep.max_hessian,
                    rel_err(hess[std::size_t(i) * dim + j], fd_partial(gi, x, j, 1e-5)));
            }

        auto sample_params = [&](std::size_t count) {
            std::vector<std::size_t> out;
            for (int k = 0; k < fd_params_per_case; ++k)
                out.push_back(std::size_t(rng.below(count)));
            return out;
        };

        // HNN loss parameter gradient
        {
            auto probe = hnn_probe(spec, x, label);
            auto [v, g] = probe.eval(params.values);
            rep.max_value_gap = std::max(
                rep.max_value_gap,
                std::fabs(v - hnn_loss_at(spec, params.values, {x}, {label})));
            for (std::size_t pi : sample_params(params.values.size())) {
                auto f = [&](std::span<const double> pv) {
                    return hnn_loss_at(spec, pv, {x}, {label});
                };
                rep.max_hnn = std::max(rep.max_hnn,
                                       rel_err(g[pi], fd_partial(f, params.values, pi)));
            }
        }
        // LNN loss parameter gradient (through the Euler-Lagrange solve)
        {
            const double ridge = 1e-3;  // keep random Hessians well conditioned
            auto probe = lnn_probe(spec, x, acc, ridge);
            auto [v, g] = probe.eval(params.values);
            rep.max_value_gap = std::max(
                rep.max_value_gap,
                std::fabs(v - lnn_loss_at(spec, params.values, {x}, {acc}, ridge)));
            for (std::size_t pi : sample_params(params.values.size())) {
                auto f = [&](std::span<const double> pv) {
                    return lnn_loss_at(spec, pv, {x}, {acc}, ridge);
                };
                rep.max_lnn = std::max(rep.max_lnn,
                                       rel_err(g[pi], fd_partial(f, params.values, pi)));
            }
        }
        // SRNN window loss parameter gradient (through the leapfrog rollout)
        {
            MlpSpec sep{{n, 8, 8, 1}, spec.activation};
            MlpParams kp = init_mlp(sep, rng.next_u64());
            MlpParams vp = init_mlp(sep, rng.next_u64());
            for (double& v : kp.values) v += rng.uniform(-0.3, 0.3);
            for (double& v : vp.values) v += rng.uniform(-0.3, 0.3);
            mech::Trajectory window;
            int steps = 3;
            for (int s = 0; s <= steps; ++s) {
                window.times.push_back(0.1 * s);
                std::vector<double> z(dim);
                for (double& v : z) v = rng.uniform(-1.0, 1.0);
                window.states.push_back(std::move(z));
            }
            auto probe = srnn_probe(sep, window);
            std::vector<double> flat(kp.values);
            flat.insert(flat.end(), vp.values.begin(), vp.values.end());
            auto [v, g] = probe.eval(flat);
            rep.max_value_gap = std::max(
                rep.max_value_gap,
                std::fabs(v - srnn_loss_at(sep, kp.values, vp.values, {window})));
            for (std::size_t pi : sample_params(flat.size())) {
                auto f = [&](std::span<const double> pv) {
                    std::span<const double> kpv(pv.data(), kp.values.size());
                    std::span<const double> vpv(pv.data() + kp.values.size(),
                                                vp.values.size());
                    return srnn_loss_at(sep, kpv, vpv, {window});
                };
                rep.max_srnn = std::max(rep.max_srnn,
                                        rel_err(g[pi], fd_partial(f, flat, pi)));
            }
        }
        ++rep.cases;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Integrator probes
// ---------------------------------------------------------------------------

/// |y(T) − y(0)| after one analytic mass-spring period under RK45.
inline double rk45_period_error() {
    using namespace mech;
    auto sys = SystemSpec::mass_spring();
    HamiltonianDerivative flow(system_hamiltonian_field(sys), 2);
    DerivFn f = [&](std::span<const double> y, std::span<double> dy) { flow(y, dy); };
    double period = 2.0 * std::acos(-1.0) * std::sqrt(sys.m / sys.k);
    std::vector<double> ts = {0.0, period};
    IntegratorConfig cfg;
    cfg.rtol = 1e-9;
    cfg.atol = 1e-12;
    std::vector<double> y0 = {0.7, -0.3};
    Trajectory tr = rk45_integrate(f, y0, ts, cfg);
    return std::max(std::fabs(tr.states[1][0] - 0.7), std::fabs(tr.states[1][1] + 0.3));
}

/// Observed order from halving a forced maximum step (3 refinements).
inline double rk45_convergence_order() {
    using namespace mech;
    auto sys = SystemSpec::pendulum();
    HamiltonianDerivative flow(system_hamiltonian_field(sys), 2);
    DerivFn f = [&](std::span<const double> y, std::span<double> dy) { flow(y, dy); };
    std::vector<double> ts = {0.0, 2.0};
    IntegratorConfig fine;
    fine.rtol = 1e-13;
    fine.atol = 1e-14;
    std::vector<double> y0 = {1.2, 0.3};
    auto ref = rk45_integrate(f, y0, ts, fine).states[1];
    std::vector<double> errs;
    double h = 0.2;
    for (int r = 0; r < 4; ++r, h *= 0.5) {
        IntegratorConfig cfg;
        cfg.rtol = 1e30;  // acceptance forced; only max_step limits the step
        cfg.atol = 1e30;
        cfg.max_step = h;
        auto y = rk45_integrate(f, y0, ts, cfg).states[1];
        errs.push_back(std::max(std::fabs(y[0] - ref[0]), std::fabs(y[1] - ref[1])));
    }
    double order = 1e9;
    for (std::size_t i = 1; i < errs.size(); ++i)
        order = std::min(order, std::log2(errs[i - 1] / errs[i]));
    return order;
}

/// |det J − 1| of one leapfrog step map (finite-difference Jacobian).
inline double leapfrog_det_error() {
    using namespace mech;
    auto sys = SystemSpec::pendulum();
    int n = 1;
    ScalarFieldBuilder h_field = system_hamiltonian_field(sys);
    mech::SeparableModelGrads grads(
        [&](ad::Tape& t, std::span<const ad::NodeId> q) {
            std::vector<ad::NodeId> full(q.begin(), q.end());
            full.push_back(t.constant(0.0));
            return h_field(t, full);
        },
        [&](ad::Tape& t, std::span<const ad::NodeId> p) {
            std::vector<ad::NodeId> full{t.constant(0.0)};
            full.insert(full.end(), p.begin(), p.end());
            return h_field(t, full);
        },
        n);
    auto gv = grads.grad_V();
    auto gk = grads.grad_K();
    auto step = [&](std::span<const double> z) {
        PhaseState s{Convention::Hamiltonian, {z.begin(), z.end()}};
        return leapfrog_integrate(gv, gk, s, 0.1, 1).states[1];
    };
    std::vector<double> z0 = {0.8, -0.4};
    double h = 1e-6;
    double J[2][2];
    for (int j = 0; j < 2; ++j) {
        auto zp = z0, zm = z0;
        zp[j] += h;
        zm[j] -= h;
        auto up = step(zp), dn = step(zm);
        for (int i = 0; i < 2; ++i) J[i][j] = (up[i] - dn[i]) / (2 * h);
    }
    return std::fabs(J[0][0] * J[1][1] - J[0][1] * J[1][0] - 1.0);
}

/// Forward n steps then backward n steps; max |z − z0|.
inline double leapfrog_reversibility_error(std::size_t n_steps = 1000) {
    using namespace mech;
    auto sys = SystemSpec::mass_spring();
    ScalarFieldBuilder h_field = system_hamiltonian_field(sys);
    mech::SeparableModelGrads grads(
        [&](ad::Tape& t, std::span<const ad::NodeId> q) {
            std::vector<ad::NodeId> full(q.begin(), q.end());
            full.push_back(t.constant(0.0));
            return h_field(t, full);
        },
        [&](ad::Tape& t, std::span<const ad::NodeId> p) {
            std::vector<ad::NodeId> full{t.constant(0.0)};
            full.insert(full.end(), p.begin(), p.end());
            return h_field(t, full);
        },
        1);
    auto gv = grads.grad_V();
    auto gk = grads.grad_K();
    PhaseState z0{Convention::Hamiltonian, {0.9, 0.2}};
    auto fwd = leapfrog_integrate(gv, gk, z0, 0.05, n_steps);
    PhaseState zend{Convention::Hamiltonian, fwd.states.back()};
    auto bwd = leapfrog_integrate(gv, gk, zend, -0.05, n_steps);
    double err = 0.0;
    for (int i = 0; i < 2; ++i)
        err = std::max(err, std::fabs(bwd.states.back()[i] - z0.v[i]));
    return err;
}

/// Long-run leapfrog energy behaviour on the pendulum: max relative drift and
/// the slope of a least-squares line through the energy series (per step).
inline std::pair<double, double> leapfrog_drift_stats(std::size_t n_steps = 100000,
                                                      double dt = 0.1) {
    using namespace mech;
    auto sys = SystemSpec::mass_spring();
    ScalarFieldBuilder h_field = system_hamiltonian_field(sys);
    mech::SeparableModelGrads grads(
        [&](ad::Tape& t, std::span<const ad::NodeId> q) {
            std::vector<ad::NodeId> full(q.begin(), q.end());
            full.push_back(t.constant(0.0));
            return h_field(t, full);
        },
        [&](ad::Tape& t, std::span<const ad::NodeId> p) {
            std::vector<ad::NodeId> full{t.constant(0.0)};
            full.insert(full.end(), p.begin(), p.end());
            return h_field(t, full);
        },
        1);
    PhaseState z0{Convention::Hamiltonian, {1.0, 0.0}};
    auto tr = leapfrog_integrate(grads.grad_V(), grads.grad_K(), z0, dt, n_steps);
    auto [drift, series] = energy_drift(sys, tr);
    // least-squares slope of energy vs step index
    double n = double(series.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        sx += double(i);
        sy += series[i];
        sxx += double(i) * double(i);
        sxy += double(i) * series[i];
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return {drift, std::fabs(slope)};
}

}  // namespace testutil
