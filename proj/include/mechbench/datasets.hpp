#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mechbench/integrators.hpp"
#include "mechbench/mlp.hpp"
#include "mechbench/rng.hpp"
#include "mechbench/systems.hpp"

namespace mech {

enum class ModelTag { HNN, LNN, SRNN };

inline std::string to_string(ModelTag m) {
    switch (m) {
        case ModelTag::HNN: return "hnn";
        case ModelTag::LNN: return "lnn";
        case ModelTag::SRNN: return "srnn";
    }
    return "?";
}
inline ModelTag model_tag_from_string(const std::string& s) {
    if (s == "hnn") return ModelTag::HNN;
    if (s == "lnn") return ModelTag::LNN;
    if (s == "srnn") return ModelTag::SRNN;
    throw std::invalid_argument("unknown model tag: " + s);
}

/// How each trajectory's initial condition is drawn.
struct IcSpec {
    enum class Kind { UniformBox, Fixed, ThreeBodyChoreography, ThreeBodyHierarchical };
    Kind kind = Kind::UniformBox;
    std::vector<double> lo, hi;   // UniformBox: per-component bounds
    std::vector<double> value;    // Fixed
    double perturb = 0.0;         // ThreeBodyChoreography: uniform half-width

    static IcSpec uniform(std::vector<double> lo_, std::vector<double> hi_) {
        IcSpec s; s.kind = Kind::UniformBox; s.lo = std::move(lo_); s.hi = std::move(hi_);
        return s;
    }
    static IcSpec fixed(std::vector<double> v) {
        IcSpec s; s.kind = Kind::Fixed; s.value = std::move(v); return s;
    }
    static IcSpec choreography(double perturb_) {
        IcSpec s; s.kind = Kind::ThreeBodyChoreography; s.perturb = perturb_; return s;
    }
    static IcSpec hierarchical(double perturb_) {
        IcSpec s; s.kind = Kind::ThreeBodyHierarchical; s.perturb = perturb_; return s;
    }
};

/// Everything needed to regenerate a (system, model) experiment: physics,
/// data sizes, sampler, network, and training hyperparameters.
struct ExperimentConfig {
    std::string preset;                 // e.g. "mass-spring/hnn"
    SystemSpec system;
    ModelTag model = ModelTag::HNN;
    Convention data_convention = Convention::Hamiltonian;

    int n_trajectories = 1;
    double t_span = 1.0;
    int samples_per_traj = 0;           // derivative datasets: grid over [0, t_span)
    double dt = 0.0;                    // sequence datasets: fixed grid step
    IcSpec ic;
    double split_ratio = 0.8;
    std::uint64_t seed = 0;

    MlpSpec net;                        // SRNN: used for both K and V sub-nets
    int epochs = 100;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double lr_decay = 1.0;              // lr shrinks geometrically to lr * lr_decay
    int srnn_window = 10;               // training sub-sequence length (steps)
    int srnn_epoch_windows = 0;         // windows drawn per epoch; 0 = one per trajectory
    int avg_tail = 0;                   // average params over last N epochs; 0 = off

    double restitution_train = 0.8;     // bouncing ball only
    double restitution_eval = 0.8;

    // Sequence presets with a separately-generated test set (0 = plain split).
    int test_n_trajectories = 0;
    double test_t_span = 0.0;

    int phase_dim() const { return mech::phase_dim(system, data_convention); }

    void validate() const {
        system.validate();
        net.validate();
        if (n_trajectories < 1) throw std::invalid_argument("config: n_trajectories >= 1");
        if (!(t_span > 0.0)) throw std::invalid_argument("config: t_span > 0");
        if (!(split_ratio > 0.0 && split_ratio < 1.0))
            throw std::invalid_argument("config: split_ratio in (0,1)");
        if (model == ModelTag::SRNN) {
            if (!(dt > 0.0)) throw std::invalid_argument("config: srnn needs dt > 0");
        } else if (samples_per_traj < 1) {
            throw std::invalid_argument("config: samples_per_traj >= 1");
        }
        if (epochs < 0 || batch_size < 1 || !(learning_rate > 0.0))
            throw std::invalid_argument("config: bad training hyperparameters");
        if (!(lr_decay > 0.0) || lr_decay > 1.0)
            throw std::invalid_argument("config: lr_decay in (0, 1]");
        if (srnn_epoch_windows < 0 || avg_tail < 0)
            throw std::invalid_argument("config: srnn_epoch_windows and avg_tail >= 0");
    }
};

/// Per-state supervised pairs: (state, time-derivative) for HNN training or
/// (state, acceleration) for LNN. traj_index enables leakage-free splits.
struct DerivativeDataset {
    ExperimentConfig cfg;
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> labels;
    std::vector<int> traj_index;
    int n_trajectories = 0;

    std::size_t size() const { return inputs.size(); }
};

struct SequenceDataset {
    ExperimentConfig cfg;
    std::vector<Trajectory> trajectories;
};

// ---------------------------------------------------------------------------
// Initial-condition sampling
// ---------------------------------------------------------------------------

namespace detail {

/// Figure-eight three-body choreography (planar, unit masses, G=1): the only
/// well-known stable equal-mass periodic orbit, so long test rollouts stay
/// bounded. Returns the 12-component (q, p) planar state.
inline std::vector<double> figure8_state() {
    const double x1 = 0.97000436, y1 = -0.24308753;
    const double vx3 = -0.93240737, vy3 = -0.86473146;
    return {x1,  y1,  -x1, -y1, 0.0, 0.0,
            -vx3 / 2, -vy3 / 2, -vx3 / 2, -vy3 / 2, vx3, vy3};
}

}  // namespace detail

inline PhaseState sample_initial_condition(const ExperimentConfig& cfg, Rng& rng) {
    const int dim = cfg.phase_dim();
    PhaseState s{cfg.data_convention, std::vector<double>(dim, 0.0)};
    switch (cfg.ic.kind) {
        case IcSpec::Kind::Fixed:
            if (static_cast<int>(cfg.ic.value.size()) != dim)
                throw std::invalid_argument("ic: fixed value has wrong dimension");
            s.v = cfg.ic.value;
            break;
        case IcSpec::Kind::UniformBox:
            if (static_cast<int>(cfg.ic.lo.size()) != dim ||
                static_cast<int>(cfg.ic.hi.size()) != dim)
                throw std::invalid_argument("ic: bounds have wrong dimension");
            for (int i = 0; i < dim; ++i) s.v[i] = rng.uniform(cfg.ic.lo[i], cfg.ic.hi[i]);
            break;
        case IcSpec::Kind::ThreeBodyChoreography: {
            auto base = detail::figure8_state();
            if (cfg.data_convention == Convention::Hamiltonian) {
                s.v = base;
            } else {
                // embed in R^3 with z = 0; unit masses so p = q̇
                for (int b = 0; b < 3; ++b)
                    for (int c = 0; c < 2; ++c) {
                        s.v[3 * b + c] = base[2 * b + c];
                        s.v[9 + 3 * b + c] = base[6 + 2 * b + c];
                    }
            }
            for (double& v : s.v)
                v += rng.uniform(-cfg.ic.perturb, cfg.ic.perturb);
            break;
        }
        case IcSpec::Kind::ThreeBodyHierarchical: {
            // stable triple: unit-mass binary (separation d) whose barycenter
            // and a third body circle each other at distance D; both orbital
            // phases are drawn uniformly so a dataset of short trajectories
            // covers the full invariant torus the long test rollout lives on
            if (cfg.data_convention != Convention::Hamiltonian || dim != 12)
                throw std::invalid_argument("ic: hierarchical needs planar (q, p)");
            const double d = 1.0, D = 6.0;
            const double vb = std::sqrt(0.5 / d);    // binary internal circular speed
            const double vrel = std::sqrt(3.0 / D);  // outer two-body speed
            const double vcom = vrel / 3.0, v3 = 2.0 * vrel / 3.0;
            constexpr double tau = 2.0 * std::numbers::pi;
            const double phi = rng.uniform(0.0, tau);  // outer phase
            const double psi = rng.uniform(0.0, tau);  // binary phase
            const double ux = std::cos(phi), uy = std::sin(phi);
            const double wx = std::cos(psi), wy = std::sin(psi);
            // u⊥ = (-uy, ux), w⊥ = (-wy, wx): counter-clockwise circular motion
            const double bx = -D / 3.0 * ux, by = -D / 3.0 * uy;  // binary COM
            s.v = {bx + d / 2.0 * wx, by + d / 2.0 * wy,
                   bx - d / 2.0 * wx, by - d / 2.0 * wy,
                   2.0 * D / 3.0 * ux, 2.0 * D / 3.0 * uy,
                   vb * -wy + vcom * uy, vb * wx - vcom * ux,
                   -vb * -wy + vcom * uy, -vb * wx - vcom * ux,
                   v3 * -uy, v3 * ux};
            for (double& v : s.v)
                v += rng.uniform(-cfg.ic.perturb, cfg.ic.perturb);
            break;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Ground-truth trajectory generation
// ---------------------------------------------------------------------------

namespace detail {

inline IntegratorConfig truth_rk45() {
    IntegratorConfig c;
    c.method = Method::RK45;
    c.rtol = 1e-9;
    c.atol = 1e-12;
    return c;
}

/// Ground-truth flow field for the configured convention.
inline DerivFn truth_derivative(const ExperimentConfig& cfg,
                                std::shared_ptr<void>& keep_alive) {
    if (cfg.data_convention == Convention::Hamiltonian) {
        auto flow = std::make_shared<HamiltonianDerivative>(
            system_hamiltonian_field(cfg.system), cfg.phase_dim());
        keep_alive = flow;
        return [flow](std::span<const double> y, std::span<double> dy) { (*flow)(y, dy); };
    }
    const int n = cfg.phase_dim() / 2;
    if (cfg.system.tag == SystemTag::ThreeBody) {
        SystemSpec sys = cfg.system;
        return [sys, n](std::span<const double> y, std::span<double> dy) {
            auto acc = three_body_accelerations(sys, y.subspan(0, n));
            for (int i = 0; i < n; ++i) dy[i] = y[n + i];
            for (int i = 0; i < n; ++i) dy[n + i] = acc[i];
        };
    }
    auto accel = std::make_shared<LagrangianAccel>(system_lagrangian_field(cfg.system), n);
    keep_alive = accel;
    return [accel, n](std::span<const double> y, std::span<double> dy) {
        for (int i = 0; i < n; ++i) dy[i] = y[n + i];
        std::vector<double> a(n);
        (*accel)(y, {a.data(), a.size()});
        for (int i = 0; i < n; ++i) dy[n + i] = a[i];
    };
}

/// Whether this system's Hamiltonian is separable H = K(p) + V(q), i.e. the
/// leapfrog update is exact-form for it.
inline bool separable(SystemTag tag) {
    return tag == SystemTag::MassSpring || tag == SystemTag::Pendulum ||
           tag == SystemTag::BouncingBall || tag == SystemTag::ThreeBody;
}

/// V'(q) and K'(p) of the analytic Hamiltonian for separable systems.
/// Builds both half-gradients from one graph of H at (q, p).
struct SeparableGrads {
    ad::Tape tape_v, tape_k;
    std::vector<ad::NodeId> gv, gk;
    ad::EvalBuffer buf_v, buf_k;
    int n;

    explicit SeparableGrads(const SystemSpec& sys, int dim)
        : buf_v(tape_v), buf_k(tape_k), n(dim / 2) {
        {
            auto qs = tape_v.inputs(0, static_cast<std::uint32_t>(n));
            std::vector<ad::NodeId> full(qs);
            for (int i = 0; i < n; ++i) full.push_back(tape_v.constant(0.0));
            ad::NodeId h = hamiltonian_expr(tape_v, sys, full);
            gv = ad::adjoint_nodes(tape_v, h, qs);
            buf_v = ad::EvalBuffer(tape_v);
        }
        {
            auto ps = tape_k.inputs(0, static_cast<std::uint32_t>(n));
            std::vector<ad::NodeId> full;
            for (int i = 0; i < n; ++i) full.push_back(tape_k.constant(0.0));
            full.insert(full.end(), ps.begin(), ps.end());
            ad::NodeId h = hamiltonian_expr(tape_k, sys, full);
            gk = ad::adjoint_nodes(tape_k, h, ps);
            buf_k = ad::EvalBuffer(tape_k);
        }
    }

    GradFn grad_V() {
        return [this](std::span<const double> q, std::span<double> g) {
            buf_v.values(q, gv, g);
        };
    }
    GradFn grad_K() {
        return [this](std::span<const double> p, std::span<double> g) {
            buf_k.values(p, gk, g);
        };
    }
};

}  // namespace detail

/// Ground-truth trajectory for one initial condition on the given grid.
/// RK45 for smooth dynamics; the bouncing ball uses the same fixed-step
/// contact steppers the models are evaluated with.
inline Trajectory generate_truth_trajectory(const ExperimentConfig& cfg,
                                            const PhaseState& s0,
                                            std::span<const double> sample_times) {
    if (cfg.system.tag == SystemTag::BouncingBall) {
        double dt = sample_times[1] - sample_times[0];
        std::size_t n_steps = sample_times.size() - 1;
        double rho = cfg.restitution_train;
        if (cfg.model == ModelTag::SRNN) {
            detail::SeparableGrads grads(cfg.system, 2);
            Trajectory tr = leapfrog_with_contact(grads.grad_V(), grads.grad_K(), s0, dt,
                                                  n_steps, rho, sample_times[0]);
            return tr;
        }
        double m = cfg.system.m, g = cfg.system.g;
        bool lagrangian = cfg.data_convention == Convention::Lagrangian;
        DerivFn f = [m, g, lagrangian](std::span<const double> y, std::span<double> dy) {
            dy[0] = lagrangian ? y[1] : y[1] / m;
            dy[1] = lagrangian ? -g : -m * g;
        };
        return integrate_with_contact(f, s0.v, dt, n_steps, rho, sample_times[0]);
    }
    if (cfg.model == ModelTag::SRNN && detail::separable(cfg.system.tag)) {
        // integrator-matched truth: the same leapfrog family the model rolls
        // out with, so an exact separable model reproduces it to roundoff
        detail::SeparableGrads grads(cfg.system, cfg.phase_dim());
        double dt = sample_times[1] - sample_times[0];
        return leapfrog_integrate(grads.grad_V(), grads.grad_K(), s0, dt,
                                  sample_times.size() - 1, sample_times[0]);
    }
    std::shared_ptr<void> keep;
    DerivFn f = detail::truth_derivative(cfg, keep);
    return rk45_integrate(f, s0.v, sample_times, detail::truth_rk45());
}

/// Uniform derivative-dataset grid: t_j = j · t_span / samples, j < samples.
inline std::vector<double> derivative_grid(const ExperimentConfig& cfg) {
    std::vector<double> ts(cfg.samples_per_traj);
    for (int j = 0; j < cfg.samples_per_traj; ++j)
        ts[j] = double(j) * cfg.t_span / cfg.samples_per_traj;
    return ts;
}

/// Fixed-dt sequence grid: t_j = j · dt, j = 0..⌊span/dt⌋.
inline std::vector<double> sequence_grid(double t_span, double dt) {
    int n = static_cast<int>(std::floor(t_span / dt + 1e-9));
    std::vector<double> ts(n + 1);
    for (int j = 0; j <= n; ++j) ts[j] = double(j) * dt;
    return ts;
}

/// Analytic supervision label at a state: (q̇, ṗ) for HNN, q̈ for LNN.
inline std::vector<double> derivative_label(const ExperimentConfig& cfg,
                                            const PhaseState& s) {
    if (cfg.model == ModelTag::HNN) return hamiltonian_eom(cfg.system, s);
    return lagrangian_accel(cfg.system, s);
}

inline DerivativeDataset generate_derivative_dataset(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.model == ModelTag::SRNN)
        throw std::invalid_argument("generate_derivative_dataset: SRNN uses sequences");
    DerivativeDataset ds;
    ds.cfg = cfg;
    ds.n_trajectories = cfg.n_trajectories;
    auto grid = derivative_grid(cfg);
    const int dim = cfg.phase_dim();
    const int n_out = cfg.model == ModelTag::HNN ? dim : dim / 2;
    ds.inputs.reserve(std::size_t(cfg.n_trajectories) * grid.size());

    // label evaluators compiled once
    std::unique_ptr<HamiltonianDerivative> hflow;
    std::unique_ptr<LagrangianAccel> laccel;
    if (cfg.model == ModelTag::HNN)
        hflow = std::make_unique<HamiltonianDerivative>(system_hamiltonian_field(cfg.system),
                                                        dim);
    else if (cfg.system.tag != SystemTag::ThreeBody)
        laccel = std::make_unique<LagrangianAccel>(system_lagrangian_field(cfg.system),
                                                   dim / 2);

    for (int i = 0; i < cfg.n_trajectories; ++i) {
        Rng rng(derive_seed(cfg.seed, std::uint64_t(i)));
        PhaseState s0 = sample_initial_condition(cfg, rng);
        Trajectory tr;
        try {
            tr = generate_truth_trajectory(cfg, s0, grid);
        } catch (const std::exception& e) {
            throw integration_error("trajectory " + std::to_string(i) + ": " + e.what());
        }
        for (std::size_t j = 0; j < tr.states.size(); ++j) {
            std::vector<double> label(n_out);
            if (hflow) {
                (*hflow)(tr.states[j], label);
            } else if (laccel) {
                std::span<const double> st(tr.states[j]);
                check_configuration(cfg.system, st.subspan(0, dim / 2));
                (*laccel)(st, label);
            } else {
                std::span<const double> st(tr.states[j]);
                auto a = three_body_accelerations(cfg.system, st.subspan(0, dim / 2));
                label = a;
            }
            ds.inputs.push_back(tr.states[j]);
            ds.labels.push_back(std::move(label));
            ds.traj_index.push_back(i);
        }
    }
    return ds;
}

inline SequenceDataset generate_sequence_dataset(const ExperimentConfig& cfg,
                                                 int n_trajectories = 0,
                                                 double t_span = 0.0,
                                                 std::uint64_t seed_offset = 0) {
    cfg.validate();
    if (cfg.model != ModelTag::SRNN)
        throw std::invalid_argument("generate_sequence_dataset: needs an SRNN config");
    SequenceDataset ds;
    ds.cfg = cfg;
    int n_traj = n_trajectories > 0 ? n_trajectories : cfg.n_trajectories;
    auto grid = sequence_grid(t_span > 0.0 ? t_span : cfg.t_span, cfg.dt);
    ds.trajectories.reserve(n_traj);
    for (int i = 0; i < n_traj; ++i) {
        Rng rng(derive_seed(cfg.seed, seed_offset + std::uint64_t(i)));
        PhaseState s0 = sample_initial_condition(cfg, rng);
        try {
            ds.trajectories.push_back(generate_truth_trajectory(cfg, s0, grid));
        } catch (const std::exception& e) {
            throw integration_error("trajectory " + std::to_string(i) + ": " + e.what());
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

namespace detail {

/// Seeded Fisher–Yates; returns a shuffled 0..n-1 permutation.
inline std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng.below(std::uint64_t(i) + 1));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

inline std::vector<char> train_mask(int n_traj, double ratio, std::uint64_t seed) {
    if (n_traj < 2) throw std::invalid_argument("train_test_split: need >= 2 trajectories");
    auto idx = shuffled_indices(n_traj, seed);
    int n_train = static_cast<int>(std::lround(ratio * n_traj));
    n_train = std::clamp(n_train, 1, n_traj - 1);
    std::vector<char> mask(n_traj, 0);
    for (int i = 0; i < n_train; ++i) mask[idx[i]] = 1;
    return mask;
}

}  // namespace detail

/// Whole-trajectory split (no within-trajectory leakage).
inline std::pair<DerivativeDataset, DerivativeDataset>
train_test_split(const DerivativeDataset& ds, double ratio, std::uint64_t seed) {
    auto mask = detail::train_mask(ds.n_trajectories, ratio, seed);
    DerivativeDataset train, test;
    train.cfg = test.cfg = ds.cfg;
    train.n_trajectories = 0;
    test.n_trajectories = 0;
    std::vector<int> remap_train(ds.n_trajectories, -1), remap_test(ds.n_trajectories, -1);
    for (int i = 0; i < ds.n_trajectories; ++i) {
        if (mask[i]) remap_train[i] = train.n_trajectories++;
        else remap_test[i] = test.n_trajectories++;
    }
    for (std::size_t r = 0; r < ds.size(); ++r) {
        int ti = ds.traj_index[r];
        DerivativeDataset& dst = mask[ti] ? train : test;
        dst.inputs.push_back(ds.inputs[r]);
        dst.labels.push_back(ds.labels[r]);
        dst.traj_index.push_back(mask[ti] ? remap_train[ti] : remap_test[ti]);
    }
    return {std::move(train), std::move(test)};
}

inline std::pair<SequenceDataset, SequenceDataset>
train_test_split(const SequenceDataset& ds, double ratio, std::uint64_t seed) {
    int n = static_cast<int>(ds.trajectories.size());
    auto mask = detail::train_mask(n, ratio, seed);
    SequenceDataset train, test;
    train.cfg = test.cfg = ds.cfg;
    for (int i = 0; i < n; ++i)
        (mask[i] ? train : test).trajectories.push_back(ds.trajectories[i]);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Serialization: JSON config/manifest, CSV data
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const SystemSpec& s) {
    j = {{"tag", to_string(s.tag)}, {"m", s.m}, {"k", s.k}, {"l", s.l}, {"l0", s.l0},
         {"g", s.g}, {"G", s.G}, {"m1", s.m1}, {"m2", s.m2}, {"m3", s.m3},
         {"l1", s.l1}, {"l2", s.l2}, {"restitution", s.restitution}};
}
inline void from_json(const nlohmann::json& j, SystemSpec& s) {
    s.tag = system_tag_from_string(j.at("tag").get<std::string>());
    j.at("m").get_to(s.m); j.at("k").get_to(s.k); j.at("l").get_to(s.l);
    j.at("l0").get_to(s.l0); j.at("g").get_to(s.g); j.at("G").get_to(s.G);
    j.at("m1").get_to(s.m1); j.at("m2").get_to(s.m2); j.at("m3").get_to(s.m3);
    j.at("l1").get_to(s.l1); j.at("l2").get_to(s.l2);
    j.at("restitution").get_to(s.restitution);
}

inline void to_json(nlohmann::json& j, const MlpSpec& s) {
    j = {{"layer_sizes", s.layer_sizes}, {"activation", to_string(s.activation)}};
}
inline void from_json(const nlohmann::json& j, MlpSpec& s) {
    j.at("layer_sizes").get_to(s.layer_sizes);
    s.activation = activation_from_string(j.at("activation").get<std::string>());
}

inline void to_json(nlohmann::json& j, const IcSpec& s) {
    switch (s.kind) {
        case IcSpec::Kind::UniformBox:
            j = {{"kind", "uniform"}, {"lo", s.lo}, {"hi", s.hi}};
            break;
        case IcSpec::Kind::Fixed:
            j = {{"kind", "fixed"}, {"value", s.value}};
            break;
        case IcSpec::Kind::ThreeBodyChoreography:
            j = {{"kind", "choreography"}, {"perturb", s.perturb}};
            break;
        case IcSpec::Kind::ThreeBodyHierarchical:
            j = {{"kind", "hierarchical"}, {"perturb", s.perturb}};
            break;
    }
}
inline void from_json(const nlohmann::json& j, IcSpec& s) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "uniform") {
        s.kind = IcSpec::Kind::UniformBox;
        j.at("lo").get_to(s.lo);
        j.at("hi").get_to(s.hi);
    } else if (kind == "fixed") {
        s.kind = IcSpec::Kind::Fixed;
        j.at("value").get_to(s.value);
    } else if (kind == "choreography") {
        s.kind = IcSpec::Kind::ThreeBodyChoreography;
        j.at("perturb").get_to(s.perturb);
    } else if (kind == "hierarchical") {
        s.kind = IcSpec::Kind::ThreeBodyHierarchical;
        j.at("perturb").get_to(s.perturb);
    } else {
        throw std::invalid_argument("unknown ic kind: " + kind);
    }
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"preset", c.preset},
         {"system", c.system},
         {"model", to_string(c.model)},
         {"convention", to_string(c.data_convention)},
         {"n_trajectories", c.n_trajectories},
         {"t_span", c.t_span},
         {"samples_per_traj", c.samples_per_traj},
         {"dt", c.dt},
         {"ic", c.ic},
         {"split_ratio", c.split_ratio},
         {"seed", c.seed},
         {"net", c.net},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"lr_decay", c.lr_decay},
         {"srnn_window", c.srnn_window},
         {"srnn_epoch_windows", c.srnn_epoch_windows},
         {"avg_tail", c.avg_tail},
         {"restitution_train", c.restitution_train},
         {"restitution_eval", c.restitution_eval},
         {"test_n_trajectories", c.test_n_trajectories},
         {"test_t_span", c.test_t_span}};
}
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    j.at("preset").get_to(c.preset);
    j.at("system").get_to(c.system);
    c.model = model_tag_from_string(j.at("model").get<std::string>());
    c.data_convention = convention_from_string(j.at("convention").get<std::string>());
    j.at("n_trajectories").get_to(c.n_trajectories);
    j.at("t_span").get_to(c.t_span);
    j.at("samples_per_traj").get_to(c.samples_per_traj);
    j.at("dt").get_to(c.dt);
    j.at("ic").get_to(c.ic);
    j.at("split_ratio").get_to(c.split_ratio);
    j.at("seed").get_to(c.seed);
    j.at("net").get_to(c.net);
    j.at("epochs").get_to(c.epochs);
    j.at("batch_size").get_to(c.batch_size);
    j.at("learning_rate").get_to(c.learning_rate);
    c.lr_decay = j.value("lr_decay", 1.0);
    j.at("srnn_window").get_to(c.srnn_window);
    c.srnn_epoch_windows = j.value("srnn_epoch_windows", 0);
    c.avg_tail = j.value("avg_tail", 0);
    j.at("restitution_train").get_to(c.restitution_train);
    j.at("restitution_eval").get_to(c.restitution_eval);
    j.at("test_n_trajectories").get_to(c.test_n_trajectories);
    j.at("test_t_span").get_to(c.test_t_span);
}

namespace detail {

inline std::vector<std::string> state_names(const ExperimentConfig& cfg) {
    int n = cfg.phase_dim() / 2;
    std::vector<std::string> names;
    const char* second = cfg.data_convention == Convention::Hamiltonian ? "p" : "v";
    for (int i = 0; i < n; ++i) names.push_back("q" + std::to_string(i));
    for (int i = 0; i < n; ++i) names.push_back(second + std::to_string(i));
    return names;
}

inline std::vector<std::string> label_names(const ExperimentConfig& cfg) {
    int n = cfg.phase_dim() / 2;
    std::vector<std::string> names;
    if (cfg.model == ModelTag::HNN) {
        for (int i = 0; i < n; ++i) names.push_back("dq" + std::to_string(i));
        for (int i = 0; i < n; ++i) names.push_back("dp" + std::to_string(i));
    } else {
        for (int i = 0; i < n; ++i) names.push_back("a" + std::to_string(i));
    }
    return names;
}

inline void write_row(std::ofstream& f, double t, std::span<const double> vals,
                      std::span<const double> more = {}) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", t);
    f << buf;
    for (double v : vals) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        f << ',' << buf;
    }
    for (double v : more) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        f << ',' << buf;
    }
    f << '\n';
}

}  // namespace detail

inline constexpr int kManifestVersion = 1;

/// Writes `<stem>.csv` (columns t, state, labels, plus traj column) and the
/// manifest JSON carrying the full config.
inline void write_derivative_csv(const DerivativeDataset& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "traj,t";
    for (const auto& n : detail::state_names(ds.cfg)) f << ',' << n;
    for (const auto& n : detail::label_names(ds.cfg)) f << ',' << n;
    f << '\n';
    auto grid = derivative_grid(ds.cfg);
    std::vector<int> row_in_traj(ds.n_trajectories, 0);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        int ti = ds.traj_index[r];
        double t = grid[row_in_traj[ti]++ % grid.size()];
        f << ti << ',';
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", t);
        f << buf;
        for (double v : ds.inputs[r]) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            f << ',' << buf;
        }
        for (double v : ds.labels[r]) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            f << ',' << buf;
        }
        f << '\n';
    }
}

inline void write_sequence_csv(const SequenceDataset& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "traj,t";
    for (const auto& n : detail::state_names(ds.cfg)) f << ',' << n;
    f << '\n';
    for (std::size_t ti = 0; ti < ds.trajectories.size(); ++ti) {
        const Trajectory& tr = ds.trajectories[ti];
        for (std::size_t j = 0; j < tr.size(); ++j) {
            f << ti << ',';
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", tr.times[j]);
            f << buf;
            for (double v : tr.states[j]) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                f << ',' << buf;
            }
            f << '\n';
        }
    }
}

inline void write_manifest(const ExperimentConfig& cfg, const std::string& path,
                           nlohmann::json extra = {}) {
    nlohmann::json j;
    j["version"] = kManifestVersion;
    j["config"] = cfg;
    if (!extra.is_null()) j["counts"] = extra;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << '\n';
}

inline ExperimentConfig read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    f >> j;
    if (!j.contains("version") || j["version"].get<int>() != kManifestVersion)
        throw std::runtime_error("manifest version mismatch in " + path);
    return j.at("config").get<ExperimentConfig>();
}

}  // namespace mech
