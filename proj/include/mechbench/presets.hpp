#pragma once
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechbench/datasets.hpp"

namespace mech {

/// Built-in experiment grid: one config per (system, model) pair, with the
/// published dataset sizes, spans, sampling densities, architectures, epochs,
/// batch sizes, and learning rates. Quantities the source experiments leave
/// unstated (physical constants, IC ranges for some presets, learning rates
/// for the derivative-trained models) use the recorded defaults.
inline std::vector<ExperimentConfig> all_presets(std::uint64_t seed = 2024) {
    std::vector<ExperimentConfig> out;
    const double pi = std::acos(-1.0);

    auto base = [&](const char* name, SystemSpec sys, ModelTag model, Convention conv) {
        ExperimentConfig c;
        c.preset = name;
        c.system = sys;
        c.model = model;
        c.data_convention = conv;
        c.seed = seed;
        return c;
    };
    auto net = [](std::vector<int> sizes) { return MlpSpec{std::move(sizes), Activation::Tanh}; };

    // ---- mass-spring ----
    {
        auto c = base("mass-spring/hnn", SystemSpec::mass_spring(), ModelTag::HNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 50; c.t_span = 3.0; c.samples_per_traj = 30;  // density 10
        c.ic = IcSpec::uniform({-1, -1}, {1, 1});
        c.net = net({2, 256, 256, 1});
        c.epochs = 100; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("mass-spring/lnn", SystemSpec::mass_spring(), ModelTag::LNN,
                      Convention::Lagrangian);
        c.n_trajectories = 10; c.t_span = 10.0; c.samples_per_traj = 1500;
        c.ic = IcSpec::uniform({-2, -1}, {2, 1});
        c.net = net({2, 256, 256, 1});
        c.epochs = 100; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("mass-spring/srnn", SystemSpec::mass_spring(), ModelTag::SRNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 100; c.t_span = 10.0; c.dt = 0.01;
        c.ic = IcSpec::uniform({-1, -1}, {1, 1});
        c.net = net({1, 256, 256, 1});
        c.epochs = 1000; c.batch_size = 32;
        out.push_back(c);
    }

    // ---- pendulum ----
    {
        auto c = base("pendulum/hnn", SystemSpec::pendulum(), ModelTag::HNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 50; c.t_span = 10.0; c.samples_per_traj = 150;  // density 15
        c.ic = IcSpec::uniform({-pi, -2}, {pi, 2});
        c.net = net({2, 128, 128, 128, 1});
        c.epochs = 100; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("pendulum/lnn", SystemSpec::pendulum(), ModelTag::LNN,
                      Convention::Lagrangian);
        c.n_trajectories = 10; c.t_span = 10.0; c.samples_per_traj = 100;
        c.ic = IcSpec::uniform({-pi, -2}, {pi, 2});
        c.net = net({2, 256, 256, 1});
        c.epochs = 200; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("pendulum/srnn", SystemSpec::pendulum(), ModelTag::SRNN,
                      Convention::Hamiltonian);
        // 100 training + 50 testing trajectories via the 2/3 split
        c.n_trajectories = 150; c.split_ratio = 2.0 / 3.0;
        c.t_span = 10.0; c.dt = 0.1;
        c.ic = IcSpec::uniform({-1, -1}, {1, 1});  // libration regime
        c.net = net({1, 256, 256, 1});
        c.epochs = 1000; c.batch_size = 32;
        out.push_back(c);
    }

    // ---- spring pendulum ----
    {
        auto c = base("spring-pendulum/hnn", SystemSpec::spring_pendulum(), ModelTag::HNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 5; c.t_span = 10.0; c.samples_per_traj = 3000;
        c.ic = IcSpec::fixed({1.1, 0.5, 0.0, 0.0});
        c.net = net({4, 256, 256, 1});
        c.epochs = 200; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("spring-pendulum/lnn", SystemSpec::spring_pendulum(), ModelTag::LNN,
                      Convention::Lagrangian);
        c.n_trajectories = 5; c.t_span = 10.0; c.samples_per_traj = 1500;
        c.ic = IcSpec::fixed({1.1, 0.5, 0.0, 0.0});
        c.net = net({4, 256, 256, 1});
        c.epochs = 100; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("spring-pendulum/srnn", SystemSpec::spring_pendulum(), ModelTag::SRNN,
                      Convention::Lagrangian);  // (q, q̇) sequences as published
        c.n_trajectories = 100; c.t_span = 20.0; c.dt = 0.01;
        c.ic = IcSpec::uniform({1.0, 0.4, 0, 0}, {1.2, 0.6, 0, 0});
        c.net = net({2, 256, 256, 1});
        c.epochs = 1000; c.batch_size = 32;
        out.push_back(c);
    }

    // ---- double pendulum ----
    {
        auto c = base("double-pendulum/hnn", SystemSpec::double_pendulum(), ModelTag::HNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 5; c.t_span = 30.0; c.samples_per_traj = 200;
        c.ic = IcSpec::uniform({-1, -1, -0.5, -0.5}, {1, 1, 0.5, 0.5});
        c.net = net({4, 256, 256, 1});
        c.epochs = 1000; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("double-pendulum/lnn", SystemSpec::double_pendulum(), ModelTag::LNN,
                      Convention::Lagrangian);
        c.n_trajectories = 10; c.t_span = 10.0; c.samples_per_traj = 1000;
        c.ic = IcSpec::uniform({-1, -1, -0.5, -0.5}, {1, 1, 0.5, 0.5});
        c.net = net({4, 256, 256, 1});
        c.epochs = 1000; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("double-pendulum/srnn", SystemSpec::double_pendulum(), ModelTag::SRNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 200; c.t_span = 20.0; c.dt = 0.2;
        c.ic = IcSpec::uniform({-1, -1, -0.5, -0.5}, {1, 1, 0.5, 0.5});
        c.net = net({2, 128, 128, 1});
        c.epochs = 200; c.batch_size = 64;
        out.push_back(c);
    }

    // ---- bouncing ball ----
    {
        auto c = base("bouncing-ball/hnn", SystemSpec::bouncing_ball(), ModelTag::HNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 50; c.t_span = 5.0; c.samples_per_traj = 500;  // density 100
        c.ic = IcSpec::uniform({2.5, 0}, {3.0, 0});
        c.net = net({2, 256, 256, 256, 1});
        c.epochs = 1000; c.batch_size = 64;
        c.restitution_train = 0.8; c.restitution_eval = 0.9;  // replicated as published
        out.push_back(c);
    }
    {
        auto c = base("bouncing-ball/lnn", SystemSpec::bouncing_ball(), ModelTag::LNN,
                      Convention::Lagrangian);
        c.n_trajectories = 10; c.t_span = 5.0; c.samples_per_traj = 500;
        c.ic = IcSpec::uniform({2.5, 0}, {3.0, 0});
        c.net = net({2, 128, 128, 1});
        c.epochs = 500; c.batch_size = 64;
        c.restitution_train = 0.8; c.restitution_eval = 0.9;
        out.push_back(c);
    }
    {
        auto c = base("bouncing-ball/srnn", SystemSpec::bouncing_ball(), ModelTag::SRNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 100; c.t_span = 20.0; c.dt = 0.01;
        c.ic = IcSpec::uniform({0.05, 0}, {0.15, 0});
        c.net = net({1, 256, 256, 1});
        c.epochs = 1000; c.batch_size = 64;
        c.restitution_train = 0.8; c.restitution_eval = 0.8;
        c.test_n_trajectories = 5; c.test_t_span = 100.0;
        out.push_back(c);
    }

    // ---- three body ----
    {
        auto c = base("three-body/hnn", SystemSpec::three_body(), ModelTag::HNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 50; c.t_span = 3.0; c.samples_per_traj = 20;
        c.ic = IcSpec::choreography(0.01);
        c.net = net({12, 256, 256, 1});
        c.epochs = 100; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("three-body/lnn", SystemSpec::three_body(), ModelTag::LNN,
                      Convention::Lagrangian);  // spatial 9+9 layout
        c.n_trajectories = 10; c.t_span = 3.0; c.samples_per_traj = 100;
        c.ic = IcSpec::choreography(0.01);
        c.net = net({18, 256, 256, 1});
        c.epochs = 500; c.batch_size = 64;
        out.push_back(c);
    }
    {
        auto c = base("three-body/srnn", SystemSpec::three_body(), ModelTag::SRNN,
                      Convention::Hamiltonian);
        c.n_trajectories = 100; c.t_span = 10.0; c.dt = 0.01;
        // hierarchical triple with randomized orbital phases: the training
        // trajectories tile the invariant torus the T=200 test rollout lives
        // on, and the small box keeps a tube of off-torus states in the data
        c.ic = IcSpec::hierarchical(1e-3);
        c.net = net({6, 256, 256, 1});
        c.epochs = 1000; c.batch_size = 32;
        c.learning_rate = 3e-3;
        c.lr_decay = 1e-3;   // polish phase accuracy once the orbit is learned
        c.srnn_window = 12;  // longer unrolls pin the orbital frequencies
        c.srnn_epoch_windows = 48;  // fewer windows per epoch keeps cost level
        c.test_n_trajectories = 1; c.test_t_span = 200.0;
        out.push_back(c);
    }

    for (auto& c : out) c.validate();
    return out;
}

inline ExperimentConfig find_preset(const std::string& name, std::uint64_t seed = 2024) {
    for (auto& c : all_presets(seed))
        if (c.preset == name) return c;
    throw std::invalid_argument("unknown preset: " + name);
}

inline std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (auto& c : all_presets()) names.push_back(c.preset);
    return names;
}

}  // namespace mech
