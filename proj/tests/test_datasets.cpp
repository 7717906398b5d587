#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "mechbench/bench.hpp"
#include "mechbench/datasets.hpp"
#include "mechbench/presets.hpp"

using namespace mech;
namespace tu = testutil;

namespace {

ExperimentConfig small(const char* preset, int n_traj) {
    ExperimentConfig c = find_preset(preset, 4242);
    c.n_trajectories = n_traj;
    return c;
}

}  // namespace

TEST_CASE("derivative dataset generation is bitwise deterministic") {
    auto cfg = small("mass-spring/hnn", 4);
    auto a = generate_derivative_dataset(cfg);
    auto b = generate_derivative_dataset(cfg);
    REQUIRE(a.size() == b.size());
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK(a.size() == std::size_t(4 * cfg.samples_per_traj));
    cfg.seed = 4243;
    auto c = generate_derivative_dataset(cfg);
    CHECK(a.inputs != c.inputs);
}

TEST_CASE("hamiltonian labels equal the symplectic gradient at each state") {
    auto cfg = small("pendulum/hnn", 3);
    auto ds = generate_derivative_dataset(cfg);
    for (std::size_t r = 0; r < ds.size(); r += 17) {
        auto d = hamiltonian_eom(cfg.system, {Convention::Hamiltonian, ds.inputs[r]});
        for (std::size_t j = 0; j < d.size(); ++j)
            CHECK(ds.labels[r][j] == doctest::Approx(d[j]).epsilon(1e-12));
    }
}

TEST_CASE("lagrangian labels equal the analytic accelerations") {
    auto cfg = small("pendulum/lnn", 2);
    auto ds = generate_derivative_dataset(cfg);
    REQUIRE(ds.labels[0].size() == 1);
    for (std::size_t r = 0; r < ds.size(); r += 13) {
        auto a = lagrangian_accel(cfg.system, {Convention::Lagrangian, ds.inputs[r]});
        CHECK(ds.labels[r][0] == doctest::Approx(a[0]).epsilon(1e-12));
    }
}

TEST_CASE("labels agree with finite differences along a dense trajectory") {
    auto cfg = small("mass-spring/hnn", 1);
    cfg.t_span = 1.0;
    cfg.samples_per_traj = 1000;  // dt = 1e-3
    auto ds = generate_derivative_dataset(cfg);
    double dt = cfg.t_span / cfg.samples_per_traj;
    for (std::size_t r = 1; r + 1 < ds.size(); r += 97) {
        for (int j = 0; j < 2; ++j) {
            double fd = (ds.inputs[r + 1][j] - ds.inputs[r - 1][j]) / (2 * dt);
            CHECK(tu::rel_err(ds.labels[r][j], fd) < 1e-5);
        }
    }
}

TEST_CASE("truth trajectories conserve energy") {
    auto cfg = small("spring-pendulum/hnn", 1);
    cfg.samples_per_traj = 200;
    auto ds = generate_derivative_dataset(cfg);
    auto trajs = dataset_trajectories(ds);
    auto [drift, series] = energy_drift(cfg.system, trajs[0]);
    CHECK(drift < 1e-6);
}

TEST_CASE("initial conditions respect the sampling spec") {
    Rng rng(1);
    auto cfg = small("mass-spring/hnn", 1);
    for (int i = 0; i < 50; ++i) {
        auto s = sample_initial_condition(cfg, rng);
        for (double v : s.v) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
    auto fixed = small("spring-pendulum/hnn", 1);
    auto s = sample_initial_condition(fixed, rng);
    CHECK(s.v == std::vector<double>{1.1, 0.5, 0.0, 0.0});
    auto choreo = find_preset("three-body/hnn", 1);
    choreo.ic.perturb = 0.0;
    auto z = sample_initial_condition(choreo, rng);
    CHECK(z.v[0] == doctest::Approx(0.97000436).epsilon(1e-12));
    CHECK(z.v[2] == doctest::Approx(-0.97000436).epsilon(1e-12));
}

TEST_CASE("hierarchical three-body states share energy and carry no net momentum") {
    auto cfg = find_preset("three-body/srnn", 11);
    cfg.ic.perturb = 0.0;
    Rng rng(3);
    auto first = sample_initial_condition(cfg, rng);
    double h0 = hamiltonian(cfg.system, first);
    for (int i = 0; i < 20; ++i) {
        auto s = sample_initial_condition(cfg, rng);
        // zero total momentum: the system stays centered for long rollouts
        for (int c = 0; c < 2; ++c)
            CHECK(s.v[6 + c] + s.v[8 + c] + s.v[10 + c] ==
                  doctest::Approx(0.0).epsilon(1e-12));
        // all phase draws sit in a narrow energy band (the binary-companion
        // cross terms make the energy weakly phase-dependent)
        CHECK(std::fabs(hamiltonian(cfg.system, s) - h0) < 5e-3);
        // binary separation and outer distance match the configuration
        double dx = s.v[0] - s.v[2], dy = s.v[1] - s.v[3];
        CHECK(std::sqrt(dx * dx + dy * dy) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("split is whole-trajectory with sizes to the nearest trajectory") {
    auto cfg = small("mass-spring/hnn", 10);
    auto ds = generate_derivative_dataset(cfg);
    auto [train, test] = train_test_split(ds, 0.8, 99);
    CHECK(train.n_trajectories == 8);
    CHECK(test.n_trajectories == 2);
    CHECK(train.size() + test.size() == ds.size());
    CHECK(train.size() == std::size_t(8 * cfg.samples_per_traj));
    // no row appears in both splits
    for (const auto& row : test.inputs)
        for (const auto& tr_row : train.inputs) CHECK(row != tr_row);
    // 2/3 ratio rounds to nearest
    auto [t2, e2] = train_test_split(ds, 2.0 / 3.0, 99);
    CHECK(t2.n_trajectories == 7);
    // split is deterministic in the seed
    auto [t3, e3] = train_test_split(ds, 0.8, 99);
    CHECK(t3.inputs == train.inputs);
}

TEST_CASE("sequence dataset: uniform grid, bouncing ball stays above floor") {
    auto cfg = small("bouncing-ball/srnn", 2);
    cfg.t_span = 2.0;
    auto ds = generate_sequence_dataset(cfg);
    REQUIRE(ds.trajectories.size() == 2);
    for (const auto& tr : ds.trajectories) {
        CHECK(tr.size() == std::size_t(2.0 / cfg.dt) + 1);
        for (std::size_t i = 1; i < tr.times.size(); ++i)
            CHECK(tr.times[i] - tr.times[i - 1] == doctest::Approx(cfg.dt).epsilon(1e-12));
        for (const auto& s : tr.states) CHECK(s[0] >= 0.0);
    }
}

TEST_CASE("csv and manifest round trip") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "mechbench-test-datasets";
    fs::create_directories(dir);
    auto cfg = small("mass-spring/hnn", 2);
    auto ds = generate_derivative_dataset(cfg);
    auto csv = (dir / "d.csv").string();
    write_derivative_csv(ds, csv);
    std::ifstream f(csv);
    std::string header;
    std::getline(f, header);
    CHECK(header == "traj,t,q0,p0,dq0,dp0");
    std::size_t rows = 0;
    for (std::string line; std::getline(f, line);) ++rows;
    CHECK(rows == ds.size());

    auto man = (dir / "m.json").string();
    write_manifest(cfg, man, {});
    auto back = read_manifest(man);
    CHECK(back.preset == cfg.preset);
    CHECK(back.seed == cfg.seed);
    CHECK(back.n_trajectories == cfg.n_trajectories);
    CHECK(back.net.layer_sizes == cfg.net.layer_sizes);
    CHECK(back.system.tag == cfg.system.tag);
    CHECK(back.ic.lo == cfg.ic.lo);
    fs::remove_all(dir);
}

TEST_CASE("all presets validate and cover the full grid") {
    auto ps = all_presets(7);
    CHECK(ps.size() == 18);
    for (const auto& c : ps) {
        CAPTURE(c.preset);
        CHECK_NOTHROW(c.validate());
        CHECK(c.seed == 7);
        CHECK(c.net.layer_sizes.front() > 0);
    }
    CHECK_THROWS_AS(find_preset("no-such-preset"), std::invalid_argument);
}
