// Acceptance harness: one pass/fail line per top-level requirement.
// Exit code 0 iff every criterion passes.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "mechbench/bench.hpp"

using namespace mech;
namespace tu = testutil;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

struct Criterion {
    std::string name;
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
    void finish(double seconds) {
        std::printf("[%s] %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", name.c_str(), seconds,
                    detail.empty() ? "" : " -- ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++g_failures;
    }
};

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static auto t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// --- criterion 1: analytic gradients vs finite differences ---
void criterion_gradients() {
    Criterion c{"1 gradient oracles (inputs, hessians, all three losses)"};
    double t0 = now_seconds();
    auto rep = tu::run_gradient_oracles(100, 20240817);
    c.require(rep.cases >= 100, "need >= 100 cases");
    c.require(rep.max_input_grad < 1e-5, "input grad " + fmt(rep.max_input_grad));
    c.require(rep.max_hessian < 1e-4, "hessian " + fmt(rep.max_hessian));
    c.require(rep.max_hnn < 1e-4, "hnn loss grad " + fmt(rep.max_hnn));
    c.require(rep.max_lnn < 1e-4, "lnn loss grad " + fmt(rep.max_lnn));
    c.require(rep.max_srnn < 1e-4, "srnn loss grad " + fmt(rep.max_srnn));
    double dt = now_seconds() - t0;
    c.require(dt < 60.0, "over time budget");
    c.finish(dt);
}

// --- criterion 2: integrator properties ---
void criterion_integrators() {
    Criterion c{"2 integrator oracles (period, order, symplectic, drift)"};
    double t0 = now_seconds();
    double period = tu::rk45_period_error();
    c.require(period < 1e-6, "period error " + fmt(period));
    double order = tu::rk45_convergence_order();
    c.require(order >= 4.0, "observed order " + fmt(order));
    double det = tu::leapfrog_det_error();
    c.require(det < 1e-8, "|det J - 1| " + fmt(det));
    double rev = tu::leapfrog_reversibility_error(1000);
    c.require(rev < 1e-9, "reversibility " + fmt(rev));
    auto [drift, slope] = tu::leapfrog_drift_stats(100000, 0.1);
    c.require(drift < 1e-2, "drift " + fmt(drift));
    c.require(slope < 1e-8, "secular slope " + fmt(slope));
    double dt = now_seconds() - t0;
    c.require(dt < 120.0, "over time budget");
    c.finish(dt);
}

// --- criterion 3: the two formulations describe the same dynamics ---
void criterion_formulations() {
    Criterion c{"3 hamiltonian/lagrangian equivalence + momentum conservation"};
    double t0 = now_seconds();
    struct Probe {
        SystemSpec sys;
        std::vector<double> lo, hi;
        double span;
    };
    // double pendulum gets small-amplitude states: over long spans chaos would
    // amplify integrator tolerance differences past any fixed threshold
    std::vector<Probe> probes = {
        {SystemSpec::mass_spring(), {-1, -1}, {1, 1}, 3.0},
        {SystemSpec::pendulum(), {-1.5, -1}, {1.5, 1}, 10.0},
        {SystemSpec::spring_pendulum(), {0.9, -0.4, -0.3, -0.3}, {1.3, 0.4, 0.3, 0.3}, 10.0},
        {SystemSpec::double_pendulum(), {-0.2, -0.2, -0.1, -0.1}, {0.2, 0.2, 0.1, 0.1}, 10.0},
    };
    Rng rng(501);
    for (const auto& pr : probes) {
        double worst = 0.0;
        for (int rep = 0; rep < 3; ++rep) {
            int dim = phase_dim(pr.sys, Convention::Hamiltonian);
            std::vector<double> z(dim);
            for (int i = 0; i < dim; ++i) z[i] = rng.uniform(pr.lo[i], pr.hi[i]);
            PhaseState h0{Convention::Hamiltonian, z};
            std::vector<double> ts;
            for (int i = 0; i <= 100; ++i) ts.push_back(pr.span * i / 100.0);
            IntegratorConfig cfg;
            cfg.rtol = 1e-10;
            cfg.atol = 1e-12;
            auto ham = rollout_hamiltonian_field(system_hamiltonian_field(pr.sys), dim,
                                                 h0, ts, cfg);
            auto lag = rollout_lagrangian_field(system_lagrangian_field(pr.sys), dim / 2,
                                                0.0, to_lagrangian(pr.sys, h0), ts, cfg);
            for (std::size_t i = 0; i < ts.size(); ++i) {
                auto back = to_hamiltonian(pr.sys,
                                           {Convention::Lagrangian, lag.states[i]});
                for (int j = 0; j < dim; ++j)
                    worst = std::max(worst, std::fabs(back.v[j] - ham.states[i][j]));
            }
        }
        c.require(worst < 1e-6, to_string(pr.sys.tag) + " max gap " + fmt(worst));
    }
    // three-body: internal forces cannot move the center of mass
    auto tb = SystemSpec::three_body();
    double worst_p = 0.0;
    for (int k = 0; k < 100; ++k) {
        std::vector<double> pos(6);
        for (double& v : pos) v = rng.uniform(-2, 2);
        pos[0] -= 2.0;
        pos[4] += 2.0;
        auto a = three_body_accelerations(tb, pos);
        for (int d = 0; d < 2; ++d)
            worst_p = std::max(worst_p, std::fabs(tb.m1 * a[d] + tb.m2 * a[2 + d] +
                                                  tb.m3 * a[4 + d]));
    }
    c.require(worst_p < 1e-10, "net force " + fmt(worst_p));
    c.finish(now_seconds() - t0);
}

// --- criterion 4: models with the analytic energies reproduce truth ---
void criterion_exact_models() {
    Criterion c{"4 exact-energy models match ground truth on every preset"};
    double t0 = now_seconds();
    for (const auto& cfg0 : all_presets(2024)) {
        ExperimentConfig cfg = cfg0;
        double tol = cfg.system.tag == SystemTag::BouncingBall ? 1e-2 : 1e-4;
        double mse = 0.0;
        int failures = 0;
        try {
            if (cfg.model == ModelTag::SRNN) {
                if (!detail::separable(cfg.system.tag)) continue;  // see README
                GeneratedData data = generate_data(cfg);
                int n = cfg.phase_dim() / 2;
                auto r = evaluate_separable_fields(
                    cfg, system_potential_field(cfg.system, n),
                    system_kinetic_field(cfg.system, n), data.seq_test);
                mse = r.metrics.mse;
                failures = r.n_failures;
            } else {
                if (cfg.system.tag == SystemTag::BouncingBall)
                    cfg.restitution_eval = cfg.restitution_train;  // same physics
                GeneratedData data = generate_data(cfg);
                EvalResult r =
                    cfg.model == ModelTag::HNN
                        ? evaluate_hamiltonian_field(
                              cfg, system_hamiltonian_field(cfg.system), data.deriv_test)
                        : evaluate_lagrangian_field(
                              cfg, system_lagrangian_field(cfg.system), 0.0,
                              data.deriv_test);
                mse = r.metrics.mse;
                failures = r.n_failures;
            }
        } catch (const std::exception& e) {
            c.require(false, cfg.preset + ": " + e.what());
            continue;
        }
        c.require(failures == 0, cfg.preset + ": " + std::to_string(failures) + " failed rollouts");
        c.require(mse < tol, cfg.preset + " mse " + fmt(mse));
    }
    c.finish(now_seconds() - t0);
}

// results of trained runs, shared across criteria
std::map<std::string, EvalResult> g_runs;

EvalResult run_and_record(const std::string& preset, const std::string& out_dir) {
    auto cfg = find_preset(preset, 2024);
    EvalResult r = run_preset(cfg, out_dir, /*quiet=*/true);
    g_runs[preset] = r;
    return r;
}

// --- criterion 9 (first half runs early so 5 and 8 reuse the artifacts) ---
void criterion_benchmark_determinism(const std::string& dir_a, const std::string& dir_b) {
    Criterion c{"9 metric identities + bitwise benchmark determinism"};
    double t0 = now_seconds();
    auto rows_a = run_benchmark("mass-spring", dir_a, 2024);
    write_benchmark_tables(rows_a, dir_a);
    for (const auto& r : rows_a) {
        g_runs[r.preset] = EvalResult{};
        g_runs[r.preset].metrics = r.metrics;
        c.require(!r.failed, r.preset + " failed: " + r.error);
        c.require(std::fabs(r.metrics.rmse - std::sqrt(r.metrics.mse)) < 1e-12,
                  r.preset + " rmse identity");
        c.require(std::fabs(r.metrics.var - r.metrics.std_ * r.metrics.std_) < 1e-12,
                  r.preset + " var identity");
        c.require(r.metrics.var <= r.metrics.mse + 1e-15, r.preset + " var <= mse");
    }
    auto rows_b = run_benchmark("mass-spring", dir_b, 2024);
    write_benchmark_tables(rows_b, dir_b);
    for (const auto& r : rows_a) {
        for (const char* f : {"metrics.json", "checkpoint.json", "loss.csv"}) {
            std::string fa = dir_a + "/" + r.preset + "/" + f;
            std::string fb = dir_b + "/" + r.preset + "/" + f;
            c.require(slurp(fa) == slurp(fb) && !slurp(fa).empty(),
                      r.preset + "/" + std::string(f) + " differs between runs");
        }
    }
    c.require(slurp(dir_a + "/summary.csv") == slurp(dir_b + "/summary.csv"),
              "summary.csv differs between runs");
    // learned-energy drift for criterion 8 is recomputed from run A's artifacts
    c.finish(now_seconds() - t0);
}

// --- criterion 5: trained mass-spring accuracy ---
void criterion_mass_spring() {
    Criterion c{"5 trained mass-spring accuracy (hnn, srnn)"};
    double t0 = now_seconds();
    c.require(g_runs.count("mass-spring/hnn") > 0, "hnn run missing");
    c.require(g_runs.count("mass-spring/srnn") > 0, "srnn run missing");
    if (c.ok) {
        double hnn = g_runs["mass-spring/hnn"].metrics.mse;
        double srnn = g_runs["mass-spring/srnn"].metrics.mse;
        c.require(hnn < 0.05, "hnn mse " + fmt(hnn));
        c.require(srnn < 0.1, "srnn mse " + fmt(srnn));
    }
    c.finish(now_seconds() - t0);
}

// --- criterion 6: trained three-body accuracy ---
void criterion_three_body(const std::string& out_dir) {
    Criterion c{"6 trained three-body accuracy (hnn, srnn)"};
    double t0 = now_seconds();
    double hnn = run_and_record("three-body/hnn", out_dir).metrics.mse;
    double hnn_t = now_seconds() - t0;
    c.require(hnn < 0.01, "hnn mse " + fmt(hnn));
    c.require(hnn_t < 1200.0, "hnn over time budget");
    double t1 = now_seconds();
    double srnn = run_and_record("three-body/srnn", out_dir).metrics.mse;
    double srnn_t = now_seconds() - t1;
    c.require(srnn < 0.05, "srnn mse " + fmt(srnn));
    c.require(srnn_t < 1200.0, "srnn over time budget");
    c.finish(now_seconds() - t0);
}

// --- criterion 7: chaotic system degrades gracefully, stays finite ---
void criterion_double_pendulum(const std::string& out_dir) {
    Criterion c{"7 double pendulum: finite rollouts, error >= 10x mass-spring"};
    double t0 = now_seconds();
    for (const char* family : {"hnn", "srnn"}) {
        std::string dp = std::string("double-pendulum/") + family;
        std::string ms = std::string("mass-spring/") + family;
        EvalResult r = run_and_record(dp, out_dir);
        for (const auto& tr : r.preds)
            for (const auto& s : tr.states)
                for (double v : s)
                    if (!std::isfinite(v)) c.require(false, dp + " non-finite state");
        c.require(g_runs.count(ms) > 0, ms + " baseline missing");
        if (g_runs.count(ms)) {
            double ratio = r.metrics.mse / g_runs[ms].metrics.mse;
            c.require(ratio >= 10.0, dp + " mse only " + fmt(ratio) + "x baseline");
        }
    }
    c.finish(now_seconds() - t0);
}

// --- criterion 8: energy behaviour of the trained mass-spring hnn ---
void criterion_energy(const std::string& run_dir) {
    Criterion c{"8 trained hnn conserves its own and the true energy"};
    double t0 = now_seconds();
    try {
        auto ck = load_checkpoint(run_dir + "/mass-spring/hnn/checkpoint.json");
        auto data = generate_data(ck.config);
        auto r = evaluate_hamiltonian_field(ck.config, mlp_field(ck.net),
                                            data.deriv_test, /*learned_drift=*/true);
        c.require(r.energy_drift_learned >= 0.0 && r.energy_drift_learned < 1e-3,
                  "learned-H drift " + fmt(r.energy_drift_learned));
        c.require(r.energy_drift_true >= 0.0 && r.energy_drift_true < 0.1,
                  "true-H drift " + fmt(r.energy_drift_true));
    } catch (const std::exception& e) {
        c.require(false, e.what());
    }
    c.finish(now_seconds() - t0);
}

}  // namespace

int main() {
    fs::path base = fs::temp_directory_path() / "mechbench-acceptance";
    fs::remove_all(base);
    fs::create_directories(base);
    std::string run_a = (base / "run_a").string();
    std::string run_b = (base / "run_b").string();
    std::string trained = (base / "trained").string();

    criterion_gradients();
    criterion_integrators();
    criterion_formulations();
    criterion_exact_models();
    criterion_benchmark_determinism(run_a, run_b);
    criterion_mass_spring();
    criterion_three_body(trained);
    criterion_double_pendulum(trained);
    criterion_energy(run_a);

    std::printf("%d criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
