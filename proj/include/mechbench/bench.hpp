#pragma once
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mechbench/datasets.hpp"
#include "mechbench/metrics.hpp"
#include "mechbench/models.hpp"
#include "mechbench/presets.hpp"
#include "mechbench/training.hpp"

namespace mech {

// ---------------------------------------------------------------------------
// Evaluation: model-appropriate rollouts from test initial states
// ---------------------------------------------------------------------------

struct EvalResult {
    MetricsReport metrics;
    std::vector<Trajectory> truths, preds;
    int n_failures = 0;
    double energy_drift_true = -1.0;     // max over test trajectories; -1 = n/a
    double energy_drift_learned = -1.0;  // HNN only
};

/// Regroup derivative-dataset rows into per-trajectory truth trajectories.
inline std::vector<Trajectory> dataset_trajectories(const DerivativeDataset& ds) {
    auto grid = derivative_grid(ds.cfg);
    std::vector<Trajectory> out(ds.n_trajectories);
    for (auto& tr : out) tr.times = grid;
    for (std::size_t r = 0; r < ds.size(); ++r)
        out[ds.traj_index[r]].states.push_back(ds.inputs[r]);
    for (const auto& tr : out)
        if (tr.states.size() != grid.size())
            throw std::logic_error("dataset_trajectories: ragged trajectory");
    return out;
}

namespace detail {

/// Compiled scalar-field evaluator (for energy series along trajectories).
class FieldValue {
public:
    FieldValue(const ScalarFieldBuilder& field, int dim) : buf_(tape_) {
        auto xs = tape_.inputs(0, static_cast<std::uint32_t>(dim));
        node_ = field(tape_, xs);
        buf_ = ad::EvalBuffer(tape_);
    }
    double operator()(std::span<const double> x) { return buf_.value(x, node_); }

private:
    ad::Tape tape_;
    ad::NodeId node_;
    ad::EvalBuffer buf_;
};

inline double max_rel_drift(FieldValue& f, const Trajectory& tr) {
    double e0 = f(tr.states[0]);
    double scale = std::max(std::fabs(e0), 1.0);
    double drift = 0.0;
    for (const auto& s : tr.states)
        drift = std::max(drift, std::fabs(f(s) - e0) / scale);
    return drift;
}

inline void finish_metrics(EvalResult& r) {
    std::vector<Trajectory> ok_p, ok_t;
    for (std::size_t i = 0; i < r.preds.size(); ++i)
        if (!r.preds[i].states.empty()) {
            ok_p.push_back(r.preds[i]);
            ok_t.push_back(r.truths[i]);
        }
    if (!ok_p.empty()) r.metrics = pooled_metrics(ok_p, ok_t);
}

}  // namespace detail

/// Evaluate a Hamiltonian-field model (trained or exact) against the test
/// split of a derivative dataset. Failed rollouts are recorded, not fatal.
inline EvalResult evaluate_hamiltonian_field(const ExperimentConfig& cfg,
                                             const ScalarFieldBuilder& field,
                                             const DerivativeDataset& test,
                                             bool learned_drift = false) {
    EvalResult r;
    r.truths = dataset_trajectories(test);
    auto grid = derivative_grid(cfg);
    const int dim = cfg.phase_dim();
    for (const Trajectory& truth : r.truths) {
        PhaseState s0{Convention::Hamiltonian, truth.states[0]};
        Trajectory pred;
        try {
            if (cfg.system.tag == SystemTag::BouncingBall) {
                double dt = grid[1] - grid[0];
                pred = rollout_hamiltonian_field_contact(field, s0, dt, grid.size() - 1,
                                                         cfg.restitution_eval);
            } else {
                pred = rollout_hamiltonian_field(field, dim, s0, grid);
            }
        } catch (const std::exception&) {
            ++r.n_failures;
        }
        r.preds.push_back(std::move(pred));
    }
    detail::finish_metrics(r);
    if (cfg.system.tag != SystemTag::BouncingBall) {
        detail::FieldValue true_h(system_hamiltonian_field(cfg.system), dim);
        std::optional<detail::FieldValue> model_h;
        if (learned_drift) model_h.emplace(field, dim);
        r.energy_drift_true = 0.0;
        if (learned_drift) r.energy_drift_learned = 0.0;
        for (const Trajectory& pred : r.preds) {
            if (pred.states.empty()) continue;
            r.energy_drift_true =
                std::max(r.energy_drift_true, detail::max_rel_drift(true_h, pred));
            if (model_h)
                r.energy_drift_learned =
                    std::max(r.energy_drift_learned, detail::max_rel_drift(*model_h, pred));
        }
    }
    return r;
}

inline EvalResult evaluate_lagrangian_field(const ExperimentConfig& cfg,
                                            const ScalarFieldBuilder& field, double ridge,
                                            const DerivativeDataset& test) {
    EvalResult r;
    r.truths = dataset_trajectories(test);
    auto grid = derivative_grid(cfg);
    const int n = cfg.phase_dim() / 2;
    for (const Trajectory& truth : r.truths) {
        PhaseState s0{Convention::Lagrangian, truth.states[0]};
        Trajectory pred;
        try {
            if (cfg.system.tag == SystemTag::BouncingBall) {
                double dt = grid[1] - grid[0];
                pred = rollout_lagrangian_field_contact(field, ridge, s0, dt,
                                                        grid.size() - 1,
                                                        cfg.restitution_eval);
            } else {
                pred = rollout_lagrangian_field(field, n, ridge, s0, grid);
            }
        } catch (const std::exception&) {
            ++r.n_failures;
        }
        r.preds.push_back(std::move(pred));
    }
    detail::finish_metrics(r);
    return r;
}

/// Evaluate a separable (K, V) model by full-length leapfrog rollout.
inline EvalResult evaluate_separable_fields(const ExperimentConfig& cfg,
                                            const ScalarFieldBuilder& v_field,
                                            const ScalarFieldBuilder& k_field,
                                            const SequenceDataset& test) {
    EvalResult r;
    r.truths = test.trajectories;
    const int n = cfg.phase_dim() / 2;
    SeparableModelGrads grads(v_field, k_field, n);
    auto gv = grads.grad_V();
    auto gk = grads.grad_K();
    for (const Trajectory& truth : r.truths) {
        PhaseState z0{cfg.data_convention, truth.states[0]};
        double dt = truth.times[1] - truth.times[0];
        Trajectory pred;
        try {
            if (cfg.system.tag == SystemTag::BouncingBall)
                pred = leapfrog_with_contact(gv, gk, z0, dt, truth.size() - 1,
                                             cfg.restitution_eval);
            else
                pred = leapfrog_integrate(gv, gk, z0, dt, truth.size() - 1);
        } catch (const std::exception&) {
            ++r.n_failures;
        }
        r.preds.push_back(std::move(pred));
    }
    detail::finish_metrics(r);
    if (cfg.system.tag != SystemTag::BouncingBall &&
        cfg.data_convention == Convention::Hamiltonian) {
        detail::FieldValue true_h(system_hamiltonian_field(cfg.system), cfg.phase_dim());
        r.energy_drift_true = 0.0;
        for (const Trajectory& pred : r.preds) {
            if (pred.states.empty()) continue;
            r.energy_drift_true =
                std::max(r.energy_drift_true, detail::max_rel_drift(true_h, pred));
        }
    }
    return r;
}

/// Exact-model oracle fields: V(q) = H(q, 0) and K(p) = H(0, p), constructed
/// the same way the truth generator builds its leapfrog gradients so that an
/// exact model reproduces ground truth bit-for-bit.
inline ScalarFieldBuilder system_potential_field(const SystemSpec& sys, int n) {
    return [sys, n](ad::Tape& t, std::span<const ad::NodeId> qs) {
        std::vector<ad::NodeId> full(qs.begin(), qs.end());
        for (int i = 0; i < n; ++i) full.push_back(t.constant(0.0));
        return hamiltonian_expr(t, sys, full);
    };
}
inline ScalarFieldBuilder system_kinetic_field(const SystemSpec& sys, int n) {
    return [sys, n](ad::Tape& t, std::span<const ad::NodeId> ps) {
        std::vector<ad::NodeId> full;
        for (int i = 0; i < n; ++i) full.push_back(t.constant(0.0));
        full.insert(full.end(), ps.begin(), ps.end());
        return hamiltonian_expr(t, sys, full);
    };
}

// ---------------------------------------------------------------------------
// Pipeline stages (shared by the CLI and the acceptance harness)
// ---------------------------------------------------------------------------

/// In-memory train/test data for one preset.
struct GeneratedData {
    DerivativeDataset deriv_train, deriv_test;   // HNN/LNN
    SequenceDataset seq_train, seq_test;         // SRNN
};

inline GeneratedData generate_data(const ExperimentConfig& cfg) {
    GeneratedData d;
    std::uint64_t split_seed = derive_seed(cfg.seed, 0x73706c69);  // split stream
    if (cfg.model == ModelTag::SRNN) {
        if (cfg.test_n_trajectories > 0) {
            d.seq_train = generate_sequence_dataset(cfg);
            d.seq_test = generate_sequence_dataset(
                cfg, cfg.test_n_trajectories,
                cfg.test_t_span > 0.0 ? cfg.test_t_span : cfg.t_span,
                std::uint64_t(cfg.n_trajectories));
        } else {
            auto full = generate_sequence_dataset(cfg);
            auto [tr, te] = train_test_split(full, cfg.split_ratio, split_seed);
            d.seq_train = std::move(tr);
            d.seq_test = std::move(te);
        }
    } else {
        auto full = generate_derivative_dataset(cfg);
        auto [tr, te] = train_test_split(full, cfg.split_ratio, split_seed);
        d.deriv_train = std::move(tr);
        d.deriv_test = std::move(te);
    }
    return d;
}

inline void write_data(const ExperimentConfig& cfg, const GeneratedData& d,
                       const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json counts;
    if (cfg.model == ModelTag::SRNN) {
        write_sequence_csv(d.seq_train, dir + "/train.csv");
        write_sequence_csv(d.seq_test, dir + "/test.csv");
        std::size_t tr = 0, te = 0;
        for (auto& t : d.seq_train.trajectories) tr += t.size();
        for (auto& t : d.seq_test.trajectories) te += t.size();
        counts = {{"train_trajectories", d.seq_train.trajectories.size()},
                  {"test_trajectories", d.seq_test.trajectories.size()},
                  {"train_samples", tr},
                  {"test_samples", te}};
    } else {
        write_derivative_csv(d.deriv_train, dir + "/train.csv");
        write_derivative_csv(d.deriv_test, dir + "/test.csv");
        counts = {{"train_trajectories", d.deriv_train.n_trajectories},
                  {"test_trajectories", d.deriv_test.n_trajectories},
                  {"train_samples", d.deriv_train.size()},
                  {"test_samples", d.deriv_test.size()}};
    }
    write_manifest(cfg, dir + "/manifest.json", counts);
}

inline std::pair<ModelCheckpoint, TrainReport> train_preset(const ExperimentConfig& cfg,
                                                            const GeneratedData& data) {
    TrainConfig tc = TrainConfig::from(cfg);
    ModelCheckpoint ck;
    ck.tag = cfg.model;
    ck.config = cfg;
    ck.train_seed = tc.seed;
    TrainReport rep;
    switch (cfg.model) {
        case ModelTag::HNN: {
            HnnModel m{init_mlp(cfg.net, derive_seed(cfg.seed, 0x696e6974))};
            auto [trained, r] = train_hnn(std::move(m), data.deriv_train, tc);
            ck.net = std::move(trained.net);
            rep = std::move(r);
            break;
        }
        case ModelTag::LNN: {
            LnnModel m{init_mlp(cfg.net, derive_seed(cfg.seed, 0x696e6974))};
            auto [trained, r] = train_lnn(std::move(m), data.deriv_train, tc);
            ck.net = std::move(trained.net);
            rep = std::move(r);
            break;
        }
        case ModelTag::SRNN: {
            SrnnModel m{init_mlp(cfg.net, derive_seed(cfg.seed, 0x696e6974)),
                        init_mlp(cfg.net, derive_seed(cfg.seed, 0x696e6675))};
            auto [trained, r] = train_srnn(std::move(m), data.seq_train, tc);
            ck.net = std::move(trained.k_net);
            ck.net2 = std::move(trained.v_net);
            rep = std::move(r);
            break;
        }
    }
    return {std::move(ck), std::move(rep)};
}

inline EvalResult evaluate_checkpoint(const ModelCheckpoint& ck, const GeneratedData& data) {
    const ExperimentConfig& cfg = ck.config;
    switch (ck.tag) {
        case ModelTag::HNN:
            return evaluate_hamiltonian_field(cfg, mlp_field(ck.net), data.deriv_test,
                                              /*learned_drift=*/true);
        case ModelTag::LNN:
            return evaluate_lagrangian_field(cfg, mlp_field(ck.net), kLnnRidge,
                                             data.deriv_test);
        case ModelTag::SRNN:
            return evaluate_separable_fields(cfg, mlp_field(ck.net2), mlp_field(ck.net),
                                             data.seq_test);
    }
    throw std::logic_error("evaluate_checkpoint: unreachable");
}

inline void write_metrics_json(const ExperimentConfig& cfg, const EvalResult& r,
                               const std::string& path) {
    nlohmann::json j = {{"preset", cfg.preset},
                        {"system", to_string(cfg.system.tag)},
                        {"model", to_string(cfg.model)},
                        {"mse", r.metrics.mse},
                        {"mae", r.metrics.mae},
                        {"rmse", r.metrics.rmse},
                        {"std", r.metrics.std_},
                        {"var", r.metrics.var},
                        {"n_points", r.metrics.n_points},
                        {"n_failures", r.n_failures}};
    if (r.energy_drift_true >= 0.0) j["energy_drift_true"] = r.energy_drift_true;
    if (r.energy_drift_learned >= 0.0) j["energy_drift_learned"] = r.energy_drift_learned;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << '\n';
}

/// Predicted-vs-truth CSV per test trajectory: t, truth components, predicted
/// components (empty prediction columns flag a failed rollout).
inline void write_eval_csvs(const ExperimentConfig& cfg, const EvalResult& r,
                            const std::string& dir) {
    auto names = detail::state_names(cfg);
    for (std::size_t k = 0; k < r.truths.size(); ++k) {
        std::ofstream f(dir + "/traj_" + std::to_string(k) + ".csv");
        f << "t";
        for (auto& n : names) f << ",true_" << n;
        for (auto& n : names) f << ",pred_" << n;
        f << '\n';
        const bool failed = r.preds[k].states.empty();
        for (std::size_t i = 0; i < r.truths[k].size(); ++i) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", r.truths[k].times[i]);
            f << buf;
            for (double v : r.truths[k].states[i]) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                f << ',' << buf;
            }
            if (!failed)
                for (double v : r.preds[k].states[i]) {
                    std::snprintf(buf, sizeof buf, "%.17g", v);
                    f << ',' << buf;
                }
            f << '\n';
        }
    }
}

/// generate → train → evaluate for one preset, writing all artifacts.
inline EvalResult run_preset(const ExperimentConfig& cfg, const std::string& out_dir,
                             bool quiet = false) {
    std::string dir = out_dir + "/" + cfg.preset;
    std::filesystem::create_directories(dir);
    if (!quiet) std::printf("[%s] seed %llu: generating...\n", cfg.preset.c_str(),
                            static_cast<unsigned long long>(cfg.seed));
    GeneratedData data = generate_data(cfg);
    write_data(cfg, data, dir);
    if (!quiet) std::printf("[%s] training...\n", cfg.preset.c_str());
    auto [ck, rep] = train_preset(cfg, data);
    save_checkpoint(ck, dir + "/checkpoint.json");
    write_loss_csv(rep, dir + "/loss.csv");
    if (!quiet)
        std::printf("[%s] trained %d epochs in %.1fs, final loss %.6g\n",
                    cfg.preset.c_str(), cfg.epochs, rep.wall_seconds,
                    rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back());
    EvalResult ev = evaluate_checkpoint(ck, data);
    write_metrics_json(cfg, ev, dir + "/metrics.json");
    write_eval_csvs(cfg, ev, dir);
    if (!quiet)
        std::printf("[%s] mse %.6g mae %.6g rmse %.6g std %.6g var %.6g (%d failures)\n",
                    cfg.preset.c_str(), ev.metrics.mse, ev.metrics.mae, ev.metrics.rmse,
                    ev.metrics.std_, ev.metrics.var, ev.n_failures);
    return ev;
}

// ---------------------------------------------------------------------------
// Benchmark tables
// ---------------------------------------------------------------------------

struct BenchmarkRow {
    std::string preset, system, model;
    MetricsReport metrics;
    bool failed = false;
    std::string error;
};

inline int worker_count() {
    if (const char* env = std::getenv("MECHBENCH_WORKERS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

/// Runs every preset whose name or system matches `filter` (empty = all).
inline std::vector<BenchmarkRow> run_benchmark(const std::string& filter,
                                               const std::string& out_dir,
                                               std::uint64_t seed) {
    std::vector<ExperimentConfig> selected;
    for (auto& cfg : all_presets(seed)) {
        if (filter.empty() || cfg.preset == filter ||
            to_string(cfg.system.tag) == filter ||
            cfg.preset.substr(0, filter.size()) == filter)
            selected.push_back(cfg);
    }
    if (selected.empty())
        throw std::invalid_argument("benchmark filter matches no preset: " + filter);

    std::vector<BenchmarkRow> rows(selected.size());
    auto run_one = [&](std::size_t i, bool quiet) {
        BenchmarkRow row;
        row.preset = selected[i].preset;
        row.system = to_string(selected[i].system.tag);
        row.model = to_string(selected[i].model);
        try {
            row.metrics = run_preset(selected[i], out_dir, quiet).metrics;
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
            std::fprintf(stderr, "[%s] FAILED: %s\n", row.preset.c_str(), e.what());
        }
        rows[i] = std::move(row);
    };

    int workers = std::min<int>(worker_count(), static_cast<int>(selected.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < selected.size(); ++i) run_one(i, false);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::future<void>> futs;
        for (int w = 0; w < workers; ++w)
            futs.push_back(std::async(std::launch::async, [&] {
                for (std::size_t i = next.fetch_add(1); i < selected.size();
                     i = next.fetch_add(1))
                    run_one(i, true);
            }));
        for (auto& f : futs) f.get();
    }
    return rows;
}

inline void write_benchmark_tables(const std::vector<BenchmarkRow>& rows,
                                   const std::string& out_dir) {
    std::ofstream csv(out_dir + "/summary.csv");
    csv << "system,model,mse,mae,rmse,std,var,n_points,status\n";
    for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%s\n",
                      r.system.c_str(), r.model.c_str(), r.metrics.mse, r.metrics.mae,
                      r.metrics.rmse, r.metrics.std_, r.metrics.var, r.metrics.n_points,
                      r.failed ? "failed" : "ok");
        csv << buf;
    }
    std::ofstream txt(out_dir + "/summary.txt");
    std::string last_system;
    for (const auto& r : rows) {
        if (r.system != last_system) {
            txt << "== " << r.system << " ==\n";
            char hdr[160];
            std::snprintf(hdr, sizeof hdr, "%-6s %12s %12s %12s %12s %12s\n", "model",
                          "MSE", "MAE", "RMSE", "STD", "VAR");
            txt << hdr;
            last_system = r.system;
        }
        char line[200];
        if (r.failed)
            std::snprintf(line, sizeof line, "%-6s %12s\n", r.model.c_str(), "failed");
        else
            std::snprintf(line, sizeof line, "%-6s %12.6g %12.6g %12.6g %12.6g %12.6g\n",
                          r.model.c_str(), r.metrics.mse, r.metrics.mae, r.metrics.rmse,
                          r.metrics.std_, r.metrics.var);
        txt << line;
    }
}

}  // namespace mech
