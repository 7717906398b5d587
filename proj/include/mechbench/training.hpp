#pragma once
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mechbench/datasets.hpp"
#include "mechbench/models.hpp"

namespace mech {

enum class Optimizer { Adam, Sgd };

inline std::string to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

struct TrainConfig {
    int epochs = 100;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double lr_decay = 1.0;  // geometric schedule; lr reaches learning_rate * lr_decay
    Optimizer optimizer = Optimizer::Adam;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t seed = 0;
    int srnn_window = 10;       // SRNN: backpropagated sub-sequence length
    int srnn_epoch_windows = 0; // SRNN: windows per epoch; 0 = one per trajectory
    int avg_tail = 0;           // average parameters over the last N epochs; 0 = off
    int checkpoint_every = 0;   // epochs between snapshots; 0 = none

    void validate() const {
        if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs >= 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1");
        if (!(learning_rate > 0.0))
            throw std::invalid_argument("TrainConfig: learning_rate > 0");
    }

    static TrainConfig from(const ExperimentConfig& e) {
        TrainConfig c;
        c.epochs = e.epochs;
        c.batch_size = e.batch_size;
        c.learning_rate = e.learning_rate;
        c.lr_decay = e.lr_decay;
        c.seed = derive_seed(e.seed, 0x7261696e);  // training stream
        c.srnn_window = e.srnn_window;
        c.srnn_epoch_windows = e.srnn_epoch_windows;
        c.avg_tail = e.avg_tail;
        return c;
    }
};

struct TrainReport {
    std::vector<double> epoch_loss;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

struct AdamState {
    std::vector<double> m, v;
    long step = 0;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void apply_update(std::vector<double>& params, std::span<const double> grad,
                         const TrainConfig& cfg, AdamState& st, double lr_scale = 1.0) {
    const double lr = cfg.learning_rate * lr_scale;
    if (cfg.optimizer == Optimizer::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i] -= lr * grad[i];
        return;
    }
    ++st.step;
    double bc1 = 1.0 - std::pow(cfg.beta1, double(st.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, double(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grad[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

/**
 * Batched loss/gradient evaluation over one compiled tape whose slot layout is
 * [0, n_params) parameters, [n_params, n_params + sample_slots) per-sample
 * values. Samples are run 8 to a SIMD lane group; the parameter gradient sums
 * only the valid lanes, so padding never contaminates the result.
 */
class BatchEvaluator {
public:
    static constexpr int kLanes = 8;

    BatchEvaluator(const ad::Tape& tape, ad::NodeId loss, std::size_t n_params,
                   std::size_t sample_slots)
        : tape_(&tape), loss_(loss), n_params_(n_params), sample_slots_(sample_slots) {
        vals_.resize(tape.size() * kLanes);
        adj_.resize(tape.size() * kLanes);
        slots_.resize(std::size_t(tape.n_slots) * kLanes);
        slot_grads_.resize(std::size_t(tape.n_slots) * kLanes);
    }

    /// Mean loss over the batch; writes the mean-loss parameter gradient.
    double step(std::span<const double> params,
                const std::vector<std::vector<double>>& samples,
                std::span<double> grad_out) {
        std::fill(grad_out.begin(), grad_out.end(), 0.0);
        double loss_sum = 0.0;
        const std::size_t batch = samples.size();
        for (std::size_t base = 0; base < batch; base += kLanes) {
            int valid = static_cast<int>(std::min<std::size_t>(kLanes, batch - base));
            for (std::size_t p = 0; p < n_params_; ++p)
                for (int l = 0; l < kLanes; ++l) slots_[p * kLanes + l] = params[p];
            for (int l = 0; l < kLanes; ++l) {
                const std::vector<double>& s = samples[base + std::min(l, valid - 1)];
                if (s.size() != sample_slots_)
                    throw std::invalid_argument("batch sample has wrong slot count");
                for (std::size_t k = 0; k < sample_slots_; ++k)
                    slots_[(n_params_ + k) * kLanes + l] = s[k];
            }
            ad::eval_lanes<kLanes>(*tape_, slots_, vals_);
            for (int l = 0; l < valid; ++l) {
                double lv = vals_[std::size_t(loss_) * kLanes + l];
                if (!std::isfinite(lv)) throw ad::numeric_error("non-finite loss");
                loss_sum += lv;
            }
            std::fill(slot_grads_.begin(), slot_grads_.end(), 0.0);
            ad::reverse_lanes<kLanes>(*tape_, loss_, vals_, adj_, slot_grads_);
            for (std::size_t p = 0; p < n_params_; ++p) {
                double g = 0.0;
                for (int l = 0; l < valid; ++l) g += slot_grads_[p * kLanes + l];
                if (!std::isfinite(g)) throw ad::numeric_error("non-finite gradient");
                grad_out[p] += g;
            }
        }
        double inv = 1.0 / double(batch);
        for (double& g : grad_out) g *= inv;
        return loss_sum * inv;
    }

private:
    const ad::Tape* tape_;
    ad::NodeId loss_;
    std::size_t n_params_, sample_slots_;
    std::vector<double> vals_, adj_, slots_, slot_grads_;
};

inline ad::NodeId squared_error(ad::Tape& t, std::span<const ad::NodeId> pred,
                                std::span<const ad::NodeId> label) {
    std::vector<ad::NodeId> terms(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ad::NodeId d = t.sub(pred[i], label[i]);
        terms[i] = t.square(d);
    }
    return t.sum(std::span<const ad::NodeId>(terms.data(), terms.size()));
}

/// Shared epoch loop: shuffles, batches, steps the optimizer, records loss.
template <class FillSample>
TrainReport run_epochs(std::vector<double>& params, BatchEvaluator& ev,
                       const TrainConfig& cfg, std::size_t n_samples,
                       std::size_t sample_slots, FillSample&& fill) {
    TrainReport report;
    report.seed = cfg.seed;
    auto start = std::chrono::steady_clock::now();
    AdamState opt(params.size());
    std::vector<double> grad(params.size());
    std::vector<std::vector<double>> batch;
    std::vector<double> tail_sum;
    int tail_count = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // lr_decay == 1 keeps the scale at exactly 1.0 (constant-lr runs are
        // bit-for-bit unaffected by the schedule)
        double lr_scale =
            cfg.lr_decay == 1.0 || cfg.epochs < 2
                ? 1.0
                : std::pow(cfg.lr_decay, double(epoch) / double(cfg.epochs - 1));
        auto order = shuffled_indices(static_cast<int>(n_samples),
                                      derive_seed(cfg.seed, std::uint64_t(epoch)));
        Rng epoch_rng(derive_seed(cfg.seed, 0x10000000ULL + std::uint64_t(epoch)));
        double loss_weighted = 0.0;
        std::size_t at = 0, n_batches = 0;
        while (at < n_samples) {
            std::size_t bsz = std::min<std::size_t>(cfg.batch_size, n_samples - at);
            batch.assign(bsz, std::vector<double>(sample_slots));
            for (std::size_t i = 0; i < bsz; ++i)
                fill(order[at + i], epoch_rng, batch[i]);
            double mean_loss;
            try {
                mean_loss = ev.step(params, batch, grad);
            } catch (const ad::numeric_error& e) {
                throw ad::numeric_error("epoch " + std::to_string(epoch) + " batch " +
                                        std::to_string(n_batches) + ": " + e.what());
            }
            apply_update(params, grad, cfg, opt, lr_scale);
            loss_weighted += mean_loss * double(bsz);
            at += bsz;
            ++n_batches;
        }
        for (double p : params)
            if (!std::isfinite(p))
                throw ad::numeric_error("epoch " + std::to_string(epoch) +
                                        ": non-finite parameter");
        report.epoch_loss.push_back(loss_weighted / double(n_samples));
        if (cfg.avg_tail > 0 && epoch >= cfg.epochs - cfg.avg_tail) {
            if (tail_sum.empty()) tail_sum.assign(params.size(), 0.0);
            for (std::size_t i = 0; i < params.size(); ++i) tail_sum[i] += params[i];
            ++tail_count;
        }
    }
    // iterate averaging damps optimizer noise in the returned parameters
    if (tail_count > 0)
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i] = tail_sum[i] / double(tail_count);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// HNN training
// ---------------------------------------------------------------------------

inline std::pair<HnnModel, TrainReport> train_hnn(HnnModel model,
                                                  const DerivativeDataset& data,
                                                  const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("train_hnn: empty dataset");
    const int dim = model.net.spec.input_dim();
    const int n = dim / 2;
    const std::size_t P = model.net.spec.param_count();

    // tape: loss of one sample; params in slots so one compiled graph serves
    // the whole run
    ad::Tape t;
    auto xs = t.inputs(static_cast<std::uint32_t>(P), static_cast<std::uint32_t>(dim));
    ad::NodeId H = build_mlp(t, model.net.spec, xs, ParamBinding::slots(0));
    auto grad = ad::adjoint_nodes(t, H, xs);
    auto labels = t.inputs(static_cast<std::uint32_t>(P + dim),
                           static_cast<std::uint32_t>(dim));
    std::vector<ad::NodeId> pred(dim);
    for (int i = 0; i < n; ++i) {
        pred[i] = grad[n + i];
        pred[n + i] = t.neg(grad[i]);
    }
    ad::NodeId loss = detail::squared_error(t, pred, labels);

    detail::BatchEvaluator ev(t, loss, P, std::size_t(2 * dim));
    auto fill = [&](int row, Rng&, std::vector<double>& out) {
        const auto& x = data.inputs[row];
        const auto& y = data.labels[row];
        std::copy(x.begin(), x.end(), out.begin());
        std::copy(y.begin(), y.end(), out.begin() + dim);
    };
    TrainReport rep = detail::run_epochs(model.net.values, ev, cfg, data.size(),
                                         std::size_t(2 * dim), fill);
    return {std::move(model), std::move(rep)};
}

// ---------------------------------------------------------------------------
// LNN training
// ---------------------------------------------------------------------------

inline std::pair<LnnModel, TrainReport> train_lnn(LnnModel model,
                                                  const DerivativeDataset& data,
                                                  const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("train_lnn: empty dataset");
    const int dim = model.net.spec.input_dim();
    const int n = dim / 2;
    const std::size_t P = model.net.spec.param_count();

    ad::Tape t;
    auto xs = t.inputs(static_cast<std::uint32_t>(P), static_cast<std::uint32_t>(dim));
    ad::NodeId L = build_mlp(t, model.net.spec, xs, ParamBinding::slots(0));
    auto grad = ad::adjoint_nodes(t, L, xs);
    std::vector<ad::NodeId> A(n * n), rhs(n);
    for (int i = 0; i < n; ++i) {
        auto row = ad::adjoint_nodes(t, grad[n + i], xs);
        for (int j = 0; j < n; ++j) {
            ad::NodeId h = row[n + j];
            if (i == j) h = t.add(h, t.constant(model.ridge));
            A[i * n + j] = h;
        }
        std::vector<ad::NodeId> hq(row.begin(), row.begin() + n);
        std::vector<ad::NodeId> qd(xs.begin() + n, xs.end());
        rhs[i] = t.sub(grad[i], t.dot(hq, qd));
    }
    auto accel = t.linear_solve(A, rhs);
    auto labels = t.inputs(static_cast<std::uint32_t>(P + dim),
                           static_cast<std::uint32_t>(n));
    ad::NodeId loss = detail::squared_error(t, accel, labels);

    detail::BatchEvaluator ev(t, loss, P, std::size_t(dim + n));
    auto fill = [&](int row, Rng&, std::vector<double>& out) {
        const auto& x = data.inputs[row];
        const auto& y = data.labels[row];
        std::copy(x.begin(), x.end(), out.begin());
        std::copy(y.begin(), y.end(), out.begin() + dim);
    };
    TrainReport rep = detail::run_epochs(model.net.values, ev, cfg, data.size(),
                                         std::size_t(dim + n), fill);
    return {std::move(model), std::move(rep)};
}

// ---------------------------------------------------------------------------
// SRNN training (truncated-rollout subsequences)
// ---------------------------------------------------------------------------

inline std::pair<SrnnModel, TrainReport> train_srnn(SrnnModel model,
                                                    const SequenceDataset& data,
                                                    const TrainConfig& cfg) {
    cfg.validate();
    if (data.trajectories.empty()) throw std::invalid_argument("train_srnn: empty dataset");
    const Trajectory& t0 = data.trajectories[0];
    if (t0.size() < 2) throw std::invalid_argument("train_srnn: trajectories too short");
    const int n = static_cast<int>(t0.states[0].size()) / 2;
    const double dt = t0.times[1] - t0.times[0];
    const int window =
        std::min<int>(cfg.srnn_window, static_cast<int>(t0.size()) - 1);
    const std::size_t PK = model.k_net.spec.param_count();
    const std::size_t PV = model.v_net.spec.param_count();
    const std::size_t P = PK + PV;
    const std::size_t sample_slots = std::size_t(2 * n) * (window + 1);

    // symbolic leapfrog rollout: V'(q) is rebuilt at each new q and the
    // trailing kick's gradient is reused as the next step's first kick
    ad::Tape t;
    auto q = t.inputs(static_cast<std::uint32_t>(P), static_cast<std::uint32_t>(n));
    auto p = t.inputs(static_cast<std::uint32_t>(P + n), static_cast<std::uint32_t>(n));
    ad::NodeId half_dt = t.constant(0.5 * dt);
    ad::NodeId dt_node = t.constant(dt);
    auto grad_of_v = [&](std::span<const ad::NodeId> qs) {
        ad::NodeId V = build_mlp(t, model.v_net.spec,
                                 qs, ParamBinding::slots(static_cast<std::uint32_t>(PK)));
        return ad::adjoint_nodes(t, V, qs);
    };
    auto grad_of_k = [&](std::span<const ad::NodeId> ps) {
        ad::NodeId K = build_mlp(t, model.k_net.spec, ps, ParamBinding::slots(0));
        return ad::adjoint_nodes(t, K, ps);
    };
    std::vector<ad::NodeId> loss_terms;
    auto gv = grad_of_v(q);
    std::uint32_t obs_base = static_cast<std::uint32_t>(P + 2 * n);
    for (int step = 0; step < window; ++step) {
        std::vector<ad::NodeId> ph(n), q1(n), p1(n);
        for (int i = 0; i < n; ++i) ph[i] = t.sub(p[i], t.mul(half_dt, gv[i]));
        auto gk = grad_of_k(ph);
        for (int i = 0; i < n; ++i) q1[i] = t.add(q[i], t.mul(dt_node, gk[i]));
        gv = grad_of_v(q1);
        for (int i = 0; i < n; ++i) p1[i] = t.sub(ph[i], t.mul(half_dt, gv[i]));
        auto obs = t.inputs(obs_base + std::uint32_t(step) * 2 * n,
                            static_cast<std::uint32_t>(2 * n));
        for (int i = 0; i < n; ++i) {
            loss_terms.push_back(t.square(t.sub(q1[i], obs[i])));
            loss_terms.push_back(t.square(t.sub(p1[i], obs[n + i])));
        }
        q = std::move(q1);
        p = std::move(p1);
    }
    ad::NodeId loss =
        t.sum(std::span<const ad::NodeId>(loss_terms.data(), loss_terms.size()));

    detail::BatchEvaluator ev(t, loss, P, sample_slots);

    // default: one window per trajectory per epoch; a nonzero
    // srnn_epoch_windows instead draws that many windows, each from a
    // uniformly random trajectory (used to trade window count for length)
    const std::size_t n_windows = cfg.srnn_epoch_windows > 0
                                      ? std::size_t(cfg.srnn_epoch_windows)
                                      : data.trajectories.size();
    const bool random_traj = cfg.srnn_epoch_windows > 0;
    const bool avoid_contact = data.cfg.system.tag == SystemTag::BouncingBall;
    auto fill = [&](int traj, Rng& rng, std::vector<double>& out) {
        if (random_traj)
            traj = static_cast<int>(rng.below(data.trajectories.size()));
        const Trajectory& tr = data.trajectories[traj];
        int max_start = static_cast<int>(tr.size()) - 1 - window;
        int start = 0;
        for (int attempt = 0; attempt < 64; ++attempt) {
            start = max_start > 0 ? static_cast<int>(rng.below(std::uint64_t(max_start) + 1))
                                  : 0;
            if (!avoid_contact) break;
            // contact steps are recognizable by the exact q = 0 clamp
            bool clean = true;
            for (int j = 1; j <= window && clean; ++j)
                clean = tr.states[start + j][0] != 0.0;
            if (clean) break;
        }
        for (int j = 0; j <= window; ++j)
            std::copy(tr.states[start + j].begin(), tr.states[start + j].end(),
                      out.begin() + std::size_t(j) * 2 * n);
    };

    // parameters flat: K net first, then V net (matching the slot layout)
    std::vector<double> params(P);
    std::copy(model.k_net.values.begin(), model.k_net.values.end(), params.begin());
    std::copy(model.v_net.values.begin(), model.v_net.values.end(), params.begin() + PK);
    TrainReport rep = detail::run_epochs(params, ev, cfg, n_windows,
                                         sample_slots, fill);
    std::copy(params.begin(), params.begin() + PK, model.k_net.values.begin());
    std::copy(params.begin() + PK, params.end(), model.v_net.values.begin());
    return {std::move(model), std::move(rep)};
}

// ---------------------------------------------------------------------------
// Checkpoints and loss history
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline void to_json(nlohmann::json& j, const MlpParams& p) {
    j = {{"spec", p.spec}, {"values", p.values}};
}
inline void from_json(const nlohmann::json& j, MlpParams& p) {
    j.at("spec").get_to(p.spec);
    j.at("values").get_to(p.values);
    if (p.values.size() != p.spec.param_count())
        throw std::runtime_error("checkpoint: parameter count does not match spec");
}

/// One trained model plus the experiment that produced it.
struct ModelCheckpoint {
    ModelTag tag = ModelTag::HNN;
    ExperimentConfig config;
    MlpParams net;     // HNN/LNN; SRNN K net
    MlpParams net2;    // SRNN V net
    std::uint64_t train_seed = 0;

    HnnModel hnn() const { return HnnModel{net}; }
    LnnModel lnn() const { return LnnModel{net}; }
    SrnnModel srnn() const { return SrnnModel{net, net2}; }
};

inline void save_checkpoint(const ModelCheckpoint& ck, const std::string& path) {
    nlohmann::json j;
    j["version"] = kCheckpointVersion;
    j["model"] = to_string(ck.tag);
    j["config"] = ck.config;
    j["net"] = ck.net;
    if (ck.tag == ModelTag::SRNN) j["net2"] = ck.net2;
    j["train_seed"] = ck.train_seed;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << '\n';
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed checkpoint " + path + ": " + e.what());
    }
    if (!j.contains("version") || j["version"].get<int>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint version mismatch in " + path);
    ModelCheckpoint ck;
    ck.tag = model_tag_from_string(j.at("model").get<std::string>());
    j.at("config").get_to(ck.config);
    j.at("net").get_to(ck.net);
    if (ck.tag == ModelTag::SRNN) j.at("net2").get_to(ck.net2);
    j.at("train_seed").get_to(ck.train_seed);
    return ck;
}

inline void write_loss_csv(const TrainReport& rep, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "epoch,mean_loss\n";
    for (std::size_t i = 0; i < rep.epoch_loss.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", rep.epoch_loss[i]);
        f << i << ',' << buf << '\n';
    }
}

}  // namespace mech
