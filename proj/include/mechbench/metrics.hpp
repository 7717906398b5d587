#pragma once
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mechbench/integrators.hpp"
#include "mechbench/systems.hpp"

namespace mech {

/// The five trajectory-error statistics plus the pooled residual count.
/// rmse = sqrt(mse) and var = std^2 hold by construction.
struct MetricsReport {
    double mse = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    double std_ = 0.0;
    double var = 0.0;
    std::size_t n_points = 0;
};

/// Pooled residual statistics over all time points and state components.
/// Variance is the population variance of the residuals.
inline MetricsReport trajectory_metrics(const Trajectory& pred, const Trajectory& truth) {
    if (pred.times.size() != truth.times.size())
        throw std::invalid_argument("trajectory_metrics: time grid length mismatch");
    for (std::size_t i = 0; i < pred.times.size(); ++i)
        if (pred.times[i] != truth.times[i])
            throw std::invalid_argument("trajectory_metrics: time grids differ");
    MetricsReport r;
    double sum = 0.0, sum_sq = 0.0, sum_abs = 0.0;
    for (std::size_t i = 0; i < pred.states.size(); ++i) {
        if (pred.states[i].size() != truth.states[i].size())
            throw std::invalid_argument("trajectory_metrics: state layout mismatch");
        for (std::size_t j = 0; j < pred.states[i].size(); ++j) {
            double d = pred.states[i][j] - truth.states[i][j];
            sum += d;
            sum_sq += d * d;
            sum_abs += std::fabs(d);
            ++r.n_points;
        }
    }
    if (r.n_points == 0) throw std::invalid_argument("trajectory_metrics: empty trajectories");
    double n = static_cast<double>(r.n_points);
    r.mse = sum_sq / n;
    r.mae = sum_abs / n;
    r.rmse = std::sqrt(r.mse);
    double mean = sum / n;
    r.var = std::max(0.0, r.mse - mean * mean);
    r.std_ = std::sqrt(r.var);
    return r;
}

/// Combine residual pools of several trajectory pairs into one report.
inline MetricsReport pooled_metrics(const std::vector<Trajectory>& preds,
                                    const std::vector<Trajectory>& truths) {
    if (preds.size() != truths.size() || preds.empty())
        throw std::invalid_argument("pooled_metrics: mismatched or empty trajectory lists");
    double sum = 0.0, sum_sq = 0.0, sum_abs = 0.0;
    std::size_t n_points = 0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        const Trajectory& p = preds[k];
        const Trajectory& t = truths[k];
        if (p.times.size() != t.times.size())
            throw std::invalid_argument("pooled_metrics: time grid length mismatch");
        for (std::size_t i = 0; i < p.states.size(); ++i)
            for (std::size_t j = 0; j < p.states[i].size(); ++j) {
                double d = p.states[i][j] - t.states[i][j];
                sum += d;
                sum_sq += d * d;
                sum_abs += std::fabs(d);
                ++n_points;
            }
    }
    MetricsReport r;
    r.n_points = n_points;
    double n = static_cast<double>(n_points);
    r.mse = sum_sq / n;
    r.mae = sum_abs / n;
    r.rmse = std::sqrt(r.mse);
    double mean = sum / n;
    r.var = std::max(0.0, r.mse - mean * mean);
    r.std_ = std::sqrt(r.var);
    return r;
}

/// Relative drift of the analytic Hamiltonian along a trajectory:
/// max_t |H(t) − H(0)| / max(|H(0)|, 1), plus the full series.
inline std::pair<double, std::vector<double>> energy_drift(const SystemSpec& sys,
                                                           const Trajectory& traj) {
    if (sys.tag == SystemTag::BouncingBall)
        throw std::invalid_argument("energy_drift: bouncing ball is not conservative");
    if (traj.states.empty()) throw std::invalid_argument("energy_drift: empty trajectory");
    int dim = phase_dim(sys, Convention::Hamiltonian);
    ad::Tape t;
    auto xs = t.inputs(0, static_cast<std::uint32_t>(dim));
    ad::NodeId h = hamiltonian_expr(t, sys, xs);
    ad::EvalBuffer buf(t);
    std::vector<double> series;
    series.reserve(traj.states.size());
    for (const auto& s : traj.states) {
        if (static_cast<int>(s.size()) != dim)
            throw std::invalid_argument("energy_drift: state dimension mismatch");
        series.push_back(buf.value(s, h));
    }
    double h0 = series.front();
    double scale = std::max(std::fabs(h0), 1.0);
    double max_drift = 0.0;
    for (double e : series) max_drift = std::max(max_drift, std::fabs(e - h0) / scale);
    return {max_drift, std::move(series)};
}

}  // namespace mech
