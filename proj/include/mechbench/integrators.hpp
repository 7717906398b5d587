#pragma once
#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechbench/systems.hpp"

namespace mech {

/// Autonomous state derivative: f(y, dy_out). dy_out has y's length.
using DerivFn = std::function<void(std::span<const double>, std::span<double>)>;

/// Gradient of a scalar over half the phase space (V'(q) or K'(p)).
using GradFn = std::function<void(std::span<const double>, std::span<double>)>;

struct integration_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<std::vector<double>> states;

    std::size_t size() const { return times.size(); }
};

enum class Method { RK45, Euler, Leapfrog };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::RK45: return "rk45";
        case Method::Euler: return "euler";
        case Method::Leapfrog: return "leapfrog";
    }
    return "?";
}
inline Method method_from_string(const std::string& s) {
    if (s == "rk45") return Method::RK45;
    if (s == "euler") return Method::Euler;
    if (s == "leapfrog") return Method::Leapfrog;
    throw std::invalid_argument("unknown integrator method: " + s);
}

struct IntegratorConfig {
    Method method = Method::RK45;
    double rtol = 1e-6;
    double atol = 1e-9;
    double dt = 0.01;           // fixed-step methods
    double max_step = 0.0;      // 0 = unlimited (used by the convergence-order test)
    std::size_t max_steps = 10'000'000;

    void validate() const {
        if (method == Method::RK45) {
            if (!(rtol > 0.0) || !(atol > 0.0))
                throw std::invalid_argument("IntegratorConfig: tolerances must be positive");
        } else if (!(dt > 0.0)) {
            throw std::invalid_argument("IntegratorConfig: dt must be positive");
        }
        if (max_steps < 1)
            throw std::invalid_argument("IntegratorConfig: max_steps must be >= 1");
    }
};

namespace detail {

inline void check_finite(std::span<const double> y, const char* what) {
    for (double v : y)
        if (!std::isfinite(v)) throw ad::numeric_error(std::string(what) + ": non-finite state");
}

}  // namespace detail

/**
 * Dormand–Prince 5(4) with error control on atol + rtol·|y| and the method's
 * free 4th-order dense-output interpolant for sampling. sample_times must be
 * strictly increasing; integration starts at sample_times.front().
 */
inline Trajectory rk45_integrate(const DerivFn& f, std::span<const double> y0,
                                 std::span<const double> sample_times,
                                 const IntegratorConfig& cfg = {}) {
    cfg.validate();
    if (sample_times.empty())
        throw std::invalid_argument("rk45_integrate: no sample times");
    for (std::size_t i = 1; i < sample_times.size(); ++i)
        if (!(sample_times[i] > sample_times[i - 1]))
            throw std::invalid_argument("rk45_integrate: sample times must be strictly increasing");

    // Dormand–Prince coefficients.
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                            a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    // Dense-output coefficients (Hairer, Nørsett, Wanner, DOPRI5).
    static constexpr double d1 = -12715105075.0 / 11282082432.0,
                            d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0,
                            d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0,
                            d7 = 69997945.0 / 29380423.0;

    const std::size_t n = y0.size();
    const double t_end = sample_times.back();
    double t = sample_times.front();
    std::vector<double> y(y0.begin(), y0.end());
    std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);
    std::vector<double> rcont1(n), rcont2(n), rcont3(n), rcont4(n), rcont5(n);

    Trajectory out;
    out.times.assign(sample_times.begin(), sample_times.end());
    out.states.reserve(sample_times.size());
    out.states.push_back(y);
    std::size_t next_sample = 1;
    if (next_sample >= sample_times.size()) return out;

    detail::check_finite(y, "rk45");
    f(y, k1);
    detail::check_finite(k1, "rk45 derivative");

    // Initial step size (Hairer's hinit, order 5).
    double h;
    {
        double d0 = 0.0, d1n = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double sc = cfg.atol + cfg.rtol * std::fabs(y[i]);
            d0 += (y[i] / sc) * (y[i] / sc);
            d1n += (k1[i] / sc) * (k1[i] / sc);
        }
        d0 = std::sqrt(d0 / n);
        d1n = std::sqrt(d1n / n);
        double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
        h0 = std::min(h0, t_end - t);
        for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h0 * k1[i];
        f(ytmp, k2);
        double d2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double sc = cfg.atol + cfg.rtol * std::fabs(y[i]);
            double dd = (k2[i] - k1[i]) / sc;
            d2 += dd * dd;
        }
        d2 = std::sqrt(d2 / n) / h0;
        double h1 = (std::max(d1n, d2) <= 1e-15)
                        ? std::max(1e-6, h0 * 1e-3)
                        : std::pow(0.01 / std::max(d1n, d2), 0.2);
        h = std::min({100.0 * h0, h1, t_end - t});
    }
    if (cfg.max_step > 0.0) h = std::min(h, cfg.max_step);

    std::size_t steps = 0;
    while (t < t_end) {
        if (++steps > cfg.max_steps)
            throw integration_error("rk45: max_steps exceeded (possible stiffness)");
        if (!(h > std::fabs(t) * 1e-15 + 1e-300))
            throw integration_error("rk45: step size underflow");
        if (t + h > t_end) h = t_end - t;

        for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
        f(ytmp, k2);
        for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
        f(ytmp, k3);
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        f(ytmp, k4);
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        f(ytmp, k5);
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                                  a65 * k5[i]);
        f(ytmp, k6);
        for (std::size_t i = 0; i < n; ++i)
            ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] +
                                  b6 * k6[i]);
        f(ynew, k7);  // FSAL
        detail::check_finite(ynew, "rk45");
        detail::check_finite(k7, "rk45 derivative");

        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                            e6 * k6[i] + e7 * k7[i]);
            double sc = cfg.atol + cfg.rtol * std::max(std::fabs(y[i]), std::fabs(ynew[i]));
            err += (e / sc) * (e / sc);
        }
        err = std::sqrt(err / n);

        if (err <= 1.0) {
            // accept: prime the interpolant, emit samples inside [t, t+h]
            for (std::size_t i = 0; i < n; ++i) {
                double ydiff = ynew[i] - y[i];
                double bspl = h * k1[i] - ydiff;
                rcont1[i] = y[i];
                rcont2[i] = ydiff;
                rcont3[i] = bspl;
                rcont4[i] = ydiff - h * k7[i] - bspl;
                rcont5[i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] +
                                 d6 * k6[i] + d7 * k7[i]);
            }
            double t_new = t + h;
            while (next_sample < sample_times.size() &&
                   sample_times[next_sample] <= t_new + 1e-14 * std::fabs(t_new)) {
                double ts = sample_times[next_sample];
                if (ts >= t_new) {
                    out.states.push_back(ynew);
                } else {
                    double th = (ts - t) / h, th1 = 1.0 - th;
                    std::vector<double> ys(n);
                    for (std::size_t i = 0; i < n; ++i)
                        ys[i] = rcont1[i] +
                                th * (rcont2[i] +
                                      th1 * (rcont3[i] +
                                             th * (rcont4[i] + th1 * rcont5[i])));
                    out.states.push_back(std::move(ys));
                }
                ++next_sample;
            }
            t = t_new;
            std::swap(k1, k7);
            y = ynew;
            double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
            h *= std::clamp(fac, 0.2, 10.0);
        } else {
            double fac = 0.9 * std::pow(err, -0.2);
            h *= std::clamp(fac, 0.2, 1.0);
        }
        if (cfg.max_step > 0.0) h = std::min(h, cfg.max_step);
    }
    while (next_sample < sample_times.size()) {  // trailing samples hit by roundoff
        out.states.push_back(y);
        ++next_sample;
    }
    return out;
}

/// Forward Euler: y_{k+1} = y_k + dt f(y_k); records all n_steps+1 states.
inline Trajectory euler_integrate(const DerivFn& f, std::span<const double> y0, double dt,
                                  std::size_t n_steps, double t0 = 0.0) {
    if (!(dt > 0.0)) throw std::invalid_argument("euler_integrate: dt must be positive");
    const std::size_t n = y0.size();
    Trajectory out;
    out.times.reserve(n_steps + 1);
    out.states.reserve(n_steps + 1);
    std::vector<double> y(y0.begin(), y0.end()), dy(n);
    out.times.push_back(t0);
    out.states.push_back(y);
    for (std::size_t k = 1; k <= n_steps; ++k) {
        f(y, dy);
        for (std::size_t i = 0; i < n; ++i) y[i] += dt * dy[i];
        detail::check_finite(y, "euler");
        out.times.push_back(t0 + double(k) * dt);
        out.states.push_back(y);
    }
    return out;
}

/**
 * Kick-drift-kick leapfrog for a separable H = K(p) + V(q):
 *   p_{n+1/2} = p_n − ½dt V'(q_n)
 *   q_{n+1}   = q_n + dt K'(p_{n+1/2})
 *   p_{n+1}   = p_{n+1/2} − ½dt V'(q_{n+1})
 * The trailing V'(q_{n+1}) is reused as the next step's first kick, so
 * rolling n steps equals chaining two n/2-step rollouts bitwise.
 */
inline Trajectory leapfrog_integrate(const GradFn& grad_V, const GradFn& grad_K,
                                     const PhaseState& z0, double dt, std::size_t n_steps,
                                     double t0 = 0.0) {
    if (dt == 0.0) throw std::invalid_argument("leapfrog_integrate: dt must be nonzero");
    const int n = z0.n();
    Trajectory out;
    out.times.reserve(n_steps + 1);
    out.states.reserve(n_steps + 1);
    std::vector<double> q(z0.v.begin(), z0.v.begin() + n);
    std::vector<double> p(z0.v.begin() + n, z0.v.end());
    std::vector<double> gv(n), gk(n);
    auto record = [&](std::size_t k) {
        std::vector<double> s(2 * n);
        std::copy(q.begin(), q.end(), s.begin());
        std::copy(p.begin(), p.end(), s.begin() + n);
        detail::check_finite(s, "leapfrog");
        out.times.push_back(t0 + double(k) * dt);
        out.states.push_back(std::move(s));
    };
    record(0);
    if (n_steps == 0) return out;
    grad_V(q, gv);
    for (std::size_t k = 1; k <= n_steps; ++k) {
        for (int i = 0; i < n; ++i) p[i] -= 0.5 * dt * gv[i];
        grad_K(p, gk);
        for (int i = 0; i < n; ++i) q[i] += dt * gk[i];
        grad_V(q, gv);
        for (int i = 0; i < n; ++i) p[i] -= 0.5 * dt * gv[i];
        record(k);
    }
    return out;
}

/// Forward Euler with the ground-contact rule applied after each step.
inline Trajectory integrate_with_contact(const DerivFn& f, std::span<const double> y0,
                                         double dt, std::size_t n_steps, double rho,
                                         double t0 = 0.0) {
    if (!(dt > 0.0)) throw std::invalid_argument("integrate_with_contact: dt must be positive");
    if (y0.size() != 2)
        throw std::invalid_argument("integrate_with_contact: expects the (q,p) ball layout");
    Trajectory out;
    out.times.reserve(n_steps + 1);
    out.states.reserve(n_steps + 1);
    std::vector<double> y(y0.begin(), y0.end()), dy(2);
    out.times.push_back(t0);
    out.states.push_back(y);
    for (std::size_t k = 1; k <= n_steps; ++k) {
        f(y, dy);
        y[0] += dt * dy[0];
        y[1] += dt * dy[1];
        if (y[0] <= 0.0 && y[1] < 0.0) {
            y[0] = 0.0;
            y[1] = -rho * y[1];
        }
        detail::check_finite(y, "contact euler");
        out.times.push_back(t0 + double(k) * dt);
        out.states.push_back(y);
    }
    return out;
}

/// Leapfrog with the same post-step contact rule (bouncing-ball sequences).
inline Trajectory leapfrog_with_contact(const GradFn& grad_V, const GradFn& grad_K,
                                        const PhaseState& z0, double dt,
                                        std::size_t n_steps, double rho, double t0 = 0.0) {
    if (!(dt > 0.0)) throw std::invalid_argument("leapfrog_with_contact: dt must be positive");
    if (z0.n() != 1)
        throw std::invalid_argument("leapfrog_with_contact: expects the (q,p) ball layout");
    Trajectory out;
    out.times.reserve(n_steps + 1);
    out.states.reserve(n_steps + 1);
    std::vector<double> q(1), p(1), gv(1), gk(1);
    q[0] = z0.v[0];
    p[0] = z0.v[1];
    out.times.push_back(t0);
    out.states.push_back({q[0], p[0]});
    for (std::size_t k = 1; k <= n_steps; ++k) {
        grad_V(q, gv);
        p[0] -= 0.5 * dt * gv[0];
        grad_K(p, gk);
        q[0] += dt * gk[0];
        grad_V(q, gv);
        p[0] -= 0.5 * dt * gv[0];
        if (q[0] <= 0.0 && p[0] < 0.0) {
            q[0] = 0.0;
            p[0] = -rho * p[0];
        }
        if (!std::isfinite(q[0]) || !std::isfinite(p[0]))
            throw ad::numeric_error("leapfrog contact: non-finite state");
        out.times.push_back(t0 + double(k) * dt);
        out.states.push_back({q[0], p[0]});
    }
    return out;
}

}  // namespace mech
