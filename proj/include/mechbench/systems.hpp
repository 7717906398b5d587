#pragma once
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechbench/autodiff.hpp"
#include "mechbench/graph.hpp"

namespace mech {

/// Builds a scalar graph over the given input nodes. Used both for analytic
/// energies and for networks, which is what lets the exact-model oracles run
/// through the same pipeline as trained models.
using ScalarFieldBuilder =
    std::function<ad::NodeId(ad::Tape&, std::span<const ad::NodeId>)>;

struct singular_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class SystemTag {
    MassSpring, Pendulum, SpringPendulum, DoublePendulum, BouncingBall, ThreeBody
};

inline std::string to_string(SystemTag t) {
    switch (t) {
        case SystemTag::MassSpring: return "mass-spring";
        case SystemTag::Pendulum: return "pendulum";
        case SystemTag::SpringPendulum: return "spring-pendulum";
        case SystemTag::DoublePendulum: return "double-pendulum";
        case SystemTag::BouncingBall: return "bouncing-ball";
        case SystemTag::ThreeBody: return "three-body";
    }
    return "?";
}

inline SystemTag system_tag_from_string(const std::string& s) {
    if (s == "mass-spring") return SystemTag::MassSpring;
    if (s == "pendulum") return SystemTag::Pendulum;
    if (s == "spring-pendulum") return SystemTag::SpringPendulum;
    if (s == "double-pendulum") return SystemTag::DoublePendulum;
    if (s == "bouncing-ball") return SystemTag::BouncingBall;
    if (s == "three-body") return SystemTag::ThreeBody;
    throw std::invalid_argument("unknown system tag: " + s);
}

/// Tagged description of one mechanical system with its physical constants.
/// Only the fields relevant to the tag are meaningful.
struct SystemSpec {
    SystemTag tag = SystemTag::MassSpring;
    double m = 1.0;             // mass (single-mass systems)
    double k = 1.0;             // spring stiffness
    double l = 1.0;             // pendulum rod length
    double l0 = 1.0;            // spring rest length
    double g = 9.8;             // gravity
    double G = 1.0;             // gravitational constant
    double m1 = 1.0, m2 = 1.0, m3 = 1.0;
    double l1 = 1.0, l2 = 1.0;
    double restitution = 0.8;   // bouncing ball only

    static SystemSpec mass_spring(double m = 1.0, double k = 1.0) {
        SystemSpec s; s.tag = SystemTag::MassSpring; s.m = m; s.k = k; return s;
    }
    static SystemSpec pendulum(double m = 1.0, double l = 1.0, double g = 9.8) {
        SystemSpec s; s.tag = SystemTag::Pendulum; s.m = m; s.l = l; s.g = g; return s;
    }
    static SystemSpec spring_pendulum(double m = 1.0, double k = 1.0, double l0 = 1.0,
                                      double g = 9.8) {
        SystemSpec s; s.tag = SystemTag::SpringPendulum;
        s.m = m; s.k = k; s.l0 = l0; s.g = g; return s;
    }
    static SystemSpec double_pendulum(double m1 = 1.0, double m2 = 1.0, double l1 = 1.0,
                                      double l2 = 1.0, double g = 9.8) {
        SystemSpec s; s.tag = SystemTag::DoublePendulum;
        s.m1 = m1; s.m2 = m2; s.l1 = l1; s.l2 = l2; s.g = g; return s;
    }
    static SystemSpec bouncing_ball(double m = 1.0, double g = 9.8, double rho = 0.8) {
        SystemSpec s; s.tag = SystemTag::BouncingBall;
        s.m = m; s.g = g; s.restitution = rho; return s;
    }
    static SystemSpec three_body(double G = 1.0, double m1 = 1.0, double m2 = 1.0,
                                 double m3 = 1.0) {
        SystemSpec s; s.tag = SystemTag::ThreeBody;
        s.G = G; s.m1 = m1; s.m2 = m2; s.m3 = m3; return s;
    }

    void validate() const {
        auto pos = [](double v, const char* name) {
            if (!(v > 0.0)) throw std::invalid_argument(std::string("SystemSpec: ") +
                                                        name + " must be positive");
        };
        switch (tag) {
            case SystemTag::MassSpring: pos(m, "m"); pos(k, "k"); break;
            case SystemTag::Pendulum: pos(m, "m"); pos(l, "l"); pos(g, "g"); break;
            case SystemTag::SpringPendulum:
                pos(m, "m"); pos(k, "k"); pos(l0, "l0"); pos(g, "g"); break;
            case SystemTag::DoublePendulum:
                pos(m1, "m1"); pos(m2, "m2"); pos(l1, "l1"); pos(l2, "l2"); pos(g, "g");
                break;
            case SystemTag::BouncingBall:
                pos(m, "m"); pos(g, "g");
                if (!(restitution > 0.0 && restitution <= 1.0))
                    throw std::invalid_argument("SystemSpec: restitution must be in (0,1]");
                break;
            case SystemTag::ThreeBody:
                pos(G, "G"); pos(m1, "m1"); pos(m2, "m2"); pos(m3, "m3"); break;
        }
    }
};

enum class Convention { Hamiltonian, Lagrangian };

inline std::string to_string(Convention c) {
    return c == Convention::Hamiltonian ? "hamiltonian" : "lagrangian";
}
inline Convention convention_from_string(const std::string& s) {
    if (s == "hamiltonian") return Convention::Hamiltonian;
    if (s == "lagrangian") return Convention::Lagrangian;
    throw std::invalid_argument("unknown convention: " + s);
}

/// Number of generalized coordinates (half the phase dimension).
inline int coord_dim(const SystemSpec& sys, Convention conv) {
    switch (sys.tag) {
        case SystemTag::MassSpring:
        case SystemTag::Pendulum:
        case SystemTag::BouncingBall: return 1;
        case SystemTag::SpringPendulum:
        case SystemTag::DoublePendulum: return 2;
        case SystemTag::ThreeBody:
            // planar (q,p) for the Hamiltonian convention, spatial (q,q̇) for
            // the Lagrangian one, matching the stated 12- vs 18-dim inputs
            return conv == Convention::Hamiltonian ? 6 : 9;
    }
    return 0;
}

inline int phase_dim(const SystemSpec& sys, Convention conv) {
    return 2 * coord_dim(sys, conv);
}

/// Flat state: the first half is q, the second half is momentum p
/// (Hamiltonian convention) or velocity q̇ (Lagrangian convention).
struct PhaseState {
    Convention conv = Convention::Hamiltonian;
    std::vector<double> v;

    int dim() const { return static_cast<int>(v.size()); }
    int n() const { return dim() / 2; }
    std::span<const double> q() const { return {v.data(), std::size_t(n())}; }
    std::span<const double> second() const { return {v.data() + n(), std::size_t(n())}; }
};

inline void check_layout(const SystemSpec& sys, const PhaseState& s, Convention want) {
    if (s.conv != want)
        throw std::invalid_argument("PhaseState: wrong convention for this operation");
    if (s.dim() != phase_dim(sys, want))
        throw std::invalid_argument("PhaseState: dimension " + std::to_string(s.dim()) +
                                    " does not match system layout " +
                                    std::to_string(phase_dim(sys, want)));
}

/// Configuration-space guards shared by energies and flows.
inline void check_configuration(const SystemSpec& sys, std::span<const double> q) {
    if (sys.tag == SystemTag::SpringPendulum && !(q[0] > 0.0))
        throw singular_error("spring pendulum: radial coordinate r must be positive");
    if (sys.tag == SystemTag::ThreeBody) {
        int d = static_cast<int>(q.size()) / 3;
        for (int i = 0; i < 3; ++i)
            for (int j = i + 1; j < 3; ++j) {
                double r2 = 0.0;
                for (int c = 0; c < d; ++c) {
                    double dc = q[i * d + c] - q[j * d + c];
                    r2 += dc * dc;
                }
                if (!(r2 > 1e-24))
                    throw singular_error("three-body: coincident bodies");
            }
    }
}

// ---------------------------------------------------------------------------
// Analytic energies as graph expressions
// ---------------------------------------------------------------------------

/// H(q,p) for the tagged system over the given state nodes.
inline ad::NodeId hamiltonian_expr(ad::Tape& t, const SystemSpec& sys,
                                   std::span<const ad::NodeId> s) {
    using ad::Expr;
    auto E = [&](ad::NodeId id) { return Expr(t, id); };
    switch (sys.tag) {
        case SystemTag::MassSpring: {
            Expr q = E(s[0]), p = E(s[1]);
            return (square(p) / (2.0 * sys.m) + sys.k * square(q) / 2.0).id();
        }
        case SystemTag::Pendulum: {
            Expr q = E(s[0]), p = E(s[1]);
            return (square(p) / (2.0 * sys.m * sys.l * sys.l) +
                    sys.m * sys.g * sys.l * (1.0 - cos(q))).id();
        }
        case SystemTag::SpringPendulum: {
            Expr r = E(s[0]), th = E(s[1]), pr = E(s[2]), pth = E(s[3]);
            return (square(pr) / (2.0 * sys.m) +
                    square(pth) / (2.0 * sys.m * square(r)) +
                    sys.m * sys.g * r * cos(th) +
                    0.5 * sys.k * square(r - sys.l0)).id();
        }
        case SystemTag::DoublePendulum: {
            Expr q1 = E(s[0]), q2 = E(s[1]), p1 = E(s[2]), p2 = E(s[3]);
            double m1 = sys.m1, m2 = sys.m2, l1 = sys.l1, l2 = sys.l2, g = sys.g;
            Expr c = cos(q1 - q2), sn = sin(q1 - q2);
            Expr num = m2 * l2 * l2 * square(p1) + (m1 + m2) * l1 * l1 * square(p2) -
                       2.0 * m2 * l1 * l2 * p1 * p2 * c;
            Expr den = 2.0 * l1 * l1 * l2 * l2 * (m1 + m2 * square(sn));
            Expr V = -(m1 + m2) * g * l1 * cos(q1) - m2 * g * l2 * cos(q2);
            return (num / den + V).id();
        }
        case SystemTag::BouncingBall: {
            Expr q = E(s[0]), p = E(s[1]);
            return (square(p) / (2.0 * sys.m) + sys.m * sys.g * q).id();
        }
        case SystemTag::ThreeBody: {
            double mass[3] = {sys.m1, sys.m2, sys.m3};
            Expr H = E(t.constant(0.0));
            for (int i = 0; i < 3; ++i) {
                Expr px = E(s[6 + 2 * i]), py = E(s[6 + 2 * i + 1]);
                H = H + (square(px) + square(py)) / (2.0 * mass[i]);
            }
            for (int i = 0; i < 3; ++i)
                for (int j = i + 1; j < 3; ++j) {
                    Expr dx = E(s[2 * i]) - E(s[2 * j]);
                    Expr dy = E(s[2 * i + 1]) - E(s[2 * j + 1]);
                    H = H - sys.G * mass[i] * mass[j] / sqrt(square(dx) + square(dy));
                }
            return H.id();
        }
    }
    throw std::logic_error("hamiltonian_expr: unreachable");
}

/// L(q,q̇) = T − V. The three-body Lagrangian (spatial, 9 coordinates) is
/// used only through the model pipeline; the dataset labels come from the
/// closed-form accelerations instead.
inline ad::NodeId lagrangian_expr(ad::Tape& t, const SystemSpec& sys,
                                  std::span<const ad::NodeId> s) {
    using ad::Expr;
    auto E = [&](ad::NodeId id) { return Expr(t, id); };
    switch (sys.tag) {
        case SystemTag::MassSpring: {
            Expr q = E(s[0]), qd = E(s[1]);
            return (0.5 * sys.m * square(qd) - 0.5 * sys.k * square(q)).id();
        }
        case SystemTag::Pendulum: {
            Expr q = E(s[0]), qd = E(s[1]);
            return (0.5 * sys.m * sys.l * sys.l * square(qd) -
                    sys.m * sys.g * sys.l * (1.0 - cos(q))).id();
        }
        case SystemTag::SpringPendulum: {
            Expr r = E(s[0]), th = E(s[1]), rd = E(s[2]), thd = E(s[3]);
            return (0.5 * sys.m * square(rd) + 0.5 * sys.m * square(r) * square(thd) -
                    0.5 * sys.k * square(r - sys.l0) - sys.m * sys.g * r * cos(th)).id();
        }
        case SystemTag::DoublePendulum: {
            Expr q1 = E(s[0]), q2 = E(s[1]), v1 = E(s[2]), v2 = E(s[3]);
            double m1 = sys.m1, m2 = sys.m2, l1 = sys.l1, l2 = sys.l2, g = sys.g;
            Expr T = 0.5 * m1 * square(l1 * v1) +
                     0.5 * m2 * (square(l1 * v1) + square(l2 * v2) +
                                 2.0 * l1 * l2 * v1 * v2 * cos(q1 - q2));
            Expr V = -(m1 * g * l1) * cos(q1) - m2 * g * (l1 * cos(q1) + l2 * cos(q2));
            return (T - V).id();
        }
        case SystemTag::BouncingBall: {
            Expr q = E(s[0]), qd = E(s[1]);
            return (0.5 * sys.m * square(qd) - sys.m * sys.g * q).id();
        }
        case SystemTag::ThreeBody: {
            double mass[3] = {sys.m1, sys.m2, sys.m3};
            Expr L = E(t.constant(0.0));
            for (int i = 0; i < 3; ++i)
                for (int c = 0; c < 3; ++c)
                    L = L + 0.5 * mass[i] * square(E(s[9 + 3 * i + c]));
            for (int i = 0; i < 3; ++i)
                for (int j = i + 1; j < 3; ++j) {
                    Expr r2 = E(t.constant(0.0));
                    for (int c = 0; c < 3; ++c)
                        r2 = r2 + square(E(s[3 * i + c]) - E(s[3 * j + c]));
                    L = L + sys.G * mass[i] * mass[j] / sqrt(r2);
                }
            return L.id();
        }
    }
    throw std::logic_error("lagrangian_expr: unreachable");
}

inline ScalarFieldBuilder system_hamiltonian_field(const SystemSpec& sys) {
    return [sys](ad::Tape& t, std::span<const ad::NodeId> s) {
        return hamiltonian_expr(t, sys, s);
    };
}

inline ScalarFieldBuilder system_lagrangian_field(const SystemSpec& sys) {
    return [sys](ad::Tape& t, std::span<const ad::NodeId> s) {
        return lagrangian_expr(t, sys, s);
    };
}

inline double hamiltonian(const SystemSpec& sys, const PhaseState& s) {
    check_layout(sys, s, Convention::Hamiltonian);
    check_configuration(sys, s.q());
    ad::Tape t;
    auto xs = t.inputs(0, static_cast<std::uint32_t>(s.dim()));
    ad::NodeId h = hamiltonian_expr(t, sys, xs);
    ad::EvalBuffer buf(t);
    return buf.value(s.v, h);
}

inline double lagrangian(const SystemSpec& sys, const PhaseState& s) {
    if (sys.tag == SystemTag::ThreeBody)
        throw std::invalid_argument(
            "lagrangian: three-body ground truth uses closed-form accelerations");
    check_layout(sys, s, Convention::Lagrangian);
    check_configuration(sys, s.q());
    ad::Tape t;
    auto xs = t.inputs(0, static_cast<std::uint32_t>(s.dim()));
    ad::NodeId l = lagrangian_expr(t, sys, xs);
    ad::EvalBuffer buf(t);
    return buf.value(s.v, l);
}

// ---------------------------------------------------------------------------
// Compiled flows
// ---------------------------------------------------------------------------

/// Symplectic-gradient field (q̇, ṗ) = (∂H/∂p, −∂H/∂q) of a scalar H graph,
/// compiled once and evaluated repeatedly.
class HamiltonianDerivative {
public:
    HamiltonianDerivative(const ScalarFieldBuilder& h_field, int dim)
        : dim_(dim), buf_(tape_) {
        auto xs = tape_.inputs(0, static_cast<std::uint32_t>(dim));
        h_node_ = h_field(tape_, xs);
        auto grad = ad::adjoint_nodes(tape_, h_node_, xs);
        int n = dim / 2;
        deriv_.resize(dim);
        for (int i = 0; i < n; ++i) {
            deriv_[i] = grad[n + i];               // q̇ = ∂H/∂p
            deriv_[n + i] = tape_.neg(grad[i]);    // ṗ = −∂H/∂q
        }
        buf_ = ad::EvalBuffer(tape_);
    }

    int dim() const { return dim_; }

    void operator()(std::span<const double> state, std::span<double> out) {
        buf_.values(state, deriv_, out);
    }

    double energy(std::span<const double> state) { return buf_.value(state, h_node_); }

private:
    ad::Tape tape_;
    int dim_;
    ad::NodeId h_node_;
    std::vector<ad::NodeId> deriv_;
    ad::EvalBuffer buf_;
};

/**
 * Euler–Lagrange acceleration of a scalar L graph:
 *   (∇_q̇∇_q̇ᵀL) q̈ = ∇_q L − (∇_q∇_q̇ᵀL) q̇
 * assembled symbolically (gradient, then one adjoint pass per q̇ component)
 * and closed with an embedded linear solve. `ridge` adds λ·I to the velocity
 * Hessian before solving (used by the learned models).
 */
class LagrangianAccel {
public:
    LagrangianAccel(const ScalarFieldBuilder& l_field, int n_coords,
                    double ridge = 0.0, double max_condition = 1e12)
        : n_(n_coords), buf_(tape_) {
        ad::Tape& t = tape_;
        auto xs = t.inputs(0, static_cast<std::uint32_t>(2 * n_));
        ad::NodeId L = l_field(t, xs);
        auto grad = ad::adjoint_nodes(t, L, xs);  // [∇_q L, ∇_q̇ L]
        std::vector<ad::NodeId> A(n_ * n_), rhs(n_);
        for (int i = 0; i < n_; ++i) {
            auto row = ad::adjoint_nodes(t, grad[n_ + i], xs);
            for (int j = 0; j < n_; ++j) {
                ad::NodeId h = row[n_ + j];  // ∂²L/∂q̇_i∂q̇_j
                if (ridge != 0.0 && i == j) h = t.add(h, t.constant(ridge));
                A[i * n_ + j] = h;
            }
            // rhs_i = ∂L/∂q_i − Σ_j (∂²L/∂q̇_i∂q_j) q̇_j
            std::vector<ad::NodeId> hq(row.begin(), row.begin() + n_);
            std::vector<ad::NodeId> qd(xs.begin() + n_, xs.end());
            rhs[i] = t.sub(grad[i], t.dot(hq, qd));
        }
        accel_ = t.linear_solve(A, rhs, max_condition);
        buf_ = ad::EvalBuffer(tape_);
    }

    int n_coords() const { return n_; }

    /// state = (q, q̇) flattened, out = q̈.
    void operator()(std::span<const double> state, std::span<double> out) {
        buf_.values(state, accel_, out);
    }

private:
    ad::Tape tape_;
    int n_;
    std::vector<ad::NodeId> accel_;
    ad::EvalBuffer buf_;
};

// ---------------------------------------------------------------------------
// Spec-level operations
// ---------------------------------------------------------------------------

/// (q̇, ṗ) of the tagged analytic Hamiltonian, by graph differentiation.
inline std::vector<double> hamiltonian_eom(const SystemSpec& sys, const PhaseState& s) {
    check_layout(sys, s, Convention::Hamiltonian);
    check_configuration(sys, s.q());
    HamiltonianDerivative f(system_hamiltonian_field(sys), s.dim());
    std::vector<double> out(s.dim());
    f(s.v, out);
    return out;
}

/// Closed-form pairwise gravitational accelerations. `positions` holds the
/// three body positions flattened (dim components each, dim 2 or 3).
inline std::vector<double> three_body_accelerations(const SystemSpec& sys,
                                                    std::span<const double> positions) {
    if (sys.tag != SystemTag::ThreeBody)
        throw std::invalid_argument("three_body_accelerations: wrong system tag");
    int d = static_cast<int>(positions.size()) / 3;
    if (positions.size() != std::size_t(3 * d) || (d != 2 && d != 3))
        throw std::invalid_argument("three_body_accelerations: need 3 positions of dim 2 or 3");
    check_configuration(sys, positions);
    double mass[3] = {sys.m1, sys.m2, sys.m3};
    std::vector<double> acc(3 * d, 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i == j) continue;
            double r2 = 0.0;
            for (int c = 0; c < d; ++c) {
                double dc = positions[j * d + c] - positions[i * d + c];
                r2 += dc * dc;
            }
            double inv_r3 = 1.0 / (r2 * std::sqrt(r2));
            for (int c = 0; c < d; ++c)
                acc[i * d + c] += sys.G * mass[j] *
                                  (positions[j * d + c] - positions[i * d + c]) * inv_r3;
        }
    return acc;
}

/// Ground-truth q̈ at a Lagrangian-convention state.
inline std::vector<double> lagrangian_accel(const SystemSpec& sys, const PhaseState& s) {
    check_layout(sys, s, Convention::Lagrangian);
    check_configuration(sys, s.q());
    if (sys.tag == SystemTag::ThreeBody)
        return three_body_accelerations(sys, s.q());
    int n = coord_dim(sys, Convention::Lagrangian);
    LagrangianAccel f(system_lagrangian_field(sys), n);
    std::vector<double> out(n);
    f(s.v, out);
    return out;
}

/// Ground contact: clamp the height to 0 and flip/scale the momentum.
inline PhaseState apply_contact(const PhaseState& s, double rho) {
    PhaseState out = s;
    out.v[0] = 0.0;
    out.v[1] = -rho * s.v[1];
    return out;
}

// ---------------------------------------------------------------------------
// Convention conversions (via the analytic structure)
// ---------------------------------------------------------------------------

/// (q,p) → (q,q̇) with q̇ = ∂H/∂p.
inline PhaseState to_lagrangian(const SystemSpec& sys, const PhaseState& s) {
    check_layout(sys, s, Convention::Hamiltonian);
    auto deriv = hamiltonian_eom(sys, s);
    PhaseState out{Convention::Lagrangian, s.v};
    int n = s.n();
    for (int i = 0; i < n; ++i) out.v[n + i] = deriv[i];
    return out;
}

/// (q,q̇) → (q,p) with p = ∂L/∂q̇.
inline PhaseState to_hamiltonian(const SystemSpec& sys, const PhaseState& s) {
    check_layout(sys, s, Convention::Lagrangian);
    ad::Tape t;
    auto xs = t.inputs(0, static_cast<std::uint32_t>(s.dim()));
    ad::NodeId L = lagrangian_expr(t, sys, xs);
    std::vector<ad::NodeId> qd(xs.begin() + s.n(), xs.end());
    auto p_nodes = ad::adjoint_nodes(t, L, qd);
    ad::EvalBuffer buf(t);
    PhaseState out{Convention::Hamiltonian, s.v};
    std::vector<double> p(s.n());
    buf.values(s.v, p_nodes, p);
    for (int i = 0; i < s.n(); ++i) out.v[s.n() + i] = p[i];
    return out;
}

}  // namespace mech
