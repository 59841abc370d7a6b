#pragma once

#include <atomic>
#include <cmath>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "plume/fem.hpp"
#include "plume/mesh.hpp"
#include "plume/sparse.hpp"
#include "plume/wind.hpp"

namespace plume {

class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

struct TransportConfig {
    double kappa = 1e-3;     // diffusion [m^2/s]
    double dt = 0.05;        // time step [s]
    int n_steps = 100;       // number of implicit Euler steps
    bool stabilization = true;

    double horizon() const { return dt * n_steps; }

    void validate() const {
        if (kappa <= 0.0) throw TransportError("kappa must be positive");
        if (dt <= 0.0) throw TransportError("dt must be positive");
        if (n_steps < 1) throw TransportError("n_steps must be at least 1");
    }
};

/// Nodal states u^0..u^{n_T} of a forward march (or p^0..p^{n_T} backward).
struct StateTrajectory {
    std::vector<Vector> states;
    double dt = 0.0;

    int n_steps() const { return static_cast<int>(states.size()) - 1; }
    const Vector& at(int n) const { return states[static_cast<std::size_t>(n)]; }
};

struct Observation {
    double t = 0.0;
    Vec2 x;
    int sensor_id = 0;
};

struct SensorPlan {
    std::vector<Observation> observations;
    double noise_sigma = 0.0;

    int size() const { return static_cast<int>(observations.size()); }
};

/// Assembled FEM operators for one (mesh, wind, kappa) triple, plus the
/// boundary classification and inflow Dirichlet mask derived from the wind.
struct FemOperators {
    std::shared_ptr<const TriMesh> mesh;
    std::shared_ptr<const WindField> wind;
    SparseMatrix mass;        // M
    SparseMatrix stiffness;   // K
    SparseMatrix advection;   // V
    SparseMatrix s_tau;       // SUPG streamline term
    SparseMatrix vt_tau;      // SUPG transposed-advection term
    SparseMatrix boundary;    // B
    std::vector<BoundaryMarker> markers;
    std::vector<std::uint8_t> dirichlet;

    static FemOperators build(std::shared_ptr<const TriMesh> mesh,
                              std::shared_ptr<const WindField> wind, double kappa,
                              double tol_n = 1e-10) {
        FemOperators ops;
        ops.mesh = mesh;
        ops.wind = wind;
        ops.mass = assemble_mass(*mesh);
        ops.stiffness = assemble_stiffness(*mesh);
        ops.advection = assemble_advection(*mesh, *wind);
        auto supg = assemble_supg(*mesh, *wind, kappa);
        ops.s_tau = std::move(supg.s_tau);
        ops.vt_tau = std::move(supg.vt_tau);
        ops.boundary = assemble_boundary_mass(*mesh);
        ops.markers = classify_boundary(*mesh, *wind, tol_n);
        ops.dirichlet = dirichlet_mask(*mesh, ops.markers);
        return ops;
    }
};

/// Space-time observation operator: barycentric interpolation in space,
/// linear interpolation between the two bracketing time steps. The same
/// precomputed weights drive both the forward sampling and the adjoint loads,
/// which keeps the two exact transposes of each other.
class ObservationOperator {
public:
    ObservationOperator() = default;

    ObservationOperator(const TriMesh& mesh, const SensorPlan& plan, const TransportConfig& cfg)
        : n_steps_(cfg.n_steps) {
        const double T = cfg.horizon();
        entries_.reserve(plan.observations.size());
        for (const auto& obs : plan.observations) {
            if (obs.t < -1e-12 || obs.t > T + 1e-9 * cfg.dt)
                throw TransportError("observation time " + std::to_string(obs.t) +
                                     " outside [0, " + std::to_string(T) + "]");
            Entry en;
            en.loc = mesh.locate(obs.x);
            const double s = std::min(std::max(obs.t / cfg.dt, 0.0), static_cast<double>(cfg.n_steps));
            en.n_lo = std::min(static_cast<int>(s), cfg.n_steps - 1);
            en.w_hi = s - en.n_lo;
            en.w_lo = 1.0 - en.w_hi;
            entries_.push_back(en);
        }
    }

    int size() const { return static_cast<int>(entries_.size()); }

    Vector observe(const TriMesh& mesh, const StateTrajectory& traj) const {
        Vector y(size());
        for (int i = 0; i < size(); ++i) {
            const Entry& en = entries_[static_cast<std::size_t>(i)];
            y[i] = en.w_lo * mesh.interpolate(en.loc, traj.at(en.n_lo)) +
                   en.w_hi * mesh.interpolate(en.loc, traj.at(en.n_lo + 1));
        }
        return y;
    }

    /// Adjoint loads q^n = sum_i y_i w_i^n g_i, one vector per time step.
    std::vector<Vector> loads(const TriMesh& mesh, const Vector& y) const {
        std::vector<Vector> q(static_cast<std::size_t>(n_steps_) + 1);
        auto add = [&](int n, const BaryLocation& loc, double w) {
            if (w == 0.0) return;
            auto& qn = q[static_cast<std::size_t>(n)];
            if (qn.size() == 0) qn = Vector::Zero(mesh.num_nodes());
            const auto& t = mesh.triangle(loc.tri);
            for (int k = 0; k < 3; ++k) qn[t[k]] += w * loc.w[k];
        };
        for (int i = 0; i < size(); ++i) {
            const Entry& en = entries_[static_cast<std::size_t>(i)];
            add(en.n_lo, en.loc, y[i] * en.w_lo);
            add(en.n_lo + 1, en.loc, y[i] * en.w_hi);
        }
        return q;
    }

private:
    struct Entry {
        BaryLocation loc;
        int n_lo = 0;
        double w_lo = 1.0;
        double w_hi = 0.0;
    };
    std::vector<Entry> entries_;
    int n_steps_ = 0;
};

/// Backward march of the discrete adjoint. `states` are the marched adjoint
/// steps; `initial_dual` is the time-zero dual state assembled so that
/// <F(m_I,0), y> = <m_I, M initial_dual> holds to machine precision, and
/// `continuous_dual` the analog for time-constant sources.
struct AdjointSolution {
    StateTrajectory trajectory;
    Vector initial_dual;      // M^{-1} initial_load
    Vector initial_load;      // gradient of <F(.,0), y> w.r.t. m_I
    Vector continuous_dual;   // M^{-1} continuous_load
    Vector continuous_load;   // gradient of <F(0,.), y> w.r.t. m_C
};

/// Implicit Euler advection-diffusion march with SUPG stabilization and its
/// exact discrete adjoint. System matrices are assembled and factorized once;
/// every forward step and every adjoint step reuses the factorization.
class TransportOperator {
public:
    TransportOperator(std::shared_ptr<const TriMesh> mesh, const FemOperators& ops,
                      const TransportConfig& cfg)
        : mesh_(std::move(mesh)), cfg_(cfg), dirichlet_(ops.dirichlet),
          mass_(ops.mass) {
        cfg_.validate();
        SparseMatrix a = ops.mass + ops.advection.scaled(cfg_.dt) +
                         ops.stiffness.scaled(cfg_.dt * cfg_.kappa);
        SparseMatrix r = ops.mass;
        if (cfg_.stabilization) {
            a = a + ops.s_tau.scaled(cfg_.dt) + ops.vt_tau;
            r = r + ops.vt_tau;
        }
        system_ = apply_dirichlet(a, dirichlet_);
        rhs_op_ = std::move(r);
    }

    const TriMesh& mesh() const { return *mesh_; }
    const TransportConfig& config() const { return cfg_; }
    const SparseMatrix& mass() const { return mass_; }
    const std::vector<std::uint8_t>& dirichlet() const { return dirichlet_; }

    long forward_solves() const { return forward_count_.load(); }
    long adjoint_solves() const { return adjoint_count_.load(); }

    /// March u^0 = m_I, (M + dt V + dt kappa K + dt S_tau + Vt_tau) u^{n+1}
    ///             = (M + Vt_tau)(u^n + dt m_C).
    /// Dirichlet entries of m_I and m_C are projected out.
    StateTrajectory forward(const Vector& m_initial, const Vector& m_continuous) const {
        ++forward_count_;
        StateTrajectory traj;
        traj.dt = cfg_.dt;
        traj.states.reserve(static_cast<std::size_t>(cfg_.n_steps) + 1);
        Vector u = project_out(m_initial, dirichlet_);
        const Vector mc = project_out(m_continuous, dirichlet_);
        traj.states.push_back(u);
        for (int n = 0; n < cfg_.n_steps; ++n) {
            Vector rhs = project_out(rhs_op_.apply(u + cfg_.dt * mc), dirichlet_);
            u = system_.solve(rhs);
            if (!u.allFinite())
                throw TransportError("forward march produced non-finite state at step " +
                                     std::to_string(n + 1));
            traj.states.push_back(u);
        }
        return traj;
    }

    /// Final-value backward march
    ///   (M + dt V^T + dt kappa K + dt S_tau^T + Vt_tau^T) p^n
    ///       = (M + Vt_tau^T) p^{n+1} + q^{n+1},   p^{n_T} = 0,
    /// accumulating the exact-transpose duals for both source types on the fly.
    AdjointSolution adjoint(const ObservationOperator& obs, const Vector& y) const {
        ++adjoint_count_;
        if (y.size() != obs.size())
            throw TransportError("misfit vector length does not match observation count");
        const std::vector<Vector> q = obs.loads(*mesh_, y);
        const int ndof = mesh_->num_nodes();

        AdjointSolution sol;
        sol.trajectory.dt = cfg_.dt;
        sol.trajectory.states.assign(static_cast<std::size_t>(cfg_.n_steps) + 1,
                                     Vector::Zero(ndof));
        Vector accum = Vector::Zero(ndof);
        Vector p = Vector::Zero(ndof);
        for (int n = cfg_.n_steps - 1; n >= 0; --n) {
            Vector rhs = project_out(rhs_op_.apply_transpose(p), dirichlet_);
            const Vector& qn1 = q[static_cast<std::size_t>(n) + 1];
            if (qn1.size() != 0) rhs += project_out(qn1, dirichlet_);
            p = system_.solve_transpose(rhs);
            if (!p.allFinite())
                throw TransportError("adjoint march produced non-finite state at step " +
                                     std::to_string(n));
            sol.trajectory.states[static_cast<std::size_t>(n)] = p;
            accum += project_out(rhs_op_.apply_transpose(p), dirichlet_);
        }
        sol.initial_load = project_out(rhs_op_.apply_transpose(p), dirichlet_);
        if (q[0].size() != 0) sol.initial_load += project_out(q[0], dirichlet_);
        sol.initial_dual = mass_.solve(sol.initial_load);
        sol.continuous_load = cfg_.dt * accum;
        sol.continuous_dual = mass_.solve(sol.continuous_load);
        return sol;
    }

    Vector parameter_to_observable(const ObservationOperator& obs, const Vector& m_initial,
                                   const Vector& m_continuous) const {
        return obs.observe(*mesh_, forward(m_initial, m_continuous));
    }

private:
    std::shared_ptr<const TriMesh> mesh_;
    TransportConfig cfg_;
    std::vector<std::uint8_t> dirichlet_;
    SparseMatrix mass_;
    SparseMatrix system_;   // Dirichlet-constrained step matrix
    SparseMatrix rhs_op_;   // M (+ Vt_tau), unconstrained
    mutable std::atomic<long> forward_count_{0};
    mutable std::atomic<long> adjoint_count_{0};
};

/// Time-integrated dual for time-constant sources, in the M-weighted pairing:
/// <F(0, m_C), y> = <m_C, M adjoint_continuous_dual(...)>.
inline const Vector& adjoint_continuous_dual(const AdjointSolution& sol) {
    return sol.continuous_dual;
}

inline void write_trajectory_csv(std::ostream& out, const StateTrajectory& traj) {
    out << "step,time,node,value\n";
    for (int n = 0; n < static_cast<int>(traj.states.size()); ++n) {
        const Vector& u = traj.at(n);
        for (int i = 0; i < u.size(); ++i)
            out << n << "," << detail::fmt_double(n * traj.dt) << "," << i << ","
                << detail::fmt_double(u[i]) << "\n";
    }
}

inline void write_sensor_series_csv(std::ostream& out, const SensorPlan& plan, const Vector& values) {
    out << "sensor_id,t,value\n";
    for (int i = 0; i < plan.size(); ++i) {
        const auto& obs = plan.observations[static_cast<std::size_t>(i)];
        out << obs.sensor_id << "," << detail::fmt_double(obs.t) << ","
            << detail::fmt_double(values[i]) << "\n";
    }
}

} // namespace plume
