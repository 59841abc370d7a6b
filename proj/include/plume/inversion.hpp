#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plume/sources.hpp"
#include "plume/transport.hpp"

namespace plume {

struct PdapConfig {
    double alpha = 1.0;        // regularization weight
    double sigma = 1.0;        // noise scale entering the data term
    double tol_abs = -1.0;     // dual slack tolerance; negative selects 1e-3 * alpha
    int max_iter = 50;
    double prune_rel = 1e-10;
    double merge_radius = 0.0;
    bool use_initial = true;
    bool use_continuous = false;

    double resolved_tol() const { return tol_abs >= 0.0 ? tol_abs : 1e-3 * alpha; }

    void validate() const {
        if (alpha <= 0.0) throw std::invalid_argument("alpha must be positive");
        if (sigma <= 0.0) throw std::invalid_argument("sigma must be positive");
        if (max_iter < 1) throw std::invalid_argument("max_iter must be at least 1");
        if (!use_initial && !use_continuous)
            throw std::invalid_argument("at least one source kind must be active");
    }
};

struct IterationLog {
    double objective = 0.0;
    double max_phi_initial = -std::numeric_limits<double>::infinity();
    double max_phi_continuous = -std::numeric_limits<double>::infinity();
    int atoms_initial = 0;
    int atoms_continuous = 0;
};

struct CertificateReport {
    double alpha = 0.0;
    double tol = 0.0;
    double max_phi_initial = -std::numeric_limits<double>::infinity();
    double max_phi_continuous = -std::numeric_limits<double>::infinity();
    double global_slack = 0.0;  // max dual value minus alpha
    std::vector<double> atom_slack_initial;    // alpha - phi(x_i) per atom
    std::vector<double> atom_slack_continuous;
    bool certified = false;
};

struct InversionResult {
    SparseMeasure mu_initial{SourceKind::Initial, {}};
    SparseMeasure mu_continuous{SourceKind::Continuous, {}};
    SparseMeasure post_initial{SourceKind::Initial, {}};
    SparseMeasure post_continuous{SourceKind::Continuous, {}};
    std::vector<IterationLog> log;
    CertificateReport certificate;
    int iterations = 0;
    bool certified = false;
    std::string stop_reason;
    long forward_solves = 0;
    long adjoint_solves = 0;
    long elliptic_solves = 0;
    // logical counts kept by the loop itself, cross-checkable against the
    // instrumented transport counters above
    long column_evaluations = 0;
    long dual_evaluations = 0;
};

class SubproblemError : public std::runtime_error {
public:
    SubproblemError(const std::string& what, Vector last)
        : std::runtime_error(what), last_iterate(std::move(last)) {}
    Vector last_iterate;
};

struct SubproblemResult {
    Vector lambda;
    int iterations = 0;
    double kkt_residual = 0.0;
};

inline double objective_value(const Vector& predicted, const Vector& data, double sigma,
                              double alpha, double total_variation) {
    return (predicted - data).squaredNorm() / (2.0 * sigma * sigma) + alpha * total_variation;
}

/// Nonnegative-l1 intensity subproblem
///     min_{lambda >= 0} ||G lambda - d||^2 / (2 sigma^2) + alpha sum(lambda)
/// by a semismooth Newton / active-set method on the projection fixed point,
/// with step halving and a projected-gradient fallback as safeguards.
inline SubproblemResult intensity_subproblem(const Eigen::MatrixXd& columns, const Vector& data,
                                             double sigma, double alpha, Vector warmstart) {
    const int n = static_cast<int>(columns.cols());
    SubproblemResult out;
    if (n == 0) {
        out.lambda = Vector();
        return out;
    }
    const double s2 = sigma * sigma;
    const Eigen::MatrixXd Q = columns.transpose() * columns;
    const Vector b = columns.transpose() * data;

    Vector lam = warmstart.size() == n ? Vector(warmstart.cwiseMax(0.0)) : Vector(Vector::Zero(n));
    auto grad = [&](const Vector& l) -> Vector { return (Q * l - b) / s2 + Vector::Constant(n, alpha); };
    auto fval = [&](const Vector& l) {
        return (0.5 * l.dot(Q * l) - b.dot(l)) / s2 + alpha * l.sum();
    };

    double lip = 0.0;
    for (int i = 0; i < n; ++i) lip = std::max(lip, Q.row(i).cwiseAbs().sum() / s2);
    const double theta = 1.0 / std::max(lip, 1e-300);
    const double scale = std::max({alpha, b.cwiseAbs().maxCoeff() / s2, 1e-300});
    const double tol = 1e-10 * scale;

    const int cap = 500;
    for (int it = 0; it < cap; ++it) {
        const Vector g = grad(lam);
        double res = 0.0;
        for (int i = 0; i < n; ++i)
            res = std::max(res, lam[i] > 0.0 ? std::abs(g[i]) : std::max(0.0, -g[i]));
        if (res <= tol) {
            out.lambda = lam;
            out.iterations = it;
            out.kkt_residual = res;
            return out;
        }

        std::vector<int> active;
        for (int i = 0; i < n; ++i)
            if (lam[i] - theta * g[i] > 0.0) active.push_back(i);

        Vector candidate = Vector::Zero(n);
        bool newton_ok = false;
        if (!active.empty()) {
            const int m = static_cast<int>(active.size());
            Eigen::MatrixXd qa(m, m);
            Vector ba(m);
            for (int i = 0; i < m; ++i) {
                ba[i] = b[active[static_cast<std::size_t>(i)]] - s2 * alpha;
                for (int j = 0; j < m; ++j)
                    qa(i, j) = Q(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(j)]);
            }
            Eigen::LDLT<Eigen::MatrixXd> ldlt(qa);
            if (ldlt.info() == Eigen::Success) {
                const Vector xa = ldlt.solve(ba);
                if (xa.allFinite()) {
                    for (int i = 0; i < m; ++i) candidate[active[static_cast<std::size_t>(i)]] = xa[i];
                    newton_ok = true;
                }
            }
        }

        if (newton_ok) {
            const double f0 = fval(lam);
            double t = 1.0;
            Vector next = candidate.cwiseMax(0.0);
            int halvings = 0;
            while (fval(next) > f0 + 1e-14 * (1.0 + std::abs(f0)) && halvings < 20) {
                t *= 0.5;
                next = (lam + t * (candidate - lam)).cwiseMax(0.0);
                ++halvings;
            }
            if (halvings < 20) {
                lam = next;
                continue;
            }
        }
        lam = (lam - theta * g).cwiseMax(0.0);  // fallback
    }
    throw SubproblemError("intensity subproblem did not converge within iteration cap", lam);
}

/// Support-condition certificate: global slack max(phi) - alpha and per-atom
/// slack alpha - phi(x_i); certified iff the global slack is within tol.
inline CertificateReport certify_optimality(const std::optional<Vector>& phi_initial,
                                            const std::optional<Vector>& phi_continuous,
                                            const SparseMeasure& mu_initial,
                                            const SparseMeasure& mu_continuous,
                                            const TriMesh& mesh, double alpha, double tol) {
    CertificateReport rep;
    rep.alpha = alpha;
    rep.tol = tol;
    double global_max = -std::numeric_limits<double>::infinity();
    if (phi_initial) {
        rep.max_phi_initial = argmax_dual(*phi_initial, mesh).value;
        global_max = std::max(global_max, rep.max_phi_initial);
        for (const auto& a : mu_initial.atoms) {
            const BaryLocation loc = mesh.locate(a.x);
            rep.atom_slack_initial.push_back(alpha - mesh.interpolate(loc, *phi_initial));
        }
    }
    if (phi_continuous) {
        rep.max_phi_continuous = argmax_dual(*phi_continuous, mesh).value;
        global_max = std::max(global_max, rep.max_phi_continuous);
        for (const auto& a : mu_continuous.atoms) {
            const BaryLocation loc = mesh.locate(a.x);
            rep.atom_slack_continuous.push_back(alpha - mesh.interpolate(loc, *phi_continuous));
        }
    }
    rep.global_slack = global_max - alpha;
    rep.certified = rep.global_slack <= tol;
    return rep;
}

/// Remove atoms below prune_rel times the maximum intensity (all-zero
/// measures prune to empty).
inline SparseMeasure prune(const SparseMeasure& mu, double prune_rel) {
    SparseMeasure out{mu.kind, {}};
    double max_i = 0.0;
    for (const auto& a : mu.atoms) max_i = std::max(max_i, a.intensity);
    if (max_i <= 0.0) return out;
    for (const auto& a : mu.atoms)
        if (a.intensity >= prune_rel * max_i && a.intensity > 0.0) out.atoms.push_back(a);
    return out;
}

/// Greedy clustering in descending intensity order: atoms within
/// merge_radius of a cluster seed collapse to their intensity-weighted
/// centroid. Total variation is preserved exactly.
inline SparseMeasure merge_atoms(const SparseMeasure& mu, double merge_radius) {
    if (merge_radius < 0.0) throw std::invalid_argument("merge radius must be >= 0");
    if (merge_radius == 0.0 || mu.size() <= 1) return mu;
    std::vector<int> order(mu.atoms.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return mu.atoms[static_cast<std::size_t>(a)].intensity >
               mu.atoms[static_cast<std::size_t>(b)].intensity;
    });
    std::vector<char> used(mu.atoms.size(), 0);
    SparseMeasure out{mu.kind, {}};
    for (int seed : order) {
        if (used[static_cast<std::size_t>(seed)]) continue;
        const Vec2 center = mu.atoms[static_cast<std::size_t>(seed)].x;
        double mass = 0.0;
        Vec2 moment{0.0, 0.0};
        for (int j : order) {
            if (used[static_cast<std::size_t>(j)]) continue;
            const auto& a = mu.atoms[static_cast<std::size_t>(j)];
            if (distance(a.x, center) <= merge_radius) {
                used[static_cast<std::size_t>(j)] = 1;
                mass += a.intensity;
                moment += a.x * a.intensity;
            }
        }
        out.atoms.push_back(Atom{mass > 0.0 ? moment * (1.0 / mass) : center, mass});
    }
    return out;
}

/// Observation-space columns F(shape(x), 0) / F(0, shape(x)) cached per
/// (kind, node); distinct keys may be inserted concurrently.
class ColumnCache {
public:
    const Vector* find(SourceKind kind, int node) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = map_.find(key(kind, node));
        return it == map_.end() ? nullptr : &it->second;
    }

    const Vector& insert(SourceKind kind, int node, Vector column) {
        std::lock_guard<std::mutex> lock(mutex_);
        return map_.try_emplace(key(kind, node), std::move(column)).first->second;
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return map_.size();
    }

private:
    static long key(SourceKind kind, int node) {
        return (kind == SourceKind::Initial ? 0L : (1L << 32)) + node;
    }
    mutable std::mutex mutex_;
    std::map<long, Vector> map_;
};

/// Everything PDAP needs to evaluate the forward map, the duals and the
/// shape fields for one scenario.
struct InversionContext {
    const TransportOperator* transport = nullptr;
    const ObservationOperator* observation = nullptr;
    const SourceOperator* source_initial = nullptr;      // may be null
    const SourceOperator* source_continuous = nullptr;   // may be null
};

namespace detail {

struct ActiveAtom {
    SourceKind kind;
    int node;
    Vec2 x;
};

inline Vector evaluate_column(const InversionContext& ctx, SourceKind kind, int node) {
    const TriMesh& mesh = ctx.transport->mesh();
    const Vec2 x = mesh.node(node);
    const int ndof = mesh.num_nodes();
    if (kind == SourceKind::Initial)
        return ctx.transport->parameter_to_observable(*ctx.observation,
                                                      ctx.source_initial->field(x),
                                                      Vector::Zero(ndof));
    return ctx.transport->parameter_to_observable(*ctx.observation, Vector::Zero(ndof),
                                                  ctx.source_continuous->field(x));
}

} // namespace detail

/// Primal-Dual-Active-Point loop: alternate between inserting the dual
/// maximizer as a new candidate node and re-optimizing all intensities,
/// until the support condition max phi <= alpha + tol certifies optimality.
inline InversionResult pdap_run(const InversionContext& ctx, const Vector& data,
                                const PdapConfig& cfg) {
    cfg.validate();
    if (cfg.use_initial && !ctx.source_initial)
        throw std::invalid_argument("initial kind active but no shape model bound");
    if (cfg.use_continuous && !ctx.source_continuous)
        throw std::invalid_argument("continuous kind active but no shape model bound");
    if (!data.allFinite()) throw std::invalid_argument("data vector must be finite");

    const TriMesh& mesh = ctx.transport->mesh();
    const double tol = cfg.resolved_tol();
    const double s2 = cfg.sigma * cfg.sigma;
    const long fwd0 = ctx.transport->forward_solves();
    const long adj0 = ctx.transport->adjoint_solves();
    const long ell0 = (ctx.source_initial ? ctx.source_initial->elliptic_solves() : 0) +
                      (ctx.source_continuous ? ctx.source_continuous->elliptic_solves() : 0);

    ColumnCache cache;
    std::vector<detail::ActiveAtom> active;
    Eigen::MatrixXd columns(data.size(), 0);
    Vector lambda(0);

    InversionResult result;
    auto finish = [&](std::string reason, bool certified, const CertificateReport& cert) {
        result.stop_reason = std::move(reason);
        result.certified = certified;
        result.certificate = cert;
        result.mu_initial = SparseMeasure{SourceKind::Initial, {}};
        result.mu_continuous = SparseMeasure{SourceKind::Continuous, {}};
        for (std::size_t i = 0; i < active.size(); ++i) {
            const Atom atom{active[i].x, lambda[static_cast<long>(i)]};
            if (active[i].kind == SourceKind::Initial) result.mu_initial.atoms.push_back(atom);
            else result.mu_continuous.atoms.push_back(atom);
        }
        result.post_initial = merge_atoms(prune(result.mu_initial, cfg.prune_rel), cfg.merge_radius);
        result.post_continuous =
            merge_atoms(prune(result.mu_continuous, cfg.prune_rel), cfg.merge_radius);
        result.forward_solves = ctx.transport->forward_solves() - fwd0;
        result.adjoint_solves = ctx.transport->adjoint_solves() - adj0;
        result.elliptic_solves =
            (ctx.source_initial ? ctx.source_initial->elliptic_solves() : 0) +
            (ctx.source_continuous ? ctx.source_continuous->elliptic_solves() : 0) - ell0;
    };

    for (int round = 0;; ++round) {
        // Step 1: misfit from cached columns
        const Vector predicted = active.empty() ? Vector::Zero(data.size())
                                                : Vector(columns * lambda);
        const Vector misfit = (predicted - data) / s2;
        const double tv = lambda.size() > 0 ? lambda.sum() : 0.0;
        const double objective = objective_value(predicted, data, cfg.sigma, cfg.alpha, tv);
        if (!std::isfinite(objective))
            throw TransportError("non-finite objective at iteration " + std::to_string(round));

        // Step 2: adjoint solve and dual variables
        ++result.dual_evaluations;
        const AdjointSolution adj = ctx.transport->adjoint(*ctx.observation, misfit);
        std::optional<Vector> phi_initial, phi_continuous;
        if (cfg.use_initial) phi_initial = ctx.source_initial->dual_field(adj.initial_load);
        if (cfg.use_continuous)
            phi_continuous = ctx.source_continuous->dual_field(adj.continuous_load);

        SparseMeasure cur_initial{SourceKind::Initial, {}}, cur_continuous{SourceKind::Continuous, {}};
        for (std::size_t i = 0; i < active.size(); ++i) {
            const Atom atom{active[i].x, lambda[static_cast<long>(i)]};
            if (active[i].kind == SourceKind::Initial) cur_initial.atoms.push_back(atom);
            else cur_continuous.atoms.push_back(atom);
        }
        const CertificateReport cert = certify_optimality(
            phi_initial, phi_continuous, cur_initial, cur_continuous, mesh, cfg.alpha, tol);

        IterationLog entry;
        entry.objective = objective;
        entry.max_phi_initial = cert.max_phi_initial;
        entry.max_phi_continuous = cert.max_phi_continuous;
        entry.atoms_initial = cur_initial.size();
        entry.atoms_continuous = cur_continuous.size();
        result.log.push_back(entry);

        // Step 3/5: optimality test, then candidate insertion
        if (cert.certified) {
            finish("certified", true, cert);
            return result;
        }
        if (round >= cfg.max_iter) {
            finish("max_iter", false, cert);
            return result;
        }
        const double gap_surrogate = cert.global_slack * tv;
        if (tv > 0.0 && gap_surrogate <= 1e-10 * std::abs(objective)) {
            finish("gap_stop", false, cert);
            return result;
        }

        auto try_append = [&](SourceKind kind, const Vector& phi) -> bool {
            const DualMaximum mx = argmax_dual(phi, mesh);
            if (mx.value <= cfg.alpha + tol) return false;
            for (const auto& a : active)
                if (a.kind == kind && a.node == mx.node) return false;  // duplicate proposal
            const Vector* col = cache.find(kind, mx.node);
            if (!col) {
                ++result.column_evaluations;
                col = &cache.insert(kind, mx.node, detail::evaluate_column(ctx, kind, mx.node));
            }
            active.push_back(detail::ActiveAtom{kind, mx.node, mx.x});
            columns.conservativeResize(Eigen::NoChange, columns.cols() + 1);
            columns.col(columns.cols() - 1) = *col;
            lambda.conservativeResize(lambda.size() + 1);
            lambda[lambda.size() - 1] = 0.0;  // warmstart extension
            return true;
        };

        bool appended = false;
        if (phi_initial) appended |= try_append(SourceKind::Initial, *phi_initial);
        if (phi_continuous) appended |= try_append(SourceKind::Continuous, *phi_continuous);
        if (!appended) {
            finish("stalled", false, cert);
            return result;
        }

        // Step 6: intensity optimization, warmstarted
        SubproblemResult sub;
        try {
            sub = intensity_subproblem(columns, data, cfg.sigma, cfg.alpha, lambda);
        } catch (const SubproblemError& err) {
            throw std::runtime_error(std::string(err.what()) + " at iteration " +
                                     std::to_string(round));
        }
        lambda = sub.lambda;
        result.iterations = round + 1;

        // Step 8: prune zero-weight atoms from the active set
        double max_l = lambda.size() > 0 ? lambda.maxCoeff() : 0.0;
        if (max_l > 0.0) {
            std::vector<int> keep;
            for (int i = 0; i < lambda.size(); ++i)
                if (lambda[i] > 0.0 && lambda[i] >= cfg.prune_rel * max_l) keep.push_back(i);
            if (static_cast<int>(keep.size()) != lambda.size()) {
                Eigen::MatrixXd cols2(data.size(), static_cast<long>(keep.size()));
                Vector lam2(static_cast<long>(keep.size()));
                std::vector<detail::ActiveAtom> act2;
                for (std::size_t i = 0; i < keep.size(); ++i) {
                    cols2.col(static_cast<long>(i)) = columns.col(keep[i]);
                    lam2[static_cast<long>(i)] = lambda[keep[i]];
                    act2.push_back(active[static_cast<std::size_t>(keep[i])]);
                }
                columns = std::move(cols2);
                lambda = std::move(lam2);
                active = std::move(act2);
            }
        } else {
            columns = Eigen::MatrixXd(data.size(), 0);
            lambda = Vector(0);
            active.clear();
        }
    }
}

struct L2Prior {
    Vector m_prior;
    double eta = 1.0;
    double gamma = 1.0;
    double beta = EllipticShape::default_beta(1.0, 1.0);
};

struct L2Result {
    Vector m;
    int cg_iterations = 0;
    long pde_solves = 0;   // forward + adjoint marches in the online phase
    long hessian_applies = 0;
    std::vector<double> residual_history;
    bool converged = false;
};

/// Tikhonov baseline for initial-value identification: solve
///   H m = F* d / sigma^2 + A^2 m_prior,   H = F*F / sigma^2 + A^2,
/// A = (eta I - gamma Laplace) with Robin boundary, by conjugate gradients.
/// Every H application costs one forward and one adjoint march.
inline L2Result l2_invert(const TransportOperator& transport, const ObservationOperator& obs,
                          const FemOperators& ops, const Vector& data, const L2Prior& prior,
                          double sigma, double cg_tol = 1e-8, int cg_max = 100) {
    const int ndof = transport.mesh().num_nodes();
    const double s2 = sigma * sigma;
    const EllipticOperator aop(ops.mass, ops.stiffness, ops.boundary,
                               EllipticShape{prior.eta, prior.gamma, prior.beta});
    const long solves0 = transport.forward_solves() + transport.adjoint_solves();

    // A^2 in the L2 pairing: m -> A_e M^{-1} A_e m with A_e = eta M + gamma K + beta B
    auto reg_apply = [&](const Vector& v) -> Vector {
        return aop.matrix().apply(ops.mass.solve(aop.matrix().apply(v)));
    };
    L2Result out;
    auto data_apply = [&](const Vector& v) -> Vector {
        const Vector fv = transport.parameter_to_observable(obs, v, Vector::Zero(ndof));
        const AdjointSolution adj = transport.adjoint(obs, fv / s2);
        return adj.initial_load;
    };
    auto h_apply = [&](const Vector& v) -> Vector {
        ++out.hessian_applies;
        return data_apply(v) + reg_apply(v);
    };

    const AdjointSolution adj_d = transport.adjoint(obs, data / s2);
    const Vector rhs = adj_d.initial_load + reg_apply(prior.m_prior);

    Vector m = prior.m_prior;
    Vector hm = h_apply(m);
    Vector r = rhs - hm;
    Vector p = r;
    const double rhs_norm = std::max(rhs.norm(), 1e-300);
    double rr = r.squaredNorm();
    out.residual_history.push_back(std::sqrt(rr) / rhs_norm);
    for (int it = 0; it < cg_max; ++it) {
        if (std::sqrt(rr) / rhs_norm <= cg_tol) {
            out.converged = true;
            break;
        }
        const Vector hp = h_apply(p);
        const double pap = p.dot(hp);
        if (pap <= 0.0) break;  // loss of positive definiteness in finite precision
        const double a = rr / pap;
        m += a * p;
        hm += a * hp;
        r = rhs - hm;
        const double rr_new = r.squaredNorm();
        out.residual_history.push_back(std::sqrt(rr_new) / rhs_norm);
        p = r + (rr_new / rr) * p;
        rr = rr_new;
        out.cg_iterations = it + 1;
    }
    if (!out.converged && std::sqrt(rr) / rhs_norm <= cg_tol) out.converged = true;
    out.m = std::move(m);
    out.pde_solves = transport.forward_solves() + transport.adjoint_solves() - solves0;
    return out;
}

/// Top-k local maxima of a nodal field (strictly above all mesh neighbors),
/// sorted by value; used to read point-source estimates off an L2
/// reconstruction.
inline std::vector<DualMaximum> field_local_maxima(const TriMesh& mesh, const Vector& field,
                                                   int k) {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(mesh.num_nodes()));
    for (int e = 0; e < mesh.num_triangles(); ++e) {
        const auto& t = mesh.triangle(e);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                if (a != b) adj[static_cast<std::size_t>(t[a])].push_back(t[b]);
    }
    std::vector<DualMaximum> maxima;
    for (int i = 0; i < mesh.num_nodes(); ++i) {
        bool is_max = true;
        for (int j : adj[static_cast<std::size_t>(i)])
            if (field[j] >= field[i]) {
                is_max = false;
                break;
            }
        if (is_max) maxima.push_back(DualMaximum{i, mesh.node(i), field[i]});
    }
    std::stable_sort(maxima.begin(), maxima.end(),
                     [](const DualMaximum& a, const DualMaximum& b) { return a.value > b.value; });
    if (static_cast<int>(maxima.size()) > k) maxima.resize(static_cast<std::size_t>(k));
    return maxima;
}

} // namespace plume
