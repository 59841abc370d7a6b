#pragma once

#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "plume/fem.hpp"
#include "plume/mesh.hpp"
#include "plume/sparse.hpp"

namespace plume {

enum class SourceKind { Initial, Continuous };

inline const char* to_string(SourceKind k) {
    return k == SourceKind::Initial ? "initial" : "continuous";
}

struct Atom {
    Vec2 x;
    double intensity = 0.0;
};

/// Finite conic combination of point sources; the unknown of the inverse
/// problem. Total variation is the plain intensity sum.
struct SparseMeasure {
    SourceKind kind = SourceKind::Initial;
    std::vector<Atom> atoms;

    double total_variation() const {
        double s = 0.0;
        for (const auto& a : atoms) s += a.intensity;
        return s;
    }
    bool empty() const { return atoms.empty(); }
    int size() const { return static_cast<int>(atoms.size()); }
};

/// Closed-form radial blob: decays to eps at distance r, capped at 0.5.
/// `paper_sign` flips the exponent to the sign as printed in the literature
/// formula (growing with distance for eps < 1).
struct RbfShape {
    double r = 0.26;
    double eps = 0.01;
    bool paper_sign = false;
};

/// Kernel defined through (eta I - gamma Laplace) with Robin boundary
/// gamma dm/dn + beta m = 0; discretely (eta M + gamma K + beta B) m = load.
struct EllipticShape {
    double eta = 1.0;
    double gamma = 1e-3;
    double beta = default_beta(1.0, 1e-3);

    /// Standard boundary-artifact-reduction choice sqrt(eta*gamma)/1.42.
    static double default_beta(double eta, double gamma) {
        return std::sqrt(eta * gamma) / 1.42;
    }
};

struct DiracShape {};

using ShapeModel = std::variant<RbfShape, EllipticShape, DiracShape>;

inline double rbf_value(const RbfShape& s, double dist2) {
    const double expo = std::log(s.eps) * dist2 / (s.r * s.r);
    return std::min(0.5, std::exp(s.paper_sign ? -expo : expo));
}

/// Nodal interpolant of the radial blob centered at x_s.
inline Vector eval_rbf(const TriMesh& mesh, const Vec2& x_s, double r, double eps,
                       bool paper_sign = false) {
    if (r <= 0.0) throw std::invalid_argument("rbf radius must be positive");
    if (eps <= 0.0 || eps >= 1.0) throw std::invalid_argument("rbf eps must be in (0,1)");
    const RbfShape s{r, eps, paper_sign};
    Vector v(mesh.num_nodes());
    for (int i = 0; i < mesh.num_nodes(); ++i)
        v[i] = rbf_value(s, (mesh.node(i) - x_s).squared_norm());
    return v;
}

/// (eta M + gamma K + beta B) with a cached factorization; both the shape
/// evaluation and the corresponding dual solve reuse it.
class EllipticOperator {
public:
    EllipticOperator(const SparseMatrix& mass, const SparseMatrix& stiffness,
                     const SparseMatrix& boundary, const EllipticShape& shape)
        : op_(mass.scaled(shape.eta) + stiffness.scaled(shape.gamma) +
              boundary.scaled(shape.beta)) {
        if (shape.eta <= 0.0 || shape.gamma <= 0.0 || shape.beta < 0.0)
            throw std::invalid_argument("elliptic shape parameters must be positive (beta >= 0)");
    }

    Vector solve(const Vector& load) const {
        ++solves_;
        return op_.solve(load);
    }
    long solve_count() const { return solves_.load(); }
    const SparseMatrix& matrix() const { return op_; }

private:
    SparseMatrix op_;
    mutable std::atomic<long> solves_{0};
};

inline Vector eval_elliptic(const TriMesh& mesh, const EllipticOperator& op, const Vec2& x_s) {
    return op.solve(bary_load(mesh, x_s));
}

/// Uniform node bucket grid for radius queries (RBF dual convolution).
class NodeGrid {
public:
    explicit NodeGrid(const TriMesh& mesh) : mesh_(&mesh) {
        const auto& ns = mesh.nodes();
        bbox_ = Rect{ns[0].x, ns[0].y, ns[0].x, ns[0].y};
        for (const auto& p : ns) {
            bbox_.x0 = std::min(bbox_.x0, p.x);
            bbox_.x1 = std::max(bbox_.x1, p.x);
            bbox_.y0 = std::min(bbox_.y0, p.y);
            bbox_.y1 = std::max(bbox_.y1, p.y);
        }
        n_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(ns.size()) / 2.0)));
        dx_ = std::max(bbox_.width() / n_, 1e-300);
        dy_ = std::max(bbox_.height() / n_, 1e-300);
        buckets_.assign(static_cast<std::size_t>(n_) * n_, {});
        for (int i = 0; i < mesh.num_nodes(); ++i)
            buckets_[index(mesh.node(i))].push_back(i);
    }

    template <typename Fn>
    void for_each_in_radius(const Vec2& c, double radius, Fn&& fn) const {
        const double r2 = radius * radius;
        const int i0 = clampi((c.x - radius - bbox_.x0) / dx_);
        const int i1 = clampi((c.x + radius - bbox_.x0) / dx_);
        const int j0 = clampi((c.y - radius - bbox_.y0) / dy_);
        const int j1 = clampi((c.y + radius - bbox_.y0) / dy_);
        for (int j = j0; j <= j1; ++j)
            for (int i = i0; i <= i1; ++i)
                for (int k : buckets_[static_cast<std::size_t>(j) * n_ + i]) {
                    const double d2 = (mesh_->node(k) - c).squared_norm();
                    if (d2 <= r2) fn(k, d2);
                }
    }

private:
    const TriMesh* mesh_;
    Rect bbox_;
    int n_ = 1;
    double dx_ = 1.0, dy_ = 1.0;
    std::vector<std::vector<int>> buckets_;

    int clampi(double v) const { return std::clamp(static_cast<int>(v), 0, n_ - 1); }
    std::size_t index(const Vec2& p) const {
        return static_cast<std::size_t>(clampi((p.y - bbox_.y0) / dy_)) * n_ +
               clampi((p.x - bbox_.x0) / dx_);
    }
};

/// One source kind's shape model bound to a mesh: maps measures to nodal
/// fields and adjoint loads to nodal dual variables.
class SourceOperator {
public:
    SourceOperator(std::shared_ptr<const TriMesh> mesh, ShapeModel shape,
                   const SparseMatrix& mass, const SparseMatrix& stiffness,
                   const SparseMatrix& boundary)
        : mesh_(std::move(mesh)), shape_(std::move(shape)), mass_(&mass) {
        if (const auto* e = std::get_if<EllipticShape>(&shape_))
            elliptic_ = std::make_unique<EllipticOperator>(mass, stiffness, boundary, *e);
        if (const auto* r = std::get_if<RbfShape>(&shape_)) {
            if (r->r <= 0.0) throw std::invalid_argument("rbf radius must be positive");
            if (r->eps <= 0.0 || r->eps >= 1.0)
                throw std::invalid_argument("rbf eps must be in (0,1)");
            grid_ = std::make_unique<NodeGrid>(*mesh_);
            // beyond this radius the profile is below 1e-12 * cap
            cutoff_ = r->paper_sign
                          ? std::numeric_limits<double>::infinity()
                          : r->r * std::sqrt(std::log(0.5e-12) / std::log(r->eps));
        }
    }

    const ShapeModel& shape() const { return shape_; }
    long elliptic_solves() const { return elliptic_ ? elliptic_->solve_count() : 0; }

    /// Nodal field of a unit atom at x.
    Vector field(const Vec2& x) const {
        mesh_->locate(x);  // atom must lie inside the meshed region
        if (const auto* r = std::get_if<RbfShape>(&shape_))
            return eval_rbf(*mesh_, x, r->r, r->eps, r->paper_sign);
        if (std::get_if<EllipticShape>(&shape_))
            return elliptic_->solve(bary_load(*mesh_, x));
        return mass_->solve(bary_load(*mesh_, x));
    }

    /// m = sum_i lambda_i shape(x_i); linear in the intensities.
    Vector field(const SparseMeasure& mu) const {
        Vector m = Vector::Zero(mesh_->num_nodes());
        for (const auto& a : mu.atoms) {
            if (a.intensity < 0.0) throw std::invalid_argument("atom intensity must be >= 0");
            m += a.intensity * field(a.x);
        }
        return m;
    }

    /// Dual variable phi from an adjoint load vector (initial_load or
    /// continuous_load of an AdjointSolution): phi is minus the pre-dual
    /// applied to the misfit, evaluated at every node.
    Vector dual_field(const Vector& load) const {
        if (std::get_if<DiracShape>(&shape_)) return -mass_->solve(load);
        if (std::get_if<EllipticShape>(&shape_)) return -elliptic_->solve(load);
        const auto& r = std::get<RbfShape>(shape_);
        Vector phi = Vector::Zero(mesh_->num_nodes());
        if (cutoff_ == std::numeric_limits<double>::infinity()) {
            for (int k = 0; k < mesh_->num_nodes(); ++k) {
                double s = 0.0;
                for (int j = 0; j < mesh_->num_nodes(); ++j)
                    s += rbf_value(r, (mesh_->node(j) - mesh_->node(k)).squared_norm()) * load[j];
                phi[k] = -s;
            }
            return phi;
        }
        for (int k = 0; k < mesh_->num_nodes(); ++k) {
            double s = 0.0;
            grid_->for_each_in_radius(mesh_->node(k), cutoff_,
                                      [&](int j, double d2) { s += rbf_value(r, d2) * load[j]; });
            phi[k] = -s;
        }
        return phi;
    }

private:
    std::shared_ptr<const TriMesh> mesh_;
    ShapeModel shape_;
    const SparseMatrix* mass_;
    std::unique_ptr<EllipticOperator> elliptic_;
    std::unique_ptr<NodeGrid> grid_;
    double cutoff_ = 0.0;
};

/// Combined measure-to-fields map for both kinds. Either operator may be null
/// when the corresponding kind is inactive.
inline std::pair<Vector, Vector> measure_to_fields(const SparseMeasure& mu_initial,
                                                   const SparseMeasure& mu_continuous,
                                                   const SourceOperator* src_initial,
                                                   const SourceOperator* src_continuous,
                                                   int ndof) {
    Vector mi = Vector::Zero(ndof);
    Vector mc = Vector::Zero(ndof);
    if (!mu_initial.empty()) {
        if (!src_initial) throw std::invalid_argument("initial-kind atoms without a shape model");
        mi = src_initial->field(mu_initial);
    }
    if (!mu_continuous.empty()) {
        if (!src_continuous)
            throw std::invalid_argument("continuous-kind atoms without a shape model");
        mc = src_continuous->field(mu_continuous);
    }
    return {std::move(mi), std::move(mc)};
}

struct DualMaximum {
    int node = -1;
    Vec2 x;
    double value = 0.0;
};

/// Global maximum of a nodal dual variable; ties break to the lowest node
/// index (P1 maxima live at nodes).
inline DualMaximum argmax_dual(const Vector& phi, const TriMesh& mesh) {
    int best = 0;
    for (int i = 1; i < phi.size(); ++i)
        if (phi[i] > phi[best]) best = i;
    return DualMaximum{best, mesh.node(best), phi[best]};
}

} // namespace plume
