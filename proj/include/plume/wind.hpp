#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "plume/mesh.hpp"
#include "plume/mesh_io.hpp"

namespace plume {

/// Gradients of the three P1 basis functions on triangle e (constant per element).
inline std::array<Vec2, 3> p1_gradients(const TriMesh& mesh, int e) {
    const auto& t = mesh.triangle(e);
    const Vec2 p0 = mesh.node(t[0]), p1 = mesh.node(t[1]), p2 = mesh.node(t[2]);
    const double inv2a = 1.0 / (2.0 * mesh.area(e));
    return {(p2 - p1).perp() * inv2a, (p0 - p2).perp() * inv2a, (p1 - p0).perp() * inv2a};
}

/// Wind velocity sampled on a mesh. Fields built from a stream function carry
/// the nodal stream values; their element velocities are the rotated gradient
/// of the P1 interpolant, which makes the discrete field exactly
/// divergence-free and tangent wherever the stream is constant along the
/// boundary.
class WindField {
public:
    static WindField uniform(const TriMesh& mesh, double vx, double vy) {
        WindField w;
        w.provenance_ = "uniform(" + std::to_string(vx) + "," + std::to_string(vy) + ")";
        w.nodal_.assign(static_cast<std::size_t>(mesh.num_nodes()), Vec2{vx, vy});
        w.element_.assign(static_cast<std::size_t>(mesh.num_triangles()), Vec2{vx, vy});
        w.analytic_ = [vx, vy](Vec2) { return Vec2{vx, vy}; };
        return w;
    }

    static WindField from_nodal(const TriMesh& mesh, std::vector<Vec2> nodal,
                                std::string provenance) {
        if (static_cast<int>(nodal.size()) != mesh.num_nodes())
            throw MeshError("wind field size does not match mesh");
        WindField w;
        w.provenance_ = std::move(provenance);
        w.nodal_ = std::move(nodal);
        w.element_.resize(static_cast<std::size_t>(mesh.num_triangles()));
        for (int e = 0; e < mesh.num_triangles(); ++e) {
            const auto& t = mesh.triangle(e);
            w.element_[static_cast<std::size_t>(e)] =
                (w.nodal_[t[0]] + w.nodal_[t[1]] + w.nodal_[t[2]]) * (1.0 / 3.0);
        }
        return w;
    }

    static WindField from_stream(const TriMesh& mesh,
                                 const std::function<double(Vec2)>& psi,
                                 std::string provenance) {
        WindField w;
        w.provenance_ = std::move(provenance);
        w.stream_.resize(static_cast<std::size_t>(mesh.num_nodes()));
        for (int i = 0; i < mesh.num_nodes(); ++i)
            w.stream_[static_cast<std::size_t>(i)] = psi(mesh.node(i));
        w.rebuild_from_stream(mesh);
        // pointwise rotated gradient by central differences; exactly zero
        // normal flow wherever psi is constant along a wall
        const double delta = 1e-6 * std::max(1.0, mesh.max_diameter() *
                                                      std::sqrt(static_cast<double>(mesh.num_triangles())));
        w.analytic_ = [psi, delta](Vec2 p) {
            const double dpsidy = (psi({p.x, p.y + delta}) - psi({p.x, p.y - delta})) / (2.0 * delta);
            const double dpsidx = (psi({p.x + delta, p.y}) - psi({p.x - delta, p.y})) / (2.0 * delta);
            return Vec2{dpsidy, -dpsidx};
        };
        return w;
    }

    /// Single vortex cell, stream psi = strength * exp(-|x-c|^2 / width^2),
    /// truncated to zero beyond 3*width so the flow is exactly tangent to any
    /// boundary outside the cutoff circle.
    static WindField vortex(const TriMesh& mesh, double cx, double cy, double strength,
                            double width) {
        if (width <= 0.0) throw MeshError("vortex width must be positive");
        const double floor = std::exp(-9.0);
        auto psi = [=](Vec2 p) {
            const double d2 = (p - Vec2{cx, cy}).squared_norm();
            const double v = std::exp(-d2 / (width * width)) - floor;
            return v > 0.0 ? strength * v : 0.0;
        };
        return from_stream(mesh, psi, "vortex");
    }

    /// Two counter-rotating cells over `bounds`, the analytic stand-in for the
    /// double-lid-driven cavity circulation: upward flow near the left wall,
    /// downward near the right. Optional rectangles (buildings) become stream
    /// obstacles via a smooth distance mask. `peak` rescales max element speed.
    static WindField double_gyre(const TriMesh& mesh, const Rect& bounds, double peak,
                                 const std::vector<Rect>& obstacles = {},
                                 double mask_margin = 0.08) {
        auto psi = [&](Vec2 p) {
            const double xn = (p.x - bounds.x0) / bounds.width();
            const double yn = (p.y - bounds.y0) / bounds.height();
            const double h = yn * (1.0 - yn);
            return -std::sin(2.0 * M_PI * xn) * h * h;
        };
        WindField w = from_stream(mesh, masked(psi, obstacles, mask_margin), "double_gyre");
        w.rescale_to_peak(mesh, peak);
        return w;
    }

    /// Uniform through-flow deflected around obstacles: stream of a constant
    /// (vx, vy) field multiplied by the obstacle mask.
    static WindField channel(const TriMesh& mesh, double vx, double vy,
                             const std::vector<Rect>& obstacles, double mask_margin) {
        auto psi = [=](Vec2 p) { return vx * p.y - vy * p.x; };
        return from_stream(mesh, masked(psi, obstacles, mask_margin), "channel");
    }

    const std::vector<Vec2>& nodal() const { return nodal_; }
    const Vec2& at_node(int i) const { return nodal_[static_cast<std::size_t>(i)]; }
    const Vec2& element_velocity(int e) const { return element_[static_cast<std::size_t>(e)]; }
    bool divergence_free_construction() const { return !stream_.empty(); }
    const std::vector<double>& stream() const { return stream_; }
    const std::string& provenance() const { return provenance_; }

    /// Wind at an edge midpoint: pointwise for analytic fields, endpoint mean
    /// for nodal (file) fields.
    Vec2 edge_midpoint_velocity(const TriMesh& mesh, const BoundaryEdge& e) const {
        const Vec2 mid = (mesh.node(e.a) + mesh.node(e.b)) * 0.5;
        if (analytic_) return analytic_(mid);
        return (at_node(e.a) + at_node(e.b)) * 0.5;
    }

    double max_element_speed() const {
        double m = 0.0;
        for (const auto& v : element_) m = std::max(m, v.norm());
        return m;
    }

private:
    std::vector<Vec2> nodal_;
    std::vector<Vec2> element_;
    std::vector<double> stream_;  // nodal stream values, empty unless stream-built
    std::function<Vec2(Vec2)> analytic_;  // pointwise evaluation, empty for file fields
    std::string provenance_;

    static std::function<double(Vec2)> masked(std::function<double(Vec2)> psi,
                                              const std::vector<Rect>& obstacles,
                                              double margin) {
        if (obstacles.empty()) return psi;
        return [psi = std::move(psi), obstacles, margin](Vec2 p) {
            double m = 1.0;
            for (const auto& r : obstacles) {
                const double t = std::clamp(r.distance_to(p) / margin, 0.0, 1.0);
                m *= t * t * (3.0 - 2.0 * t);
            }
            return psi(p) * m;
        };
    }

    void rebuild_from_stream(const TriMesh& mesh) {
        element_.assign(static_cast<std::size_t>(mesh.num_triangles()), Vec2{});
        std::vector<double> lumped(static_cast<std::size_t>(mesh.num_nodes()), 0.0);
        nodal_.assign(static_cast<std::size_t>(mesh.num_nodes()), Vec2{});
        for (int e = 0; e < mesh.num_triangles(); ++e) {
            const auto grads = p1_gradients(mesh, e);
            const auto& t = mesh.triangle(e);
            Vec2 grad_psi{0.0, 0.0};
            for (int k = 0; k < 3; ++k) grad_psi += grads[k] * stream_[t[k]];
            const Vec2 v{grad_psi.y, -grad_psi.x};  // rotated gradient
            element_[static_cast<std::size_t>(e)] = v;
            const double a = mesh.area(e);
            for (int k = 0; k < 3; ++k) {
                nodal_[t[k]] += v * a;
                lumped[t[k]] += a;
            }
        }
        for (std::size_t i = 0; i < nodal_.size(); ++i)
            if (lumped[i] > 0.0) nodal_[i] = nodal_[i] * (1.0 / lumped[i]);
    }

    void rescale_to_peak(const TriMesh& mesh, double peak) {
        const double m = max_element_speed();
        if (m <= 0.0 || peak <= 0.0) return;
        const double s = peak / m;
        for (auto& v : stream_) v *= s;
        rebuild_from_stream(mesh);
    }
};

/// Classify each boundary edge against the wind at its midpoint. Edges with
/// |v.n| below tol_n * (max midpoint speed) are Inner; inflow nodes are the
/// Dirichlet set.
inline std::vector<BoundaryMarker> classify_boundary(const TriMesh& mesh, const WindField& wind,
                                                     double tol_n = 1e-10) {
    const auto& edges = mesh.boundary_edges();
    std::vector<Vec2> mid(edges.size());
    double vmax = 0.0;
    for (std::size_t k = 0; k < edges.size(); ++k) {
        mid[k] = wind.edge_midpoint_velocity(mesh, edges[k]);
        vmax = std::max(vmax, mid[k].norm());
    }
    std::vector<BoundaryMarker> markers(edges.size(), BoundaryMarker::Inner);
    const double thresh = tol_n * vmax;
    for (std::size_t k = 0; k < edges.size(); ++k) {
        const double vn = mid[k].dot(mesh.outward_normal(edges[k]));
        if (vn > thresh) markers[k] = BoundaryMarker::Outflow;
        else if (vn < -thresh) markers[k] = BoundaryMarker::Inflow;
    }
    return markers;
}

/// Nodes lying on inflow edges (homogeneous Dirichlet set). Returns a 0/1 mask.
inline std::vector<std::uint8_t> dirichlet_mask(const TriMesh& mesh,
                                                const std::vector<BoundaryMarker>& markers) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(mesh.num_nodes()), 0);
    const auto& edges = mesh.boundary_edges();
    for (std::size_t k = 0; k < edges.size(); ++k)
        if (markers[k] == BoundaryMarker::Inflow) {
            mask[static_cast<std::size_t>(edges[k].a)] = 1;
            mask[static_cast<std::size_t>(edges[k].b)] = 1;
        }
    return mask;
}

inline int count_mask(const std::vector<std::uint8_t>& mask) {
    int n = 0;
    for (auto m : mask) n += (m != 0);
    return n;
}

inline WindField read_windfield(std::istream& in, const TriMesh& mesh) {
    detail::TokenReader tr(in);
    if (tr.next() != "windfield") throw MeshError("expected 'windfield' header");
    if (tr.next_int() != 2) throw MeshError("unsupported windfield dimension");
    if (tr.next() != "nodes") throw MeshError("expected 'nodes'");
    const int n = tr.next_int();
    if (n != mesh.num_nodes()) throw MeshError("windfield node count does not match mesh");
    std::vector<Vec2> nodal(static_cast<std::size_t>(n));
    for (auto& v : nodal) {
        v.x = tr.next_double();
        v.y = tr.next_double();
    }
    return WindField::from_nodal(mesh, std::move(nodal), "file");
}

inline WindField read_windfield_file(const std::string& path, const TriMesh& mesh) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot open wind file: " + path);
    return read_windfield(in, mesh);
}

inline void write_windfield(std::ostream& out, const WindField& wind) {
    out << "windfield 2\n";
    out << "nodes " << wind.nodal().size() << "\n";
    for (const auto& v : wind.nodal())
        out << detail::fmt_double(v.x) << " " << detail::fmt_double(v.y) << "\n";
}

inline void write_windfield_file(const std::string& path, const WindField& wind) {
    std::ofstream out(path);
    if (!out) throw MeshError("cannot open for writing: " + path);
    write_windfield(out, wind);
}

} // namespace plume
