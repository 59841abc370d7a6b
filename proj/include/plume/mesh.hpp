#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "plume/geometry.hpp"

namespace plume {

enum class BoundaryMarker : std::uint8_t { Inner = 0, Inflow = 1, Outflow = 2 };

inline const char* to_string(BoundaryMarker m) {
    switch (m) {
        case BoundaryMarker::Inflow: return "inflow";
        case BoundaryMarker::Outflow: return "outflow";
        default: return "inner";
    }
}

struct BoundaryEdge {
    int a = -1;            // node indices, ordered (a,b) along the owning triangle
    int b = -1;
    int tri = -1;          // the unique triangle containing this edge
    BoundaryMarker marker = BoundaryMarker::Inner;
};

/// Containing triangle plus barycentric weights of a located point.
struct BaryLocation {
    int tri = -1;
    std::array<double, 3> w{0.0, 0.0, 0.0};
};

class MeshError : public std::runtime_error {
public:
    explicit MeshError(const std::string& what) : std::runtime_error(what) {}
};

/// Immutable 2D triangle mesh (P1 substrate). Triangles are counterclockwise;
/// boundary edges are the edges owned by exactly one triangle.
class TriMesh {
public:
    TriMesh(std::vector<Vec2> nodes, std::vector<std::array<int, 3>> triangles)
        : nodes_(std::move(nodes)), tris_(std::move(triangles)) {
        finalize();
    }

    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    int num_triangles() const { return static_cast<int>(tris_.size()); }

    const Vec2& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    const std::array<int, 3>& triangle(int e) const { return tris_[static_cast<std::size_t>(e)]; }
    const std::vector<Vec2>& nodes() const { return nodes_; }
    const std::vector<std::array<int, 3>>& triangles() const { return tris_; }
    const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_; }

    double area(int e) const { return area_[static_cast<std::size_t>(e)]; }
    /// h_E: maximum pairwise vertex distance of triangle e.
    double diameter(int e) const { return diameter_[static_cast<std::size_t>(e)]; }
    double max_diameter() const { return max_diameter_; }

    Vec2 centroid(int e) const {
        const auto& t = tris_[static_cast<std::size_t>(e)];
        return (node(t[0]) + node(t[1]) + node(t[2])) * (1.0 / 3.0);
    }

    double total_area() const { return total_area_; }

    /// Locate a point; returns nullopt outside the meshed region. Points on
    /// shared edges resolve to the lowest containing triangle index.
    std::optional<BaryLocation> try_locate(const Vec2& p) const {
        if (p.x < bbox_.x0 - loc_tol_ || p.x > bbox_.x1 + loc_tol_ ||
            p.y < bbox_.y0 - loc_tol_ || p.y > bbox_.y1 + loc_tol_)
            return std::nullopt;
        const int gi = grid_index(p);
        for (int e : buckets_[static_cast<std::size_t>(gi)]) {
            std::array<double, 3> w;
            if (barycentric(e, p, w)) return BaryLocation{e, w};
        }
        return std::nullopt;
    }

    BaryLocation locate(const Vec2& p) const {
        auto loc = try_locate(p);
        if (!loc)
            throw MeshError("locate_point: (" + std::to_string(p.x) + ", " +
                            std::to_string(p.y) + ") is outside the meshed region");
        return *loc;
    }

    /// Linear interpolation of nodal values at a located point.
    template <typename Vector>
    double interpolate(const BaryLocation& loc, const Vector& nodal) const {
        const auto& t = tris_[static_cast<std::size_t>(loc.tri)];
        return loc.w[0] * nodal[t[0]] + loc.w[1] * nodal[t[1]] + loc.w[2] * nodal[t[2]];
    }

    /// Outward unit normal of a boundary edge.
    Vec2 outward_normal(const BoundaryEdge& e) const {
        const Vec2 ta = node(e.a), tb = node(e.b);
        Vec2 n = (tb - ta).perp();
        const double len = n.norm();
        n = n * (1.0 / len);
        const auto& t = tris_[static_cast<std::size_t>(e.tri)];
        int opp = t[0];
        for (int v : t)
            if (v != e.a && v != e.b) opp = v;
        const Vec2 mid = (ta + tb) * 0.5;
        if (n.dot(node(opp) - mid) > 0.0) n = n * -1.0;
        return n;
    }

    void set_boundary_markers(const std::vector<BoundaryMarker>& markers) {
        if (markers.size() != boundary_.size())
            throw MeshError("boundary marker count mismatch");
        for (std::size_t i = 0; i < markers.size(); ++i) boundary_[i].marker = markers[i];
    }

private:
    friend TriMesh build_rect_mesh(const Rect&, int, int, const std::vector<Rect>&);

    std::vector<Vec2> nodes_;
    std::vector<std::array<int, 3>> tris_;
    std::vector<BoundaryEdge> boundary_;
    std::vector<double> area_;
    std::vector<double> diameter_;
    double total_area_ = 0.0;
    double max_diameter_ = 0.0;

    Rect bbox_;
    int gnx_ = 1, gny_ = 1;
    double gdx_ = 1.0, gdy_ = 1.0;
    double loc_tol_ = 1e-12;
    std::vector<std::vector<int>> buckets_;

    void finalize() {
        const int nn = num_nodes();
        if (nn < 3 || tris_.empty()) throw MeshError("mesh needs at least one triangle");
        area_.resize(tris_.size());
        diameter_.resize(tris_.size());
        for (std::size_t e = 0; e < tris_.size(); ++e) {
            auto& t = tris_[e];
            for (int v : t)
                if (v < 0 || v >= nn) throw MeshError("triangle node index out of range");
            const Vec2 p0 = node(t[0]), p1 = node(t[1]), p2 = node(t[2]);
            double a2 = (p1 - p0).cross(p2 - p0);
            if (a2 < 0.0) {  // normalize to counterclockwise orientation
                std::swap(t[1], t[2]);
                a2 = -a2;
            }
            const double d = std::max({distance(p0, p1), distance(p1, p2), distance(p2, p0)});
            if (a2 <= 1e-14 * d * d) throw MeshError("degenerate triangle " + std::to_string(e));
            area_[e] = 0.5 * a2;
            diameter_[e] = d;
            total_area_ += area_[e];
            max_diameter_ = std::max(max_diameter_, d);
        }
        detect_boundary();
        build_locator();
    }

    void detect_boundary() {
        std::map<std::pair<int, int>, std::pair<int, int>> edges;  // (lo,hi) -> (count, tri)
        for (std::size_t e = 0; e < tris_.size(); ++e) {
            const auto& t = tris_[e];
            for (int k = 0; k < 3; ++k) {
                const int a = t[k], b = t[(k + 1) % 3];
                auto key = std::minmax(a, b);
                auto [it, inserted] = edges.try_emplace({key.first, key.second}, 0, static_cast<int>(e));
                it->second.first++;
                if (it->second.first > 2) throw MeshError("edge shared by more than two triangles");
            }
        }
        boundary_.clear();
        for (std::size_t e = 0; e < tris_.size(); ++e) {
            const auto& t = tris_[e];
            for (int k = 0; k < 3; ++k) {
                const int a = t[k], b = t[(k + 1) % 3];
                auto key = std::minmax(a, b);
                const auto& info = edges.at({key.first, key.second});
                if (info.first == 1)
                    boundary_.push_back(BoundaryEdge{a, b, static_cast<int>(e), BoundaryMarker::Inner});
            }
        }
    }

    void build_locator() {
        bbox_ = Rect{nodes_[0].x, nodes_[0].y, nodes_[0].x, nodes_[0].y};
        for (const auto& p : nodes_) {
            bbox_.x0 = std::min(bbox_.x0, p.x);
            bbox_.x1 = std::max(bbox_.x1, p.x);
            bbox_.y0 = std::min(bbox_.y0, p.y);
            bbox_.y1 = std::max(bbox_.y1, p.y);
        }
        const double ext = std::max(bbox_.width(), bbox_.height());
        loc_tol_ = 1e-12 * std::max(1.0, ext);
        const int target = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(tris_.size()))));
        gnx_ = gny_ = target;
        gdx_ = bbox_.width() / gnx_;
        gdy_ = bbox_.height() / gny_;
        if (gdx_ <= 0.0) { gnx_ = 1; gdx_ = 1.0; }
        if (gdy_ <= 0.0) { gny_ = 1; gdy_ = 1.0; }
        buckets_.assign(static_cast<std::size_t>(gnx_) * gny_, {});
        for (std::size_t e = 0; e < tris_.size(); ++e) {
            const auto& t = tris_[e];
            double x0 = node(t[0]).x, x1 = x0, y0 = node(t[0]).y, y1 = y0;
            for (int v : t) {
                x0 = std::min(x0, node(v).x);
                x1 = std::max(x1, node(v).x);
                y0 = std::min(y0, node(v).y);
                y1 = std::max(y1, node(v).y);
            }
            const int i0 = clamp_gx(x0 - loc_tol_), i1 = clamp_gx(x1 + loc_tol_);
            const int j0 = clamp_gy(y0 - loc_tol_), j1 = clamp_gy(y1 + loc_tol_);
            for (int j = j0; j <= j1; ++j)
                for (int i = i0; i <= i1; ++i)
                    buckets_[static_cast<std::size_t>(j) * gnx_ + i].push_back(static_cast<int>(e));
        }
        // ascending triangle index inside each bucket gives the locate tie-break
        for (auto& b : buckets_) std::sort(b.begin(), b.end());
    }

    int clamp_gx(double x) const {
        return std::clamp(static_cast<int>((x - bbox_.x0) / gdx_), 0, gnx_ - 1);
    }
    int clamp_gy(double y) const {
        return std::clamp(static_cast<int>((y - bbox_.y0) / gdy_), 0, gny_ - 1);
    }
    int grid_index(const Vec2& p) const { return clamp_gy(p.y) * gnx_ + clamp_gx(p.x); }

    bool barycentric(int e, const Vec2& p, std::array<double, 3>& w) const {
        const auto& t = tris_[static_cast<std::size_t>(e)];
        const Vec2 p0 = node(t[0]), p1 = node(t[1]), p2 = node(t[2]);
        const double inv2a = 1.0 / (2.0 * area_[static_cast<std::size_t>(e)]);
        w[0] = (p1 - p).cross(p2 - p) * inv2a;
        w[1] = (p2 - p).cross(p0 - p) * inv2a;
        w[2] = (p0 - p).cross(p1 - p) * inv2a;
        const double tol = 1e-12;
        if (w[0] < -tol || w[1] < -tol || w[2] < -tol) return false;
        for (double& wi : w) wi = std::clamp(wi, 0.0, 1.0);
        const double s = w[0] + w[1] + w[2];
        for (double& wi : w) wi /= s;
        return true;
    }
};

/// Structured crossed-triangle mesh on a rectangle with grid-snapped
/// rectangular holes. Diagonals alternate with cell parity, so meshes with
/// even nx, ny are symmetric under the domain's axis reflections.
inline TriMesh build_rect_mesh(const Rect& bounds, int nx, int ny,
                               const std::vector<Rect>& holes = {}) {
    if (nx < 2 || ny < 2) throw MeshError("build_rect_mesh: nx and ny must be >= 2");
    if (bounds.width() <= 0.0 || bounds.height() <= 0.0)
        throw MeshError("build_rect_mesh: empty bounds");
    const double dx = bounds.width() / nx;
    const double dy = bounds.height() / ny;

    struct CellRange { int ix0, iy0, ix1, iy1; };
    std::vector<CellRange> snapped;
    for (const auto& h : holes) {
        CellRange r;
        r.ix0 = static_cast<int>(std::lround((h.x0 - bounds.x0) / dx));
        r.ix1 = static_cast<int>(std::lround((h.x1 - bounds.x0) / dx));
        r.iy0 = static_cast<int>(std::lround((h.y0 - bounds.y0) / dy));
        r.iy1 = static_cast<int>(std::lround((h.y1 - bounds.y0) / dy));
        if (r.ix1 <= r.ix0 || r.iy1 <= r.iy0)
            throw MeshError("hole collapses under grid snapping");
        if (r.ix0 < 1 || r.iy0 < 1 || r.ix1 > nx - 1 || r.iy1 > ny - 1)
            throw MeshError("hole must lie strictly inside the domain");
        for (const auto& o : snapped)
            if (r.ix0 < o.ix1 && o.ix0 < r.ix1 && r.iy0 < o.iy1 && o.iy0 < r.iy1)
                throw MeshError("holes overlap after grid snapping");
        snapped.push_back(r);
    }

    auto cell_in_hole = [&](int i, int j) {
        for (const auto& r : snapped)
            if (i >= r.ix0 && i < r.ix1 && j >= r.iy0 && j < r.iy1) return true;
        return false;
    };

    const int npx = nx + 1;
    std::vector<Vec2> nodes;
    nodes.reserve(static_cast<std::size_t>(npx) * (ny + 1));
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            nodes.emplace_back(bounds.x0 + i * dx, bounds.y0 + j * dy);

    auto vid = [&](int i, int j) { return j * npx + i; };
    std::vector<std::array<int, 3>> tris;
    tris.reserve(2u * nx * ny);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            if (cell_in_hole(i, j)) continue;
            const int v00 = vid(i, j), v10 = vid(i + 1, j);
            const int v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
            if ((i + j) % 2 == 0) {
                tris.push_back({v00, v10, v11});
                tris.push_back({v00, v11, v01});
            } else {
                tris.push_back({v00, v10, v01});
                tris.push_back({v10, v11, v01});
            }
        }
    }
    if (tris.empty()) throw MeshError("holes cover the whole domain");

    // compact away nodes orphaned by hole removal, keeping row-major order
    std::vector<int> remap(nodes.size(), -1);
    for (const auto& t : tris)
        for (int v : t) remap[static_cast<std::size_t>(v)] = 0;
    std::vector<Vec2> kept;
    for (std::size_t v = 0; v < nodes.size(); ++v)
        if (remap[v] == 0) {
            remap[v] = static_cast<int>(kept.size());
            kept.push_back(nodes[v]);
        }
    for (auto& t : tris)
        for (int& v : t) v = remap[static_cast<std::size_t>(v)];
    return TriMesh(std::move(kept), std::move(tris));
}

} // namespace plume
