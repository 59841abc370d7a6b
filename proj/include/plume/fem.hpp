#pragma once

#include <vector>

#include "plume/mesh.hpp"
#include "plume/sparse.hpp"
#include "plume/wind.hpp"

namespace plume {

/// P1 mass matrix, exact integration: per element (A/12) * [[2,1,1],[1,2,1],[1,1,2]].
inline SparseMatrix assemble_mass(const TriMesh& mesh) {
    std::vector<SparseMatrix::Triplet> ts;
    ts.reserve(9u * mesh.num_triangles());
    for (int e = 0; e < mesh.num_triangles(); ++e) {
        const auto& t = mesh.triangle(e);
        const double a12 = mesh.area(e) / 12.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                ts.emplace_back(t[i], t[j], (i == j ? 2.0 : 1.0) * a12);
    }
    return SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), ts);
}

/// P1 stiffness matrix K_ij = sum_E A_E <grad phi_i, grad phi_j>.
inline SparseMatrix assemble_stiffness(const TriMesh& mesh) {
    std::vector<SparseMatrix::Triplet> ts;
    ts.reserve(9u * mesh.num_triangles());
    for (int e = 0; e < mesh.num_triangles(); ++e) {
        const auto& t = mesh.triangle(e);
        const auto g = p1_gradients(mesh, e);
        const double a = mesh.area(e);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                ts.emplace_back(t[i], t[j], a * g[i].dot(g[j]));
    }
    return SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), ts);
}

/// Advection matrix V_ij = int phi_i <grad phi_j, v> with element-midpoint
/// wind. One-point quadrature is exact here because grad phi_j and v are
/// element-constant, which also preserves skew-symmetry for stream-function
/// fields tangent to the boundary.
inline SparseMatrix assemble_advection(const TriMesh& mesh, const WindField& wind) {
    if (static_cast<int>(wind.nodal().size()) != mesh.num_nodes())
        throw MeshError("assemble_advection: wind field does not match mesh");
    std::vector<SparseMatrix::Triplet> ts;
    ts.reserve(9u * mesh.num_triangles());
    for (int e = 0; e < mesh.num_triangles(); ++e) {
        const auto& t = mesh.triangle(e);
        const auto g = p1_gradients(mesh, e);
        const Vec2 v = wind.element_velocity(e);
        const double a3 = mesh.area(e) / 3.0;
        for (int j = 0; j < 3; ++j) {
            const double dj = g[j].dot(v) * a3;
            for (int i = 0; i < 3; ++i) ts.emplace_back(t[i], t[j], dj);
        }
    }
    return SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), ts);
}

struct SupgMatrices {
    SparseMatrix s_tau;   // tau_E-weighted streamline diffusion
    SparseMatrix vt_tau;  // tau_E-weighted element-wise V^T
};

/// Per-element stabilization parameter tau = min(h^2/(2 kappa), h/|v|);
/// a vanishing element wind falls back to the diffusive branch.
inline double supg_tau(double h, double kappa, double speed) {
    const double diffusive = h * h / (2.0 * kappa);
    if (speed <= 0.0) return diffusive;
    return std::min(diffusive, h / speed);
}

/// SUPG matrices for P1 elements (the second-derivative term of the residual
/// vanishes): S_tau_ij = sum_E tau_E A_E (grad phi_i . v)(grad phi_j . v) and
/// the tau-weighted transposed advection blocks.
inline SupgMatrices assemble_supg(const TriMesh& mesh, const WindField& wind, double kappa) {
    if (kappa <= 0.0) throw MeshError("assemble_supg: kappa must be positive");
    if (static_cast<int>(wind.nodal().size()) != mesh.num_nodes())
        throw MeshError("assemble_supg: wind field does not match mesh");
    std::vector<SparseMatrix::Triplet> st, vt;
    st.reserve(9u * mesh.num_triangles());
    vt.reserve(9u * mesh.num_triangles());
    for (int e = 0; e < mesh.num_triangles(); ++e) {
        const auto& t = mesh.triangle(e);
        const auto g = p1_gradients(mesh, e);
        const Vec2 v = wind.element_velocity(e);
        const double tau = supg_tau(mesh.diameter(e), kappa, v.norm());
        const double a = mesh.area(e);
        std::array<double, 3> d;
        for (int k = 0; k < 3; ++k) d[k] = g[k].dot(v);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                st.emplace_back(t[i], t[j], tau * a * d[i] * d[j]);
                // transpose of the local advection block: (V^T)_ij = phi_j row
                vt.emplace_back(t[i], t[j], tau * (a / 3.0) * d[i]);
            }
    }
    return SupgMatrices{SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), st),
                        SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), vt)};
}

/// Boundary mass matrix B_ij = int_boundary phi_i phi_j; per edge of length L
/// the 2x2 block (L/6) [[2,1],[1,2]].
inline SparseMatrix assemble_boundary_mass(const TriMesh& mesh) {
    std::vector<SparseMatrix::Triplet> ts;
    for (const auto& e : mesh.boundary_edges()) {
        const double L = distance(mesh.node(e.a), mesh.node(e.b));
        ts.emplace_back(e.a, e.a, L / 3.0);
        ts.emplace_back(e.b, e.b, L / 3.0);
        ts.emplace_back(e.a, e.b, L / 6.0);
        ts.emplace_back(e.b, e.a, L / 6.0);
    }
    return SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), ts);
}

/// Barycentric load vector of a point: sum_j a_j e_{l_j}.
inline Vector bary_load(const TriMesh& mesh, const Vec2& x) {
    const BaryLocation loc = mesh.locate(x);
    Vector g = Vector::Zero(mesh.num_nodes());
    const auto& t = mesh.triangle(loc.tri);
    for (int k = 0; k < 3; ++k) g[t[k]] += loc.w[k];
    return g;
}

/// Discrete Dirac at x: M^{-1} applied to the barycentric load, so that
/// <M delta_x, u> interpolates u at x for every nodal u.
inline Vector discrete_dirac(const TriMesh& mesh, const SparseMatrix& mass, const Vec2& x) {
    return mass.solve(bary_load(mesh, x));
}

/// Symmetric Dirichlet elimination: masked rows and columns are zeroed and the
/// diagonal set to one. Applying the same mask to the transposed system keeps
/// the forward/adjoint pair exact transposes of each other.
inline SparseMatrix apply_dirichlet(const SparseMatrix& a, const std::vector<std::uint8_t>& mask) {
    const auto& m = a.eigen();
    std::vector<SparseMatrix::Triplet> ts;
    ts.reserve(static_cast<std::size_t>(a.nnz()));
    for (int k = 0; k < m.outerSize(); ++k)
        for (SparseMatrix::Storage::InnerIterator it(m, k); it; ++it) {
            if (mask[static_cast<std::size_t>(it.row())] || mask[static_cast<std::size_t>(it.col())])
                continue;
            ts.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        }
    for (int i = 0; i < a.rows(); ++i)
        if (mask[static_cast<std::size_t>(i)]) ts.emplace_back(i, i, 1.0);
    return SparseMatrix::from_triplets(a.rows(), a.cols(), ts);
}

/// Zero the masked entries of a vector (the projector paired with
/// apply_dirichlet).
inline Vector project_out(Vector v, const std::vector<std::uint8_t>& mask) {
    for (int i = 0; i < v.size(); ++i)
        if (mask[static_cast<std::size_t>(i)]) v[i] = 0.0;
    return v;
}

} // namespace plume
