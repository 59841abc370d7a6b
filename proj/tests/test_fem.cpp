/// @file test_fem.cpp
/// @brief Element matrices, discrete Dirac and the sparse solve path.

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <random>

#include "plume/fem.hpp"
#include "plume/mesh.hpp"
#include "plume/sparse.hpp"
#include "plume/wind.hpp"

using namespace plume;

namespace {

const Rect kUnit{0.0, 0.0, 1.0, 1.0};

TriMesh reference_triangle() {
    return TriMesh({Vec2{0.0, 0.0}, Vec2{1.0, 0.0}, Vec2{0.0, 1.0}}, {{0, 1, 2}});
}

double symmetry_residual(const SparseMatrix& a) {
    const Eigen::MatrixXd d = a.to_dense();
    const double scale = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
    return (d - d.transpose()).cwiseAbs().maxCoeff() / scale;
}

} // namespace

TEST_CASE("mass matrix of the reference triangle") {
    const TriMesh m = reference_triangle();
    const SparseMatrix M = assemble_mass(m);
    const double a12 = 0.5 / 12.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(M.coeff(i, j) == Catch::Approx((i == j ? 2.0 : 1.0) * a12).epsilon(1e-14));
}

TEST_CASE("mass matrix partition of unity and positivity") {
    const TriMesh m = build_rect_mesh(kUnit, 2, 2);
    const SparseMatrix M = assemble_mass(m);
    CHECK(M.sum() == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(symmetry_residual(M) <= 1e-14);

    // dense eigensolve oracle on the small assembled matrix
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M.to_dense());
    CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("stiffness matrix of the reference triangle and kernel") {
    const TriMesh m = reference_triangle();
    const SparseMatrix K = assemble_stiffness(m);
    const double expected[3][3] = {{1.0, -0.5, -0.5}, {-0.5, 0.5, 0.0}, {-0.5, 0.0, 0.5}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(K.coeff(i, j) == Catch::Approx(expected[i][j]).margin(1e-14));

    const TriMesh m2 = build_rect_mesh(kUnit, 5, 5, {Rect{0.2, 0.4, 0.4, 0.6}});
    const SparseMatrix K2 = assemble_stiffness(m2);
    const Vector ones = Vector::Ones(m2.num_nodes());
    CHECK((K2 * ones).cwiseAbs().maxCoeff() <= 1e-12);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 100; ++trial) {
        Vector u(m2.num_nodes());
        for (int i = 0; i < u.size(); ++i) u[i] = g(rng);
        CHECK(u.dot(K2 * u) >= -1e-12 * u.squaredNorm());
    }
}

TEST_CASE("advection matrix") {
    const TriMesh m = build_rect_mesh(kUnit, 8, 8);

    SECTION("zero wind gives the zero matrix") {
        const WindField w = WindField::uniform(m, 0.0, 0.0);
        CHECK(assemble_advection(m, w).max_abs() == 0.0);
    }

    SECTION("tangential stream field gives a skew-symmetric matrix") {
        const WindField w = WindField::vortex(m, 0.5, 0.5, 1.0, 0.15);
        const SparseMatrix V = assemble_advection(m, w);
        const Eigen::MatrixXd d = V.to_dense();
        const double skew = (d + d.transpose()).cwiseAbs().maxCoeff();
        CHECK(skew <= 1e-8 * V.max_abs());
        // column sums vanish: constants produce no net transport
        const Vector ones = Vector::Ones(m.num_nodes());
        CHECK(V.apply_transpose(ones).cwiseAbs().maxCoeff() <= 1e-13 * V.max_abs());
    }
}

TEST_CASE("supg tau formula and matrices") {
    CHECK(supg_tau(0.1, 0.001, 1.0) == Catch::Approx(0.1));   // advective branch
    CHECK(supg_tau(0.1, 0.001, 0.0) == Catch::Approx(5.0));   // diffusive fallback

    const TriMesh m = build_rect_mesh(kUnit, 6, 6);
    CHECK_THROWS(assemble_supg(m, WindField::uniform(m, 1.0, 0.0), 0.0));

    SECTION("zero wind zeroes both matrices") {
        const auto s = assemble_supg(m, WindField::uniform(m, 0.0, 0.0), 0.01);
        CHECK(s.s_tau.max_abs() == 0.0);
        CHECK(s.vt_tau.max_abs() == 0.0);
    }

    SECTION("S_tau is symmetric positive semidefinite") {
        const WindField w = WindField::double_gyre(m, kUnit, 1.0);
        const auto s = assemble_supg(m, w, 0.001);
        CHECK(symmetry_residual(s.s_tau) <= 1e-12);
        std::mt19937_64 rng(17);
        std::normal_distribution<double> g;
        for (int trial = 0; trial < 100; ++trial) {
            Vector u(m.num_nodes());
            for (int i = 0; i < u.size(); ++i) u[i] = g(rng);
            CHECK(u.dot(s.s_tau * u) >= -1e-12 * u.squaredNorm());
        }
    }

    SECTION("vt_tau transposes the element advection blocks") {
        const WindField w = WindField::uniform(m, 0.7, -0.3);
        const auto s = assemble_supg(m, w, 0.001);
        const SparseMatrix V = assemble_advection(m, w);
        // constant tau across a uniform mesh with uniform wind
        const double tau = supg_tau(m.diameter(0), 0.001, w.element_velocity(0).norm());
        const Eigen::MatrixXd lhs = s.vt_tau.to_dense();
        const Eigen::MatrixXd rhs = tau * V.to_dense().transpose();
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-13 * rhs.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("boundary mass matrix") {
    const TriMesh m = build_rect_mesh(kUnit, 4, 4);
    const SparseMatrix B = assemble_boundary_mass(m);
    CHECK(B.sum() == Catch::Approx(4.0).epsilon(1e-10));  // unit square perimeter

    // interior node rows vanish
    const Vec2 interior{0.5, 0.5};
    for (int i = 0; i < m.num_nodes(); ++i) {
        if (distance(m.node(i), interior) > 1e-9) continue;
        for (int j = 0; j < m.num_nodes(); ++j) CHECK(B.coeff(i, j) == 0.0);
    }

    // single-edge 1D mass block
    const TriMesh tri = reference_triangle();
    const SparseMatrix Bt = assemble_boundary_mass(tri);
    CHECK(Bt.coeff(0, 0) == Catch::Approx((1.0 / 3.0) + (1.0 / 3.0)));  // two unit edges meet at node 0
    CHECK(Bt.coeff(0, 1) == Catch::Approx(1.0 / 6.0));
}

TEST_CASE("discrete dirac duality") {
    const TriMesh m = build_rect_mesh(kUnit, 6, 6);
    const SparseMatrix M = assemble_mass(m);

    SECTION("at a node the load is the canonical basis vector") {
        const int k = 14;
        const Vector g = bary_load(m, m.node(k));
        CHECK(g[k] == Catch::Approx(1.0));
        CHECK(g.sum() == Catch::Approx(1.0));
        const Vector d = discrete_dirac(m, M, m.node(k));
        CHECK((M * d - g).cwiseAbs().maxCoeff() <= 1e-12);
    }

    SECTION("unit total mass and interpolation duality at random points") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(0.05, 0.95);
        std::normal_distribution<double> g;
        for (int trial = 0; trial < 20; ++trial) {
            const Vec2 x{u(rng), u(rng)};
            const Vector d = discrete_dirac(m, M, x);
            CHECK((M * d).sum() == Catch::Approx(1.0).margin(1e-10));
            Vector field(m.num_nodes());
            for (int i = 0; i < field.size(); ++i) field[i] = g(rng);
            const double lhs = (M * d).dot(field);
            const double rhs = m.interpolate(m.locate(x), field);
            CHECK(lhs == Catch::Approx(rhs).margin(1e-10));
        }
    }
}

TEST_CASE("factorize and solve") {
    SECTION("identity") {
        const SparseMatrix I = SparseMatrix::identity(5);
        Vector b(5);
        b << 1, 2, 3, 4, 5;
        CHECK((I.solve(b) - b).norm() == 0.0);
    }

    SECTION("random sparse SPD system matches dense oracle") {
        const int n = 50;
        std::mt19937_64 rng(9);
        std::normal_distribution<double> g;
        std::vector<SparseMatrix::Triplet> ts;
        for (int i = 0; i < n; ++i) {
            ts.emplace_back(i, i, 4.0 + std::abs(g(rng)));
            if (i + 1 < n) {
                const double v = 0.5 * g(rng);
                ts.emplace_back(i, i + 1, v);
                ts.emplace_back(i + 1, i, v);
            }
            if (i + 7 < n) {
                const double v = 0.3 * g(rng);
                ts.emplace_back(i, i + 7, v);
                ts.emplace_back(i + 7, i, v);
            }
        }
        const SparseMatrix A = SparseMatrix::from_triplets(n, n, ts);
        Vector b(n);
        for (int i = 0; i < n; ++i) b[i] = g(rng);
        const Vector x = A.solve(b);
        const Vector x_oracle = Eigen::FullPivLU<Eigen::MatrixXd>(A.to_dense()).solve(b);
        CHECK((x - x_oracle).norm() <= 1e-9 * x_oracle.norm());
        CHECK((A * x - b).norm() <= 1e-10 * b.norm());

        // transposed solve against the transposed dense oracle
        const Vector xt = A.solve_transpose(b);
        const Vector xt_oracle =
            Eigen::FullPivLU<Eigen::MatrixXd>(A.to_dense().transpose()).solve(b);
        CHECK((xt - xt_oracle).norm() <= 1e-9 * xt_oracle.norm());
    }

    SECTION("singular matrix reports an error") {
        std::vector<SparseMatrix::Triplet> ts{{0, 0, 1.0}, {1, 1, 1.0}};  // zero row 2
        const SparseMatrix A = SparseMatrix::from_triplets(3, 3, ts);
        Vector b = Vector::Ones(3);
        CHECK_THROWS_AS(A.solve(b), SingularMatrixError);
    }
}

TEST_CASE("dirichlet elimination") {
    const TriMesh m = build_rect_mesh(kUnit, 4, 4);
    const WindField w = WindField::uniform(m, 1.0, 0.0);
    const auto markers = classify_boundary(m, w);
    const auto mask = dirichlet_mask(m, markers);
    REQUIRE(count_mask(mask) > 0);

    SparseMatrix A = assemble_mass(m) + assemble_stiffness(m).scaled(0.01) +
                     assemble_advection(m, w).scaled(0.01);
    const SparseMatrix Ac = apply_dirichlet(A, mask);

    // constrained rows/columns are identity
    for (int i = 0; i < m.num_nodes(); ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        for (int j = 0; j < m.num_nodes(); ++j)
            CHECK(Ac.coeff(i, j) == (i == j ? 1.0 : 0.0));
    }

    // solving with a projected right-hand side returns exact zeros at
    // constrained nodes
    std::mt19937_64 rng(21);
    std::normal_distribution<double> g;
    Vector b(m.num_nodes());
    for (int i = 0; i < b.size(); ++i) b[i] = g(rng);
    const Vector x = Ac.solve(project_out(b, mask));
    for (int i = 0; i < x.size(); ++i)
        if (mask[static_cast<std::size_t>(i)]) CHECK(x[i] == 0.0);
}
