/// @file test_inversion.cpp
/// @brief Intensity subproblem, pruning, merging, certificates, PDAP loop
///        and the L2 baseline.

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "plume/inversion.hpp"

using namespace plume;

namespace {

const Rect kUnit{0.0, 0.0, 1.0, 1.0};

/// Projected cyclic coordinate descent, the reference solver for the
/// nonnegative-l1 subproblem.
Vector coordinate_descent_oracle(const Eigen::MatrixXd& G, const Vector& d, double sigma,
                                 double alpha, int max_sweeps = 200000, double tol = 1e-12) {
    const int n = static_cast<int>(G.cols());
    const double s2 = sigma * sigma;
    const Eigen::MatrixXd Q = G.transpose() * G;
    const Vector b = G.transpose() * d;
    Vector lam = Vector::Zero(n);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double move = 0.0;
        for (int i = 0; i < n; ++i) {
            const double qii = Q(i, i) / s2;
            if (qii <= 0.0) continue;
            const double g = (Q.row(i).dot(lam) - b[i]) / s2 + alpha;
            const double next = std::max(0.0, lam[i] - g / qii);
            move = std::max(move, std::abs(next - lam[i]));
            lam[i] = next;
        }
        if (move < tol) break;
    }
    return lam;
}

struct Rig {
    std::shared_ptr<const TriMesh> mesh;
    std::shared_ptr<const WindField> wind;
    FemOperators ops;
    TransportConfig cfg;
    std::unique_ptr<TransportOperator> transport;
    SensorPlan plan;
    ObservationOperator obs;
    std::unique_ptr<SourceOperator> src;

    InversionContext context() const {
        return InversionContext{transport.get(), &obs, src.get(), nullptr};
    }
};

Rig make_rig(int nx, ShapeModel shape, int sensors_per_side, int n_steps = 20) {
    Rig r;
    r.mesh = std::make_shared<const TriMesh>(build_rect_mesh(kUnit, nx, nx));
    r.wind = std::make_shared<const WindField>(WindField::double_gyre(*r.mesh, kUnit, 0.8));
    r.cfg.kappa = 1e-3;
    r.cfg.dt = 0.05;
    r.cfg.n_steps = n_steps;
    r.ops = FemOperators::build(r.mesh, r.wind, r.cfg.kappa);
    r.transport = std::make_unique<TransportOperator>(r.mesh, r.ops, r.cfg);
    const int k = sensors_per_side;
    int id = 0;
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < k; ++i) {
            const Vec2 p{0.1 + 0.8 * i / (k - 1.0), 0.1 + 0.8 * j / (k - 1.0)};
            for (int s = 2; s <= n_steps; s += 2)
                r.plan.observations.push_back(Observation{s * r.cfg.dt, p, id});
            ++id;
        }
    r.obs = ObservationOperator(*r.mesh, r.plan, r.cfg);
    r.src = std::make_unique<SourceOperator>(r.mesh, std::move(shape), r.ops.mass,
                                             r.ops.stiffness, r.ops.boundary);
    return r;
}

} // namespace

TEST_CASE("subproblem closed forms") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;

    SECTION("single column soft threshold") {
        Eigen::MatrixXd G(20, 1);
        Vector d(20);
        for (int i = 0; i < 20; ++i) {
            G(i, 0) = g(rng);
            d[i] = g(rng);
        }
        const double sigma = 0.7, alpha = 0.05;
        const double s2 = sigma * sigma;
        const double expected =
            std::max(0.0, (G.col(0).dot(d) / s2 - alpha) / (G.col(0).squaredNorm() / s2));
        const auto res = intensity_subproblem(G, d, sigma, alpha, Vector::Zero(1));
        CHECK(res.lambda[0] == Catch::Approx(expected).margin(1e-12));
    }

    SECTION("zero data gives zero intensities") {
        Eigen::MatrixXd G(10, 4);
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j < 4; ++j) G(i, j) = g(rng);
        const auto res = intensity_subproblem(G, Vector::Zero(10), 1.0, 0.1, Vector::Ones(4));
        CHECK(res.lambda.cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("empty column set") {
        const auto res = intensity_subproblem(Eigen::MatrixXd(5, 0), Vector::Ones(5), 1.0, 0.1, {});
        CHECK(res.lambda.size() == 0);
    }
}

TEST_CASE("subproblem matches the coordinate descent oracle") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> natoms(1, 10), nd(5, 50);
    std::uniform_real_distribution<double> ua(0.01, 0.5);

    for (int inst = 0; inst < 100; ++inst) {
        const int n = natoms(rng), m = std::max(nd(rng), n);
        Eigen::MatrixXd G(m, n);
        Vector d(m);
        for (int i = 0; i < m; ++i) {
            d[i] = g(rng);
            for (int j = 0; j < n; ++j) G(i, j) = g(rng);
        }
        const double sigma = 0.5 + std::abs(g(rng)), alpha = ua(rng);
        const auto res = intensity_subproblem(G, d, sigma, alpha, Vector::Zero(n));
        const Vector oracle = coordinate_descent_oracle(G, d, sigma, alpha);
        const double scale = std::max(1.0, oracle.cwiseAbs().maxCoeff());
        CHECK((res.lambda - oracle).cwiseAbs().maxCoeff() <= 1e-8 * scale);
    }
}

TEST_CASE("subproblem scaling equivariance") {
    // scaling G and d by c and alpha by c^2 leaves the minimizer unchanged
    std::mt19937_64 rng(23);
    std::normal_distribution<double> g;
    Eigen::MatrixXd G(30, 6);
    Vector d(30);
    for (int i = 0; i < 30; ++i) {
        d[i] = g(rng);
        for (int j = 0; j < 6; ++j) G(i, j) = g(rng);
    }
    const double sigma = 0.9, alpha = 0.2, c = 37.5;
    const Vector base = intensity_subproblem(G, d, sigma, alpha, Vector::Zero(6)).lambda;
    const Vector scaled =
        intensity_subproblem(c * G, Vector(c * d), sigma, c * c * alpha, Vector::Zero(6)).lambda;
    CHECK((base - scaled).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, base.maxCoeff()));
}

TEST_CASE("warmstart does not change the minimizer") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> g;
    Eigen::MatrixXd G(25, 5);
    Vector d(25);
    for (int i = 0; i < 25; ++i) {
        d[i] = g(rng) + 1.0;
        for (int j = 0; j < 5; ++j) G(i, j) = std::abs(g(rng));
    }
    const Vector cold = intensity_subproblem(G, d, 1.0, 0.05, Vector::Zero(5)).lambda;
    Vector warm_start = cold;
    warm_start[0] += 0.3;
    const Vector warm = intensity_subproblem(G, d, 1.0, 0.05, warm_start).lambda;
    CHECK((cold - warm).cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, cold.maxCoeff()));
}

TEST_CASE("prune removes relatively tiny atoms") {
    SparseMeasure mu{SourceKind::Initial,
                     {Atom{Vec2{0.1, 0.1}, 1.0}, Atom{Vec2{0.2, 0.2}, 1e-15}}};
    const SparseMeasure p = prune(mu, 1e-10);
    REQUIRE(p.size() == 1);
    CHECK(p.atoms[0].intensity == 1.0);

    const SparseMeasure zeros{SourceKind::Initial,
                              {Atom{Vec2{0.1, 0.1}, 0.0}, Atom{Vec2{0.2, 0.2}, 0.0}}};
    CHECK(prune(zeros, 1e-10).empty());

    SparseMeasure keep{SourceKind::Initial,
                       {Atom{Vec2{0.1, 0.1}, 1.0}, Atom{Vec2{0.2, 0.2}, 0.5}}};
    CHECK(prune(keep, 1e-10).size() == 2);
}

TEST_CASE("merge collapses clusters to weighted centroids") {
    SECTION("pairwise merge") {
        SparseMeasure mu{SourceKind::Initial,
                         {Atom{Vec2{0.0, 0.0}, 0.5}, Atom{Vec2{0.01, 0.0}, 0.5}}};
        const SparseMeasure m = merge_atoms(mu, 0.05);
        REQUIRE(m.size() == 1);
        CHECK(m.atoms[0].x.x == Catch::Approx(0.005));
        CHECK(m.atoms[0].x.y == Catch::Approx(0.0).margin(1e-15));
        CHECK(m.atoms[0].intensity == Catch::Approx(1.0));
    }
    SECTION("zero radius is the identity") {
        SparseMeasure mu{SourceKind::Initial,
                         {Atom{Vec2{0.0, 0.0}, 0.5}, Atom{Vec2{0.01, 0.0}, 0.5}}};
        CHECK(merge_atoms(mu, 0.0).size() == 2);
    }
    SECTION("three triangle vertices recover the barycentric point") {
        const TriMesh mesh = build_rect_mesh(kUnit, 4, 4);
        const Vec2 target{0.11, 0.07};
        const BaryLocation loc = mesh.locate(target);
        SparseMeasure mu{SourceKind::Initial, {}};
        const double total = 2.2;
        for (int k = 0; k < 3; ++k)
            mu.atoms.push_back(
                Atom{mesh.node(mesh.triangle(loc.tri)[k]), total * loc.w[k]});
        const SparseMeasure m = merge_atoms(mu, 1.0);
        REQUIRE(m.size() == 1);
        CHECK(m.atoms[0].x.x == Catch::Approx(target.x).margin(1e-12));
        CHECK(m.atoms[0].x.y == Catch::Approx(target.y).margin(1e-12));
        CHECK(m.atoms[0].intensity == Catch::Approx(total));
    }
    SECTION("total variation is preserved") {
        std::mt19937_64 rng(7);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        SparseMeasure mu{SourceKind::Initial, {}};
        for (int i = 0; i < 12; ++i) mu.atoms.push_back(Atom{Vec2{u(rng), u(rng)}, u(rng)});
        const SparseMeasure m = merge_atoms(mu, 0.3);
        CHECK(m.total_variation() == Catch::Approx(mu.total_variation()).epsilon(1e-12));
    }
}

TEST_CASE("certificate semantics") {
    const TriMesh mesh = build_rect_mesh(kUnit, 4, 4);
    const SparseMeasure empty{SourceKind::Initial, {}};

    SECTION("zero dual on zero data certifies with slack -alpha") {
        const Vector phi = Vector::Zero(mesh.num_nodes());
        const auto rep = certify_optimality(phi, std::nullopt, empty, empty, mesh, 2.0, 0.002);
        CHECK(rep.certified);
        CHECK(rep.global_slack == Catch::Approx(-2.0));
    }
    SECTION("lowering alpha below the dual max invalidates the certificate") {
        Vector phi = Vector::Zero(mesh.num_nodes());
        phi[5] = 1.5;
        const auto ok = certify_optimality(phi, std::nullopt, empty, empty, mesh, 2.0, 0.002);
        CHECK(ok.certified);
        const auto bad = certify_optimality(phi, std::nullopt, empty, empty, mesh, 0.2, 0.0002);
        CHECK_FALSE(bad.certified);
    }
    SECTION("raising the tolerance never un-certifies") {
        Vector phi = Vector::Zero(mesh.num_nodes());
        phi[5] = 1.0;
        for (double tol : {1e-4, 1e-2, 1e-1, 1.0}) {
            const auto rep = certify_optimality(phi, std::nullopt, empty, empty, mesh, 0.999, tol);
            if (tol >= 1e-2) CHECK(rep.certified);
        }
    }
}

TEST_CASE("objective value") {
    Vector d(3);
    d << 1.0, -2.0, 0.5;
    const double sigma = 0.5;
    CHECK(objective_value(Vector::Zero(3), d, sigma, 3.0, 0.0) ==
          Catch::Approx(d.squaredNorm() / (2.0 * sigma * sigma)));
    // adding a zero-intensity atom leaves the value unchanged
    CHECK(objective_value(Vector::Zero(3), d, sigma, 3.0, 0.0) ==
          objective_value(Vector::Zero(3), d, sigma, 3.0, 0.0) + 3.0 * 0.0);
}

TEST_CASE("pdap on zero data terminates immediately with empty measures") {
    Rig r = make_rig(8, DiracShape{}, 3, 10);
    PdapConfig cfg;
    cfg.alpha = 1.0;
    cfg.sigma = 1.0;
    const InversionResult res = pdap_run(r.context(), Vector::Zero(r.obs.size()), cfg);
    CHECK(res.certified);
    CHECK(res.iterations == 0);
    CHECK(res.mu_initial.empty());
    CHECK(res.stop_reason == "certified");
    CHECK(res.certificate.global_slack == Catch::Approx(-1.0));
    CHECK(res.adjoint_solves == 1);
    CHECK(res.forward_solves == 0);
}

TEST_CASE("pdap recovers a noiseless dirac source at a node") {
    Rig r = make_rig(12, DiracShape{}, 5, 16);
    const int truth_node = 70;
    const double truth_intensity = 2.0;
    const Vector m0 =
        truth_intensity * discrete_dirac(*r.mesh, r.ops.mass, r.mesh->node(truth_node));
    const Vector d =
        r.transport->parameter_to_observable(r.obs, m0, Vector::Zero(r.mesh->num_nodes()));

    PdapConfig cfg;
    cfg.sigma = 0.01 * d.cwiseAbs().maxCoeff();
    cfg.alpha = 1e-4 * d.squaredNorm() / (cfg.sigma * cfg.sigma);
    cfg.max_iter = 10;
    const InversionResult res = pdap_run(r.context(), d, cfg);

    REQUIRE(res.log.size() >= 2);
    REQUIRE(res.mu_initial.size() >= 1);
    // the very first candidate lands on the truth node and the first
    // intensity solve reproduces the intensity within 1%
    int best = 0;
    for (int i = 0; i < res.mu_initial.size(); ++i)
        if (res.mu_initial.atoms[static_cast<std::size_t>(i)].intensity >
            res.mu_initial.atoms[static_cast<std::size_t>(best)].intensity)
            best = i;
    const Atom main = res.mu_initial.atoms[static_cast<std::size_t>(best)];
    CHECK(distance(main.x, r.mesh->node(truth_node)) <= 1e-12);
    CHECK(std::abs(main.intensity - truth_intensity) <= 0.01 * truth_intensity);
}

TEST_CASE("pdap invariants on a small noisy benchmark") {
    Rig r = make_rig(16, RbfShape{0.2, 0.01}, 4, 20);
    const Vector m0 = r.src->field(SparseMeasure{SourceKind::Initial, {Atom{Vec2{0.4, 0.65}, 1.0}}});
    const Vector clean =
        r.transport->parameter_to_observable(r.obs, m0, Vector::Zero(r.mesh->num_nodes()));
    GaussianSamplerForTest:
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    const double sigma = 0.03 * clean.maxCoeff();
    Vector d = clean;
    for (int i = 0; i < d.size(); ++i) d[i] += sigma * g(rng);

    PdapConfig cfg;
    cfg.sigma = sigma;
    cfg.alpha = 0.05 * (clean.squaredNorm() / (sigma * sigma)) / clean.size();
    cfg.max_iter = 25;
    cfg.merge_radius = 3.0 / 16.0;
    const InversionResult res = pdap_run(r.context(), d, cfg);

    // objective log is nonincreasing
    for (std::size_t k = 1; k < res.log.size(); ++k)
        CHECK(res.log[k].objective <= res.log[k - 1].objective + 1e-12 * res.log[0].objective);

    // atom budget from the support bound
    CHECK(res.mu_initial.size() + res.mu_continuous.size() <= r.obs.size());

    // solve accounting: one adjoint per round, one forward per fresh column
    CHECK(res.adjoint_solves == static_cast<long>(res.log.size()));
    CHECK(res.adjoint_solves == res.dual_evaluations);
    CHECK(res.forward_solves == res.column_evaluations);
    CHECK(res.forward_solves <= 2 * res.iterations + 1);
    CHECK(res.adjoint_solves <= res.iterations + 1);

    if (res.certified) {
        // per-atom slack: active atoms sit at the dual ceiling
        for (double s : res.certificate.atom_slack_initial)
            CHECK(std::abs(s) <= 1e-2 * cfg.alpha);
    }
}

TEST_CASE("l2 baseline") {
    Rig r = make_rig(10, RbfShape{0.2, 0.01}, 4, 12);
    const int n = r.mesh->num_nodes();
    const Vector m0 = r.src->field(SparseMeasure{SourceKind::Initial, {Atom{Vec2{0.4, 0.6}, 1.0}}});
    const Vector d = r.transport->parameter_to_observable(r.obs, m0, Vector::Zero(n));

    SECTION("prior-dominated limit returns the prior") {
        L2Prior prior;
        prior.m_prior = Vector::Constant(n, 0.17);
        prior.eta = 2.0;
        prior.gamma = 0.05;
        prior.beta = EllipticShape::default_beta(prior.eta, prior.gamma);
        const L2Result res = l2_invert(*r.transport, r.obs, r.ops, d, prior, 1e12, 1e-8, 20);
        CHECK(res.converged);
        CHECK((res.m - prior.m_prior).cwiseAbs().maxCoeff() <= 1e-8);
    }

    SECTION("cg decreases the quadratic objective monotonically") {
        L2Prior prior;
        prior.m_prior = Vector::Zero(n);
        prior.eta = 50.0;
        prior.gamma = 2.0;
        prior.beta = EllipticShape::default_beta(prior.eta, prior.gamma);
        const double sigma = 0.03 * d.maxCoeff();
        const L2Result res = l2_invert(*r.transport, r.obs, r.ops, d, prior, sigma, 1e-10, 25);
        // residual history is reported and the recovered field is nontrivial
        CHECK(res.residual_history.size() >= 2);
        CHECK(res.m.cwiseAbs().maxCoeff() > 0.0);
        CHECK(res.pde_solves == 2 * res.hessian_applies + 1);
        // the relative residual decreases overall
        CHECK(res.residual_history.back() < res.residual_history.front());
        // recovered field peaks near the source
        const auto maxima = field_local_maxima(*r.mesh, res.m, 1);
        REQUIRE(!maxima.empty());
        CHECK(distance(maxima[0].x, Vec2{0.4, 0.6}) <= 0.15);
    }
}
