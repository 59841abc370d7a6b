#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "plume/inversion.hpp"
#include "plume/mesh_io.hpp"
#include "plume/sources.hpp"
#include "plume/transport.hpp"
#include "plume/wind.hpp"

namespace plume {

class ScenarioError : public std::runtime_error {
public:
    explicit ScenarioError(const std::string& what) : std::runtime_error(what) {}
};

struct MeshSpec {
    std::string path;  // non-empty: load from file, ignore generator fields
    Rect bounds{0.0, 0.0, 1.0, 1.0};
    int nx = 64;
    int ny = 64;
    std::vector<Rect> holes;
};

struct WindSpec {
    std::string type = "uniform";  // uniform | vortex | double_gyre | channel | file
    double vx = 0.1, vy = 0.1;     // uniform, channel
    double cx = 0.5, cy = 0.5, strength = 1.0, width = 0.2;  // vortex
    double peak = 1.0;             // double_gyre
    bool mask_buildings = false;   // stream obstacles at the mesh holes
    double mask_margin = 0.08;
    std::string path;              // file
};

struct ShapeSpec {
    std::string type = "rbf";  // rbf | elliptic | dirac
    double r = 0.26;
    double eps = 0.01;
    bool paper_sign = false;
    double eta = 1.0;
    double gamma = 1e-3;
    double beta = -1.0;  // negative selects the default beta(eta, gamma)

    ShapeModel model() const {
        if (type == "rbf") return RbfShape{r, eps, paper_sign};
        if (type == "elliptic")
            return EllipticShape{eta, gamma,
                                 beta >= 0.0 ? beta : EllipticShape::default_beta(eta, gamma)};
        if (type == "dirac") return DiracShape{};
        throw ScenarioError("unknown shape type: " + type);
    }
};

struct TruthSpec {
    ShapeSpec shape;
    std::vector<Atom> atoms;
};

struct SensorSpec {
    std::string type = "grid";  // grid | list | moving
    int nx = 3, ny = 3;         // grid
    double margin = 0.1;
    std::vector<Vec2> positions;          // list
    std::array<Vec2, 3> coeffs{};         // moving: c0 + c1 t + c2 t^2
};

struct SamplingSpec {
    double t_start = 1.0;
    double t_end = 5.0;
    double rate_hz = 10.0;
};

struct NoiseSpec {
    double level = 0.03;  // relative to max clean signal
    std::uint64_t seed = 42;
};

struct L2Spec {
    double eta = 1.0;
    double gamma = 1e-3;
    double beta = -1.0;
    double cg_tol = 1e-8;
    int cg_max = 60;
};

struct InversionSpec {
    std::string method = "pdap";  // pdap | l2
    std::string kinds = "auto";   // initial | continuous | both | auto
    PdapConfig pdap;
    L2Spec l2;
};

struct ScenarioConfig {
    std::string name = "scenario";
    MeshSpec mesh;
    WindSpec wind;
    TransportConfig transport;
    TruthSpec truth_initial;
    TruthSpec truth_continuous;
    SensorSpec sensors;
    SamplingSpec sampling;
    NoiseSpec noise;
    InversionSpec inversion;

    bool initial_active() const {
        if (inversion.kinds == "initial" || inversion.kinds == "both") return true;
        if (inversion.kinds == "continuous") return false;
        return truth_continuous.atoms.empty() || !truth_initial.atoms.empty();
    }
    bool continuous_active() const {
        if (inversion.kinds == "continuous" || inversion.kinds == "both") return true;
        if (inversion.kinds == "initial") return false;
        return !truth_continuous.atoms.empty();
    }

    void validate() const {
        transport.validate();
        if (sampling.t_start <= 0.0) throw ScenarioError("sampling window must start after t=0");
        if (sampling.t_end < sampling.t_start) throw ScenarioError("empty sampling window");
        if (sampling.t_end > transport.horizon() + 1e-9)
            throw ScenarioError("sampling window exceeds the simulation horizon");
        if (sampling.rate_hz <= 0.0) throw ScenarioError("sampling rate must be positive");
        if (noise.level < 0.0) throw ScenarioError("noise level must be >= 0");
    }
};

/// Deterministic standard normal stream: Box-Muller over the raw mt19937_64
/// output, so identical seeds give bit-identical draws on every platform.
class GaussianSampler {
public:
    explicit GaussianSampler(std::uint64_t seed) : eng_(seed) {}

    double operator()() {
        if (have_) {
            have_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform_open();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * M_PI * u2;
        spare_ = rad * std::sin(ang);
        have_ = true;
        return rad * std::cos(ang);
    }

private:
    std::mt19937_64 eng_;
    bool have_ = false;
    double spare_ = 0.0;

    double uniform_open() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }
};

inline std::vector<double> sample_times(const SamplingSpec& s) {
    const int count = static_cast<int>(std::floor((s.t_end - s.t_start) * s.rate_hz + 1e-9)) + 1;
    std::vector<double> times(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) times[static_cast<std::size_t>(k)] = s.t_start + k / s.rate_hz;
    return times;
}

/// One observation per sample time along the quadratic trajectory
/// gamma(t) = c0 + c1 t + c2 t^2.
inline SensorPlan moving_sensor_plan(const TriMesh& mesh, const std::array<Vec2, 3>& coeffs,
                                     const SamplingSpec& sampling, double horizon) {
    if (sampling.t_end > horizon + 1e-9)
        throw ScenarioError("moving sensor window exceeds the simulation horizon");
    SensorPlan plan;
    std::string bad;
    for (double t : sample_times(sampling)) {
        const Vec2 x = coeffs[0] + coeffs[1] * t + coeffs[2] * (t * t);
        if (!mesh.try_locate(x)) {
            bad += (bad.empty() ? "" : ", ") + std::to_string(t);
            continue;
        }
        plan.observations.push_back(Observation{t, x, 0});
    }
    if (!bad.empty())
        throw ScenarioError("moving sensor trajectory leaves the domain at t = " + bad);
    return plan;
}

inline SensorPlan build_sensor_plan(const TriMesh& mesh, const ScenarioConfig& cfg) {
    const auto& s = cfg.sensors;
    if (s.type == "moving")
        return moving_sensor_plan(mesh, s.coeffs, cfg.sampling, cfg.transport.horizon());

    std::vector<Vec2> positions;
    if (s.type == "list") {
        positions = s.positions;
    } else if (s.type == "grid") {
        const Rect b = cfg.mesh.bounds;
        for (int j = 0; j < s.ny; ++j)
            for (int i = 0; i < s.nx; ++i) {
                const double fx = s.nx == 1 ? 0.5 : static_cast<double>(i) / (s.nx - 1);
                const double fy = s.ny == 1 ? 0.5 : static_cast<double>(j) / (s.ny - 1);
                const Vec2 p{b.x0 + (s.margin + fx * (1.0 - 2.0 * s.margin)) * b.width(),
                             b.y0 + (s.margin + fy * (1.0 - 2.0 * s.margin)) * b.height()};
                if (mesh.try_locate(p)) positions.push_back(p);  // skip points inside holes
            }
    } else {
        throw ScenarioError("unknown sensor spec type: " + s.type);
    }
    if (positions.empty()) throw ScenarioError("sensor plan has no usable positions");

    SensorPlan plan;
    const auto times = sample_times(cfg.sampling);
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (double t : times)
            plan.observations.push_back(Observation{t, positions[i], static_cast<int>(i)});
    return plan;
}

inline std::shared_ptr<const TriMesh> build_mesh(const MeshSpec& spec) {
    if (!spec.path.empty())
        return std::make_shared<const TriMesh>(read_trimesh_file(spec.path));
    return std::make_shared<const TriMesh>(build_rect_mesh(spec.bounds, spec.nx, spec.ny, spec.holes));
}

inline std::shared_ptr<const WindField> build_wind(const TriMesh& mesh, const WindSpec& w,
                                                   const MeshSpec& mspec) {
    const std::vector<Rect> obstacles = w.mask_buildings ? mspec.holes : std::vector<Rect>{};
    if (w.type == "uniform") {
        if (obstacles.empty())
            return std::make_shared<const WindField>(WindField::uniform(mesh, w.vx, w.vy));
        return std::make_shared<const WindField>(
            WindField::channel(mesh, w.vx, w.vy, obstacles, w.mask_margin));
    }
    if (w.type == "channel")
        return std::make_shared<const WindField>(
            WindField::channel(mesh, w.vx, w.vy, obstacles, w.mask_margin));
    if (w.type == "vortex")
        return std::make_shared<const WindField>(
            WindField::vortex(mesh, w.cx, w.cy, w.strength, w.width));
    if (w.type == "double_gyre")
        return std::make_shared<const WindField>(
            WindField::double_gyre(mesh, mspec.bounds, w.peak, obstacles, w.mask_margin));
    if (w.type == "file")
        return std::make_shared<const WindField>(read_windfield_file(w.path, mesh));
    throw ScenarioError("unknown wind type: " + w.type);
}

/// A fully wired scenario: mesh, wind, operators, sensor plan and shape
/// models, ready for forward runs and inversion.
struct Problem {
    ScenarioConfig config;
    std::shared_ptr<const TriMesh> mesh;
    std::shared_ptr<const WindField> wind;
    FemOperators ops;
    std::unique_ptr<TransportOperator> transport;
    SensorPlan plan;
    ObservationOperator observation;
    std::unique_ptr<SourceOperator> source_initial;
    std::unique_ptr<SourceOperator> source_continuous;

    InversionContext context() const {
        return InversionContext{transport.get(), &observation, source_initial.get(),
                                source_continuous.get()};
    }

    SparseMeasure truth_initial_measure() const {
        return SparseMeasure{SourceKind::Initial, config.truth_initial.atoms};
    }
    SparseMeasure truth_continuous_measure() const {
        return SparseMeasure{SourceKind::Continuous, config.truth_continuous.atoms};
    }
};

inline Problem build_problem(const ScenarioConfig& cfg) {
    cfg.validate();
    Problem p;
    p.config = cfg;
    p.mesh = build_mesh(cfg.mesh);
    p.wind = build_wind(*p.mesh, cfg.wind, cfg.mesh);
    p.ops = FemOperators::build(p.mesh, p.wind, cfg.transport.kappa);
    p.transport = std::make_unique<TransportOperator>(p.mesh, p.ops, cfg.transport);
    p.plan = build_sensor_plan(*p.mesh, cfg);
    p.observation = ObservationOperator(*p.mesh, p.plan, cfg.transport);
    const bool need_initial = cfg.initial_active() || !cfg.truth_initial.atoms.empty();
    const bool need_continuous = cfg.continuous_active() || !cfg.truth_continuous.atoms.empty();
    if (need_initial)
        p.source_initial = std::make_unique<SourceOperator>(
            p.mesh, cfg.truth_initial.shape.model(), p.ops.mass, p.ops.stiffness, p.ops.boundary);
    if (need_continuous)
        p.source_continuous = std::make_unique<SourceOperator>(
            p.mesh, cfg.truth_continuous.shape.model(), p.ops.mass, p.ops.stiffness,
            p.ops.boundary);
    return p;
}

struct MeasurementData {
    Vector noisy;   // d
    Vector clean;
    double sigma = 0.0;
    double snr = std::numeric_limits<double>::infinity();
    bool zero_signal_warning = false;
};

/// Synthetic data: clean = F(truth), sigma = level * max(clean), noise drawn
/// deterministically from the seed.
inline MeasurementData generate_measurements(const Problem& p) {
    const auto [mi, mc] = measure_to_fields(p.truth_initial_measure(), p.truth_continuous_measure(),
                                            p.source_initial.get(), p.source_continuous.get(),
                                            p.mesh->num_nodes());
    MeasurementData data;
    data.clean = p.transport->parameter_to_observable(p.observation, mi, mc);
    const double peak = data.clean.size() > 0 ? data.clean.maxCoeff() : 0.0;
    data.sigma = p.config.noise.level * std::max(peak, 0.0);
    if (p.config.noise.level > 0.0 && data.sigma <= 0.0) data.zero_signal_warning = true;
    data.noisy = data.clean;
    if (data.sigma > 0.0) {
        GaussianSampler normal(p.config.noise.seed);
        for (int i = 0; i < data.noisy.size(); ++i) data.noisy[i] += data.sigma * normal();
        data.snr = peak / data.sigma;
    }
    return data;
}

struct RecoveryMetric {
    Vec2 truth_x;
    double truth_intensity = 0.0;
    Vec2 recovered_x;
    double distance = std::numeric_limits<double>::infinity();
    double intensity_ratio = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<RecoveryMetric> recovery_metrics(const std::vector<Atom>& truth,
                                                    const SparseMeasure& recovered) {
    std::vector<RecoveryMetric> out;
    for (const auto& t : truth) {
        RecoveryMetric m;
        m.truth_x = t.x;
        m.truth_intensity = t.intensity;
        for (const auto& a : recovered.atoms) {
            const double d = distance(a.x, t.x);
            if (d < m.distance) {
                m.distance = d;
                m.recovered_x = a.x;
                m.intensity_ratio = t.intensity > 0.0 ? a.intensity / t.intensity
                                                      : std::numeric_limits<double>::quiet_NaN();
            }
        }
        out.push_back(m);
    }
    return out;
}

struct RunReport {
    std::string scenario_name;
    int sensor_count = 0;
    int observation_count = 0;
    double sigma = 0.0;
    double snr = 0.0;
    bool zero_signal_warning = false;
    std::string method;
    InversionResult inversion;           // pdap path
    std::optional<L2Result> l2;          // l2 path
    std::vector<DualMaximum> l2_maxima;  // point estimates read off the L2 field
    std::vector<RecoveryMetric> metrics_initial;
    std::vector<RecoveryMetric> metrics_continuous;
    double seconds_data = 0.0;
    double seconds_invert = 0.0;
};

inline int count_sensors(const SensorPlan& plan) {
    int max_id = -1;
    for (const auto& o : plan.observations) max_id = std::max(max_id, o.sensor_id);
    return max_id + 1;
}

/// generate -> invert -> post-process -> metrics.
inline RunReport run_scenario(const Problem& p, const MeasurementData& data) {
    using clock = std::chrono::steady_clock;
    RunReport rep;
    rep.scenario_name = p.config.name;
    rep.sensor_count = count_sensors(p.plan);
    rep.observation_count = p.plan.size();
    rep.sigma = data.sigma;
    rep.snr = data.snr;
    rep.zero_signal_warning = data.zero_signal_warning;
    rep.method = p.config.inversion.method;

    const auto t0 = clock::now();
    if (rep.method == "pdap") {
        PdapConfig pc = p.config.inversion.pdap;
        pc.use_initial = p.config.initial_active();
        pc.use_continuous = p.config.continuous_active();
        if (pc.sigma <= 0.0) pc.sigma = data.sigma > 0.0 ? data.sigma : 1.0;
        rep.inversion = pdap_run(p.context(), data.noisy, pc);
        rep.metrics_initial = recovery_metrics(p.config.truth_initial.atoms, rep.inversion.post_initial);
        rep.metrics_continuous =
            recovery_metrics(p.config.truth_continuous.atoms, rep.inversion.post_continuous);
    } else if (rep.method == "l2") {
        const auto& l2 = p.config.inversion.l2;
        L2Prior prior;
        prior.m_prior = Vector::Zero(p.mesh->num_nodes());
        prior.eta = l2.eta;
        prior.gamma = l2.gamma;
        prior.beta = l2.beta >= 0.0 ? l2.beta : EllipticShape::default_beta(l2.eta, l2.gamma);
        const double sigma = data.sigma > 0.0 ? data.sigma : 1.0;
        rep.l2 = l2_invert(*p.transport, p.observation, p.ops, data.noisy, prior, sigma,
                           l2.cg_tol, l2.cg_max);
        const int want = std::max<int>(1, static_cast<int>(p.config.truth_initial.atoms.size()));
        rep.l2_maxima = field_local_maxima(*p.mesh, rep.l2->m, want);
        SparseMeasure est{SourceKind::Initial, {}};
        for (const auto& m : rep.l2_maxima) est.atoms.push_back(Atom{m.x, m.value});
        rep.metrics_initial = recovery_metrics(p.config.truth_initial.atoms, est);
    } else {
        throw ScenarioError("unknown inversion method: " + rep.method);
    }
    rep.seconds_invert = std::chrono::duration<double>(clock::now() - t0).count();
    return rep;
}

inline RunReport run_scenario(const ScenarioConfig& cfg) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const Problem p = build_problem(cfg);
    const MeasurementData data = generate_measurements(p);
    const double seconds_data = std::chrono::duration<double>(clock::now() - t0).count();
    RunReport rep = run_scenario(p, data);
    rep.seconds_data = seconds_data;
    return rep;
}

struct ConvergenceRow {
    int nx = 0;
    double h = 0.0;
    double dt = 0.0;
    double error = 0.0;
    double observed_order = std::numeric_limits<double>::quiet_NaN();
};

/// Gaussian reference of a unit point release advected by a uniform wind:
/// G(x, t) = exp(-|x - x_s - v t|^2 / (4 t kappa)) / (4 pi t kappa).
inline double gaussian_reference(const Vec2& x, const Vec2& source, const Vec2& wind, double kappa,
                                 double t) {
    const Vec2 center = source + wind * t;
    return std::exp(-(x - center).squared_norm() / (4.0 * t * kappa)) / (4.0 * M_PI * t * kappa);
}

/// Refinement study of the forward march against the closed-form Gaussian:
/// Dirac release at x_s on the unit square, h and dt refined together,
/// max-norm error over a fixed probe grid at t = 1.
inline std::vector<ConvergenceRow> convergence_study(const std::vector<int>& resolutions,
                                                     double kappa = 1e-3,
                                                     const Vec2& wind_v = Vec2{0.1, 0.1},
                                                     const Vec2& source = Vec2{0.5, 0.5},
                                                     double t_final = 1.0,
                                                     int steps_per_cell = 1) {
    if (resolutions.size() < 2)
        throw ScenarioError("convergence study needs at least two refinements");
    std::vector<Vec2> probes;
    for (int j = 0; j <= 10; ++j)
        for (int i = 0; i <= 10; ++i)
            probes.push_back(Vec2{0.4 + 0.04 * i, 0.4 + 0.04 * j});

    std::vector<ConvergenceRow> rows;
    for (int nx : resolutions) {
        auto mesh = std::make_shared<const TriMesh>(
            build_rect_mesh(Rect{0.0, 0.0, 1.0, 1.0}, nx, nx));
        auto wind = std::make_shared<const WindField>(WindField::uniform(*mesh, wind_v.x, wind_v.y));
        TransportConfig tc;
        tc.kappa = kappa;
        tc.n_steps = nx * steps_per_cell;
        tc.dt = t_final / tc.n_steps;
        const FemOperators ops = FemOperators::build(mesh, wind, kappa);
        const TransportOperator transport(mesh, ops, tc);
        const Vector m0 = discrete_dirac(*mesh, ops.mass, source);
        const StateTrajectory traj = transport.forward(m0, Vector::Zero(mesh->num_nodes()));
        const Vector& uT = traj.states.back();
        double err = 0.0;
        for (const auto& x : probes) {
            const double uh = mesh->interpolate(mesh->locate(x), uT);
            err = std::max(err, std::abs(uh - gaussian_reference(x, source, wind_v, kappa, t_final)));
        }
        ConvergenceRow row;
        row.nx = nx;
        row.h = 1.0 / nx;
        row.dt = tc.dt;
        row.error = err;
        if (!rows.empty())
            row.observed_order = std::log2(rows.back().error / err) /
                                 std::log2(static_cast<double>(nx) / rows.back().nx);
        rows.push_back(row);
    }
    return rows;
}

struct ComparisonRow {
    std::string method;
    int sensors = 0;
    int parameters = 0;      // atoms for pdap, nodal dofs for l2
    long online_solves = 0;
    double max_distance = 0.0;
    bool certified = false;
};

/// Run PDAP and the L2 baseline on identical data and report the online PDE
/// solve counts next to the recovery quality.
inline std::pair<std::vector<ComparisonRow>, std::pair<RunReport, RunReport>> compare_methods(
    const ScenarioConfig& cfg) {
    ScenarioConfig pdap_cfg = cfg;
    pdap_cfg.inversion.method = "pdap";
    ScenarioConfig l2_cfg = cfg;
    l2_cfg.inversion.method = "l2";

    const Problem p = build_problem(pdap_cfg);
    const MeasurementData data = generate_measurements(p);
    RunReport rep_pdap = run_scenario(p, data);

    const Problem p2 = build_problem(l2_cfg);
    RunReport rep_l2 = run_scenario(p2, data);

    auto max_dist = [](const std::vector<RecoveryMetric>& ms) {
        double d = 0.0;
        for (const auto& m : ms) d = std::max(d, m.distance);
        return d;
    };
    std::vector<ComparisonRow> rows;
    rows.push_back(ComparisonRow{"pdap", count_sensors(p.plan),
                                 rep_pdap.inversion.post_initial.size() +
                                     rep_pdap.inversion.post_continuous.size(),
                                 rep_pdap.inversion.forward_solves + rep_pdap.inversion.adjoint_solves,
                                 max_dist(rep_pdap.metrics_initial), rep_pdap.inversion.certified});
    rows.push_back(ComparisonRow{"l2", count_sensors(p2.plan), p2.mesh->num_nodes(),
                                 rep_l2.l2 ? rep_l2.l2->pde_solves : 0,
                                 max_dist(rep_l2.metrics_initial),
                                 rep_l2.l2 ? rep_l2.l2->converged : false});
    return {rows, {std::move(rep_pdap), std::move(rep_l2)}};
}

} // namespace plume
