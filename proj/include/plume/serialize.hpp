#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "plume/inversion.hpp"
#include "plume/scenario.hpp"

namespace plume {

using Json = nlohmann::ordered_json;

inline Json to_json(const SparseMeasure& mu) {
    Json atoms = Json::array();
    for (const auto& a : mu.atoms)
        atoms.push_back({{"x", a.x.x}, {"y", a.x.y}, {"intensity", a.intensity}});
    return Json{{"kind", to_string(mu.kind)}, {"atoms", atoms}};
}

inline SparseMeasure measure_from_json(const Json& j) {
    SparseMeasure mu;
    const std::string kind = j.value("kind", "initial");
    if (kind == "initial") mu.kind = SourceKind::Initial;
    else if (kind == "continuous") mu.kind = SourceKind::Continuous;
    else throw ScenarioError("unknown measure kind: " + kind);
    for (const auto& a : j.value("atoms", Json::array()))
        mu.atoms.push_back(Atom{Vec2{a.at("x").get<double>(), a.at("y").get<double>()},
                                a.at("intensity").get<double>()});
    return mu;
}

namespace detail {

inline Rect rect_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 4) throw ScenarioError("rectangle must be [x0,y0,x1,y1]");
    return Rect{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline Json rect_to_json(const Rect& r) { return Json::array({r.x0, r.y0, r.x1, r.y1}); }

inline std::vector<Atom> atoms_from_json(const Json& j) {
    std::vector<Atom> atoms;
    for (const auto& a : j)
        atoms.push_back(Atom{Vec2{a.at("x").get<double>(), a.at("y").get<double>()},
                             a.value("intensity", 1.0)});
    return atoms;
}

inline Json atoms_to_json(const std::vector<Atom>& atoms) {
    Json out = Json::array();
    for (const auto& a : atoms)
        out.push_back({{"x", a.x.x}, {"y", a.x.y}, {"intensity", a.intensity}});
    return out;
}

inline ShapeSpec shape_from_json(const Json& j) {
    ShapeSpec s;
    s.type = j.value("type", s.type);
    s.r = j.value("r", s.r);
    s.eps = j.value("eps", s.eps);
    s.paper_sign = j.value("paper_sign", s.paper_sign);
    s.eta = j.value("eta", s.eta);
    s.gamma = j.value("gamma", s.gamma);
    s.beta = j.value("beta", s.beta);
    return s;
}

inline Json shape_to_json(const ShapeSpec& s) {
    Json j{{"type", s.type}};
    if (s.type == "rbf") {
        j["r"] = s.r;
        j["eps"] = s.eps;
        if (s.paper_sign) j["paper_sign"] = true;
    } else if (s.type == "elliptic") {
        j["eta"] = s.eta;
        j["gamma"] = s.gamma;
        j["beta"] = s.beta;
    }
    return j;
}

} // namespace detail

inline ScenarioConfig config_from_json(const Json& j) {
    ScenarioConfig cfg;
    cfg.name = j.value("name", cfg.name);
    if (j.contains("mesh")) {
        const Json& m = j.at("mesh");
        cfg.mesh.path = m.value("path", std::string{});
        if (m.contains("bounds")) cfg.mesh.bounds = detail::rect_from_json(m.at("bounds"));
        cfg.mesh.nx = m.value("nx", cfg.mesh.nx);
        cfg.mesh.ny = m.value("ny", cfg.mesh.ny);
        for (const auto& h : m.value("holes", Json::array()))
            cfg.mesh.holes.push_back(detail::rect_from_json(h));
    }
    if (j.contains("wind")) {
        const Json& w = j.at("wind");
        cfg.wind.type = w.value("type", cfg.wind.type);
        cfg.wind.vx = w.value("vx", cfg.wind.vx);
        cfg.wind.vy = w.value("vy", cfg.wind.vy);
        cfg.wind.cx = w.value("cx", cfg.wind.cx);
        cfg.wind.cy = w.value("cy", cfg.wind.cy);
        cfg.wind.strength = w.value("strength", cfg.wind.strength);
        cfg.wind.width = w.value("width", cfg.wind.width);
        cfg.wind.peak = w.value("peak", cfg.wind.peak);
        cfg.wind.mask_buildings = w.value("mask_buildings", cfg.wind.mask_buildings);
        cfg.wind.mask_margin = w.value("mask_margin", cfg.wind.mask_margin);
        cfg.wind.path = w.value("path", cfg.wind.path);
    }
    if (j.contains("transport")) {
        const Json& t = j.at("transport");
        cfg.transport.kappa = t.value("kappa", cfg.transport.kappa);
        cfg.transport.dt = t.value("dt", cfg.transport.dt);
        cfg.transport.n_steps = t.value("n_steps", cfg.transport.n_steps);
        cfg.transport.stabilization = t.value("stabilization", cfg.transport.stabilization);
    }
    if (j.contains("truth")) {
        const Json& t = j.at("truth");
        if (t.contains("initial")) {
            cfg.truth_initial.shape = detail::shape_from_json(t.at("initial").value("shape", Json::object()));
            cfg.truth_initial.atoms = detail::atoms_from_json(t.at("initial").value("atoms", Json::array()));
        }
        if (t.contains("continuous")) {
            cfg.truth_continuous.shape =
                detail::shape_from_json(t.at("continuous").value("shape", Json::object()));
            cfg.truth_continuous.atoms =
                detail::atoms_from_json(t.at("continuous").value("atoms", Json::array()));
        }
    }
    if (j.contains("sensors")) {
        const Json& s = j.at("sensors");
        cfg.sensors.type = s.value("type", cfg.sensors.type);
        cfg.sensors.nx = s.value("nx", cfg.sensors.nx);
        cfg.sensors.ny = s.value("ny", cfg.sensors.ny);
        cfg.sensors.margin = s.value("margin", cfg.sensors.margin);
        for (const auto& p : s.value("positions", Json::array()))
            cfg.sensors.positions.push_back(Vec2{p[0].get<double>(), p[1].get<double>()});
        if (s.contains("coeffs")) {
            const Json& c = s.at("coeffs");
            for (int k = 0; k < 3 && k < static_cast<int>(c.size()); ++k)
                cfg.sensors.coeffs[static_cast<std::size_t>(k)] =
                    Vec2{c[static_cast<std::size_t>(k)][0].get<double>(),
                         c[static_cast<std::size_t>(k)][1].get<double>()};
        }
    }
    if (j.contains("sampling")) {
        const Json& s = j.at("sampling");
        cfg.sampling.t_start = s.value("t_start", cfg.sampling.t_start);
        cfg.sampling.t_end = s.value("t_end", cfg.sampling.t_end);
        cfg.sampling.rate_hz = s.value("rate_hz", cfg.sampling.rate_hz);
    }
    if (j.contains("noise")) {
        const Json& n = j.at("noise");
        cfg.noise.level = n.value("level", cfg.noise.level);
        cfg.noise.seed = n.value("seed", cfg.noise.seed);
    }
    if (j.contains("inversion")) {
        const Json& i = j.at("inversion");
        cfg.inversion.method = i.value("method", cfg.inversion.method);
        cfg.inversion.kinds = i.value("kinds", cfg.inversion.kinds);
        cfg.inversion.pdap.alpha = i.value("alpha", cfg.inversion.pdap.alpha);
        cfg.inversion.pdap.sigma = i.value("sigma", cfg.inversion.pdap.sigma);
        cfg.inversion.pdap.tol_abs = i.value("tol_abs", cfg.inversion.pdap.tol_abs);
        cfg.inversion.pdap.max_iter = i.value("max_iter", cfg.inversion.pdap.max_iter);
        cfg.inversion.pdap.prune_rel = i.value("prune_rel", cfg.inversion.pdap.prune_rel);
        cfg.inversion.pdap.merge_radius = i.value("merge_radius", cfg.inversion.pdap.merge_radius);
        cfg.inversion.l2.eta = i.value("eta", cfg.inversion.l2.eta);
        cfg.inversion.l2.gamma = i.value("gamma", cfg.inversion.l2.gamma);
        cfg.inversion.l2.beta = i.value("beta", cfg.inversion.l2.beta);
        cfg.inversion.l2.cg_tol = i.value("cg_tol", cfg.inversion.l2.cg_tol);
        cfg.inversion.l2.cg_max = i.value("cg_max", cfg.inversion.l2.cg_max);
    }
    return cfg;
}

inline Json config_to_json(const ScenarioConfig& cfg) {
    Json j;
    j["name"] = cfg.name;
    Json mesh{{"nx", cfg.mesh.nx}, {"ny", cfg.mesh.ny},
              {"bounds", detail::rect_to_json(cfg.mesh.bounds)}};
    if (!cfg.mesh.path.empty()) mesh["path"] = cfg.mesh.path;
    Json holes = Json::array();
    for (const auto& h : cfg.mesh.holes) holes.push_back(detail::rect_to_json(h));
    mesh["holes"] = holes;
    j["mesh"] = mesh;
    Json wind{{"type", cfg.wind.type}};
    if (cfg.wind.type == "uniform" || cfg.wind.type == "channel") {
        wind["vx"] = cfg.wind.vx;
        wind["vy"] = cfg.wind.vy;
    } else if (cfg.wind.type == "vortex") {
        wind["cx"] = cfg.wind.cx;
        wind["cy"] = cfg.wind.cy;
        wind["strength"] = cfg.wind.strength;
        wind["width"] = cfg.wind.width;
    } else if (cfg.wind.type == "double_gyre") {
        wind["peak"] = cfg.wind.peak;
    } else if (cfg.wind.type == "file") {
        wind["path"] = cfg.wind.path;
    }
    if (cfg.wind.mask_buildings) {
        wind["mask_buildings"] = true;
        wind["mask_margin"] = cfg.wind.mask_margin;
    }
    j["wind"] = wind;
    j["transport"] = Json{{"kappa", cfg.transport.kappa},
                          {"dt", cfg.transport.dt},
                          {"n_steps", cfg.transport.n_steps},
                          {"stabilization", cfg.transport.stabilization}};
    j["truth"] = Json{{"initial", Json{{"shape", detail::shape_to_json(cfg.truth_initial.shape)},
                                       {"atoms", detail::atoms_to_json(cfg.truth_initial.atoms)}}},
                      {"continuous",
                       Json{{"shape", detail::shape_to_json(cfg.truth_continuous.shape)},
                            {"atoms", detail::atoms_to_json(cfg.truth_continuous.atoms)}}}};
    Json sensors{{"type", cfg.sensors.type}};
    if (cfg.sensors.type == "grid") {
        sensors["nx"] = cfg.sensors.nx;
        sensors["ny"] = cfg.sensors.ny;
        sensors["margin"] = cfg.sensors.margin;
    } else if (cfg.sensors.type == "list") {
        Json ps = Json::array();
        for (const auto& p : cfg.sensors.positions) ps.push_back(Json::array({p.x, p.y}));
        sensors["positions"] = ps;
    } else if (cfg.sensors.type == "moving") {
        Json cs = Json::array();
        for (const auto& c : cfg.sensors.coeffs) cs.push_back(Json::array({c.x, c.y}));
        sensors["coeffs"] = cs;
    }
    j["sensors"] = sensors;
    j["sampling"] = Json{{"t_start", cfg.sampling.t_start},
                         {"t_end", cfg.sampling.t_end},
                         {"rate_hz", cfg.sampling.rate_hz}};
    j["noise"] = Json{{"level", cfg.noise.level}, {"seed", cfg.noise.seed}};
    Json inv{{"method", cfg.inversion.method}, {"kinds", cfg.inversion.kinds}};
    if (cfg.inversion.method == "pdap") {
        inv["alpha"] = cfg.inversion.pdap.alpha;
        inv["sigma"] = cfg.inversion.pdap.sigma;
        inv["tol_abs"] = cfg.inversion.pdap.tol_abs;
        inv["max_iter"] = cfg.inversion.pdap.max_iter;
        inv["prune_rel"] = cfg.inversion.pdap.prune_rel;
        inv["merge_radius"] = cfg.inversion.pdap.merge_radius;
    } else {
        inv["eta"] = cfg.inversion.l2.eta;
        inv["gamma"] = cfg.inversion.l2.gamma;
        inv["beta"] = cfg.inversion.l2.beta;
        inv["cg_tol"] = cfg.inversion.l2.cg_tol;
        inv["cg_max"] = cfg.inversion.l2.cg_max;
    }
    j["inversion"] = inv;
    return j;
}

inline Json certificate_to_json(const CertificateReport& c) {
    return Json{{"alpha", c.alpha},
                {"tol", c.tol},
                {"max_phi_initial", c.max_phi_initial},
                {"max_phi_continuous", c.max_phi_continuous},
                {"global_slack", c.global_slack},
                {"atom_slack_initial", c.atom_slack_initial},
                {"atom_slack_continuous", c.atom_slack_continuous},
                {"certified", c.certified}};
}

inline Json inversion_to_json(const InversionResult& r) {
    Json log = Json::array();
    for (const auto& e : r.log)
        log.push_back(Json{{"objective", e.objective},
                           {"max_phi_initial", e.max_phi_initial},
                           {"max_phi_continuous", e.max_phi_continuous},
                           {"atoms_initial", e.atoms_initial},
                           {"atoms_continuous", e.atoms_continuous}});
    return Json{{"mu_initial", to_json(r.mu_initial)},
                {"mu_continuous", to_json(r.mu_continuous)},
                {"post_initial", to_json(r.post_initial)},
                {"post_continuous", to_json(r.post_continuous)},
                {"iterations", r.iterations},
                {"certified", r.certified},
                {"stop_reason", r.stop_reason},
                {"forward_solves", r.forward_solves},
                {"adjoint_solves", r.adjoint_solves},
                {"elliptic_solves", r.elliptic_solves},
                {"certificate", certificate_to_json(r.certificate)},
                {"log", log}};
}

inline Json metrics_to_json(const std::vector<RecoveryMetric>& ms) {
    Json out = Json::array();
    for (const auto& m : ms) {
        Json row{{"truth_x", m.truth_x.x},
                 {"truth_y", m.truth_x.y},
                 {"truth_intensity", m.truth_intensity},
                 {"distance", m.distance}};
        if (std::isfinite(m.distance)) {
            row["recovered_x"] = m.recovered_x.x;
            row["recovered_y"] = m.recovered_x.y;
        }
        if (std::isfinite(m.intensity_ratio)) row["intensity_ratio"] = m.intensity_ratio;
        out.push_back(row);
    }
    return out;
}

/// Full run report. Wall-clock timing lives under "timing" only, so reports
/// are comparable bit-for-bit after stripping that one key.
inline Json report_to_json(const RunReport& rep, bool include_timing = true) {
    Json j;
    j["schema"] = 1;
    j["scenario"] = rep.scenario_name;
    j["method"] = rep.method;
    j["sensors"] = rep.sensor_count;
    j["observations"] = rep.observation_count;
    j["sigma"] = rep.sigma;
    j["snr"] = rep.snr;
    if (rep.zero_signal_warning) j["zero_signal_warning"] = true;
    if (rep.method == "pdap") {
        j["inversion"] = inversion_to_json(rep.inversion);
    } else if (rep.l2) {
        Json maxima = Json::array();
        for (const auto& m : rep.l2_maxima)
            maxima.push_back(Json{{"x", m.x.x}, {"y", m.x.y}, {"value", m.value}});
        j["inversion"] = Json{{"cg_iterations", rep.l2->cg_iterations},
                              {"pde_solves", rep.l2->pde_solves},
                              {"converged", rep.l2->converged},
                              {"residual_history", rep.l2->residual_history},
                              {"maxima", maxima}};
    }
    j["metrics_initial"] = metrics_to_json(rep.metrics_initial);
    j["metrics_continuous"] = metrics_to_json(rep.metrics_continuous);
    if (include_timing)
        j["timing"] = Json{{"seconds_data", rep.seconds_data},
                           {"seconds_invert", rep.seconds_invert}};
    return j;
}

inline void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw ScenarioError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open: " + path);
    Json j;
    in >> j;
    return j;
}

} // namespace plume
