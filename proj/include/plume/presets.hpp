#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "plume/scenario.hpp"

namespace plume {

/// The two-building unit-square benchmark: gyre wind around the obstacles,
/// one radial-blob release at (0.35, 0.7), nine sensors sampling [1 s, 5 s]
/// at 10 Hz with 3% relative noise.
inline ScenarioConfig preset_baseline() {
    ScenarioConfig cfg;
    cfg.name = "baseline";
    cfg.mesh.bounds = Rect{0.0, 0.0, 1.0, 1.0};
    cfg.mesh.nx = cfg.mesh.ny = 64;
    cfg.mesh.holes = {Rect{0.25, 0.15, 0.5, 0.4}, Rect{0.6, 0.6, 0.75, 0.85}};
    cfg.wind.type = "double_gyre";
    cfg.wind.peak = 1.0;
    cfg.wind.mask_buildings = true;
    cfg.wind.mask_margin = 0.08;
    cfg.transport.kappa = 1e-3;
    cfg.transport.dt = 0.05;
    cfg.transport.n_steps = 100;
    cfg.truth_initial.shape = ShapeSpec{};  // rbf r=0.26 eps=0.01
    cfg.truth_initial.atoms = {Atom{Vec2{0.35, 0.7}, 1.0}};
    cfg.sensors.type = "grid";
    cfg.sensors.nx = cfg.sensors.ny = 3;
    cfg.sensors.margin = 0.1;
    cfg.sampling = SamplingSpec{1.0, 5.0, 10.0};
    cfg.noise = NoiseSpec{0.03, 7};
    cfg.inversion.method = "pdap";
    cfg.inversion.kinds = "initial";
    cfg.inversion.pdap.alpha = 1000.0;
    cfg.inversion.pdap.max_iter = 30;
    cfg.inversion.pdap.merge_radius = 3.0 / 64.0;
    return cfg;
}

/// Table-2-style degradations of the baseline.
inline ScenarioConfig preset_robustness(const std::string& variant) {
    ScenarioConfig cfg = preset_baseline();
    cfg.name = "robustness_" + variant;
    if (variant == "snr") {
        cfg.noise.level = 0.15;  // SNR ~ 6.7
    } else if (variant == "sensors3") {
        cfg.sensors.type = "list";
        cfg.sensors.positions = {Vec2{0.1, 0.5}, Vec2{0.5, 0.5}, Vec2{0.5, 0.9}};
    } else if (variant == "rate2") {
        cfg.sampling.rate_hz = 2.0;
    } else if (variant == "window") {
        cfg.sampling = SamplingSpec{2.0, 3.0, 10.0};
    } else if (variant == "moving") {
        cfg.sensors.type = "moving";
        cfg.sensors.coeffs = {Vec2{0.6, 0.5}, Vec2{-11.0 / 60.0, 83.0 / 300.0},
                              Vec2{1.0 / 60.0, -19.0 / 300.0}};
    } else {
        throw ScenarioError("unknown robustness variant: " + variant);
    }
    return cfg;
}

inline std::vector<std::string> robustness_variants() {
    return {"snr", "sensors3", "rate2", "window", "moving"};
}

/// Two releases 0.1 m apart at SNR 100; separating them is the point.
inline ScenarioConfig preset_overlap() {
    ScenarioConfig cfg = preset_baseline();
    cfg.name = "overlap";
    cfg.truth_initial.atoms = {Atom{Vec2{0.35, 0.7}, 1.0}, Atom{Vec2{0.45, 0.7}, 1.0}};
    cfg.noise.level = 0.01;  // SNR = 100
    cfg.inversion.pdap.alpha = 500.0;
    cfg.inversion.pdap.merge_radius = 3.0 / 64.0;
    return cfg;
}

/// Three radial-blob sources observed by a dense (>= 200 position) grid;
/// the scenario both methods run on for the cost comparison.
inline ScenarioConfig preset_comparison() {
    ScenarioConfig cfg = preset_baseline();
    cfg.name = "comparison";
    cfg.truth_initial.shape.r = 0.1;
    cfg.truth_initial.atoms = {Atom{Vec2{0.2, 0.3}, 1.0}, Atom{Vec2{0.7, 0.2}, 0.5},
                               Atom{Vec2{0.4, 0.8}, 0.8}};
    cfg.sensors.nx = cfg.sensors.ny = 16;
    cfg.sensors.margin = 0.05;
    cfg.inversion.pdap.alpha = 1000.0;
    cfg.inversion.l2 = L2Spec{160.0, 20.0, -1.0, 1e-10, 40};
    return cfg;
}

/// Synthetic multi-building plant site, 500 m square: eight instantaneous
/// point releases, ~150 sensors at 2 Hz over [2 s, 120 s].
inline ScenarioConfig preset_plant() {
    ScenarioConfig cfg;
    cfg.name = "plant";
    cfg.mesh.bounds = Rect{0.0, 0.0, 500.0, 500.0};
    cfg.mesh.nx = cfg.mesh.ny = 100;
    cfg.mesh.holes = {Rect{60, 60, 140, 120},   Rect{200, 40, 260, 110},
                      Rect{320, 80, 400, 140},  Rect{80, 220, 160, 300},
                      Rect{240, 200, 330, 280}, Rect{380, 240, 460, 330},
                      Rect{150, 370, 230, 430}, Rect{300, 380, 380, 440}};
    cfg.wind.type = "channel";
    cfg.wind.vx = 1.5;
    cfg.wind.vy = 0.5;
    cfg.wind.mask_buildings = true;
    cfg.wind.mask_margin = 15.0;
    cfg.transport.kappa = 2.0;
    cfg.transport.dt = 0.5;
    cfg.transport.n_steps = 240;  // horizon 120 s
    cfg.truth_initial.shape.type = "dirac";
    cfg.truth_initial.atoms = {Atom{Vec2{330.0, 15.0}, 1.0},  Atom{Vec2{236.1, 161.6}, 1.0},
                               Atom{Vec2{382.7, 193.4}, 1.0}, Atom{Vec2{181.9, 264.8}, 1.0},
                               Atom{Vec2{456.6, 107.0}, 1.0}, Atom{Vec2{75.1, 312.9}, 1.0},
                               Atom{Vec2{226.0, 358.3}, 1.0}, Atom{Vec2{374.2, 58.5}, 1.0}};
    cfg.sensors.type = "grid";
    cfg.sensors.nx = 14;
    cfg.sensors.ny = 13;
    cfg.sensors.margin = 0.04;
    cfg.sampling = SamplingSpec{2.0, 120.0, 2.0};
    cfg.noise = NoiseSpec{0.03, 11};
    cfg.inversion.method = "pdap";
    cfg.inversion.kinds = "initial";
    cfg.inversion.pdap.alpha = 50.0;
    cfg.inversion.pdap.max_iter = 60;
    cfg.inversion.pdap.merge_radius = 40.0;
    return cfg;
}

inline ScenarioConfig preset(const std::string& name) {
    if (name == "baseline") return preset_baseline();
    if (name == "overlap") return preset_overlap();
    if (name == "comparison") return preset_comparison();
    if (name == "plant") return preset_plant();
    if (name.rfind("robustness_", 0) == 0) return preset_robustness(name.substr(11));
    throw ScenarioError("unknown preset: " + name);
}

inline std::vector<std::string> preset_names() {
    std::vector<std::string> names{"baseline", "overlap", "comparison", "plant"};
    for (const auto& v : robustness_variants()) names.push_back("robustness_" + v);
    return names;
}

} // namespace plume
