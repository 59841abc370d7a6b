#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "plume/mesh.hpp"

namespace plume {

namespace detail {

/// Whitespace-separated token stream with '#' line comments.
class TokenReader {
public:
    explicit TokenReader(std::istream& in) : in_(in) {}

    std::string next() {
        std::string tok;
        while (in_ >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in_, rest);
                continue;
            }
            return tok;
        }
        throw MeshError("unexpected end of file");
    }

    double next_double() {
        const std::string tok = next();
        std::size_t pos = 0;
        const double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw MeshError("bad number: " + tok);
        return v;
    }

    int next_int() {
        const std::string tok = next();
        std::size_t pos = 0;
        const int v = std::stoi(tok, &pos);
        if (pos != tok.size()) throw MeshError("bad integer: " + tok);
        return v;
    }

private:
    std::istream& in_;
};

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

inline TriMesh read_trimesh(std::istream& in) {
    detail::TokenReader tr(in);
    if (tr.next() != "trimesh") throw MeshError("expected 'trimesh' header");
    if (tr.next_int() != 2) throw MeshError("unsupported mesh dimension");
    if (tr.next() != "nodes") throw MeshError("expected 'nodes'");
    const int nn = tr.next_int();
    if (nn < 3) throw MeshError("mesh needs at least 3 nodes");
    std::vector<Vec2> nodes(static_cast<std::size_t>(nn));
    for (auto& p : nodes) {
        p.x = tr.next_double();
        p.y = tr.next_double();
    }
    if (tr.next() != "triangles") throw MeshError("expected 'triangles'");
    const int nt = tr.next_int();
    std::vector<std::array<int, 3>> tris(static_cast<std::size_t>(nt));
    for (auto& t : tris)
        for (int& v : t) v = tr.next_int();

    TriMesh mesh(std::move(nodes), std::move(tris));

    // optional boundary section with explicit markers
    std::string tok;
    try {
        tok = [&] {
            detail::TokenReader probe(in);
            return probe.next();
        }();
    } catch (const MeshError&) {
        return mesh;
    }
    if (tok != "boundary") throw MeshError("unexpected token: " + tok);
    const int nb = tr.next_int();
    std::map<std::pair<int, int>, BoundaryMarker> given;
    for (int k = 0; k < nb; ++k) {
        const int a = tr.next_int();
        const int b = tr.next_int();
        const std::string m = tr.next();
        BoundaryMarker marker;
        if (m == "inflow") marker = BoundaryMarker::Inflow;
        else if (m == "outflow") marker = BoundaryMarker::Outflow;
        else if (m == "inner") marker = BoundaryMarker::Inner;
        else throw MeshError("unknown boundary marker: " + m);
        given[std::minmax(a, b)] = marker;
    }
    std::vector<BoundaryMarker> markers;
    markers.reserve(mesh.boundary_edges().size());
    for (const auto& e : mesh.boundary_edges()) {
        auto it = given.find(std::minmax(e.a, e.b));
        if (it == given.end())
            throw MeshError("boundary section missing edge " + std::to_string(e.a) + " " +
                            std::to_string(e.b));
        markers.push_back(it->second);
    }
    mesh.set_boundary_markers(markers);
    return mesh;
}

inline TriMesh read_trimesh_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot open mesh file: " + path);
    return read_trimesh(in);
}

inline void write_trimesh(std::ostream& out, const TriMesh& mesh, bool with_boundary = true) {
    out << "trimesh 2\n";
    out << "nodes " << mesh.num_nodes() << "\n";
    for (const auto& p : mesh.nodes())
        out << detail::fmt_double(p.x) << " " << detail::fmt_double(p.y) << "\n";
    out << "triangles " << mesh.num_triangles() << "\n";
    for (const auto& t : mesh.triangles())
        out << t[0] << " " << t[1] << " " << t[2] << "\n";
    if (with_boundary) {
        out << "boundary " << mesh.boundary_edges().size() << "\n";
        for (const auto& e : mesh.boundary_edges())
            out << e.a << " " << e.b << " " << to_string(e.marker) << "\n";
    }
}

inline void write_trimesh_file(const std::string& path, const TriMesh& mesh,
                               bool with_boundary = true) {
    std::ofstream out(path);
    if (!out) throw MeshError("cannot open for writing: " + path);
    write_trimesh(out, mesh, with_boundary);
}

} // namespace plume
