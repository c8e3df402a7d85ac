#include "handssm/mesh.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace handssm {

void check_mesh(const TriMesh& mesh) {
    const auto n = mesh.vertex_count();
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
        const auto f = mesh.triangles.row(t);
        for (int k = 0; k < 3; ++k)
            if (f[k] < 0 || f[k] >= n) throw MeshError("triangle " + std::to_string(t) + " has out-of-range index");
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw MeshError("triangle " + std::to_string(t) + " is degenerate");
    }
    if (!mesh.vertices.allFinite()) throw MeshError("mesh has non-finite vertices");
}

double mesh_area(const TriMesh& mesh) {
    double a = 0.0;
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
        const Eigen::Vector3d p0 = mesh.vertices.row(mesh.triangles(t, 0));
        const Eigen::Vector3d p1 = mesh.vertices.row(mesh.triangles(t, 1));
        const Eigen::Vector3d p2 = mesh.vertices.row(mesh.triangles(t, 2));
        a += 0.5 * (p1 - p0).cross(p2 - p0).norm();
    }
    return a;
}

double mesh_volume(const TriMesh& mesh) {
    double v = 0.0;
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
        const Eigen::Vector3d p0 = mesh.vertices.row(mesh.triangles(t, 0));
        const Eigen::Vector3d p1 = mesh.vertices.row(mesh.triangles(t, 1));
        const Eigen::Vector3d p2 = mesh.vertices.row(mesh.triangles(t, 2));
        v += p0.dot(p1.cross(p2));
    }
    return v / 6.0;
}

namespace {

struct DisjointSets {
    std::vector<int> parent;
    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

MeshReport validate_mesh(const TriMesh& mesh) {
    check_mesh(mesh);
    MeshReport r;
    const auto nv = static_cast<std::size_t>(mesh.vertex_count());
    const auto nf = static_cast<std::size_t>(mesh.triangle_count());

    // (lo, hi, +1 if directed lo->hi else -1)
    std::vector<std::array<int, 3>> half;
    half.reserve(3 * nf);
    std::vector<uint8_t> used(nv, 0);
    DisjointSets sets(nv);
    for (std::size_t t = 0; t < nf; ++t)
        for (int k = 0; k < 3; ++k) {
            const int a = mesh.triangles(t, k), b = mesh.triangles(t, (k + 1) % 3);
            half.push_back({std::min(a, b), std::max(a, b), a < b ? 1 : -1});
            used[a] = 1;
            sets.unite(a, b);
        }
    std::sort(half.begin(), half.end());

    bool watertight = nf > 0, manifold = true;
    long edges = 0;
    for (std::size_t i = 0; i < half.size();) {
        std::size_t j = i;
        int dir_sum = 0;
        while (j < half.size() && half[j][0] == half[i][0] && half[j][1] == half[i][1]) dir_sum += half[j++][2];
        const std::size_t uses = j - i;
        ++edges;
        if (uses != 2) watertight = false;
        if (uses > 2 || (uses == 2 && dir_sum != 0)) manifold = false;
        i = j;
    }

    // Vertex manifoldness: the triangles around each vertex form one fan.
    if (manifold) {
        std::vector<std::vector<std::pair<int, int>>> star(nv);  // opposite edge per incident triangle
        for (std::size_t t = 0; t < nf; ++t)
            for (int k = 0; k < 3; ++k)
                star[mesh.triangles(t, k)].emplace_back(mesh.triangles(t, (k + 1) % 3), mesh.triangles(t, (k + 2) % 3));
        for (std::size_t v = 0; v < nv && manifold; ++v) {
            const auto& s = star[v];
            if (s.empty()) continue;
            std::vector<int> ids;
            for (const auto& [a, b] : s) {
                ids.push_back(a);
                ids.push_back(b);
            }
            std::sort(ids.begin(), ids.end());
            ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
            DisjointSets link(ids.size());
            const auto id = [&](int x) { return static_cast<int>(std::lower_bound(ids.begin(), ids.end(), x) - ids.begin()); };
            for (const auto& [a, b] : s) link.unite(id(a), id(b));
            for (std::size_t k = 1; k < ids.size(); ++k)
                if (link.find(static_cast<int>(k)) != link.find(0)) manifold = false;
        }
    }

    long referenced = 0;
    std::vector<uint8_t> root_seen(nv, 0);
    for (std::size_t v = 0; v < nv; ++v) {
        if (!used[v]) continue;
        ++referenced;
        const int root = sets.find(static_cast<int>(v));
        if (!root_seen[root]) {
            root_seen[root] = 1;
            ++r.components;
        }
    }
    r.watertight = watertight;
    r.manifold = manifold;
    r.euler_characteristic = referenced - edges + static_cast<long>(nf);
    r.area_mm2 = mesh_area(mesh);
    r.volume_mm3 = mesh_volume(mesh);
    return r;
}

PointSet vertex_normals(const TriMesh& mesh) {
    PointSet n = PointSet::Zero(mesh.vertex_count(), 3);
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
        const Eigen::Vector3d p0 = mesh.vertices.row(mesh.triangles(t, 0));
        const Eigen::Vector3d p1 = mesh.vertices.row(mesh.triangles(t, 1));
        const Eigen::Vector3d p2 = mesh.vertices.row(mesh.triangles(t, 2));
        const Eigen::RowVector3d fn = (p1 - p0).cross(p2 - p0).transpose();  // |fn| = 2 * area
        for (int k = 0; k < 3; ++k) n.row(mesh.triangles(t, k)) += fn;
    }
    for (Eigen::Index i = 0; i < n.rows(); ++i) {
        const double len = n.row(i).norm();
        if (len > 0) n.row(i) /= len;
    }
    return n;
}

std::vector<std::vector<int>> vertex_neighbours(const TriMesh& mesh) {
    std::vector<std::vector<int>> nb(static_cast<std::size_t>(mesh.vertex_count()));
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t)
        for (int k = 0; k < 3; ++k) {
            const int a = mesh.triangles(t, k), b = mesh.triangles(t, (k + 1) % 3);
            nb[a].push_back(b);
            nb[b].push_back(a);
        }
    for (auto& v : nb) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return nb;
}

std::string encode_obj(const TriMesh& mesh) {
    check_mesh(mesh);
    std::string out;
    out.reserve(static_cast<std::size_t>(mesh.vertex_count()) * 40 + static_cast<std::size_t>(mesh.triangle_count()) * 24);
    char buf[128];
    for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
        // Negative zero would make byte comparison of reruns depend on rounding noise.
        auto fix = [](double x) { return (x > -5e-7 && x < 5e-7) ? 0.0 : x; };
        const int len = std::snprintf(buf, sizeof buf, "v %.6f %.6f %.6f\n", fix(mesh.vertices(i, 0)),
                                      fix(mesh.vertices(i, 1)), fix(mesh.vertices(i, 2)));
        out.append(buf, static_cast<std::size_t>(len));
    }
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
        const int len = std::snprintf(buf, sizeof buf, "f %d %d %d\n", mesh.triangles(t, 0) + 1,
                                      mesh.triangles(t, 1) + 1, mesh.triangles(t, 2) + 1);
        out.append(buf, static_cast<std::size_t>(len));
    }
    return out;
}

TriMesh decode_obj(const std::string& text) {
    std::vector<Eigen::RowVector3d> verts;
    std::vector<Eigen::RowVector3i> faces;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Eigen::RowVector3d p;
            if (!(ls >> p[0] >> p[1] >> p[2])) throw MeshError("OBJ line " + std::to_string(lineno) + ": malformed vertex");
            verts.push_back(p);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                const std::string head = tok.substr(0, tok.find('/'));
                int value = 0;
                const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), value);
                if (ec != std::errc() || ptr != head.data() + head.size() || value == 0)
                    throw MeshError("OBJ line " + std::to_string(lineno) + ": malformed face index '" + tok + "'");
                idx.push_back(value > 0 ? value - 1 : static_cast<int>(verts.size()) + value);
            }
            if (idx.size() != 3)
                throw MeshError("OBJ line " + std::to_string(lineno) + ": non-triangle face with " +
                                std::to_string(idx.size()) + " indices");
            faces.emplace_back(idx[0], idx[1], idx[2]);
        } else if (tag == "vn" || tag == "vt" || tag == "o" || tag == "g" || tag == "s" || tag == "usemtl" ||
                   tag == "mtllib") {
            continue;
        } else {
            throw MeshError("OBJ line " + std::to_string(lineno) + ": unsupported record '" + tag + "'");
        }
    }
    TriMesh m;
    m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
    m.triangles.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) m.triangles.row(static_cast<Eigen::Index>(i)) = faces[i];
    check_mesh(m);
    return m;
}

TriMesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_obj(ss.str());
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path) {
    const std::string text = encode_obj(mesh);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MeshError("cannot write " + path.string());
    out << text;
    if (!out) throw MeshError("write failed for " + path.string());
}

TriMesh taubin_smooth(const TriMesh& mesh, double factor) {
    check_mesh(mesh);
    const int iterations = static_cast<int>(std::lround(20.0 * std::clamp(factor, 0.0, 1.0)));
    TriMesh out = mesh;
    if (iterations == 0) return out;

    const auto nb = vertex_neighbours(mesh);
    PointSet scratch(out.vertices.rows(), 3);
    const auto step = [&](double weight) {
        for (Eigen::Index i = 0; i < out.vertices.rows(); ++i) {
            const auto& n = nb[static_cast<std::size_t>(i)];
            if (n.empty()) {
                scratch.row(i) = out.vertices.row(i);
                continue;
            }
            Eigen::RowVector3d avg = Eigen::RowVector3d::Zero();
            for (int j : n) avg += out.vertices.row(j);
            avg /= static_cast<double>(n.size());
            scratch.row(i) = out.vertices.row(i) + weight * (avg - out.vertices.row(i));
        }
        out.vertices.swap(scratch);
    };
    for (int it = 0; it < iterations; ++it) {
        step(0.5);
        step(-0.53);
    }
    return out;
}

}  // namespace handssm
