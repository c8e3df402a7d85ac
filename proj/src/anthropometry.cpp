#include "handssm/anthropometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <utility>

namespace handssm {

std::vector<std::vector<Eigen::Vector3d>> plane_section(const TriMesh& mesh, const Eigen::Vector3d& point,
                                                        const Eigen::Vector3d& normal) {
    const Eigen::Vector3d n = normal.normalized();
    const Eigen::Index nv = mesh.vertex_count();
    Eigen::VectorXd s(nv);
    // Vertices exactly on the plane count as above it, so every crossing is a proper edge crossing.
    for (Eigen::Index i = 0; i < nv; ++i) s[i] = (mesh.vertices.row(i).transpose() - point).dot(n);
    const auto above = [&](int v) { return s[v] >= 0.0; };

    using Edge = std::pair<int, int>;
    const auto edge = [](int a, int b) { return a < b ? Edge{a, b} : Edge{b, a}; };
    std::map<Edge, std::vector<Edge>> links;  // crossing edge -> neighbouring crossing edges
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
        std::vector<Edge> cut;
        for (int k = 0; k < 3; ++k) {
            const int a = mesh.triangles(t, k), b = mesh.triangles(t, (k + 1) % 3);
            if (above(a) != above(b)) cut.push_back(edge(a, b));
        }
        if (cut.size() != 2) continue;
        links[cut[0]].push_back(cut[1]);
        links[cut[1]].push_back(cut[0]);
    }
    if (links.empty()) throw MeasurementError("cutting plane misses the mesh");

    const auto crossing = [&](const Edge& e) -> Eigen::Vector3d {
        const double t = s[e.first] / (s[e.first] - s[e.second]);
        return mesh.vertices.row(e.first).transpose() +
               t * (mesh.vertices.row(e.second) - mesh.vertices.row(e.first)).transpose();
    };

    std::vector<std::vector<Eigen::Vector3d>> loops;
    std::map<Edge, bool> used;
    for (const auto& [start, nb] : links) {
        if (used[start]) continue;
        if (nb.size() != 2) throw MeasurementError("open or branching cross-section");
        std::vector<Eigen::Vector3d> loop;
        Edge prev = start, cur = start;
        do {
            used[cur] = true;
            loop.push_back(crossing(cur));
            const auto& adj = links.at(cur);
            if (adj.size() != 2) throw MeasurementError("open or branching cross-section");
            const Edge next = adj[0] == prev ? adj[1] : adj[0];
            prev = cur;
            cur = next;
        } while (cur != start);
        loops.push_back(std::move(loop));
    }
    return loops;
}

double loop_perimeter(const std::vector<Eigen::Vector3d>& loop) {
    double p = 0.0;
    for (std::size_t i = 0; i < loop.size(); ++i) p += (loop[(i + 1) % loop.size()] - loop[i]).norm();
    return p;
}

double hull_perimeter(const std::vector<Eigen::Vector3d>& loop, const Eigen::Vector3d& normal) {
    const Eigen::Vector3d n = normal.normalized();
    const Eigen::Vector3d u = n.unitOrthogonal(), v = n.cross(u);
    std::vector<Eigen::Vector2d> pts;
    for (const auto& p : loop) pts.emplace_back(p.dot(u), p.dot(v));
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
    if (pts.size() < 3) return 0.0;
    // Monotone chain.
    const auto turn = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Eigen::Vector2d> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && turn(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && turn(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    double len = 0.0;
    for (std::size_t i = 0; i < hull.size(); ++i) len += (hull[(i + 1) % hull.size()] - hull[i]).norm();
    return len;
}

namespace {

const std::vector<Eigen::Vector3d>& largest_loop(const std::vector<std::vector<Eigen::Vector3d>>& loops) {
    return *std::max_element(loops.begin(), loops.end(), [](const auto& a, const auto& b) {
        return loop_perimeter(a) < loop_perimeter(b);
    });
}

}  // namespace

MeasurementSet measure_hand(const TriMesh& mesh, const LandmarkSet& lm, PerimeterMode mode) {
    const Eigen::Vector3d wrist = lm.at("wrist"), index = lm.at("index_mcp"), little = lm.at("little_mcp");
    Eigen::Vector3d normal = (index - wrist).cross(little - wrist);
    if (normal.norm() == 0.0) throw MeasurementError("degenerate palm plane");
    normal.normalize();
    Eigen::Vector3d axis = lm.at("middle_mcp") - wrist;
    axis -= axis.dot(normal) * normal;
    axis.normalize();
    const Eigen::Vector3d across = axis.cross(normal);

    MeasurementSet m;
    m.hand_length = (lm.at("middle_tip") - wrist).norm();
    m.palm_length = (lm.at("middle_mcp") - wrist).norm();

    const Eigen::Vector3d heads = 0.5 * (index + little);
    const auto loops = plane_section(mesh, heads, axis);
    const auto& section = largest_loop(loops);
    const auto perimeter = [&](const std::vector<Eigen::Vector3d>& loop, const Eigen::Vector3d& n) {
        return mode == PerimeterMode::Hull ? hull_perimeter(loop, n) : loop_perimeter(loop);
    };
    m.hand_circumference = perimeter(section, axis);
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& p : section) {
        lo = std::min(lo, p.dot(across));
        hi = std::max(hi, p.dot(across));
    }
    m.hand_breadth = hi - lo;

    const Eigen::Vector3d forearm_axis = lm.has("forearm_proximal") ? Eigen::Vector3d(wrist - lm.at("forearm_proximal")) : axis;
    const auto wrist_loops = plane_section(mesh, wrist, forearm_axis);
    m.wrist_circumference = perimeter(largest_loop(wrist_loops), forearm_axis);
    return m;
}

std::vector<AnsurRow> ansur_report(const MeasurementSet& model_means) {
    const auto v = model_means.values();
    std::vector<AnsurRow> rows;
    for (std::size_t i = 0; i < 5; ++i) {
        AnsurRow r;
        r.name = kMeasurementNames[i];
        r.model_mean = v[i];
        r.ansur_mean = AnsurReference::mean[i];
        r.ansur_sd = AnsurReference::sd[i];
        r.deviation = v[i] - AnsurReference::mean[i];
        r.flagged = std::abs(r.deviation) > AnsurReference::flag_threshold_mm;
        rows.push_back(r);
    }
    return rows;
}

std::string format_ansur_report(const std::vector<AnsurRow>& rows) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %10s %16s %10s  %s\n", "measurement", "model", "ANSUR II", "deviation", "flag");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-20s %10.1f %9.1f ± %4.1f %+10.1f  %s\n", r.name.c_str(), r.model_mean, r.ansur_mean,
                      r.ansur_sd, r.deviation, r.flagged ? "FLAG" : "");
        out += line;
    }
    std::snprintf(line, sizeof line, "ANSUR II N = %d; flag when |deviation| > %.1f mm\n", AnsurReference::sample_size,
                  AnsurReference::flag_threshold_mm);
    out += line;
    return out;
}

}  // namespace handssm
