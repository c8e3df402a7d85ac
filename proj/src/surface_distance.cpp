#include "handssm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace handssm {

// Region-based closest point (Ericson, Real-Time Collision Detection, 5.1.5).
Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                          const Eigen::Vector3d& c) {
    const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) return a;
    const Eigen::Vector3d bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
    const Eigen::Vector3d cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

SurfaceDistance::SurfaceDistance(const TriMesh& mesh) : mesh_(&mesh) {
    check_mesh(mesh);
    if (mesh.triangle_count() == 0) throw MeshError("SurfaceDistance: mesh has no triangles");
    lo_ = mesh.vertices.colwise().minCoeff().transpose();
    const Eigen::Vector3d hi = mesh.vertices.colwise().maxCoeff().transpose();
    double edge = 0.0;
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t)
        edge += (mesh.vertices.row(mesh.triangles(t, 0)) - mesh.vertices.row(mesh.triangles(t, 1))).norm();
    cell_ = std::max(2.0 * edge / static_cast<double>(mesh.triangle_count()), 1e-6);
    const double longest = (hi - lo_).maxCoeff();
    cell_ = std::max(cell_, longest / 256.0);
    for (int a = 0; a < 3; ++a) dims_[a] = static_cast<int>(std::floor((hi[a] - lo_[a]) / cell_)) + 1;
    buckets_.resize(static_cast<std::size_t>(dims_.prod()));
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
        Eigen::Vector3d tlo = mesh.vertices.row(mesh.triangles(t, 0)).transpose(), thi = tlo;
        for (int k = 1; k < 3; ++k) {
            tlo = tlo.cwiseMin(mesh.vertices.row(mesh.triangles(t, k)).transpose());
            thi = thi.cwiseMax(mesh.vertices.row(mesh.triangles(t, k)).transpose());
        }
        Eigen::Vector3i c0, c1;
        for (int a = 0; a < 3; ++a) {
            c0[a] = std::clamp(static_cast<int>(std::floor((tlo[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
            c1[a] = std::clamp(static_cast<int>(std::floor((thi[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
        }
        for (int z = c0.z(); z <= c1.z(); ++z)
            for (int y = c0.y(); y <= c1.y(); ++y)
                for (int x = c0.x(); x <= c1.x(); ++x)
                    buckets_[static_cast<std::size_t>((z * dims_.y() + y) * dims_.x() + x)].push_back(static_cast<int>(t));
    }
}

double SurfaceDistance::operator()(const Eigen::Vector3d& p) const {
    const TriMesh& m = *mesh_;
    Eigen::Vector3i home;
    for (int a = 0; a < 3; ++a) home[a] = static_cast<int>(std::floor((p[a] - lo_[a]) / cell_));
    // Points off the grid start from the nearest boundary cell; ring r + 1 is still at least r cells away.
    Eigen::Vector3i clamped;
    for (int a = 0; a < 3; ++a) clamped[a] = std::clamp(home[a], 0, dims_[a] - 1);
    double best = std::numeric_limits<double>::infinity();
    const int max_ring = dims_.maxCoeff();
    for (int r = 0; r <= max_ring; ++r) {
        for (int z = clamped.z() - r; z <= clamped.z() + r; ++z)
            for (int y = clamped.y() - r; y <= clamped.y() + r; ++y)
                for (int x = clamped.x() - r; x <= clamped.x() + r; ++x) {
                    if (std::max({std::abs(x - clamped.x()), std::abs(y - clamped.y()), std::abs(z - clamped.z())}) != r) continue;
                    if (x < 0 || y < 0 || z < 0 || x >= dims_.x() || y >= dims_.y() || z >= dims_.z()) continue;
                    for (int t : buckets_[static_cast<std::size_t>((z * dims_.y() + y) * dims_.x() + x)]) {
                        const Eigen::Vector3d q = closest_point_on_triangle(
                            p, m.vertices.row(m.triangles(t, 0)).transpose(), m.vertices.row(m.triangles(t, 1)).transpose(),
                            m.vertices.row(m.triangles(t, 2)).transpose());
                        best = std::min(best, (p - q).norm());
                    }
                }
        if (best <= r * cell_) break;
    }
    return best;
}

double surface_rms_distance(const TriMesh& a, const TriMesh& b) {
    const SurfaceDistance da(a), db(b);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < a.vertex_count(); ++i) sum += std::pow(db(a.vertices.row(i).transpose()), 2);
    for (Eigen::Index i = 0; i < b.vertex_count(); ++i) sum += std::pow(da(b.vertices.row(i).transpose()), 2);
    return std::sqrt(sum / static_cast<double>(a.vertex_count() + b.vertex_count()));
}

}  // namespace handssm
