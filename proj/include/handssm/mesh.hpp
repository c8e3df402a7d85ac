#pragma once

#include "handssm/grid.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace handssm {

/// N x 3 point set, one point per row, millimeters.
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Triangles = Eigen::Matrix<int, Eigen::Dynamic, 3>;

/// Indexed triangle surface; winding is counter-clockwise seen from outside.
struct TriMesh {
    PointSet vertices;
    Triangles triangles;

    [[nodiscard]] Eigen::Index vertex_count() const { return vertices.rows(); }
    [[nodiscard]] Eigen::Index triangle_count() const { return triangles.rows(); }
};

struct MeshReport {
    bool watertight = false;
    bool manifold = false;
    int components = 0;
    long euler_characteristic = 0;
    double area_mm2 = 0.0;
    double volume_mm3 = 0.0;
};

class MeshError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Throws MeshError on out-of-range or repeated indices.
void check_mesh(const TriMesh& mesh);

[[nodiscard]] MeshReport validate_mesh(const TriMesh& mesh);

[[nodiscard]] double mesh_area(const TriMesh& mesh);
[[nodiscard]] double mesh_volume(const TriMesh& mesh);

/// Area-weighted vertex normals, unit length (zero for isolated vertices).
[[nodiscard]] PointSet vertex_normals(const TriMesh& mesh);

/// Unique undirected vertex adjacency, sorted per vertex.
[[nodiscard]] std::vector<std::vector<int>> vertex_neighbours(const TriMesh& mesh);

// OBJ ASCII with v/f records only; 1-based indices, coordinates at 6 decimals.
[[nodiscard]] TriMesh read_obj(const std::filesystem::path& path);
void write_obj(const TriMesh& mesh, const std::filesystem::path& path);
[[nodiscard]] std::string encode_obj(const TriMesh& mesh);
[[nodiscard]] TriMesh decode_obj(const std::string& text);

/// Marching cubes over the {0,1} field of `mask`, padded by one false layer.
[[nodiscard]] TriMesh extract_isosurface(const BinaryMask& mask, double iso = 0.5);

/// Taubin lambda|mu smoothing (0.5, -0.53); round(20 * factor) iterations.
[[nodiscard]] TriMesh taubin_smooth(const TriMesh& mesh, double factor);

[[nodiscard]] Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                                       const Eigen::Vector3d& b, const Eigen::Vector3d& c);

/// Unsigned point-to-surface distance over a uniform grid of triangle buckets.
class SurfaceDistance {
public:
    explicit SurfaceDistance(const TriMesh& mesh);
    [[nodiscard]] double operator()(const Eigen::Vector3d& p) const;

private:
    const TriMesh* mesh_;
    Eigen::Vector3d lo_;
    double cell_ = 1.0;
    Eigen::Vector3i dims_;
    std::vector<std::vector<int>> buckets_;
};

/// RMS of vertex-to-surface distances taken both ways.
[[nodiscard]] double surface_rms_distance(const TriMesh& a, const TriMesh& b);

}  // namespace handssm
