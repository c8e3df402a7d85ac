#pragma once

#include "handssm/mesh.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace handssm {

class SsmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ShapeModel {
    Eigen::VectorXd mean;      // 3M, xyz interleaved
    Eigen::MatrixXd modes;     // 3M x K, orthonormal columns
    Eigen::VectorXd variances; // K, descending
    double total_variance = 0.0;  // over all N - 1 components
    int samples = 0;
    /// Template connectivity, empty for bare point models.
    Triangles triangles;

    [[nodiscard]] Eigen::Index vertex_count() const { return mean.size() / 3; }
    [[nodiscard]] Eigen::Index mode_count() const { return modes.cols(); }
    [[nodiscard]] Eigen::VectorXd explained_ratio() const;
    [[nodiscard]] PointSet mean_shape() const;
};

struct SsmParams {
    /// Keep the fewest modes covering this fraction of the variance, capped at N - 1.
    double variance_coverage = 0.99;
    double gpa_tolerance = 1e-9;
    int gpa_max_iterations = 200;
};

/// Rotation and translation minimizing the squared distance from `src` to `dst`.
[[nodiscard]] Eigen::Isometry3d rigid_fit(const PointSet& src, const PointSet& dst);

/// Generalized Procrustes alignment without scaling; the result sits in the first shape's frame.
[[nodiscard]] std::vector<PointSet> procrustes_align(const std::vector<PointSet>& shapes, double tolerance = 1e-9,
                                                     int max_iterations = 200);

[[nodiscard]] ShapeModel build_ssm(const std::vector<PointSet>& shapes, const SsmParams& params = {});

/// mean + sum_k c_k sqrt(variance_k) mode_k, coefficients in standard deviations.
[[nodiscard]] PointSet sample_shape(const ShapeModel& model, const Eigen::VectorXd& coeffs);

/// Rigidly aligns `shape` to the mean, then least-squares coefficients in standard deviations.
[[nodiscard]] Eigen::VectorXd project_shape(const ShapeModel& model, const PointSet& shape);

/// model.json (metadata) plus model.bin (little-endian float32 mean and modes, then int32 triangles).
void write_model(const ShapeModel& model, const std::filesystem::path& dir);
[[nodiscard]] ShapeModel read_model(const std::filesystem::path& dir);

[[nodiscard]] Eigen::VectorXd flatten(const PointSet& p);
[[nodiscard]] PointSet unflatten(const Eigen::VectorXd& v);

}  // namespace handssm
