#pragma once

#include "handssm/grid.hpp"
#include "handssm/mesh.hpp"
#include "handssm/skeleton.hpp"

#include <Eigen/Core>

#include <array>
#include <stdexcept>
#include <utility>
#include <vector>

namespace handssm {

class SkinningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kMaxInfluences = 4;

struct SkinBinding {
    std::vector<int> dominant;
    /// Per vertex: (bone, weight) pairs, at most four, largest first.
    std::vector<std::vector<std::pair<int, double>>> weights;

    [[nodiscard]] std::size_t vertex_count() const { return dominant.size(); }
};

struct BindParams {
    int smoothing_iterations = 10;
    /// Rank bones by geodesic distance through `interior` instead of straight-line distance.
    bool geodesic = false;
    int threads = 1;
};

/// `interior` is only read when params.geodesic is set; it must cover the mesh.
[[nodiscard]] SkinBinding bind_weights(const TriMesh& mesh, const Skeleton& skel, const BindParams& params = {},
                                       const BinaryMask* interior = nullptr);

/// Hermite RBF with kernel |r|^3 and a linear polynomial, reparameterized so that the fitted
/// surface sits at 0.5, values rise toward 1 inside and fall to 0 at `support` outside.
struct BoneField {
    int bone = -1;
    bool fallback = false;  // capsule field around the bone segment
    Eigen::Matrix<double, Eigen::Dynamic, 3> centers;
    Eigen::VectorXd alpha;
    Eigen::Matrix<double, Eigen::Dynamic, 3> beta;
    Eigen::Vector3d linear = Eigen::Vector3d::Zero();
    double constant = 0.0;
    double support = 1.0;
    // Fallback capsule.
    Eigen::Vector3d seg_a = Eigen::Vector3d::Zero(), seg_b = Eigen::Vector3d::Zero();
    double capsule_radius = 0.0;
    // Beyond this distance from `bound_center` the field is taken as 0.
    Eigen::Vector3d bound_center = Eigen::Vector3d::Zero();
    double bound_radius = 0.0;

    /// Signed pseudo-distance, negative inside; gradient optional.
    [[nodiscard]] double distance(const Eigen::Vector3d& x, Eigen::Vector3d* grad = nullptr) const;
    /// Reparameterized value in [0, 1].
    [[nodiscard]] double value(const Eigen::Vector3d& x, Eigen::Vector3d* grad = nullptr) const;
};

struct FieldParams {
    int max_centers = 50;
    /// Support radius as a multiple of the region's largest vertex-to-bone distance.
    double support_scale = 1.0;
    int threads = 1;
};

[[nodiscard]] std::vector<BoneField> fit_bone_fields(const TriMesh& mesh, const Skeleton& skel, const SkinBinding& binding,
                                                     const FieldParams& params = {});

/// Smooth union (1/k) log(1 + sum(exp(k f_i) - 1)) of field values f_i.
inline constexpr double kBlendSharpness = 8.0;

struct ComposedField {
    const std::vector<BoneField>* fields = nullptr;
    std::vector<Eigen::Isometry3d> transforms;  // per field, rest -> posed; empty for rest

    [[nodiscard]] double operator()(const Eigen::Vector3d& x, Eigen::Vector3d* grad = nullptr) const;
};

struct NormalizeParams {
    int max_iterations = 10;
    double step_clamp = 1.0;       // mm
    double iso_tolerance = 1e-3;
    int threads = 1;
};

struct NormalizeDiagnostics {
    std::size_t vertices = 0;
    std::size_t converged = 0;
    std::size_t non_convergent = 0;
    double iso_recovery_rate = 1.0;
    double mean_iterations = 0.0;
    double max_residual = 0.0;
    int fallback_fields = 0;
};

struct NormalizeResult {
    TriMesh mesh;
    NormalizeDiagnostics diagnostics;
};

/// Linear blend skinning under FK transforms, then per-vertex iso-value recovery along the
/// gradient of the posed composed field (reduced implicit skinning, no contact handling).
[[nodiscard]] NormalizeResult pose_normalize(const TriMesh& mesh, const Skeleton& skel, const SkinBinding& binding,
                                             const std::vector<BoneField>& fields, const Pose& pose,
                                             const NormalizeParams& params = {});

/// Linear blend skinning only.
[[nodiscard]] PointSet linear_blend(const TriMesh& mesh, const Skeleton& skel, const SkinBinding& binding, const Pose& pose);

}  // namespace handssm
