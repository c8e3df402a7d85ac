#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace handssm {

inline constexpr std::array<const char*, 5> kDigits = {"thumb", "index", "middle", "ring", "little"};

/// Joint names in skeleton order: wrist, then four joints per digit proximal to distal.
const std::vector<std::string>& joint_names();

/// Index of the first joint of digit d (thumb_cmc or d_mcp).
inline constexpr int digit_root(int d) { return 1 + 4 * d; }
inline constexpr int digit_tip(int d) { return 4 + 4 * d; }
inline constexpr int kWrist = 0;
inline constexpr int kHandJoints = 21;

enum class SkeletonErrorCode { MissingLandmark, NonFinite, ZeroLengthBone, NonMonotoneChain, DegeneratePalm, PoseMismatch, Io };

class SkeletonError : public std::runtime_error {
public:
    SkeletonError(SkeletonErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] SkeletonErrorCode code() const { return code_; }

private:
    SkeletonErrorCode code_;
};

struct LandmarkSet {
    std::map<std::string, Eigen::Vector3d> points;

    [[nodiscard]] bool has(const std::string& name) const { return points.count(name) != 0; }
    [[nodiscard]] const Eigen::Vector3d& at(const std::string& name) const;

    /// Throws SkeletonError; zero-length segments are reported before monotonicity.
    void validate() const;

    [[nodiscard]] LandmarkSet transformed(const Eigen::Isometry3d& t) const;
};

[[nodiscard]] LandmarkSet read_landmarks(const std::filesystem::path& path);
void write_landmarks(const LandmarkSet& lm, const std::filesystem::path& path);
[[nodiscard]] std::string encode_landmarks(const LandmarkSet& lm);
[[nodiscard]] LandmarkSet decode_landmarks(const std::string& text);

struct Skeleton {
    std::vector<std::string> names;
    std::vector<int> parent;
    std::vector<Eigen::Vector3d> rest;
    /// Rest orientation of each joint: columns are the local x, y, z axes in world coordinates.
    std::vector<Eigen::Matrix3d> frame;
    Eigen::Vector3d palm_normal = Eigen::Vector3d::UnitZ();
    /// Child joint of each bone, in joint order. For a hand, bone b ends at joint b + 1.
    std::vector<int> bone_joint;

    [[nodiscard]] int joint_count() const { return static_cast<int>(parent.size()); }
    [[nodiscard]] int bone_count() const { return static_cast<int>(bone_joint.size()); }
    [[nodiscard]] int bone_child(int b) const { return bone_joint[static_cast<std::size_t>(b)]; }
    [[nodiscard]] int bone_parent(int b) const { return parent[static_cast<std::size_t>(bone_child(b))]; }
    [[nodiscard]] double bone_length(int b) const;
    [[nodiscard]] std::vector<int> children(int j) const;
};

[[nodiscard]] Skeleton build_skeleton(const LandmarkSet& landmarks);

/// Generic rig: parents must precede children; roots with several children orient along `root_axis`.
[[nodiscard]] Skeleton make_skeleton(std::vector<std::string> names, std::vector<int> parent,
                                     std::vector<Eigen::Vector3d> rest, const Eigen::Vector3d& normal,
                                     const Eigen::Vector3d& root_axis);

struct Pose {
    /// Per-joint rotation in the joint's rest frame.
    std::vector<Eigen::Quaterniond> rotation;
    Eigen::Isometry3d root = Eigen::Isometry3d::Identity();

    [[nodiscard]] static Pose identity(int joints);
};

struct JointTransforms {
    std::vector<Eigen::Isometry3d> world;     // joint frame placed at the posed joint position
    std::vector<Eigen::Isometry3d> skinning;  // maps rest-space points onto the posed hand
    [[nodiscard]] Eigen::Vector3d position(int j) const { return world[static_cast<std::size_t>(j)].translation(); }
};

[[nodiscard]] JointTransforms forward_kinematics(const Skeleton& skel, const Pose& pose);

/// Posed joint positions as a landmark set with the skeleton's names.
[[nodiscard]] LandmarkSet posed_landmarks(const Skeleton& skel, const Pose& pose);

struct StandardPoseTemplate {
    // Degrees in the palm plane, measured from the middle-finger axis; positive turns toward the thumb.
    std::array<double, 5> splay_deg = {40.0, 10.0, 0.0, -10.0, -20.0};
};

[[nodiscard]] Eigen::Vector3d palm_axis(const Skeleton& skel);
[[nodiscard]] Eigen::Vector3d template_direction(const Skeleton& skel, int digit, const StandardPoseTemplate& tpl = {});
[[nodiscard]] Pose standard_pose(const Skeleton& skel, const StandardPoseTemplate& tpl = {});

/// Pose that flexes the given joints about their local y axes (degrees).
[[nodiscard]] Pose flexion_pose(const Skeleton& skel, const std::map<int, double>& flex_deg);

/// Interior angle at each non-root, non-tip digit joint (degrees, 180 = straight).
[[nodiscard]] std::vector<double> interior_angles(const std::vector<Eigen::Vector3d>& joints);
/// Signed in-palm-plane angle of each digit's first segment from the palm axis.
[[nodiscard]] std::array<double, 5> splay_angles(const Skeleton& skel, const std::vector<Eigen::Vector3d>& joints);

}  // namespace handssm
