#include "handssm/skeleton.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace handssm {

const std::vector<std::string>& joint_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n{"wrist"};
        for (const char* d : kDigits) {
            const std::string s(d);
            if (s == "thumb") {
                for (const char* j : {"cmc", "mcp", "ip", "tip"}) n.push_back(s + "_" + j);
            } else {
                for (const char* j : {"mcp", "pip", "dip", "tip"}) n.push_back(s + "_" + j);
            }
        }
        return n;
    }();
    return names;
}

const Eigen::Vector3d& LandmarkSet::at(const std::string& name) const {
    const auto it = points.find(name);
    if (it == points.end()) throw SkeletonError(SkeletonErrorCode::MissingLandmark, "missing landmark: " + name);
    return it->second;
}

void LandmarkSet::validate() const {
    for (const auto& name : joint_names())
        if (!has(name)) throw SkeletonError(SkeletonErrorCode::MissingLandmark, "missing landmark: " + name);
    for (const auto& [name, p] : points)
        if (!p.allFinite()) throw SkeletonError(SkeletonErrorCode::NonFinite, "non-finite landmark: " + name);

    const auto& names = joint_names();
    const Eigen::Vector3d& wrist = at("wrist");
    for (int d = 0; d < 5; ++d) {
        Eigen::Vector3d prev = wrist;
        std::string prev_name = "wrist";
        double prev_dist = 0.0;
        for (int j = digit_root(d); j <= digit_tip(d); ++j) {
            const auto& name = names[static_cast<std::size_t>(j)];
            const Eigen::Vector3d& p = at(name);
            if ((p - prev).norm() == 0.0)
                throw SkeletonError(SkeletonErrorCode::ZeroLengthBone, "zero-length bone " + prev_name + " -> " + name);
            const double dist = (p - wrist).norm();
            if (!(dist > prev_dist))
                throw SkeletonError(SkeletonErrorCode::NonMonotoneChain,
                                    name + " is not farther from the wrist than " + prev_name);
            prev = p;
            prev_name = name;
            prev_dist = dist;
        }
    }
    if (has("forearm_proximal") && (at("forearm_proximal") - wrist).norm() == 0.0)
        throw SkeletonError(SkeletonErrorCode::ZeroLengthBone, "zero-length bone wrist -> forearm_proximal");
}

LandmarkSet LandmarkSet::transformed(const Eigen::Isometry3d& t) const {
    LandmarkSet out;
    for (const auto& [name, p] : points) out.points[name] = t * p;
    return out;
}

std::string encode_landmarks(const LandmarkSet& lm) {
    nlohmann::json j;
    j["units"] = "mm";
    j["landmarks"] = nlohmann::json::object();
    for (const auto& [name, p] : lm.points) j["landmarks"][name] = {p.x(), p.y(), p.z()};
    return j.dump(2) + "\n";
}

LandmarkSet decode_landmarks(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SkeletonError(SkeletonErrorCode::Io, std::string("landmark file: ") + e.what());
    }
    if (!j.is_object() || !j.contains("landmarks") || !j["landmarks"].is_object())
        throw SkeletonError(SkeletonErrorCode::Io, "landmark file: expected an object with \"landmarks\"");
    if (j.contains("units") && j["units"] != "mm")
        throw SkeletonError(SkeletonErrorCode::Io, "landmark file: units must be \"mm\"");
    LandmarkSet lm;
    for (const auto& [name, v] : j["landmarks"].items()) {
        if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
            throw SkeletonError(SkeletonErrorCode::Io, "landmark " + name + ": expected [x, y, z]");
        lm.points[name] = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    }
    return lm;
}

LandmarkSet read_landmarks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SkeletonError(SkeletonErrorCode::Io, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return decode_landmarks(ss.str());
}

void write_landmarks(const LandmarkSet& lm, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    out << encode_landmarks(lm);
    if (!out) throw SkeletonError(SkeletonErrorCode::Io, "cannot write " + path.string());
}

double Skeleton::bone_length(int b) const {
    return (rest[static_cast<std::size_t>(bone_child(b))] - rest[static_cast<std::size_t>(bone_parent(b))]).norm();
}

std::vector<int> Skeleton::children(int j) const {
    std::vector<int> out;
    for (int k = 0; k < joint_count(); ++k)
        if (parent[static_cast<std::size_t>(k)] == j) out.push_back(k);
    return out;
}

namespace {

Eigen::Vector3d palm_normal_of(const Eigen::Vector3d& wrist, const Eigen::Vector3d& index_mcp,
                               const Eigen::Vector3d& little_mcp) {
    const Eigen::Vector3d a = index_mcp - wrist, b = little_mcp - wrist;
    const Eigen::Vector3d n = a.cross(b);
    if (n.norm() <= 1e-9 * a.norm() * b.norm())
        throw SkeletonError(SkeletonErrorCode::DegeneratePalm, "degenerate palm plane: wrist and mcp landmarks are collinear");
    return n.normalized();
}

// x along the bone, z the palm normal made orthogonal to x, y = z × x.
Eigen::Matrix3d bone_frame(const Eigen::Vector3d& dir, const Eigen::Vector3d& normal, const Eigen::Vector3d& fallback) {
    const Eigen::Vector3d x = dir.normalized();
    Eigen::Vector3d z = normal - normal.dot(x) * x;
    if (z.norm() < 1e-9) z = x.cross(fallback);
    z.normalize();
    Eigen::Matrix3d f;
    f.col(0) = x;
    f.col(1) = z.cross(x);
    f.col(2) = z;
    return f;
}

Eigen::Quaterniond minimal_rotation(const Eigen::Vector3d& from, const Eigen::Vector3d& to) {
    return Eigen::Quaterniond::FromTwoVectors(from, to).normalized();
}

}  // namespace

Skeleton make_skeleton(std::vector<std::string> names, std::vector<int> parent, std::vector<Eigen::Vector3d> rest,
                       const Eigen::Vector3d& normal, const Eigen::Vector3d& root_axis) {
    if (names.size() != parent.size() || rest.size() != parent.size())
        throw SkeletonError(SkeletonErrorCode::PoseMismatch, "skeleton arrays differ in length");
    Skeleton s;
    s.names = std::move(names);
    s.parent = std::move(parent);
    s.rest = std::move(rest);
    s.palm_normal = normal.normalized();
    for (int j = 0; j < s.joint_count(); ++j) {
        const int p = s.parent[static_cast<std::size_t>(j)];
        if (p >= j) throw SkeletonError(SkeletonErrorCode::PoseMismatch, "parent must precede child");
        if (p < 0) continue;
        if ((s.rest[static_cast<std::size_t>(j)] - s.rest[static_cast<std::size_t>(p)]).norm() == 0.0)
            throw SkeletonError(SkeletonErrorCode::ZeroLengthBone, "zero-length bone " + s.names[static_cast<std::size_t>(p)] +
                                                                       " -> " + s.names[static_cast<std::size_t>(j)]);
        s.bone_joint.push_back(j);
    }
    for (int j = 0; j < s.joint_count(); ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const auto kids = s.children(j);
        Eigen::Vector3d dir;
        if (kids.size() == 1) dir = s.rest[static_cast<std::size_t>(kids[0])] - s.rest[ju];
        else if (s.parent[ju] >= 0) dir = s.rest[ju] - s.rest[static_cast<std::size_t>(s.parent[ju])];
        else dir = root_axis;
        s.frame.push_back(bone_frame(dir, s.palm_normal, root_axis));
    }
    return s;
}

Skeleton build_skeleton(const LandmarkSet& landmarks) {
    landmarks.validate();
    std::vector<std::string> names = joint_names();
    std::vector<int> parent(names.size(), -1);
    for (int d = 0; d < 5; ++d) {
        parent[static_cast<std::size_t>(digit_root(d))] = kWrist;
        for (int j = digit_root(d) + 1; j <= digit_tip(d); ++j) parent[static_cast<std::size_t>(j)] = j - 1;
    }
    if (landmarks.has("forearm_proximal")) {
        names.emplace_back("forearm_proximal");
        parent.push_back(kWrist);
    }
    std::vector<Eigen::Vector3d> rest;
    for (const auto& n : names) rest.push_back(landmarks.at(n));

    const Eigen::Vector3d normal = palm_normal_of(landmarks.at("wrist"), landmarks.at("index_mcp"), landmarks.at("little_mcp"));
    Eigen::Vector3d axis = landmarks.at("middle_mcp") - landmarks.at("wrist");
    axis -= axis.dot(normal) * normal;
    if (axis.norm() < 1e-9) throw SkeletonError(SkeletonErrorCode::DegeneratePalm, "middle_mcp lies on the palm normal");
    return make_skeleton(std::move(names), std::move(parent), std::move(rest), normal, axis.normalized());
}

Pose Pose::identity(int joints) {
    Pose p;
    p.rotation.assign(static_cast<std::size_t>(joints), Eigen::Quaterniond::Identity());
    return p;
}

JointTransforms forward_kinematics(const Skeleton& skel, const Pose& pose) {
    const int n = skel.joint_count();
    if (static_cast<int>(pose.rotation.size()) != n)
        throw SkeletonError(SkeletonErrorCode::PoseMismatch, "pose has " + std::to_string(pose.rotation.size()) +
                                                                 " rotations for " + std::to_string(n) + " joints");
    JointTransforms out;
    out.world.resize(static_cast<std::size_t>(n));
    out.skinning.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const Eigen::Isometry3d& up = skel.parent[ju] < 0 ? pose.root : out.skinning[static_cast<std::size_t>(skel.parent[ju])];
        const Eigen::Matrix3d& b = skel.frame[ju];
        const Eigen::Quaterniond& q = pose.rotation[ju];
        const bool still = q.w() == 1.0 && q.vec().isZero(0.0);
        const Eigen::Matrix3d local = still ? Eigen::Matrix3d::Identity() : Eigen::Matrix3d(b * q.toRotationMatrix() * b.transpose());
        const Eigen::Vector3d& r = skel.rest[ju];
        Eigen::Isometry3d m = Eigen::Isometry3d::Identity();
        m.linear() = up.linear() * local;
        m.translation() = up * r - m.linear() * r;
        out.skinning[ju] = m;
        Eigen::Isometry3d w = Eigen::Isometry3d::Identity();
        w.linear() = m.linear() * b;
        w.translation() = m * r;
        out.world[ju] = w;
    }
    return out;
}

LandmarkSet posed_landmarks(const Skeleton& skel, const Pose& pose) {
    const auto fk = forward_kinematics(skel, pose);
    LandmarkSet lm;
    for (int j = 0; j < skel.joint_count(); ++j) lm.points[skel.names[static_cast<std::size_t>(j)]] = fk.position(j);
    return lm;
}

Eigen::Vector3d palm_axis(const Skeleton& skel) {
    const Eigen::Vector3d& n = skel.palm_normal;
    Eigen::Vector3d a = skel.rest[static_cast<std::size_t>(digit_root(2))] - skel.rest[kWrist];
    a -= a.dot(n) * n;
    if (a.norm() < 1e-9) throw SkeletonError(SkeletonErrorCode::DegeneratePalm, "middle_mcp lies on the palm normal");
    return a.normalized();
}

Eigen::Vector3d template_direction(const Skeleton& skel, int digit, const StandardPoseTemplate& tpl) {
    const double rad = tpl.splay_deg[static_cast<std::size_t>(digit)] * std::numbers::pi / 180.0;
    return Eigen::AngleAxisd(rad, -skel.palm_normal) * palm_axis(skel);
}

Pose standard_pose(const Skeleton& skel, const StandardPoseTemplate& tpl) {
    Pose pose = Pose::identity(skel.joint_count());
    const auto to_local = [&](int j, const Eigen::Quaterniond& world) {
        const Eigen::Matrix3d& b = skel.frame[static_cast<std::size_t>(j)];
        Eigen::Quaterniond q(Eigen::Matrix3d(b.transpose() * world.toRotationMatrix() * b));
        return q.normalized();
    };
    for (int d = 0; d < 5; ++d) {
        std::vector<Eigen::Vector3d> u;
        for (int j = digit_root(d); j < digit_tip(d); ++j)
            u.push_back((skel.rest[static_cast<std::size_t>(j + 1)] - skel.rest[static_cast<std::size_t>(j)]).normalized());
        const Eigen::Vector3d target = template_direction(skel, d, tpl);
        pose.rotation[static_cast<std::size_t>(digit_root(d))] = to_local(digit_root(d), minimal_rotation(u[0], target));
        for (std::size_t k = 1; k < u.size(); ++k) {
            const int j = digit_root(d) + static_cast<int>(k);
            pose.rotation[static_cast<std::size_t>(j)] = to_local(j, minimal_rotation(u[k], u[k - 1]));
        }
    }
    return pose;
}

Pose flexion_pose(const Skeleton& skel, const std::map<int, double>& flex_deg) {
    Pose pose = Pose::identity(skel.joint_count());
    for (const auto& [j, deg] : flex_deg) {
        if (j < 0 || j >= skel.joint_count()) throw SkeletonError(SkeletonErrorCode::PoseMismatch, "flexion joint out of range");
        pose.rotation[static_cast<std::size_t>(j)] =
            Eigen::Quaterniond(Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, Eigen::Vector3d::UnitY()));
    }
    return pose;
}

std::vector<double> interior_angles(const std::vector<Eigen::Vector3d>& joints) {
    std::vector<double> out;
    for (int d = 0; d < 5; ++d)
        for (int j = digit_root(d) + 1; j < digit_tip(d); ++j) {
            const Eigen::Vector3d a = joints[static_cast<std::size_t>(j - 1)] - joints[static_cast<std::size_t>(j)];
            const Eigen::Vector3d b = joints[static_cast<std::size_t>(j + 1)] - joints[static_cast<std::size_t>(j)];
            out.push_back(std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi);
        }
    return out;
}

std::array<double, 5> splay_angles(const Skeleton& skel, const std::vector<Eigen::Vector3d>& joints) {
    const Eigen::Vector3d& n = skel.palm_normal;
    const Eigen::Vector3d a = palm_axis(skel);
    std::array<double, 5> out{};
    for (int d = 0; d < 5; ++d) {
        Eigen::Vector3d u = joints[static_cast<std::size_t>(digit_root(d) + 1)] - joints[static_cast<std::size_t>(digit_root(d))];
        u -= u.dot(n) * n;
        out[static_cast<std::size_t>(d)] = std::atan2(-a.cross(u).dot(n), a.dot(u)) * 180.0 / std::numbers::pi;
    }
    return out;
}

}  // namespace handssm
