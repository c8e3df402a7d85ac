#include "handssm/phantom.hpp"

#include "handssm/geometry.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace handssm {

namespace {

constexpr double kOverlapTolerance = 0.5;  // mm of bone interpenetration between digits
constexpr int kMaxSplayRetries = 6;
constexpr double kSplayStep = 5.0;

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

double segment_distance(const Capsule& p, const Capsule& q) {
    // Dense sampling is plenty for an overlap check at sub-millimetre tolerance.
    double best = std::numeric_limits<double>::infinity();
    constexpr int n = 64;
    for (int i = 0; i <= n; ++i) {
        const Eigen::Vector3d a = p.a + (p.b - p.a) * (double(i) / n);
        best = std::min(best, point_segment_distance<double>(a, q.a, q.b));
    }
    return best;
}

double max_digit_overlap(const PhantomSolids& s) {
    double worst = 0.0;
    for (const Capsule& p : s.capsules)
        for (const Capsule& q : s.capsules) {
            if (p.bone / 4 == q.bone / 4 || p.bone >= q.bone) continue;  // same digit or already seen
            worst = std::max(worst, p.radius + q.radius - segment_distance(p, q));
        }
    return worst;
}

double slab_distance(const Slab& s, const Eigen::Vector3d& p) {
    return point_rectangle_distance<double>(p, s.x0, s.x1, s.y0, s.y1, 0.0);
}

struct Box {
    Eigen::Vector3d lo, hi;
};

Box capsule_box(const Capsule& c, double pad) {
    const double r = c.radius + pad;
    return {c.a.cwiseMin(c.b).array() - r, c.a.cwiseMax(c.b).array() + r};
}

Box slab_box(const Slab& s, double pad) {
    const double r = s.radius + pad;
    return {{s.x0 - r, s.y0 - r, -r}, {s.x1 + r, s.y1 + r, r}};
}

}  // namespace

void PhantomParams::validate() const {
    const auto positive = [](double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("phantom: ") + what + " must be positive");
    };
    positive(scale, "scale");
    positive(palm_length, "palm_length");
    positive(mcp_spacing, "mcp_spacing");
    positive(palm_bone_radius, "palm_bone_radius");
    positive(palm_start, "palm_start");
    positive(forearm_width, "forearm_width");
    positive(forearm_bone_radius, "forearm_bone_radius");
    positive(forearm_length, "forearm_length");
    positive(tissue, "tissue");
    positive(spacing, "spacing");
    for (const auto& d : digits) {
        for (double l : d.length) positive(l, "digit length");
        positive(d.radius, "digit radius");
    }
    if (margin < 0.0) throw std::invalid_argument("phantom: margin must be non-negative");
    if (noise_hu < 0.0) throw std::invalid_argument("phantom: noise_hu must be non-negative");
    if (plaster) {
        positive(plaster_gap, "plaster_gap");
        positive(plaster_thickness, "plaster_thickness");
    }
    if (dims && (dims->array() <= 0).any()) throw std::invalid_argument("phantom: dims must be positive");
    if (flexion_deg[kWrist] != 0.0) throw std::invalid_argument("phantom: the wrist joint cannot be flexed");
    // Keep the wrist cross-section to the forearm alone.
    if (palm_start < palm_bone_radius + tissue)
        throw std::invalid_argument("phantom: palm_start must clear the palm bone radius plus tissue");
    if (thumb_cmc.y() < digits[0].radius + tissue)
        throw std::invalid_argument("phantom: thumb base too close to the wrist plane");
    for (int d = 1; d < 5; ++d)
        if (digits[static_cast<std::size_t>(d)].radius > palm_bone_radius)
            throw std::invalid_argument("phantom: finger radius exceeds palm bone radius");
}

LandmarkSet phantom_rest_landmarks(const PhantomParams& p) {
    const double k = p.scale;
    const double s = p.mcp_spacing * k, lp = p.palm_length * k;
    LandmarkSet lm;
    lm.points["wrist"] = Eigen::Vector3d::Zero();
    const auto& names = joint_names();
    const std::array<double, 5> base_x = {p.thumb_cmc.x() * k, s, 0.0, -s, -2 * s};
    for (int d = 0; d < 5; ++d) {
        const auto du = static_cast<std::size_t>(d);
        const double th = deg2rad(p.splay_deg[du]);
        const Eigen::Vector3d u(std::sin(th), std::cos(th), 0.0);
        Eigen::Vector3d q(base_x[du], d == 0 ? p.thumb_cmc.y() * k : lp, 0.0);
        lm.points[names[static_cast<std::size_t>(digit_root(d))]] = q;
        for (int i = 0; i < 3; ++i) {
            q += u * (p.digits[du].length[static_cast<std::size_t>(i)] * k);
            lm.points[names[static_cast<std::size_t>(digit_root(d) + 1 + i)]] = q;
        }
    }
    return lm;
}

MeasurementSet phantom_measurements(const PhantomParams& p) {
    const double k = p.scale;
    const LandmarkSet lm = phantom_rest_landmarks(p);
    const double w = 3 * p.mcp_spacing * k;
    const double r_palm = (p.palm_bone_radius + p.tissue) * k;
    const double r_wrist = (p.forearm_bone_radius + p.tissue) * k;
    MeasurementSet m;
    m.hand_length = (lm.at("middle_tip") - lm.at("wrist")).norm();
    m.palm_length = (lm.at("middle_mcp") - lm.at("wrist")).norm();
    m.hand_breadth = w + 2 * r_palm;
    m.hand_circumference = 2 * w + 2 * std::numbers::pi * r_palm;
    m.wrist_circumference = 2 * p.forearm_width * k + 2 * std::numbers::pi * r_wrist;
    return m;
}

PhantomSolids phantom_solids(const PhantomParams& p, LandmarkSet* posed) {
    p.validate();
    const double k = p.scale;
    const Skeleton skel = build_skeleton(phantom_rest_landmarks(p));
    std::map<int, double> flex;
    for (int j = 0; j < kHandJoints; ++j)
        if (p.flexion_deg[static_cast<std::size_t>(j)] != 0.0) flex[j] = p.flexion_deg[static_cast<std::size_t>(j)];
    const auto fk = forward_kinematics(skel, flexion_pose(skel, flex));

    PhantomSolids s;
    s.tissue = p.tissue * k;
    for (int d = 0; d < 5; ++d) {
        const double r = p.digits[static_cast<std::size_t>(d)].radius * k;
        s.rays.push_back({fk.position(kWrist), fk.position(digit_root(d)), 0.0, digit_root(d) - 1});
        for (int j = digit_root(d); j < digit_tip(d); ++j) s.capsules.push_back({fk.position(j), fk.position(j + 1), r, j});
    }
    const double sp = p.mcp_spacing * k;
    s.palm = {-2 * sp, sp, p.palm_start * k, p.palm_length * k, p.palm_bone_radius * k};
    const double cx = -0.5 * sp, hw = 0.5 * p.forearm_width * k;
    s.forearm = {cx - hw, cx + hw, -p.forearm_length * k, 0.0, p.forearm_bone_radius * k};
    if (posed) {
        posed->points.clear();
        for (int j = 0; j < skel.joint_count(); ++j) posed->points[skel.names[static_cast<std::size_t>(j)]] = fk.position(j);
    }
    return s;
}

double PhantomSolids::signed_distance(const Eigen::Vector3d& p, bool skin) const {
    const double off = skin ? tissue : 0.0;
    double d = std::min(slab_distance(palm, p) - palm.radius, slab_distance(forearm, p) - forearm.radius) - off;
    for (const Capsule& c : capsules) d = std::min(d, point_segment_distance<double>(p, c.a, c.b) - c.radius - off);
    return d;
}

int PhantomSolids::owning_bone(const Eigen::Vector3d& p) const {
    double best = std::min(slab_distance(palm, p) - palm.radius, slab_distance(forearm, p) - forearm.radius);
    int bone = -1;
    for (const Capsule& c : capsules) {
        const double d = point_segment_distance<double>(p, c.a, c.b) - c.radius;
        if (d < best) {
            best = d;
            bone = c.bone;
        }
    }
    if (bone >= 0) return bone;
    double near = std::numeric_limits<double>::infinity();
    const Capsule* ray = nullptr;
    for (const Capsule& r : rays) {
        const double d = point_segment_distance<double>(p, r.a, r.b);
        if (d < near) {
            near = d;
            ray = &r;
        }
    }
    // The slab's rounded end reaches past the knuckles; skin distal to the joint plane moves with the phalanx.
    if ((p - ray->b).dot(ray->b - ray->a) > 0.0) return ray->bone + 1;
    return ray->bone;
}

Phantom generate_phantom(const PhantomParams& params) {
    Phantom out;
    out.params = params;
    out.solids = phantom_solids(out.params, &out.landmarks);
    while (max_digit_overlap(out.solids) > kOverlapTolerance * out.params.scale) {
        if (out.splay_retries == kMaxSplayRetries)
            throw std::runtime_error("phantom: digits still overlap after increasing splay");
        ++out.splay_retries;
        for (int d = 0; d < 5; ++d) {
            auto& a = out.params.splay_deg[static_cast<std::size_t>(d)];
            a += d < 2 ? kSplayStep : (d > 2 ? -kSplayStep : 0.0);
        }
        out.solids = phantom_solids(out.params, &out.landmarks);
    }
    const PhantomParams& p = out.params;
    const PhantomSolids& s = out.solids;
    out.measurements_gt = phantom_measurements(p);

    const double shell = p.plaster ? p.plaster_gap + p.plaster_thickness : 0.0;
    const double pad = s.tissue + shell;
    std::vector<Box> boxes;
    for (const Capsule& c : s.capsules) boxes.push_back(capsule_box(c, pad));
    boxes.push_back(slab_box(s.palm, pad));
    boxes.push_back(slab_box(s.forearm, pad));
    Box all = boxes.front();
    for (const Box& b : boxes) {
        all.lo = all.lo.cwiseMin(b.lo);
        all.hi = all.hi.cwiseMax(b.hi);
    }

    const Eigen::Vector3d spacing = Eigen::Vector3d::Constant(p.spacing);
    Eigen::Vector3i dims;
    Eigen::Vector3d origin;
    if (p.dims) {
        dims = *p.dims;
        origin = 0.5 * (all.lo + all.hi) - 0.5 * (dims.cast<double>() - Eigen::Vector3d::Ones()) * p.spacing;
    } else {
        origin = all.lo.array() - p.margin;
        const Eigen::Vector3d ext = all.hi - all.lo + Eigen::Vector3d::Constant(2 * p.margin);
        for (int a = 0; a < 3; ++a) dims[a] = static_cast<int>(std::ceil(ext[a] / p.spacing)) + 1;
    }

    // Signed distances to the bone and skin solids, only evaluated near each solid.
    const auto n = static_cast<std::size_t>(dims.prod());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> bone_sd(n, inf), skin_sd(n, inf);
    const VoxelVolume geom(dims, spacing, origin, kAirHU);
    const auto visit = [&](const Box& b, auto&& dist, double radius) {
        Eigen::Vector3i lo, hi;
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::floor((b.lo[a] - origin[a]) / p.spacing)));
            hi[a] = std::min(dims[a] - 1, static_cast<int>(std::ceil((b.hi[a] - origin[a]) / p.spacing)));
        }
        for (int z = lo.z(); z <= hi.z(); ++z)
            for (int y = lo.y(); y <= hi.y(); ++y)
                for (int x = lo.x(); x <= hi.x(); ++x) {
                    const double d = dist(geom.position(x, y, z)) - radius;
                    const std::size_t i = geom.index(x, y, z);
                    bone_sd[i] = std::min(bone_sd[i], d);
                    skin_sd[i] = std::min(skin_sd[i], d - s.tissue);
                }
    };
    for (const Capsule& c : s.capsules)
        visit(capsule_box(c, pad), [&](const Eigen::Vector3d& q) { return point_segment_distance<double>(q, c.a, c.b); }, c.radius);
    for (const Slab* sl : {&s.palm, &s.forearm})
        visit(slab_box(*sl, pad), [&](const Eigen::Vector3d& q) { return slab_distance(*sl, q); }, sl->radius);

    out.volume = geom;
    out.bone_mask_gt = geom.like<uint8_t>(0);
    out.skin_mask_gt = geom.like<uint8_t>(0);
    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> noise(0.0, p.noise_hu > 0.0 ? p.noise_hu : 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        int16_t hu = kAirHU;
        if (bone_sd[i] <= 0.0) {
            hu = kBoneHU;
            out.bone_mask_gt.data[i] = 1;
            out.skin_mask_gt.data[i] = 1;
        } else if (skin_sd[i] <= 0.0) {
            hu = kTissueHU;
            out.skin_mask_gt.data[i] = 1;
        } else if (p.plaster && skin_sd[i] > p.plaster_gap && skin_sd[i] <= shell) {
            hu = kPlasterHU;
        }
        double v = hu;
        if (p.noise_hu > 0.0) v += noise(rng);
        out.volume.data[i] = static_cast<int16_t>(std::clamp(std::lround(v), long{kMinHU}, long{kMaxHU}));
    }
    return out;
}

std::vector<PhantomParams> population_params(int n, const VarianceSpec& spec, std::uint64_t seed,
                                             const PhantomParams& base) {
    if (n < 2) throw std::invalid_argument("generate_population: n must be at least 2");
    std::vector<PhantomParams> out;
    for (int i = 0; i < n; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> g(0.0, 1.0);
        const auto jitter = [&](double& v, double sd) { v *= 1.0 + sd * g(rng); };
        PhantomParams p = base;
        jitter(p.scale, spec.scale);
        jitter(p.palm_length, spec.palm);
        jitter(p.mcp_spacing, spec.palm);
        jitter(p.forearm_width, spec.palm);
        for (auto& d : p.digits) {
            for (double& l : d.length) jitter(l, spec.length);
            jitter(d.radius, spec.radius);
        }
        jitter(p.palm_bone_radius, spec.radius);
        jitter(p.forearm_bone_radius, spec.radius);
        jitter(p.tissue, spec.tissue);
        p.seed = rng();
        out.push_back(p);
    }
    return out;
}

std::vector<Phantom> generate_population(int n, const VarianceSpec& spec, std::uint64_t seed, const PhantomParams& base) {
    std::vector<Phantom> out;
    for (const auto& p : population_params(n, spec, seed, base)) out.push_back(generate_phantom(p));
    return out;
}

}  // namespace handssm
