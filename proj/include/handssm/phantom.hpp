#pragma once

#include "handssm/anthropometry.hpp"
#include "handssm/grid.hpp"
#include "handssm/skeleton.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace handssm {

inline constexpr int16_t kBoneHU = 700;
inline constexpr int16_t kTissueHU = 40;
inline constexpr int16_t kPlasterHU = 300;

/// Digit geometry: three segment lengths, proximal to distal, and the bone radius.
struct DigitParams {
    std::array<double, 3> length;
    double radius;
};

// Hand frame: wrist at the origin, +y along the middle finger, +x toward the thumb,
// +z dorsal. Lengths are in mm before `scale` is applied.
struct PhantomParams {
    double scale = 1.0;
    double palm_length = 110.0;         // wrist to the row of finger mcp joints
    double mcp_spacing = 18.0;          // between neighbouring finger mcp joints
    double palm_bone_radius = 9.0;      // half thickness of the palm bone slab
    double palm_start = 16.0;           // palm slab begins this far distal of the wrist
    double forearm_width = 35.0;        // flat part of the wrist cross-section
    double forearm_bone_radius = 9.0;
    double forearm_length = 30.0;
    Eigen::Vector2d thumb_cmc{18.0, 22.0};  // (x, y) of the thumb base
    std::array<DigitParams, 5> digits = {{{{38.0, 28.0, 20.0}, 7.0},
                                          {{35.0, 23.0, 17.0}, 6.0},
                                          {{38.0, 26.0, 18.0}, 6.0},
                                          {{36.0, 25.0, 18.0}, 5.5},
                                          {{28.0, 18.0, 15.0}, 5.0}}};
    std::array<double, 5> splay_deg = {40.0, 10.0, 0.0, -10.0, -20.0};
    std::array<double, kHandJoints> flexion_deg{};  // about each joint's local y axis
    double tissue = 5.0;

    double spacing = 1.0;                      // mm, not scaled
    double margin = 4.0;                       // air around the hand, mm, not scaled
    std::optional<Eigen::Vector3i> dims;       // fixed grid, hand centered
    double noise_hu = 10.0;
    bool plaster = false;
    double plaster_gap = 1.0;
    double plaster_thickness = 3.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Capsule {
    Eigen::Vector3d a, b;
    double radius;  // bone radius; skin adds the tissue offset
    int bone;       // skeleton bone index
};

struct Slab {
    double x0, x1, y0, y1;
    double radius;
};

/// Analytic solids of one phantom, already scaled and posed.
struct PhantomSolids {
    std::vector<Capsule> capsules;  // digit segments
    std::vector<Capsule> rays;      // wrist to each digit base, inside the palm
    Slab palm{}, forearm{};
    double tissue = 0.0;

    /// Signed distance to the bone solid, or to the skin solid when `skin` (negative inside).
    [[nodiscard]] double signed_distance(const Eigen::Vector3d& p, bool skin) const;
    /// Bone whose solid owns p: the digit capsule when one is deepest, otherwise the nearest palm ray,
    /// or that digit's first phalanx when p lies beyond the ray's distal joint plane.
    [[nodiscard]] int owning_bone(const Eigen::Vector3d& p) const;
};

struct Phantom {
    PhantomParams params;
    VoxelVolume volume;
    BinaryMask bone_mask_gt;
    BinaryMask skin_mask_gt;
    LandmarkSet landmarks;
    MeasurementSet measurements_gt;
    PhantomSolids solids;
    int splay_retries = 0;
};

/// Rest landmarks of the phantom with straight digits at the given splay angles.
[[nodiscard]] LandmarkSet phantom_rest_landmarks(const PhantomParams& params);
/// Ground-truth measurements in the straight configuration.
[[nodiscard]] MeasurementSet phantom_measurements(const PhantomParams& params);
[[nodiscard]] PhantomSolids phantom_solids(const PhantomParams& params, LandmarkSet* posed = nullptr);

[[nodiscard]] Phantom generate_phantom(const PhantomParams& params);

/// Relative standard deviations of the population perturbations.
struct VarianceSpec {
    double scale = 0.0;
    double length = 0.0;   // per segment, independent
    double radius = 0.0;   // per radius, independent
    double palm = 0.0;     // palm length, spacing, width
    double tissue = 0.0;
};

[[nodiscard]] std::vector<PhantomParams> population_params(int n, const VarianceSpec& spec, std::uint64_t seed,
                                                           const PhantomParams& base = {});
[[nodiscard]] std::vector<Phantom> generate_population(int n, const VarianceSpec& spec, std::uint64_t seed,
                                                       const PhantomParams& base = {});

}  // namespace handssm
