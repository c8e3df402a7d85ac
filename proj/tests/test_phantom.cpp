#include "handssm/metrics.hpp"
#include "handssm/phantom.hpp"
#include "handssm/segmentation.hpp"
#include "handssm/volume.hpp"

#include <doctest.h>

#include <numbers>

using namespace handssm;

namespace {

PhantomParams small() {
    PhantomParams p;
    p.scale = 0.5;
    p.spacing = 1.0;
    return p;
}

}  // namespace

TEST_CASE("default phantom: tissue contains bone, landmarks valid, volume values") {
    const Phantom ph = generate_phantom(small());
    CHECK(ph.splay_retries == 0);
    std::size_t bone = 0, skin = 0;
    for (std::size_t i = 0; i < ph.volume.size(); ++i) {
        if (ph.bone_mask_gt.data[i]) CHECK(ph.skin_mask_gt.data[i]);
        bone += ph.bone_mask_gt.data[i];
        skin += ph.skin_mask_gt.data[i];
    }
    CHECK(bone > 1000);
    CHECK(skin > 2 * bone);
    CHECK_NOTHROW(ph.landmarks.validate());
    CHECK(ph.landmarks.points.size() == 21);
    validate_volume(ph.volume);
}

TEST_CASE("masks agree with the analytic solids at voxel centers") {
    const Phantom ph = generate_phantom(small());
    for (std::size_t i = 0; i < ph.volume.size(); i += 7) {
        const Eigen::Vector3i c = ph.volume.coords(i);
        const Eigen::Vector3d p = ph.volume.position(c.x(), c.y(), c.z());
        CHECK((ph.bone_mask_gt.data[i] != 0) == (ph.solids.signed_distance(p, false) <= 0.0));
        CHECK((ph.skin_mask_gt.data[i] != 0) == (ph.solids.signed_distance(p, true) <= 0.0));
    }
}

TEST_CASE("noise-free phantom has exactly three HU levels") {
    PhantomParams p = small();
    p.noise_hu = 0;
    const Phantom ph = generate_phantom(p);
    for (std::size_t i = 0; i < ph.volume.size(); ++i) {
        const int16_t expect = ph.bone_mask_gt.data[i] ? kBoneHU : (ph.skin_mask_gt.data[i] ? kTissueHU : kAirHU);
        CHECK(ph.volume.data[i] == expect);
    }
}

TEST_CASE("bone threshold and small-component filter recover the bone mask") {
    const Phantom ph = generate_phantom(small());
    const BinaryMask seg = remove_small_components(threshold_mask(ph.volume, 150, 3000), 80, Connectivity::TwentySix);
    CHECK(overlap_metrics(seg, ph.bone_mask_gt).dice >= 0.99);
}

TEST_CASE("ground-truth hand length is the sum of the middle ray") {
    const PhantomParams p;
    const MeasurementSet m = phantom_measurements(p);
    const auto& mid = p.digits[2].length;
    CHECK(m.hand_length == doctest::Approx(p.palm_length + mid[0] + mid[1] + mid[2]).epsilon(1e-12));
    CHECK(m.palm_length == doctest::Approx(p.palm_length).epsilon(1e-12));
    CHECK(m.hand_breadth == doctest::Approx(3 * p.mcp_spacing + 2 * (p.palm_bone_radius + p.tissue)));
    CHECK(m.hand_circumference ==
          doctest::Approx(6 * p.mcp_spacing + 2 * std::numbers::pi * (p.palm_bone_radius + p.tissue)));
    CHECK(m.hand_length > m.palm_length);

    PhantomParams half = p;
    half.scale = 0.5;
    const auto a = phantom_measurements(half).values(), b = m.values();
    for (std::size_t i = 0; i < 5; ++i) CHECK(a[i] == doctest::Approx(0.5 * b[i]));
}

TEST_CASE("phantom generation is deterministic per seed") {
    PhantomParams p = small();
    p.seed = 11;
    const Phantom a = generate_phantom(p), b = generate_phantom(p);
    CHECK(encode_volume(a.volume) == encode_volume(b.volume));
    p.seed = 12;
    const Phantom c = generate_phantom(p);
    CHECK(c.volume.data != a.volume.data);
    CHECK(c.bone_mask_gt == a.bone_mask_gt);
}

TEST_CASE("fixed dims center the hand in the grid") {
    PhantomParams p;
    p.scale = 0.3;
    p.spacing = 0.5;
    p.dims = Eigen::Vector3i(128, 128, 128);
    const Phantom ph = generate_phantom(p);
    CHECK(ph.volume.dims == Eigen::Vector3i(128, 128, 128));
    // Nothing touches the border.
    for (int z = 0; z < 128; ++z)
        for (int y = 0; y < 128; ++y) {
            CHECK_FALSE(ph.skin_mask_gt(0, y, z));
            CHECK_FALSE(ph.skin_mask_gt(127, y, z));
        }
}

TEST_CASE("plaster shell sits outside the skin") {
    PhantomParams p = small();
    p.plaster = true;
    p.noise_hu = 0;
    const Phantom ph = generate_phantom(p);
    std::size_t shell = 0;
    for (std::size_t i = 0; i < ph.volume.size(); ++i)
        if (ph.volume.data[i] == kPlasterHU) {
            ++shell;
            CHECK_FALSE(ph.skin_mask_gt.data[i]);
        }
    CHECK(shell > 1000);
}

TEST_CASE("flexed digits stay valid and keep the masks nested") {
    PhantomParams p = small();
    for (int j = digit_root(1); j < digit_tip(4); ++j)
        if (j % 4 != 0) p.flexion_deg[static_cast<std::size_t>(j)] = 30.0;
    const Phantom ph = generate_phantom(p);
    CHECK_NOTHROW((void)build_skeleton(ph.landmarks));
    // Flexion bends toward the palm (-z).
    CHECK(ph.landmarks.at("index_tip").z() < -5.0);
    CHECK(ph.measurements_gt.hand_length == doctest::Approx(phantom_measurements(p).hand_length));
}

TEST_CASE("owning bone follows the digit capsules") {
    const Phantom ph = generate_phantom(small());
    const auto& c = ph.solids.capsules[5];
    const Eigen::Vector3d mid = 0.5 * (c.a + c.b);
    CHECK(ph.solids.owning_bone(mid) == c.bone);
    CHECK(ph.solids.owning_bone(Eigen::Vector3d(-5, 20, 0)) >= 0);
}

TEST_CASE("parameter validation") {
    PhantomParams p;
    p.tissue = -1;
    CHECK_THROWS_AS((void)generate_phantom(p), std::invalid_argument);
    p = {};
    p.flexion_deg[0] = 10;
    CHECK_THROWS_AS((void)generate_phantom(p), std::invalid_argument);
    p = {};
    p.palm_start = 5;
    CHECK_THROWS_AS((void)generate_phantom(p), std::invalid_argument);
}

TEST_CASE("population: zero variance gives identical phantoms, seeds reproduce") {
    PhantomParams base = small();
    const auto same = population_params(3, {}, 5, base);
    for (const auto& p : same) {
        CHECK(p.scale == base.scale);
        CHECK(p.digits[2].length == base.digits[2].length);
    }
    const auto a = generate_population(2, {}, 5, base);
    CHECK(a[0].bone_mask_gt == a[1].bone_mask_gt);
    CHECK(a[0].landmarks.points == a[1].landmarks.points);

    VarianceSpec spec;
    spec.scale = 0.05;
    spec.length = 0.03;
    const auto x = population_params(4, spec, 9, base), y = population_params(4, spec, 9, base);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x[i].scale == y[i].scale);
        CHECK(x[i].seed == y[i].seed);
    }
    CHECK(x[0].scale != x[1].scale);
    const auto g1 = generate_population(2, spec, 9, base), g2 = generate_population(2, spec, 9, base);
    for (std::size_t i = 0; i < 2; ++i) CHECK(encode_volume(g1[i].volume) == encode_volume(g2[i].volume));
    CHECK_THROWS_AS((void)population_params(1, spec, 0), std::invalid_argument);
}
