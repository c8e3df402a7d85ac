#include "handssm/segmentation.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace handssm;

namespace {

// Independent labeling oracle: iterative DFS with an explicit stack over raw offsets.
std::vector<int> dfs_labels(const BinaryMask& m, int conn) {
    std::vector<int> lab(m.size(), 0);
    int next = 0;
    for (std::size_t s = 0; s < m.size(); ++s) {
        if (!m.data[s] || lab[s]) continue;
        ++next;
        std::vector<std::size_t> stack{s};
        lab[s] = next;
        while (!stack.empty()) {
            const auto p = m.coords(stack.back());
            stack.pop_back();
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
                        if (l1 == 0 || (conn == 6 && l1 > 1)) continue;
                        const int x = p.x() + dx, y = p.y() + dy, z = p.z() + dz;
                        if (!m.contains(x, y, z)) continue;
                        const auto j = m.index(x, y, z);
                        if (m.data[j] && !lab[j]) {
                            lab[j] = next;
                            stack.push_back(j);
                        }
                    }
        }
    }
    return lab;
}

BinaryMask blank(int n) { return BinaryMask({n, n, n}, {1, 1, 1}, {0, 0, 0}, 0); }

void fill_box(BinaryMask& m, Eigen::Vector3i lo, Eigen::Vector3i hi, uint8_t v = 1) {
    for (int z = lo.z(); z <= hi.z(); ++z)
        for (int y = lo.y(); y <= hi.y(); ++y)
            for (int x = lo.x(); x <= hi.x(); ++x) m(x, y, z) = v;
}

// Blob of exactly n voxels laid out in x-fastest order inside a box starting at lo.
void fill_count(BinaryMask& m, Eigen::Vector3i lo, int side, int n) {
    for (int k = 0; k < n; ++k) m(lo.x() + k % side, lo.y() + (k / side) % side, lo.z() + k / (side * side)) = 1;
}

}  // namespace

TEST_CASE("threshold_mask: bone window, inclusive bounds, brute force") {
    VoxelVolume v({4, 4, 4}, {1, 1, 1}, {0, 0, 0}, 200);
    for (auto x : threshold_mask(v, 150, 3000).data) CHECK(x == 1);

    v(1, 2, 3) = 42;
    v(0, 0, 0) = 42;
    const auto m = threshold_mask(v, 42, 42);
    CHECK(count_true(m) == 2);
    CHECK(m(1, 2, 3) == 1);

    std::mt19937_64 rng(1);
    const auto r = testing::random_volume(rng, 8);
    const auto t = threshold_mask(r, -100, 900);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(t.data[i] == (r.data[i] >= -100 && r.data[i] <= 900));
    CHECK_THROWS_AS((void)threshold_mask(r, 10, 9), std::invalid_argument);
}

TEST_CASE("threshold_mask is monotone in the window") {
    std::mt19937_64 rng(2);
    const auto r = testing::random_volume(rng, 8);
    const auto narrow = threshold_mask(r, 0, 500), wide = threshold_mask(r, -200, 800);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(!(narrow.data[i] && !wide.data[i]));
}

TEST_CASE("connected_components: single voxel and diagonal adjacency") {
    auto m = blank(3);
    m(1, 1, 1) = 1;
    auto cc = connected_components(m, Connectivity::Six);
    CHECK(cc.count() == 1);
    CHECK(cc.sizes[0] == 1);

    auto d = blank(3);
    d(0, 0, 0) = 1;
    d(1, 1, 1) = 1;
    CHECK(connected_components(d, Connectivity::TwentySix).count() == 1);
    CHECK(connected_components(d, Connectivity::Six).count() == 2);
    CHECK_THROWS_AS((void)connectivity_from_int(18), std::invalid_argument);
}

TEST_CASE("connected_components: ordering by size then seed index") {
    auto m = blank(10);
    fill_count(m, {0, 0, 0}, 2, 3);  // seed index 0, size 3
    fill_count(m, {5, 5, 5}, 3, 7);  // size 7
    fill_count(m, {0, 5, 0}, 2, 3);  // same size as the first, larger seed
    const auto cc = connected_components(m, Connectivity::Six);
    REQUIRE(cc.count() == 3);
    CHECK(cc.sizes == std::vector<std::size_t>{7, 3, 3});
    CHECK(cc.labels(5, 5, 5) == 1);
    CHECK(cc.labels(0, 0, 0) == 2);
    CHECK(cc.labels(0, 5, 0) == 3);
}

TEST_CASE("connected_components agree with a DFS oracle on random masks") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 6 + trial % 7;  // up to 12^3
        const auto m = testing::random_mask(rng, {n, n, n}, trial % 2 ? 0.3 : 0.5);
        for (int conn : {6, 26}) {
            const auto cc = connected_components(m, connectivity_from_int(conn));
            const auto oracle = dfs_labels(m, conn);
            // Same partition: a bijection between label sets.
            std::map<int, int> fwd, back;
            bool ok = true;
            for (std::size_t i = 0; i < m.size(); ++i) {
                const int a = cc.labels.data[i], b = oracle[i];
                if ((a == 0) != (b == 0)) ok = false;
                if (a == 0) continue;
                if (fwd.count(a) && fwd[a] != b) ok = false;
                if (back.count(b) && back[b] != a) ok = false;
                fwd[a] = b;
                back[b] = a;
            }
            CHECK(ok);
            std::size_t total = 0;
            for (std::size_t k = 0; k < cc.sizes.size(); ++k) {
                total += cc.sizes[k];
                if (k > 0) CHECK(cc.sizes[k - 1] >= cc.sizes[k]);
            }
            CHECK(total == count_true(m));
            CHECK(static_cast<std::size_t>(cc.count()) == fwd.size());
        }
    }
}

TEST_CASE("remove_small_components: boundary, identity, two blobs, composition") {
    auto m = blank(20);
    fill_count(m, {1, 1, 1}, 5, 79);
    CHECK(count_true(remove_small_components(m, 80, Connectivity::TwentySix)) == 0);
    CHECK(remove_small_components(m, 0, Connectivity::TwentySix) == m);

    auto two = blank(20);
    fill_count(two, {0, 0, 0}, 4, 50);
    fill_count(two, {8, 8, 8}, 6, 200);
    const auto kept = remove_small_components(two, 80, Connectivity::TwentySix);
    CHECK(count_true(kept) == 200);
    CHECK(kept(8, 8, 8) == 1);
    CHECK(kept(0, 0, 0) == 0);

    std::mt19937_64 rng(9);
    for (int t = 0; t < 5; ++t) {
        const auto r = testing::random_mask(rng, {12, 12, 12}, 0.25);
        for (auto [a, b] : {std::pair{3, 7}, std::pair{10, 2}}) {
            const auto seq = remove_small_components(remove_small_components(r, a, Connectivity::Six), b, Connectivity::Six);
            CHECK(seq == remove_small_components(r, std::max(a, b), Connectivity::Six));
        }
    }
}

TEST_CASE("largest_component") {
    auto m = blank(12);
    fill_box(m, {1, 1, 1}, {3, 3, 3});
    CHECK(largest_component(m, Connectivity::TwentySix) == m);

    auto two = blank(12);
    fill_count(two, {0, 0, 0}, 3, 3);
    fill_count(two, {6, 6, 6}, 3, 10);
    const auto big = largest_component(two, Connectivity::TwentySix);
    CHECK(count_true(big) == 10);
    CHECK(big(6, 6, 6) == 1);
    CHECK_THROWS_AS((void)largest_component(blank(3), Connectivity::Six), std::invalid_argument);
}

TEST_CASE("skin_mask: solid cube, internal pocket, tissue equivalence") {
    VoxelVolume v({12, 12, 12}, {1, 1, 1}, {0, 0, 0}, kAirHU);
    for (int z = 3; z <= 8; ++z)
        for (int y = 3; y <= 8; ++y)
            for (int x = 3; x <= 8; ++x) v(x, y, z) = 100;
    auto cube = threshold_mask(v, -200, kMaxHU);
    CHECK(skin_mask(v) == cube);

    v(5, 5, 5) = kAirHU;
    v(6, 5, 5) = kAirHU;
    const auto pocket = skin_mask(v);
    CHECK(pocket(5, 5, 5) == 1);
    CHECK(pocket == cube);

    VoxelVolume air({4, 4, 4}, {1, 1, 1}, {0, 0, 0}, kAirHU);
    CHECK_THROWS_AS((void)skin_mask(air), std::invalid_argument);
}

TEST_CASE("skin_mask drops detached islands, keeps the body") {
    VoxelVolume v({16, 16, 16}, {1, 1, 1}, {0, 0, 0}, kAirHU);
    for (int z = 2; z <= 10; ++z)
        for (int y = 2; y <= 10; ++y)
            for (int x = 2; x <= 10; ++x) v(x, y, z) = 40;
    v(14, 14, 14) = 700;
    const auto s = skin_mask(v);
    CHECK(s(14, 14, 14) == 0);
    CHECK(count_true(s) == 9u * 9u * 9u);
}

TEST_CASE("bone_mask: empty when nothing reaches 150 HU; filters specks") {
    VoxelVolume v({20, 20, 20}, {1, 1, 1}, {0, 0, 0}, 40);
    CHECK(count_true(bone_mask(v)) == 0);
    for (int z = 2; z < 8; ++z)
        for (int y = 2; y < 8; ++y)
            for (int x = 2; x < 8; ++x) v(x, y, z) = 700;  // 216 voxels
    v(15, 15, 15) = 1200;
    v(17, 3, 12) = 200;
    const auto b = bone_mask(v);
    CHECK(count_true(b) == 216);
    CHECK(b(15, 15, 15) == 0);
}
