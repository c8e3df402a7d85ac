#pragma once

#include "handssm/grid.hpp"
#include "handssm/mesh.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>

namespace handssm::testing {

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("handssm_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline VoxelVolume random_volume(std::mt19937_64& rng, int n, int lo = kMinHU, int hi = kMaxHU) {
    VoxelVolume v({n, n, n}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero());
    std::uniform_int_distribution<int> d(lo, hi);
    for (auto& x : v.data) x = static_cast<int16_t>(d(rng));
    return v;
}

inline BinaryMask random_mask(std::mt19937_64& rng, const Eigen::Vector3i& dims, double p = 0.5) {
    BinaryMask m(dims, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero());
    std::bernoulli_distribution d(p);
    for (auto& x : m.data) x = d(rng) ? 1 : 0;
    return m;
}

inline TriMesh icosphere(int subdivisions, double radius) {
    const double t = (1 + std::sqrt(5.0)) / 2;
    std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                                      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    std::vector<Eigen::Vector3i> f = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                                      {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
                                      {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> mid;
        auto midpoint = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            v.push_back(0.5 * (v[a] + v[b]));
            return mid[key] = static_cast<int>(v.size()) - 1;
        };
        std::vector<Eigen::Vector3i> g;
        for (const auto& tri : f) {
            const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
            g.push_back({tri[0], a, c});
            g.push_back({tri[1], b, a});
            g.push_back({tri[2], c, b});
            g.push_back({a, b, c});
        }
        f = g;
    }
    TriMesh m;
    m.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
    for (std::size_t i = 0; i < v.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = radius * v[i].normalized();
    m.triangles.resize(static_cast<Eigen::Index>(f.size()), 3);
    for (std::size_t i = 0; i < f.size(); ++i) m.triangles.row(static_cast<Eigen::Index>(i)) = f[i];
    return m;
}

/// Closed cylinder along z, centered at the origin, with fan caps.
inline TriMesh cylinder_mesh(double radius, double height, int around, int rings) {
    std::vector<Eigen::Vector3d> v;
    std::vector<Eigen::Vector3i> f;
    for (int r = 0; r <= rings; ++r)
        for (int k = 0; k < around; ++k) {
            const double a = 2 * std::numbers::pi * k / around;
            v.emplace_back(radius * std::cos(a), radius * std::sin(a), -0.5 * height + height * r / rings);
        }
    const auto id = [&](int r, int k) { return r * around + (k % around); };
    for (int r = 0; r < rings; ++r)
        for (int k = 0; k < around; ++k) {
            f.emplace_back(id(r, k), id(r, k + 1), id(r + 1, k + 1));
            f.emplace_back(id(r, k), id(r + 1, k + 1), id(r + 1, k));
        }
    const int bottom = static_cast<int>(v.size()), top = bottom + 1;
    v.emplace_back(0, 0, -0.5 * height);
    v.emplace_back(0, 0, 0.5 * height);
    for (int k = 0; k < around; ++k) {
        f.emplace_back(bottom, id(0, k + 1), id(0, k));
        f.emplace_back(top, id(rings, k), id(rings, k + 1));
    }
    TriMesh m;
    m.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
    for (std::size_t i = 0; i < v.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = v[i];
    m.triangles.resize(static_cast<Eigen::Index>(f.size()), 3);
    for (std::size_t i = 0; i < f.size(); ++i) m.triangles.row(static_cast<Eigen::Index>(i)) = f[i];
    return m;
}

}  // namespace handssm::testing
