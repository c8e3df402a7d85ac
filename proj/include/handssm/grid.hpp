#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace handssm {

/// Hounsfield range representable in a volume.
inline constexpr int16_t kMinHU = -1024;
inline constexpr int16_t kMaxHU = 3071;
inline constexpr int16_t kAirHU = -1000;

/// Regular 3D grid in physical space, x-fastest then y then z.
template <typename T>
struct Grid {
    using value_type = T;

    Eigen::Vector3i dims = Eigen::Vector3i::Zero();
    Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    std::vector<T> data;

    Grid() = default;
    Grid(const Eigen::Vector3i& d, const Eigen::Vector3d& s, const Eigen::Vector3d& o, T fill = T{})
        : dims(d), spacing(s), origin(o), data(static_cast<std::size_t>(d.prod()), fill) {
        if ((d.array() <= 0).any()) throw std::invalid_argument("grid dims must be positive");
        if ((s.array() <= 0.0).any()) throw std::invalid_argument("grid spacing must be positive");
    }

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] bool empty() const { return data.empty(); }

    [[nodiscard]] std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims.x()) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y()) * static_cast<std::size_t>(z));
    }
    [[nodiscard]] Eigen::Vector3i coords(std::size_t i) const {
        const auto nx = static_cast<std::size_t>(dims.x());
        const auto ny = static_cast<std::size_t>(dims.y());
        return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny), static_cast<int>(i / (nx * ny))};
    }
    [[nodiscard]] bool contains(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < dims.x() && y < dims.y() && z < dims.z();
    }

    T& operator()(int x, int y, int z) { return data[index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const { return data[index(x, y, z)]; }

    /// Physical position (mm) of a voxel center.
    [[nodiscard]] Eigen::Vector3d position(int x, int y, int z) const {
        return origin + spacing.cwiseProduct(Eigen::Vector3d(x, y, z));
    }
    [[nodiscard]] Eigen::Vector3d extent_mm() const { return dims.cast<double>().cwiseProduct(spacing); }

    template <typename U>
    [[nodiscard]] bool aligned_with(const Grid<U>& other) const {
        return dims == other.dims && spacing == other.spacing && origin == other.origin;
    }

    /// Same geometry, new payload type.
    template <typename U>
    [[nodiscard]] Grid<U> like(U fill = U{}) const {
        Grid<U> g;
        g.dims = dims;
        g.spacing = spacing;
        g.origin = origin;
        g.data.assign(data.size(), fill);
        return g;
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin && a.data == b.data;
    }
};

using VoxelVolume = Grid<int16_t>;
using BinaryMask = Grid<uint8_t>;
using LabelField = Grid<int32_t>;

class GridMismatch : public std::invalid_argument {
public:
    explicit GridMismatch(const std::string& what) : std::invalid_argument(what) {}
};

template <typename A, typename B>
void require_aligned(const Grid<A>& a, const Grid<B>& b, const char* where) {
    if (!a.aligned_with(b)) throw GridMismatch(std::string(where) + ": grids are not aligned");
}

/// Checks dims, spacing, payload length and the HU range.
void validate_volume(const VoxelVolume& vol);

[[nodiscard]] std::size_t count_true(const BinaryMask& mask);

}  // namespace handssm
