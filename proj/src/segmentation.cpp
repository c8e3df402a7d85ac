#include "handssm/segmentation.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <stdexcept>

namespace handssm {

Connectivity connectivity_from_int(int c) {
    if (c == 6) return Connectivity::Six;
    if (c == 26) return Connectivity::TwentySix;
    throw std::invalid_argument("connectivity must be 6 or 26");
}

namespace {

std::vector<Eigen::Vector3i> neighbourhood(Connectivity conn) {
    std::vector<Eigen::Vector3i> offs;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if (conn == Connectivity::Six && manhattan != 1) continue;
                offs.emplace_back(dx, dy, dz);
            }
    return offs;
}

// Breadth-first flood from a seed set; visits voxels where `passable` holds.
template <typename Pred>
void flood(const Eigen::Vector3i& dims, std::vector<std::size_t>& queue, std::vector<uint8_t>& visited,
           const std::vector<Eigen::Vector3i>& offs, Pred passable) {
    const auto nx = static_cast<std::size_t>(dims.x());
    const auto nxy = nx * static_cast<std::size_t>(dims.y());
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const std::size_t i = queue[head];
        const int x = static_cast<int>(i % nx), y = static_cast<int>((i / nx) % dims.y()),
                  z = static_cast<int>(i / nxy);
        for (const auto& o : offs) {
            const int xx = x + o.x(), yy = y + o.y(), zz = z + o.z();
            if (xx < 0 || yy < 0 || zz < 0 || xx >= dims.x() || yy >= dims.y() || zz >= dims.z()) continue;
            const std::size_t j = static_cast<std::size_t>(xx) + nx * static_cast<std::size_t>(yy) +
                                  nxy * static_cast<std::size_t>(zz);
            if (visited[j] || !passable(j)) continue;
            visited[j] = 1;
            queue.push_back(j);
        }
    }
}

}  // namespace

BinaryMask threshold_mask(const VoxelVolume& vol, int lo, int hi) {
    if (lo > hi) throw std::invalid_argument("threshold_mask: lo > hi");
    BinaryMask m = vol.like<uint8_t>(0);
    for (std::size_t i = 0; i < vol.data.size(); ++i) m.data[i] = (vol.data[i] >= lo && vol.data[i] <= hi) ? 1 : 0;
    return m;
}

Components connected_components(const BinaryMask& mask, Connectivity conn) {
    const auto offs = neighbourhood(conn);
    LabelField provisional = mask.like<int32_t>(0);
    std::vector<uint8_t> visited(mask.size(), 0);
    std::vector<std::size_t> queue;
    std::vector<std::size_t> sizes;  // by discovery order, i.e. ascending seed index

    for (std::size_t seed = 0; seed < mask.size(); ++seed) {
        if (!mask.data[seed] || visited[seed]) continue;
        queue.clear();
        queue.push_back(seed);
        visited[seed] = 1;
        flood(mask.dims, queue, visited, offs, [&](std::size_t j) { return mask.data[j] != 0; });
        const auto label = static_cast<int32_t>(sizes.size() + 1);
        for (auto j : queue) provisional.data[j] = label;
        sizes.push_back(queue.size());
    }

    std::vector<int> order(sizes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
    std::vector<int32_t> remap(sizes.size() + 1, 0);
    Components out;
    out.sizes.reserve(sizes.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        remap[order[k] + 1] = static_cast<int32_t>(k + 1);
        out.sizes.push_back(sizes[order[k]]);
    }
    out.labels = std::move(provisional);
    for (auto& l : out.labels.data) l = remap[l];
    return out;
}

BinaryMask remove_small_components(const BinaryMask& mask, int min_voxels, Connectivity conn) {
    if (min_voxels < 0) throw std::invalid_argument("remove_small_components: min_voxels < 0");
    if (min_voxels <= 1) {
        BinaryMask out = mask;
        for (auto& v : out.data) v = v ? 1 : 0;
        return out;
    }
    const Components cc = connected_components(mask, conn);
    BinaryMask out = mask.like<uint8_t>(0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const int32_t l = cc.labels.data[i];
        out.data[i] = (l > 0 && cc.sizes[l - 1] >= static_cast<std::size_t>(min_voxels)) ? 1 : 0;
    }
    return out;
}

BinaryMask largest_component(const BinaryMask& mask, Connectivity conn) {
    const Components cc = connected_components(mask, conn);
    if (cc.count() == 0) throw std::invalid_argument("largest_component: mask is empty");
    BinaryMask out = mask.like<uint8_t>(0);
    for (std::size_t i = 0; i < mask.size(); ++i) out.data[i] = cc.labels.data[i] == 1 ? 1 : 0;
    return out;
}

BinaryMask skin_mask(const VoxelVolume& vol, const SegmentationParams& params) {
    if (vol.empty()) throw std::invalid_argument("skin_mask: empty volume");
    const auto is_air = [&](std::size_t i) { return vol.data[i] < params.air_threshold; };

    std::vector<uint8_t> outside(vol.size(), 0);
    std::vector<std::size_t> queue;
    const Eigen::Vector3i& d = vol.dims;
    for (int z = 0; z < d.z(); ++z)
        for (int y = 0; y < d.y(); ++y)
            for (int x = 0; x < d.x(); ++x) {
                const bool border = x == 0 || y == 0 || z == 0 || x == d.x() - 1 || y == d.y() - 1 || z == d.z() - 1;
                if (!border) continue;
                const std::size_t i = vol.index(x, y, z);
                if (is_air(i)) {
                    outside[i] = 1;
                    queue.push_back(i);
                }
            }
    flood(d, queue, outside, neighbourhood(Connectivity::Six), is_air);

    BinaryMask body = vol.like<uint8_t>(0);
    bool any = false;
    for (std::size_t i = 0; i < vol.size(); ++i) {
        body.data[i] = outside[i] ? 0 : 1;
        any = any || body.data[i];
    }
    if (!any) throw std::invalid_argument("skin_mask: entire volume classified as air");
    return largest_component(body, Connectivity::TwentySix);
}

BinaryMask bone_mask(const VoxelVolume& vol, const SegmentationParams& params) {
    if (vol.empty()) throw std::invalid_argument("bone_mask: empty volume");
    return remove_small_components(threshold_mask(vol, params.bone_lo, params.bone_hi), params.min_bone_voxels,
                                   Connectivity::TwentySix);
}

}  // namespace handssm
