#pragma once

#include "handssm/grid.hpp"

#include <cstdint>
#include <vector>

namespace handssm {

enum class Connectivity { Six = 6, TwentySix = 26 };

[[nodiscard]] Connectivity connectivity_from_int(int c);

/// Labels sorted by descending component size; ties go to the component whose
/// first voxel (in x-fastest scan order) has the smaller linear index.
struct Components {
    LabelField labels;
    std::vector<std::size_t> sizes;  ///< sizes[k] is the voxel count of label k+1
    [[nodiscard]] int count() const { return static_cast<int>(sizes.size()); }
};

struct SegmentationParams {
    int16_t air_threshold = -200;
    int16_t bone_lo = 150;
    int16_t bone_hi = 3000;
    int min_bone_voxels = 80;
};

[[nodiscard]] BinaryMask threshold_mask(const VoxelVolume& vol, int lo, int hi);

[[nodiscard]] Components connected_components(const BinaryMask& mask, Connectivity conn);

[[nodiscard]] BinaryMask remove_small_components(const BinaryMask& mask, int min_voxels, Connectivity conn);

[[nodiscard]] BinaryMask largest_component(const BinaryMask& mask, Connectivity conn);

/// External soft-tissue envelope: everything not reachable from the border
/// through air (6-adjacent flood), reduced to its largest 26-connected body.
[[nodiscard]] BinaryMask skin_mask(const VoxelVolume& vol, const SegmentationParams& params = {});

/// Bone window threshold followed by the small-component filter (26-adjacency).
[[nodiscard]] BinaryMask bone_mask(const VoxelVolume& vol, const SegmentationParams& params = {});

}  // namespace handssm
