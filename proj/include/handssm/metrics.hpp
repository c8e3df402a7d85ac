#pragma once

#include "handssm/grid.hpp"

#include <cstdint>

namespace handssm {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct OverlapReport {
    double dice = 1.0;
    double iou = 1.0;
    double precision = 1.0;
    double recall = 1.0;
    double pixel_accuracy = 1.0;
};

struct SimilarityReport {
    double mae = 0.0;
    double ssim = 1.0;
};

/// Mean values on the held-out clinical test set, for side-by-side display only.
struct ReferenceOverlap {
    static constexpr double dice = 0.9856;
    static constexpr double iou = 0.9720;
    static constexpr double precision = 0.9844;
    static constexpr double recall = 0.9872;
    static constexpr double pixel_accuracy = 0.9988;
};

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 4095.0;
};

[[nodiscard]] ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

/// Ratios from confusion counts; a 0/0 ratio is 1 (both empty is agreement).
[[nodiscard]] OverlapReport overlap_from_counts(const ConfusionCounts& c);

[[nodiscard]] OverlapReport overlap_metrics(const BinaryMask& pred, const BinaryMask& gt);

/// MAE over all voxels; SSIM per axial (z) slice with a Gaussian window, averaged over slices.
[[nodiscard]] SimilarityReport image_similarity(const VoxelVolume& a, const VoxelVolume& b,
                                                const SsimParams& params = {});

}  // namespace handssm
