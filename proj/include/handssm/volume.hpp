#pragma once

#include "handssm/grid.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace handssm {

/// Failure modes of the HVOL container reader/writer.
enum class HvolErrorCode {
    Io,
    MalformedHeader,
    TruncatedPayload,
    SizeMismatch,
    WrongDtype,
    InvalidValue,
};

class HvolError : public std::runtime_error {
public:
    HvolError(HvolErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] HvolErrorCode code() const { return code_; }

private:
    HvolErrorCode code_;
};

// HVOL: one line of compact JSON header, '\n', then the raw little-endian payload.
// Header keys: magic "HVOL1", dims, spacing_mm, origin_mm, dtype ("i16le" | "u8").

[[nodiscard]] VoxelVolume read_volume(const std::filesystem::path& path);
void write_volume(const VoxelVolume& vol, const std::filesystem::path& path);

[[nodiscard]] BinaryMask read_mask(const std::filesystem::path& path);
void write_mask(const BinaryMask& mask, const std::filesystem::path& path);

/// In-memory encoding, byte-identical to the file contents.
[[nodiscard]] std::string encode_volume(const VoxelVolume& vol);
[[nodiscard]] std::string encode_mask(const BinaryMask& mask);
[[nodiscard]] VoxelVolume decode_volume(const std::string& bytes);
[[nodiscard]] BinaryMask decode_mask(const std::string& bytes);

/// Trilinear resampling onto an isotropic grid with the same origin.
/// New dims are ceil(extent / target); samples outside the source are air.
[[nodiscard]] VoxelVolume resample_isotropic(const VoxelVolume& vol, double target_spacing);

/// Voxels where the mask is false are replaced by `fill`.
[[nodiscard]] VoxelVolume apply_mask(const VoxelVolume& vol, const BinaryMask& mask, int16_t fill = kAirHU);

}  // namespace handssm
