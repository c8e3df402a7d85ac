#include "handssm/volume.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace handssm {

static_assert(std::endian::native == std::endian::little, "HVOL payload handling assumes a little-endian host");

void validate_volume(const VoxelVolume& vol) {
    if ((vol.dims.array() <= 0).any()) throw std::invalid_argument("volume dims must be positive");
    if ((vol.spacing.array() <= 0.0).any() || !vol.spacing.allFinite())
        throw std::invalid_argument("volume spacing must be positive");
    if (vol.data.size() != static_cast<std::size_t>(vol.dims.cast<long long>().prod()))
        throw std::invalid_argument("volume payload length does not match dims");
    for (int16_t v : vol.data)
        if (v < kMinHU || v > kMaxHU) throw std::invalid_argument("volume contains values outside [-1024, 3071] HU");
}

std::size_t count_true(const BinaryMask& mask) {
    return static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](uint8_t v) { return v != 0; }));
}

namespace {

using nlohmann::json;

template <typename T>
std::string encode(const Grid<T>& g, const char* dtype) {
    json h;
    h["magic"] = "HVOL1";
    h["dims"] = {g.dims.x(), g.dims.y(), g.dims.z()};
    h["spacing_mm"] = {g.spacing.x(), g.spacing.y(), g.spacing.z()};
    h["origin_mm"] = {g.origin.x(), g.origin.y(), g.origin.z()};
    h["dtype"] = dtype;
    std::string out = h.dump();
    out.push_back('\n');
    const auto* bytes = reinterpret_cast<const char*>(g.data.data());
    out.append(bytes, g.data.size() * sizeof(T));
    return out;
}

struct Header {
    Eigen::Vector3i dims;
    Eigen::Vector3d spacing;
    Eigen::Vector3d origin;
    std::string dtype;
    std::size_t payload_offset = 0;
};

Header parse_header(const std::string& bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw HvolError(HvolErrorCode::MalformedHeader, "HVOL: missing header terminator");
    json h;
    try {
        h = json::parse(bytes.substr(0, nl));
    } catch (const json::exception& e) {
        throw HvolError(HvolErrorCode::MalformedHeader, std::string("HVOL: header is not valid JSON: ") + e.what());
    }
    Header out;
    try {
        if (h.at("magic").get<std::string>() != "HVOL1")
            throw HvolError(HvolErrorCode::MalformedHeader, "HVOL: bad magic");
        const auto d = h.at("dims").get<std::vector<long long>>();
        const auto s = h.at("spacing_mm").get<std::vector<double>>();
        const auto o = h.at("origin_mm").get<std::vector<double>>();
        if (d.size() != 3 || s.size() != 3 || o.size() != 3)
            throw HvolError(HvolErrorCode::MalformedHeader, "HVOL: dims/spacing/origin need three components");
        for (int i = 0; i < 3; ++i) {
            if (d[i] <= 0 || d[i] > (1LL << 20))
                throw HvolError(HvolErrorCode::MalformedHeader, "HVOL: dims must be positive");
            if (!(s[i] > 0.0) || !std::isfinite(s[i]))
                throw HvolError(HvolErrorCode::MalformedHeader, "HVOL: spacing must be positive");
            if (!std::isfinite(o[i])) throw HvolError(HvolErrorCode::MalformedHeader, "HVOL: origin must be finite");
            out.dims[i] = static_cast<int>(d[i]);
            out.spacing[i] = s[i];
            out.origin[i] = o[i];
        }
        out.dtype = h.at("dtype").get<std::string>();
    } catch (const json::exception& e) {
        throw HvolError(HvolErrorCode::MalformedHeader, std::string("HVOL: ") + e.what());
    }
    out.payload_offset = nl + 1;
    return out;
}

template <typename T>
Grid<T> decode(const std::string& bytes, const char* dtype) {
    const Header h = parse_header(bytes);
    if (h.dtype != dtype)
        throw HvolError(HvolErrorCode::WrongDtype, "HVOL: expected dtype " + std::string(dtype) + ", found " + h.dtype);
    Grid<T> g;
    g.dims = h.dims;
    g.spacing = h.spacing;
    g.origin = h.origin;
    const auto count = static_cast<std::size_t>(h.dims.cast<long long>().prod());
    const std::size_t have = bytes.size() - h.payload_offset;
    const std::size_t need = count * sizeof(T);
    if (have < need)
        throw HvolError(HvolErrorCode::TruncatedPayload,
                        "HVOL: truncated payload (" + std::to_string(have) + " of " + std::to_string(need) + " bytes)");
    if (have > need)
        throw HvolError(HvolErrorCode::SizeMismatch,
                        "HVOL: payload has " + std::to_string(have) + " bytes, dims require " + std::to_string(need));
    g.data.resize(count);
    std::copy_n(bytes.data() + h.payload_offset, need, reinterpret_cast<char*>(g.data.data()));
    return g;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw HvolError(HvolErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void spit(const std::string& bytes, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw HvolError(HvolErrorCode::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw HvolError(HvolErrorCode::Io, "write failed for " + path.string());
}

}  // namespace

std::string encode_volume(const VoxelVolume& vol) {
    validate_volume(vol);
    return encode(vol, "i16le");
}

std::string encode_mask(const BinaryMask& mask) {
    if (mask.data.size() != static_cast<std::size_t>(mask.dims.cast<long long>().prod()))
        throw std::invalid_argument("mask payload length does not match dims");
    BinaryMask norm = mask;
    for (auto& v : norm.data) v = v ? 1 : 0;
    return encode(norm, "u8");
}

VoxelVolume decode_volume(const std::string& bytes) {
    auto vol = decode<int16_t>(bytes, "i16le");
    for (int16_t v : vol.data)
        if (v < kMinHU || v > kMaxHU)
            throw HvolError(HvolErrorCode::InvalidValue, "HVOL: value " + std::to_string(v) + " outside HU range");
    return vol;
}

BinaryMask decode_mask(const std::string& bytes) {
    auto m = decode<uint8_t>(bytes, "u8");
    for (auto& v : m.data) v = v ? 1 : 0;
    return m;
}

VoxelVolume read_volume(const std::filesystem::path& path) { return decode_volume(slurp(path)); }
void write_volume(const VoxelVolume& vol, const std::filesystem::path& path) { spit(encode_volume(vol), path); }
BinaryMask read_mask(const std::filesystem::path& path) { return decode_mask(slurp(path)); }
void write_mask(const BinaryMask& mask, const std::filesystem::path& path) { spit(encode_mask(mask), path); }

VoxelVolume resample_isotropic(const VoxelVolume& vol, double target_spacing) {
    if (!(target_spacing > 0.0) || !std::isfinite(target_spacing))
        throw std::invalid_argument("resample_isotropic: target spacing must be positive");
    validate_volume(vol);

    Eigen::Vector3i dims;
    for (int a = 0; a < 3; ++a) {
        // Guard against 10.000000001-style ceil overshoot from representation error.
        const double n = vol.extent_mm()[a] / target_spacing;
        dims[a] = std::max(1, static_cast<int>(std::ceil(n - 1e-9)));
    }
    VoxelVolume out(dims, Eigen::Vector3d::Constant(target_spacing), vol.origin, kAirHU);

    const Eigen::Vector3d scale = Eigen::Vector3d::Constant(target_spacing).cwiseQuotient(vol.spacing);
    const Eigen::Vector3i last = vol.dims.array() - 1;
    constexpr double eps = 1e-9;

    for (int z = 0; z < dims.z(); ++z)
        for (int y = 0; y < dims.y(); ++y)
            for (int x = 0; x < dims.x(); ++x) {
                const Eigen::Vector3d u = scale.cwiseProduct(Eigen::Vector3d(x, y, z));
                if ((u.array() < -eps).any() || (u.array() > last.cast<double>().array() + eps).any()) continue;
                Eigen::Vector3i i0;
                Eigen::Vector3d f;
                for (int a = 0; a < 3; ++a) {
                    const double c = std::clamp(u[a], 0.0, static_cast<double>(last[a]));
                    i0[a] = std::min(static_cast<int>(std::floor(c)), last[a]);
                    f[a] = c - i0[a];
                }
                const Eigen::Vector3i i1 = (i0.array() + 1).min(last.array());
                auto at = [&](int ix, int iy, int iz) { return static_cast<double>(vol(ix, iy, iz)); };
                const double c00 = at(i0.x(), i0.y(), i0.z()) * (1 - f.x()) + at(i1.x(), i0.y(), i0.z()) * f.x();
                const double c10 = at(i0.x(), i1.y(), i0.z()) * (1 - f.x()) + at(i1.x(), i1.y(), i0.z()) * f.x();
                const double c01 = at(i0.x(), i0.y(), i1.z()) * (1 - f.x()) + at(i1.x(), i0.y(), i1.z()) * f.x();
                const double c11 = at(i0.x(), i1.y(), i1.z()) * (1 - f.x()) + at(i1.x(), i1.y(), i1.z()) * f.x();
                const double c0 = c00 * (1 - f.y()) + c10 * f.y();
                const double c1 = c01 * (1 - f.y()) + c11 * f.y();
                const double v = std::round(c0 * (1 - f.z()) + c1 * f.z());
                out(x, y, z) = static_cast<int16_t>(std::clamp(v, double(kMinHU), double(kMaxHU)));
            }
    return out;
}

VoxelVolume apply_mask(const VoxelVolume& vol, const BinaryMask& mask, int16_t fill) {
    require_aligned(vol, mask, "apply_mask");
    if (fill < kMinHU || fill > kMaxHU) throw std::invalid_argument("apply_mask: fill outside HU range");
    VoxelVolume out = vol;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (!mask.data[i]) out.data[i] = fill;
    return out;
}

}  // namespace handssm
