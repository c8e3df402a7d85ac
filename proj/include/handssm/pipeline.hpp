#pragma once

#include "handssm/anthropometry.hpp"
#include "handssm/mesh.hpp"
#include "handssm/metrics.hpp"
#include "handssm/phantom.hpp"
#include "handssm/registration.hpp"
#include "handssm/segmentation.hpp"
#include "handssm/skeleton.hpp"
#include "handssm/skinning.hpp"
#include "handssm/ssm.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace handssm {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StageToggles {
    bool mask_apply = false;
    bool segment = true;
    bool mesh = true;
    bool normalize = true;
    bool registration = true;
    bool ssm = true;
};

/// A subject directory holds volume.hvol, landmarks.json and optionally mask.hvol.
struct PipelineConfig {
    std::vector<std::filesystem::path> subjects;
    StageToggles stages;
    double resample_spacing = 0.0;  // 0 keeps the input grid
    SegmentationParams segmentation;
    double iso = 0.5;
    double smooth_factor = 0.25;
    BindParams bind;
    FieldParams fields;
    NormalizeParams normalize;
    CpdParams cpd = [] {
        CpdParams p;
        p.rank = 100;
        return p;
    }();
    /// Farthest-point samples per surface for registration; 0 uses every vertex.
    int subsample = 1500;
    SsmParams ssm;
    PerimeterMode perimeter = PerimeterMode::Hull;

    /// Relative subject paths resolve against `base`. Unknown keys and out-of-range values throw ConfigError.
    [[nodiscard]] static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
    [[nodiscard]] nlohmann::json to_json() const;
};

[[nodiscard]] PipelineConfig load_config(const std::filesystem::path& path);

struct SubjectStatus {
    std::string id;
    bool ok = false;
    std::string stage;  // failing stage
    std::string error;
};

struct BatchResult {
    std::vector<SubjectStatus> subjects;
    bool batch_ok = true;
    std::string batch_stage;
    std::string batch_error;
    std::string template_id;

    [[nodiscard]] int ok_count() const;
    /// 0 all ok, 2 partial failure, 3 nothing succeeded.
    [[nodiscard]] int exit_code() const;
};

/// Runs every enabled stage, writing artifacts, provenance records, summary.json and timings.json under `out_dir`.
/// Artifacts other than timings.json are byte-identical across reruns. Throws ConfigError without subjects.
BatchResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir, int jobs = 1);

[[nodiscard]] std::string sha256_hex(const std::string& bytes);
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
[[nodiscard]] std::string read_text(const std::filesystem::path& path);

[[nodiscard]] nlohmann::json measurements_json(const MeasurementSet& m);
[[nodiscard]] MeasurementSet measurements_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json mesh_report_json(const MeshReport& r);
[[nodiscard]] nlohmann::json diagnostics_json(const NormalizeDiagnostics& d);
[[nodiscard]] nlohmann::json ansur_json(const std::vector<AnsurRow>& rows);
/// Overlap metrics plus optional MAE and SSIM, rounded to 6 decimals, with the clinical reference values.
[[nodiscard]] nlohmann::json metrics_json(const OverlapReport& overlap, const SimilarityReport* similarity);

/// {"flexion_deg": {"joint": deg}} or {"rotations": {"joint": [w, x, y, z]}}.
[[nodiscard]] Pose pose_from_json(const Skeleton& skel, const nlohmann::json& j);

/// Writes a subject directory: volume.hvol, landmarks.json, skin_gt.hvol, bone_gt.hvol and ground_truth.json.
void write_phantom(const Phantom& phantom, const std::filesystem::path& dir);

/// Landmark-driven standard-pose normalization of one mesh.
struct Normalized {
    TriMesh mesh;
    LandmarkSet landmarks;
    NormalizeDiagnostics diagnostics;
};
[[nodiscard]] Normalized normalize_mesh(const TriMesh& mesh, const LandmarkSet& landmarks, const Pose* pose,
                                        const PipelineConfig& config, const BinaryMask* interior = nullptr);

}  // namespace handssm
