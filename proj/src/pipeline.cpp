#include "handssm/pipeline.hpp"

#include "handssm/parallel.hpp"
#include "handssm/volume.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace handssm {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

namespace {

class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }
    ~Section() = default;

    void number(const char* key, double& out, double lo, double hi, bool lo_open = false) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(path(key) + ": expected a number");
            const double x = v->get<double>();
            if (!(lo_open ? x > lo : x >= lo) || !(x <= hi)) throw ConfigError(path(key) + ": out of range");
            out = x;
        }
    }
    template <typename I>
    void integer(const char* key, I& out, long long lo, long long hi) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
            const auto x = v->get<long long>();
            if (x < lo || x > hi) throw ConfigError(path(key) + ": out of range");
            out = static_cast<I>(x);
        }
    }
    void boolean(const char* key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(path(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }
    void string(const char* key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(path(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }
    const json* child(const char* key) { return find(key); }
    [[nodiscard]] std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

    /// Rejects keys nobody asked for.
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + (where_.empty() ? k : where_ + "." + k) + "'");
    }

private:
    const json* find(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base) {
    PipelineConfig c;
    Section root(j, "");
    if (const json* s = root.child("subjects")) {
        if (!s->is_array()) throw ConfigError("subjects: expected an array of directories");
        for (const auto& e : *s) {
            if (!e.is_string()) throw ConfigError("subjects: expected an array of directories");
            const fs::path p = e.get<std::string>();
            c.subjects.push_back(p.is_absolute() ? p : base / p);
        }
    }
    std::string subjects_dir;
    root.string("subjects_dir", subjects_dir);
    if (!subjects_dir.empty()) {
        fs::path d = subjects_dir;
        if (!d.is_absolute()) d = base / d;
        if (!fs::is_directory(d)) throw ConfigError("subjects_dir: not a directory: " + d.string());
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(d))
            if (e.is_directory()) found.push_back(e.path());
        std::sort(found.begin(), found.end());
        c.subjects.insert(c.subjects.end(), found.begin(), found.end());
    }
    std::set<std::string> ids;
    for (const auto& s : c.subjects)
        if (!ids.insert(s.filename().string()).second) throw ConfigError("duplicate subject id '" + s.filename().string() + "'");

    if (const json* s = root.child("stages")) {
        Section st(*s, "stages");
        st.boolean("mask_apply", c.stages.mask_apply);
        st.boolean("segment", c.stages.segment);
        st.boolean("mesh", c.stages.mesh);
        st.boolean("normalize", c.stages.normalize);
        st.boolean("register", c.stages.registration);
        st.boolean("ssm", c.stages.ssm);
        st.finish();
    }
    if (c.stages.mesh && !c.stages.segment) throw ConfigError("stages: mesh needs segment");
    if (c.stages.normalize && !c.stages.mesh) throw ConfigError("stages: normalize needs mesh");
    if (c.stages.registration && !c.stages.mesh) throw ConfigError("stages: register needs mesh");
    if (c.stages.ssm && !c.stages.registration) throw ConfigError("stages: ssm needs register");

    root.number("resample_spacing", c.resample_spacing, 0.0, 100.0);
    if (const json* s = root.child("segmentation")) {
        Section st(*s, "segmentation");
        st.integer("air_threshold", c.segmentation.air_threshold, kMinHU, kMaxHU);
        st.integer("bone_lo", c.segmentation.bone_lo, kMinHU, kMaxHU);
        st.integer("bone_hi", c.segmentation.bone_hi, kMinHU, kMaxHU);
        st.integer("min_bone_voxels", c.segmentation.min_bone_voxels, 0, 1LL << 30);
        st.finish();
        if (c.segmentation.bone_lo > c.segmentation.bone_hi) throw ConfigError("segmentation: bone_lo exceeds bone_hi");
    }
    if (const json* s = root.child("mesh")) {
        Section st(*s, "mesh");
        st.number("iso", c.iso, 0.0, 1.0, true);
        st.number("smooth_factor", c.smooth_factor, 0.0, 10.0);
        st.finish();
        if (!(c.iso < 1.0)) throw ConfigError("mesh.iso: out of range");
    }
    if (const json* s = root.child("skinning")) {
        Section st(*s, "skinning");
        st.integer("smoothing_iterations", c.bind.smoothing_iterations, 0, 10000);
        st.boolean("geodesic", c.bind.geodesic);
        st.integer("max_centers", c.fields.max_centers, 4, 1000);
        st.number("support_scale", c.fields.support_scale, 0.0, 100.0, true);
        st.integer("max_iterations", c.normalize.max_iterations, 0, 1000);
        st.number("step_clamp", c.normalize.step_clamp, 0.0, 100.0, true);
        st.number("iso_tolerance", c.normalize.iso_tolerance, 0.0, 1.0, true);
        st.finish();
    }
    if (const json* s = root.child("registration")) {
        Section st(*s, "registration");
        st.number("beta", c.cpd.beta, 0.0, 1e6, true);
        st.number("lambda", c.cpd.lambda, 0.0, 1e6, true);
        st.number("w", c.cpd.w, 0.0, 1.0);
        st.integer("max_iters", c.cpd.max_iters, 1, 100000);
        st.number("tol", c.cpd.tol, 0.0, 1.0);
        std::string kernel = kernel_name(c.cpd.kernel);
        st.string("kernel", kernel);
        try {
            c.cpd.kernel = parse_kernel(kernel);
        } catch (const RegistrationError& e) {
            throw ConfigError(std::string("registration.kernel: ") + e.what());
        }
        st.integer("rank", c.cpd.rank, 0, 1000000);
        st.integer("subsample", c.subsample, 0, 100000000);
        st.finish();
        if (!(c.cpd.w < 1.0)) throw ConfigError("registration.w: out of range");
        if (c.cpd.kernel == KernelType::Geodesic && c.subsample != 0)
            throw ConfigError("registration: the geodesic kernel needs subsample 0 (whole template mesh)");
    }
    if (const json* s = root.child("ssm")) {
        Section st(*s, "ssm");
        st.number("variance_coverage", c.ssm.variance_coverage, 0.0, 1.0, true);
        st.finish();
    }
    if (const json* s = root.child("measurement")) {
        Section st(*s, "measurement");
        std::string mode = "hull";
        st.string("perimeter", mode);
        st.finish();
        if (mode == "hull")
            c.perimeter = PerimeterMode::Hull;
        else if (mode == "polygon")
            c.perimeter = PerimeterMode::Polygon;
        else
            throw ConfigError("measurement.perimeter: expected 'hull' or 'polygon'");
    }
    root.finish();
    return c;
}

json PipelineConfig::to_json() const {
    json j;
    j["subjects"] = json::array();
    for (const auto& s : subjects) j["subjects"].push_back(s.filename().string());
    j["stages"] = {{"mask_apply", stages.mask_apply}, {"segment", stages.segment}, {"mesh", stages.mesh},
                   {"normalize", stages.normalize}, {"register", stages.registration}, {"ssm", stages.ssm}};
    j["resample_spacing"] = resample_spacing;
    j["segmentation"] = {{"air_threshold", segmentation.air_threshold}, {"bone_lo", segmentation.bone_lo},
                         {"bone_hi", segmentation.bone_hi}, {"min_bone_voxels", segmentation.min_bone_voxels}};
    j["mesh"] = {{"iso", iso}, {"smooth_factor", smooth_factor}};
    j["skinning"] = {{"smoothing_iterations", bind.smoothing_iterations}, {"geodesic", bind.geodesic},
                     {"max_centers", fields.max_centers}, {"support_scale", fields.support_scale},
                     {"max_iterations", normalize.max_iterations}, {"step_clamp", normalize.step_clamp},
                     {"iso_tolerance", normalize.iso_tolerance}};
    j["registration"] = {{"beta", cpd.beta}, {"lambda", cpd.lambda}, {"w", cpd.w}, {"max_iters", cpd.max_iters},
                         {"tol", cpd.tol}, {"kernel", kernel_name(cpd.kernel)}, {"rank", cpd.rank}, {"subsample", subsample}};
    j["ssm"] = {{"variance_coverage", ssm.variance_coverage}};
    j["measurement"] = {{"perimeter", perimeter == PerimeterMode::Hull ? "hull" : "polygon"}};
    return j;
}

PipelineConfig load_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return PipelineConfig::from_json(j, path.parent_path());
}

// ---------------------------------------------------------------- helpers

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return out.str();
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

json measurements_json(const MeasurementSet& m) {
    json j = {{"units", "mm"}};
    const auto v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) j[kMeasurementNames[i]] = v[i];
    return j;
}

MeasurementSet measurements_from_json(const json& j) {
    std::array<double, 5> v{};
    try {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = j.at(kMeasurementNames[i]).get<double>();
    } catch (const json::exception& e) {
        throw MeasurementError(std::string("measurement file: ") + e.what());
    }
    return MeasurementSet::from_values(v);
}

json mesh_report_json(const MeshReport& r) {
    return {{"watertight", r.watertight},         {"manifold", r.manifold},
            {"components", r.components},         {"euler_characteristic", r.euler_characteristic},
            {"area_mm2", r.area_mm2},             {"volume_mm3", r.volume_mm3}};
}

json diagnostics_json(const NormalizeDiagnostics& d) {
    return {{"vertices", d.vertices},
            {"converged", d.converged},
            {"non_convergent", d.non_convergent},
            {"iso_recovery_rate", d.iso_recovery_rate},
            {"mean_iterations", d.mean_iterations},
            {"max_residual", d.max_residual},
            {"fallback_fields", d.fallback_fields},
            {"method", "linear blend skinning with iso-value recovery (no contact handling)"}};
}

json ansur_json(const std::vector<AnsurRow>& rows) {
    json out = {{"reference", "ANSUR II"}, {"n", AnsurReference::sample_size}, {"flag_threshold_mm", AnsurReference::flag_threshold_mm}};
    out["rows"] = json::array();
    for (const auto& r : rows)
        out["rows"].push_back({{"name", r.name},
                               {"model_mean", r.model_mean},
                               {"reference_mean", r.ansur_mean},
                               {"reference_sd", r.ansur_sd},
                               {"deviation", r.deviation},
                               {"flagged", r.flagged}});
    return out;
}

namespace {
double round6(double x) { return std::round(x * 1e6) / 1e6; }
}  // namespace

json metrics_json(const OverlapReport& o, const SimilarityReport* s) {
    json j = {{"dice", round6(o.dice)},
              {"iou", round6(o.iou)},
              {"precision", round6(o.precision)},
              {"recall", round6(o.recall)},
              {"pixel_accuracy", round6(o.pixel_accuracy)}};
    j["mae"] = s ? json(round6(s->mae)) : json(nullptr);
    j["ssim"] = s ? json(round6(s->ssim)) : json(nullptr);
    j["clinical_reference"] = {{"dice", ReferenceOverlap::dice},
                               {"iou", ReferenceOverlap::iou},
                               {"precision", ReferenceOverlap::precision},
                               {"recall", ReferenceOverlap::recall},
                               {"pixel_accuracy", ReferenceOverlap::pixel_accuracy}};
    return j;
}

Pose pose_from_json(const Skeleton& skel, const json& j) {
    auto joint = [&](const std::string& name) {
        for (int i = 0; i < skel.joint_count(); ++i)
            if (skel.names[static_cast<std::size_t>(i)] == name) return i;
        throw SkeletonError(SkeletonErrorCode::PoseMismatch, "pose: unknown joint '" + name + "'");
    };
    if (!j.is_object()) throw SkeletonError(SkeletonErrorCode::PoseMismatch, "pose: expected an object");
    Pose pose = Pose::identity(skel.joint_count());
    std::map<int, double> flex;
    for (const auto& [key, value] : j.items()) {
        if (key == "flexion_deg") {
            for (const auto& [name, deg] : value.items()) {
                if (!deg.is_number()) throw SkeletonError(SkeletonErrorCode::PoseMismatch, "pose: flexion must be a number");
                flex[joint(name)] = deg.get<double>();
            }
        } else if (key == "rotations") {
            for (const auto& [name, q] : value.items()) {
                if (!q.is_array() || q.size() != 4)
                    throw SkeletonError(SkeletonErrorCode::PoseMismatch, "pose: rotation must be [w, x, y, z]");
                Eigen::Quaterniond r(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
                if (!(r.norm() > 0.0)) throw SkeletonError(SkeletonErrorCode::PoseMismatch, "pose: zero quaternion");
                pose.rotation[static_cast<std::size_t>(joint(name))] = r.normalized();
            }
        } else {
            throw SkeletonError(SkeletonErrorCode::PoseMismatch, "pose: unknown key '" + key + "'");
        }
    }
    if (!flex.empty()) {
        const Pose f = flexion_pose(skel, flex);
        for (const auto& [jt, deg] : flex) pose.rotation[static_cast<std::size_t>(jt)] = f.rotation[static_cast<std::size_t>(jt)];
    }
    return pose;
}

void write_phantom(const Phantom& ph, const fs::path& dir) {
    fs::create_directories(dir);
    write_text(dir / "volume.hvol", encode_volume(ph.volume));
    write_text(dir / "skin_gt.hvol", encode_mask(ph.skin_mask_gt));
    write_text(dir / "bone_gt.hvol", encode_mask(ph.bone_mask_gt));
    write_text(dir / "landmarks.json", encode_landmarks(ph.landmarks));
    const PhantomParams& p = ph.params;
    json flex = json::object();
    const auto& names = joint_names();
    for (std::size_t j = 0; j < p.flexion_deg.size(); ++j)
        if (p.flexion_deg[j] != 0.0) flex[names[j]] = p.flexion_deg[j];
    const json gt = {{"measurements", measurements_json(ph.measurements_gt)},
                     {"seed", p.seed},
                     {"scale", p.scale},
                     {"spacing", p.spacing},
                     {"tissue", p.tissue},
                     {"splay_deg", p.splay_deg},
                     {"flexion_deg", flex},
                     {"plaster", p.plaster},
                     {"splay_retries", ph.splay_retries}};
    write_text(dir / "ground_truth.json", gt.dump(2) + "\n");
}

Normalized normalize_mesh(const TriMesh& mesh, const LandmarkSet& landmarks, const Pose* pose, const PipelineConfig& c,
                          const BinaryMask* interior) {
    const Skeleton skel = build_skeleton(landmarks);
    const SkinBinding binding = bind_weights(mesh, skel, c.bind, interior);
    const auto fields = fit_bone_fields(mesh, skel, binding, c.fields);
    const Pose target = pose ? *pose : standard_pose(skel);
    NormalizeResult r = pose_normalize(mesh, skel, binding, fields, target, c.normalize);
    return {std::move(r.mesh), posed_landmarks(skel, target), r.diagnostics};
}

// ---------------------------------------------------------------- pipeline

namespace {

using Clock = std::chrono::steady_clock;

struct Provenance {
    json records = json::array();

    void add(const std::string& stage, json parameters, const std::map<std::string, std::string>& inputs,
             const std::map<std::string, std::string>& outputs) {
        records.push_back({{"stage", stage}, {"parameters", std::move(parameters)}, {"inputs", inputs}, {"outputs", outputs}});
    }
};

struct SubjectState {
    SubjectStatus status;
    fs::path dir;
    TriMesh mesh;  // final surface handed to registration
    LandmarkSet landmarks;
    bool has_landmarks = false;
    std::map<std::string, double> timings;
};

// Writes `text` and returns its hash.
std::string emit(const fs::path& path, const std::string& text) {
    write_text(path, text);
    return sha256_hex(text);
}

void run_subject(const PipelineConfig& c, const fs::path& out_root, SubjectState& s) {
    const fs::path out = out_root / "subjects" / s.status.id;
    fs::create_directories(out);
    Provenance prov;
    auto timed = [&](const std::string& stage, auto&& fn) {
        s.status.stage = stage;
        const auto t0 = Clock::now();
        fn();
        s.timings[stage] = std::chrono::duration<double>(Clock::now() - t0).count();
    };

    VoxelVolume vol;
    std::string volume_hash;
    timed("load", [&] {
        const std::string bytes = read_text(s.dir / "volume.hvol");
        volume_hash = sha256_hex(bytes);
        vol = decode_volume(bytes);
    });

    if (c.stages.mask_apply || c.resample_spacing > 0.0) {
        timed("preprocess", [&] {
            std::map<std::string, std::string> inputs{{"volume.hvol", volume_hash}};
            if (c.stages.mask_apply) {
                const std::string bytes = read_text(s.dir / "mask.hvol");
                inputs["mask.hvol"] = sha256_hex(bytes);
                vol = apply_mask(vol, decode_mask(bytes));
            }
            if (c.resample_spacing > 0.0) vol = resample_isotropic(vol, c.resample_spacing);
            const std::string h = emit(out / "preprocessed.hvol", encode_volume(vol));
            volume_hash = h;
            prov.add("preprocess", {{"mask_apply", c.stages.mask_apply}, {"resample_spacing", c.resample_spacing}}, inputs,
                     {{"preprocessed.hvol", h}});
        });
    }

    BinaryMask skin;
    if (c.stages.segment) {
        timed("segment", [&] {
            skin = skin_mask(vol, c.segmentation);
            const BinaryMask bone = bone_mask(vol, c.segmentation);
            prov.add("segment", c.to_json()["segmentation"], {{"volume", volume_hash}},
                     {{"skin_mask.hvol", emit(out / "skin_mask.hvol", encode_mask(skin))},
                      {"bone_mask.hvol", emit(out / "bone_mask.hvol", encode_mask(bone))}});
        });
    }

    std::string landmark_hash;
    if (fs::exists(s.dir / "landmarks.json")) {
        timed("landmarks", [&] {
            const std::string text = read_text(s.dir / "landmarks.json");
            landmark_hash = sha256_hex(text);
            s.landmarks = decode_landmarks(text);
            s.landmarks.validate();
            s.has_landmarks = true;
        });
    } else if (c.stages.normalize) {
        s.status.stage = "landmarks";
        throw std::runtime_error("missing landmarks.json");
    }

    if (!c.stages.mesh) return void(write_text(out / "provenance.json", prov.records.dump(2) + "\n"));

    std::string mesh_hash;
    timed("mesh", [&] {
        TriMesh m = extract_isosurface(skin, c.iso);
        if (c.smooth_factor > 0.0) m = taubin_smooth(m, c.smooth_factor);
        s.mesh = std::move(m);
        mesh_hash = emit(out / "mesh.obj", encode_obj(s.mesh));
        prov.add("mesh", c.to_json()["mesh"], {{"skin_mask.hvol", sha256_hex(encode_mask(skin))}},
                 {{"mesh.obj", mesh_hash},
                  {"mesh_report.json", emit(out / "mesh_report.json", mesh_report_json(validate_mesh(s.mesh)).dump(2) + "\n")}});
    });

    if (c.stages.normalize) {
        timed("normalize", [&] {
            Normalized n = normalize_mesh(s.mesh, s.landmarks, nullptr, c, c.bind.geodesic ? &skin : nullptr);
            s.mesh = std::move(n.mesh);
            s.landmarks = std::move(n.landmarks);
            mesh_hash = emit(out / "normalized.obj", encode_obj(s.mesh));
            prov.add("normalize", c.to_json()["skinning"], {{"mesh.obj", prov.records.back()["outputs"]["mesh.obj"]}, {"landmarks.json", landmark_hash}},
                     {{"normalized.obj", mesh_hash},
                      {"normalized_landmarks.json", emit(out / "normalized_landmarks.json", encode_landmarks(s.landmarks))},
                      {"normalize_diagnostics.json",
                       emit(out / "normalize_diagnostics.json", diagnostics_json(n.diagnostics).dump(2) + "\n")}});
        });
    }

    if (s.has_landmarks) {
        timed("measure", [&] {
            const MeasurementSet m = measure_hand(s.mesh, s.landmarks, c.perimeter);
            prov.add("measure", c.to_json()["measurement"], {{"mesh", mesh_hash}},
                     {{"measurements.json", emit(out / "measurements.json", measurements_json(m).dump(2) + "\n")}});
        });
    }
    s.status.stage.clear();
    write_text(out / "provenance.json", prov.records.dump(2) + "\n");
}

double chamfer(const PointSet& a, const PointSet& b) {
    auto one_way = [](const PointSet& p, const PointSet& q) {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < p.rows(); ++i) sum += (q.rowwise() - p.row(i)).rowwise().squaredNorm().minCoeff();
        return sum / static_cast<double>(p.rows());
    };
    return one_way(a, b) + one_way(b, a);
}

PointSet rows(const PointSet& p, const std::vector<int>& idx) {
    PointSet out(static_cast<Eigen::Index>(idx.size()), 3);
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(idx[i]);
    return out;
}

std::vector<int> sample_indices(const PointSet& p, int count) {
    if (count <= 0 || count >= p.rows()) {
        std::vector<int> all(static_cast<std::size_t>(p.rows()));
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        return all;
    }
    return farthest_point_indices(p, count);
}

}  // namespace

int BatchResult::ok_count() const {
    int n = 0;
    for (const auto& s : subjects) n += s.ok ? 1 : 0;
    return n;
}

int BatchResult::exit_code() const {
    const int ok = ok_count();
    if (ok == 0) return 3;
    if (ok < static_cast<int>(subjects.size()) || !batch_ok) return 2;
    return 0;
}

BatchResult run_pipeline(const PipelineConfig& c, const fs::path& out_dir, int jobs) {
    const auto start = Clock::now();
    if (c.subjects.empty()) throw ConfigError("no subjects: give 'subjects' or 'subjects_dir'");
    fs::create_directories(out_dir);
    std::vector<SubjectState> states(c.subjects.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
        states[i].dir = c.subjects[i];
        states[i].status.id = c.subjects[i].filename().string();
    }
    parallel_for(states.size(), jobs, [&](std::size_t i) {
        try {
            run_subject(c, out_dir, states[i]);
            states[i].status.ok = true;
        } catch (const std::exception& e) {
            states[i].status.ok = false;
            states[i].status.error = e.what();
        }
    });

    BatchResult result;
    json batch_timings = json::object();
    auto fail_batch = [&](const std::string& stage, const std::string& what) {
        result.batch_ok = false;
        result.batch_stage = stage;
        result.batch_error = what;
    };

    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].status.ok) ok.push_back(i);

    std::vector<PointSet> registered(states.size());
    std::vector<bool> reg_ok(states.size(), false);
    if (c.stages.registration && !ok.empty()) {
        const auto t0 = Clock::now();
        try {
            // Template: the subject closest to all others after centroid and scale alignment.
            std::vector<std::vector<int>> idx(states.size());
            std::vector<PointSet> samples(states.size());
            for (std::size_t i : ok) {
                idx[i] = sample_indices(states[i].mesh.vertices, c.subsample);
                samples[i] = rows(states[i].mesh.vertices, idx[i]);
            }
            std::size_t medoid = ok.front();
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i : ok) {
                double total = 0.0;
                for (std::size_t j : ok)
                    if (i != j) total += chamfer(rigid_prealign(samples[i], samples[j]).apply(samples[i]), samples[j]);
                if (total < best) {
                    best = total;
                    medoid = i;
                }
            }
            result.template_id = states[medoid].status.id;
            const TriMesh& tpl = states[medoid].mesh;
            const fs::path out = out_dir / "registration";
            fs::create_directories(out);
            std::vector<std::string> errors(states.size());
            std::vector<json> records(states.size());
            parallel_for(ok.size(), jobs, [&](std::size_t k) {
                const std::size_t i = ok[k];
                try {
                    const PointSet& y = samples[medoid];
                    const Prealignment pre = rigid_prealign(y, samples[i]);
                    CpdParams p = c.cpd;
                    p.threads = 1;
                    RegistrationResult r;
                    if (c.cpd.kernel == KernelType::Geodesic) {
                        TriMesh moved{pre.apply(tpl.vertices), tpl.triangles};
                        r = cpd_nonrigid(moved.vertices, samples[i], p, &moved);
                        registered[i] = r.deformed;
                    } else {
                        r = cpd_nonrigid(pre.apply(y), samples[i], p);
                        registered[i] = cpd_transform(r, pre.apply(tpl.vertices));
                    }
                    json corr = json::array();
                    for (std::size_t m = 0; m < r.correspondence.size(); ++m)
                        corr.push_back({idx[medoid][m], idx[i][static_cast<std::size_t>(r.correspondence[m])], r.probability[m]});
                    const json cj = {{"template", result.template_id},
                                     {"columns", {"template_vertex", "subject_vertex", "posterior"}},
                                     {"correspondence", corr},
                                     {"sigma2", r.sigma2},
                                     {"iterations", r.iterations},
                                     {"converged", r.converged},
                                     {"prealign", {{"scale", pre.scale}, {"translation", {pre.translation.x(), pre.translation.y(), pre.translation.z()}}}}};
                    const std::string id = states[i].status.id;
                    records[i] = {{"subject", id},
                                  {"outputs",
                                   {{id + ".obj", emit(out / (id + ".obj"), encode_obj(TriMesh{registered[i], tpl.triangles}))},
                                    {id + "_correspondence.json", emit(out / (id + "_correspondence.json"), cj.dump(1) + "\n")}}}};
                    reg_ok[i] = true;
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            });
            json prov = {{"stage", "register"}, {"template", result.template_id}, {"parameters", c.to_json()["registration"]}};
            prov["subjects"] = json::array();
            for (std::size_t i : ok) {
                if (reg_ok[i]) {
                    prov["subjects"].push_back(records[i]);
                } else {
                    states[i].status.ok = false;
                    states[i].status.stage = "register";
                    states[i].status.error = errors[i];
                }
            }
            write_text(out / "provenance.json", prov.dump(2) + "\n");
        } catch (const std::exception& e) {
            fail_batch("register", e.what());
        }
        batch_timings["register"] = std::chrono::duration<double>(Clock::now() - t0).count();
    }

    if (c.stages.ssm && result.batch_ok) {
        const auto t0 = Clock::now();
        try {
            std::vector<PointSet> shapes;
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < states.size(); ++i)
                if (reg_ok[i] && states[i].status.ok) {
                    shapes.push_back(registered[i]);
                    members.push_back(i);
                }
            if (shapes.size() < 2) throw SsmError("fewer than two registered subjects");
            ShapeModel model = build_ssm(shapes, c.ssm);
            std::size_t tpl = 0;
            for (std::size_t i = 0; i < states.size(); ++i)
                if (states[i].status.id == result.template_id) tpl = i;
            model.triangles = states[tpl].mesh.triangles;
            const fs::path out = out_dir / "ssm";
            write_model(model, out);
            const TriMesh mean{model.mean_shape(), model.triangles};
            json outputs = {{"model.json", sha256_file(out / "model.json")},
                            {"model.bin", sha256_file(out / "model.bin")},
                            {"mean.obj", emit(out / "mean.obj", encode_obj(mean))}};

            // Mean landmarks: each subject's landmarks carried by the rigid alignment of its registered surface.
            bool all_landmarks = true;
            for (std::size_t i : members) all_landmarks = all_landmarks && states[i].has_landmarks;
            if (all_landmarks) {
                LandmarkSet avg;
                for (const auto& [name, p] : states[members.front()].landmarks.points) avg.points[name] = Eigen::Vector3d::Zero();
                for (std::size_t k = 0; k < members.size(); ++k) {
                    const LandmarkSet lm = states[members[k]].landmarks.transformed(rigid_fit(shapes[k], mean.vertices));
                    for (auto& [name, p] : avg.points) p += lm.at(name);
                }
                for (auto& [name, p] : avg.points) p /= static_cast<double>(members.size());
                outputs["mean_landmarks.json"] = emit(out / "mean_landmarks.json", encode_landmarks(avg));
                const MeasurementSet m = measure_hand(mean, avg, c.perimeter);
                outputs["mean_measurements.json"] = emit(out / "mean_measurements.json", measurements_json(m).dump(2) + "\n");
                const auto rows = ansur_report(m);
                outputs["ansur_report.json"] = emit(out / "ansur_report.json", ansur_json(rows).dump(2) + "\n");
                outputs["ansur_report.txt"] = emit(out / "ansur_report.txt", format_ansur_report(rows));
            }
            json members_json = json::array();
            for (std::size_t i : members) members_json.push_back(states[i].status.id);
            const json prov = {{"stage", "ssm"},
                               {"parameters", c.to_json()["ssm"]},
                               {"members", members_json},
                               {"mode_count", model.mode_count()},
                               {"outputs", outputs}};
            write_text(out / "provenance.json", prov.dump(2) + "\n");
        } catch (const std::exception& e) {
            fail_batch("ssm", e.what());
        }
        batch_timings["ssm"] = std::chrono::duration<double>(Clock::now() - t0).count();
    }

    for (const auto& s : states) result.subjects.push_back(s.status);
    json summary;
    summary["subjects"] = json::array();
    for (const auto& s : result.subjects) {
        json e = {{"id", s.id}, {"status", s.ok ? "ok" : "failed"}};
        if (!s.ok) {
            e["stage"] = s.stage;
            e["error"] = s.error;
        }
        summary["subjects"].push_back(e);
    }
    summary["ok"] = result.ok_count();
    summary["failed"] = static_cast<int>(result.subjects.size()) - result.ok_count();
    summary["template"] = result.template_id;
    summary["batch"] = result.batch_ok ? json{{"status", "ok"}}
                                       : json{{"status", "failed"}, {"stage", result.batch_stage}, {"error", result.batch_error}};
    summary["exit_code"] = result.exit_code();
    summary["config"] = c.to_json();
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");

    json timings = {{"subjects", json::object()}, {"batch", batch_timings}};
    for (const auto& s : states) timings["subjects"][s.status.id] = s.timings;
    timings["total_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
    write_text(out_dir / "timings.json", timings.dump(2) + "\n");
    return result;
}

}  // namespace handssm
