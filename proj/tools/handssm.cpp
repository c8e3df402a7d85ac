#include "handssm/pipeline.hpp"
#include "handssm/volume.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

using namespace handssm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kUsage = 1, kTotalFailure = 3;

struct Globals {
    std::string config;
    int jobs = 1;
    std::string out_dir = "out";
};

/// Config file values as defaults; range checks are rerun after flag overrides.
PipelineConfig base_config(const Globals& g) {
    return g.config.empty() ? PipelineConfig{} : load_config(g.config);
}

void revalidate(const PipelineConfig& c) {
    json j = c.to_json();
    j.erase("subjects");
    (void)PipelineConfig::from_json(j);
}

template <typename T, typename U>
void override(const std::optional<T>& flag, U& target) {
    if (flag) target = static_cast<U>(*flag);
}

void emit_json(const json& j, const std::string& path) {
    if (path.empty() || path == "-")
        std::cout << j.dump(2) << '\n';
    else
        write_text(path, j.dump(2) + "\n");
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(std::stod(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hand anatomy reconstruction and statistical shape modelling"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Pipeline config JSON")->check(CLI::ExistingFile);
    app.add_option("--jobs", g.jobs, "Subjects processed concurrently")->check(CLI::Range(1, 1024));
    app.add_option("--out-dir", g.out_dir, "Output directory");

    std::function<int()> action;

    // phantom
    auto* phantom = app.add_subcommand("phantom", "Generate phantom subject directories");
    int ph_count = 1;
    std::uint64_t ph_seed = 0;
    double ph_spacing = 1.0, ph_scale_sd = 0.0, ph_length_sd = 0.0, ph_radius_sd = 0.0, ph_palm_sd = 0.0, ph_tissue_sd = 0.0;
    std::vector<std::string> ph_flex;
    bool ph_plaster = false;
    phantom->add_option("--count", ph_count, "Number of phantoms")->check(CLI::Range(1, 10000));
    phantom->add_option("--seed", ph_seed, "Population seed");
    phantom->add_option("--spacing", ph_spacing, "Voxel spacing, mm")->check(CLI::PositiveNumber);
    phantom->add_option("--scale-sd", ph_scale_sd, "Relative SD of overall scale");
    phantom->add_option("--length-sd", ph_length_sd, "Relative SD of segment lengths");
    phantom->add_option("--radius-sd", ph_radius_sd, "Relative SD of segment radii");
    phantom->add_option("--palm-sd", ph_palm_sd, "Relative SD of palm dimensions");
    phantom->add_option("--tissue-sd", ph_tissue_sd, "Relative SD of tissue thickness");
    phantom->add_option("--flex", ph_flex, "joint=degrees, repeatable");
    phantom->add_flag("--plaster", ph_plaster, "Add a plaster cast shell");
    phantom->callback([&] {
        action = [&] {
            PhantomParams base;
            base.spacing = ph_spacing;
            base.plaster = ph_plaster;
            const auto& names = joint_names();
            for (const auto& f : ph_flex) {
                const auto eq = f.find('=');
                const auto it = std::find(names.begin(), names.end(), f.substr(0, eq));
                if (eq == std::string::npos || it == names.end()) throw CLI::ValidationError("--flex", "expected joint=degrees: " + f);
                base.flexion_deg[static_cast<std::size_t>(it - names.begin())] = std::stod(f.substr(eq + 1));
            }
            const VarianceSpec spec{ph_scale_sd, ph_length_sd, ph_radius_sd, ph_palm_sd, ph_tissue_sd};
            base.seed = ph_seed;
            const auto population =
                ph_count == 1 ? std::vector<Phantom>{generate_phantom(base)} : generate_population(ph_count, spec, ph_seed, base);
            for (std::size_t i = 0; i < population.size(); ++i) {
                std::ostringstream id;
                id << "phantom_" << std::setw(3) << std::setfill('0') << i;
                write_phantom(population[i], ph_count == 1 ? fs::path(g.out_dir) : fs::path(g.out_dir) / id.str());
            }
            return kOk;
        };
    });

    // segment
    auto* segment = app.add_subcommand("segment", "Skin and bone masks from a volume");
    std::string seg_volume, seg_skin = "skin_mask.hvol", seg_bone = "bone_mask.hvol";
    std::optional<int> seg_air, seg_lo, seg_hi, seg_min;
    segment->add_option("--volume", seg_volume, "Input HVOL volume")->required()->check(CLI::ExistingFile);
    segment->add_option("--skin", seg_skin, "Output skin mask");
    segment->add_option("--bone", seg_bone, "Output bone mask");
    segment->add_option("--air-threshold", seg_air, "Skin threshold, HU");
    segment->add_option("--bone-lo", seg_lo, "Bone window lower bound, HU");
    segment->add_option("--bone-hi", seg_hi, "Bone window upper bound, HU");
    segment->add_option("--min-bone-voxels", seg_min, "Smaller bone components are dropped");
    segment->callback([&] {
        action = [&] {
            PipelineConfig c = base_config(g);
            override(seg_air, c.segmentation.air_threshold);
            override(seg_lo, c.segmentation.bone_lo);
            override(seg_hi, c.segmentation.bone_hi);
            override(seg_min, c.segmentation.min_bone_voxels);
            revalidate(c);
            const VoxelVolume vol = read_volume(seg_volume);
            write_mask(skin_mask(vol, c.segmentation), seg_skin);
            write_mask(bone_mask(vol, c.segmentation), seg_bone);
            return kOk;
        };
    });

    // extract-mesh
    auto* extract = app.add_subcommand("extract-mesh", "Isosurface of a binary mask");
    std::string ex_mask, ex_out = "mesh.obj", ex_report;
    std::optional<double> ex_iso, ex_smooth;
    extract->add_option("--mask", ex_mask, "Input HVOL mask")->required()->check(CLI::ExistingFile);
    extract->add_option("--out", ex_out, "Output OBJ");
    extract->add_option("--iso", ex_iso, "Iso level in (0, 1)");
    extract->add_option("--smooth-factor", ex_smooth, "Taubin smoothing factor, 0 disables");
    extract->add_option("--report", ex_report, "Mesh report JSON");
    extract->callback([&] {
        action = [&] {
            PipelineConfig c = base_config(g);
            override(ex_iso, c.iso);
            override(ex_smooth, c.smooth_factor);
            revalidate(c);
            TriMesh m = extract_isosurface(read_mask(ex_mask), c.iso);
            if (c.smooth_factor > 0.0) m = taubin_smooth(m, c.smooth_factor);
            write_obj(m, ex_out);
            if (!ex_report.empty()) emit_json(mesh_report_json(validate_mesh(m)), ex_report);
            return kOk;
        };
    });

    // normalize-pose
    auto* norm = app.add_subcommand("normalize-pose", "Repose a mesh with implicit skinning");
    std::string nm_mesh, nm_landmarks, nm_pose = "standard", nm_out = "normalized.obj", nm_lm_out, nm_diag, nm_interior;
    norm->add_option("--mesh", nm_mesh, "Input OBJ")->required()->check(CLI::ExistingFile);
    norm->add_option("--landmarks", nm_landmarks, "Landmark JSON")->required()->check(CLI::ExistingFile);
    norm->add_option("--pose", nm_pose, "'standard' or a pose JSON file");
    norm->add_option("--out", nm_out, "Output OBJ");
    norm->add_option("--landmarks-out", nm_lm_out, "Posed landmark JSON");
    norm->add_option("--diagnostics", nm_diag, "Diagnostics JSON");
    norm->add_option("--interior", nm_interior, "Skin mask for geodesic binding")->check(CLI::ExistingFile);
    norm->callback([&] {
        action = [&] {
            PipelineConfig c = base_config(g);
            if (!nm_interior.empty()) c.bind.geodesic = true;
            const TriMesh mesh = read_obj(nm_mesh);
            const LandmarkSet lm = read_landmarks(nm_landmarks);
            std::optional<Pose> pose;
            if (nm_pose != "standard") pose = pose_from_json(build_skeleton(lm), json::parse(read_text(nm_pose)));
            std::optional<BinaryMask> interior;
            if (c.bind.geodesic) {
                if (nm_interior.empty()) throw ConfigError("geodesic binding needs --interior");
                interior = read_mask(nm_interior);
            }
            const Normalized n = normalize_mesh(mesh, lm, pose ? &*pose : nullptr, c, interior ? &*interior : nullptr);
            write_obj(n.mesh, nm_out);
            if (!nm_lm_out.empty()) write_landmarks(n.landmarks, nm_lm_out);
            if (!nm_diag.empty()) emit_json(diagnostics_json(n.diagnostics), nm_diag);
            return kOk;
        };
    });

    // register
    auto* reg = app.add_subcommand("register", "Coherent point drift from a template onto a target");
    std::string rg_template, rg_target, rg_out = "deformed.obj", rg_corr = "correspondence.json", rg_kernel;
    std::optional<double> rg_beta, rg_lambda, rg_w, rg_tol;
    std::optional<int> rg_iters, rg_rank;
    int rg_threads = 1, rg_subsample = 0;
    bool rg_no_prealign = false;
    reg->add_option("--template", rg_template, "Template OBJ")->required()->check(CLI::ExistingFile);
    reg->add_option("--target", rg_target, "Target OBJ")->required()->check(CLI::ExistingFile);
    reg->add_option("--out", rg_out, "Deformed template OBJ");
    reg->add_option("--correspondence", rg_corr, "Correspondence JSON");
    reg->add_option("--beta", rg_beta, "Kernel width, mm");
    reg->add_option("--lambda", rg_lambda, "Smoothness weight");
    reg->add_option("--w", rg_w, "Outlier fraction");
    reg->add_option("--iters", rg_iters, "Maximum EM iterations");
    reg->add_option("--tol", rg_tol, "Relative objective tolerance");
    reg->add_option("--kernel", rg_kernel, "gaussian or geodesic");
    reg->add_option("--rank", rg_rank, "Low-rank kernel truncation, 0 for full");
    reg->add_option("--subsample", rg_subsample, "Fit on this many farthest points per surface, 0 for all (Gaussian kernel)")
        ->check(CLI::NonNegativeNumber);
    reg->add_option("--threads", rg_threads, "Worker threads")->check(CLI::Range(1, 1024));
    reg->add_flag("--no-prealign", rg_no_prealign, "Skip centroid and scale alignment");
    reg->callback([&] {
        action = [&] {
            PipelineConfig c = base_config(g);
            override(rg_beta, c.cpd.beta);
            override(rg_lambda, c.cpd.lambda);
            override(rg_w, c.cpd.w);
            override(rg_tol, c.cpd.tol);
            override(rg_iters, c.cpd.max_iters);
            override(rg_rank, c.cpd.rank);
            if (!rg_kernel.empty()) c.cpd.kernel = parse_kernel(rg_kernel);
            c.subsample = rg_subsample;
            revalidate(c);
            CpdParams p = c.cpd;
            p.threads = rg_threads;
            TriMesh tpl = read_obj(rg_template);
            const TriMesh target = read_obj(rg_target);
            auto pick = [&](const PointSet& pts) {
                std::vector<int> idx;
                if (rg_subsample > 0 && rg_subsample < pts.rows()) {
                    idx = farthest_point_indices(pts, rg_subsample);
                } else {
                    for (Eigen::Index i = 0; i < pts.rows(); ++i) idx.push_back(static_cast<int>(i));
                }
                return idx;
            };
            const std::vector<int> ti = pick(tpl.vertices), xi = pick(target.vertices);
            auto rows = [](const PointSet& pts, const std::vector<int>& idx) {
                PointSet out(static_cast<Eigen::Index>(idx.size()), 3);
                for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts.row(idx[i]);
                return out;
            };
            const PointSet ts = rows(tpl.vertices, ti), xs = rows(target.vertices, xi);
            Prealignment pre;
            if (!rg_no_prealign) pre = rigid_prealign(ts, xs);
            tpl.vertices = pre.apply(tpl.vertices);
            const RegistrationResult r = cpd_nonrigid(pre.apply(ts), xs, p, &tpl);
            const PointSet deformed = ti.size() == static_cast<std::size_t>(tpl.vertices.rows()) ? r.deformed
                                                                                              : cpd_transform(r, tpl.vertices, rg_threads);
            write_obj(TriMesh{deformed, tpl.triangles}, rg_out);
            json corr = json::array();
            for (std::size_t m = 0; m < r.correspondence.size(); ++m)
                corr.push_back({ti[m], xi[static_cast<std::size_t>(r.correspondence[m])], r.probability[m]});
            emit_json({{"columns", {"template_vertex", "target_vertex", "posterior"}},
                       {"correspondence", corr},
                       {"sigma2", r.sigma2},
                       {"sigma2_trace", r.sigma2_trace},
                       {"iterations", r.iterations},
                       {"converged", r.converged},
                       {"psd_clamp", r.psd_clamp},
                       {"prealign", {{"scale", pre.scale}, {"translation", {pre.translation.x(), pre.translation.y(), pre.translation.z()}}}},
                       {"parameters", c.to_json()["registration"]}},
                      rg_corr);
            return kOk;
        };
    });

    // build-ssm
    auto* ssm = app.add_subcommand("build-ssm", "Shape model from corresponded meshes");
    std::vector<std::string> ssm_meshes;
    std::optional<double> ssm_coverage;
    ssm->add_option("meshes", ssm_meshes, "Corresponded OBJ files")->required()->check(CLI::ExistingFile);
    ssm->add_option("--coverage", ssm_coverage, "Variance fraction to keep");
    ssm->callback([&] {
        action = [&] {
            PipelineConfig c = base_config(g);
            override(ssm_coverage, c.ssm.variance_coverage);
            revalidate(c);
            std::vector<PointSet> shapes;
            Triangles tris;
            for (const auto& path : ssm_meshes) {
                TriMesh m = read_obj(path);
                if (tris.rows() == 0) tris = m.triangles;
                shapes.push_back(std::move(m.vertices));
            }
            ShapeModel model = build_ssm(shapes, c.ssm);
            model.triangles = tris;
            write_model(model, g.out_dir);
            write_obj(TriMesh{model.mean_shape(), model.triangles}, fs::path(g.out_dir) / "mean.obj");
            const Eigen::VectorXd ratio = model.explained_ratio();
            for (Eigen::Index k = 0; k < ratio.size(); ++k)
                std::cout << "mode " << k + 1 << ": " << std::fixed << std::setprecision(2) << 100.0 * ratio[k] << "%\n";
            return kOk;
        };
    });

    // sample
    auto* sample = app.add_subcommand("sample", "Instance of a shape model");
    std::string sm_model, sm_coeffs, sm_out = "sample.obj";
    sample->add_option("--model", sm_model, "Model directory")->required()->check(CLI::ExistingDirectory);
    sample->add_option("--coeffs", sm_coeffs, "Comma-separated coefficients in standard deviations; missing ones are 0");
    sample->add_option("--out", sm_out, "Output OBJ");
    sample->callback([&] {
        action = [&] {
            const ShapeModel model = read_model(sm_model);
            const auto given = parse_list(sm_coeffs);
            if (static_cast<Eigen::Index>(given.size()) > model.mode_count())
                throw CLI::ValidationError("--coeffs", "more coefficients than modes");
            Eigen::VectorXd c = Eigen::VectorXd::Zero(model.mode_count());
            for (std::size_t k = 0; k < given.size(); ++k) c[static_cast<Eigen::Index>(k)] = given[k];
            write_obj(TriMesh{sample_shape(model, c), model.triangles}, sm_out);
            return kOk;
        };
    });

    // measure
    auto* measure = app.add_subcommand("measure", "Hand measurements of a mesh");
    std::string ms_mesh, ms_landmarks, ms_out, ms_perimeter;
    measure->add_option("--mesh", ms_mesh, "Input OBJ")->required()->check(CLI::ExistingFile);
    measure->add_option("--landmarks", ms_landmarks, "Landmark JSON")->required()->check(CLI::ExistingFile);
    measure->add_option("--out", ms_out, "Output JSON, stdout by default");
    measure->add_option("--perimeter", ms_perimeter, "hull or polygon")->check(CLI::IsMember({"hull", "polygon"}));
    measure->callback([&] {
        action = [&] {
            PipelineConfig c = base_config(g);
            if (!ms_perimeter.empty()) c.perimeter = ms_perimeter == "hull" ? PerimeterMode::Hull : PerimeterMode::Polygon;
            emit_json(measurements_json(measure_hand(read_obj(ms_mesh), read_landmarks(ms_landmarks), c.perimeter)), ms_out);
            return kOk;
        };
    });

    // metrics
    auto* metrics = app.add_subcommand("metrics", "Overlap and image similarity metrics");
    std::string mt_pred, mt_gt, mt_image, mt_ref, mt_out;
    metrics->add_option("--pred", mt_pred, "Predicted mask")->required()->check(CLI::ExistingFile);
    metrics->add_option("--gt", mt_gt, "Reference mask")->required()->check(CLI::ExistingFile);
    metrics->add_option("--image", mt_image, "Volume for MAE and SSIM")->check(CLI::ExistingFile);
    metrics->add_option("--reference-image", mt_ref, "Reference volume for MAE and SSIM")->check(CLI::ExistingFile);
    metrics->add_option("--out", mt_out, "Output JSON, stdout by default");
    metrics->callback([&] {
        action = [&] {
            if (mt_image.empty() != mt_ref.empty())
                throw CLI::ValidationError("--image", "--image and --reference-image go together");
            const OverlapReport o = overlap_metrics(read_mask(mt_pred), read_mask(mt_gt));
            std::optional<SimilarityReport> s;
            if (!mt_image.empty()) s = image_similarity(read_volume(mt_image), read_volume(mt_ref));
            const json j = metrics_json(o, s ? &*s : nullptr);
            std::ostringstream out;
            out << std::fixed << std::setprecision(6) << "{\n";
            bool first = true;
            for (const char* key : {"dice", "iou", "precision", "recall", "pixel_accuracy", "mae", "ssim"}) {
                out << (first ? "" : ",\n") << "  \"" << key << "\": ";
                if (j.at(key).is_null())
                    out << "null";
                else
                    out << j.at(key).get<double>();
                first = false;
            }
            out << ",\n  \"clinical_reference\": " << j.at("clinical_reference").dump() << "\n}\n";
            if (mt_out.empty() || mt_out == "-")
                std::cout << out.str();
            else
                write_text(mt_out, out.str());
            return kOk;
        };
    });

    // report
    auto* report = app.add_subcommand("report", "Model means against ANSUR II");
    std::string rp_measurements, rp_means, rp_json;
    report->add_option("--measurements", rp_measurements, "Measurement JSON")->check(CLI::ExistingFile);
    report->add_option("--means", rp_means, "Five comma-separated values: length, breadth, circumference, palm, wrist");
    report->add_option("--json", rp_json, "Also write the report as JSON");
    report->callback([&] {
        action = [&] {
            MeasurementSet m;
            if (!rp_measurements.empty()) {
                m = measurements_from_json(json::parse(read_text(rp_measurements)));
            } else if (!rp_means.empty()) {
                const auto v = parse_list(rp_means);
                if (v.size() != 5) throw CLI::ValidationError("--means", "expected five values");
                m = MeasurementSet::from_values({v[0], v[1], v[2], v[3], v[4]});
            } else {
                throw CLI::ValidationError("report", "give --measurements or --means");
            }
            const auto rows = ansur_report(m);
            std::cout << format_ansur_report(rows);
            if (!rp_json.empty()) emit_json(ansur_json(rows), rp_json);
            return kOk;
        };
    });

    // run
    auto* run = app.add_subcommand("run", "Full pipeline over the subjects in --config");
    run->callback([&] {
        action = [&] {
            if (g.config.empty()) throw CLI::ValidationError("run", "--config is required");
            const PipelineConfig c = load_config(g.config);
            const BatchResult r = run_pipeline(c, g.out_dir, g.jobs);
            for (const auto& s : r.subjects)
                std::cout << s.id << ": " << (s.ok ? "ok" : "failed at " + s.stage + ": " + s.error) << '\n';
            if (!r.batch_ok) std::cout << "batch failed at " << r.batch_stage << ": " << r.batch_error << '\n';
            std::cout << r.ok_count() << "/" << r.subjects.size() << " subjects ok\n";
            return r.exit_code();
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    try {
        return action();
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kTotalFailure;
    }
}
