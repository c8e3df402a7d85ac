#include "handssm/pipeline.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <fstream>

using namespace handssm;
using handssm::testing::scratch_dir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<fs::path> write_population(const fs::path& dir, int n, std::uint64_t seed) {
    const auto pop = generate_population(std::max(n, 2), {0.04, 0.02, 0.02, 0.02, 0.05}, seed);
    std::vector<fs::path> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(dir / ("s" + std::to_string(i)));
        write_phantom(pop[static_cast<std::size_t>(i)], out.back());
    }
    return out;
}

PipelineConfig subject_only(std::vector<fs::path> subjects) {
    PipelineConfig c;
    c.subjects = std::move(subjects);
    c.stages.registration = false;
    c.stages.ssm = false;
    return c;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() != "timings.json")
            out[fs::relative(e.path(), root).string()] = read_text(e.path());
    return out;
}

}  // namespace

TEST_CASE("sha256 matches the standard test vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("config rejects unknown keys, wrong types and bad ranges") {
    const json ok = {{"subjects", {"a", "b"}}};
    CHECK_NOTHROW((void)PipelineConfig::from_json(ok, "/data"));
    CHECK(PipelineConfig::from_json(ok, "/data").subjects[1] == fs::path("/data/b"));

    auto rejects = [&](json patch) {
        json j = ok;
        j.merge_patch(patch);
        CHECK_THROWS_AS((void)PipelineConfig::from_json(j), ConfigError);
    };
    rejects({{"colour", 1}});
    rejects({{"mesh", {{"smoth", 1}}}});
    rejects({{"stages", {{"regsiter", true}}}});
    rejects({{"mesh", {{"iso", 1.0}}}});
    rejects({{"mesh", {{"iso", "half"}}}});
    rejects({{"segmentation", {{"min_bone_voxels", 1.5}}}});
    rejects({{"segmentation", {{"bone_lo", 500}, {"bone_hi", 200}}}});
    rejects({{"registration", {{"w", 1.0}}}});
    rejects({{"registration", {{"beta", 0}}}});
    rejects({{"registration", {{"kernel", "cubic"}}}});
    rejects({{"registration", {{"kernel", "geodesic"}}}});  // default subsample is nonzero
    rejects({{"measurement", {{"perimeter", "convex"}}}});
    rejects({{"stages", {{"segment", false}}}});  // mesh still enabled
    rejects({{"stages", {{"register", false}}}});  // ssm still enabled
    rejects({{"subjects", {"a", "x/a"}}});         // duplicate id

    json geo = ok;
    geo["registration"] = {{"kernel", "geodesic"}, {"subsample", 0}};
    CHECK(PipelineConfig::from_json(geo).cpd.kernel == KernelType::Geodesic);
}

TEST_CASE("config survives a JSON round trip") {
    json j = {{"subjects", {"a"}},
              {"stages", {{"mask_apply", true}}},
              {"mesh", {{"iso", 0.4}, {"smooth_factor", 0.0}}},
              {"skinning", {{"geodesic", true}, {"max_centers", 30}}},
              {"registration", {{"beta", 12.5}, {"rank", 0}, {"subsample", 800}}},
              {"ssm", {{"variance_coverage", 0.95}}},
              {"measurement", {{"perimeter", "polygon"}}}};
    const PipelineConfig c = PipelineConfig::from_json(j);
    CHECK(PipelineConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK(c.to_json()["registration"]["beta"] == 12.5);
    CHECK(c.stages.mask_apply);
    CHECK(c.perimeter == PerimeterMode::Polygon);
}

TEST_CASE("load_config reports malformed JSON as a config error") {
    const auto dir = scratch_dir("pipeline_badjson");
    write_text(dir / "c.json", "{\"subjects\": [");
    CHECK_THROWS_AS((void)load_config(dir / "c.json"), ConfigError);
    CHECK_THROWS_AS((void)run_pipeline(PipelineConfig{}, dir / "out"), ConfigError);
}

TEST_CASE("pose files accept flexion angles and quaternions") {
    const Skeleton skel = build_skeleton(phantom_rest_landmarks({}));
    const Pose p = pose_from_json(skel, json::parse(R"({"flexion_deg": {"index_mcp": 30}, "rotations": {"thumb_ip": [1, 0, 0, 0]}})"));
    const int j = digit_root(1);
    CHECK(std::abs(Eigen::AngleAxisd(p.rotation[static_cast<std::size_t>(j)]).angle() - 30.0 * M_PI / 180.0) < 1e-12);
    CHECK_THROWS_AS((void)pose_from_json(skel, json::parse(R"({"flexion_deg": {"index_knuckle": 30}})")), SkeletonError);
    CHECK_THROWS_AS((void)pose_from_json(skel, json::parse(R"({"twist": {}})")), SkeletonError);
}

TEST_CASE("phantom subject runs end to end") {
    const auto dir = scratch_dir("pipeline_e2e");
    const auto subjects = write_population(dir / "in", 1, 3);
    const BatchResult r = run_pipeline(subject_only(subjects), dir / "out");
    REQUIRE(r.subjects.size() == 1);
    CHECK(r.subjects[0].ok);
    CHECK(r.exit_code() == 0);

    const fs::path out = dir / "out" / "subjects" / "s0";
    for (const char* f : {"skin_mask.hvol", "bone_mask.hvol", "mesh.obj", "mesh_report.json", "normalized.obj",
                          "normalized_landmarks.json", "normalize_diagnostics.json", "measurements.json", "provenance.json"})
        CHECK_MESSAGE(fs::exists(out / f), f);

    const json summary = json::parse(read_text(dir / "out" / "summary.json"));
    CHECK(summary["subjects"][0]["status"] == "ok");
    CHECK(json::parse(read_text(out / "mesh_report.json"))["watertight"] == true);
    CHECK(json::parse(read_text(out / "normalize_diagnostics.json"))["iso_recovery_rate"].get<double>() >= 0.99);

    // Measurements of the standard-pose mesh against the generator's analytic values.
    const json gt = json::parse(read_text(subjects[0] / "ground_truth.json"))["measurements"];
    const json got = json::parse(read_text(out / "measurements.json"));
    for (const char* name : kMeasurementNames) CHECK_MESSAGE(std::abs(got[name].get<double>() - gt[name].get<double>()) < 2.0, name);

    // Every recorded output hash matches the file on disk.
    const json prov = json::parse(read_text(out / "provenance.json"));
    std::vector<std::string> stages;
    for (const auto& rec : prov) {
        stages.push_back(rec["stage"]);
        for (const auto& [name, hash] : rec["outputs"].items()) CHECK(sha256_file(out / name) == hash.get<std::string>());
    }
    CHECK(stages == std::vector<std::string>{"segment", "mesh", "normalize", "measure"});
}

TEST_CASE("disabling a later stage leaves earlier outputs unchanged") {
    const auto dir = scratch_dir("pipeline_isolation");
    const auto subjects = write_population(dir / "in", 1, 5);
    PipelineConfig full = subject_only(subjects);
    PipelineConfig partial = full;
    partial.stages.normalize = false;
    (void)run_pipeline(full, dir / "full");
    (void)run_pipeline(partial, dir / "partial");
    const fs::path a = dir / "full" / "subjects" / "s0", b = dir / "partial" / "subjects" / "s0";
    for (const char* f : {"skin_mask.hvol", "bone_mask.hvol", "mesh.obj", "mesh_report.json"})
        CHECK_MESSAGE(read_text(a / f) == read_text(b / f), f);
    CHECK_FALSE(fs::exists(b / "normalized.obj"));
}

TEST_CASE("one corrupted subject fails alone and the batch reports partial failure") {
    const auto dir = scratch_dir("pipeline_fault");
    const auto subjects = write_population(dir / "in", 5, 11);
    const std::string bytes = read_text(subjects[2] / "volume.hvol");
    write_text(subjects[2] / "volume.hvol", bytes.substr(0, bytes.size() / 2));

    PipelineConfig c;
    c.subjects = subjects;
    c.subsample = 600;
    const BatchResult r = run_pipeline(c, dir / "out", 2);
    CHECK(r.ok_count() == 4);
    CHECK_FALSE(r.subjects[2].ok);
    CHECK(r.subjects[2].stage == "load");
    CHECK(r.batch_ok);
    CHECK(r.exit_code() == 2);
    CHECK(fs::exists(dir / "out" / "ssm" / "model.json"));
    const json summary = json::parse(read_text(dir / "out" / "summary.json"));
    CHECK(summary["failed"] == 1);
    CHECK(summary["exit_code"] == 2);
    CHECK(summary["subjects"][2]["status"] == "failed");
    CHECK(json::parse(read_text(dir / "out" / "ssm" / "provenance.json"))["members"].size() == 4);
}

TEST_CASE("a batch where nothing succeeds exits with total failure") {
    const auto dir = scratch_dir("pipeline_total");
    fs::create_directories(dir / "in" / "empty");
    const BatchResult r = run_pipeline(subject_only({dir / "in" / "empty"}), dir / "out");
    CHECK(r.ok_count() == 0);
    CHECK(r.exit_code() == 3);
}

TEST_CASE("reruns are byte-identical regardless of job count") {
    const auto dir = scratch_dir("pipeline_determinism");
    const auto subjects = write_population(dir / "in", 3, 21);
    PipelineConfig c;
    c.subjects = subjects;
    c.subsample = 400;
    c.cpd.max_iters = 40;
    (void)run_pipeline(c, dir / "a", 1);
    (void)run_pipeline(c, dir / "b", 3);
    const auto a = tree(dir / "a"), b = tree(dir / "b");
    CHECK(a.size() == b.size());
    for (const auto& [name, text] : a) CHECK_MESSAGE((b.count(name) && b.at(name) == text), name);
    CHECK(fs::exists(dir / "a" / "timings.json"));
}
