#include "handssm/ssm.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "model.bin handling assumes a little-endian host");

namespace handssm {

using nlohmann::json;

Eigen::VectorXd flatten(const PointSet& p) {
    Eigen::VectorXd v(p.rows() * 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i) v.segment<3>(3 * i) = p.row(i).transpose();
    return v;
}

PointSet unflatten(const Eigen::VectorXd& v) {
    if (v.size() % 3 != 0) throw SsmError("shape vector length is not a multiple of 3");
    PointSet p(v.size() / 3, 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) = v.segment<3>(3 * i).transpose();
    return p;
}

Eigen::VectorXd ShapeModel::explained_ratio() const {
    if (total_variance <= 0.0) return Eigen::VectorXd::Zero(variances.size());
    return variances / total_variance;
}

PointSet ShapeModel::mean_shape() const { return unflatten(mean); }

Eigen::Isometry3d rigid_fit(const PointSet& src, const PointSet& dst) {
    if (src.rows() != dst.rows() || src.rows() == 0) throw SsmError("rigid_fit: point counts differ");
    const Eigen::RowVector3d cs = src.colwise().mean(), cd = dst.colwise().mean();
    const Eigen::Matrix3d h = (src.rowwise() - cs).transpose() * (dst.rowwise() - cd);
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.linear() = r;
    t.translation() = cd.transpose() - r * cs.transpose();
    return t;
}

namespace {

PointSet transformed(const PointSet& p, const Eigen::Isometry3d& t) {
    PointSet out = (p * t.linear().transpose()).eval();
    out.rowwise() += t.translation().transpose();
    return out;
}

double rms(const PointSet& a, const PointSet& b) { return std::sqrt((a - b).rowwise().squaredNorm().mean()); }

}  // namespace

std::vector<PointSet> procrustes_align(const std::vector<PointSet>& shapes, double tolerance, int max_iterations) {
    if (shapes.empty()) throw SsmError("procrustes_align: no shapes");
    const Eigen::Index m = shapes.front().rows();
    for (const auto& s : shapes)
        if (s.rows() != m) throw SsmError("procrustes_align: shapes have different vertex counts");
    std::vector<PointSet> aligned(shapes.size());
    PointSet mean = shapes.front();
    for (int it = 0; it < max_iterations; ++it) {
        for (std::size_t i = 0; i < shapes.size(); ++i) aligned[i] = transformed(shapes[i], rigid_fit(shapes[i], mean));
        PointSet next = PointSet::Zero(m, 3);
        for (const auto& a : aligned) next += a;
        next /= static_cast<double>(aligned.size());
        // Keep the reference in the first shape's frame so the mean cannot drift.
        next = transformed(next, rigid_fit(next, shapes.front()));
        const double change = rms(next, mean);
        mean = next;
        if (change < tolerance) break;
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) aligned[i] = transformed(shapes[i], rigid_fit(shapes[i], mean));
    return aligned;
}

ShapeModel build_ssm(const std::vector<PointSet>& shapes, const SsmParams& params) {
    if (shapes.size() < 2) throw SsmError("build_ssm: need at least two shapes");
    if (!(params.variance_coverage > 0.0 && params.variance_coverage <= 1.0))
        throw SsmError("build_ssm: variance_coverage must lie in (0, 1]");
    const auto aligned = procrustes_align(shapes, params.gpa_tolerance, params.gpa_max_iterations);
    const auto n = static_cast<Eigen::Index>(aligned.size());
    const Eigen::Index dim = aligned.front().rows() * 3;
    Eigen::MatrixXd data(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) data.row(i) = flatten(aligned[static_cast<std::size_t>(i)]).transpose();

    ShapeModel model;
    model.samples = static_cast<int>(n);
    model.mean = data.colwise().mean().transpose();
    data.rowwise() -= model.mean.transpose();
    const Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinV);
    const Eigen::VectorXd var = svd.singularValues().array().square() / static_cast<double>(n - 1);
    const Eigen::Index available = std::min<Eigen::Index>(n - 1, var.size());
    model.total_variance = var.head(available).sum();
    Eigen::Index k = 0;
    if (model.total_variance > 0.0) {
        double covered = 0.0;
        while (k < available) {
            covered += var[k++];
            if (covered >= params.variance_coverage * model.total_variance * (1.0 - 1e-12)) break;
        }
    }
    model.variances = var.head(k);
    model.modes = svd.matrixV().leftCols(k);
    return model;
}

PointSet sample_shape(const ShapeModel& model, const Eigen::VectorXd& coeffs) {
    if (coeffs.size() != model.mode_count()) throw SsmError("sample_shape: coefficient count does not match the model");
    return unflatten(model.mean + model.modes * coeffs.cwiseProduct(model.variances.cwiseSqrt()));
}

Eigen::VectorXd project_shape(const ShapeModel& model, const PointSet& shape) {
    if (shape.rows() != model.vertex_count()) throw SsmError("project_shape: vertex count does not match the model");
    const PointSet mean = model.mean_shape();
    const Eigen::VectorXd x = flatten(transformed(shape, rigid_fit(shape, mean)));
    Eigen::VectorXd c = model.modes.transpose() * (x - model.mean);
    for (Eigen::Index k = 0; k < c.size(); ++k) c[k] = model.variances[k] > 0.0 ? c[k] / std::sqrt(model.variances[k]) : 0.0;
    return c;
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw SsmError("model.bin is truncated");
    return v;
}

}  // namespace

void write_model(const ShapeModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json meta;
    meta["format"] = "handssm-shape-model";
    meta["version"] = 1;
    meta["vertex_count"] = model.vertex_count();
    meta["mode_count"] = model.mode_count();
    meta["samples"] = model.samples;
    meta["total_variance"] = model.total_variance;
    meta["variances"] = std::vector<double>(model.variances.data(), model.variances.data() + model.variances.size());
    const Eigen::VectorXd ratio = model.explained_ratio();
    meta["explained_ratio"] = std::vector<double>(ratio.data(), ratio.data() + ratio.size());
    meta["triangle_count"] = model.triangles.rows();
    meta["binary"] = {{"file", "model.bin"},
                      {"layout", "little-endian; float32 mean[3M] (xyz per vertex), float32 modes[3M*K] column-major, "
                                 "int32 triangles[3T]"}};
    std::ofstream js(dir / "model.json", std::ios::trunc);
    if (!js) throw SsmError("cannot write " + (dir / "model.json").string());
    js << meta.dump(2) << '\n';

    std::ofstream bin(dir / "model.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw SsmError("cannot write " + (dir / "model.bin").string());
    for (Eigen::Index i = 0; i < model.mean.size(); ++i) put(bin, static_cast<float>(model.mean[i]));
    for (Eigen::Index c = 0; c < model.modes.cols(); ++c)
        for (Eigen::Index r = 0; r < model.modes.rows(); ++r) put(bin, static_cast<float>(model.modes(r, c)));
    for (Eigen::Index t = 0; t < model.triangles.rows(); ++t)
        for (int k = 0; k < 3; ++k) put(bin, static_cast<std::int32_t>(model.triangles(t, k)));
    if (!bin) throw SsmError("failed writing model.bin");
}

ShapeModel read_model(const std::filesystem::path& dir) {
    std::ifstream js(dir / "model.json");
    if (!js) throw SsmError("cannot open " + (dir / "model.json").string());
    json meta;
    try {
        js >> meta;
    } catch (const json::exception& e) {
        throw SsmError(std::string("model.json: ") + e.what());
    }
    ShapeModel model;
    Eigen::Index m = 0, k = 0, t = 0;
    try {
        if (meta.at("format") != "handssm-shape-model" || meta.at("version") != 1) throw SsmError("model.json: unsupported format");
        m = meta.at("vertex_count").get<Eigen::Index>();
        k = meta.at("mode_count").get<Eigen::Index>();
        t = meta.at("triangle_count").get<Eigen::Index>();
        model.samples = meta.at("samples").get<int>();
        model.total_variance = meta.at("total_variance").get<double>();
        const auto var = meta.at("variances").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(var.size()) != k) throw SsmError("model.json: variance count mismatch");
        model.variances = Eigen::Map<const Eigen::VectorXd>(var.data(), k);
    } catch (const json::exception& e) {
        throw SsmError(std::string("model.json: ") + e.what());
    }
    std::ifstream bin(dir / "model.bin", std::ios::binary);
    if (!bin) throw SsmError("cannot open " + (dir / "model.bin").string());
    model.mean.resize(3 * m);
    for (Eigen::Index i = 0; i < 3 * m; ++i) model.mean[i] = get<float>(bin);
    model.modes.resize(3 * m, k);
    for (Eigen::Index c = 0; c < k; ++c)
        for (Eigen::Index r = 0; r < 3 * m; ++r) model.modes(r, c) = get<float>(bin);
    model.triangles.resize(t, 3);
    for (Eigen::Index i = 0; i < t; ++i)
        for (int j = 0; j < 3; ++j) model.triangles(i, j) = get<std::int32_t>(bin);
    if (bin.peek() != std::ifstream::traits_type::eof()) throw SsmError("model.bin has trailing data");
    return model;
}

}  // namespace handssm
