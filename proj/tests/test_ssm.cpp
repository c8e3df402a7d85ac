#include "handssm/phantom.hpp"
#include "handssm/ssm.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace handssm;
using namespace handssm::testing;

namespace {

PointSet blob(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    PointSet p(n, 3);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d d = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
        p.row(i) = (Eigen::Vector3d(50 * d.x(), 30 * d.y(), 15 * d.z())).transpose();
    }
    return p;
}

// Orthonormal directions that are also orthogonal to the rigid motions of `mean`.
Eigen::MatrixXd nonrigid_modes(const PointSet& mean, int count, std::uint64_t seed) {
    const Eigen::Index dim = mean.rows() * 3;
    Eigen::MatrixXd basis(dim, 6 + count);
    for (int a = 0; a < 3; ++a) {
        PointSet t = PointSet::Zero(mean.rows(), 3);
        t.col(a).setOnes();
        basis.col(a) = flatten(t);
        Eigen::Vector3d axis = Eigen::Vector3d::Zero();
        axis[a] = 1;
        PointSet r(mean.rows(), 3);
        for (Eigen::Index i = 0; i < mean.rows(); ++i) r.row(i) = axis.cross(mean.row(i).transpose()).transpose();
        basis.col(3 + a) = flatten(r);
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    for (int k = 0; k < count; ++k)
        for (Eigen::Index r = 0; r < dim; ++r) basis(r, 6 + k) = g(rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, 6 + count);
    return q.rightCols(count);
}

// Two-level factorial design: every mode at +-a_k, so sample variances are exact and uncorrelated.
std::vector<PointSet> factorial_population(const PointSet& mean, const Eigen::MatrixXd& modes, const Eigen::Vector3d& sd,
                                           double noise, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, noise);
    std::vector<PointSet> out;
    const double n = 8.0;
    for (int s = 0; s < 8; ++s) {
        Eigen::VectorXd v = flatten(mean);
        for (int k = 0; k < 3; ++k) v += ((s >> k) & 1 ? 1.0 : -1.0) * sd[k] * std::sqrt((n - 1) / n) * modes.col(k);
        for (Eigen::Index r = 0; r < v.size(); ++r) v[r] += g(rng);
        out.push_back(unflatten(v));
    }
    return out;
}

Eigen::Isometry3d some_motion() {
    return Eigen::Translation3d(10, -20, 5) * Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, -2, 0.5).normalized());
}

PointSet moved(const PointSet& p, const Eigen::Isometry3d& t) {
    PointSet out(p.rows(), 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i) out.row(i) = (t * p.row(i).transpose()).transpose();
    return out;
}

}  // namespace

TEST_CASE("rigid fit recovers a motion") {
    const PointSet p = blob(100, 1);
    const Eigen::Isometry3d t = some_motion();
    const Eigen::Isometry3d got = rigid_fit(p, moved(p, t));
    CHECK((got.matrix() - t.matrix()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("identical shapes give a zero-variance model") {
    const PointSet p = blob(50, 2);
    const ShapeModel m = build_ssm({p, p, p, p});
    CHECK(m.total_variance < 1e-20);
    CHECK((m.variances.array() == 0.0).all());
    CHECK((m.mean_shape() - p).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(sample_shape(m, Eigen::VectorXd::Zero(m.mode_count())) == m.mean_shape());
}

TEST_CASE("errors") {
    const PointSet p = blob(20, 3);
    CHECK_THROWS_AS((void)build_ssm({p}), SsmError);
    CHECK_THROWS_AS((void)build_ssm({p, blob(21, 3)}), SsmError);
    const ShapeModel m = build_ssm({p, blob(20, 4), blob(20, 5)});
    CHECK_THROWS_AS((void)sample_shape(m, Eigen::VectorXd::Zero(m.mode_count() + 1)), SsmError);
    CHECK_THROWS_AS((void)project_shape(m, blob(19, 1)), SsmError);
}

TEST_CASE("three-mode population is recovered") {
    const PointSet mean = blob(500, 7);
    const Eigen::MatrixXd modes = nonrigid_modes(mean, 3, 8);
    const auto shapes = factorial_population(mean, modes, {4.0, 2.0, 1.0}, 0.01, 9);
    SsmParams params;
    params.variance_coverage = 1.0;
    const ShapeModel m = build_ssm(shapes, params);
    REQUIRE(m.mode_count() == 7);
    const Eigen::VectorXd ratio = m.explained_ratio();
    MESSAGE("ratios " << 100 * ratio[0] << " " << 100 * ratio[1] << " " << 100 * ratio[2]);
    CHECK(std::abs(100 * ratio[0] - 76.2) <= 1.0);
    CHECK(std::abs(100 * ratio[1] - 19.0) <= 1.0);
    CHECK(std::abs(100 * ratio[2] - 4.8) <= 1.0);
    CHECK(std::abs(ratio.sum() - 1.0) < 1e-9);
    CHECK((m.modes.transpose() * m.modes - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff() < 1e-9);
    for (Eigen::Index k = 1; k < m.variances.size(); ++k) CHECK(m.variances[k] <= m.variances[k - 1]);

    // Every training shape is reproduced by its own coefficients.
    const auto aligned = procrustes_align(shapes);
    for (const auto& s : aligned) {
        const PointSet back = sample_shape(m, project_shape(m, s));
        CHECK(std::sqrt((back - s).rowwise().squaredNorm().mean()) < 1e-6);
    }

    // The default coverage drops the noise modes.
    CHECK(build_ssm(shapes).mode_count() == 3);
}

TEST_CASE("sampling and projection are inverse") {
    const PointSet mean = blob(300, 11);
    const Eigen::MatrixXd modes = nonrigid_modes(mean, 3, 12);
    const auto shapes = factorial_population(mean, modes, {3.0, 2.0, 1.0}, 0.05, 13);
    const ShapeModel m = build_ssm(shapes);
    const Eigen::Index k = m.mode_count();
    CHECK(project_shape(m, m.mean_shape()).cwiseAbs().maxCoeff() < 1e-9);

    Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
    c[0] = 1.0;
    const PointSet plus = sample_shape(m, c), minus = sample_shape(m, -c);
    CHECK((0.5 * (plus + minus) - m.mean_shape()).cwiseAbs().maxCoeff() < 1e-9);

    std::mt19937_64 rng(14);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 5; ++trial) {
        for (Eigen::Index i = 0; i < k; ++i) c[i] = g(rng);
        CHECK((project_shape(m, sample_shape(m, c)) - c).cwiseAbs().maxCoeff() < 1e-9);
        // A rigidly moved sample projects to the same coefficients.
        CHECK((project_shape(m, moved(sample_shape(m, c), some_motion())) - c).cwiseAbs().maxCoeff() < 1e-6);
    }

    // Small noise moves the coefficients by a bounded amount.
    const auto aligned = procrustes_align(shapes);
    const Eigen::VectorXd clean = project_shape(m, aligned[2]);
    PointSet noisy = aligned[2];
    std::normal_distribution<double> n(0.0, 0.01);
    for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += n(rng);
    const Eigen::VectorXd dirty = project_shape(m, noisy);
    for (Eigen::Index i = 0; i < k; ++i) CHECK(std::abs(dirty[i] - clean[i]) < 5 * 0.01 / std::sqrt(m.variances[i]));
}

TEST_CASE("global rigid motion leaves the variances unchanged") {
    const PointSet mean = blob(200, 21);
    const auto shapes = factorial_population(mean, nonrigid_modes(mean, 3, 22), {3.0, 1.5, 0.5}, 0.02, 23);
    std::vector<PointSet> shifted;
    for (const auto& s : shapes) shifted.push_back(moved(s, some_motion()));
    const ShapeModel a = build_ssm(shapes), b = build_ssm(shifted);
    REQUIRE(a.mode_count() == b.mode_count());
    CHECK((a.variances - b.variances).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("phantom populations") {
    auto landmark_shape = [](const Phantom& ph) {
        const auto& names = joint_names();
        PointSet p(static_cast<Eigen::Index>(names.size()), 3);
        for (std::size_t j = 0; j < names.size(); ++j) p.row(static_cast<Eigen::Index>(j)) = ph.landmarks.at(names[j]).transpose();
        return p;
    };
    PhantomParams base;
    base.spacing = 2.0;
    {
        VarianceSpec spec;
        spec.scale = 0.06;
        std::vector<PointSet> shapes;
        for (const auto& ph : generate_population(20, spec, 31, base)) shapes.push_back(landmark_shape(ph));
        const Eigen::VectorXd r = build_ssm(shapes).explained_ratio();
        MESSAGE("scale-only PC1 " << r[0]);
        CHECK(r[0] > 0.90);
    }
    {
        VarianceSpec spec;
        spec.scale = 0.06;
        spec.length = 0.03;
        spec.radius = 0.05;
        std::vector<PointSet> shapes;
        for (const auto& ph : generate_population(20, spec, 32, base)) shapes.push_back(landmark_shape(ph));
        SsmParams p;
        p.variance_coverage = 1.0;
        const Eigen::VectorXd r = build_ssm(shapes, p).explained_ratio();
        MESSAGE("size-dominated top three " << r[0] << " " << r[1] << " " << r[2] << " cumulative " << r.head(3).sum());
        CHECK(r[0] > r[1]);
        CHECK(r[1] > r[2]);
    }
}

TEST_CASE("model files round trip") {
    const PointSet mean = blob(100, 41);
    const auto shapes = factorial_population(mean, nonrigid_modes(mean, 3, 42), {3.0, 2.0, 1.0}, 0.02, 43);
    ShapeModel m = build_ssm(shapes);
    m.triangles.resize(2, 3);
    m.triangles << 0, 1, 2, 2, 3, 4;
    const auto dir = scratch_dir("ssm_io");
    write_model(m, dir);
    const ShapeModel back = read_model(dir);
    CHECK(back.samples == m.samples);
    CHECK(back.variances == m.variances);
    CHECK(back.triangles == m.triangles);
    CHECK((back.mean - m.mean).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((back.modes - m.modes).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::filesystem::file_size(dir / "model.bin") == (m.mean.size() * (1 + m.mode_count()) + 6) * 4);

    std::filesystem::resize_file(dir / "model.bin", 40);
    CHECK_THROWS_AS((void)read_model(dir), SsmError);
}
