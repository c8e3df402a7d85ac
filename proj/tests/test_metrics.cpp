#include "handssm/metrics.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace handssm;

namespace {

// Direct windowed SSIM: explicit weighted sums per window position.
double ssim_oracle(const VoxelVolume& a, const VoxelVolume& b) {
    const int w = 11;
    double g[11], gs = 0;
    for (int i = 0; i < w; ++i) gs += g[i] = std::exp(-std::pow(i - 5, 2) / (2 * 1.5 * 1.5));
    const double c1 = std::pow(0.01 * 4095, 2), c2 = std::pow(0.03 * 4095, 2);
    double total = 0;
    for (int z = 0; z < a.dims.z(); ++z) {
        double slice_sum = 0;
        int count = 0;
        for (int y0 = 0; y0 + w <= a.dims.y(); ++y0)
            for (int x0 = 0; x0 + w <= a.dims.x(); ++x0) {
                double ma = 0, mb = 0;
                for (int j = 0; j < w; ++j)
                    for (int i = 0; i < w; ++i) {
                        const double wt = g[i] * g[j] / (gs * gs);
                        ma += wt * a(x0 + i, y0 + j, z);
                        mb += wt * b(x0 + i, y0 + j, z);
                    }
                double va = 0, vb = 0, cov = 0;
                for (int j = 0; j < w; ++j)
                    for (int i = 0; i < w; ++i) {
                        const double wt = g[i] * g[j] / (gs * gs);
                        const double da = a(x0 + i, y0 + j, z) - ma, db = b(x0 + i, y0 + j, z) - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                slice_sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        total += slice_sum / count;
    }
    return total / a.dims.z();
}

}  // namespace

TEST_CASE("overlap: identical, disjoint, empty-vs-empty") {
    BinaryMask m({4, 4, 4}, {1, 1, 1}, {0, 0, 0}, 0);
    m(1, 1, 1) = m(2, 1, 1) = 1;
    auto r = overlap_metrics(m, m);
    CHECK(r.dice == 1.0);
    CHECK(r.iou == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.pixel_accuracy == 1.0);

    BinaryMask n = m.like<uint8_t>(0);
    n(3, 3, 3) = 1;
    r = overlap_metrics(m, n);
    CHECK(r.dice == 0.0);
    CHECK(r.iou == 0.0);
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);

    const BinaryMask e = m.like<uint8_t>(0);
    r = overlap_metrics(e, e);
    CHECK(r.dice == 1.0);
    CHECK(r.iou == 1.0);
    CHECK_THROWS_AS((void)overlap_metrics(m, BinaryMask({4, 4, 5}, {1, 1, 1}, {0, 0, 0})), GridMismatch);
}

TEST_CASE("overlap: brute-force confusion oracle, symmetry, dice/iou identity") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 200; ++t) {
        const auto p = testing::random_mask(rng, {8, 8, 8}, 0.1 + 0.004 * t);
        const auto g = testing::random_mask(rng, {8, 8, 8}, 0.5);
        double tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            tp += p.data[i] && g.data[i];
            fp += p.data[i] && !g.data[i];
            fn += !p.data[i] && g.data[i];
            tn += !p.data[i] && !g.data[i];
        }
        const auto r = overlap_metrics(p, g);
        CHECK(r.dice == 2 * tp / (2 * tp + fp + fn));
        CHECK(r.iou == tp / (tp + fp + fn));
        CHECK(r.precision == tp / (tp + fp));
        CHECK(r.recall == tp / (tp + fn));
        CHECK(r.pixel_accuracy == (tp + tn) / 512.0);
        CHECK(r.dice == doctest::Approx(2 * r.iou / (1 + r.iou)).epsilon(1e-15));
        CHECK(r.iou <= r.dice);
        const auto s = overlap_metrics(g, p);
        CHECK(s.dice == r.dice);
        CHECK(s.iou == r.iou);
        CHECK(s.recall == r.precision);
    }
}

TEST_CASE("similarity: identical, constant offset, windowed-formula oracle") {
    std::mt19937_64 rng(8);
    VoxelVolume a({32, 32, 4}, {1, 1, 1}, {0, 0, 0});
    std::uniform_int_distribution<int> hu(-1000, 2000);
    for (auto& x : a.data) x = static_cast<int16_t>(hu(rng));
    auto s = image_similarity(a, a);
    CHECK(s.mae == 0.0);
    CHECK(s.ssim == 1.0);

    VoxelVolume b = a;
    for (auto& x : b.data) x = static_cast<int16_t>(x + 10);
    CHECK(image_similarity(a, b).mae == 10.0);

    VoxelVolume c = a;
    for (auto& x : c.data) x = static_cast<int16_t>(hu(rng));
    const auto r = image_similarity(a, c);
    CHECK(std::abs(r.ssim - ssim_oracle(a, c)) < 1e-9);
    CHECK(r.ssim == doctest::Approx(image_similarity(c, a).ssim).epsilon(1e-14));
    CHECK(r.mae == image_similarity(c, a).mae);
    CHECK(r.ssim < 1.0);
    CHECK(r.ssim >= -1.0);
}
