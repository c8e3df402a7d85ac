#include "handssm/metrics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace handssm {

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    require_aligned(pred, gt, "overlap_metrics");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

OverlapReport overlap_from_counts(const ConfusionCounts& c) {
    const auto ratio = [](double num, double den) { return den == 0.0 ? 1.0 : num / den; };
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn),
                 tn = static_cast<double>(c.tn);
    OverlapReport r;
    r.dice = ratio(2 * tp, 2 * tp + fp + fn);
    r.iou = ratio(tp, tp + fp + fn);
    r.precision = ratio(tp, tp + fp);
    r.recall = ratio(tp, tp + fn);
    r.pixel_accuracy = ratio(tp + tn, tp + fp + fn + tn);
    return r;
}

OverlapReport overlap_metrics(const BinaryMask& pred, const BinaryMask& gt) {
    return overlap_from_counts(confusion(pred, gt));
}

namespace {

Eigen::VectorXd gaussian_window(int size, double sigma) {
    Eigen::VectorXd w(size);
    const double c = 0.5 * (size - 1);
    for (int i = 0; i < size; ++i) w[i] = std::exp(-((i - c) * (i - c)) / (2 * sigma * sigma));
    return w / w.sum();
}

using Slice = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic>;  // rows = y, cols = x

// Separable "valid" filtering: output has (ny - w + 1) x (nx - w + 1) entries.
Slice filter_valid(const Slice& img, const Eigen::VectorXd& w) {
    const int k = static_cast<int>(w.size());
    const Eigen::Index ny = img.rows(), nx = img.cols();
    Slice rows_pass(ny, nx - k + 1);
    for (Eigen::Index x = 0; x + k <= nx; ++x) {
        rows_pass.col(x).setZero();
        for (int t = 0; t < k; ++t) rows_pass.col(x) += w[t] * img.col(x + t);
    }
    Slice out(ny - k + 1, nx - k + 1);
    for (Eigen::Index y = 0; y + k <= ny; ++y) {
        out.row(y).setZero();
        for (int t = 0; t < k; ++t) out.row(y) += w[t] * rows_pass.row(y + t);
    }
    return out;
}

}  // namespace

SimilarityReport image_similarity(const VoxelVolume& a, const VoxelVolume& b, const SsimParams& params) {
    require_aligned(a, b, "image_similarity");
    SimilarityReport r;
    if (a.empty()) return r;

    double abs_sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) abs_sum += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    r.mae = abs_sum / static_cast<double>(a.size());

    const int nx = a.dims.x(), ny = a.dims.y(), nz = a.dims.z();
    int win = std::min({params.window, nx, ny});
    if (win % 2 == 0) --win;
    const Eigen::VectorXd w = gaussian_window(win, params.sigma);
    const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
    const double c2 = std::pow(params.k2 * params.dynamic_range, 2);

    double ssim_sum = 0.0;
    Slice sa(ny, nx), sb(ny, nx);
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                sa(y, x) = a(x, y, z);
                sb(y, x) = b(x, y, z);
            }
        const Slice mu_a = filter_valid(sa, w), mu_b = filter_valid(sb, w);
        const Slice var_a = filter_valid(sa * sa, w) - mu_a * mu_a;
        const Slice var_b = filter_valid(sb * sb, w) - mu_b * mu_b;
        const Slice cov = filter_valid(sa * sb, w) - mu_a * mu_b;
        const Slice map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                          ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        ssim_sum += map.mean();
    }
    r.ssim = ssim_sum / nz;
    return r;
}

}  // namespace handssm
