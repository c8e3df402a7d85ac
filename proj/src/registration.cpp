#include "handssm/registration.hpp"

#include "handssm/parallel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <random>

namespace handssm {

namespace {

constexpr double kSigma2Floor = 1e-10;
constexpr double kNegligible = -50.0;  // log-posterior below which a pair is skipped

double logaddexp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

struct EStep {
    Eigen::VectorXd p1;   // template side, M
    Eigen::VectorXd pt1;  // target side, N
    Eigen::MatrixXd px;   // M x 3
    double np = 0.0;
    double log_likelihood = 0.0;
    std::vector<int> best;
    std::vector<double> best_p;
};

// Two passes so neither needs the full posterior: normalizers per target point, then sums per template point.
EStep e_step(const PointSet& t, const PointSet& x, double sigma2, double w, int threads) {
    const Eigen::Index m = t.rows(), n = x.rows();
    const double inv = 1.0 / (2.0 * sigma2);
    const double log_c = w > 0.0 ? 1.5 * std::log(2.0 * std::numbers::pi * sigma2) + std::log(w / (1.0 - w)) +
                                       std::log(static_cast<double>(m) / static_cast<double>(n))
                                 : -std::numeric_limits<double>::infinity();
    Eigen::VectorXd log_norm(n);
    EStep e;
    e.pt1.resize(n);
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t ni) {
        const auto j = static_cast<Eigen::Index>(ni);
        double amax = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < m; ++i) amax = std::max(amax, -(t.row(i) - x.row(j)).squaredNorm() * inv);
        double s = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double a = -(t.row(i) - x.row(j)).squaredNorm() * inv - amax;
            if (a > kNegligible) s += std::exp(a);
        }
        const double inlier = amax + std::log(s);
        log_norm[j] = logaddexp(inlier, log_c);
        e.pt1[j] = std::exp(inlier - log_norm[j]);
    });
    e.p1.resize(m);
    e.px.resize(m, 3);
    e.best.assign(static_cast<std::size_t>(m), -1);
    e.best_p.assign(static_cast<std::size_t>(m), 0.0);
    parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t mi) {
        const auto i = static_cast<Eigen::Index>(mi);
        double p1 = 0.0;
        double best = -std::numeric_limits<double>::infinity();
        Eigen::RowVector3d px = Eigen::RowVector3d::Zero();
        for (Eigen::Index j = 0; j < n; ++j) {
            const double a = -(t.row(i) - x.row(j)).squaredNorm() * inv - log_norm[j];
            if (a > best) {
                best = a;
                e.best[mi] = static_cast<int>(j);
            }
            if (a < kNegligible) continue;
            const double p = std::exp(a);
            p1 += p;
            px += p * x.row(j);
        }
        e.best_p[mi] = std::exp(best);
        e.p1[i] = p1;
        e.px.row(i) = px;
    });
    e.np = e.pt1.sum();
    e.log_likelihood = log_norm.sum();
    return e;
}

// Top eigenpairs of a symmetric matrix by randomized subspace iteration.
void truncated_eigen(const Eigen::MatrixXd& g, int rank, Eigen::MatrixXd& q, Eigen::VectorXd& lambda, double& clamp) {
    const Eigen::Index m = g.rows();
    const Eigen::Index l = std::min<Eigen::Index>(m, rank + 10);
    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd omega(m, l);
    for (Eigen::Index c = 0; c < l; ++c)
        for (Eigen::Index r = 0; r < m; ++r) omega(r, c) = normal(rng);
    Eigen::MatrixXd basis = g * omega;
    for (int it = 0; it < 4; ++it) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
        basis = g * (qr.householderQ() * Eigen::MatrixXd::Identity(m, l));
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
    const Eigen::MatrixXd u = qr.householderQ() * Eigen::MatrixXd::Identity(m, l);
    const Eigen::MatrixXd b = u.transpose() * g * u;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (b + b.transpose()));
    // Eigen sorts ascending; keep the largest `rank`, dropping non-positive ones.
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = l - 1; k >= 0 && static_cast<int>(keep.size()) < rank; --k) {
        if (eig.eigenvalues()[k] > 0.0)
            keep.push_back(k);
        else
            clamp = std::max(clamp, -eig.eigenvalues()[k]);
    }
    q.resize(m, static_cast<Eigen::Index>(keep.size()));
    lambda.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        q.col(static_cast<Eigen::Index>(k)) = u * eig.eigenvectors().col(keep[k]);
        lambda[static_cast<Eigen::Index>(k)] = eig.eigenvalues()[keep[k]];
    }
}

Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& k, double& clamp) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
    Eigen::VectorXd ev = eig.eigenvalues();
    clamp = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev[i] < 0.0) {
            clamp = std::max(clamp, -ev[i]);
            ev[i] = 0.0;
        }
    if (clamp == 0.0) return k;
    Eigen::MatrixXd out = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
    // Rescale to a unit diagonal, which keeps the matrix PSD.
    const Eigen::VectorXd s = out.diagonal().cwiseSqrt().cwiseInverse();
    out = s.asDiagonal() * out * s.asDiagonal();
    out = 0.5 * (out + out.transpose());
    out.diagonal().setOnes();
    return out;
}

}  // namespace

PointSet Prealignment::apply(const PointSet& p) const {
    PointSet out = scale * p;
    out.rowwise() += translation.transpose();
    return out;
}

Prealignment rigid_prealign(const PointSet& templ, const PointSet& target) {
    if (templ.rows() < 3 || target.rows() < 3) throw RegistrationError("rigid_prealign: need at least 3 points per set");
    const Eigen::RowVector3d ct = templ.colwise().mean(), cx = target.colwise().mean();
    const double rt = std::sqrt((templ.rowwise() - ct).rowwise().squaredNorm().mean());
    const double rx = std::sqrt((target.rowwise() - cx).rowwise().squaredNorm().mean());
    if (!(rt > 0.0) || !(rx > 0.0)) throw RegistrationError("rigid_prealign: degenerate point set");
    Prealignment p;
    p.scale = rx / rt;
    p.translation = (cx - p.scale * ct).transpose();
    return p;
}

void CpdParams::validate() const {
    if (!(beta > 0.0)) throw RegistrationError("cpd: beta must be positive");
    if (!(lambda > 0.0)) throw RegistrationError("cpd: lambda must be positive");
    if (!(w >= 0.0 && w < 1.0)) throw RegistrationError("cpd: w must lie in [0, 1)");
    if (max_iters < 1) throw RegistrationError("cpd: max_iters must be at least 1");
    if (!(tol >= 0.0)) throw RegistrationError("cpd: tol must be non-negative");
    if (rank < 0) throw RegistrationError("cpd: rank must be non-negative");
}

std::string kernel_name(KernelType k) { return k == KernelType::Gaussian ? "gaussian" : "geodesic"; }

KernelType parse_kernel(const std::string& name) {
    if (name == "gaussian") return KernelType::Gaussian;
    if (name == "geodesic") return KernelType::Geodesic;
    throw RegistrationError("unknown kernel '" + name + "'");
}

Eigen::MatrixXd gaussian_kernel(const PointSet& y, double beta) {
    const Eigen::Index m = y.rows();
    Eigen::MatrixXd g(m, m);
    const double inv = 1.0 / (2.0 * beta * beta);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = j; i < m; ++i) g(i, j) = g(j, i) = std::exp(-(y.row(i) - y.row(j)).squaredNorm() * inv);
    return g;
}

Eigen::MatrixXd geodesic_distances(const TriMesh& mesh) {
    const Eigen::Index m = mesh.vertex_count();
    if (m == 0) throw RegistrationError("geodesic_distances: empty mesh");
    const auto nbrs = vertex_neighbours(mesh);
    Eigen::MatrixXd d(m, m);
    using Item = std::pair<double, int>;
    for (Eigen::Index s = 0; s < m; ++s) {
        auto col = d.col(s);
        col.setConstant(std::numeric_limits<double>::infinity());
        std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
        col[s] = 0.0;
        heap.emplace(0.0, static_cast<int>(s));
        while (!heap.empty()) {
            const auto [dist, v] = heap.top();
            heap.pop();
            if (dist > col[v]) continue;
            for (int u : nbrs[static_cast<std::size_t>(v)]) {
                const double nd = dist + (mesh.vertices.row(u) - mesh.vertices.row(v)).norm();
                if (nd < col[u]) {
                    col[u] = nd;
                    heap.emplace(nd, u);
                }
            }
        }
        if (!col.allFinite()) throw RegistrationError("geodesic_distances: mesh is not connected");
    }
    return d;
}

GeodesicKernel geodesic_kernel(const TriMesh& mesh, double beta) {
    if (!(beta > 0.0)) throw RegistrationError("geodesic_kernel: beta must be positive");
    const Eigen::MatrixXd d = geodesic_distances(mesh);
    const Eigen::MatrixXd k = (-(d.array().square()) / (2.0 * beta * beta)).exp().matrix();
    GeodesicKernel out;
    out.matrix = clamp_psd(0.5 * (k + k.transpose()), out.clamp_magnitude);
    return out;
}

Eigen::MatrixXd cpd_posterior(const PointSet& moved, const PointSet& target, double sigma2, double w) {
    const Eigen::Index m = moved.rows(), n = target.rows();
    const double inv = 1.0 / (2.0 * sigma2);
    const double log_c = w > 0.0 ? 1.5 * std::log(2.0 * std::numbers::pi * sigma2) + std::log(w / (1.0 - w)) +
                                       std::log(static_cast<double>(m) / static_cast<double>(n))
                                 : -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd p(n, m);
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::RowVectorXd a(m);
        for (Eigen::Index i = 0; i < m; ++i) a[i] = -(moved.row(i) - target.row(j)).squaredNorm() * inv;
        const double amax = a.maxCoeff();
        const double norm = logaddexp(amax + std::log((a.array() - amax).exp().sum()), log_c);
        p.row(j) = (a.array() - norm).exp().matrix();
    }
    return p;
}

RegistrationResult cpd_nonrigid(const PointSet& templ, const PointSet& target, const CpdParams& params,
                                const TriMesh* template_mesh) {
    params.validate();
    if (templ.rows() == 0 || target.rows() == 0) throw RegistrationError("cpd: empty point set");
    if (!templ.allFinite() || !target.allFinite()) throw RegistrationError("cpd: non-finite input");
    const Eigen::Index m = templ.rows(), n = target.rows();
    if (m > kMaxTemplatePoints)
        throw RegistrationError("cpd: template has " + std::to_string(m) + " points; the dense kernel allows at most " +
                                std::to_string(kMaxTemplatePoints) + ", subsample first");

    RegistrationResult out;
    out.template_points = templ;
    out.beta = params.beta;
    out.kernel = params.kernel;

    Eigen::MatrixXd g;
    if (params.kernel == KernelType::Geodesic) {
        if (!template_mesh || template_mesh->vertex_count() != m || template_mesh->vertices != templ)
            throw RegistrationError("cpd: the geodesic kernel needs the template mesh");
        const Eigen::MatrixXd d = geodesic_distances(*template_mesh);
        g = (-(d.array().square()) / (2.0 * params.beta * params.beta)).exp().matrix();
        g = 0.5 * (g + g.transpose());
        if (params.rank == 0) g = clamp_psd(g, out.psd_clamp);
    } else {
        g = gaussian_kernel(templ, params.beta);
    }
    const bool low_rank = params.rank > 0 && params.rank < m;
    Eigen::MatrixXd q;
    Eigen::VectorXd lambda_g;
    if (low_rank) {
        truncated_eigen(g, params.rank, q, lambda_g, out.psd_clamp);
        g.resize(0, 0);
    }
    auto apply_g = [&](const Eigen::MatrixXd& w) -> Eigen::MatrixXd {
        return low_rank ? Eigen::MatrixXd(q * (lambda_g.asDiagonal() * (q.transpose() * w))) : Eigen::MatrixXd(g * w);
    };

    // Work relative to the target centroid to keep the sigma^2 expansion well conditioned.
    const Eigen::RowVector3d centre = target.colwise().mean();
    const PointSet x = target.rowwise() - centre;
    const PointSet y = templ.rowwise() - centre;
    const double x2 = x.rowwise().squaredNorm().sum();
    const double y2 = y.rowwise().squaredNorm().sum();
    double sigma2 = (static_cast<double>(m) * x2 + static_cast<double>(n) * y2 -
                     2.0 * x.colwise().sum().dot(y.colwise().sum())) /
                    (3.0 * static_cast<double>(m) * static_cast<double>(n));
    sigma2 = std::max(sigma2, kSigma2Floor);

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, 3);
    PointSet t = y;
    double previous = std::numeric_limits<double>::quiet_NaN();
    const Eigen::VectorXd x_sq = x.rowwise().squaredNorm();
    for (int it = 0; it < params.max_iters; ++it) {
        const EStep e = e_step(t, x, sigma2, params.w, params.threads);
        const double reg = 0.5 * params.lambda * (w.transpose() * apply_g(w)).trace();
        const double objective = -e.log_likelihood + 1.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * sigma2) -
                                 static_cast<double>(n) * std::log((1.0 - params.w) / static_cast<double>(m)) + reg;
        out.objective.push_back(objective);
        if (!(e.np > 0.0)) throw RegistrationError("cpd: all target points classified as outliers", it);

        // M-step: (dP G + lambda sigma^2 I) W = P X - dP Y.
        const double ls = params.lambda * sigma2;
        const Eigen::MatrixXd rhs = e.px - e.p1.asDiagonal() * y;
        if (low_rank) {
            const Eigen::MatrixXd dq = e.p1.asDiagonal() * q;
            Eigen::MatrixXd inner = q.transpose() * dq;
            inner.diagonal() += ls * lambda_g.cwiseInverse();
            const Eigen::MatrixXd z = inner.ldlt().solve(q.transpose() * rhs);
            w = (rhs - dq * z) / ls;
        } else {
            Eigen::MatrixXd a = e.p1.asDiagonal() * g;
            a.diagonal().array() += ls;
            w = a.partialPivLu().solve(rhs);
        }
        if (!w.allFinite()) throw RegistrationError("cpd: linear solve failed", it);
        t = y + apply_g(w);

        const double s2 = (e.pt1.dot(x_sq) - 2.0 * (e.px.cwiseProduct(t)).sum() + e.p1.dot(t.rowwise().squaredNorm())) /
                          (3.0 * e.np);
        sigma2 = std::max(std::isfinite(s2) ? s2 : kSigma2Floor, kSigma2Floor);
        out.sigma2_trace.push_back(sigma2);
        out.iterations = it + 1;
        if (std::isfinite(previous) && std::abs(objective - previous) <= params.tol * std::abs(objective)) {
            out.converged = true;
            break;
        }
        previous = objective;
    }

    const EStep last = e_step(t, x, sigma2, params.w, params.threads);
    out.correspondence = last.best;
    out.probability = last.best_p;
    out.sigma2 = sigma2;
    out.coefficients = w;
    out.kernel_norm = (w.transpose() * apply_g(w)).trace();
    out.deformed = t.rowwise() + centre;
    return out;
}

std::vector<int> farthest_point_indices(const PointSet& points, int count) {
    const Eigen::Index n = points.rows();
    if (n == 0 || count <= 0) return {};
    std::vector<int> picked{0};
    Eigen::VectorXd gap = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    while (static_cast<Eigen::Index>(picked.size()) < std::min<Eigen::Index>(count, n)) {
        gap = gap.cwiseMin((points.rowwise() - points.row(picked.back())).rowwise().squaredNorm());
        Eigen::Index far = 0;
        const double best = gap.maxCoeff(&far);
        if (best == 0.0) break;
        picked.push_back(static_cast<int>(far));
    }
    return picked;
}

PointSet cpd_transform(const RegistrationResult& r, const PointSet& points, int threads) {
    if (r.kernel != KernelType::Gaussian)
        throw RegistrationError("cpd_transform: only the Gaussian kernel extends beyond the template points");
    const double inv = 1.0 / (2.0 * r.beta * r.beta);
    PointSet out = points;
    parallel_for(static_cast<std::size_t>(points.rows()), threads, [&](std::size_t pi) {
        const auto i = static_cast<Eigen::Index>(pi);
        Eigen::RowVector3d d = Eigen::RowVector3d::Zero();
        for (Eigen::Index k = 0; k < r.template_points.rows(); ++k) {
            const double a = (points.row(i) - r.template_points.row(k)).squaredNorm() * inv;
            if (a < 50.0) d += std::exp(-a) * r.coefficients.row(k);
        }
        out.row(i) += d;
    });
    return out;
}

}  // namespace handssm
