#include "handssm/skinning.hpp"

#include "handssm/geometry.hpp"
#include "handssm/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

namespace handssm {

namespace {

Eigen::Vector3d vertex(const TriMesh& m, Eigen::Index i) { return m.vertices.row(i).transpose(); }

Eigen::Vector3d bone_start(const Skeleton& s, int b) { return s.rest[static_cast<std::size_t>(s.bone_parent(b))]; }
Eigen::Vector3d bone_end(const Skeleton& s, int b) { return s.rest[static_cast<std::size_t>(s.bone_child(b))]; }

std::vector<int> nearest_bones(const TriMesh& mesh, const Skeleton& skel) {
    std::vector<int> out(static_cast<std::size_t>(mesh.vertex_count()));
    for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
        const Eigen::Vector3d p = vertex(mesh, i);
        double best = std::numeric_limits<double>::infinity();
        for (int b = 0; b < skel.bone_count(); ++b) {
            const double d = point_segment_distance<double>(p, bone_start(skel, b), bone_end(skel, b));
            if (d < best) {
                best = d;
                out[static_cast<std::size_t>(i)] = b;
            }
        }
    }
    return out;
}

// Multi-source Dijkstra through the interior voxels, seeded on each bone segment; every voxel
// ends up labelled with the geodesically closest bone (ties to the smaller index).
std::vector<int> geodesic_bones(const TriMesh& mesh, const Skeleton& skel, const BinaryMask& interior) {
    const std::size_t n = interior.size();
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::vector<int> label(n, -1);
    using Item = std::tuple<double, int, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    const double reach = interior.spacing.norm() * 0.5;
    for (int b = 0; b < skel.bone_count(); ++b) {
        const Eigen::Vector3d a = bone_start(skel, b), c = bone_end(skel, b);
        Eigen::Vector3i lo, hi;
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::max(0, static_cast<int>(std::floor((std::min(a[k], c[k]) - reach - interior.origin[k]) / interior.spacing[k])));
            hi[k] = std::min(interior.dims[k] - 1,
                             static_cast<int>(std::ceil((std::max(a[k], c[k]) + reach - interior.origin[k]) / interior.spacing[k])));
        }
        for (int z = lo.z(); z <= hi.z(); ++z)
            for (int y = lo.y(); y <= hi.y(); ++y)
                for (int x = lo.x(); x <= hi.x(); ++x) {
                    const std::size_t i = interior.index(x, y, z);
                    if (!interior.data[i]) continue;
                    const double d = point_segment_distance<double>(interior.position(x, y, z), a, c);
                    if (d > reach) continue;
                    if (d < dist[i] || (d == dist[i] && b < label[i])) {
                        dist[i] = d;
                        label[i] = b;
                        heap.emplace(d, b, i);
                    }
                }
    }
    while (!heap.empty()) {
        const auto [d, b, i] = heap.top();
        heap.pop();
        if (d != dist[i] || b != label[i]) continue;
        const Eigen::Vector3i c = interior.coords(i);
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (!dx && !dy && !dz) continue;
                    const int x = c.x() + dx, y = c.y() + dy, z = c.z() + dz;
                    if (!interior.contains(x, y, z)) continue;
                    const std::size_t j = interior.index(x, y, z);
                    if (!interior.data[j]) continue;
                    const double nd = d + interior.spacing.cwiseProduct(Eigen::Vector3d(dx, dy, dz)).norm();
                    if (nd < dist[j] || (nd == dist[j] && b < label[j])) {
                        dist[j] = nd;
                        label[j] = b;
                        heap.emplace(nd, b, j);
                    }
                }
    }

    std::vector<int> out = nearest_bones(mesh, skel);
    for (Eigen::Index v = 0; v < mesh.vertex_count(); ++v) {
        const Eigen::Vector3d p = vertex(mesh, v);
        const Eigen::Vector3d g = (p - interior.origin).cwiseQuotient(interior.spacing);
        double best = std::numeric_limits<double>::infinity();
        int best_label = -1;
        for (int dz = -1; dz <= 2; ++dz)
            for (int dy = -1; dy <= 2; ++dy)
                for (int dx = -1; dx <= 2; ++dx) {
                    const int x = static_cast<int>(std::floor(g.x())) + dx, y = static_cast<int>(std::floor(g.y())) + dy,
                              z = static_cast<int>(std::floor(g.z())) + dz;
                    if (!interior.contains(x, y, z)) continue;
                    const std::size_t i = interior.index(x, y, z);
                    if (label[i] < 0) continue;
                    const double d = dist[i] + (p - interior.position(x, y, z)).norm();
                    if (d < best || (d == best && label[i] < best_label)) {
                        best = d;
                        best_label = label[i];
                    }
                }
        if (best_label >= 0) out[static_cast<std::size_t>(v)] = best_label;
    }
    return out;
}

}  // namespace

SkinBinding bind_weights(const TriMesh& mesh, const Skeleton& skel, const BindParams& params, const BinaryMask* interior) {
    if (mesh.vertex_count() == 0) throw SkinningError("bind_weights: empty mesh");
    if (skel.bone_count() == 0) throw SkinningError("bind_weights: skeleton has no bones");
    if (params.smoothing_iterations < 0) throw SkinningError("bind_weights: negative smoothing iterations");
    const auto nv = static_cast<std::size_t>(mesh.vertex_count());
    const int nb = skel.bone_count();

    SkinBinding out;
    if (params.geodesic) {
        if (!interior) throw SkinningError("bind_weights: geodesic binding needs an interior mask");
        out.dominant = geodesic_bones(mesh, skel, *interior);
    } else {
        out.dominant = nearest_bones(mesh, skel);
    }

    // Diffuse one-hot weights over the vertex graph: w <- (w + mean of neighbours) / 2.
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nv), nb);
    for (std::size_t i = 0; i < nv; ++i) w(static_cast<Eigen::Index>(i), out.dominant[i]) = 1.0;
    const auto nbrs = vertex_neighbours(mesh);
    Eigen::MatrixXd next(w.rows(), w.cols());
    for (int it = 0; it < params.smoothing_iterations; ++it) {
        for (std::size_t i = 0; i < nv; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            if (nbrs[i].empty()) {
                next.row(r) = w.row(r);
                continue;
            }
            Eigen::RowVectorXd avg = Eigen::RowVectorXd::Zero(nb);
            for (int j : nbrs[i]) avg += w.row(j);
            next.row(r) = 0.5 * (w.row(r) + avg / static_cast<double>(nbrs[i].size()));
        }
        w.swap(next);
    }

    out.weights.resize(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const int dom = out.dominant[i];
        // The dominant bone keeps the largest weight.
        w(r, dom) = w.row(r).maxCoeff();
        std::vector<std::pair<int, double>> ws;
        for (int b = 0; b < nb; ++b)
            if (w(r, b) > 0.0) ws.emplace_back(b, w(r, b));
        std::stable_sort(ws.begin(), ws.end(), [dom](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return (a.first == dom) > (b.first == dom);
        });
        if (ws.size() > static_cast<std::size_t>(kMaxInfluences)) ws.resize(kMaxInfluences);
        double sum = 0.0;
        for (const auto& e : ws) sum += e.second;
        for (auto& e : ws) e.second /= sum;
        out.weights[i] = std::move(ws);
    }
    return out;
}

namespace {

double reparameterize(double d, double support, double* slope) {
    const double u = d / support;
    if (u >= 1.0) {
        if (slope) *slope = 0.0;
        return 0.0;
    }
    if (u <= -1.0) {
        if (slope) *slope = 0.0;
        return 1.0;
    }
    const double u2 = u * u;
    if (slope) *slope = (-15.0 / 16.0) * (u2 - 1.0) * (u2 - 1.0) / support;
    return ((-3.0 / 16.0) * u2 * u2 + (5.0 / 8.0) * u2 - 15.0 / 16.0) * u + 0.5;
}

std::vector<int> farthest_point_sample(const TriMesh& mesh, const std::vector<int>& region, int count) {
    std::vector<int> picked{region.front()};
    std::vector<double> gap(region.size(), std::numeric_limits<double>::infinity());
    while (static_cast<int>(picked.size()) < std::min<int>(count, static_cast<int>(region.size()))) {
        const Eigen::Vector3d last = vertex(mesh, picked.back());
        std::size_t far = 0;
        for (std::size_t k = 0; k < region.size(); ++k) {
            gap[k] = std::min(gap[k], (vertex(mesh, region[k]) - last).norm());
            if (gap[k] > gap[far]) far = k;
        }
        if (gap[far] == 0.0) break;
        picked.push_back(region[far]);
    }
    return picked;
}

BoneField capsule_field(const Skeleton& skel, int b, double radius) {
    BoneField f;
    f.bone = b;
    f.fallback = true;
    f.seg_a = bone_start(skel, b);
    f.seg_b = bone_end(skel, b);
    f.capsule_radius = radius;
    f.support = radius;
    f.bound_center = 0.5 * (f.seg_a + f.seg_b);
    f.bound_radius = 0.5 * (f.seg_b - f.seg_a).norm() + radius + f.support;
    return f;
}

bool fit_hrbf(BoneField& f, const Eigen::Matrix<double, Eigen::Dynamic, 3>& x, const Eigen::Matrix<double, Eigen::Dynamic, 3>& nrm) {
    const Eigen::Index n = x.rows();
    const Eigen::Index size = 4 * n + 4;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(size, size);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(size);
    // Unknowns: alpha (n), beta (3n), linear (3), constant (1).
    // Rows: f(x_j) = 0 (n), grad f(x_j) = n_j (3n), side conditions (4).
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Vector3d v = (x.row(j) - x.row(i)).transpose();
            const double r = v.norm();
            const Eigen::Vector3d g = 3.0 * r * v;
            Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
            if (r > 0.0) h = 3.0 * (r * Eigen::Matrix3d::Identity() + v * v.transpose() / r);
            a(j, i) = r * r * r;
            a.block(j, n + 3 * i, 1, 3) = -g.transpose();
            a.block(n + 3 * j, i, 3, 1) = g;
            a.block(n + 3 * j, n + 3 * i, 3, 3) = -h;
        }
        a.block(j, 4 * n, 1, 3) = x.row(j);
        a(j, 4 * n + 3) = 1.0;
        a.block(n + 3 * j, 4 * n, 3, 3) = Eigen::Matrix3d::Identity();
        rhs.segment(n + 3 * j, 3) = nrm.row(j).transpose();
        // Side conditions: sum alpha = 0, sum alpha x + beta = 0.
        a(4 * n + 3, j) = 1.0;
        a.block(4 * n, j, 3, 1) = x.row(j).transpose();
        a.block(4 * n, n + 3 * j, 3, 3) = Eigen::Matrix3d::Identity();
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < size) return false;
    const Eigen::VectorXd sol = qr.solve(rhs);
    if (!sol.allFinite() || (a * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) return false;
    f.centers = x;
    f.alpha = sol.head(n);
    f.beta.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) f.beta.row(i) = sol.segment(n + 3 * i, 3).transpose();
    f.linear = sol.segment(4 * n, 3);
    f.constant = sol[4 * n + 3];
    return true;
}

}  // namespace

double BoneField::distance(const Eigen::Vector3d& x, Eigen::Vector3d* grad) const {
    if (fallback) {
        const double t = segment_param<double>(x, seg_a, seg_b);
        const Eigen::Vector3d v = x - (seg_a + t * (seg_b - seg_a));
        const double r = v.norm();
        if (grad) *grad = r > 0.0 ? Eigen::Vector3d(v / r) : Eigen::Vector3d::Zero();
        return r - capsule_radius;
    }
    double f = linear.dot(x) + constant;
    Eigen::Vector3d g = linear;
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
        const Eigen::Vector3d v = x - centers.row(i).transpose();
        const double r = v.norm();
        const Eigen::Vector3d b = beta.row(i).transpose();
        f += alpha[i] * r * r * r - 3.0 * r * v.dot(b);
        if (grad) {
            g += 3.0 * alpha[i] * r * v;
            if (r > 0.0) g -= 3.0 * (r * b + v * (v.dot(b) / r));
        }
    }
    if (grad) *grad = g;
    return f;
}

double BoneField::value(const Eigen::Vector3d& x, Eigen::Vector3d* grad) const {
    if ((x - bound_center).norm() > bound_radius) {
        if (grad) grad->setZero();
        return 0.0;
    }
    Eigen::Vector3d g;
    const double d = distance(x, grad ? &g : nullptr);
    double slope = 0.0;
    const double v = reparameterize(d, support, grad ? &slope : nullptr);
    if (grad) *grad = slope * g;
    return v;
}

std::vector<BoneField> fit_bone_fields(const TriMesh& mesh, const Skeleton& skel, const SkinBinding& binding,
                                       const FieldParams& params) {
    if (params.max_centers < 4) throw SkinningError("fit_bone_fields: max_centers must be at least 4");
    if (binding.vertex_count() != static_cast<std::size_t>(mesh.vertex_count()))
        throw SkinningError("fit_bone_fields: binding does not match the mesh");
    const PointSet normals = vertex_normals(mesh);
    std::vector<std::vector<int>> regions(static_cast<std::size_t>(skel.bone_count()));
    for (std::size_t i = 0; i < binding.dominant.size(); ++i)
        regions[static_cast<std::size_t>(binding.dominant[i])].push_back(static_cast<int>(i));

    std::vector<BoneField> fields(regions.size());
    parallel_for(regions.size(), params.threads, [&](std::size_t bi) {
        const int b = static_cast<int>(bi);
        const auto& region = regions[bi];
        const Eigen::Vector3d a = bone_start(skel, b), c = bone_end(skel, b);
        double reach = 0.0, mean = 0.0;
        for (int v : region) {
            const double d = point_segment_distance<double>(vertex(mesh, v), a, c);
            reach = std::max(reach, d);
            mean += d;
        }
        if (region.size() < 4) {
            const double radius = region.empty() ? 0.2 * (c - a).norm() : mean / static_cast<double>(region.size());
            fields[bi] = capsule_field(skel, b, std::max(radius, 1e-3));
            return;
        }
        const auto picked = farthest_point_sample(mesh, region, params.max_centers);
        Eigen::Matrix<double, Eigen::Dynamic, 3> x(static_cast<Eigen::Index>(picked.size()), 3), n(x.rows(), 3);
        for (std::size_t k = 0; k < picked.size(); ++k) {
            x.row(static_cast<Eigen::Index>(k)) = mesh.vertices.row(picked[k]);
            n.row(static_cast<Eigen::Index>(k)) = normals.row(picked[k]);
        }
        BoneField f;
        f.bone = b;
        if (picked.size() < 4 || !fit_hrbf(f, x, n)) {
            fields[bi] = capsule_field(skel, b, std::max(mean / static_cast<double>(region.size()), 1e-3));
            return;
        }
        f.support = std::max(params.support_scale * reach, 1e-3);
        f.bound_center = x.colwise().mean().transpose();
        f.bound_radius = (x.rowwise() - f.bound_center.transpose()).rowwise().norm().maxCoeff() + f.support;
        fields[bi] = std::move(f);
    });
    return fields;
}

double ComposedField::operator()(const Eigen::Vector3d& x, Eigen::Vector3d* grad) const {
    double s = 1.0;
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < fields->size(); ++i) {
        const BoneField& f = (*fields)[i];
        Eigen::Vector3d local = x;
        if (!transforms.empty()) local = transforms[i].inverse(Eigen::Isometry) * x;
        Eigen::Vector3d gi;
        const double v = f.value(local, grad ? &gi : nullptr);
        if (v == 0.0) continue;
        const double e = std::exp(kBlendSharpness * v);
        s += e - 1.0;
        if (grad) g += e * (transforms.empty() ? gi : Eigen::Vector3d(transforms[i].linear() * gi));
    }
    if (grad) *grad = g / s;
    return std::log(s) / kBlendSharpness;
}

PointSet linear_blend(const TriMesh& mesh, const Skeleton& skel, const SkinBinding& binding, const Pose& pose) {
    if (binding.vertex_count() != static_cast<std::size_t>(mesh.vertex_count()))
        throw SkinningError("linear_blend: binding does not match the mesh");
    const JointTransforms fk = forward_kinematics(skel, pose);
    PointSet out(mesh.vertex_count(), 3);
    for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
        const Eigen::Vector3d v = vertex(mesh, i);
        Eigen::Vector3d p = Eigen::Vector3d::Zero();
        for (const auto& [b, w] : binding.weights[static_cast<std::size_t>(i)])
            p += w * (fk.skinning[static_cast<std::size_t>(skel.bone_parent(b))] * v);
        out.row(i) = p.transpose();
    }
    return out;
}

NormalizeResult pose_normalize(const TriMesh& mesh, const Skeleton& skel, const SkinBinding& binding,
                               const std::vector<BoneField>& fields, const Pose& pose, const NormalizeParams& params) {
    const PointSet lbs = linear_blend(mesh, skel, binding, pose);
    const JointTransforms fk = forward_kinematics(skel, pose);
    ComposedField rest{&fields, {}};
    ComposedField posed{&fields, {}};
    for (const BoneField& f : fields) posed.transforms.push_back(fk.skinning[static_cast<std::size_t>(skel.bone_parent(f.bone))]);

    const auto nv = static_cast<std::size_t>(mesh.vertex_count());
    NormalizeResult out;
    out.mesh.triangles = mesh.triangles;
    out.mesh.vertices = lbs;
    std::vector<int> iterations(nv, 0);
    std::vector<double> residual(nv, 0.0);
    std::vector<char> ok(nv, 0);
    parallel_for(nv, params.threads, [&](std::size_t i) {
        const auto r = static_cast<Eigen::Index>(i);
        const double iso = rest(vertex(mesh, r));
        Eigen::Vector3d x = lbs.row(r).transpose();
        Eigen::Vector3d g;
        double res = posed(x, &g) - iso;
        int it = 0;
        while (std::abs(res) > params.iso_tolerance && it < params.max_iterations) {
            const double g2 = g.squaredNorm();
            if (!(g2 > 1e-20)) break;
            Eigen::Vector3d step = -res * g / g2;
            const double len = step.norm();
            if (len > params.step_clamp) step *= params.step_clamp / len;
            x += step;
            ++it;
            res = posed(x, &g) - iso;
        }
        iterations[i] = it;
        residual[i] = std::abs(res);
        if (residual[i] <= params.iso_tolerance) {
            ok[i] = 1;
            out.mesh.vertices.row(r) = x.transpose();
        }
    });

    NormalizeDiagnostics& d = out.diagnostics;
    d.vertices = nv;
    double it_sum = 0.0;
    for (std::size_t i = 0; i < nv; ++i) {
        d.converged += ok[i] ? 1 : 0;
        it_sum += iterations[i];
        if (ok[i]) d.max_residual = std::max(d.max_residual, residual[i]);
    }
    d.non_convergent = nv - d.converged;
    d.iso_recovery_rate = nv ? static_cast<double>(d.converged) / static_cast<double>(nv) : 1.0;
    d.mean_iterations = nv ? it_sum / static_cast<double>(nv) : 0.0;
    for (const BoneField& f : fields) d.fallback_fields += f.fallback ? 1 : 0;
    return out;
}

}  // namespace handssm
