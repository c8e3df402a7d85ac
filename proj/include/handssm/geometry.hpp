#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace handssm {

/// Closest-point parameter of p on segment [a, b], clamped to [0, 1].
template <typename Scalar>
Scalar segment_param(const Eigen::Matrix<Scalar, 3, 1>& p, const Eigen::Matrix<Scalar, 3, 1>& a,
                     const Eigen::Matrix<Scalar, 3, 1>& b) {
    const Eigen::Matrix<Scalar, 3, 1> ab = b - a;
    const Scalar len2 = ab.squaredNorm();
    if (len2 == Scalar(0)) return Scalar(0);
    return std::clamp((p - a).dot(ab) / len2, Scalar(0), Scalar(1));
}

template <typename Scalar>
Scalar point_segment_distance(const Eigen::Matrix<Scalar, 3, 1>& p, const Eigen::Matrix<Scalar, 3, 1>& a,
                              const Eigen::Matrix<Scalar, 3, 1>& b) {
    return (p - (a + segment_param(p, a, b) * (b - a))).norm();
}

/// Distance from p to the axis-aligned rectangle [x0, x1] x [y0, y1] lying in the plane z = z0.
template <typename Scalar>
Scalar point_rectangle_distance(const Eigen::Matrix<Scalar, 3, 1>& p, Scalar x0, Scalar x1, Scalar y0, Scalar y1,
                                Scalar z0) {
    const Scalar dx = std::max({x0 - p.x(), Scalar(0), p.x() - x1});
    const Scalar dy = std::max({y0 - p.y(), Scalar(0), p.y() - y1});
    const Scalar dz = p.z() - z0;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace handssm
