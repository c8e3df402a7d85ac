#pragma once

#include "handssm/mesh.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

namespace handssm {

class RegistrationError : public std::runtime_error {
public:
    explicit RegistrationError(const std::string& what, int iteration = -1)
        : std::runtime_error(what), iteration_(iteration) {}
    /// EM iteration at which a numerical failure happened, or -1.
    [[nodiscard]] int iteration() const { return iteration_; }

private:
    int iteration_;
};

/// Isotropic scale plus translation: x -> scale * x + translation.
struct Prealignment {
    double scale = 1.0;
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    [[nodiscard]] Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * p + translation; }
    [[nodiscard]] PointSet apply(const PointSet& p) const;
};

/// Matches centroids and RMS radii. No rotation is estimated.
[[nodiscard]] Prealignment rigid_prealign(const PointSet& templ, const PointSet& target);

enum class KernelType { Gaussian, Geodesic };

struct CpdParams {
    double beta = 20.0;    // kernel width, mm
    double lambda = 2.0;   // smoothness weight
    double w = 0.1;        // outlier fraction
    int max_iters = 150;
    double tol = 1e-6;     // relative objective change
    KernelType kernel = KernelType::Gaussian;
    int rank = 0;          // 0: full kernel
    int threads = 1;

    void validate() const;
};

[[nodiscard]] std::string kernel_name(KernelType k);
[[nodiscard]] KernelType parse_kernel(const std::string& name);

struct RegistrationResult {
    PointSet deformed;
    /// Per template point: most probable target index and its posterior.
    std::vector<int> correspondence;
    std::vector<double> probability;
    double sigma2 = 0.0;
    std::vector<double> sigma2_trace;
    std::vector<double> objective;  // negative log-likelihood plus regularizer, per iteration
    int iterations = 0;
    bool converged = false;
    /// Kernel-space coefficients W; the displacement is G W.
    Eigen::MatrixXd coefficients;
    PointSet template_points;
    double beta = 0.0;
    KernelType kernel = KernelType::Gaussian;
    double kernel_norm = 0.0;  // trace(W' G W)
    double psd_clamp = 0.0;    // largest negative kernel eigenvalue removed
};

[[nodiscard]] Eigen::MatrixXd gaussian_kernel(const PointSet& points, double beta);

/// Dijkstra edge-length distances between all vertex pairs. Throws on a disconnected mesh.
[[nodiscard]] Eigen::MatrixXd geodesic_distances(const TriMesh& mesh);

struct GeodesicKernel {
    Eigen::MatrixXd matrix;
    double clamp_magnitude = 0.0;  // largest |negative eigenvalue| set to zero
};

/// exp(-d^2 / (2 beta^2)) on geodesic distances, projected onto the PSD cone.
[[nodiscard]] GeodesicKernel geodesic_kernel(const TriMesh& mesh, double beta);

/// Posterior matrix with target points as rows; each row sums to 1 minus its outlier mass.
[[nodiscard]] Eigen::MatrixXd cpd_posterior(const PointSet& moved, const PointSet& target, double sigma2, double w);

/// The kernel matrix is dense: M x M doubles.
inline constexpr Eigen::Index kMaxTemplatePoints = 20000;

/// Non-rigid coherent point drift moving `templ` onto `target`. The geodesic kernel needs
/// `template_mesh`, whose vertices must be `templ`.
[[nodiscard]] RegistrationResult cpd_nonrigid(const PointSet& templ, const PointSet& target, const CpdParams& params = {},
                                              const TriMesh* template_mesh = nullptr);

/// Greedy farthest-point subsample starting at index 0; returns indices into `points`.
[[nodiscard]] std::vector<int> farthest_point_indices(const PointSet& points, int count);

/// Evaluates the fitted Gaussian displacement field at arbitrary points and adds it.
[[nodiscard]] PointSet cpd_transform(const RegistrationResult& result, const PointSet& points, int threads = 1);

}  // namespace handssm
