#pragma once

#include "handssm/mesh.hpp"
#include "handssm/skeleton.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace handssm {

struct MeasurementSet {
    double hand_length = 0.0;
    double hand_breadth = 0.0;
    double hand_circumference = 0.0;
    double palm_length = 0.0;
    double wrist_circumference = 0.0;

    [[nodiscard]] std::array<double, 5> values() const {
        return {hand_length, hand_breadth, hand_circumference, palm_length, wrist_circumference};
    }
    [[nodiscard]] static MeasurementSet from_values(const std::array<double, 5>& v) {
        return {v[0], v[1], v[2], v[3], v[4]};
    }
};

inline constexpr std::array<const char*, 5> kMeasurementNames = {"hand_length", "hand_breadth", "hand_circumference",
                                                                 "palm_length", "wrist_circumference"};

class MeasurementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Closed polylines where a plane cuts a mesh. Throws MeasurementError on a miss or an open chain.
[[nodiscard]] std::vector<std::vector<Eigen::Vector3d>> plane_section(const TriMesh& mesh, const Eigen::Vector3d& point,
                                                                      const Eigen::Vector3d& normal);
[[nodiscard]] double loop_perimeter(const std::vector<Eigen::Vector3d>& loop);
/// Perimeter of the convex hull of a planar loop, i.e. what a tape around the section reads.
[[nodiscard]] double hull_perimeter(const std::vector<Eigen::Vector3d>& loop, const Eigen::Vector3d& normal);

enum class PerimeterMode { Hull, Polygon };

/// Landmark-based hand measurements, all in mm.
[[nodiscard]] MeasurementSet measure_hand(const TriMesh& mesh, const LandmarkSet& landmarks,
                                          PerimeterMode mode = PerimeterMode::Hull);

/// Normative hand values from the 2012 U.S. Army anthropometric survey (ANSUR II), mm.
struct AnsurReference {
    static constexpr std::array<double, 5> mean = {189.3, 85.0, 203.9, 113.9, 169.0};
    static constexpr std::array<double, 5> sd = {11.5, 6.3, 15.6, 7.1, 13.1};
    static constexpr int sample_size = 6068;
    /// Model means reported for the clinical cohort, shown next to new results.
    static constexpr std::array<double, 5> published_model_mean = {184.7, 78.7, 209.4, 115.0, 170.3};
    /// Deviations above this are flagged; every clinically accepted deviation was at most 6 mm.
    static constexpr double flag_threshold_mm = 6.0;
};

struct AnsurRow {
    std::string name;
    double model_mean = 0.0;
    double ansur_mean = 0.0;
    double ansur_sd = 0.0;
    double deviation = 0.0;  // model - ANSUR
    bool flagged = false;
};

[[nodiscard]] std::vector<AnsurRow> ansur_report(const MeasurementSet& model_means);
[[nodiscard]] std::string format_ansur_report(const std::vector<AnsurRow>& rows);

}  // namespace handssm
