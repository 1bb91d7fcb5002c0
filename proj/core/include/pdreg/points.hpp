#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdreg/volume.hpp"

namespace pdreg {

enum class PointProvenance { grid, foerstner, predicted };

std::string to_string(PointProvenance p);
PointProvenance provenance_from_string(const std::string& s);

/// The undeformed regular grid a point set was derived from.
struct RestGrid {
    std::array<double, 3> origin{0, 0, 0};
    double spacing = 1.0;
    std::array<int, 3> counts{0, 0, 0};

    int vertex_count() const { return counts[0] * counts[1] * counts[2]; }
};

/// Ordered sub-voxel locations in the fixed image that drive registration.
struct DrivingPointSet {
    std::vector<std::array<double, 3>> points;
    PointProvenance provenance = PointProvenance::grid;
    std::optional<RestGrid> rest_grid;

    int count() const { return static_cast<int>(points.size()); }
};

struct GridSpec {
    double spacing = 8.0;
    double margin = 4.0;
};

/// Regular grid vertices at margin + k*spacing per axis while <= n-1,
/// enumerated in lexicographic (x,y,z) order.
DrivingPointSet grid_points(const std::array<int, 3>& dims, double spacing, double margin);

struct FoerstnerConfig {
    double sigma_t = 1.5;    // structure tensor smoothing
    double nms_radius = 8.0; // Euclidean suppression radius
    int count = 0;           // 0 = derive from the pipeline grid
};

/// Foerstner interest score det(S)/trace(S) of the Gaussian-smoothed
/// structure tensor of central-difference gradients; zero where the trace
/// falls under 1e-12.
Volume foerstner_score(const Volume& img, double sigma_t);

/// Top-k score maxima with greedy non-maximum suppression. When fewer than
/// k maxima survive, the set is padded with vertices of `pad` (or of a
/// derived grid when absent), highest-score-first order preserved.
DrivingPointSet foerstner_points(const Volume& img, double sigma_t, double nms_radius, int count,
                                 const std::optional<GridSpec>& pad = std::nullopt);

// CSV serialization: optional "# key=value" comment lines carrying
// provenance and rest grid, a "x,y,z" header, then one point per line with
// 6 decimal places. File order is set order.
void write_points_csv(const DrivingPointSet& set, const std::filesystem::path& path);
DrivingPointSet read_points_csv(const std::filesystem::path& path);

} // namespace pdreg
