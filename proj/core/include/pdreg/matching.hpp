#pragma once

#include <array>
#include <vector>

#include "pdreg/features.hpp"
#include "pdreg/points.hpp"
#include "pdreg/tape.hpp"

namespace pdreg {

/// Admissible displacement lattice D = {-r, -r+t, ..., r-t, r}^3 in voxels,
/// enumerated lexicographically in (dx, dy, dz).
struct SearchRegion {
    int radius = 6;
    int stride = 2;

    int per_axis() const { return 2 * radius / stride + 1; }
    int count() const
    {
        const int n = per_axis();
        return n * n * n;
    }
    std::vector<std::array<double, 3>> offsets() const;
    void validate() const;
};

/// Per driving point, matching potentials over the displacement lattice
/// (row-major: point index, then displacement index in lattice order).
struct DisplacementDistribution {
    std::vector<std::array<double, 3>> points;
    std::vector<double> potentials; // |O| x |D|
    int num_disp = 0;

    double at(int p, int d) const { return potentials[static_cast<std::size_t>(p) * num_disp + d]; }
};

/// Cosine similarity between each driving-point descriptor and the moving
/// feature map sampled trilinearly at p + delta. A 1e-12 guard inside the
/// square root makes zero-norm descriptors score 0 everywhere.
/// desc (N,d), feat_moving (d,Z,Y,X), points (N,3) -> (N,|D|).
ad::NodeId compute_potentials_node(ad::Tape& tape, ad::NodeId desc, ad::NodeId feat_moving,
                                   ad::NodeId points, const SearchRegion& region);

DisplacementDistribution compute_potentials(const std::vector<std::vector<double>>& descriptors,
                                            const FeatureMap& feat_moving,
                                            const DrivingPointSet& pts,
                                            const SearchRegion& region);

} // namespace pdreg
