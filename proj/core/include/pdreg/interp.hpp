#pragma once

#include <memory>

#include "pdreg/points.hpp"
#include "pdreg/tape.hpp"

namespace pdreg {

struct InterpConfig {
    double sigma = 8.0;   // kernel bandwidth (voxels)
    double trunc = 3.0;   // truncation radius in multiples of sigma
    double eps_w = 1e-12; // weight floor in the normalizing denominator

    void validate() const;
};

/// Normalized-weight table for Gaussian scattered-data interpolation:
/// row v holds (point index, K(x_v, p)/(sum_p K + eps_w)) for every driving
/// point within the truncation radius of voxel v. Voxels that see no kernel
/// fall back to their nearest driving point with weight 1.
std::shared_ptr<ad::SparseRows> densify_weights(const DrivingPointSet& pts,
                                                const std::array<int, 3>& dims,
                                                const InterpConfig& cfg);

/// Dense field from sparse displacements: (N,3) -> (V,3), voxels in
/// x-fastest order. Kernel weights are constants; gradients flow to the
/// sparse displacements.
ad::NodeId densify_node(ad::Tape& tape, ad::NodeId sparse_disp,
                        std::shared_ptr<const ad::SparseRows> weights);

DisplacementField densify(const DrivingPointSet& pts,
                          const std::vector<std::array<double, 3>>& disp,
                          const std::array<int, 3>& dims, const InterpConfig& cfg);

} // namespace pdreg
