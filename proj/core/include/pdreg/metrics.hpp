#pragma once

#include <filesystem>
#include <optional>

#include "pdreg/points.hpp"
#include "pdreg/tape.hpp"
#include "pdreg/volume.hpp"

namespace pdreg {

struct LnccConfig {
    int radius = 1;    // cube neighbourhood radius
    double eps = 1e-8; // variance-product floor

    void validate() const;
    int window() const
    {
        const int w = 2 * radius + 1;
        return w * w * w;
    }
};

/// Interior voxels contributing to the LNCC sum (full window in bounds).
std::int64_t lncc_site_count(const std::array<int, 3>& dims, const LnccConfig& cfg);

/// Sum over interior voxels of the local correlation between the two
/// images, patches centered with the local mean. Higher is more similar;
/// the self-correlation of a locally non-constant image equals the interior
/// voxel count. Inputs are (1,Z,Y,X) or (Z,Y,X) nodes.
ad::NodeId lncc_node(ad::Tape& tape, ad::NodeId a, ad::NodeId b, const LnccConfig& cfg);

double lncc(const Volume& a, const Volume& b, const LnccConfig& cfg);

/// Sites contributing to the bending energy: all forward second differences
/// in bounds, i.e. p in [0, n-3] per axis.
std::int64_t bending_site_count(const std::array<int, 3>& dims);

/// Sum over sites and all 9 axis pairs (i,j) of the squared forward second
/// difference of the field. Zero exactly for affine fields. Input (3,Z,Y,X).
ad::NodeId bending_energy_node(ad::Tape& tape, ad::NodeId field);

double bending_energy(const DisplacementField& field);

/// bending_energy / site count: mean per-site squared second-difference norm.
double hessian_norm_mean(const DisplacementField& field);

double dice(const LabelVolume& a, const LabelVolume& b, std::uint16_t label);

struct JacobianStats {
    double std_log = 0.0;              // population std of log det over det>0 sites
    double nonpositive_fraction = 0.0; // fraction of interior sites with det <= 0
};

/// Central-difference Jacobian of phi = Id + psi on interior voxels.
/// Throws NumericError when no site has positive determinant.
JacobianStats std_log_jacobian(const DisplacementField& field);

/// Exact squared-cost assignment between equal-size point sets:
/// sqrt(min over bijections of mean squared pair distance).
double w2_pointsets(const DrivingPointSet& a, const DrivingPointSet& b);

/// Exact rectangular assignment on a square cost matrix (row-major), cubic
/// augmenting-path method. Returns the minimal total cost.
double solve_assignment(const std::vector<double>& cost, int n);

struct MetricsReport {
    std::vector<std::uint16_t> labels;
    std::vector<double> dice_per_label;
    double dice_mean = 0.0;
    double hessian_mean = 0.0;
    double std_log_jacobian = 0.0;
    double nonpositive_jacobian_fraction = 0.0;
    std::optional<double> w2;
};

/// Dice over the union of non-zero labels in either volume plus the field
/// regularity statistics.
MetricsReport evaluate_metrics(const LabelVolume& fixed_labels,
                               const LabelVolume& warped_moving_labels,
                               const DisplacementField& field);

std::string metrics_to_json(const MetricsReport& r);
void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path);
MetricsReport read_metrics_json(const std::filesystem::path& path);

} // namespace pdreg
