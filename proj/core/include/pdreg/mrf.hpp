#pragma once

#include "pdreg/matching.hpp"

namespace pdreg {

// Defaults tuned by grid search on the 32^3 synthetic benchmark: cosine
// potentials have a small dynamic range there, so the unary needs strong
// sharpening before the soft-argmax carries signal.
struct MrfConfig {
    double lambda = 2.0;   // pairwise weight
    double sigma_p = 8.0;  // spatial bandwidth (squared-distance units)
    double alpha = 160.0;  // unary sharpening of the cosine potentials
    int iters = 5;         // mean-field iterations
    int knn = 6;           // neighbour count before symmetrization

    void validate() const;
};

/// Symmetric k-nearest-neighbour graph over driving points with kernel
/// weights exp(-|p-q|^2 / (2 sigma_p)). No self loops.
struct NeighborGraph {
    std::vector<std::vector<int>> neighbors;
    std::vector<std::vector<double>> weights;

    int size() const { return static_cast<int>(neighbors.size()); }
};

NeighborGraph build_graph(const DrivingPointSet& pts, const MrfConfig& cfg);

/// Fully factorized marginals over the displacement lattice.
struct MarginalSet {
    std::vector<double> q; // |O| x |D|
    int num_points = 0;
    int num_disp = 0;

    double at(int p, int d) const { return q[static_cast<std::size_t>(p) * num_disp + d]; }
};

/// Synchronous mean-field inference. Initialization q0 = softmax(alpha*mu);
/// each iteration updates every point from the previous marginals:
///   log q_p(d) ~ alpha*mu_{p,d}
///              - 2*lambda * sum_n w_pn (|d|^2 - 2 d.m_n + s_n)
/// with m_n, s_n the first/second moments of q_n. The factor 2 accounts for
/// each undirected edge appearing in both endpoints' terms of the energy's
/// double sum. T = 0 returns the initialization.
ad::NodeId mean_field_node(ad::Tape& tape, ad::NodeId potentials, const NeighborGraph& graph,
                           const SearchRegion& region, const MrfConfig& cfg);

MarginalSet mean_field(const DisplacementDistribution& dist, const NeighborGraph& graph,
                       const SearchRegion& region, const MrfConfig& cfg);

/// Soft-argmax: psi(p) = sum_d q_p(d) * d. (N,|D|) -> (N,3).
ad::NodeId mean_estimate_node(ad::Tape& tape, ad::NodeId marginals, const SearchRegion& region);

std::vector<std::array<double, 3>> mean_estimate(const MarginalSet& q, const SearchRegion& region);

/// Negative Eq.-style energy of a discrete labelling (cost; lower is
/// better): -sum_p mu_{p,l_p} + lambda * sum_p sum_{n in N_p} w_pn
/// |d_{l_p} - d_{l_n}|^2.
double mrf_energy(const DisplacementDistribution& dist, const NeighborGraph& graph,
                  const SearchRegion& region, double lambda, const std::vector<int>& labels);

} // namespace pdreg
