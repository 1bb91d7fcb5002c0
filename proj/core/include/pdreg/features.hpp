#pragma once

#include <random>
#include <string>
#include <unordered_map>

#include "pdreg/params.hpp"
#include "pdreg/tape.hpp"
#include "pdreg/volume.hpp"

namespace pdreg {

enum class FeatureKind { intensity, mind, learned };

std::string to_string(FeatureKind k);
FeatureKind feature_kind_from_string(const std::string& s);

/// Dense per-voxel descriptor map: a Volume with channels = descriptor
/// dimension plus the provenance of the extractor that produced it.
struct FeatureMap {
    Volume vol;
    FeatureKind kind = FeatureKind::intensity;
};

struct MindConfig {
    int patch_radius = 1;   // r_p
    double sigma_g = 0.8;   // Gaussian patch weight
    double eps_v = 1e-3;    // variance floor fraction
};

/// d = 1, values are the input rescaled to [0,1].
FeatureMap intensity_features(const Volume& img);

/// Six-channel self-similarity descriptor. Channel k at voxel p is
/// exp(-D_k(p)/V(p)) where D_k is the Gaussian-weighted patch SSD towards
/// the k-th face neighbour and V is the mean of the six distances, floored
/// at eps_v times its spatial mean. Each descriptor is divided by its own
/// max channel. Patch lookups replicate the border.
FeatureMap mind_features(const Volume& img, const MindConfig& cfg);

/// Learned extractor: conv3d(1->8) -> leaky_relu(0.1) -> conv3d(8->8) ->
/// leaky_relu(0.1) -> conv3d(8->8), 3x3x3 kernels, stride 1, zero padding.
constexpr int kLearnedFeatureDim = 8;
constexpr int kLearnedFeatureHidden = 8;

int feature_dim(FeatureKind k);

/// Adds the extractor's conv weights/biases ("feat.c1.w", ...) to `params`,
/// initialised uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
void init_feature_params(ad::ParameterSet& params, std::mt19937_64& rng);

/// Tape-recorded forward pass; `image` must be a (1,Z,Y,X) node.
ad::NodeId learned_features_node(ad::Tape& tape, ad::NodeId image,
                                 const std::unordered_map<std::string, ad::NodeId>& params);

FeatureMap learned_features(const Volume& img, const ad::ParameterSet& params);

} // namespace pdreg
