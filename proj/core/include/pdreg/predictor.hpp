#pragma once

#include <random>
#include <unordered_map>

#include "pdreg/config.hpp"
#include "pdreg/features.hpp"
#include "pdreg/params.hpp"
#include "pdreg/points.hpp"
#include "pdreg/tape.hpp"

namespace pdreg {

/// Names of the predictor parameters for the given input channel count
/// (2 + 2 * feature dim) and config, in checkpoint order.
std::vector<std::string> predictor_param_names(const PredictorConfig& cfg);

/// Adds encoder and head tensors to `params`, uniform init in
/// [-1/sqrt(fan_in), +1/sqrt(fan_in)].
void init_predictor_params(ad::ParameterSet& params, int in_channels, const PredictorConfig& cfg,
                           std::mt19937_64& rng);

/// Deforms the rest grid by a capped displacement per vertex and head:
/// u(axis a) = cap*n_a * tanh(raw_a / (cap*n_a)), then clamps the points to
/// [0, n_a - 1]. Inputs are (1,Z,Y,X) images and (d,Z,Y,X) feature maps;
/// output is (heads*G, 3), head-major then lexicographic rest-grid order.
ad::NodeId predict_points_node(ad::Tape& tape, ad::NodeId fixed, ad::NodeId moving,
                               ad::NodeId feat_fixed, ad::NodeId feat_moving,
                               const std::unordered_map<std::string, ad::NodeId>& params,
                               const PredictorConfig& cfg, const std::array<int, 3>& dims);

DrivingPointSet predict_points(const Volume& fixed, const Volume& moving,
                               const FeatureMap& feat_fixed, const FeatureMap& feat_moving,
                               const ad::ParameterSet& params, const PredictorConfig& cfg);

/// Trilinear samples of the fixed feature map at the driving points:
/// (N,3) points against (d,Z,Y,X) -> (N,d), differentiable in both.
ad::NodeId sample_driving_features_node(ad::Tape& tape, ad::NodeId feat_fixed, ad::NodeId points);

std::vector<std::vector<double>> sample_driving_features(const FeatureMap& feat_fixed,
                                                         const DrivingPointSet& pts);

} // namespace pdreg
