#pragma once

#include <optional>
#include <unordered_map>

#include "pdreg/config.hpp"
#include "pdreg/interp.hpp"
#include "pdreg/matching.hpp"
#include "pdreg/metrics.hpp"
#include "pdreg/mrf.hpp"
#include "pdreg/params.hpp"
#include "pdreg/predictor.hpp"
#include "pdreg/synth.hpp"

namespace pdreg {

/// Normalized images plus whatever stage-1/2 products do not depend on
/// learnable parameters, so training loops compute them once per pair.
struct PipelineInputs {
    Volume fixed_norm;
    Volume moving_norm;
    std::optional<FeatureMap> feat_fixed;  // absent for learned features
    std::optional<FeatureMap> feat_moving;
    std::optional<DrivingPointSet> fixed_points; // absent for predicted selector
};

PipelineInputs prepare_inputs(const Volume& fixed, const Volume& moving,
                              const RegistrationConfig& cfg);

/// Node handles for every stage boundary of one recorded forward pass.
struct PipelineNodes {
    ad::NodeId feat_fixed = -1;
    ad::NodeId feat_moving = -1;
    ad::NodeId points = -1;      // (N,3)
    ad::NodeId descriptors = -1; // (N,d)
    ad::NodeId potentials = -1;  // (N,|D|)
    ad::NodeId marginals = -1;   // (N,|D|)
    ad::NodeId sparse = -1;      // (N,3)
    ad::NodeId dense = -1;       // (V,3), x-fastest voxel order
    DrivingPointSet point_set;
    NeighborGraph graph;
};

/// Records stages 1-5 on the tape. `params` must map every required
/// parameter name to a tape node when learned components are selected.
PipelineNodes run_pipeline(ad::Tape& tape, const PipelineInputs& in,
                           const RegistrationConfig& cfg,
                           const std::unordered_map<std::string, ad::NodeId>* params);

/// Registration loss on top of a recorded pipeline:
/// -lncc(fixed, moving o phi)/interior + lambda_reg * bending/sites.
ad::NodeId pipeline_loss(ad::Tape& tape, const PipelineInputs& in, const PipelineNodes& nodes,
                         const RegistrationConfig& cfg);

struct RegistrationResult {
    DisplacementField field;
    DrivingPointSet points;
    MarginalSet marginals;
    FeatureMap feat_fixed;
    FeatureMap feat_moving;
    DisplacementDistribution potentials;
    std::vector<std::array<double, 3>> sparse;
};

RegistrationResult register_pair(const Volume& fixed, const Volume& moving,
                                 const RegistrationConfig& cfg,
                                 const ad::ParameterSet* params = nullptr);

/// Fresh parameters for the learnable components selected by `cfg`,
/// seeded from cfg.seed.
ad::ParameterSet init_params(const RegistrationConfig& cfg);

struct TrainResult {
    ad::ParameterSet params;
    std::vector<double> loss_trace; // one entry per step
};

/// Stochastic training, one pair per step in dataset order, Adam updates.
/// Throws NumericError when the loss stops being finite.
TrainResult train(const std::vector<SynthPair>& pairs, const RegistrationConfig& cfg, int epochs,
                  double lr);

/// Registers the pair and scores the warped moving labels against the
/// fixed labels.
MetricsReport evaluate_pair(const SynthPair& pair, const RegistrationConfig& cfg,
                            const ad::ParameterSet* params = nullptr);

double unregistered_dice_mean(const SynthPair& pair);

struct W2Study {
    double shared_fixed_mean = 0.0;
    double all_pairs_mean = 0.0;
    bool degenerate = false; // every predicted set identical
    double ratio = 0.0;      // all_pairs_mean / shared_fixed_mean when defined
    int sets = 0;
    int shared_combos = 0;
    int all_combos = 0;
};

/// Compares predicted driving point sets across a dataset: mean W2 between
/// sets sharing a fixed image vs mean W2 over all set pairs. Requires the
/// predicted selector and at least 3 distinct fixed volumes.
W2Study w2_specificity_study(const std::vector<SynthPair>& pairs, const RegistrationConfig& cfg,
                             const ad::ParameterSet& params);

} // namespace pdreg
