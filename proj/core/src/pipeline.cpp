#include "pdreg/pipeline.hpp"

#include <cmath>
#include <set>

namespace pdreg {

namespace {

template <class Fn>
auto with_stage(const char* stage, Fn&& fn)
{
    try {
        return fn();
    } catch (const NumericError& e) {
        throw NumericError(std::string(stage) + ": " + e.what());
    } catch (const std::exception& e) {
        throw DataError(std::string(stage) + ": " + e.what());
    }
}

FeatureMap plain_features(const Volume& norm, const RegistrationConfig& cfg)
{
    switch (cfg.features) {
    case FeatureKind::intensity: return intensity_features(norm);
    case FeatureKind::mind: return mind_features(norm, cfg.mind);
    case FeatureKind::learned: break;
    }
    throw DataError("plain_features called for learned features");
}

ad::Tensor points_tensor(const DrivingPointSet& set)
{
    ad::Tensor t = ad::Tensor::zeros({std::max(set.count(), 1), 3});
    for (int i = 0; i < set.count(); ++i)
        for (int a = 0; a < 3; ++a)
            t.data[static_cast<std::size_t>(i) * 3 + a] = set.points[i][a];
    return t;
}

DisplacementField dense_node_to_field(const ad::Tensor& t, const std::array<int, 3>& dims)
{
    Volume vol(dims, 3);
    const std::size_t plane = vol.voxel_count();
    for (std::size_t v = 0; v < plane; ++v)
        for (int a = 0; a < 3; ++a)
            vol.data[v + a * plane] = t.data[v * 3 + a];
    return DisplacementField(std::move(vol));
}

} // namespace

PipelineInputs prepare_inputs(const Volume& fixed, const Volume& moving,
                              const RegistrationConfig& cfg)
{
    cfg.validate();
    if (fixed.dims != moving.dims)
        throw DataError("registration inputs have different grids");
    if (fixed.channels != 1 || moving.channels != 1)
        throw DataError("registration inputs must be single-channel");

    PipelineInputs in;
    in.fixed_norm = normalize_intensity(fixed);
    in.moving_norm = normalize_intensity(moving);

    if (cfg.features != FeatureKind::learned) {
        in.feat_fixed = with_stage("features", [&] { return plain_features(in.fixed_norm, cfg); });
        in.feat_moving =
            with_stage("features", [&] { return plain_features(in.moving_norm, cfg); });
    }
    if (cfg.selector == SelectorKind::grid) {
        in.fixed_points = with_stage("points", [&] {
            return grid_points(fixed.dims, cfg.grid.spacing, cfg.grid.margin);
        });
    } else if (cfg.selector == SelectorKind::foerstner) {
        in.fixed_points = with_stage("points", [&] {
            const int k = cfg.foerstner.count > 0
                              ? cfg.foerstner.count
                              : grid_points(fixed.dims, cfg.grid.spacing, cfg.grid.margin).count();
            return foerstner_points(in.fixed_norm, cfg.foerstner.sigma_t,
                                    cfg.foerstner.nms_radius, k, cfg.grid);
        });
    }
    return in;
}

PipelineNodes run_pipeline(ad::Tape& tape, const PipelineInputs& in,
                           const RegistrationConfig& cfg,
                           const std::unordered_map<std::string, ad::NodeId>* params)
{
    using namespace ad;
    const auto dims = in.fixed_norm.dims;
    PipelineNodes out;

    const NodeId fixedT = tape.leaf(volume_to_tensor(in.fixed_norm));
    const NodeId movingT = tape.leaf(volume_to_tensor(in.moving_norm));

    // 1. dense feature extraction
    if (cfg.features == FeatureKind::learned) {
        if (!params)
            throw DataError("features: learned extractor requires parameters");
        out.feat_fixed = with_stage("features",
                                    [&] { return learned_features_node(tape, fixedT, *params); });
        out.feat_moving = with_stage(
            "features", [&] { return learned_features_node(tape, movingT, *params); });
    } else {
        out.feat_fixed = tape.leaf(volume_to_tensor(in.feat_fixed->vol));
        out.feat_moving = tape.leaf(volume_to_tensor(in.feat_moving->vol));
    }

    // 2. driving points
    if (cfg.selector == SelectorKind::predicted) {
        if (!params)
            throw DataError("points: predicted selector requires parameters");
        out.points = with_stage("points", [&] {
            return predict_points_node(tape, fixedT, movingT, out.feat_fixed, out.feat_moving,
                                       *params, cfg.predictor, dims);
        });
        out.point_set.provenance = PointProvenance::predicted;
        out.point_set.rest_grid =
            grid_points(dims, cfg.predictor.spacing, cfg.predictor.margin).rest_grid;
    } else {
        out.points = tape.leaf(points_tensor(*in.fixed_points));
        out.point_set.provenance = in.fixed_points->provenance;
        out.point_set.rest_grid = in.fixed_points->rest_grid;
    }
    {
        const Tensor& pv = tape.value(out.points);
        out.point_set.points.resize(pv.shape[0]);
        for (int i = 0; i < pv.shape[0]; ++i)
            for (int a = 0; a < 3; ++a)
                out.point_set.points[i][a] = pv.data[static_cast<std::size_t>(i) * 3 + a];
    }

    // 3. displacement distribution
    out.descriptors = with_stage("matching", [&] {
        return sample_driving_features_node(tape, out.feat_fixed, out.points);
    });
    out.potentials = with_stage("matching", [&] {
        return compute_potentials_node(tape, out.descriptors, out.feat_moving, out.points,
                                       cfg.search);
    });

    // 4. regularization
    out.graph = with_stage("mrf", [&] { return build_graph(out.point_set, cfg.mrf); });
    out.marginals = with_stage(
        "mrf", [&] { return mean_field_node(tape, out.potentials, out.graph, cfg.search, cfg.mrf); });
    out.sparse =
        with_stage("mrf", [&] { return mean_estimate_node(tape, out.marginals, cfg.search); });

    // 5. interpolation
    out.dense = with_stage("interp", [&] {
        return densify_node(tape, out.sparse, densify_weights(out.point_set, dims, cfg.interp));
    });
    return out;
}

ad::NodeId pipeline_loss(ad::Tape& tape, const PipelineInputs& in, const PipelineNodes& nodes,
                         const RegistrationConfig& cfg)
{
    using namespace ad;
    const auto dims = in.fixed_norm.dims;
    const std::size_t vox = in.fixed_norm.voxel_count();

    Tensor id = Tensor::zeros({static_cast<int>(vox), 3});
    std::size_t v = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++v) {
                id.data[v * 3 + 0] = x;
                id.data[v * 3 + 1] = y;
                id.data[v * 3 + 2] = z;
            }
    const NodeId coords = add(tape, tape.leaf(std::move(id)), nodes.dense);
    const NodeId movingT = tape.leaf(volume_to_tensor(in.moving_norm));
    const NodeId warped = reshape(tape, grid_sample(tape, movingT, coords),
                                  {1, dims[2], dims[1], dims[0]});
    const NodeId fixedT = tape.leaf(volume_to_tensor(in.fixed_norm));
    const NodeId sim = lncc_node(tape, fixedT, warped, cfg.lncc);

    const NodeId field3 = reshape(tape, transpose2d(tape, nodes.dense),
                                  {3, dims[2], dims[1], dims[0]});
    const NodeId be = bending_energy_node(tape, field3);

    const double interior = static_cast<double>(lncc_site_count(dims, cfg.lncc));
    const double sites = static_cast<double>(std::max<std::int64_t>(bending_site_count(dims), 1));
    return add(tape, scalar_mul(tape, sim, -1.0 / interior),
               scalar_mul(tape, be, cfg.lambda_reg / sites));
}

namespace {

std::unordered_map<std::string, ad::NodeId> leaf_params(ad::Tape& tape,
                                                        const ad::ParameterSet& params,
                                                        bool track)
{
    std::unordered_map<std::string, ad::NodeId> nodes;
    for (const auto& name : params.names())
        nodes.emplace(name, tape.leaf(params.at(name), track));
    return nodes;
}

} // namespace

RegistrationResult register_pair(const Volume& fixed, const Volume& moving,
                                 const RegistrationConfig& cfg, const ad::ParameterSet* params)
{
    if (cfg.needs_params() && !params)
        throw DataError("configuration selects learned components but no parameters were given");
    PipelineInputs in = prepare_inputs(fixed, moving, cfg);
    ad::Tape tape;
    std::unordered_map<std::string, ad::NodeId> nodes;
    if (params)
        nodes = leaf_params(tape, *params, false);
    PipelineNodes pn = run_pipeline(tape, in, cfg, params ? &nodes : nullptr);

    RegistrationResult r;
    r.field = dense_node_to_field(tape.value(pn.dense), fixed.dims);
    r.points = pn.point_set;
    r.marginals.num_points = pn.point_set.count();
    r.marginals.num_disp = cfg.search.count();
    r.marginals.q = tape.value(pn.marginals).data;
    r.feat_fixed = {ad::tensor_to_volume(tape.value(pn.feat_fixed)), cfg.features};
    r.feat_moving = {ad::tensor_to_volume(tape.value(pn.feat_moving)), cfg.features};
    r.potentials.points = pn.point_set.points;
    r.potentials.num_disp = cfg.search.count();
    r.potentials.potentials = tape.value(pn.potentials).data;
    const ad::Tensor& sp = tape.value(pn.sparse);
    r.sparse.resize(sp.shape[0]);
    for (int i = 0; i < sp.shape[0]; ++i)
        for (int a = 0; a < 3; ++a)
            r.sparse[i][a] = sp.data[static_cast<std::size_t>(i) * 3 + a];
    return r;
}

ad::ParameterSet init_params(const RegistrationConfig& cfg)
{
    ad::ParameterSet params;
    std::mt19937_64 rng(cfg.seed);
    if (cfg.features == FeatureKind::learned)
        init_feature_params(params, rng);
    if (cfg.selector == SelectorKind::predicted) {
        const int inChannels = 2 + 2 * feature_dim(cfg.features);
        init_predictor_params(params, inChannels, cfg.predictor, rng);
    }
    return params;
}

TrainResult train(const std::vector<SynthPair>& pairs, const RegistrationConfig& cfg, int epochs,
                  double lr)
{
    cfg.validate();
    if (!cfg.needs_params())
        throw DataError("train: configuration selects no learnable component");
    if (pairs.empty())
        throw DataError("train: empty dataset");
    if (epochs < 0)
        throw DataError("train: epochs must be >= 0");

    TrainResult result;
    result.params = init_params(cfg);

    std::vector<PipelineInputs> inputs;
    inputs.reserve(pairs.size());
    for (const auto& p : pairs)
        inputs.push_back(prepare_inputs(p.fixed, p.moving, cfg));

    ad::AdamState state;
    ad::AdamConfig adam;
    adam.lr = lr;
    std::int64_t step = 0;
    for (int e = 0; e < epochs; ++e)
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            ad::Tape tape;
            auto nodes = leaf_params(tape, result.params, true);
            PipelineNodes pn = run_pipeline(tape, inputs[k], cfg, &nodes);
            const ad::NodeId loss = pipeline_loss(tape, inputs[k], pn, cfg);
            const double lossValue = tape.value(loss).value();
            if (!std::isfinite(lossValue))
                throw NumericError("train: loss is not finite at step " + std::to_string(step));
            tape.backward(loss);

            ad::ParameterSet grads;
            for (const auto& name : result.params.names())
                grads.add(name, tape.grad(nodes.at(name)));
            adam_step(result.params, grads, state, adam);
            result.loss_trace.push_back(lossValue);
            ++step;
        }
    return result;
}

MetricsReport evaluate_pair(const SynthPair& pair, const RegistrationConfig& cfg,
                            const ad::ParameterSet* params)
{
    const RegistrationResult r = register_pair(pair.fixed, pair.moving, cfg, params);
    const LabelVolume warped = warp_labels(pair.moving_labels, r.field);
    return evaluate_metrics(pair.fixed_labels, warped, r.field);
}

double unregistered_dice_mean(const SynthPair& pair)
{
    std::set<std::uint16_t> labels;
    for (auto l : pair.fixed_labels.labels())
        labels.insert(l);
    for (auto l : pair.moving_labels.labels())
        labels.insert(l);
    if (labels.empty())
        return 1.0;
    double acc = 0.0;
    for (auto l : labels)
        acc += dice(pair.fixed_labels, pair.moving_labels, l);
    return acc / static_cast<double>(labels.size());
}

W2Study w2_specificity_study(const std::vector<SynthPair>& pairs, const RegistrationConfig& cfg,
                             const ad::ParameterSet& params)
{
    if (cfg.selector != SelectorKind::predicted)
        throw DataError("w2 study requires the predicted selector");
    if (pairs.size() < 2)
        throw DataError("w2 study needs at least 2 pairs");

    // group by identical fixed volumes
    std::vector<int> fixedId(pairs.size(), -1);
    std::vector<const Volume*> distinct;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        for (std::size_t j = 0; j < distinct.size(); ++j)
            if (distinct[j]->dims == pairs[i].fixed.dims &&
                distinct[j]->data == pairs[i].fixed.data) {
                fixedId[i] = static_cast<int>(j);
                break;
            }
        if (fixedId[i] < 0) {
            distinct.push_back(&pairs[i].fixed);
            fixedId[i] = static_cast<int>(distinct.size() - 1);
        }
    }
    if (distinct.size() < 3)
        throw DataError("w2 study needs at least 3 distinct fixed volumes, found " +
                        std::to_string(distinct.size()));

    std::vector<DrivingPointSet> sets;
    sets.reserve(pairs.size());
    for (const auto& p : pairs) {
        const PipelineInputs in = prepare_inputs(p.fixed, p.moving, cfg);
        FeatureMap ff = in.feat_fixed ? *in.feat_fixed
                                      : learned_features(in.fixed_norm, params);
        FeatureMap fm = in.feat_moving ? *in.feat_moving
                                       : learned_features(in.moving_norm, params);
        sets.push_back(
            predict_points(in.fixed_norm, in.moving_norm, ff, fm, params, cfg.predictor));
    }

    W2Study s;
    s.sets = static_cast<int>(sets.size());
    double sharedSum = 0.0, allSum = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j) {
            const double w = w2_pointsets(sets[i], sets[j]);
            allSum += w;
            ++s.all_combos;
            if (fixedId[i] == fixedId[j]) {
                sharedSum += w;
                ++s.shared_combos;
            }
        }
    if (s.shared_combos == 0)
        throw DataError("w2 study: no two pairs share a fixed volume");
    s.shared_fixed_mean = sharedSum / s.shared_combos;
    s.all_pairs_mean = allSum / s.all_combos;
    s.degenerate = s.all_pairs_mean == 0.0;
    s.ratio = s.degenerate ? 0.0 : s.all_pairs_mean / std::max(s.shared_fixed_mean, 1e-300);
    return s;
}

} // namespace pdreg
