#include "pdreg/predictor.hpp"

#include <cmath>

namespace pdreg {

std::vector<std::string> predictor_param_names(const PredictorConfig& cfg)
{
    std::vector<std::string> names;
    for (int i = 0; i < cfg.stages(); ++i) {
        names.push_back("pred.e" + std::to_string(i + 1) + ".w");
        names.push_back("pred.e" + std::to_string(i + 1) + ".b");
    }
    names.push_back("pred.head.w");
    names.push_back("pred.head.b");
    return names;
}

namespace {

ad::Tensor uniform_init(std::vector<int> shape, int fanIn, std::mt19937_64& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(fanIn));
    std::uniform_real_distribution<double> dist(-bound, bound);
    ad::Tensor t = ad::Tensor::zeros(std::move(shape));
    for (double& v : t.data)
        v = dist(rng);
    return t;
}

} // namespace

void init_predictor_params(ad::ParameterSet& params, int in_channels, const PredictorConfig& cfg,
                           std::mt19937_64& rng)
{
    int cin = in_channels;
    for (int i = 0; i < cfg.stages(); ++i) {
        const int cout = cfg.widths[i];
        params.add("pred.e" + std::to_string(i + 1) + ".w",
                   uniform_init({cout, cin, 3, 3, 3}, cin * 27, rng));
        params.add("pred.e" + std::to_string(i + 1) + ".b",
                   uniform_init({cout}, cin * 27, rng));
        cin = cout;
    }
    // zero head: the untrained predictor emits the rest grid and training
    // moves points away from it only where the loss pays for it
    params.add("pred.head.w", ad::Tensor::zeros({3 * cfg.heads, cin, 3, 3, 3}));
    params.add("pred.head.b", ad::Tensor::zeros({3 * cfg.heads}));
}

ad::NodeId predict_points_node(ad::Tape& tape, ad::NodeId fixed, ad::NodeId moving,
                               ad::NodeId feat_fixed, ad::NodeId feat_moving,
                               const std::unordered_map<std::string, ad::NodeId>& params,
                               const PredictorConfig& cfg, const std::array<int, 3>& dims)
{
    using namespace ad;
    cfg.validate(dims);
    auto p = [&](const std::string& name) {
        auto it = params.find(name);
        if (it == params.end())
            throw DataError("missing parameter node: " + name);
        return it->second;
    };

    NodeId h = concat(tape, {fixed, moving, feat_fixed, feat_moving}, 0);
    for (int i = 0; i < cfg.stages(); ++i) {
        h = conv3d(tape, h, p("pred.e" + std::to_string(i + 1) + ".w"),
                   p("pred.e" + std::to_string(i + 1) + ".b"), 2, 1);
        h = leaky_relu(tape, h, 0.1);
    }
    h = conv3d(tape, h, p("pred.head.w"), p("pred.head.b"), 1, 1); // (3*D, gz, gy, gx)

    const DrivingPointSet rest = grid_points(dims, cfg.spacing, cfg.margin);
    const auto counts = rest.rest_grid->counts;
    const int g = rest.rest_grid->vertex_count();

    // spatial (z,y,x order, x fastest) -> lexicographic (x,y,z) point order
    std::vector<int> perm(g);
    for (int ix = 0; ix < counts[0]; ++ix)
        for (int iy = 0; iy < counts[1]; ++iy)
            for (int iz = 0; iz < counts[2]; ++iz)
                perm[(ix * counts[1] + iy) * counts[2] + iz] =
                    (iz * counts[1] + iy) * counts[0] + ix;

    Tensor capT = Tensor::zeros({g, 3});
    Tensor invCapT = Tensor::zeros({g, 3});
    Tensor restT = Tensor::zeros({g, 3});
    Tensor lo = Tensor::zeros({g, 3});
    Tensor hi = Tensor::zeros({g, 3});
    for (int i = 0; i < g; ++i)
        for (int a = 0; a < 3; ++a) {
            const double cn = cfg.cap * dims[a];
            capT.data[static_cast<std::size_t>(i) * 3 + a] = cn;
            invCapT.data[static_cast<std::size_t>(i) * 3 + a] = 1.0 / cn;
            restT.data[static_cast<std::size_t>(i) * 3 + a] = rest.points[i][a];
            hi.data[static_cast<std::size_t>(i) * 3 + a] = dims[a] - 1.0;
        }
    const NodeId capLeaf = tape.leaf(capT);
    const NodeId invCapLeaf = tape.leaf(invCapT);
    const NodeId restLeaf = tape.leaf(restT);

    const NodeId flat = reshape(tape, h, {3 * cfg.heads, g});
    std::vector<NodeId> heads;
    for (int j = 0; j < cfg.heads; ++j) {
        NodeId raw = slice(tape, flat, {3 * j, 0}, {3, g});
        raw = gather_rows(tape, transpose2d(tape, raw), perm); // (G,3) lex order
        const NodeId u = mul(tape, capLeaf, tanh(tape, mul(tape, invCapLeaf, raw)));
        heads.push_back(clamp_const(tape, add(tape, restLeaf, u), lo, hi));
    }
    return heads.size() == 1 ? heads[0] : concat(tape, heads, 0);
}

DrivingPointSet predict_points(const Volume& fixed, const Volume& moving,
                               const FeatureMap& feat_fixed, const FeatureMap& feat_moving,
                               const ad::ParameterSet& params, const PredictorConfig& cfg)
{
    if (!fixed.same_grid(moving) || !fixed.same_grid(feat_fixed.vol) ||
        !fixed.same_grid(feat_moving.vol))
        throw DataError("predict_points: all inputs must share spatial dims");
    ad::Tape tape;
    std::unordered_map<std::string, ad::NodeId> nodes;
    for (const auto& name : predictor_param_names(cfg))
        nodes.emplace(name, tape.leaf(params.at(name), false));
    const ad::NodeId out = predict_points_node(
        tape, tape.leaf(ad::volume_to_tensor(fixed)), tape.leaf(ad::volume_to_tensor(moving)),
        tape.leaf(ad::volume_to_tensor(feat_fixed.vol)),
        tape.leaf(ad::volume_to_tensor(feat_moving.vol)), nodes, cfg, fixed.dims);

    const ad::Tensor& t = tape.value(out);
    DrivingPointSet set;
    set.provenance = PointProvenance::predicted;
    set.rest_grid = grid_points(fixed.dims, cfg.spacing, cfg.margin).rest_grid;
    set.points.resize(t.shape[0]);
    for (int i = 0; i < t.shape[0]; ++i)
        for (int a = 0; a < 3; ++a)
            set.points[i][a] = t.data[static_cast<std::size_t>(i) * 3 + a];
    return set;
}

ad::NodeId sample_driving_features_node(ad::Tape& tape, ad::NodeId feat_fixed, ad::NodeId points)
{
    return ad::grid_sample(tape, feat_fixed, points);
}

std::vector<std::vector<double>> sample_driving_features(const FeatureMap& feat_fixed,
                                                         const DrivingPointSet& pts)
{
    std::vector<double> flat;
    flat.reserve(pts.points.size() * 3);
    for (const auto& p : pts.points) {
        flat.push_back(p[0]);
        flat.push_back(p[1]);
        flat.push_back(p[2]);
    }
    const std::vector<double> vals = sample_trilinear(feat_fixed.vol, flat);
    const int d = feat_fixed.vol.channels;
    std::vector<std::vector<double>> out(pts.points.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i].assign(vals.begin() + static_cast<std::ptrdiff_t>(i) * d,
                      vals.begin() + static_cast<std::ptrdiff_t>(i + 1) * d);
    return out;
}

} // namespace pdreg
