#include "pdreg/matching.hpp"

namespace pdreg {

void SearchRegion::validate() const
{
    if (radius < 0 || stride < 1)
        throw DataError("search region: radius must be >= 0 and stride >= 1");
    if (radius % stride != 0)
        throw DataError("search region: stride " + std::to_string(stride) +
                        " does not divide radius " + std::to_string(radius));
}

std::vector<std::array<double, 3>> SearchRegion::offsets() const
{
    validate();
    std::vector<std::array<double, 3>> out;
    out.reserve(count());
    for (int dx = -radius; dx <= radius; dx += stride)
        for (int dy = -radius; dy <= radius; dy += stride)
            for (int dz = -radius; dz <= radius; dz += stride)
                out.push_back({static_cast<double>(dx), static_cast<double>(dy),
                               static_cast<double>(dz)});
    return out;
}

ad::NodeId compute_potentials_node(ad::Tape& tape, ad::NodeId desc, ad::NodeId feat_moving,
                                   ad::NodeId points, const SearchRegion& region)
{
    using namespace ad;
    const Tensor& dv = tape.value(desc);
    const Tensor& fv = tape.value(feat_moving);
    const Tensor& pv = tape.value(points);
    if (dv.rank() != 2 || pv.rank() != 2 || pv.shape[1] != 3)
        throw DataError("compute_potentials: descriptors must be (N,d) and points (N,3)");
    if (dv.shape[0] != pv.shape[0])
        throw DataError("compute_potentials: descriptor rows " + std::to_string(dv.shape[0]) +
                        " do not match point rows " + std::to_string(pv.shape[0]));
    if (fv.rank() != 4 || fv.shape[0] != dv.shape[1])
        throw DataError("compute_potentials: descriptor dimension " +
                        std::to_string(dv.shape[1]) + " does not match feature channels " +
                        std::to_string(fv.rank() == 4 ? fv.shape[0] : -1));

    const int n = pv.shape[0];
    const auto offs = region.offsets();
    const int k = static_cast<int>(offs.size());

    Tensor tiled = Tensor::zeros({n * k, 3});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            for (int a = 0; a < 3; ++a)
                tiled.data[(static_cast<std::size_t>(i) * k + j) * 3 + a] = offs[j][a];

    const NodeId coords = add(tape, repeat_rows(tape, points, k), tape.leaf(std::move(tiled)));
    const NodeId samples = grid_sample(tape, feat_moving, coords); // (N*K, d)
    const NodeId desc_rep = repeat_rows(tape, desc, k);            // (N*K, d)

    const NodeId dot = sum_axis(tape, mul(tape, desc_rep, samples), 1);
    const NodeId na2 = sum_axis(tape, mul(tape, desc_rep, desc_rep), 1);
    const NodeId nb2 = sum_axis(tape, mul(tape, samples, samples), 1);
    const NodeId denom = sqrt(tape, scalar_add(tape, mul(tape, na2, nb2), 1e-12));
    return reshape(tape, divide(tape, dot, denom), {n, k});
}

DisplacementDistribution compute_potentials(const std::vector<std::vector<double>>& descriptors,
                                            const FeatureMap& feat_moving,
                                            const DrivingPointSet& pts,
                                            const SearchRegion& region)
{
    const int n = pts.count();
    if (static_cast<int>(descriptors.size()) != n)
        throw DataError("compute_potentials: descriptor count does not match point count");
    const int d = feat_moving.vol.channels;
    ad::Tensor desc = ad::Tensor::zeros({std::max(n, 1), d});
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(descriptors[i].size()) != d)
            throw DataError("compute_potentials: descriptor dimension mismatch");
        for (int c = 0; c < d; ++c)
            desc.data[static_cast<std::size_t>(i) * d + c] = descriptors[i][c];
    }
    ad::Tensor ptsT = ad::Tensor::zeros({std::max(n, 1), 3});
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a)
            ptsT.data[static_cast<std::size_t>(i) * 3 + a] = pts.points[i][a];

    ad::Tape tape;
    const ad::NodeId out = compute_potentials_node(
        tape, tape.leaf(std::move(desc)), tape.leaf(ad::volume_to_tensor(feat_moving.vol)),
        tape.leaf(std::move(ptsT)), region);

    DisplacementDistribution dist;
    dist.points = pts.points;
    dist.num_disp = region.count();
    dist.potentials = tape.value(out).data;
    return dist;
}

} // namespace pdreg
