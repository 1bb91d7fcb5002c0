#include "pdreg/mrf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pdreg {

void MrfConfig::validate() const
{
    if (lambda < 0.0)
        throw DataError("mrf: lambda must be >= 0");
    if (sigma_p <= 0.0)
        throw DataError("mrf: sigma_p must be > 0");
    if (alpha <= 0.0)
        throw DataError("mrf: alpha must be > 0");
    if (iters < 0)
        throw DataError("mrf: iteration count must be >= 0");
}

NeighborGraph build_graph(const DrivingPointSet& pts, const MrfConfig& cfg)
{
    cfg.validate();
    const int n = pts.count();
    if (n < 1)
        throw DataError("build_graph: empty point set");
    const int k = std::min(cfg.knn, n - 1);

    std::vector<std::vector<int>> adj(n);
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> d;
        d.reserve(n - 1);
        for (int j = 0; j < n; ++j) {
            if (j == i)
                continue;
            const double dx = pts.points[i][0] - pts.points[j][0];
            const double dy = pts.points[i][1] - pts.points[j][1];
            const double dz = pts.points[i][2] - pts.points[j][2];
            d.emplace_back(dx * dx + dy * dy + dz * dz, j);
        }
        std::sort(d.begin(), d.end());
        for (int j = 0; j < k; ++j)
            adj[i].push_back(d[j].second);
    }
    // symmetrize by union
    for (int i = 0; i < n; ++i)
        for (int j : adj[i])
            if (std::find(adj[j].begin(), adj[j].end(), i) == adj[j].end())
                adj[j].push_back(i);

    NeighborGraph g;
    g.neighbors.resize(n);
    g.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        std::sort(adj[i].begin(), adj[i].end());
        g.neighbors[i] = adj[i];
        g.weights[i].reserve(adj[i].size());
        for (int j : adj[i]) {
            const double dx = pts.points[i][0] - pts.points[j][0];
            const double dy = pts.points[i][1] - pts.points[j][1];
            const double dz = pts.points[i][2] - pts.points[j][2];
            g.weights[i].push_back(std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * cfg.sigma_p)));
        }
    }
    return g;
}

ad::NodeId mean_field_node(ad::Tape& tape, ad::NodeId potentials, const NeighborGraph& graph,
                           const SearchRegion& region, const MrfConfig& cfg)
{
    using namespace ad;
    cfg.validate();
    const Tensor& mu = tape.value(potentials);
    const int n = mu.shape[0];
    const int k = mu.shape[1];
    if (mu.rank() != 2 || k != region.count())
        throw DataError("mean_field: potentials must be (N,|D|)");
    if (graph.size() != n)
        throw DataError("mean_field: graph size " + std::to_string(graph.size()) +
                        " does not match point count " + std::to_string(n));

    NodeId q = softmax(tape, potentials, 1, cfg.alpha);
    if (cfg.iters == 0 || cfg.lambda == 0.0)
        return q;

    const auto offs = region.offsets();
    Tensor delta = Tensor::zeros({k, 3});
    Tensor deltaT = Tensor::zeros({3, k});
    Tensor d2col = Tensor::zeros({k, 1});
    for (int j = 0; j < k; ++j) {
        double norm2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            delta.data[static_cast<std::size_t>(j) * 3 + a] = offs[j][a];
            deltaT.data[static_cast<std::size_t>(a) * k + j] = offs[j][a];
            norm2 += offs[j][a] * offs[j][a];
        }
        d2col.data[j] = norm2;
    }
    Tensor onesRow = Tensor::full({1, k}, 1.0);

    auto mixer = std::make_shared<SparseRows>();
    mixer->rows = n;
    mixer->cols = n;
    mixer->ptr.assign(n + 1, 0);
    std::vector<double> wsum(n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (std::size_t e = 0; e < graph.neighbors[i].size(); ++e) {
            mixer->col.push_back(graph.neighbors[i][e]);
            mixer->w.push_back(graph.weights[i][e]);
            wsum[i] += graph.weights[i][e];
        }
        mixer->ptr[i + 1] = static_cast<std::int64_t>(mixer->col.size());
    }

    // constant part of the pairwise term: -2*lambda * wsum_p * |d|^2
    Tensor pairConst = Tensor::zeros({n, k});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            pairConst.data[static_cast<std::size_t>(i) * k + j] =
                -2.0 * cfg.lambda * wsum[i] * d2col.data[j];
    const NodeId pairConstLeaf = tape.leaf(std::move(pairConst));
    const NodeId unary = scalar_mul(tape, potentials, cfg.alpha);

    for (int tau = 0; tau < cfg.iters; ++tau) {
        const NodeId m1 = matmul_const(tape, q, delta);   // (N,3)
        const NodeId m2 = matmul_const(tape, q, d2col);   // (N,1)
        const NodeId m1w = sparse_mix(tape, m1, mixer);   // (N,3)
        const NodeId m2w = sparse_mix(tape, m2, mixer);   // (N,1)
        const NodeId cross = matmul_const(tape, m1w, deltaT); // (N,K)
        const NodeId second = matmul_const(tape, m2w, onesRow); // (N,K)
        NodeId logits = add(tape, unary, pairConstLeaf);
        logits = add(tape, logits,
                     sub(tape, scalar_mul(tape, cross, 4.0 * cfg.lambda),
                         scalar_mul(tape, second, 2.0 * cfg.lambda)));
        q = softmax(tape, logits, 1, 1.0);
    }
    return q;
}

MarginalSet mean_field(const DisplacementDistribution& dist, const NeighborGraph& graph,
                       const SearchRegion& region, const MrfConfig& cfg)
{
    ad::Tape tape;
    const int n = static_cast<int>(dist.points.size());
    ad::Tensor mu({std::max(n, 1), dist.num_disp}, dist.potentials);
    const ad::NodeId out =
        mean_field_node(tape, tape.leaf(std::move(mu)), graph, region, cfg);
    MarginalSet q;
    q.num_points = n;
    q.num_disp = dist.num_disp;
    q.q = tape.value(out).data;
    return q;
}

ad::NodeId mean_estimate_node(ad::Tape& tape, ad::NodeId marginals, const SearchRegion& region)
{
    const auto offs = region.offsets();
    const int k = static_cast<int>(offs.size());
    ad::Tensor delta = ad::Tensor::zeros({k, 3});
    for (int j = 0; j < k; ++j)
        for (int a = 0; a < 3; ++a)
            delta.data[static_cast<std::size_t>(j) * 3 + a] = offs[j][a];
    return ad::matmul_const(tape, marginals, delta);
}

std::vector<std::array<double, 3>> mean_estimate(const MarginalSet& q, const SearchRegion& region)
{
    const auto offs = region.offsets();
    if (static_cast<int>(offs.size()) != q.num_disp)
        throw DataError("mean_estimate: marginal width does not match search region");
    std::vector<std::array<double, 3>> out(q.num_points, {0.0, 0.0, 0.0});
    for (int p = 0; p < q.num_points; ++p)
        for (int d = 0; d < q.num_disp; ++d) {
            const double w = q.at(p, d);
            for (int a = 0; a < 3; ++a)
                out[p][a] += w * offs[d][a];
        }
    return out;
}

double mrf_energy(const DisplacementDistribution& dist, const NeighborGraph& graph,
                  const SearchRegion& region, double lambda, const std::vector<int>& labels)
{
    const auto offs = region.offsets();
    const int n = static_cast<int>(dist.points.size());
    if (static_cast<int>(labels.size()) != n)
        throw DataError("mrf_energy: label count mismatch");
    double cost = 0.0;
    for (int p = 0; p < n; ++p) {
        cost -= dist.at(p, labels[p]);
        for (std::size_t e = 0; e < graph.neighbors[p].size(); ++e) {
            const int q = graph.neighbors[p][e];
            double d2 = 0.0;
            for (int a = 0; a < 3; ++a) {
                const double dd = offs[labels[p]][a] - offs[labels[q]][a];
                d2 += dd * dd;
            }
            cost += lambda * graph.weights[p][e] * d2;
        }
    }
    return cost;
}

} // namespace pdreg
