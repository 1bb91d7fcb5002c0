#include "pdreg/interp.hpp"

#include <cmath>
#include <limits>

namespace pdreg {

void InterpConfig::validate() const
{
    if (sigma <= 0.0)
        throw DataError("interp: sigma must be > 0");
    if (trunc <= 0.0)
        throw DataError("interp: truncation radius must be > 0");
    if (eps_w < 0.0)
        throw DataError("interp: eps_w must be >= 0");
}

std::shared_ptr<ad::SparseRows> densify_weights(const DrivingPointSet& pts,
                                                const std::array<int, 3>& dims,
                                                const InterpConfig& cfg)
{
    cfg.validate();
    const int n = pts.count();
    if (n < 1)
        throw DataError("densify: empty point set");
    const double r = cfg.trunc * cfg.sigma;
    const double r2 = r * r;
    const double inv2s2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);

    auto rows = std::make_shared<ad::SparseRows>();
    rows->rows = dims[0] * dims[1] * dims[2];
    rows->cols = n;
    rows->ptr.assign(rows->rows + 1, 0);

    std::vector<int> idx;
    std::vector<double> w;
    std::size_t v = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++v) {
                idx.clear();
                w.clear();
                double total = 0.0;
                double bestD2 = std::numeric_limits<double>::max();
                int best = 0;
                for (int p = 0; p < n; ++p) {
                    const double dx = x - pts.points[p][0];
                    const double dy = y - pts.points[p][1];
                    const double dz = z - pts.points[p][2];
                    const double d2 = dx * dx + dy * dy + dz * dz;
                    if (d2 < bestD2) {
                        bestD2 = d2;
                        best = p;
                    }
                    if (d2 <= r2) {
                        idx.push_back(p);
                        w.push_back(std::exp(-d2 * inv2s2));
                        total += w.back();
                    }
                }
                if (idx.empty()) {
                    rows->col.push_back(best);
                    rows->w.push_back(1.0);
                } else {
                    const double inv = 1.0 / (total + cfg.eps_w);
                    for (std::size_t k = 0; k < idx.size(); ++k) {
                        rows->col.push_back(idx[k]);
                        rows->w.push_back(w[k] * inv);
                    }
                }
                rows->ptr[v + 1] = static_cast<std::int64_t>(rows->col.size());
            }
    return rows;
}

ad::NodeId densify_node(ad::Tape& tape, ad::NodeId sparse_disp,
                        std::shared_ptr<const ad::SparseRows> weights)
{
    const ad::Tensor& dv = tape.value(sparse_disp);
    if (dv.rank() != 2 || dv.shape[1] != 3)
        throw DataError("densify: sparse displacements must be (N,3)");
    return ad::sparse_mix(tape, sparse_disp, std::move(weights));
}

DisplacementField densify(const DrivingPointSet& pts,
                          const std::vector<std::array<double, 3>>& disp,
                          const std::array<int, 3>& dims, const InterpConfig& cfg)
{
    if (disp.size() != pts.points.size())
        throw DataError("densify: displacement count does not match point count");
    ad::Tensor sparse = ad::Tensor::zeros({std::max(pts.count(), 1), 3});
    for (int i = 0; i < pts.count(); ++i)
        for (int a = 0; a < 3; ++a)
            sparse.data[static_cast<std::size_t>(i) * 3 + a] = disp[i][a];

    ad::Tape tape;
    const ad::NodeId out =
        densify_node(tape, tape.leaf(std::move(sparse)), densify_weights(pts, dims, cfg));
    // (V,3) rows in x-fastest order == Volume layout transposed
    const ad::Tensor& t = tape.value(out);
    Volume vol(dims, 3);
    const std::size_t plane = vol.voxel_count();
    for (std::size_t v = 0; v < plane; ++v)
        for (int a = 0; a < 3; ++a)
            vol.data[v + a * plane] = t.data[v * 3 + a];
    return DisplacementField(std::move(vol));
}

} // namespace pdreg
