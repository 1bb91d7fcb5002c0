#include "pdreg/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pdreg {

std::string to_string(FeatureKind k)
{
    switch (k) {
    case FeatureKind::intensity: return "intensity";
    case FeatureKind::mind: return "mind";
    case FeatureKind::learned: return "learned";
    }
    return "?";
}

FeatureKind feature_kind_from_string(const std::string& s)
{
    if (s == "intensity") return FeatureKind::intensity;
    if (s == "mind") return FeatureKind::mind;
    if (s == "learned") return FeatureKind::learned;
    throw DataError("unknown feature kind: " + s);
}

int feature_dim(FeatureKind k)
{
    switch (k) {
    case FeatureKind::intensity: return 1;
    case FeatureKind::mind: return 6;
    case FeatureKind::learned: return kLearnedFeatureDim;
    }
    return 1;
}

FeatureMap intensity_features(const Volume& img)
{
    if (img.channels != 1)
        throw DataError("intensity_features expects a single-channel image");
    return {normalize_intensity(img), FeatureKind::intensity};
}

namespace {

constexpr int kMindOffsets[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                    {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};

// Gaussian-weighted patch SSD between p and p+o for every voxel, computed as
// a weighted box sum of the squared shifted-difference image.
Volume patch_distance(const Volume& img, const int o[3], const MindConfig& cfg)
{
    const auto& d = img.dims;
    Volume diff2(d, 1);
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                const int qx = std::clamp(x + o[0], 0, d[0] - 1);
                const int qy = std::clamp(y + o[1], 0, d[1] - 1);
                const int qz = std::clamp(z + o[2], 0, d[2] - 1);
                const double dv = img.at(x, y, z) - img.at(qx, qy, qz);
                diff2.at(x, y, z) = dv * dv;
            }

    const int r = cfg.patch_radius;
    std::vector<double> k(2 * r + 1);
    double ksum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * i * i / (cfg.sigma_g * cfg.sigma_g));
        ksum += k[i + r];
    }
    for (double& v : k)
        v /= ksum;

    // separable weighted sum, border replicated
    Volume tmp = diff2;
    for (int axis = 0; axis < 3; ++axis) {
        Volume src = tmp;
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    double acc = 0.0;
                    for (int i = -r; i <= r; ++i) {
                        int p[3] = {x, y, z};
                        p[axis] = std::clamp(p[axis] + i, 0, d[axis] - 1);
                        acc += k[i + r] * src.at(p[0], p[1], p[2]);
                    }
                    tmp.at(x, y, z) = acc;
                }
    }
    return tmp;
}

} // namespace

FeatureMap mind_features(const Volume& img, const MindConfig& cfg)
{
    if (img.channels != 1)
        throw DataError("mind_features expects a single-channel image");
    if (cfg.patch_radius < 1)
        throw DataError("mind patch radius must be >= 1");
    if (cfg.eps_v <= 0.0 || cfg.eps_v >= 1.0)
        throw DataError("mind eps_v must be in (0,1)");
    const int minExtent = 2 * cfg.patch_radius + 3;
    for (int a = 0; a < 3; ++a)
        if (img.dims[a] < minExtent)
            throw DataError("mind_features: image extent " + std::to_string(img.dims[a]) +
                            " smaller than required " + std::to_string(minExtent));

    const std::size_t n = img.voxel_count();
    std::array<Volume, 6> dist;
    for (int c = 0; c < 6; ++c)
        dist[c] = patch_distance(img, kMindOffsets[c], cfg);

    std::vector<double> variance(n, 0.0);
    double vmean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < 6; ++c)
            acc += dist[c].data[i];
        variance[i] = acc / 6.0;
        vmean += variance[i];
    }
    vmean /= static_cast<double>(n);
    const double floorV = cfg.eps_v * vmean;

    Volume out(img.dims, 6);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = std::max({variance[i], floorV, std::numeric_limits<double>::min()});
        double mx = 0.0;
        for (int c = 0; c < 6; ++c) {
            const double e = std::exp(-dist[c].data[i] / v);
            out.data[i + c * n] = e;
            mx = std::max(mx, e);
        }
        for (int c = 0; c < 6; ++c)
            out.data[i + c * n] /= mx;
    }
    return {std::move(out), FeatureKind::mind};
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

void init_feature_params(ad::ParameterSet& params, std::mt19937_64& rng)
{
    const int h = kLearnedFeatureHidden;
    const int d = kLearnedFeatureDim;
    params.add("feat.c1.w", uniform_init({h, 1, 3, 3, 3}, 1 * 27, rng));
    params.add("feat.c1.b", uniform_init({h}, 1 * 27, rng));
    params.add("feat.c2.w", uniform_init({h, h, 3, 3, 3}, h * 27, rng));
    params.add("feat.c2.b", uniform_init({h}, h * 27, rng));
    params.add("feat.c3.w", uniform_init({d, h, 3, 3, 3}, h * 27, rng));
    params.add("feat.c3.b", uniform_init({d}, h * 27, rng));
}

ad::NodeId learned_features_node(ad::Tape& tape, ad::NodeId image,
                                 const std::unordered_map<std::string, ad::NodeId>& params)
{
    auto p = [&](const char* name) {
        auto it = params.find(name);
        if (it == params.end())
            throw DataError(std::string("missing parameter node: ") + name);
        return it->second;
    };
    ad::NodeId h = ad::conv3d(tape, image, p("feat.c1.w"), p("feat.c1.b"), 1, 1);
    h = ad::leaky_relu(tape, h, 0.1);
    h = ad::conv3d(tape, h, p("feat.c2.w"), p("feat.c2.b"), 1, 1);
    h = ad::leaky_relu(tape, h, 0.1);
    return ad::conv3d(tape, h, p("feat.c3.w"), p("feat.c3.b"), 1, 1);
}

FeatureMap learned_features(const Volume& img, const ad::ParameterSet& params)
{
    if (img.channels != 1)
        throw DataError("learned_features expects a single-channel image");
    ad::Tape tape;
    std::unordered_map<std::string, ad::NodeId> nodes;
    for (const char* name : {"feat.c1.w", "feat.c1.b", "feat.c2.w", "feat.c2.b", "feat.c3.w",
                             "feat.c3.b"})
        nodes.emplace(name, tape.leaf(params.at(name), false));
    const ad::NodeId img_node = tape.leaf(ad::volume_to_tensor(img), false);
    const ad::NodeId out = learned_features_node(tape, img_node, nodes);
    return {ad::tensor_to_volume(tape.value(out)), FeatureKind::learned};
}

} // namespace pdreg
