#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "pdreg/interp.hpp"
#include "pdreg/metrics.hpp"

using namespace pdreg;

namespace {

// direct double-loop kernel-sum oracle
std::array<double, 3> densify_oracle(const DrivingPointSet& pts,
                                     const std::vector<std::array<double, 3>>& disp, int x, int y,
                                     int z, const InterpConfig& cfg)
{
    const double r2 = cfg.trunc * cfg.sigma * cfg.trunc * cfg.sigma;
    double wsum = 0.0;
    std::array<double, 3> acc{0, 0, 0};
    double bestD2 = 1e300;
    int best = 0;
    for (int p = 0; p < pts.count(); ++p) {
        const double dx = x - pts.points[p][0];
        const double dy = y - pts.points[p][1];
        const double dz = z - pts.points[p][2];
        const double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 < bestD2) {
            bestD2 = d2;
            best = p;
        }
        if (d2 <= r2) {
            const double w = std::exp(-d2 / (2.0 * cfg.sigma * cfg.sigma));
            wsum += w;
            for (int a = 0; a < 3; ++a)
                acc[a] += w * disp[p][a];
        }
    }
    if (wsum == 0.0)
        return disp[best];
    for (int a = 0; a < 3; ++a)
        acc[a] /= wsum + cfg.eps_w;
    return acc;
}

} // namespace

TEST_CASE("constant sparse displacements densify to a constant field")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> coord(1.0, 10.0);
    DrivingPointSet pts;
    for (int i = 0; i < 6; ++i)
        pts.points.push_back({coord(rng), coord(rng), coord(rng)});
    const std::array<double, 3> d{1.5, -0.75, 2.25};
    const std::vector<std::array<double, 3>> disp(6, d);
    InterpConfig cfg;
    cfg.sigma = 4.0;
    const DisplacementField field = densify(pts, disp, {12, 12, 12}, cfg);
    const std::size_t plane = field.vol.voxel_count();
    for (std::size_t v = 0; v < plane; ++v)
        for (int a = 0; a < 3; ++a)
            CHECK(std::abs(field.vol.data[v + a * plane] - d[a]) < 1e-6);
}

TEST_CASE("an isolated driving point reproduces its own displacement")
{
    DrivingPointSet pts;
    pts.points = {{3.0, 3.0, 3.0}, {60.0, 3.0, 3.0}}; // far beyond 6 sigma apart
    const std::vector<std::array<double, 3>> disp{{2.0, -1.0, 0.5}, {-3.0, 0.0, 1.0}};
    InterpConfig cfg;
    cfg.sigma = 2.0;
    const DisplacementField field = densify(pts, disp, {64, 7, 7}, cfg);
    for (int a = 0; a < 3; ++a) {
        CHECK(std::abs(field.comp(3, 3, 3, a) - disp[0][a]) < 1e-6);
        CHECK(std::abs(field.comp(60, 3, 3, a) - disp[1][a]) < 1e-6);
    }
}

TEST_CASE("densified field matches the double-loop oracle voxel for voxel")
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> coord(0.0, 11.0);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    DrivingPointSet pts;
    std::vector<std::array<double, 3>> disp;
    for (int i = 0; i < 5; ++i) {
        pts.points.push_back({coord(rng), coord(rng), coord(rng)});
        disp.push_back({u(rng), u(rng), u(rng)});
    }
    InterpConfig cfg;
    cfg.sigma = 2.5;
    const DisplacementField field = densify(pts, disp, {12, 12, 12}, cfg);
    for (int z = 0; z < 12; ++z)
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) {
                const auto expect = densify_oracle(pts, disp, x, y, z, cfg);
                for (int a = 0; a < 3; ++a)
                    CHECK(field.comp(x, y, z, a) == doctest::Approx(expect[a]).epsilon(1e-10));
            }
}

TEST_CASE("far voxels fall back to the nearest driving point")
{
    DrivingPointSet pts;
    pts.points = {{2.0, 2.0, 2.0}, {17.0, 2.0, 2.0}};
    const std::vector<std::array<double, 3>> disp{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    InterpConfig cfg;
    cfg.sigma = 1.0; // truncation radius 3: most voxels see no kernel
    const DisplacementField field = densify(pts, disp, {20, 20, 20}, cfg);
    // voxel far from both but nearer to point 1
    CHECK(field.comp(16, 14, 14, 1) == doctest::Approx(1.0));
    CHECK(field.comp(16, 14, 14, 0) == doctest::Approx(0.0));
    // and nearer to point 0
    CHECK(field.comp(3, 14, 14, 0) == doctest::Approx(1.0));
}

TEST_CASE("each output component stays within the sparse component hull")
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> coord(0.0, 15.0);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    DrivingPointSet pts;
    std::vector<std::array<double, 3>> disp;
    for (int i = 0; i < 8; ++i) {
        pts.points.push_back({coord(rng), coord(rng), coord(rng)});
        disp.push_back({u(rng), u(rng), u(rng)});
    }
    double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
    for (const auto& d : disp)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], d[a]);
            hi[a] = std::max(hi[a], d[a]);
        }
    const DisplacementField field = densify(pts, disp, {16, 16, 16}, {3.0, 3.0, 1e-12});
    const std::size_t plane = field.vol.voxel_count();
    for (std::size_t v = 0; v < plane; ++v)
        for (int a = 0; a < 3; ++a) {
            CHECK(field.vol.data[v + a * plane] >= lo[a] - 1e-9);
            CHECK(field.vol.data[v + a * plane] <= hi[a] + 1e-9);
        }
}

TEST_CASE("halving the bandwidth never lowers the bending energy")
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> coord(1.0, 14.0);
    std::uniform_real_distribution<double> u(-2.5, 2.5);
    DrivingPointSet pts;
    std::vector<std::array<double, 3>> disp;
    for (int i = 0; i < 7; ++i) {
        pts.points.push_back({coord(rng), coord(rng), coord(rng)});
        disp.push_back({u(rng), u(rng), u(rng)});
    }
    InterpConfig cfg;
    cfg.sigma = 8.0;
    double last = -1.0;
    for (int halvings = 0; halvings < 4; ++halvings) {
        const DisplacementField field = densify(pts, disp, {16, 16, 16}, cfg);
        const double be = bending_energy(field);
        if (halvings > 0)
            CHECK(be >= last - 1e-9);
        last = be;
        cfg.sigma *= 0.5;
    }
}

TEST_CASE("densify gradients w.r.t. sparse displacements match finite differences")
{
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> coord(0.0, 7.0);
    DrivingPointSet pts;
    for (int i = 0; i < 4; ++i)
        pts.points.push_back({coord(rng), coord(rng), coord(rng)});
    const auto weights = densify_weights(pts, {8, 8, 8}, {2.0, 3.0, 1e-12});
    ad::Tensor disp = pdtest::random_tensor({4, 3}, rng);
    const ad::Tensor proj = pdtest::random_tensor({8 * 8 * 8, 3}, rng);
    pdtest::check_gradients(
        [weights, proj](ad::Tape& t, const std::vector<ad::NodeId>& in) {
            const ad::NodeId dense = densify_node(t, in[0], weights);
            return ad::sum(t, ad::mul(t, dense, t.leaf(proj)));
        },
        {disp});
}

TEST_CASE("empty point sets are rejected")
{
    DrivingPointSet pts;
    CHECK_THROWS_AS(densify(pts, {}, {8, 8, 8}, {}), DataError);
}
