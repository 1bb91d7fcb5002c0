#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "pdreg/volume.hpp"
#include "pdreg/volume_io.hpp"

using namespace pdreg;
namespace fs = std::filesystem;

namespace {

// independent 8-corner oracle with border clamping
double trilerp_oracle(const Volume& v, double x, double y, double z, int c)
{
    auto cl = [](double q, int n) { return std::min(std::max(q, 0.0), static_cast<double>(n - 1)); };
    x = cl(x, v.dims[0]);
    y = cl(y, v.dims[1]);
    z = cl(z, v.dims[2]);
    const int x0 = std::min(static_cast<int>(std::floor(x)), v.dims[0] - 2 < 0 ? 0 : v.dims[0] - 2);
    const int y0 = std::min(static_cast<int>(std::floor(y)), v.dims[1] - 2 < 0 ? 0 : v.dims[1] - 2);
    const int z0 = std::min(static_cast<int>(std::floor(z)), v.dims[2] - 2 < 0 ? 0 : v.dims[2] - 2);
    const double fx = v.dims[0] == 1 ? 0.0 : x - x0;
    const double fy = v.dims[1] == 1 ? 0.0 : y - y0;
    const double fz = v.dims[2] == 1 ? 0.0 : z - z0;
    double acc = 0.0;
    for (int bz = 0; bz < 2; ++bz)
        for (int by = 0; by < 2; ++by)
            for (int bx = 0; bx < 2; ++bx) {
                const int xi = std::min(x0 + bx, v.dims[0] - 1);
                const int yi = std::min(y0 + by, v.dims[1] - 1);
                const int zi = std::min(z0 + bz, v.dims[2] - 1);
                acc += (bx ? fx : 1 - fx) * (by ? fy : 1 - fy) * (bz ? fz : 1 - fz) *
                       v.at(xi, yi, zi, c);
            }
    return acc;
}

fs::path temp_file(const char* name)
{
    auto dir = fs::temp_directory_path() / "pdreg_test_volume";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("trilinear sampling is exact on lattice points")
{
    Volume v({4, 4, 4}, 1);
    v.at(1, 2, 3) = 5.0;
    const double pts[3] = {1.0, 2.0, 3.0};
    const auto out = sample_trilinear(v, pts);
    CHECK(out.size() == 1);
    CHECK(out[0] == 5.0);
}

TEST_CASE("trilinear midpoint averages the two corners")
{
    Volume v({2, 1, 1}, 1);
    v.at(0, 0, 0) = 0.0;
    v.at(1, 0, 0) = 2.0;
    const double pts[3] = {0.5, 0.0, 0.0};
    CHECK(sample_trilinear(v, pts)[0] == doctest::Approx(1.0));
}

TEST_CASE("trilinear matches the 8-corner oracle on random queries")
{
    std::mt19937_64 rng(7);
    const Volume v = pdtest::random_volume({4, 4, 4}, 2, rng);
    std::uniform_real_distribution<double> coord(-0.5, 3.5);
    for (int i = 0; i < 200; ++i) {
        const double p[3] = {coord(rng), coord(rng), coord(rng)};
        const auto out = sample_trilinear(v, p);
        for (int c = 0; c < 2; ++c)
            CHECK(out[c] == doctest::Approx(trilerp_oracle(v, p[0], p[1], p[2], c)).epsilon(1e-12));
    }
    const double fixed[3] = {0.3, 1.7, 2.2};
    const auto out = sample_trilinear(v, fixed);
    CHECK(out[0] == doctest::Approx(trilerp_oracle(v, 0.3, 1.7, 2.2, 0)).epsilon(1e-12));
}

TEST_CASE("trilinear sample stays within the corner hull")
{
    std::mt19937_64 rng(11);
    const Volume v = pdtest::random_volume({5, 4, 3}, 1, rng, -2.0, 2.0);
    double mn = 1e300, mx = -1e300;
    for (double x : v.data) {
        mn = std::min(mn, x);
        mx = std::max(mx, x);
    }
    std::uniform_real_distribution<double> coord(-1.0, 5.0);
    for (int i = 0; i < 500; ++i) {
        const double p[3] = {coord(rng), coord(rng), coord(rng)};
        const double s = sample_trilinear(v, p)[0];
        CHECK(s >= mn - 1e-12);
        CHECK(s <= mx + 1e-12);
    }
}

TEST_CASE("stencil coordinate gradient matches finite differences away from kinks")
{
    std::mt19937_64 rng(13);
    const Volume v = pdtest::random_volume({5, 5, 5}, 1, rng);
    auto value = [&](double x, double y, double z) {
        const double p[3] = {x, y, z};
        return sample_trilinear(v, p)[0];
    };
    std::uniform_real_distribution<double> frac(0.2, 0.8);
    std::uniform_int_distribution<int> cell(0, 3);
    const double h = 1e-6;
    for (int i = 0; i < 100; ++i) {
        const double x = cell(rng) + frac(rng);
        const double y = cell(rng) + frac(rng);
        const double z = cell(rng) + frac(rng);
        const TrilinearStencil s = trilinear_stencil(v.dims, x, y, z);
        double grad[3] = {0, 0, 0};
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < 8; ++k)
                grad[a] += s.dw[a][k] * v.data[s.corner[k]];
        const double fdx = (value(x + h, y, z) - value(x - h, y, z)) / (2 * h);
        const double fdy = (value(x, y + h, z) - value(x, y - h, z)) / (2 * h);
        const double fdz = (value(x, y, z + h) - value(x, y, z - h)) / (2 * h);
        CHECK(pdtest::grad_close(grad[0], fdx, 1e-6));
        CHECK(pdtest::grad_close(grad[1], fdy, 1e-6));
        CHECK(pdtest::grad_close(grad[2], fdz, 1e-6));
    }
}

TEST_CASE("warp with a zero field is the identity")
{
    std::mt19937_64 rng(17);
    const Volume v = pdtest::random_volume({4, 3, 5}, 2, rng);
    const DisplacementField zero(Volume({4, 3, 5}, 3));
    const Volume w = warp(v, zero);
    CHECK(w.data == v.data);
}

TEST_CASE("warp by an integer translation shifts the image")
{
    std::mt19937_64 rng(19);
    const Volume v = pdtest::random_volume({6, 6, 6}, 1, rng);
    Volume fieldVol({6, 6, 6}, 3);
    for (std::size_t i = 0; i < fieldVol.voxel_count(); ++i)
        fieldVol.data[i] = 1.0; // x component
    const Volume w = warp(v, DisplacementField(std::move(fieldVol)));
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 5; ++x)
                CHECK(w.at(x, y, z) == doctest::Approx(v.at(x + 1, y, z)).epsilon(1e-14));
}

TEST_CASE("warp agrees with per-voxel sampling oracle")
{
    std::mt19937_64 rng(23);
    const Volume v = pdtest::random_volume({5, 4, 4}, 1, rng);
    Volume fieldVol = pdtest::random_volume({5, 4, 4}, 3, rng, -1.2, 1.2);
    const DisplacementField field(fieldVol);
    const Volume w = warp(v, field);
    const std::size_t plane = v.voxel_count();
    std::size_t idx = 0;
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x, ++idx) {
                const double qx = x + fieldVol.data[idx];
                const double qy = y + fieldVol.data[idx + plane];
                const double qz = z + fieldVol.data[idx + 2 * plane];
                CHECK(w.data[idx] == doctest::Approx(trilerp_oracle(v, qx, qy, qz, 0)).epsilon(1e-12));
            }
}

TEST_CASE("warp rejects mismatched grids")
{
    const Volume v({4, 4, 4}, 1);
    const DisplacementField f(Volume({4, 4, 5}, 3));
    CHECK_THROWS_WITH_AS(warp(v, f), doctest::Contains("4x4x4"), DataError);
}

TEST_CASE("volume invariants are enforced")
{
    CHECK_THROWS_AS(Volume({2, 2, 2}, 1, std::vector<double>(7, 0.0)), DataError);
    std::vector<double> bad(8, 0.0);
    bad[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(Volume({2, 2, 2}, 1, std::move(bad)), DataError);
    CHECK_THROWS_AS(DisplacementField(Volume({2, 2, 2}, 2)), DataError);
}

TEST_CASE("vol3 round-trips values representable in f32")
{
    std::mt19937_64 rng(29);
    Volume v({3, 4, 5}, 2);
    std::uniform_real_distribution<double> dist(-10.0, 10.0);
    for (double& x : v.data)
        x = static_cast<float>(dist(rng)); // f32-representable
    const auto path = temp_file("roundtrip.vol3");
    write_vol3(v, path);
    const Volume r = read_vol3(path);
    CHECK(r.dims == v.dims);
    CHECK(r.channels == v.channels);
    CHECK(r.data == v.data);
}

TEST_CASE("vol3 rejects corrupt files")
{
    const auto path = temp_file("bad.vol3");
    {
        std::ofstream os(path, std::ios::binary);
        os << "WHAT";
    }
    CHECK_THROWS_WITH_AS(read_vol3(path), doctest::Contains("magic"), DataError);

    Volume v({2, 2, 2}, 1);
    write_vol3(v, path);
    // truncate payload: header (24) + 7 of 8 values
    fs::resize_file(path, 24 + 7 * 4);
    CHECK_THROWS_WITH_AS(read_vol3(path), doctest::Contains("shorter"), DataError);

    write_vol3(v, path);
    {
        std::ofstream os(path, std::ios::binary | std::ios::app);
        const char extra[4] = {0, 0, 0, 0};
        os.write(extra, 4);
    }
    CHECK_THROWS_WITH_AS(read_vol3(path), doctest::Contains("longer"), DataError);
}

TEST_CASE("lab3 round-trips and validates header")
{
    LabelVolume l({3, 2, 2});
    for (std::size_t i = 0; i < l.data.size(); ++i)
        l.data[i] = static_cast<std::uint16_t>(i % 5);
    const auto path = temp_file("labels.lab3");
    write_lab3(l, path);
    const LabelVolume r = read_lab3(path);
    CHECK(r.dims == l.dims);
    CHECK(r.data == l.data);
    CHECK(r.labels() == std::vector<std::uint16_t>{1, 2, 3, 4});
    CHECK_THROWS_AS(read_vol3(path), DataError); // wrong magic for vol3
}

TEST_CASE("label warp is nearest-neighbour")
{
    LabelVolume l({4, 4, 4});
    l.at(2, 2, 2) = 7;
    Volume fieldVol({4, 4, 4}, 3);
    for (std::size_t i = 0; i < fieldVol.voxel_count(); ++i)
        fieldVol.data[i] = 1.0;
    const LabelVolume w = warp_labels(l, DisplacementField(std::move(fieldVol)));
    CHECK(w.at(1, 2, 2) == 7);
    CHECK(w.at(2, 2, 2) == 0);
}

TEST_CASE("normalize_intensity maps to [0,1] and fixes constants")
{
    std::mt19937_64 rng(31);
    const Volume v = pdtest::random_volume({4, 4, 4}, 1, rng, -3.0, 9.0);
    const Volume n = normalize_intensity(v);
    double mn = 1e300, mx = -1e300;
    for (double x : n.data) {
        mn = std::min(mn, x);
        mx = std::max(mx, x);
    }
    CHECK(mn == doctest::Approx(0.0));
    CHECK(mx == doctest::Approx(1.0));

    Volume c({3, 3, 3}, 1);
    for (double& x : c.data)
        x = 4.2;
    const Volume nc = normalize_intensity(c);
    for (double x : nc.data)
        CHECK(x == 0.0);

    // fixed point: already [0,1]
    const Volume again = normalize_intensity(n);
    for (std::size_t i = 0; i < n.data.size(); ++i)
        CHECK(again.data[i] == doctest::Approx(n.data[i]).epsilon(1e-15));
}
