#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "pdreg/pipeline.hpp"
#include "pdreg/predictor.hpp"

using namespace pdreg;
using pdtest::random_volume;

namespace {

PredictorConfig small_cfg()
{
    PredictorConfig cfg;
    cfg.spacing = 4.0;
    cfg.margin = 2.0;
    cfg.widths = {4, 4};
    return cfg;
}

struct Setup {
    Volume fixed, moving;
    FeatureMap ff, fm;
    ad::ParameterSet params;
};

Setup make_setup(std::uint64_t seed, const PredictorConfig& cfg,
                 const std::array<int, 3>& dims = {8, 8, 8})
{
    std::mt19937_64 rng(seed);
    Setup s;
    s.fixed = random_volume(dims, 1, rng);
    s.moving = random_volume(dims, 1, rng);
    s.ff = intensity_features(s.fixed);
    s.fm = intensity_features(s.moving);
    init_predictor_params(s.params, 2 + 2 * 1, cfg, rng);
    return s;
}

void zero(ad::ParameterSet& p, const std::string& name)
{
    for (double& v : p.at(name).data)
        v = 0.0;
}

} // namespace

TEST_CASE("zero head weights reproduce the rest grid exactly")
{
    const PredictorConfig cfg = small_cfg();
    Setup s = make_setup(3, cfg);
    zero(s.params, "pred.head.w");
    zero(s.params, "pred.head.b");
    const DrivingPointSet pts = predict_points(s.fixed, s.moving, s.ff, s.fm, s.params, cfg);
    const DrivingPointSet rest = grid_points({8, 8, 8}, cfg.spacing, cfg.margin);
    CHECK(pts.provenance == PointProvenance::predicted);
    REQUIRE(pts.count() == rest.count());
    CHECK(pts.points == rest.points);
    REQUIRE(pts.rest_grid.has_value());
    CHECK(pts.rest_grid->counts == rest.rest_grid->counts);
}

TEST_CASE("saturated raw outputs cap the displacement at 20% of the extent")
{
    const PredictorConfig cfg = small_cfg();
    Setup s = make_setup(5, cfg);
    for (const auto& name : s.params.names())
        zero(s.params, name);
    s.params.at("pred.head.b").data[0] = 1e12; // +x head channel saturates
    const DrivingPointSet pts = predict_points(s.fixed, s.moving, s.ff, s.fm, s.params, cfg);
    const DrivingPointSet rest = grid_points({8, 8, 8}, cfg.spacing, cfg.margin);
    const double cap = cfg.cap * 8.0; // tanh saturates to exactly 1.0 in doubles
    for (int i = 0; i < pts.count(); ++i) {
        CHECK(pts.points[i][0] == std::min(rest.points[i][0] + cap, 7.0));
        CHECK(pts.points[i][1] == rest.points[i][1]);
        CHECK(pts.points[i][2] == rest.points[i][2]);
    }
}

TEST_CASE("a raw output equal to the cap scales by tanh(1)")
{
    const PredictorConfig cfg = small_cfg();
    Setup s = make_setup(7, cfg);
    for (const auto& name : s.params.names())
        zero(s.params, name);
    const double cap = cfg.cap * 8.0;
    s.params.at("pred.head.b").data[1] = cap; // y channel
    const DrivingPointSet pts = predict_points(s.fixed, s.moving, s.ff, s.fm, s.params, cfg);
    const DrivingPointSet rest = grid_points({8, 8, 8}, cfg.spacing, cfg.margin);
    for (int i = 0; i < pts.count(); ++i)
        CHECK(pts.points[i][1] ==
              doctest::Approx(std::min(rest.points[i][1] + cap * std::tanh(1.0), 7.0))
                  .epsilon(1e-12));
}

TEST_CASE("every predicted point stays within the cap of its rest vertex")
{
    const PredictorConfig cfg = small_cfg();
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Setup s = make_setup(seed, cfg);
        // inflate parameters so the tanh cap is actually exercised
        for (const auto& name : s.params.names())
            for (double& v : s.params.at(name).data)
                v *= 50.0;
        const DrivingPointSet pts = predict_points(s.fixed, s.moving, s.ff, s.fm, s.params, cfg);
        const DrivingPointSet rest = grid_points({8, 8, 8}, cfg.spacing, cfg.margin);
        REQUIRE(pts.count() == rest.count());
        for (int i = 0; i < pts.count(); ++i)
            for (int a = 0; a < 3; ++a) {
                CHECK(std::abs(pts.points[i][a] - rest.points[i][a]) <= cfg.cap * 8.0 + 1e-12);
                CHECK(pts.points[i][a] >= 0.0);
                CHECK(pts.points[i][a] <= 7.0);
            }
    }
}

TEST_CASE("multiple heads emit head-major point blocks")
{
    PredictorConfig cfg = small_cfg();
    cfg.heads = 2;
    std::mt19937_64 rng(11);
    Setup s;
    s.fixed = random_volume({8, 8, 8}, 1, rng);
    s.moving = random_volume({8, 8, 8}, 1, rng);
    s.ff = intensity_features(s.fixed);
    s.fm = intensity_features(s.moving);
    init_predictor_params(s.params, 4, cfg, rng);
    const DrivingPointSet pts = predict_points(s.fixed, s.moving, s.ff, s.fm, s.params, cfg);
    const int g = grid_points({8, 8, 8}, cfg.spacing, cfg.margin).count();
    CHECK(pts.count() == 2 * g);

    // zeroing the head leaves both blocks on the rest grid
    zero(s.params, "pred.head.w");
    zero(s.params, "pred.head.b");
    const DrivingPointSet zpts = predict_points(s.fixed, s.moving, s.ff, s.fm, s.params, cfg);
    const DrivingPointSet rest = grid_points({8, 8, 8}, cfg.spacing, cfg.margin);
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < g; ++i)
            CHECK(zpts.points[j * g + i] == rest.points[i]);
}

TEST_CASE("prediction is deterministic")
{
    const PredictorConfig cfg = small_cfg();
    Setup s = make_setup(13, cfg);
    const DrivingPointSet a = predict_points(s.fixed, s.moving, s.ff, s.fm, s.params, cfg);
    const DrivingPointSet b = predict_points(s.fixed, s.moving, s.ff, s.fm, s.params, cfg);
    CHECK(a.points == b.points);
}

TEST_CASE("configuration errors are detected")
{
    PredictorConfig cfg = small_cfg();
    CHECK_THROWS_AS(cfg.validate({10, 8, 8}), DataError); // 10 not reducible by 4
    PredictorConfig bad = small_cfg();
    bad.margin = 3.5; // grid counts no longer match the encoder output
    CHECK_THROWS_AS(bad.validate({8, 8, 8}), DataError);
    PredictorConfig badCap = small_cfg();
    badCap.cap = 0.7;
    CHECK_THROWS_AS(badCap.validate({8, 8, 8}), DataError);
    PredictorConfig badSpacing = small_cfg();
    badSpacing.spacing = 6.0;
    CHECK_THROWS_AS(badSpacing.stages(), DataError);
    PredictorConfig badWidths = small_cfg();
    badWidths.widths = {4};
    CHECK_THROWS_AS(badWidths.validate({8, 8, 8}), DataError);
}

TEST_CASE("driving features sample exactly on the lattice")
{
    std::mt19937_64 rng(17);
    const Volume feat = random_volume({6, 6, 6}, 3, rng);
    DrivingPointSet pts;
    pts.points = {{2.0, 3.0, 4.0}, {1.0, 5.0, 0.0}};
    const auto desc = sample_driving_features({feat, FeatureKind::learned}, pts);
    REQUIRE(desc.size() == 2);
    for (int c = 0; c < 3; ++c) {
        CHECK(desc[0][c] == feat.at(2, 3, 4, c));
        CHECK(desc[1][c] == feat.at(1, 5, 0, c));
    }
}

TEST_CASE("constant feature maps give constant descriptors and zero coordinate gradient")
{
    ad::Tensor feat = ad::Tensor::full({2, 5, 5, 5}, 0.8);
    ad::Tensor coords({2, 3}, {1.3, 2.7, 3.1, 2.2, 1.9, 0.6});
    ad::Tape t;
    const ad::NodeId fid = t.leaf(feat, false);
    const ad::NodeId cid = t.leaf(coords, true);
    const ad::NodeId out = sample_driving_features_node(t, fid, cid);
    for (double v : t.value(out).data)
        CHECK(v == doctest::Approx(0.8).epsilon(1e-15));
    t.backward(ad::sum(t, out));
    for (double g : t.grad(cid).data)
        CHECK(g == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("driving-feature gradients w.r.t. coordinates match finite differences")
{
    std::mt19937_64 rng(19);
    ad::Tensor feat = pdtest::random_tensor({2, 5, 5, 5}, rng);
    ad::Tensor coords = ad::Tensor::zeros({3, 3});
    std::uniform_real_distribution<double> cd(0.3, 3.7);
    for (double& v : coords.data) {
        v = cd(rng);
        if (std::abs(v - std::round(v)) < 0.05)
            v += 0.1;
    }
    pdtest::check_gradients(
        [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
            const ad::NodeId d = sample_driving_features_node(t, in[0], in[1]);
            return ad::sum(t, ad::mul(t, d, d));
        },
        {feat, coords});
}

TEST_CASE("predictor gradients match finite differences")
{
    const PredictorConfig cfg = small_cfg();
    Setup s = make_setup(23, cfg);
    const ad::Tensor fixedT = ad::volume_to_tensor(s.fixed);
    const ad::Tensor movingT = ad::volume_to_tensor(s.moving);
    const ad::Tensor ffT = ad::volume_to_tensor(s.ff.vol);
    const ad::Tensor fmT = ad::volume_to_tensor(s.fm.vol);

    // finite differences over the head parameters; the trunk stays constant
    std::vector<std::string> names = s.params.names();
    std::vector<ad::Tensor> inputs{s.params.at("pred.head.w"), s.params.at("pred.head.b")};
    const ad::ParameterSet& frozen = s.params;
    pdtest::check_gradients(
        [&, names](ad::Tape& t, const std::vector<ad::NodeId>& in) {
            std::unordered_map<std::string, ad::NodeId> nodes;
            for (const auto& n : names)
                nodes.emplace(n, n == "pred.head.w"   ? in[0]
                                 : n == "pred.head.b" ? in[1]
                                                      : t.leaf(frozen.at(n), false));
            const ad::NodeId pts = predict_points_node(
                t, t.leaf(fixedT), t.leaf(movingT), t.leaf(ffT), t.leaf(fmT), nodes, cfg,
                {8, 8, 8});
            return ad::sum(t, ad::mul(t, pts, pts));
        },
        inputs, 2e-4);
}
