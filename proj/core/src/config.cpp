#include "pdreg/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace pdreg {

std::string to_string(SelectorKind k)
{
    switch (k) {
    case SelectorKind::grid: return "grid";
    case SelectorKind::foerstner: return "foerstner";
    case SelectorKind::predicted: return "predicted";
    }
    return "?";
}

SelectorKind selector_kind_from_string(const std::string& s)
{
    if (s == "grid") return SelectorKind::grid;
    if (s == "foerstner") return SelectorKind::foerstner;
    if (s == "predicted") return SelectorKind::predicted;
    throw DataError("unknown selector kind: " + s);
}

int PredictorConfig::stages() const
{
    const int s = static_cast<int>(spacing);
    if (spacing != s || s < 2 || (s & (s - 1)) != 0)
        throw DataError("predictor: spacing must be an integer power of two >= 2, got " +
                        std::to_string(spacing));
    int n = 0;
    for (int v = s; v > 1; v >>= 1)
        ++n;
    return n;
}

void PredictorConfig::validate(const std::array<int, 3>& dims) const
{
    if (cap <= 0.0 || cap >= 0.5)
        throw DataError("predictor: cap must be in (0, 0.5)");
    if (heads < 1)
        throw DataError("predictor: heads must be >= 1");
    const int st = stages();
    if (static_cast<int>(widths.size()) != st)
        throw DataError("predictor: expected " + std::to_string(st) +
                        " encoder widths for spacing " + std::to_string(spacing) + ", got " +
                        std::to_string(widths.size()));
    const int s = static_cast<int>(spacing);
    const DrivingPointSet rest = grid_points(dims, spacing, margin);
    for (int a = 0; a < 3; ++a) {
        if (dims[a] % s != 0)
            throw DataError("predictor: extent " + std::to_string(dims[a]) +
                            " is not reducible by " + std::to_string(st) +
                            " stride-2 stages to the rest grid");
        if (rest.rest_grid->counts[a] != dims[a] / s)
            throw DataError("predictor: rest grid count " +
                            std::to_string(rest.rest_grid->counts[a]) + " on axis " +
                            std::to_string(a) + " does not match encoder output " +
                            std::to_string(dims[a] / s) +
                            " (adjust grid margin/spacing)");
    }
}

void RegistrationConfig::validate() const
{
    search.validate();
    mrf.validate();
    interp.validate();
    lncc.validate();
    if (lambda_reg < 0.0)
        throw DataError("lambda_reg must be >= 0");
}

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where)
{
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw DataError("unknown key \"" + key + "\" in " + where);
}

template <class T>
void maybe(const json& j, const char* key, T& out)
{
    if (j.contains(key))
        out = j.at(key).get<T>();
}

} // namespace

RegistrationConfig config_from_json_text(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("bad config JSON: ") + e.what());
    }
    check_keys(j,
               {"features", "selector", "search", "mrf", "interp", "predictor", "grid",
                "foerstner", "mind", "lncc", "lambda_reg", "seed"},
               "config");
    RegistrationConfig c;
    if (j.contains("features"))
        c.features = feature_kind_from_string(j.at("features").get<std::string>());
    if (j.contains("selector"))
        c.selector = selector_kind_from_string(j.at("selector").get<std::string>());
    if (j.contains("search")) {
        const auto& s = j.at("search");
        check_keys(s, {"radius", "stride"}, "search");
        maybe(s, "radius", c.search.radius);
        maybe(s, "stride", c.search.stride);
    }
    if (j.contains("mrf")) {
        const auto& s = j.at("mrf");
        check_keys(s, {"lambda", "sigma_p", "alpha", "iters", "knn"}, "mrf");
        maybe(s, "lambda", c.mrf.lambda);
        maybe(s, "sigma_p", c.mrf.sigma_p);
        maybe(s, "alpha", c.mrf.alpha);
        maybe(s, "iters", c.mrf.iters);
        maybe(s, "knn", c.mrf.knn);
    }
    if (j.contains("interp")) {
        const auto& s = j.at("interp");
        check_keys(s, {"sigma", "trunc", "eps_w"}, "interp");
        maybe(s, "sigma", c.interp.sigma);
        maybe(s, "trunc", c.interp.trunc);
        maybe(s, "eps_w", c.interp.eps_w);
    }
    if (j.contains("predictor")) {
        const auto& s = j.at("predictor");
        check_keys(s, {"spacing", "margin", "cap", "heads", "widths"}, "predictor");
        maybe(s, "spacing", c.predictor.spacing);
        maybe(s, "margin", c.predictor.margin);
        maybe(s, "cap", c.predictor.cap);
        maybe(s, "heads", c.predictor.heads);
        maybe(s, "widths", c.predictor.widths);
    }
    if (j.contains("grid")) {
        const auto& s = j.at("grid");
        check_keys(s, {"spacing", "margin"}, "grid");
        maybe(s, "spacing", c.grid.spacing);
        maybe(s, "margin", c.grid.margin);
    }
    if (j.contains("foerstner")) {
        const auto& s = j.at("foerstner");
        check_keys(s, {"sigma_t", "nms_radius", "count"}, "foerstner");
        maybe(s, "sigma_t", c.foerstner.sigma_t);
        maybe(s, "nms_radius", c.foerstner.nms_radius);
        maybe(s, "count", c.foerstner.count);
    }
    if (j.contains("mind")) {
        const auto& s = j.at("mind");
        check_keys(s, {"radius", "sigma_g", "eps_v"}, "mind");
        maybe(s, "radius", c.mind.patch_radius);
        maybe(s, "sigma_g", c.mind.sigma_g);
        maybe(s, "eps_v", c.mind.eps_v);
    }
    if (j.contains("lncc")) {
        const auto& s = j.at("lncc");
        check_keys(s, {"radius", "eps"}, "lncc");
        maybe(s, "radius", c.lncc.radius);
        maybe(s, "eps", c.lncc.eps);
    }
    maybe(j, "lambda_reg", c.lambda_reg);
    maybe(j, "seed", c.seed);
    c.validate();
    return c;
}

RegistrationConfig read_config_json(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_to_json(const RegistrationConfig& c)
{
    json j;
    j["features"] = to_string(c.features);
    j["selector"] = to_string(c.selector);
    j["search"] = {{"radius", c.search.radius}, {"stride", c.search.stride}};
    j["mrf"] = {{"lambda", c.mrf.lambda},
                {"sigma_p", c.mrf.sigma_p},
                {"alpha", c.mrf.alpha},
                {"iters", c.mrf.iters},
                {"knn", c.mrf.knn}};
    j["interp"] = {{"sigma", c.interp.sigma}, {"trunc", c.interp.trunc}, {"eps_w", c.interp.eps_w}};
    j["predictor"] = {{"spacing", c.predictor.spacing},
                      {"margin", c.predictor.margin},
                      {"cap", c.predictor.cap},
                      {"heads", c.predictor.heads},
                      {"widths", c.predictor.widths}};
    j["grid"] = {{"spacing", c.grid.spacing}, {"margin", c.grid.margin}};
    j["foerstner"] = {{"sigma_t", c.foerstner.sigma_t},
                      {"nms_radius", c.foerstner.nms_radius},
                      {"count", c.foerstner.count}};
    j["mind"] = {{"radius", c.mind.patch_radius},
                 {"sigma_g", c.mind.sigma_g},
                 {"eps_v", c.mind.eps_v}};
    j["lncc"] = {{"radius", c.lncc.radius}, {"eps", c.lncc.eps}};
    j["lambda_reg"] = c.lambda_reg;
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

} // namespace pdreg
