#include "pdreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pdreg/volume_io.hpp"

namespace pdreg {

void SyntheticSpec::validate() const
{
    if (dims[0] < 8 || dims[1] < 8 || dims[2] < 8)
        throw DataError("synthetic spec: dims must be >= 8 per axis");
    if (organs < 1)
        throw DataError("synthetic spec: organ count must be >= 1");
    if (radius_range[0] <= 0.0 || radius_range[1] < radius_range[0])
        throw DataError("synthetic spec: bad radius range");
    if (sigma_d <= 0.0)
        throw DataError("synthetic spec: sigma_d must be > 0");
    if (magnitude < 0.0)
        throw DataError("synthetic spec: magnitude must be >= 0");
    if (noise < 0.0)
        throw DataError("synthetic spec: noise must be >= 0");
    if (texture < 0.0)
        throw DataError("synthetic spec: texture must be >= 0");
}

SyntheticSpec synth_spec_from_json_text(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad synthetic spec JSON: ") + e.what());
    }
    SyntheticSpec s;
    if (j.contains("dims")) {
        const auto d = j.at("dims").get<std::vector<int>>();
        if (d.size() != 3)
            throw DataError("synthetic spec: dims must have 3 entries");
        s.dims = {d[0], d[1], d[2]};
    }
    if (j.contains("organs"))
        s.organs = j.at("organs").get<int>();
    if (j.contains("radius_range")) {
        const auto r = j.at("radius_range").get<std::vector<double>>();
        if (r.size() != 2)
            throw DataError("synthetic spec: radius_range must have 2 entries");
        s.radius_range = {r[0], r[1]};
    }
    if (j.contains("sigma_d"))
        s.sigma_d = j.at("sigma_d").get<double>();
    if (j.contains("magnitude"))
        s.magnitude = j.at("magnitude").get<double>();
    if (j.contains("noise"))
        s.noise = j.at("noise").get<double>();
    if (j.contains("texture"))
        s.texture = j.at("texture").get<double>();
    if (j.contains("seed"))
        s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("mode")) {
        const std::string m = j.at("mode").get<std::string>();
        if (m == "paired")
            s.mode = SyntheticSpec::Mode::paired;
        else if (m == "population")
            s.mode = SyntheticSpec::Mode::population;
        else
            throw DataError("synthetic spec: mode must be \"paired\" or \"population\"");
    }
    s.validate();
    return s;
}

SyntheticSpec read_synth_spec(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open spec " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return synth_spec_from_json_text(text);
}

std::string synth_spec_to_json(const SyntheticSpec& s)
{
    nlohmann::json j;
    j["dims"] = {s.dims[0], s.dims[1], s.dims[2]};
    j["organs"] = s.organs;
    j["radius_range"] = {s.radius_range[0], s.radius_range[1]};
    j["sigma_d"] = s.sigma_d;
    j["magnitude"] = s.magnitude;
    j["noise"] = s.noise;
    j["texture"] = s.texture;
    j["seed"] = s.seed;
    j["mode"] = s.mode == SyntheticSpec::Mode::paired ? "paired" : "population";
    return j.dump(2) + "\n";
}

namespace {

struct Phantom {
    Volume image;
    LabelVolume labels;
};

Phantom make_phantom(const SyntheticSpec& spec, std::mt19937_64& rng)
{
    const auto& d = spec.dims;
    Volume img(d, 1);
    LabelVolume lab(d);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // smooth texture baked into the template: it deforms with the anatomy
    // and gives every patch a matchable self-similarity signature
    {
        std::normal_distribution<double> gauss(0.0, 1.0);
        Volume tex(d, 1);
        for (double& v : tex.data)
            v = gauss(rng);
        tex = gaussian_smooth(tex, 1.2);
        double mx = 0.0;
        for (double v : tex.data)
            mx = std::max(mx, std::abs(v));
        const double scale = mx > 0.0 ? spec.texture / mx : 0.0;
        for (std::size_t i = 0; i < img.data.size(); ++i)
            img.data[i] = spec.texture + tex.data[i] * scale;
    }

    for (int k = 0; k < spec.organs; ++k) {
        double semi[3];
        double center[3];
        for (int a = 0; a < 3; ++a) {
            semi[a] = spec.radius_range[0] +
                      unit(rng) * (spec.radius_range[1] - spec.radius_range[0]);
            semi[a] = std::min(semi[a], (d[a] - 4.0) / 2.0);
            const double lo = semi[a] + 1.0;
            const double hi = d[a] - 2.0 - semi[a];
            center[a] = lo + unit(rng) * std::max(hi - lo, 0.0);
        }
        // distinct intensity per organ, jittered; organ texture rides on top
        const double intensity =
            0.35 + 0.6 * (k + unit(rng) * 0.5) / static_cast<double>(spec.organs);
        const auto label = static_cast<std::uint16_t>(k + 1);
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    const double ex = (x - center[0]) / semi[0];
                    const double ey = (y - center[1]) / semi[1];
                    const double ez = (z - center[2]) / semi[2];
                    if (ex * ex + ey * ey + ez * ez <= 1.0) {
                        img.at(x, y, z) = intensity + (img.at(x, y, z) - spec.texture);
                        lab.at(x, y, z) = label;
                    }
                }
    }
    img = gaussian_smooth(img, 0.8);
    return {std::move(img), std::move(lab)};
}

bool jacobian_positive(const DisplacementField& field)
{
    const auto& d = field.vol.dims;
    for (int z = 1; z < d[2] - 1; ++z)
        for (int y = 1; y < d[1] - 1; ++y)
            for (int x = 1; x < d[0] - 1; ++x) {
                double J[3][3];
                for (int a = 0; a < 3; ++a) {
                    J[a][0] = 0.5 * (field.comp(x + 1, y, z, a) - field.comp(x - 1, y, z, a));
                    J[a][1] = 0.5 * (field.comp(x, y + 1, z, a) - field.comp(x, y - 1, z, a));
                    J[a][2] = 0.5 * (field.comp(x, y, z + 1, a) - field.comp(x, y, z - 1, a));
                    J[a][a] += 1.0;
                }
                const double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                   J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                   J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
                if (det <= 0.0)
                    return false;
            }
    return true;
}

Volume add_noise(const Volume& img, double level, std::mt19937_64& rng)
{
    if (level <= 0.0)
        return img;
    std::normal_distribution<double> gauss(0.0, level);
    Volume out = img;
    for (double& v : out.data)
        v += gauss(rng);
    return out;
}

// solves y + g_j(y) = p + g_i(p) by fixed-point iteration; returns h = y - p
DisplacementField relative_field(const DisplacementField& gi, const DisplacementField& gj)
{
    const auto& d = gi.vol.dims;
    Volume out(d, 3);
    const std::size_t plane = out.voxel_count();
    std::size_t v = 0;
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x, ++v) {
                const double tx = x + gi.vol.data[v];
                const double ty = y + gi.vol.data[v + plane];
                const double tz = z + gi.vol.data[v + 2 * plane];
                double q[3] = {tx, ty, tz};
                for (int it = 0; it < 20; ++it) {
                    const std::vector<double> gjv =
                        sample_trilinear(gj.vol, std::span<const double>(q, 3));
                    q[0] = tx - gjv[0];
                    q[1] = ty - gjv[1];
                    q[2] = tz - gjv[2];
                }
                out.data[v] = q[0] - x;
                out.data[v + plane] = q[1] - y;
                out.data[v + 2 * plane] = q[2] - z;
            }
    return DisplacementField(std::move(out));
}

} // namespace

DisplacementField random_smooth_field(const std::array<int, 3>& dims, double sigma,
                                      double magnitude, std::mt19937_64& rng)
{
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (double& v : kernel)
        v /= ksum;

    // zero boundary conditions: the field tapers towards the border, which
    // keeps the warp inside the domain and the displacement in the interior
    auto smooth_axis_zero = [&](Volume& vol, int axis) {
        Volume src = vol;
        for (int c = 0; c < 3; ++c)
            for (int z = 0; z < dims[2]; ++z)
                for (int y = 0; y < dims[1]; ++y)
                    for (int x = 0; x < dims[0]; ++x) {
                        double acc = 0.0;
                        for (int o = -radius; o <= radius; ++o) {
                            int p[3] = {x, y, z};
                            p[axis] += o;
                            if (p[axis] < 0 || p[axis] >= dims[axis])
                                continue;
                            acc += kernel[o + radius] * src.at(p[0], p[1], p[2], c);
                        }
                        vol.at(x, y, z, c) = acc;
                    }
    };

    for (int attempt = 0; attempt < 100; ++attempt) {
        Volume smooth(dims, 3);
        for (double& v : smooth.data)
            v = gauss(rng);
        for (int axis = 0; axis < 3; ++axis)
            smooth_axis_zero(smooth, axis);

        // magnitude sets the RMS displacement norm over the central half-box,
        // i.e. the typical displacement where the content lives
        const std::size_t plane = smooth.voxel_count();
        double ms = 0.0;
        std::size_t count = 0;
        for (int z = dims[2] / 4; z < dims[2] - dims[2] / 4; ++z)
            for (int y = dims[1] / 4; y < dims[1] - dims[1] / 4; ++y)
                for (int x = dims[0] / 4; x < dims[0] - dims[0] / 4; ++x) {
                    const std::size_t v = smooth.index(x, y, z);
                    for (int a = 0; a < 3; ++a)
                        ms += smooth.data[v + a * plane] * smooth.data[v + a * plane];
                    ++count;
                }
        ms = std::sqrt(ms / static_cast<double>(count));
        if (ms > 0.0 && magnitude > 0.0) {
            const double scale = magnitude / ms;
            for (double& v : smooth.data)
                v *= scale;
        } else {
            std::fill(smooth.data.begin(), smooth.data.end(), 0.0);
        }
        DisplacementField field(std::move(smooth));
        if (jacobian_positive(field))
            return field;
    }
    throw NumericError("random_smooth_field: rejection limit (100) exceeded; the deformation "
                       "magnitude is too large for the requested smoothness");
}

std::vector<SynthPair> synth_generate(const SyntheticSpec& spec, int count)
{
    spec.validate();
    if (count < 0)
        throw DataError("synth_generate: count must be >= 0");
    std::mt19937_64 rng(spec.seed);
    std::vector<SynthPair> out;

    if (spec.mode == SyntheticSpec::Mode::paired) {
        out.reserve(count);
        for (int i = 0; i < count; ++i) {
            Phantom ph = make_phantom(spec, rng);
            DisplacementField g = random_smooth_field(spec.dims, spec.sigma_d, spec.magnitude, rng);
            SynthPair pair;
            pair.moving = add_noise(warp(ph.image, g), spec.noise, rng);
            pair.moving_labels = warp_labels(ph.labels, g);
            pair.fixed = add_noise(ph.image, spec.noise, rng);
            pair.fixed_labels = std::move(ph.labels);
            pair.gt_field = std::move(g);
            out.push_back(std::move(pair));
        }
        return out;
    }

    // population mode: `count` volumes from one template, all ordered pairs
    const int volumes = count;
    Phantom tmpl = make_phantom(spec, rng);
    std::vector<Volume> imgs(volumes);
    std::vector<LabelVolume> labs(volumes);
    std::vector<DisplacementField> fields(volumes);
    for (int i = 0; i < volumes; ++i) {
        fields[i] = random_smooth_field(spec.dims, spec.sigma_d, spec.magnitude, rng);
        imgs[i] = add_noise(warp(tmpl.image, fields[i]), spec.noise, rng);
        labs[i] = warp_labels(tmpl.labels, fields[i]);
    }
    out.reserve(static_cast<std::size_t>(volumes) * std::max(volumes - 1, 0));
    for (int i = 0; i < volumes; ++i)
        for (int j = 0; j < volumes; ++j) {
            if (i == j)
                continue;
            SynthPair pair;
            pair.fixed = imgs[i];
            pair.fixed_labels = labs[i];
            pair.moving = imgs[j];
            pair.moving_labels = labs[j];
            pair.gt_field = relative_field(fields[i], fields[j]);
            out.push_back(std::move(pair));
        }
    return out;
}

void write_pair_dir(const SynthPair& pair, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
    write_vol3(pair.fixed, dir / "fixed.vol3");
    write_vol3(pair.moving, dir / "moving.vol3");
    write_lab3(pair.fixed_labels, dir / "fixed.lab3");
    write_lab3(pair.moving_labels, dir / "moving.lab3");
    write_vol3(pair.gt_field.vol, dir / "gt_field.vol3");
}

SynthPair read_pair_dir(const std::filesystem::path& dir)
{
    SynthPair pair;
    pair.fixed = read_vol3(dir / "fixed.vol3");
    pair.moving = read_vol3(dir / "moving.vol3");
    pair.fixed_labels = read_lab3(dir / "fixed.lab3");
    pair.moving_labels = read_lab3(dir / "moving.lab3");
    pair.gt_field = DisplacementField(read_vol3(dir / "gt_field.vol3"));
    return pair;
}

std::vector<std::filesystem::path> list_pair_dirs(const std::filesystem::path& dataDir)
{
    if (!std::filesystem::is_directory(dataDir))
        throw DataError("dataset directory does not exist: " + dataDir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dataDir))
        if (e.is_directory() && e.path().filename().string().starts_with("pair"))
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace pdreg
