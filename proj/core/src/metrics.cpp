#include "pdreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

namespace pdreg {

void LnccConfig::validate() const
{
    if (radius < 1)
        throw DataError("lncc: radius must be >= 1");
    if (eps <= 0.0)
        throw DataError("lncc: eps must be > 0");
}

std::int64_t lncc_site_count(const std::array<int, 3>& dims, const LnccConfig& cfg)
{
    std::int64_t n = 1;
    for (int a = 0; a < 3; ++a) {
        const int e = dims[a] - 2 * cfg.radius;
        if (e <= 0)
            throw DataError("lncc: image extent " + std::to_string(dims[a]) +
                            " too small for radius " + std::to_string(cfg.radius));
        n *= e;
    }
    return n;
}

namespace {

ad::NodeId as_volume_node(ad::Tape& tape, ad::NodeId x)
{
    const ad::Tensor& v = tape.value(x);
    if (v.rank() == 4) {
        if (v.shape[0] != 1)
            throw DataError("lncc: expected a single-channel volume, got " +
                            ad::shape_str(v.shape));
        return x;
    }
    if (v.rank() == 3)
        return ad::reshape(tape, x, {1, v.shape[0], v.shape[1], v.shape[2]});
    throw DataError("lncc: expected rank 3 or 4, got " + ad::shape_str(v.shape));
}

} // namespace

ad::NodeId lncc_node(ad::Tape& tape, ad::NodeId a, ad::NodeId b, const LnccConfig& cfg)
{
    using namespace ad;
    cfg.validate();
    a = as_volume_node(tape, a);
    b = as_volume_node(tape, b);
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (!same_shape(av, bv))
        throw DataError("lncc: shape mismatch " + shape_str(av.shape) + " vs " +
                        shape_str(bv.shape));
    const int w = 2 * cfg.radius + 1;
    const double win = static_cast<double>(cfg.window());
    const NodeId ones = tape.leaf(Tensor::full({1, 1, w, w, w}, 1.0));

    const NodeId sa = conv3d(tape, a, ones, std::nullopt, 1, 0);
    const NodeId sb = conv3d(tape, b, ones, std::nullopt, 1, 0);
    const NodeId ma = scalar_mul(tape, sa, 1.0 / win);
    const NodeId mb = scalar_mul(tape, sb, 1.0 / win);
    const NodeId sab = conv3d(tape, mul(tape, a, b), ones, std::nullopt, 1, 0);
    const NodeId saa = conv3d(tape, mul(tape, a, a), ones, std::nullopt, 1, 0);
    const NodeId sbb = conv3d(tape, mul(tape, b, b), ones, std::nullopt, 1, 0);

    const NodeId cross = sub(tape, sab, scalar_mul(tape, mul(tape, ma, mb), win));
    const NodeId va = sub(tape, saa, scalar_mul(tape, mul(tape, ma, ma), win));
    const NodeId vb = sub(tape, sbb, scalar_mul(tape, mul(tape, mb, mb), win));
    const NodeId denom = sqrt(tape, max_scalar(tape, mul(tape, va, vb), cfg.eps));
    return sum(tape, divide(tape, cross, denom));
}

double lncc(const Volume& a, const Volume& b, const LnccConfig& cfg)
{
    if (a.channels != 1 || b.channels != 1)
        throw DataError("lncc expects single-channel volumes");
    if (a.dims != b.dims)
        throw DataError("lncc: volume dims mismatch");
    ad::Tape tape;
    const ad::NodeId out = lncc_node(tape, tape.leaf(ad::volume_to_tensor(a)),
                                     tape.leaf(ad::volume_to_tensor(b)), cfg);
    return tape.value(out).value();
}

std::int64_t bending_site_count(const std::array<int, 3>& dims)
{
    std::int64_t n = 1;
    for (int a = 0; a < 3; ++a)
        n *= std::max(dims[a] - 2, 0);
    return n;
}

ad::NodeId bending_energy_node(ad::Tape& tape, ad::NodeId field)
{
    using namespace ad;
    const Tensor& fv = tape.value(field);
    if (fv.rank() != 4 || fv.shape[0] != 3)
        throw DataError("bending_energy: field must be (3,Z,Y,X), got " + shape_str(fv.shape));
    const int Z = fv.shape[1], Y = fv.shape[2], X = fv.shape[3];
    if (Z < 3 || Y < 3 || X < 3)
        return scalar_mul(tape, sum(tape, field), 0.0);
    const std::vector<int> extent{3, Z - 2, Y - 2, X - 2};
    // tensor-axis offset of a step along image axis a (x,y,z)
    const int axdim[3] = {3, 2, 1};

    const NodeId base = slice(tape, field, {0, 0, 0, 0}, extent);
    NodeId total = -1;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            std::vector<int> oi{0, 0, 0, 0}, oj{0, 0, 0, 0}, oij{0, 0, 0, 0};
            oi[axdim[i]] += 1;
            oj[axdim[j]] += 1;
            oij[axdim[i]] += 1;
            oij[axdim[j]] += 1;
            const NodeId d = add(tape,
                                 sub(tape,
                                     sub(tape, slice(tape, field, oij, extent),
                                         slice(tape, field, oi, extent)),
                                     slice(tape, field, oj, extent)),
                                 base);
            const NodeId term = sum(tape, mul(tape, d, d));
            total = total < 0 ? term : add(tape, total, term);
        }
    return total;
}

double bending_energy(const DisplacementField& field)
{
    ad::Tape tape;
    const ad::NodeId out =
        bending_energy_node(tape, tape.leaf(ad::volume_to_tensor(field.vol)));
    return tape.value(out).value();
}

double hessian_norm_mean(const DisplacementField& field)
{
    const std::int64_t sites = bending_site_count(field.vol.dims);
    if (sites == 0)
        return 0.0;
    return bending_energy(field) / static_cast<double>(sites);
}

double dice(const LabelVolume& a, const LabelVolume& b, std::uint16_t label)
{
    if (a.dims != b.dims)
        throw DataError("dice: label volume dims mismatch");
    std::int64_t na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool ia = a.data[i] == label;
        const bool ib = b.data[i] == label;
        na += ia;
        nb += ib;
        ni += ia && ib;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

JacobianStats std_log_jacobian(const DisplacementField& field)
{
    const auto& d = field.vol.dims;
    if (d[0] < 3 || d[1] < 3 || d[2] < 3)
        throw NumericError("std_log_jacobian: no interior voxels");
    std::vector<double> logs;
    std::int64_t nonpos = 0, total = 0;
    for (int z = 1; z < d[2] - 1; ++z)
        for (int y = 1; y < d[1] - 1; ++y)
            for (int x = 1; x < d[0] - 1; ++x) {
                double J[3][3];
                for (int a = 0; a < 3; ++a) {
                    J[a][0] = 0.5 * (field.comp(x + 1, y, z, a) - field.comp(x - 1, y, z, a));
                    J[a][1] = 0.5 * (field.comp(x, y + 1, z, a) - field.comp(x, y - 1, z, a));
                    J[a][2] = 0.5 * (field.comp(x, y, z + 1, a) - field.comp(x, y, z - 1, a));
                    J[a][a] += 1.0; // phi = Id + psi
                }
                const double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                   J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                   J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
                ++total;
                if (det > 0.0)
                    logs.push_back(std::log(det));
                else
                    ++nonpos;
            }
    if (logs.empty())
        throw NumericError("std_log_jacobian: no site has positive determinant");
    double mean = 0.0;
    for (double v : logs)
        mean += v;
    mean /= static_cast<double>(logs.size());
    double var = 0.0;
    for (double v : logs)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(logs.size());
    JacobianStats s;
    s.std_log = std::sqrt(var);
    s.nonpositive_fraction = static_cast<double>(nonpos) / static_cast<double>(total);
    return s;
}

double solve_assignment(const std::vector<double>& cost, int n)
{
    if (n == 0)
        return 0.0;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> match(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j)
                if (!used[j]) {
                    const double cur =
                        cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if (cur < minv[j]) {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if (minv[j] < delta) {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            for (int j = 0; j <= n; ++j)
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }
    double total = 0.0;
    for (int j = 1; j <= n; ++j)
        total += cost[static_cast<std::size_t>(match[j] - 1) * n + (j - 1)];
    return total;
}

double w2_pointsets(const DrivingPointSet& a, const DrivingPointSet& b)
{
    const int n = a.count();
    if (n != b.count())
        throw DataError("w2_pointsets: size mismatch " + std::to_string(n) + " vs " +
                        std::to_string(b.count()));
    if (n == 0)
        return 0.0;
    std::vector<double> cost(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double dd = a.points[i][k] - b.points[j][k];
                d2 += dd * dd;
            }
            cost[static_cast<std::size_t>(i) * n + j] = d2;
        }
    return std::sqrt(solve_assignment(cost, n) / static_cast<double>(n));
}

MetricsReport evaluate_metrics(const LabelVolume& fixed_labels,
                               const LabelVolume& warped_moving_labels,
                               const DisplacementField& field)
{
    MetricsReport r;
    std::set<std::uint16_t> labels;
    for (auto l : fixed_labels.labels())
        labels.insert(l);
    for (auto l : warped_moving_labels.labels())
        labels.insert(l);
    r.labels.assign(labels.begin(), labels.end());
    double acc = 0.0;
    for (auto l : r.labels) {
        r.dice_per_label.push_back(dice(fixed_labels, warped_moving_labels, l));
        acc += r.dice_per_label.back();
    }
    r.dice_mean = r.labels.empty() ? 1.0 : acc / static_cast<double>(r.labels.size());
    r.hessian_mean = hessian_norm_mean(field);
    const JacobianStats js = std_log_jacobian(field);
    r.std_log_jacobian = js.std_log;
    r.nonpositive_jacobian_fraction = js.nonpositive_fraction;
    return r;
}

std::string metrics_to_json(const MetricsReport& r)
{
    nlohmann::json j;
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t i = 0; i < r.labels.size(); ++i)
        per[std::to_string(r.labels[i])] = r.dice_per_label[i];
    j["dice_per_label"] = per;
    j["dice_mean"] = r.dice_mean;
    j["hessian_mean"] = r.hessian_mean;
    j["std_log_jacobian"] = r.std_log_jacobian;
    j["nonpositive_jacobian_fraction"] = r.nonpositive_jacobian_fraction;
    j["w2"] = r.w2 ? nlohmann::json(*r.w2) : nlohmann::json(nullptr);
    return j.dump(2) + "\n";
}

void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path)
{
    std::ofstream os(path);
    if (!os)
        throw DataError("cannot open " + path.string() + " for writing");
    os << metrics_to_json(r);
    if (!os)
        throw DataError("write failed for " + path.string());
}

MetricsReport read_metrics_json(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open " + path.string() + " for reading");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad metrics JSON in " + path.string() + ": " + e.what());
    }
    MetricsReport r;
    std::vector<std::pair<std::uint16_t, double>> pairs;
    for (const auto& [key, val] : j.at("dice_per_label").items())
        pairs.emplace_back(static_cast<std::uint16_t>(std::stoi(key)), val.get<double>());
    std::sort(pairs.begin(), pairs.end());
    for (const auto& [l, v] : pairs) {
        r.labels.push_back(l);
        r.dice_per_label.push_back(v);
    }
    r.dice_mean = j.at("dice_mean").get<double>();
    r.hessian_mean = j.at("hessian_mean").get<double>();
    r.std_log_jacobian = j.at("std_log_jacobian").get<double>();
    r.nonpositive_jacobian_fraction = j.at("nonpositive_jacobian_fraction").get<double>();
    if (j.contains("w2") && !j.at("w2").is_null())
        r.w2 = j.at("w2").get<double>();
    return r;
}

} // namespace pdreg
