#include "pdreg/points.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace pdreg {

std::string to_string(PointProvenance p)
{
    switch (p) {
    case PointProvenance::grid: return "grid";
    case PointProvenance::foerstner: return "foerstner";
    case PointProvenance::predicted: return "predicted";
    }
    return "?";
}

PointProvenance provenance_from_string(const std::string& s)
{
    if (s == "grid") return PointProvenance::grid;
    if (s == "foerstner") return PointProvenance::foerstner;
    if (s == "predicted") return PointProvenance::predicted;
    throw DataError("unknown point provenance: " + s);
}

DrivingPointSet grid_points(const std::array<int, 3>& dims, double spacing, double margin)
{
    if (spacing < 1.0)
        throw DataError("grid spacing must be >= 1");
    if (margin < 0.0)
        throw DataError("grid margin must be >= 0");
    std::array<int, 3> counts;
    for (int a = 0; a < 3; ++a) {
        if (margin > dims[a] - 1)
            throw DataError("no grid vertex fits axis " + std::to_string(a) + " (extent " +
                            std::to_string(dims[a]) + ", margin " + std::to_string(margin) + ")");
        counts[a] = static_cast<int>(std::floor((dims[a] - 1 - margin) / spacing)) + 1;
    }
    DrivingPointSet set;
    set.provenance = PointProvenance::grid;
    set.rest_grid = RestGrid{{margin, margin, margin}, spacing, counts};
    set.points.reserve(static_cast<std::size_t>(counts[0]) * counts[1] * counts[2]);
    for (int ix = 0; ix < counts[0]; ++ix)
        for (int iy = 0; iy < counts[1]; ++iy)
            for (int iz = 0; iz < counts[2]; ++iz)
                set.points.push_back(
                    {margin + ix * spacing, margin + iy * spacing, margin + iz * spacing});
    return set;
}

Volume foerstner_score(const Volume& img, double sigma_t)
{
    if (img.channels != 1)
        throw DataError("foerstner_score expects a single-channel image");
    const auto& d = img.dims;

    // central differences with replicated border
    Volume gx(d, 1), gy(d, 1), gz(d, 1);
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x) {
                gx.at(x, y, z) = 0.5 * (img.at(std::min(x + 1, d[0] - 1), y, z) -
                                        img.at(std::max(x - 1, 0), y, z));
                gy.at(x, y, z) = 0.5 * (img.at(x, std::min(y + 1, d[1] - 1), z) -
                                        img.at(x, std::max(y - 1, 0), z));
                gz.at(x, y, z) = 0.5 * (img.at(x, y, std::min(z + 1, d[2] - 1)) -
                                        img.at(x, y, std::max(z - 1, 0)));
            }

    Volume sxx(d, 1), syy(d, 1), szz(d, 1), sxy(d, 1), sxz(d, 1), syz(d, 1);
    for (std::size_t i = 0; i < img.voxel_count(); ++i) {
        sxx.data[i] = gx.data[i] * gx.data[i];
        syy.data[i] = gy.data[i] * gy.data[i];
        szz.data[i] = gz.data[i] * gz.data[i];
        sxy.data[i] = gx.data[i] * gy.data[i];
        sxz.data[i] = gx.data[i] * gz.data[i];
        syz.data[i] = gy.data[i] * gz.data[i];
    }
    for (Volume* v : {&sxx, &syy, &szz, &sxy, &sxz, &syz})
        *v = gaussian_smooth(*v, sigma_t);

    Volume score(d, 1);
    for (std::size_t i = 0; i < img.voxel_count(); ++i) {
        const double trace = sxx.data[i] + syy.data[i] + szz.data[i];
        if (trace < 1e-12)
            continue;
        const double det =
            sxx.data[i] * (syy.data[i] * szz.data[i] - syz.data[i] * syz.data[i]) -
            sxy.data[i] * (sxy.data[i] * szz.data[i] - syz.data[i] * sxz.data[i]) +
            sxz.data[i] * (sxy.data[i] * syz.data[i] - syy.data[i] * sxz.data[i]);
        score.data[i] = det / trace;
    }
    return score;
}

DrivingPointSet foerstner_points(const Volume& img, double sigma_t, double nms_radius, int count,
                                 const std::optional<GridSpec>& pad)
{
    if (count < 1)
        throw DataError("foerstner_points: count must be >= 1");
    if (static_cast<std::size_t>(count) > img.voxel_count())
        throw DataError("foerstner_points: count " + std::to_string(count) +
                        " exceeds voxel count " + std::to_string(img.voxel_count()));
    const Volume score = foerstner_score(img, sigma_t);
    const auto& d = img.dims;

    // strict-positive local maxima over the 26-neighbourhood; the two-voxel
    // border shell is excluded because one-sided differences fabricate
    // maxima there
    const int bm = 2;
    std::vector<std::size_t> cand;
    for (int z = bm; z < d[2] - bm; ++z)
        for (int y = bm; y < d[1] - bm; ++y)
            for (int x = bm; x < d[0] - bm; ++x) {
                const double s = score.at(x, y, z);
                if (s <= 0.0)
                    continue;
                bool isMax = true;
                for (int dz = -1; dz <= 1 && isMax; ++dz)
                    for (int dy = -1; dy <= 1 && isMax; ++dy)
                        for (int dx = -1; dx <= 1 && isMax; ++dx) {
                            if (!dx && !dy && !dz)
                                continue;
                            const int qx = x + dx, qy = y + dy, qz = z + dz;
                            if (qx < 0 || qy < 0 || qz < 0 || qx >= d[0] || qy >= d[1] ||
                                qz >= d[2])
                                continue;
                            if (score.at(qx, qy, qz) > s)
                                isMax = false;
                        }
                if (isMax)
                    cand.push_back(score.index(x, y, z));
            }
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
        if (score.data[a] != score.data[b])
            return score.data[a] > score.data[b];
        return a < b;
    });

    DrivingPointSet set;
    set.provenance = PointProvenance::foerstner;
    const double r2 = nms_radius * nms_radius;
    for (std::size_t idx : cand) {
        if (set.count() == count)
            break;
        const int x = static_cast<int>(idx % d[0]);
        const int y = static_cast<int>((idx / d[0]) % d[1]);
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(d[0]) * d[1]));
        bool ok = true;
        for (const auto& q : set.points) {
            const double dx = q[0] - x, dy = q[1] - y, dz = q[2] - z;
            if (dx * dx + dy * dy + dz * dz < r2) {
                ok = false;
                break;
            }
        }
        if (ok)
            set.points.push_back({static_cast<double>(x), static_cast<double>(y),
                                  static_cast<double>(z)});
    }

    if (set.count() < count) {
        GridSpec g = pad.value_or(GridSpec{std::max(1.0, nms_radius), 2.0});
        DrivingPointSet grid = grid_points(d, g.spacing, g.margin);
        for (const auto& p : grid.points) {
            if (set.count() == count)
                break;
            set.points.push_back(p);
        }
        if (set.count() < count) { // exhaust with the unit grid
            DrivingPointSet fine = grid_points(d, 1.0, 0.0);
            for (const auto& p : fine.points) {
                if (set.count() == count)
                    break;
                set.points.push_back(p);
            }
        }
    }
    return set;
}

void write_points_csv(const DrivingPointSet& set, const std::filesystem::path& path)
{
    std::ofstream os(path);
    if (!os)
        throw DataError("cannot open " + path.string() + " for writing");
    os << "# provenance=" << to_string(set.provenance) << "\n";
    if (set.rest_grid) {
        const RestGrid& g = *set.rest_grid;
        char buf[160];
        std::snprintf(buf, sizeof buf, "# rest_grid=%.6f,%.6f,%.6f,%.6f,%d,%d,%d\n",
                      g.origin[0], g.origin[1], g.origin[2], g.spacing, g.counts[0],
                      g.counts[1], g.counts[2]);
        os << buf;
    }
    os << "x,y,z\n";
    for (const auto& p : set.points) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", p[0], p[1], p[2]);
        os << buf;
    }
    if (!os)
        throw DataError("write failed for " + path.string());
}

DrivingPointSet read_points_csv(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open " + path.string() + " for reading");
    DrivingPointSet set;
    std::string line;
    bool sawHeader = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                continue;
            std::string key = line.substr(1, eq - 1);
            key.erase(0, key.find_first_not_of(' '));
            key.erase(key.find_last_not_of(' ') + 1);
            const std::string val = line.substr(eq + 1);
            if (key == "provenance") {
                set.provenance = provenance_from_string(val);
            } else if (key == "rest_grid") {
                RestGrid g;
                if (std::sscanf(val.c_str(), "%lf,%lf,%lf,%lf,%d,%d,%d", &g.origin[0],
                                &g.origin[1], &g.origin[2], &g.spacing, &g.counts[0],
                                &g.counts[1], &g.counts[2]) != 7)
                    throw DataError("bad rest_grid line in " + path.string());
                set.rest_grid = g;
            }
            continue;
        }
        if (!sawHeader) {
            if (line != "x,y,z")
                throw DataError("bad points CSV header in " + path.string() + ": " + line);
            sawHeader = true;
            continue;
        }
        std::array<double, 3> p;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p[0], &p[1], &p[2]) != 3)
            throw DataError("bad point line in " + path.string() + ": " + line);
        set.points.push_back(p);
    }
    if (!sawHeader)
        throw DataError("missing x,y,z header in " + path.string());
    return set;
}

} // namespace pdreg
