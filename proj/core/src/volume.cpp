#include "pdreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace pdreg {

namespace {

void check_dims(const std::array<int, 3>& d, int c)
{
    if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0)
        throw DataError("volume dims must be positive, got " + std::to_string(d[0]) + "x" +
                        std::to_string(d[1]) + "x" + std::to_string(d[2]));
    if (c <= 0)
        throw DataError("volume channels must be positive, got " + std::to_string(c));
}

std::string shape_str(const std::array<int, 3>& d, int c)
{
    return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]) +
           "x" + std::to_string(c);
}

} // namespace

Volume::Volume(std::array<int, 3> d, int c) : dims(d), channels(c)
{
    check_dims(d, c);
    data.assign(size(), 0.0);
}

Volume::Volume(std::array<int, 3> d, int c, std::vector<double> values)
    : dims(d), channels(c), data(std::move(values))
{
    check_dims(d, c);
    if (data.size() != size())
        throw DataError("volume data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(d, c));
    for (double v : data)
        if (!std::isfinite(v))
            throw DataError("volume contains non-finite values");
}

DisplacementField::DisplacementField(Volume v) : vol(std::move(v))
{
    if (vol.channels != 3)
        throw DataError("displacement field needs 3 channels, got " +
                        std::to_string(vol.channels));
}

LabelVolume::LabelVolume(std::array<int, 3> d) : dims(d)
{
    check_dims(d, 1);
    data.assign(voxel_count(), 0);
}

LabelVolume::LabelVolume(std::array<int, 3> d, std::vector<std::uint16_t> values)
    : dims(d), data(std::move(values))
{
    check_dims(d, 1);
    if (data.size() != voxel_count())
        throw DataError("label data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(d, 1));
}

std::vector<std::uint16_t> LabelVolume::labels() const
{
    std::set<std::uint16_t> s;
    for (auto v : data)
        if (v != 0)
            s.insert(v);
    return {s.begin(), s.end()};
}

TrilinearStencil trilinear_stencil(const std::array<int, 3>& dims, double x, double y, double z)
{
    const double q[3] = {x, y, z};
    int base[3];
    double f[3];
    double df[3]; // d(clamped coord)/d(raw coord): 0 where clamped
    for (int a = 0; a < 3; ++a) {
        const int n = dims[a];
        double c = q[a];
        df[a] = 1.0;
        if (c <= 0.0) {
            c = 0.0;
            df[a] = q[a] < 0.0 ? 0.0 : 1.0;
        } else if (c >= n - 1) {
            c = n - 1;
            df[a] = q[a] > n - 1 ? 0.0 : 1.0;
        }
        if (n == 1) {
            base[a] = 0;
            f[a] = 0.0;
            df[a] = 0.0;
        } else {
            base[a] = std::min(static_cast<int>(c), n - 2);
            f[a] = c - base[a];
        }
    }

    TrilinearStencil s;
    const std::size_t sx = 1;
    const std::size_t sy = static_cast<std::size_t>(dims[0]);
    const std::size_t sz = static_cast<std::size_t>(dims[0]) * dims[1];
    const std::size_t org = base[0] * sx + base[1] * sy + base[2] * sz;
    for (int i = 0; i < 8; ++i) {
        const int bx = i & 1, by = (i >> 1) & 1, bz = (i >> 2) & 1;
        std::size_t idx = org;
        if (bx && dims[0] > 1) idx += sx;
        if (by && dims[1] > 1) idx += sy;
        if (bz && dims[2] > 1) idx += sz;
        s.corner[i] = idx;
        const double wx = bx ? f[0] : 1.0 - f[0];
        const double wy = by ? f[1] : 1.0 - f[1];
        const double wz = bz ? f[2] : 1.0 - f[2];
        s.w[i] = wx * wy * wz;
        s.dw[0][i] = (bx ? 1.0 : -1.0) * wy * wz * df[0];
        s.dw[1][i] = (by ? 1.0 : -1.0) * wx * wz * df[1];
        s.dw[2][i] = (bz ? 1.0 : -1.0) * wx * wy * df[2];
    }
    return s;
}

std::vector<double> sample_trilinear(const Volume& vol, std::span<const double> points)
{
    if (points.size() % 3 != 0)
        throw DataError("point list length must be a multiple of 3");
    const std::size_t npts = points.size() / 3;
    const std::size_t plane = vol.voxel_count();
    std::vector<double> out(npts * vol.channels, 0.0);
    for (std::size_t p = 0; p < npts; ++p) {
        const TrilinearStencil s =
            trilinear_stencil(vol.dims, points[3 * p], points[3 * p + 1], points[3 * p + 2]);
        for (int c = 0; c < vol.channels; ++c) {
            const double* ch = vol.data.data() + plane * c;
            double acc = 0.0;
            for (int i = 0; i < 8; ++i)
                acc += s.w[i] * ch[s.corner[i]];
            out[p * vol.channels + c] = acc;
        }
    }
    return out;
}

Volume warp(const Volume& moving, const DisplacementField& field)
{
    if (!moving.same_grid(field.vol))
        throw DataError("warp: moving grid " + shape_str(moving.dims, moving.channels) +
                        " does not match field grid " + shape_str(field.vol.dims, 3));
    Volume out(moving.dims, moving.channels);
    const std::size_t plane = moving.voxel_count();
    std::size_t v = 0;
    for (int z = 0; z < moving.dims[2]; ++z)
        for (int y = 0; y < moving.dims[1]; ++y)
            for (int x = 0; x < moving.dims[0]; ++x, ++v) {
                const TrilinearStencil s =
                    trilinear_stencil(moving.dims, x + field.vol.data[v],
                                      y + field.vol.data[v + plane],
                                      z + field.vol.data[v + 2 * plane]);
                for (int c = 0; c < moving.channels; ++c) {
                    const double* ch = moving.data.data() + plane * c;
                    double acc = 0.0;
                    for (int i = 0; i < 8; ++i)
                        acc += s.w[i] * ch[s.corner[i]];
                    out.data[v + plane * c] = acc;
                }
            }
    return out;
}

LabelVolume warp_labels(const LabelVolume& moving, const DisplacementField& field)
{
    if (moving.dims != field.vol.dims)
        throw DataError("warp_labels: label grid " + shape_str(moving.dims, 1) +
                        " does not match field grid " + shape_str(field.vol.dims, 3));
    LabelVolume out(moving.dims);
    const std::size_t plane = moving.voxel_count();
    std::size_t v = 0;
    for (int z = 0; z < moving.dims[2]; ++z)
        for (int y = 0; y < moving.dims[1]; ++y)
            for (int x = 0; x < moving.dims[0]; ++x, ++v) {
                const int sx = std::clamp(
                    static_cast<int>(std::lround(x + field.vol.data[v])), 0, moving.dims[0] - 1);
                const int sy = std::clamp(
                    static_cast<int>(std::lround(y + field.vol.data[v + plane])), 0,
                    moving.dims[1] - 1);
                const int sz = std::clamp(
                    static_cast<int>(std::lround(z + field.vol.data[v + 2 * plane])), 0,
                    moving.dims[2] - 1);
                out.data[v] = moving.at(sx, sy, sz);
            }
    return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma)
{
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k)
        v /= sum;
    return k;
}

// 1D pass along `axis` with border replication.
void smooth_axis(Volume& vol, int axis, const std::vector<double>& kernel)
{
    const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
    const auto& d = vol.dims;
    Volume tmp = vol;
    for (int c = 0; c < vol.channels; ++c)
        for (int z = 0; z < d[2]; ++z)
            for (int y = 0; y < d[1]; ++y)
                for (int x = 0; x < d[0]; ++x) {
                    double acc = 0.0;
                    for (int o = -radius; o <= radius; ++o) {
                        int p[3] = {x, y, z};
                        p[axis] = std::clamp(p[axis] + o, 0, d[axis] - 1);
                        acc += kernel[o + radius] * tmp.at(p[0], p[1], p[2], c);
                    }
                    vol.at(x, y, z, c) = acc;
                }
}

} // namespace

Volume gaussian_smooth(const Volume& vol, double sigma)
{
    if (sigma <= 0.0)
        return vol;
    const auto kernel = gaussian_kernel(sigma);
    Volume out = vol;
    for (int axis = 0; axis < 3; ++axis)
        smooth_axis(out, axis, kernel);
    return out;
}

Volume normalize_intensity(const Volume& vol)
{
    if (vol.channels != 1)
        throw DataError("normalize_intensity expects a single-channel volume");
    const auto [mn, mx] = std::minmax_element(vol.data.begin(), vol.data.end());
    Volume out(vol.dims, 1);
    if (*mx > *mn) {
        const double scale = 1.0 / (*mx - *mn);
        for (std::size_t i = 0; i < vol.data.size(); ++i)
            out.data[i] = (vol.data[i] - *mn) * scale;
    }
    return out;
}

} // namespace pdreg
