#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pdreg/errors.hpp"

namespace pdreg {

/// Dense 3D grid of real values, possibly multi-channel.
/// Layout: x fastest, then y, then z, channel slowest, i.e. the flat index is
/// x + nx*(y + ny*(z + nz*c)). Images, feature maps and displacement fields
/// all use this container. Instances are immutable by convention once built.
struct Volume {
    std::array<int, 3> dims{0, 0, 0}; // nx, ny, nz
    int channels = 1;
    std::vector<double> data;

    Volume() = default;
    Volume(std::array<int, 3> d, int c); // zero-filled
    Volume(std::array<int, 3> d, int c, std::vector<double> values);

    std::size_t voxel_count() const
    {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t size() const { return voxel_count() * channels; }

    std::size_t index(int x, int y, int z, int c = 0) const
    {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(y) +
                    static_cast<std::size_t>(dims[1]) *
                        (static_cast<std::size_t>(z) +
                         static_cast<std::size_t>(dims[2]) * c));
    }
    double at(int x, int y, int z, int c = 0) const { return data[index(x, y, z, c)]; }
    double& at(int x, int y, int z, int c = 0) { return data[index(x, y, z, c)]; }

    bool same_grid(const Volume& o) const { return dims == o.dims; }
};

/// Dense displacement field: a 3-channel Volume, channel a holds the voxel
/// displacement along axis a.
struct DisplacementField {
    Volume vol;

    DisplacementField() = default;
    explicit DisplacementField(Volume v);

    const std::array<int, 3>& dims() const { return vol.dims; }
    double comp(int x, int y, int z, int axis) const { return vol.at(x, y, z, axis); }
};

/// Per-voxel integer labels, 0 = background.
struct LabelVolume {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<std::uint16_t> data;

    LabelVolume() = default;
    LabelVolume(std::array<int, 3> d);
    LabelVolume(std::array<int, 3> d, std::vector<std::uint16_t> values);

    std::size_t voxel_count() const
    {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(int x, int y, int z) const
    {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
    }
    std::uint16_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
    std::uint16_t& at(int x, int y, int z) { return data[index(x, y, z)]; }

    /// Sorted unique non-zero labels present in the volume.
    std::vector<std::uint16_t> labels() const;
};

/// 8-corner interpolation stencil at a (clamped) continuous coordinate.
/// corner[i] indexes channel 0 of the volume; bit 0/1/2 of i selects the
/// +x/+y/+z corner. dw[axis][i] is the weight derivative w.r.t. the raw
/// (unclamped) coordinate; it is zero along axes where the query fell
/// outside [0, n-1].
struct TrilinearStencil {
    std::array<std::size_t, 8> corner;
    std::array<double, 8> w;
    std::array<std::array<double, 8>, 3> dw;
};

TrilinearStencil trilinear_stencil(const std::array<int, 3>& dims, double x, double y, double z);

/// Samples `vol` at `points` (flattened x,y,z triples, voxel coordinates).
/// Out-of-bounds coordinates are clamped to the valid domain per axis.
/// Returns one c-vector per point, flattened point-major.
std::vector<double> sample_trilinear(const Volume& vol, std::span<const double> points);

/// output(p) = moving(p + field(p)), sampled trilinearly, border-replicated.
Volume warp(const Volume& moving, const DisplacementField& field);

/// Nearest-neighbour warp for categorical label volumes.
LabelVolume warp_labels(const LabelVolume& moving, const DisplacementField& field);

/// Separable Gaussian smoothing with border replication, kernel radius
/// ceil(3*sigma). sigma <= 0 returns the input unchanged.
Volume gaussian_smooth(const Volume& vol, double sigma);

/// Rescales a single-channel volume to [0,1]; constant volumes map to 0.
Volume normalize_intensity(const Volume& vol);

} // namespace pdreg
