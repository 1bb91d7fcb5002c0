#pragma once

#include <filesystem>

#include "pdreg/volume.hpp"

namespace pdreg {

// VOL3, little-endian: magic "VOL3", u32 version = 1, u32 nx, ny, nz,
// channels, then nx*ny*nz*channels IEEE-754 f32 values, x fastest,
// channel slowest. Values are stored at f32 precision.
void write_vol3(const Volume& vol, const std::filesystem::path& path);
Volume read_vol3(const std::filesystem::path& path);

// LAB3: same header with magic "LAB3", payload u16 labels.
void write_lab3(const LabelVolume& vol, const std::filesystem::path& path);
LabelVolume read_lab3(const std::filesystem::path& path);

} // namespace pdreg
