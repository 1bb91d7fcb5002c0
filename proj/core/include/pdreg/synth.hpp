#pragma once

#include <filesystem>
#include <random>

#include "pdreg/volume.hpp"

namespace pdreg {

/// Phantom generator configuration. "paired" mode emits independent
/// (fixed, moving = warp(fixed, field)) pairs with exact ground truth;
/// "population" mode deforms one shared template into `count` volumes and
/// emits every ordered volume pair, so pairs share fixed images and the
/// ground-truth field is composed from the two template deformations.
struct SyntheticSpec {
    std::array<int, 3> dims{32, 32, 32};
    int organs = 4;
    std::array<double, 2> radius_range{4.0, 9.0};
    double sigma_d = 8.0;   // deformation smoothness (voxels)
    double magnitude = 2.5; // RMS displacement over the central half-box (voxels)
    double noise = 0.02;    // additive intensity noise level
    double texture = 0.04;  // amplitude of smooth template texture
    std::uint64_t seed = 1;
    enum class Mode { paired, population };
    Mode mode = Mode::paired;

    void validate() const;
};

SyntheticSpec synth_spec_from_json_text(const std::string& text);
SyntheticSpec read_synth_spec(const std::filesystem::path& path);
std::string synth_spec_to_json(const SyntheticSpec& spec);

struct SynthPair {
    Volume fixed;
    Volume moving;
    LabelVolume fixed_labels;
    LabelVolume moving_labels;
    DisplacementField gt_field; // field used to synthesize moving from fixed
};

/// Deterministic per seed. Fields are rejection-resampled (up to 100 tries)
/// until the deformation Jacobian is positive everywhere.
std::vector<SynthPair> synth_generate(const SyntheticSpec& spec, int count);

/// Smooth random displacement field: Gaussian-smoothed white noise rescaled
/// to the requested max-norm, Jacobian-positive.
DisplacementField random_smooth_field(const std::array<int, 3>& dims, double sigma,
                                      double magnitude, std::mt19937_64& rng);

// Dataset directory layout:
//   <dir>/pairNNN/{fixed.vol3, moving.vol3, fixed.lab3, moving.lab3, gt_field.vol3}
void write_pair_dir(const SynthPair& pair, const std::filesystem::path& dir);
SynthPair read_pair_dir(const std::filesystem::path& dir);
std::vector<std::filesystem::path> list_pair_dirs(const std::filesystem::path& dataDir);

} // namespace pdreg
