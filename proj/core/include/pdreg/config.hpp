#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdreg/features.hpp"
#include "pdreg/interp.hpp"
#include "pdreg/matching.hpp"
#include "pdreg/metrics.hpp"
#include "pdreg/mrf.hpp"
#include "pdreg/points.hpp"

namespace pdreg {

enum class SelectorKind { grid, foerstner, predicted };

std::string to_string(SelectorKind k);
SelectorKind selector_kind_from_string(const std::string& s);

struct PredictorConfig {
    double spacing = 8.0;             // rest-grid spacing; must be a power of two
    double margin = 4.0;              // rest-grid margin
    double cap = 0.2;                 // displacement cap as a fraction of each extent
    int heads = 1;                    // number of predicted displacement fields
    std::vector<int> widths{16, 16, 16}; // encoder channels per stride-2 stage

    int stages() const;
    void validate(const std::array<int, 3>& dims) const;
};

/// Full pipeline configuration. The JSON document mirrors this struct
/// field for field; CLI flags override individual entries.
struct RegistrationConfig {
    FeatureKind features = FeatureKind::mind;
    SelectorKind selector = SelectorKind::grid;
    SearchRegion search;
    MrfConfig mrf;
    InterpConfig interp;
    PredictorConfig predictor;
    GridSpec grid;
    FoerstnerConfig foerstner;
    MindConfig mind;
    LnccConfig lncc;
    double lambda_reg = 0.1;
    std::uint64_t seed = 0;

    bool needs_params() const
    {
        return features == FeatureKind::learned || selector == SelectorKind::predicted;
    }
    void validate() const;
};

RegistrationConfig config_from_json_text(const std::string& text);
RegistrationConfig read_config_json(const std::filesystem::path& path);
std::string config_to_json(const RegistrationConfig& cfg);

} // namespace pdreg
