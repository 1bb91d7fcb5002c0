#pragma once

#include <stdexcept>
#include <string>

namespace pdreg {

// File / format / shape problems: CLI maps these to exit code 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Diverging or degenerate numerics: CLI maps these to exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace pdreg
