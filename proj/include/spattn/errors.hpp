// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace spattn {

// Dimension/shape disagreement between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf where a finite value is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing or inconsistent saved state (e.g. backward without forward).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mask shape the block-banded kernel cannot handle.
struct UnsupportedMaskError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

} // namespace spattn
