#pragma once

// Umbrella header for the maximum-entropy weighted least squares toolkit.

#include "mewls/certificates.hpp"
#include "mewls/continuation.hpp"
#include "mewls/datagen.hpp"
#include "mewls/diagnostics.hpp"
#include "mewls/errors.hpp"
#include "mewls/model.hpp"
#include "mewls/numerics.hpp"

namespace mewls {

inline constexpr const char* version = "0.1.0";

}  // namespace mewls
