#pragma once

#include <cstdio>
#include <string>

namespace olor {

/// Shortest round-trip decimal rendering used by every CSV writer, so equal
/// doubles always serialize to equal bytes.
inline std::string format_double(double value) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

}  // namespace olor
