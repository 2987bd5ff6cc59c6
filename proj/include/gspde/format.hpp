#pragma once

#include <cstdio>
#include <string>

namespace gspde {

/// Round-trip decimal representation used in every CSV artifact.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace gspde
