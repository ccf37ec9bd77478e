#pragma once

#include <charconv>
#include <string>

namespace plsprune {

/// Shortest decimal form that parses back to the same double; keeps
/// emitted CSV/JSON numerics lossless and reproducible.
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace plsprune
