#pragma once

#include <agepro/error.hpp>

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace agepro {

/// Facial sub-regions reconstructed independently.
enum class Region { eyes = 0, nose = 1, mouth = 2, skin = 3 };

inline constexpr std::size_t kRegionCount = 4;
inline constexpr std::array<Region, kRegionCount> kRegions = {Region::eyes, Region::nose, Region::mouth, Region::skin};

inline std::string to_string(Region r) {
    switch (r) {
        case Region::eyes: return "eyes";
        case Region::nose: return "nose";
        case Region::mouth: return "mouth";
        case Region::skin: return "skin";
    }
    return "?";
}

inline Region parse_region(std::string_view s) {
    for (auto r : kRegions)
        if (to_string(r) == s) return r;
    throw ConfigError("unknown region '" + std::string(s) + "'");
}

}  // namespace agepro
