#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace rsgen {

// The seven land-use / land-cover classes of the synthetic dataset. Label
// indices are positions in this array, which is sorted alphabetically.
inline constexpr std::array<std::string_view, 7> kLulcClasses = {
    "Bare Land",          "Crop Land",  "Cultivated Vegetation", "Natural Vegetation",
    "Snow Ice",           "Water Body", "Woody Vegetation",
};

inline constexpr int kNumLulcClasses = static_cast<int>(kLulcClasses.size());

inline std::optional<int> lulc_label_index(std::string_view name) {
    for (std::size_t i = 0; i < kLulcClasses.size(); ++i)
        if (kLulcClasses[i] == name) return static_cast<int>(i);
    return std::nullopt;
}

// Per-class image counts of the reference synthetic dataset (388 total).
inline std::map<std::string, int> default_lulc_counts() {
    return {
        {"Bare Land", 52},          {"Crop Land", 57},  {"Cultivated Vegetation", 54},
        {"Natural Vegetation", 54}, {"Snow Ice", 58},   {"Water Body", 52},
        {"Woody Vegetation", 61},
    };
}

}  // namespace rsgen
