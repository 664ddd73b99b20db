#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dropreg {

// Pixels carrying this value are excluded from loss and metrics.
inline constexpr std::uint8_t kIgnoreLabel = 255;

// Per-pixel class-index grid for one image; ground truth and predictions.
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> values;  // class id in [0,K) or kIgnoreLabel

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
        : height(h), width(w), values(h * w, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

    bool operator==(const LabelMap&) const = default;
};

}  // namespace dropreg
