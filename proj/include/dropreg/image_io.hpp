#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dropreg/labelmap.hpp"

namespace dropreg {

// Interleaved 8-bit image, channels 1 (gray) or 3 (RGB).
struct ImageU8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;  // row-major, interleaved

    ImageU8() = default;
    ImageU8(std::size_t h, std::size_t w, std::size_t c)
        : height(h), width(w), channels(c), pixels(h * w * c, 0) {}

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels[(y * width + x) * channels + c];
    }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
};

// Sniffs the format from the leading bytes: PPM (P6), PGM (P5), PNG, JPEG.
ImageU8 read_image(const std::string& path);

// Label maps come from PGM or PNG files; palette PNGs yield the raw palette
// indices, not colors.
LabelMap read_label_image(const std::string& path);

void write_ppm(const std::string& path, const ImageU8& image);  // 3-channel
void write_pgm(const std::string& path, const ImageU8& image);  // 1-channel
void write_png(const std::string& path, const ImageU8& image);  // 1 or 3 channel

// Dispatches on the file extension: .png, .ppm (rgb), .pgm (gray).
void write_image(const std::string& path, const ImageU8& image);

}  // namespace dropreg
