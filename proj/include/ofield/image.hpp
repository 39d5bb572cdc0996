#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofield {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Interleaved float image, row-major, channels innermost. Values are
/// nominally in [0,1] except for depth maps.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    float& at(int row, int col, int ch = 0) {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
    float at(int row, int col, int ch = 0) const {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
    std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    bool empty() const { return data.empty(); }
};

/// Binary per-pixel mask.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int w, int h, uint8_t fill = 0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    uint8_t& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
    uint8_t at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
    std::size_t count() const;
};

// PNG. Color images are written as 8-bit RGB; single-channel as 8- or 16-bit gray.
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8);
Image read_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

// Portable float map, single channel ("Pf") or RGB ("PF"), little-endian,
// bottom-to-top scanlines as the format requires.
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

/// Rounds every value to the nearest multiple of 1/levels after clamping to [0,1].
Image quantize(const Image& image, int levels = 255);

}  // namespace ofield
