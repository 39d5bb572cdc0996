#pragma once

// Dual-screen keying and trimap generation.

#include "ofield/image.hpp"

#include <array>

namespace ofield {

struct KeyParams {
    std::array<double, 3> green{0.0, 1.0, 0.0};
    double green_threshold = 0.15;  // chroma distance
    double white_threshold = 0.92;  // min channel
};

/// 1 = foreground. Background iff the luminance-normalized color is within
/// the green threshold of the reference, or every channel exceeds the white threshold.
Mask key_out(const Image& image, const KeyParams& params = {});

enum class TrimapLabel : uint8_t { kBackground = 0, kUnknown = 128, kForeground = 255 };

struct Trimap {
    int width = 0, height = 0;
    std::vector<TrimapLabel> labels;

    TrimapLabel at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
    std::size_t count(TrimapLabel l) const;
};

/// Foreground = erode(mask), background = not dilate(mask), unknown otherwise.
Trimap make_trimap(const Mask& mask, int erode_radius, int dilate_radius);

/// Gray PNG with 0/128/255 coding.
void write_trimap_png(const std::filesystem::path& path, const Trimap& trimap);

/// α·F + (1−α)·screen.
Image composite_over(const Image& foreground, const Image& alpha, const std::array<double, 3>& screen);

}  // namespace ofield
