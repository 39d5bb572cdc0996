#pragma once

// Masked image-quality metrics and the evaluation report.

#include "ofield/image.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofield {

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kPsnrCap = 99.0;

/// 10·log10(1/MSE) over masked pixels and all channels, capped at 99 dB.
double psnr(const Image& x, const Image& y, const Mask& mask);

/// Mean SSIM over masked window centers (11×11 Gaussian, σ = 1.5, valid
/// placement), averaged over channels.
double ssim(const Image& x, const Image& y, const Mask& mask);

/// Σ|α − α̃| over masked pixels, divided by 1000.
double sad(const Image& alpha, const Image& gt_alpha, const Mask& mask);

struct RegionMasks {
    Mask u, u_plus, u_minus;
};
/// Semi-transparent region {0 < α̃ < 1} (8-bit tolerance) and its dilation/erosion.
RegionMasks region_masks(const Image& gt_alpha, int radius = 5);

/// Pixels with α̃ above half an 8-bit step.
Mask foreground_mask(const Image& gt_alpha);

/// α·F + (1−α)·1 per pixel.
Image composite_over_white(const Image& foreground, const Image& alpha);

struct ViewMetrics {
    std::string name;
    double psnr_fg = 0, ssim_fg = 0, sad_alpha = 0, psnr_alpha = 0;
    double psnr_u = 0, psnr_u_plus = 0, psnr_u_minus = 0;  // NaN when the region is empty
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    ViewMetrics aggregate() const;  // mean over views
};

ViewMetrics evaluate_view(const std::string& name, const Image& foreground, const Image& alpha,
                          const Image& gt_foreground, const Image& gt_alpha, int region_radius = 5);

/// CSV with one row per view plus a "mean" row; LPIPS is reported as n/a.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
std::string report_csv(const EvalReport& report);

}  // namespace ofield
