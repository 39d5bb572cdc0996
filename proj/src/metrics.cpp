#include "ofield/metrics.hpp"

#include "ofield/morphology.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace ofield {

namespace {

void check_pair(const Image& x, const Image& y, const Mask& mask, const char* op) {
    if (x.width != y.width || x.height != y.height || x.channels != y.channels)
        throw MetricError(std::string(op) + ": image shapes differ");
    if (mask.width != x.width || mask.height != x.height) throw MetricError(std::string(op) + ": mask size differs");
}

std::vector<double> gaussian_window() {
    std::vector<double> g(11);
    double s = 0.0;
    for (int i = 0; i < 11; ++i) s += g[static_cast<std::size_t>(i)] = std::exp(-(i - 5) * (i - 5) / (2.0 * 1.5 * 1.5));
    for (double& v : g) v /= s;
    return g;
}

// Valid-mode separable filter of one channel: out is (h−10)×(w−10).
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h, const std::vector<double>& g) {
    const int ow = w - 10, oh = h - 10;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < 11; ++k) s += g[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y) * w + x + k];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < 11; ++k) s += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

}  // namespace

double psnr(const Image& x, const Image& y, const Mask& mask) {
    check_pair(x, y, mask, "psnr");
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < x.pixels(); ++p) {
        if (!mask.data[p]) continue;
        for (int c = 0; c < x.channels; ++c) {
            const double d = static_cast<double>(x.data[p * x.channels + c]) - y.data[p * y.channels + c];
            se += d * d;
        }
        n += static_cast<std::size_t>(x.channels);
    }
    if (n == 0) throw MetricError("psnr: empty mask");
    const double mse = se / static_cast<double>(n);
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& x, const Image& y, const Mask& mask) {
    check_pair(x, y, mask, "ssim");
    if (x.width < 11 || x.height < 11) throw MetricError("ssim: image smaller than the 11x11 window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto g = gaussian_window();
    const int w = x.width, h = x.height, ow = w - 10, oh = h - 10;
    std::size_t centers = 0;
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) centers += mask.at(r + 5, c + 5) != 0;
    if (centers == 0) throw MetricError("ssim: no masked window centers");

    double total = 0.0;
    for (int ch = 0; ch < x.channels; ++ch) {
        std::vector<double> a(x.pixels()), b(x.pixels()), aa(x.pixels()), bb(x.pixels()), ab(x.pixels());
        for (std::size_t p = 0; p < x.pixels(); ++p) {
            a[p] = x.data[p * x.channels + ch];
            b[p] = y.data[p * y.channels + ch];
            aa[p] = a[p] * a[p];
            bb[p] = b[p] * b[p];
            ab[p] = a[p] * b[p];
        }
        const auto ma = filter_valid(a, w, h, g), mb = filter_valid(b, w, h, g);
        const auto saa = filter_valid(aa, w, h, g), sbb = filter_valid(bb, w, h, g), sab = filter_valid(ab, w, h, g);
        double sum = 0.0;
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                if (!mask.at(r + 5, c + 5)) continue;
                const std::size_t i = static_cast<std::size_t>(r) * ow + c;
                const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
                sum += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
                       ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
            }
        total += sum / static_cast<double>(centers);
    }
    return total / x.channels;
}

double sad(const Image& alpha, const Image& gt_alpha, const Mask& mask) {
    check_pair(alpha, gt_alpha, mask, "sad");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < alpha.pixels(); ++p) {
        if (!mask.data[p]) continue;
        for (int c = 0; c < alpha.channels; ++c)
            s += std::abs(static_cast<double>(alpha.data[p * alpha.channels + c]) - gt_alpha.data[p * alpha.channels + c]);
        ++n;
    }
    if (n == 0) throw MetricError("sad: empty mask");
    return s / 1000.0;
}

RegionMasks region_masks(const Image& gt_alpha, int radius) {
    if (radius < 1) throw MetricError("region_masks: radius must be at least 1");
    const float tol = 0.5f / 255.0f;
    RegionMasks m;
    m.u = Mask(gt_alpha.width, gt_alpha.height);
    for (std::size_t p = 0; p < gt_alpha.pixels(); ++p)
        m.u.data[p] = gt_alpha.data[p] > tol && gt_alpha.data[p] < 1.0f - tol;
    m.u_plus = dilate_disk(m.u, radius);
    m.u_minus = erode_disk(m.u, radius);
    return m;
}

Mask foreground_mask(const Image& gt_alpha) {
    Mask m(gt_alpha.width, gt_alpha.height);
    for (std::size_t p = 0; p < gt_alpha.pixels(); ++p) m.data[p] = gt_alpha.data[p] > 0.5f / 255.0f;
    return m;
}

Image composite_over_white(const Image& foreground, const Image& alpha) {
    Image out(foreground.width, foreground.height, 3);
    for (std::size_t p = 0; p < foreground.pixels(); ++p) {
        const float a = alpha.data[p];
        for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = a * foreground.data[p * 3 + c] + (1.0f - a);
    }
    return out;
}

ViewMetrics evaluate_view(const std::string& name, const Image& foreground, const Image& alpha,
                          const Image& gt_foreground, const Image& gt_alpha, int region_radius) {
    ViewMetrics m;
    m.name = name;
    const Image pred = composite_over_white(foreground, alpha);
    const Image gt = composite_over_white(gt_foreground, gt_alpha);
    const Mask fg = foreground_mask(gt_alpha);
    m.psnr_fg = psnr(pred, gt, fg);
    m.ssim_fg = ssim(pred, gt, fg);
    const Mask all(alpha.width, alpha.height, 1);
    m.sad_alpha = sad(alpha, gt_alpha, all);
    m.psnr_alpha = psnr(alpha, gt_alpha, fg);
    const RegionMasks rm = region_masks(gt_alpha, region_radius);
    auto region = [&](const Mask& r) {
        return r.count() ? psnr(pred, gt, r) : std::numeric_limits<double>::quiet_NaN();
    };
    m.psnr_u = region(rm.u);
    m.psnr_u_plus = region(rm.u_plus);
    m.psnr_u_minus = region(rm.u_minus);
    return m;
}

ViewMetrics EvalReport::aggregate() const {
    ViewMetrics a;
    a.name = "mean";
    if (views.empty()) return a;
    auto mean = [&](double ViewMetrics::*f) {
        double s = 0.0;
        int n = 0;
        for (const auto& v : views)
            if (!std::isnan(v.*f)) {
                s += v.*f;
                ++n;
            }
        return n ? s / n : std::numeric_limits<double>::quiet_NaN();
    };
    a.psnr_fg = mean(&ViewMetrics::psnr_fg);
    a.ssim_fg = mean(&ViewMetrics::ssim_fg);
    a.sad_alpha = mean(&ViewMetrics::sad_alpha);
    a.psnr_alpha = mean(&ViewMetrics::psnr_alpha);
    a.psnr_u = mean(&ViewMetrics::psnr_u);
    a.psnr_u_plus = mean(&ViewMetrics::psnr_u_plus);
    a.psnr_u_minus = mean(&ViewMetrics::psnr_u_minus);
    return a;
}

std::string report_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "view,psnr_fg,ssim_fg,lpips,sad_alpha,psnr_alpha,psnr_U,psnr_U+,psnr_U-\n";
    auto num = [](double v) {
        if (std::isnan(v)) return std::string("n/a");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    auto row = [&](const ViewMetrics& m) {
        os << m.name << "," << num(m.psnr_fg) << "," << num(m.ssim_fg) << ",n/a," << num(m.sad_alpha) << ","
           << num(m.psnr_alpha) << "," << num(m.psnr_u) << "," << num(m.psnr_u_plus) << "," << num(m.psnr_u_minus)
           << "\n";
    };
    for (const auto& v : report.views) row(v);
    row(report.aggregate());
    return os.str();
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw IoError("eval: cannot write " + path.string());
    os << report_csv(report);
}

}  // namespace ofield
