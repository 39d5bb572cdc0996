#pragma once

// Naive metric references evaluated in long double.

#include "ofield/image.hpp"

#include <algorithm>
#include <cmath>

namespace ofield::oracle {

// Straightforward per-pixel and per-window evaluations in long double.
inline double naive_psnr(const Image& x, const Image& y, const Mask& m) {
    long double se = 0;
    long n = 0;
    for (int r = 0; r < x.height; ++r)
        for (int c = 0; c < x.width; ++c) {
            if (!m.at(r, c)) continue;
            for (int k = 0; k < x.channels; ++k) {
                const long double d = static_cast<long double>(x.at(r, c, k)) - y.at(r, c, k);
                se += d * d;
                ++n;
            }
        }
    const long double mse = se / n;
    return mse == 0 ? 99.0 : std::min(99.0, static_cast<double>(-10.0L * std::log10(mse)));
}

inline double naive_ssim(const Image& x, const Image& y, const Mask& m) {
    long double wgt[11][11], norm = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) norm += wgt[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5L);
    long double total = 0;
    for (int k = 0; k < x.channels; ++k) {
        long double sum = 0;
        long n = 0;
        for (int r = 5; r + 5 < x.height; ++r)
            for (int c = 5; c + 5 < x.width; ++c) {
                if (!m.at(r, c)) continue;
                long double mx = 0, my = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        mx += wgt[i][j] / norm * x.at(r + i - 5, c + j - 5, k);
                        my += wgt[i][j] / norm * y.at(r + i - 5, c + j - 5, k);
                    }
                long double vx = 0, vy = 0, cxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const long double a = x.at(r + i - 5, c + j - 5, k) - mx;
                        const long double b = y.at(r + i - 5, c + j - 5, k) - my;
                        vx += wgt[i][j] / norm * a * a;
                        vy += wgt[i][j] / norm * b * b;
                        cxy += wgt[i][j] / norm * a * b;
                    }
                const long double c1 = 1e-4L, c2 = 9e-4L;
                sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++n;
            }
        total += sum / n;
    }
    return static_cast<double>(total / x.channels);
}

inline double naive_sad(const Image& a, const Image& b, const Mask& m) {
    long double s = 0;
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c)
            if (m.at(r, c)) s += std::fabs(static_cast<long double>(a.at(r, c)) - b.at(r, c));
    return static_cast<double>(s / 1000);
}

}  // namespace ofield::oracle
