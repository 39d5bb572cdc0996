#include "ofield/morphology.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace ofield {
namespace {

std::vector<std::pair<int, int>> disk_offsets(int r) {
    std::vector<std::pair<int, int>> out;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dy * dy + dx * dx <= r * r) out.emplace_back(dy, dx);
    return out;
}

// any = true: output set where any neighbor is set; otherwise where all in-image neighbors are set.
Mask apply(const Mask& m, const std::vector<std::pair<int, int>>& offsets, bool any) {
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            bool result = !any;
            for (const auto& [dy, dx] : offsets) {
                const int yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width) continue;
                const bool v = m.at(yy, xx) != 0;
                if (any && v) {
                    result = true;
                    break;
                }
                if (!any && !v) {
                    result = false;
                    break;
                }
            }
            out.at(y, x) = result ? 1 : 0;
        }
    return out;
}

void check_radius(int r) {
    if (r < 0) throw std::invalid_argument("morphology: negative radius " + std::to_string(r));
}

}  // namespace

Mask dilate_disk(const Mask& mask, int radius) {
    check_radius(radius);
    return apply(mask, disk_offsets(radius), true);
}

Mask erode_disk(const Mask& mask, int radius) {
    check_radius(radius);
    return apply(mask, disk_offsets(radius), false);
}

Mask dilate_square(const Mask& mask, int radius) {
    check_radius(radius);
    // Separable: rows then columns.
    Mask tmp(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            uint8_t v = 0;
            for (int xx = std::max(0, x - radius); xx <= std::min(mask.width - 1, x + radius) && !v; ++xx)
                v = mask.at(y, xx) ? 1 : 0;
            tmp.at(y, x) = v;
        }
    Mask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            uint8_t v = 0;
            for (int yy = std::max(0, y - radius); yy <= std::min(mask.height - 1, y + radius) && !v; ++yy)
                v = tmp.at(yy, x);
            out.at(y, x) = v;
        }
    return out;
}

}  // namespace ofield
