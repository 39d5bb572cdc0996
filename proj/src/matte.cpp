#include "ofield/matte.hpp"

#include "ofield/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ofield {

Mask key_out(const Image& image, const KeyParams& params) {
    if (image.channels != 3) throw std::invalid_argument("key_out: expected an RGB image");
    const double gmax = std::max({params.green[0], params.green[1], params.green[2]});
    if (!(gmax > 0.0)) throw std::invalid_argument("key_out: green reference must be non-black");
    const double gr = params.green[0] / gmax, gg = params.green[1] / gmax, gb = params.green[2] / gmax;
    Mask m(image.width, image.height);
    for (std::size_t p = 0; p < image.pixels(); ++p) {
        const double r = image.data[p * 3], g = image.data[p * 3 + 1], b = image.data[p * 3 + 2];
        const bool white = std::min({r, g, b}) > params.white_threshold;
        const double mx = std::max({r, g, b});
        bool green = false;
        if (mx > 1e-6) {
            const double dr = r / mx - gr, dg = g / mx - gg, db = b / mx - gb;
            green = std::sqrt(dr * dr + dg * dg + db * db) < params.green_threshold;
        }
        m.data[p] = (white || green) ? 0 : 1;
    }
    return m;
}

std::size_t Trimap::count(TrimapLabel l) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l)); }

Trimap make_trimap(const Mask& mask, int erode_radius, int dilate_radius) {
    if (erode_radius < 1 || dilate_radius < 1) throw std::invalid_argument("make_trimap: radii must be at least 1");
    const Mask fg = erode_disk(mask, erode_radius);
    const Mask grown = dilate_disk(mask, dilate_radius);
    Trimap t;
    t.width = mask.width;
    t.height = mask.height;
    t.labels.resize(mask.data.size());
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        t.labels[i] = fg.data[i] ? TrimapLabel::kForeground
                                 : (grown.data[i] ? TrimapLabel::kUnknown : TrimapLabel::kBackground);
    return t;
}

void write_trimap_png(const std::filesystem::path& path, const Trimap& trimap) {
    Image img(trimap.width, trimap.height, 1);
    for (std::size_t i = 0; i < trimap.labels.size(); ++i) img.data[i] = static_cast<float>(trimap.labels[i]) / 255.0f;
    write_png(path, img, 8);
}

Image composite_over(const Image& foreground, const Image& alpha, const std::array<double, 3>& screen) {
    Image out(foreground.width, foreground.height, 3);
    for (std::size_t p = 0; p < foreground.pixels(); ++p) {
        const double a = alpha.data[p];
        for (int c = 0; c < 3; ++c)
            out.data[p * 3 + c] = static_cast<float>(a * foreground.data[p * 3 + c] + (1.0 - a) * screen[static_cast<std::size_t>(c)]);
    }
    return out;
}

}  // namespace ofield
