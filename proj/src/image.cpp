#include "ofield/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace ofield {

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](uint8_t v) { return v != 0; }));
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

uint16_t to_u16(float v, int maxval) {
    return static_cast<uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * static_cast<float>(maxval)));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image, int bit_depth) {
    if (image.channels != 1 && image.channels != 3)
        throw IoError("png: only 1 or 3 channels supported, got " + std::to_string(image.channels));
    if (bit_depth != 8 && bit_depth != 16) throw IoError("png: bit depth must be 8 or 16");
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("png: cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
                     bit_depth, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const int maxval = bit_depth == 8 ? 255 : 65535;
        const std::size_t row_values = static_cast<std::size_t>(image.width) * image.channels;
        std::vector<png_byte> row(row_values * (bit_depth / 8));
        for (int y = 0; y < image.height; ++y) {
            const float* src = image.data.data() + y * row_values;
            for (std::size_t i = 0; i < row_values; ++i) {
                const uint16_t v = to_u16(src[i], maxval);
                if (bit_depth == 8) {
                    row[i] = static_cast<png_byte>(v);
                } else {
                    row[2 * i] = static_cast<png_byte>(v >> 8);
                    row[2 * i + 1] = static_cast<png_byte>(v & 0xFF);
                }
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("png: cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError("png: not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    Image out;
    try {
        png_init_io(png, fp.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (depth == 16) png_set_swap(png);  // host little-endian u16
        png_read_update_info(png, info);

        const int channels = png_get_channels(png, info);
        const int out_depth = png_get_bit_depth(png, info);
        out = Image(static_cast<int>(png_get_image_width(png, info)),
                    static_cast<int>(png_get_image_height(png, info)), channels);
        const std::size_t rowbytes = png_get_rowbytes(png, info);
        std::vector<png_byte> row(rowbytes);
        const std::size_t row_values = static_cast<std::size_t>(out.width) * channels;
        const float scale = out_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
        for (int y = 0; y < out.height; ++y) {
            png_read_row(png, row.data(), nullptr);
            float* dst = out.data.data() + y * row_values;
            for (std::size_t i = 0; i < row_values; ++i) {
                if (out_depth == 16) {
                    uint16_t v;
                    std::memcpy(&v, row.data() + 2 * i, 2);
                    dst[i] = static_cast<float>(v) * scale;
                } else {
                    dst[i] = static_cast<float>(row[i]) * scale;
                }
            }
        }
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    Image img(mask.width, mask.height, 1);
    for (std::size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i] ? 1.0f : 0.0f;
    write_png(path, img, 8);
}

void write_pfm(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw IoError("pfm: only 1 or 3 channels supported");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("pfm: cannot open " + path.string() + " for writing");
    os << (image.channels == 3 ? "PF" : "Pf") << "\n" << image.width << " " << image.height << "\n-1.0\n";
    const std::size_t row_values = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = image.height - 1; y >= 0; --y) {
        for (std::size_t i = 0; i < row_values; ++i) {
            const uint32_t bits = std::bit_cast<uint32_t>(image.data[y * row_values + i]);
            const char b[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                               static_cast<char>((bits >> 16) & 0xFF), static_cast<char>(bits >> 24)};
            os.write(b, 4);
        }
    }
    if (!os) throw IoError("pfm: write failed for " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("pfm: cannot open " + path.string());
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    is >> magic >> w >> h >> scale;
    is.get();
    if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || !is)
        throw IoError("pfm: malformed header in " + path.string());
    const bool little = scale < 0.0;
    Image out(w, h, magic == "PF" ? 3 : 1);
    const std::size_t row_values = static_cast<std::size_t>(w) * out.channels;
    for (int y = h - 1; y >= 0; --y) {
        for (std::size_t i = 0; i < row_values; ++i) {
            unsigned char b[4];
            if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("pfm: truncated " + path.string());
            const uint32_t bits = little ? (b[0] | b[1] << 8 | b[2] << 16 | static_cast<uint32_t>(b[3]) << 24)
                                         : (b[3] | b[2] << 8 | b[1] << 16 | static_cast<uint32_t>(b[0]) << 24);
            out.data[y * row_values + i] = std::bit_cast<float>(bits);
        }
    }
    return out;
}

Image quantize(const Image& image, int levels) {
    Image out = image;
    const float l = static_cast<float>(levels);
    for (float& v : out.data) v = std::round(std::clamp(v, 0.0f, 1.0f) * l) / l;
    return out;
}

}  // namespace ofield
