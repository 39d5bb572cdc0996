#include "ofield/image.hpp"
#include "ofield/morphology.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace ofield;

namespace {

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

Image random_image(int w, int h, int c, uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image im(w, h, c);
    for (float& v : im.data) v = u(rng);
    return im;
}

Mask random_mask(int w, int h, double p, uint32_t seed) {
    std::mt19937 rng(seed);
    std::bernoulli_distribution b(p);
    Mask m(w, h);
    for (auto& v : m.data) v = b(rng) ? 1 : 0;
    return m;
}

}  // namespace

TEST(PngTest, EightBitRoundTripIsQuantized) {
    const Image im = random_image(13, 7, 3, 1);
    write_png(tmp("ofield_rgb.png"), im);
    const Image back = read_png(tmp("ofield_rgb.png"));
    ASSERT_EQ(back.width, 13);
    ASSERT_EQ(back.channels, 3);
    const Image q = quantize(im, 255);
    for (std::size_t i = 0; i < im.data.size(); ++i) EXPECT_NEAR(back.data[i], q.data[i], 1e-6);
}

TEST(PngTest, SixteenBitGrayRoundTrip) {
    const Image im = random_image(9, 11, 1, 2);
    write_png(tmp("ofield_gray16.png"), im, 16);
    const Image back = read_png(tmp("ofield_gray16.png"));
    ASSERT_EQ(back.channels, 1);
    for (std::size_t i = 0; i < im.data.size(); ++i) EXPECT_NEAR(back.data[i], im.data[i], 0.51 / 65535.0);
}

TEST(PngTest, MissingFileThrows) { EXPECT_THROW(read_png(tmp("ofield_does_not_exist.png")), IoError); }

TEST(PfmTest, RoundTripIsExact) {
    for (int c : {1, 3}) {
        Image im = random_image(5, 4, c, 3);
        im.data[0] = 1e6f;
        im.data[1] = -2.5f;
        write_pfm(tmp("ofield.pfm"), im);
        const Image back = read_pfm(tmp("ofield.pfm"));
        EXPECT_EQ(back.channels, c);
        EXPECT_EQ(back.data, im.data);
    }
}

TEST(MorphologyTest, SinglePixelSquareDilation) {
    Mask m(7, 7);
    m.at(3, 3) = 1;
    const Mask d = dilate_square(m, 1);
    EXPECT_EQ(d.count(), 9u);
    for (int r = 2; r <= 4; ++r)
        for (int c = 2; c <= 4; ++c) EXPECT_EQ(d.at(r, c), 1);
}

TEST(MorphologyTest, DiskDilationIsEuclidean) {
    Mask m(11, 11);
    m.at(5, 5) = 1;
    const Mask d = dilate_disk(m, 2);
    EXPECT_EQ(d.count(), 13u);  // lattice points with dy²+dx² ≤ 4
    EXPECT_EQ(d.at(5, 7), 1);
    EXPECT_EQ(d.at(6, 6), 1);
    EXPECT_EQ(d.at(7, 7), 0);
}

TEST(MorphologyTest, ErosionIsDualOfDilation) {
    for (uint32_t seed = 0; seed < 20; ++seed) {
        const Mask m = random_mask(17, 13, 0.6, seed);
        Mask inv = m;
        for (auto& v : inv.data) v = 1 - v;
        const Mask e = erode_disk(m, 2);
        const Mask d = dilate_disk(inv, 2);
        for (std::size_t i = 0; i < m.data.size(); ++i) EXPECT_EQ(e.data[i], 1 - d.data[i]);
    }
}

TEST(MorphologyTest, ErodeShrinksDilateGrows) {
    for (uint32_t seed = 0; seed < 20; ++seed) {
        const Mask m = random_mask(15, 15, 0.5, seed);
        const Mask e = erode_disk(m, 1), d = dilate_disk(m, 1);
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            EXPECT_LE(e.data[i], m.data[i]);
            EXPECT_GE(d.data[i], m.data[i]);
        }
    }
    EXPECT_THROW(dilate_disk(Mask(3, 3), -1), std::invalid_argument);
}
