#include "ofield/metrics.hpp"
#include "ofield/camera.hpp"
#include "ofield/scene.hpp"
#include "support/metric_oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ofield;

namespace {

Image random_image(std::mt19937_64& rng, int w, int h, int c) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image im(w, h, c);
    for (float& v : im.data) v = u(rng);
    return im;
}

Mask random_mask(std::mt19937_64& rng, int w, int h, double p = 0.6) {
    std::bernoulli_distribution b(p);
    Mask m(w, h);
    for (auto& v : m.data) v = b(rng);
    return m;
}

using oracle::naive_psnr;
using oracle::naive_sad;
using oracle::naive_ssim;

}  // namespace

TEST(MetricOracleTest, MatchesNaiveImplementations) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const Image x = random_image(rng, 23, 19, 3), y = random_image(rng, 23, 19, 3);
        const Mask m = random_mask(rng, 23, 19);
        EXPECT_NEAR(psnr(x, y, m), naive_psnr(x, y, m), 1e-9);
        EXPECT_NEAR(ssim(x, y, m), naive_ssim(x, y, m), 1e-9);
        const Image a = random_image(rng, 23, 19, 1), b = random_image(rng, 23, 19, 1);
        EXPECT_NEAR(sad(a, b, m), naive_sad(a, b, m), 1e-9);
    }
}

TEST(MetricTest, IdenticalInputs) {
    std::mt19937_64 rng(2);
    const Image x = random_image(rng, 16, 16, 3);
    const Mask all(16, 16, 1);
    EXPECT_EQ(psnr(x, x, all), kPsnrCap);
    EXPECT_NEAR(ssim(x, x, all), 1.0, 1e-12);
    const Image a = random_image(rng, 16, 16, 1);
    EXPECT_EQ(sad(a, a, all), 0.0);
}

TEST(MetricTest, UniformErrorGivesTwentyDecibels) {
    Image x(8, 8, 3, 0.5f), y(8, 8, 3, 0.5f);
    for (float& v : y.data) v += 0.1f;
    EXPECT_NEAR(psnr(x, y, Mask(8, 8, 1)), 20.0, 1e-5);
}

TEST(MetricTest, InvertedBinaryImageHasNegativeSsim) {
    std::mt19937_64 rng(3);
    std::bernoulli_distribution b(0.5);
    Image x(20, 20, 1), y(20, 20, 1);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        x.data[i] = b(rng) ? 1.0f : 0.0f;
        y.data[i] = 1.0f - x.data[i];
    }
    EXPECT_LT(ssim(x, y, Mask(20, 20, 1)), 0.0);
}

TEST(MetricTest, SadScalingAndSymmetry) {
    Image a(40, 25, 1, 0.0f), b(40, 25, 1, 1.0f);
    const Mask m(40, 25, 1);
    EXPECT_NEAR(sad(a, b, m), 1.0, 1e-12);
    std::mt19937_64 rng(4);
    const Image x = random_image(rng, 10, 10, 1), y = random_image(rng, 10, 10, 1);
    EXPECT_EQ(sad(x, y, Mask(10, 10, 1)), sad(y, x, Mask(10, 10, 1)));
}

TEST(MetricTest, Errors) {
    const Image x(16, 16, 3);
    EXPECT_THROW(psnr(x, x, Mask(16, 16, 0)), MetricError);
    EXPECT_THROW(sad(Image(4, 4, 1), Image(4, 4, 1), Mask(4, 4, 0)), MetricError);
    EXPECT_THROW(ssim(Image(8, 8, 3), Image(8, 8, 3), Mask(8, 8, 1)), MetricError);
    EXPECT_THROW(psnr(x, Image(15, 16, 3), Mask(16, 16, 1)), MetricError);
}

TEST(MetricTest, NoiseMonotonicity) {
    std::mt19937_64 rng(5);
    const Image base = random_image(rng, 24, 24, 3);
    const Mask m(24, 24, 1);
    double prev_p = 1e9, prev_s = 1e9;
    for (double sigma : {0.01, 0.03, 0.1}) {
        double p = 0.0, s = 0.0;
        for (int t = 0; t < 50; ++t) {
            std::normal_distribution<float> n(0.0f, static_cast<float>(sigma));
            Image noisy = base;
            for (float& v : noisy.data) v += n(rng);
            p += psnr(base, noisy, m) / 50;
            s += ssim(base, noisy, m) / 50;
        }
        EXPECT_LT(p, prev_p);
        EXPECT_LT(s, prev_s);
        prev_p = p;
        prev_s = s;
    }
}

TEST(RegionMaskTest, BinaryMatteHasEmptyRegion) {
    Image a(20, 20, 1, 0.0f);
    for (int r = 5; r < 15; ++r)
        for (int c = 5; c < 15; ++c) a.at(r, c) = 1.0f;
    const auto m = region_masks(a, 3);
    EXPECT_EQ(m.u.count(), 0u);
    EXPECT_EQ(m.u_plus.count(), 0u);
}

TEST(RegionMaskTest, NestedOnRandomMattes) {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> level(0, 2);
    for (int t = 0; t < 20; ++t) {
        Image a(30, 30, 1);
        for (float& v : a.data) v = 0.5f * static_cast<float>(level(rng));
        const auto m = region_masks(a, 1 + t % 4);
        for (std::size_t p = 0; p < a.pixels(); ++p) {
            if (m.u_minus.data[p]) {
                ASSERT_TRUE(m.u.data[p]);
            }
            if (m.u.data[p]) {
                ASSERT_TRUE(m.u_plus.data[p]);
            }
        }
    }
    EXPECT_THROW(region_masks(Image(4, 4, 1), 0), MetricError);
}

TEST(RegionMaskTest, FuzzyRegionGrowsWithShellWidth) {
    const TurntableRig rig = default_rig(48);
    const CameraView view = propagate_extrinsics(rig, 0, 0);
    std::size_t prev = 0;
    for (double width : {0.02, 0.045, 0.09}) {
        // Hold the shell's integrated density fixed so only its softness changes.
        AnalyticScene s = fuzzy_sphere_scene();
        s.shell->scale *= s.shell->width / width;
        s.shell->width = width;
        const auto gt = oracle_render(s, view, 256);
        const std::size_t u = region_masks(gt.alpha).u.count();
        EXPECT_GT(u, prev) << "width " << width;
        prev = u;
    }
}

TEST(EvalReportTest, AggregateIsMeanAndCsvHasRows) {
    std::mt19937_64 rng(7);
    EvalReport report;
    for (int v = 0; v < 2; ++v) {
        Image fg = random_image(rng, 16, 16, 3), gtfg = random_image(rng, 16, 16, 3);
        Image a(16, 16, 1, 0.0f), ga(16, 16, 1, 0.0f);
        for (int r = 2; r < 14; ++r)
            for (int c = 2; c < 14; ++c) a.at(r, c) = ga.at(r, c) = (r == 2 || c == 2) ? 0.5f : 1.0f;
        report.views.push_back(evaluate_view("v" + std::to_string(v), fg, a, gtfg, ga, 1));
    }
    const auto m = report.aggregate();
    EXPECT_NEAR(m.psnr_fg, 0.5 * (report.views[0].psnr_fg + report.views[1].psnr_fg), 1e-12);
    EXPECT_NEAR(m.ssim_fg, 0.5 * (report.views[0].ssim_fg + report.views[1].ssim_fg), 1e-12);
    const std::string csv = report_csv(report);
    EXPECT_NE(csv.find("v0"), std::string::npos);
    EXPECT_NE(csv.find("mean"), std::string::npos);
    EXPECT_NE(csv.find("n/a"), std::string::npos);
}
