#include "ofield/scene.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace ofield;

namespace {

CameraView small_view(int res, const Eigen::Vector3d& eye) {
    CameraView v;
    v.width = v.height = res;
    v.fx = v.fy = 0.875 * res;
    v.cx = v.cy = res / 2.0;
    v.extrinsics = look_at(eye, {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0});
    return v;
}

}  // namespace

TEST(AabbTest, IntersectClipsToRayStart) {
    const Aabb box;
    const auto hit = box.intersect({0.0, 0.0, 0.0}, {1.0, 0.0, 0.0});
    ASSERT_TRUE(hit);
    EXPECT_DOUBLE_EQ(hit->first, 0.0);
    EXPECT_DOUBLE_EQ(hit->second, 1.0);
    EXPECT_FALSE(box.intersect({3.0, 3.0, 0.0}, {1.0, 0.0, 0.0}));
    EXPECT_FALSE(box.intersect({3.0, 0.0, 0.0}, {1.0, 0.0, 0.0}));
}

TEST(OracleTest, EmptySceneIsTransparent) {
    AnalyticScene scene = slab_scene(0.0, Aabb{});
    const GroundTruthView gt = oracle_render(scene, small_view(16, {3.0, 0.5, 0.4}), 256);
    for (float a : gt.alpha.data) EXPECT_EQ(a, 0.0f);
}

TEST(OracleTest, HomogeneousSlabFollowsBeerLambert) {
    for (double s : {0.1, 0.7, 2.5}) {
        Aabb slab{{-0.4, -1.0, -1.0}, {0.6, 1.0, 1.0}};
        const AnalyticScene scene = slab_scene(s, slab);
        Ray r{{-3.0, 0.2, -0.1}, {1.0, 0.0, 0.0}, 0, 0};
        const OracleRay o = oracle_ray(scene, r, 1024);
        EXPECT_NEAR(o.alpha, 1.0 - std::exp(-s * 1.0), 1e-4) << "s=" << s;
    }
}

TEST(OracleTest, QuadratureSelfConvergesOnBlob) {
    const AnalyticScene scene = blob_scene();
    const CameraView v = small_view(24, {2.8, 1.0, 0.9});
    double worst = 0.0;
    for (const Ray& r : generate_rays(v, 0, 0, v.height, v.width))
        worst = std::max(worst, std::abs(oracle_ray(scene, r, 1024).alpha - oracle_ray(scene, r, 2048).alpha));
    EXPECT_LT(worst, 1e-4);
}

TEST(OracleTest, AlphaAndColorInRange) {
    const AnalyticScene scene = fuzzy_sphere_scene();
    const GroundTruthView gt = oracle_render(scene, small_view(32, {3.2, 0.0, 1.2}), 256);
    for (float a : gt.alpha.data) {
        EXPECT_GE(a, 0.0f);
        EXPECT_LE(a, 1.0f);
    }
    for (float c : gt.foreground.data) {
        EXPECT_GE(c, 0.0f);
        EXPECT_LE(c, 1.0f);
    }
}

TEST(OracleTest, TooFewSamplesRejected) {
    EXPECT_THROW(oracle_render(fuzzy_sphere_scene(), small_view(8, {3.0, 0.0, 0.0}), 64), std::invalid_argument);
}

TEST(SceneTest, JsonRoundTripPreservesDensity) {
    const AnalyticScene a = fuzzy_sphere_scene();
    const AnalyticScene b = scene_from_json(scene_to_json(a));
    for (const Eigen::Vector3d& x : {Eigen::Vector3d(0.5, 0.0, 0.0), Eigen::Vector3d(0.1, 0.3, -0.35),
                                     Eigen::Vector3d(0.0, 0.0, 0.52)}) {
        EXPECT_DOUBLE_EQ(a.density(x), b.density(x));
        EXPECT_EQ(a.radiance(x, {0.0, 0.0, 1.0}), b.radiance(x, {0.0, 0.0, 1.0}));
    }
    EXPECT_THROW(scene_by_name("teapot"), ConfigError);
}

TEST(SceneTest, ShellNoiseIsBounded) {
    const AnalyticScene s = fuzzy_sphere_scene();
    for (double th = 0.0; th <= 3.14; th += 0.1)
        for (double ph = -3.1; ph <= 3.1; ph += 0.13) {
            const double n = s.shell_noise(th, ph);
            EXPECT_GE(n, -1.0);
            EXPECT_LE(n, 1.0);
        }
}

TEST(DatasetTest, CountsViews) {
    TurntableRig rig = default_rig(16);
    rig.base_views.resize(2);
    // Six cameras by ten steps gives sixty views.
    TurntableRig six = rig;
    while (six.base_views.size() < 6) six.base_views.push_back(rig.base_views[six.base_views.size() % 2]);
    std::vector<int> steps(10);
    for (int i = 0; i < 10; ++i) steps[static_cast<std::size_t>(i)] = i * 8;
    EXPECT_EQ(generate_dataset(slab_scene(0.0, Aabb{}), six, steps, 256).size(), 60u);
}

TEST(DatasetTest, DefaultIsEightViewsAt64) {
    const auto views = generate_dataset(fuzzy_sphere_scene(), default_rig(64), default_training_steps(), 256);
    ASSERT_EQ(views.size(), 8u);
    for (const auto& v : views) {
        EXPECT_EQ(v.alpha.width, 64);
        EXPECT_EQ(v.alpha.height, 64);
    }
    for (auto [cam, step] : default_heldout_views())
        for (int s : default_training_steps()) EXPECT_NE(step, s) << "held-out view reuses a training step";
}

TEST(DatasetTest, GenerationIsBitIdentical) {
    const auto a = generate_dataset(fuzzy_sphere_scene(), default_rig(32), {0, 20}, 256);
    const auto b = generate_dataset(fuzzy_sphere_scene(), default_rig(32), {0, 20}, 256);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].alpha.data, b[i].alpha.data);
        EXPECT_EQ(a[i].foreground.data, b[i].foreground.data);
    }
}

TEST(DatasetTest, SaveLoadRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "ofield_dataset_test";
    std::filesystem::remove_all(dir);
    Dataset ds{default_rig(32), generate_dataset(fuzzy_sphere_scene(), default_rig(32), {0, 20}, 256),
               scene_to_json(fuzzy_sphere_scene())};
    save_dataset(dir, ds, true);
    const Dataset back = load_dataset(dir);
    ASSERT_EQ(back.views.size(), ds.views.size());
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        EXPECT_EQ(back.views[i].step, ds.views[i].step);
        EXPECT_EQ(back.views[i].camera, ds.views[i].camera);
        for (std::size_t p = 0; p < ds.views[i].alpha.data.size(); ++p)
            ASSERT_NEAR(back.views[i].alpha.data[p], ds.views[i].alpha.data[p], 0.51 / 65535.0);
        for (std::size_t p = 0; p < ds.views[i].foreground.data.size(); ++p)
            ASSERT_NEAR(back.views[i].foreground.data[p], ds.views[i].foreground.data[p], 0.51 / 255.0);
    }
    std::filesystem::remove_all(dir);
    EXPECT_THROW(load_dataset(dir), ConfigError);
}
