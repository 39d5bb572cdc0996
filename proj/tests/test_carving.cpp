#include "ofield/carving.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace ofield;

namespace {

CameraView ring_view(int res, double distance, double azimuth_deg, double elevation_deg) {
    const double az = azimuth_deg * M_PI / 180.0, el = elevation_deg * M_PI / 180.0;
    CameraView v;
    v.width = v.height = res;
    v.fx = v.fy = 0.875 * res;
    v.cx = v.cy = res / 2.0;
    const Eigen::Vector3d eye(distance * std::cos(el) * std::cos(az), distance * std::cos(el) * std::sin(az),
                              distance * std::sin(el));
    v.extrinsics = look_at(eye, Eigen::Vector3d::Zero(), {0.0, 0.0, 1.0});
    return v;
}

std::vector<CameraView> ring(int res, double distance, int count) {
    std::vector<CameraView> views;
    for (int i = 0; i < count; ++i) views.push_back(ring_view(res, distance, 360.0 * i / count, i % 2 ? 5.0 : 25.0));
    return views;
}

}  // namespace

TEST(SilhouetteTest, ZeroMatteGivesEmptySilhouette) {
    EXPECT_EQ(binarize_dilate(Image(9, 9, 1), 0.05, 3).count(), 0u);
}

TEST(SilhouetteTest, SinglePixelRadiusOneGivesThreeByThree) {
    Image a(9, 9, 1);
    a.at(4, 4) = 1.0f;
    const Mask m = binarize_dilate(a, 0.05, 1);
    EXPECT_EQ(m.count(), 9u);
    for (int r = 3; r <= 5; ++r)
        for (int c = 3; c <= 5; ++c) EXPECT_EQ(m.at(r, c), 1);
}

TEST(SilhouetteTest, DilatedFuzzySphereStrictlyContainsThresholdSet) {
    const GroundTruthView gt = oracle_render(fuzzy_sphere_scene(), ring_view(64, 3.2, 0.0, 25.0), 256);
    const Mask m = binarize_dilate(gt.alpha, 0.05, 2);
    std::size_t above = 0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c)
            if (gt.alpha.at(r, c) >= 0.05f) {
                ++above;
                EXPECT_EQ(m.at(r, c), 1);
            }
    EXPECT_GT(above, 0u);
    EXPECT_GT(m.count(), above);
}

TEST(CarveTest, FullSilhouettesKeepEveryVoxel) {
    const auto views = ring(32, 8.0, 4);
    std::vector<Mask> sils(views.size(), Mask(32, 32, 1));
    const CarveResult r = carve(sils, views, 16);
    EXPECT_EQ(r.grid.occupied_count(), 16u * 16u * 16u);
    EXPECT_TRUE(r.warning.empty());
}

TEST(CarveTest, EmptySilhouettesWarn) {
    const auto views = ring(32, 8.0, 3);
    std::vector<Mask> sils(views.size(), Mask(32, 32, 0));
    const CarveResult r = carve(sils, views, 8);
    EXPECT_EQ(r.grid.occupied_count(), 0u);
    EXPECT_FALSE(r.warning.empty());
}

TEST(CarveTest, MatchesPerVoxelReferenceAndBracketsSphere) {
    const double R = 0.5;
    const int res = 48, grid = 40, dilation = 2;
    const auto views = ring(res, 3.2, 8);
    std::vector<Mask> sils;
    for (const auto& v : views) sils.push_back(binarize_dilate(oracle::sphere_matte(v, {0, 0, 0}, R), 0.5, dilation));
    const CarveResult r = carve(sils, views, grid);
    EXPECT_EQ(r.grid.occupancy, oracle::carve_reference(sils, views, grid, Aabb{}));

    // Dilation margin in world units at the far side of the sphere.
    const double margin = dilation * (3.2 + R) / views[0].fx;
    const double outer = R + 2.0 * r.grid.voxel_diagonal() + margin;
    for (int k = 0; k < grid; ++k)
        for (int j = 0; j < grid; ++j)
            for (int i = 0; i < grid; ++i) {
                const double dist = r.grid.center(i, j, k).norm();
                if (dist <= R) {
                    EXPECT_TRUE(r.grid.occupied(i, j, k));
                }
                if (r.grid.occupied(i, j, k)) {
                    EXPECT_LE(dist, outer);
                }
            }
}

TEST(CarveTest, AddingAViewNeverAddsVoxels) {
    const auto views = ring(32, 3.2, 6);
    std::vector<Mask> sils;
    for (const auto& v : views) sils.push_back(binarize_dilate(oracle::sphere_matte(v, {0.1, 0, 0}, 0.4), 0.5, 1));
    const CarveResult fewer = carve({sils.begin(), sils.begin() + 3}, {views.begin(), views.begin() + 3}, 24);
    const CarveResult more = carve({sils.begin(), sils.begin() + 4}, {views.begin(), views.begin() + 4}, 24);
    for (std::size_t i = 0; i < fewer.grid.occupancy.size(); ++i) EXPECT_LE(more.grid.occupancy[i], fewer.grid.occupancy[i]);
    EXPECT_LT(more.grid.occupied_count(), fewer.grid.occupied_count());
}

TEST(DepthBoundsTest, SingleVoxelAxisAlignedRay) {
    VoxelGrid g(4, 4, 4, Aabb{});
    g.occupancy[g.index(2, 1, 3)] = 1;
    const Eigen::Vector3d c = g.center(2, 1, 3);
    CameraView v;
    v.width = v.height = 3;
    v.fx = v.fy = 10.0;
    v.cx = v.cy = 1.5;
    // Camera looking along +x through the voxel center.
    const Eigen::Vector3d eye(-3.0, c.y(), c.z());
    v.extrinsics = look_at(eye, eye + Eigen::Vector3d::UnitX(), {0.0, 0.0, 1.0});
    const DepthBounds b = rasterize_depth_bounds(g, v, 0.0);
    ASSERT_TRUE(b.valid.at(1, 1));
    EXPECT_NEAR(b.near_at(1, 1), 3.0 + 0.0, 1e-6);  // voxel spans x in [0, 0.5]
    EXPECT_NEAR(b.far_at(1, 1), 3.5, 1e-6);
}

TEST(DepthBoundsTest, MissingRayIsInvalid) {
    VoxelGrid g(4, 4, 4, Aabb{});
    g.occupancy[g.index(0, 0, 0)] = 1;
    CameraView v;
    v.width = v.height = 2;
    v.fx = v.fy = 10.0;
    v.cx = v.cy = 1.0;
    v.extrinsics = look_at({5.0, 5.0, 5.0}, {6.0, 6.0, 6.0}, {0.0, 0.0, 1.0});  // looking away
    const DepthBounds b = rasterize_depth_bounds(g, v);
    EXPECT_EQ(b.valid.count(), 0u);
    EXPECT_TRUE(std::isinf(b.near_at(0, 0)));
}

TEST(DepthBoundsTest, FuzzySphereContributionsLieInsideBounds) {
    const AnalyticScene scene = fuzzy_sphere_scene();
    const TurntableRig rig = default_rig(32);
    std::vector<GroundTruthView> gts = generate_dataset(scene, rig, default_training_steps(), 256);
    std::vector<Mask> sils;
    std::vector<CameraView> views;
    for (const auto& gt : gts) {
        sils.push_back(binarize_dilate(gt.alpha, 0.05, 2));
        views.push_back(gt.view);
    }
    const CarveResult r = carve(sils, views, 64, scene.bounds);
    const double margin = r.grid.voxel_diagonal();
    for (const auto& v : views) {
        const DepthBounds b = rasterize_depth_bounds(r.grid, v);
        for (const Ray& ray : generate_rays(v, 0, 0, v.height, v.width))
            for (const auto& s : oracle::ray_weights(scene, ray.origin, ray.direction, 512)) {
                if (s.weight <= 1e-3) continue;
                ASSERT_TRUE(b.valid.at(ray.row, ray.col)) << ray.row << "," << ray.col;
                EXPECT_GE(s.t, b.near_at(ray.row, ray.col) - margin);
                EXPECT_LE(s.t, b.far_at(ray.row, ray.col) + margin);
            }
    }
}

TEST(CarvingIoTest, GridAndBoundsRoundTrip) {
    VoxelGrid g(5, 3, 2, Aabb{{-1, -2, -3}, {1, 2, 3}});
    for (std::size_t i = 0; i < g.occupancy.size(); i += 3) g.occupancy[i] = 1;
    const auto dir = std::filesystem::temp_directory_path();
    save_voxel_grid(dir / "ofield_grid.voxg", g);
    const VoxelGrid back = load_voxel_grid(dir / "ofield_grid.voxg");
    EXPECT_EQ(back.occupancy, g.occupancy);
    EXPECT_EQ(back.nx, 5);
    EXPECT_EQ(back.bounds.hi, g.bounds.hi);

    CameraView v = default_rig(16).base_views[0];
    const DepthBounds b = box_depth_bounds(Aabb{}, v);
    save_depth_bounds(dir / "ofield_near.pfm", dir / "ofield_far.pfm", b);
    const DepthBounds bb = load_depth_bounds(dir / "ofield_near.pfm", dir / "ofield_far.pfm");
    EXPECT_EQ(bb.near, b.near);
    EXPECT_EQ(bb.valid.data, b.valid.data);
    EXPECT_THROW(load_voxel_grid(dir / "ofield_missing.voxg"), std::exception);
}
