#pragma once

// Silhouette proxies: voxel carving and per-view near/far depth bounds.

#include "ofield/camera.hpp"
#include "ofield/image.hpp"
#include "ofield/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ofield {

/// Pixels within `radius` (Chebyshev) of any pixel with alpha ≥ threshold.
Mask binarize_dilate(const Image& alpha, double threshold, int radius);

struct VoxelGrid {
    int nx = 0, ny = 0, nz = 0;
    Aabb bounds;
    std::vector<uint8_t> occupancy;  // x fastest, then y, then z

    VoxelGrid() = default;
    VoxelGrid(int nx_, int ny_, int nz_, const Aabb& b)
        : nx(nx_), ny(ny_), nz(nz_), bounds(b), occupancy(static_cast<std::size_t>(nx_) * ny_ * nz_, 0) {}

    std::size_t index(int i, int j, int k) const { return (static_cast<std::size_t>(k) * ny + j) * nx + i; }
    bool occupied(int i, int j, int k) const { return occupancy[index(i, j, k)] != 0; }
    Eigen::Vector3d voxel_size() const;
    Eigen::Vector3d center(int i, int j, int k) const;
    double voxel_diagonal() const { return voxel_size().norm(); }
    std::size_t occupied_count() const;
};

struct CarveResult {
    VoxelGrid grid;
    std::string warning;  // non-empty when the silhouettes leave nothing occupied
};

/// A voxel survives iff its center projects inside the silhouette in every
/// view that sees it in front of the camera.
CarveResult carve(const std::vector<Mask>& silhouettes, const std::vector<CameraView>& views, int resolution,
                  const Aabb& bounds = {});

struct DepthBounds {
    int width = 0, height = 0;
    std::vector<float> near, far;  // +inf where invalid
    Mask valid;

    float near_at(int r, int c) const { return near[static_cast<std::size_t>(r) * width + c]; }
    float far_at(int r, int c) const { return far[static_cast<std::size_t>(r) * width + c]; }
};

/// First/last occupied-voxel hit per pixel ray by grid traversal, widened by
/// `margin` on both ends (defaults to one voxel diagonal when negative).
DepthBounds rasterize_depth_bounds(const VoxelGrid& grid, const CameraView& view, double margin = -1.0);

/// The full ray/box extent of every pixel: what sampling looks like without a proxy.
DepthBounds box_depth_bounds(const Aabb& bounds, const CameraView& view);

void save_voxel_grid(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid load_voxel_grid(const std::filesystem::path& path);
void save_depth_bounds(const std::filesystem::path& near_path, const std::filesystem::path& far_path,
                       const DepthBounds& bounds);
DepthBounds load_depth_bounds(const std::filesystem::path& near_path, const std::filesystem::path& far_path);

}  // namespace ofield
