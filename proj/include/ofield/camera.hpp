#pragma once

// Pinhole cameras (OpenCV convention: x right, y down, z forward) and the
// turntable rig. Pixel (row, col) samples its center at (row+0.5, col+0.5).

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace ofield {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CameraView {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();  // world -> camera

    Eigen::Matrix3d intrinsics() const;
    Eigen::Matrix3d rotation() const { return extrinsics.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return extrinsics.topRightCorner<3, 1>(); }
    Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }
    Eigen::Vector3d optical_axis() const { return rotation().row(2).transpose(); }
    /// Camera -> world.
    Eigen::Matrix4d pose() const;

    /// Throws ConfigError when intrinsics or the rotation block are invalid.
    void validate() const;
};

struct Ray {
    Eigen::Vector3d origin;
    Eigen::Vector3d direction;  // unit
    int row = 0, col = 0;
};

struct Projection {
    Eigen::Vector2d pixel{0.0, 0.0};  // (x = column coordinate, y = row coordinate)
    double depth = 0.0;
    bool in_front = false;  // false marks a point at or behind the camera plane
};

struct TurntableRig {
    std::vector<CameraView> base_views;  // step 0
    Eigen::Vector3d axis{0.0, 0.0, 1.0};
    Eigen::Vector3d center{0.0, 0.0, 0.0};
    int steps_per_lap = 80;

    /// Rigid motion from step 0 to step j: rotation by 2πj/steps_per_lap about
    /// the axis through the center. Acts on camera-to-world poses.
    Eigen::Matrix4d step_transform(int j) const;
    void validate() const;
};

/// World->camera extrinsics for a camera at `eye` looking at `target`.
Eigen::Matrix4d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up);

/// Rigid inverse of a [R t; 0 1] transform.
Eigen::Matrix4d rigid_inverse(const Eigen::Matrix4d& m);

/// Camera i at turntable step j. The pose is A_j · P_{i,0} (one product);
/// the view stores its world->camera inverse.
CameraView propagate_extrinsics(const TurntableRig& rig, int camera, int step);

/// One ray per pixel of the block [row0, row0+rows) × [col0, col0+cols), row-major.
std::vector<Ray> generate_rays(const CameraView& view, int row0, int col0, int rows, int cols);
Ray pixel_ray(const CameraView& view, int row, int col);

Projection project(const CameraView& view, const Eigen::Vector3d& point);

nlohmann::json view_to_json(const CameraView& view);
CameraView view_from_json(const nlohmann::json& j);
nlohmann::json rig_to_json(const TurntableRig& rig);
TurntableRig rig_from_json(const nlohmann::json& j);
TurntableRig load_rig(const std::filesystem::path& path);
void save_rig(const std::filesystem::path& path, const TurntableRig& rig);

}  // namespace ofield
