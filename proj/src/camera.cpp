#include "ofield/camera.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace ofield {

Eigen::Matrix3d CameraView::intrinsics() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

Eigen::Matrix4d CameraView::pose() const { return rigid_inverse(extrinsics); }

void CameraView::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera: image size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
        throw ConfigError("camera: principal point outside the image");
    const Eigen::Matrix3d r = rotation();
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
        std::abs(r.determinant() - 1.0) > 1e-9)
        throw ConfigError("camera: extrinsic rotation is not orthonormal with det +1");
    if (extrinsics.row(3) != Eigen::RowVector4d(0, 0, 0, 1))
        throw ConfigError("camera: extrinsics bottom row must be [0 0 0 1]");
}

Eigen::Matrix4d rigid_inverse(const Eigen::Matrix4d& m) {
    Eigen::Matrix4d out = Eigen::Matrix4d::Identity();
    const Eigen::Matrix3d rt = m.topLeftCorner<3, 3>().transpose();
    out.topLeftCorner<3, 3>() = rt;
    out.topRightCorner<3, 1>() = -rt * m.topRightCorner<3, 1>();
    return out;
}

Eigen::Matrix4d TurntableRig::step_transform(int j) const {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(steps_per_lap);
    const Eigen::Matrix3d r = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
    a.topLeftCorner<3, 3>() = r;
    a.topRightCorner<3, 1>() = center - r * center;
    return a;
}

void TurntableRig::validate() const {
    if (steps_per_lap <= 0) throw ConfigError("rig: steps_per_lap must be positive");
    if (!(axis.norm() > 0.0)) throw ConfigError("rig: axis must be non-zero");
    if (base_views.empty()) throw ConfigError("rig: no cameras");
    for (const auto& v : base_views) v.validate();
}

Eigen::Matrix4d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
    const Eigen::Vector3d z = (target - eye).normalized();
    const Eigen::Vector3d x = z.cross(up).normalized();  // image right
    const Eigen::Vector3d y = z.cross(x);                 // image down
    Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
    t.block<1, 3>(0, 0) = x.transpose();
    t.block<1, 3>(1, 0) = y.transpose();
    t.block<1, 3>(2, 0) = z.transpose();
    t.topRightCorner<3, 1>() = -t.topLeftCorner<3, 3>() * eye;
    return t;
}

CameraView propagate_extrinsics(const TurntableRig& rig, int camera, int step) {
    if (camera < 0 || camera >= static_cast<int>(rig.base_views.size()))
        throw std::out_of_range("propagate_extrinsics: camera " + std::to_string(camera) + " out of range");
    if (step < 0 || step >= rig.steps_per_lap)
        throw std::out_of_range("propagate_extrinsics: step " + std::to_string(step) + " not in [0, " +
                                std::to_string(rig.steps_per_lap) + ")");
    CameraView v = rig.base_views[static_cast<std::size_t>(camera)];
    if (step == 0) return v;
    const Eigen::Matrix4d pose = rig.step_transform(step) * v.pose();
    v.extrinsics = rigid_inverse(pose);
    return v;
}

Ray pixel_ray(const CameraView& view, int row, int col) {
    const Eigen::Vector3d cam((col + 0.5 - view.cx) / view.fx, (row + 0.5 - view.cy) / view.fy, 1.0);
    Ray r;
    r.origin = view.center();
    r.direction = (view.rotation().transpose() * cam).normalized();
    r.row = row;
    r.col = col;
    return r;
}

std::vector<Ray> generate_rays(const CameraView& view, int row0, int col0, int rows, int cols) {
    if (row0 < 0 || col0 < 0 || rows < 0 || cols < 0 || row0 + rows > view.height || col0 + cols > view.width)
        throw std::out_of_range("generate_rays: pixel block outside the image");
    std::vector<Ray> out;
    out.reserve(static_cast<std::size_t>(rows) * cols);
    const Eigen::Matrix3d rt = view.rotation().transpose();
    const Eigen::Vector3d origin = view.center();
    for (int r = row0; r < row0 + rows; ++r)
        for (int c = col0; c < col0 + cols; ++c) {
            const Eigen::Vector3d cam((c + 0.5 - view.cx) / view.fx, (r + 0.5 - view.cy) / view.fy, 1.0);
            out.push_back({origin, (rt * cam).normalized(), r, c});
        }
    return out;
}

Projection project(const CameraView& view, const Eigen::Vector3d& point) {
    const Eigen::Vector3d pc = view.rotation() * point + view.translation();
    Projection p;
    p.depth = pc.z();
    if (!(pc.z() > 0.0)) return p;
    p.in_front = true;
    p.pixel = {view.fx * pc.x() / pc.z() + view.cx, view.fy * pc.y() / pc.z() + view.cy};
    return p;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

Eigen::Vector3d vec3(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3)
        throw ConfigError(std::string("rig: '") + key + "' must be an array of 3 numbers");
    return {j[key][0].get<double>(), j[key][1].get<double>(), j[key][2].get<double>()};
}

}  // namespace

nlohmann::json view_to_json(const CameraView& v) {
    nlohmann::json t = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) t.push_back(v.extrinsics(r, c));
    return {{"fx", v.fx}, {"fy", v.fy}, {"cx", v.cx}, {"cy", v.cy},
            {"width", v.width}, {"height", v.height}, {"T0", t}};
}

CameraView view_from_json(const nlohmann::json& j) {
    CameraView v;
    try {
        v.fx = j.at("fx").get<double>();
        v.fy = j.at("fy").get<double>();
        v.cx = j.at("cx").get<double>();
        v.cy = j.at("cy").get<double>();
        v.width = j.at("width").get<int>();
        v.height = j.at("height").get<int>();
        const auto& t = j.at("T0");
        if (!t.is_array() || t.size() != 16) throw ConfigError("camera: 'T0' must hold 16 numbers");
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) v.extrinsics(r, c) = t[static_cast<std::size_t>(r * 4 + c)].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("camera: ") + e.what());
    }
    v.validate();
    return v;
}

nlohmann::json rig_to_json(const TurntableRig& rig) {
    nlohmann::json cams = nlohmann::json::array();
    for (const auto& v : rig.base_views) cams.push_back(view_to_json(v));
    return {{"steps_per_lap", rig.steps_per_lap},
            {"axis", {rig.axis.x(), rig.axis.y(), rig.axis.z()}},
            {"center", {rig.center.x(), rig.center.y(), rig.center.z()}},
            {"cameras", cams}};
}

TurntableRig rig_from_json(const nlohmann::json& j) {
    TurntableRig rig;
    try {
        rig.steps_per_lap = j.at("steps_per_lap").get<int>();
        rig.axis = vec3(j, "axis").normalized();
        rig.center = vec3(j, "center");
        for (const auto& c : j.at("cameras")) rig.base_views.push_back(view_from_json(c));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("rig: ") + e.what());
    }
    rig.validate();
    return rig;
}

TurntableRig load_rig(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("rig: cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("rig: " + path.string() + ": " + e.what());
    }
    return rig_from_json(j);
}

void save_rig(const std::filesystem::path& path, const TurntableRig& rig) {
    std::ofstream os(path);
    if (!os) throw ConfigError("rig: cannot write " + path.string());
    os << rig_to_json(rig).dump(2) << "\n";
}

}  // namespace ofield
