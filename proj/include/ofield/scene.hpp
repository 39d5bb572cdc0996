#pragma once

// Closed-form fuzzy scenes and the brute-force quadrature renderer used as
// ground truth.

#include "ofield/camera.hpp"
#include "ofield/image.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace ofield {

struct Aabb {
    Eigen::Vector3d lo{-1.0, -1.0, -1.0};
    Eigen::Vector3d hi{1.0, 1.0, 1.0};

    bool contains(const Eigen::Vector3d& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
    /// Entry/exit ray parameters clipped to t ≥ 0, or nullopt on a miss.
    std::optional<std::pair<double, double>> intersect(const Eigen::Vector3d& origin,
                                                       const Eigen::Vector3d& direction) const;
};

struct GaussianBlob {
    Eigen::Vector3d center{0.0, 0.0, 0.0};
    double radius = 0.3;  // standard deviation
    double amplitude = 10.0;
};

/// Radial shell σ = s·exp(−(r−R)²/2w²)·(1 + a·noise(θ,φ)).
struct FurShell {
    Eigen::Vector3d center{0.0, 0.0, 0.0};
    double radius = 0.5;
    double width = 0.045;
    double scale = 25.0;
    double noise_amplitude = 0.5;
    int noise_rows = 8;   // lattice cells along polar angle
    int noise_cols = 16;  // along azimuth
    uint64_t noise_seed = 7;
};

/// Axis-aligned exponential profile σ = s·exp(−β·(x_axis − lo_axis)) inside the bounds.
struct ExpFalloff {
    double scale = 1.0;
    double rate = 1.0;
    int axis = 2;
};

struct ColorModel {
    Eigen::Vector3d base{0.22, 0.13, 0.08};
    Eigen::Vector3d variation{0.06, 0.04, 0.03};
    double frequency = 2.0;
    double view_lobe = 0.03;
    Eigen::Vector3d lobe_direction{0.0, 0.0, 1.0};
};

struct AnalyticScene {
    Aabb bounds;
    std::vector<GaussianBlob> blobs;
    std::optional<FurShell> shell;
    std::optional<ExpFalloff> falloff;
    double uniform_density = 0.0;  // constant density inside the bounds (slab scenes)
    double density_scale = 1.0;
    ColorModel color;

    double density(const Eigen::Vector3d& x) const;
    Eigen::Vector3d radiance(const Eigen::Vector3d& x, const Eigen::Vector3d& d) const;

    // Value noise in [−1, 1] on the shell's (θ, φ) lattice.
    double shell_noise(double theta, double phi) const;
};

AnalyticScene fuzzy_sphere_scene();
AnalyticScene slab_scene(double density, const Aabb& bounds);
AnalyticScene blob_scene();

nlohmann::json scene_to_json(const AnalyticScene& scene);
AnalyticScene scene_from_json(const nlohmann::json& j);
/// Named scene presets: "fuzzy-sphere", "blob".
AnalyticScene scene_by_name(const std::string& name);

struct GroundTruthView {
    CameraView view;
    int camera = 0;
    int step = 0;
    Image foreground;  // un-premultiplied RGB
    Image alpha;       // single channel
};

struct OracleRay {
    double alpha = 0.0;
    Eigen::Vector3d premultiplied{0.0, 0.0, 0.0};
};

/// Uniform midpoint quadrature over the ray/bounds intersection.
OracleRay oracle_ray(const AnalyticScene& scene, const Ray& ray, int samples);
GroundTruthView oracle_render(const AnalyticScene& scene, const CameraView& view, int samples_per_ray);

/// Desk-scale turntable: two cameras at different elevations looking at the
/// turntable center, the second offset by 45° in azimuth.
TurntableRig default_rig(int resolution = 64);
std::vector<int> default_training_steps();
std::vector<std::pair<int, int>> default_heldout_views();  // (camera, step)

/// One view per (camera, step); cameras outer, steps inner.
std::vector<GroundTruthView> generate_dataset(const AnalyticScene& scene, const TurntableRig& rig,
                                              const std::vector<int>& steps, int samples_per_ray);

struct Dataset {
    TurntableRig rig;
    std::vector<GroundTruthView> views;
    nlohmann::json scene;  // scene parameters, when known
};

/// Writes view_NNN_rgb.png / view_NNN_alpha.png plus manifest.json.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset, bool alpha16 = false);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ofield
