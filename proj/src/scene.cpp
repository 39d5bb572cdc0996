#include "ofield/scene.hpp"

#include "ofield/parallel.hpp"
#include "ofield/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

namespace ofield {

std::optional<std::pair<double, double>> Aabb::intersect(const Eigen::Vector3d& origin,
                                                         const Eigen::Vector3d& direction) const {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(direction[a]) < 1e-300) {
            if (origin[a] < lo[a] || origin[a] > hi[a]) return std::nullopt;
            continue;
        }
        const double inv = 1.0 / direction[a];
        double ta = (lo[a] - origin[a]) * inv, tb = (hi[a] - origin[a]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    return std::make_pair(t0, t1);
}

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double lattice_value(uint64_t seed, int64_t row, int64_t col) {
    return 2.0 * to_unit(hash_key({seed, static_cast<uint64_t>(row), static_cast<uint64_t>(col)})) - 1.0;
}

}  // namespace

double AnalyticScene::shell_noise(double theta, double phi) const {
    const FurShell& s = *shell;
    const double u = std::clamp(theta / std::numbers::pi, 0.0, 1.0) * s.noise_rows;
    double v = phi / (2.0 * std::numbers::pi);
    v = (v - std::floor(v)) * s.noise_cols;
    const int64_t r0 = std::min<int64_t>(static_cast<int64_t>(u), s.noise_rows - 1);
    const int64_t c0 = static_cast<int64_t>(v) % s.noise_cols;
    const int64_t c1 = (c0 + 1) % s.noise_cols;
    const double fu = smoothstep(std::clamp(u - static_cast<double>(r0), 0.0, 1.0));
    const double fv = smoothstep(v - std::floor(v));
    const double a = lattice_value(s.noise_seed, r0, c0), b = lattice_value(s.noise_seed, r0, c1);
    const double c = lattice_value(s.noise_seed, r0 + 1, c0), d = lattice_value(s.noise_seed, r0 + 1, c1);
    return (a * (1 - fv) + b * fv) * (1 - fu) + (c * (1 - fv) + d * fv) * fu;
}

double AnalyticScene::density(const Eigen::Vector3d& x) const {
    if (!bounds.contains(x)) return 0.0;
    double sigma = uniform_density;
    for (const auto& b : blobs) sigma += b.amplitude * std::exp(-(x - b.center).squaredNorm() / (2.0 * b.radius * b.radius));
    if (shell) {
        const Eigen::Vector3d p = x - shell->center;
        const double r = p.norm();
        const double dr = r - shell->radius;
        if (std::abs(dr) < 7.0 * shell->width && r > 0.0) {
            const double theta = std::acos(std::clamp(p.z() / r, -1.0, 1.0));
            const double phi = std::atan2(p.y(), p.x());
            const double n = shell->noise_amplitude * shell_noise(theta, phi);
            sigma += shell->scale * std::exp(-dr * dr / (2.0 * shell->width * shell->width)) * (1.0 + n);
        }
    }
    if (falloff) sigma += falloff->scale * std::exp(-falloff->rate * (x[falloff->axis] - bounds.lo[falloff->axis]));
    return std::max(0.0, sigma * density_scale);
}

Eigen::Vector3d AnalyticScene::radiance(const Eigen::Vector3d& x, const Eigen::Vector3d& d) const {
    static const Eigen::Vector3d dirs[3] = {Eigen::Vector3d(0.8, 0.6, 0.0), Eigen::Vector3d(0.0, 0.6, 0.8),
                                            Eigen::Vector3d(0.6, 0.0, 0.8)};
    Eigen::Vector3d c;
    for (int k = 0; k < 3; ++k)
        c[k] = color.base[k] + color.variation[k] * std::sin(color.frequency * dirs[k].dot(x) + k);
    if (color.view_lobe != 0.0) {
        const double cosang = std::max(0.0, -d.dot(color.lobe_direction.normalized()));
        c.array() += color.view_lobe * cosang * cosang;
    }
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

AnalyticScene fuzzy_sphere_scene() {
    AnalyticScene s;
    s.shell = FurShell{};
    return s;
}

AnalyticScene slab_scene(double density, const Aabb& bounds) {
    AnalyticScene s;
    s.bounds = bounds;
    s.uniform_density = density;
    s.color.variation.setZero();
    s.color.view_lobe = 0.0;
    return s;
}

AnalyticScene blob_scene() {
    AnalyticScene s;
    s.blobs = {GaussianBlob{{0.0, 0.0, 0.0}, 0.25, 12.0}, GaussianBlob{{0.25, 0.1, 0.15}, 0.12, 20.0}};
    return s;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json v3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
Eigen::Vector3d v3(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

nlohmann::json scene_to_json(const AnalyticScene& s) {
    nlohmann::json j;
    j["bounds"] = {{"lo", v3(s.bounds.lo)}, {"hi", v3(s.bounds.hi)}};
    j["blobs"] = nlohmann::json::array();
    for (const auto& b : s.blobs)
        j["blobs"].push_back({{"center", v3(b.center)}, {"radius", b.radius}, {"amplitude", b.amplitude}});
    if (s.shell) {
        const auto& f = *s.shell;
        j["shell"] = {{"center", v3(f.center)}, {"radius", f.radius}, {"width", f.width}, {"scale", f.scale},
                      {"noise_amplitude", f.noise_amplitude}, {"noise_rows", f.noise_rows},
                      {"noise_cols", f.noise_cols}, {"noise_seed", f.noise_seed}};
    }
    if (s.falloff) j["falloff"] = {{"scale", s.falloff->scale}, {"rate", s.falloff->rate}, {"axis", s.falloff->axis}};
    j["uniform_density"] = s.uniform_density;
    j["density_scale"] = s.density_scale;
    j["color"] = {{"base", v3(s.color.base)}, {"variation", v3(s.color.variation)},
                  {"frequency", s.color.frequency}, {"view_lobe", s.color.view_lobe},
                  {"lobe_direction", v3(s.color.lobe_direction)}};
    return j;
}

AnalyticScene scene_from_json(const nlohmann::json& j) {
    AnalyticScene s;
    try {
        s.bounds.lo = v3(j.at("bounds").at("lo"));
        s.bounds.hi = v3(j.at("bounds").at("hi"));
        for (const auto& b : j.value("blobs", nlohmann::json::array()))
            s.blobs.push_back({v3(b.at("center")), b.at("radius").get<double>(), b.at("amplitude").get<double>()});
        if (j.contains("shell")) {
            const auto& f = j["shell"];
            FurShell sh;
            sh.center = v3(f.at("center"));
            sh.radius = f.at("radius").get<double>();
            sh.width = f.at("width").get<double>();
            sh.scale = f.at("scale").get<double>();
            sh.noise_amplitude = f.at("noise_amplitude").get<double>();
            sh.noise_rows = f.at("noise_rows").get<int>();
            sh.noise_cols = f.at("noise_cols").get<int>();
            sh.noise_seed = f.at("noise_seed").get<uint64_t>();
            s.shell = sh;
        }
        if (j.contains("falloff"))
            s.falloff = ExpFalloff{j["falloff"].at("scale").get<double>(), j["falloff"].at("rate").get<double>(),
                                   j["falloff"].at("axis").get<int>()};
        s.uniform_density = j.value("uniform_density", 0.0);
        s.density_scale = j.value("density_scale", 1.0);
        if (j.contains("color")) {
            const auto& c = j["color"];
            s.color.base = v3(c.at("base"));
            s.color.variation = v3(c.at("variation"));
            s.color.frequency = c.at("frequency").get<double>();
            s.color.view_lobe = c.at("view_lobe").get<double>();
            s.color.lobe_direction = v3(c.at("lobe_direction"));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scene: ") + e.what());
    }
    if (s.shell && (s.shell->noise_amplitude < 0.0 || s.shell->noise_amplitude > 1.0))
        throw ConfigError("scene: shell.noise_amplitude must lie in [0, 1]");
    return s;
}

AnalyticScene scene_by_name(const std::string& name) {
    if (name == "fuzzy-sphere") return fuzzy_sphere_scene();
    if (name == "blob") return blob_scene();
    throw ConfigError("scene: unknown scene '" + name + "'");
}

// ---------------------------------------------------------------------------
// oracle

OracleRay oracle_ray(const AnalyticScene& scene, const Ray& ray, int samples) {
    OracleRay out;
    const auto hit = scene.bounds.intersect(ray.origin, ray.direction);
    if (!hit || hit->second <= hit->first) return out;
    const double dt = (hit->second - hit->first) / samples;
    double transmittance = 1.0;
    for (int i = 0; i < samples; ++i) {
        const Eigen::Vector3d x = ray.origin + (hit->first + (i + 0.5) * dt) * ray.direction;
        const double sigma = scene.density(x);
        if (sigma <= 0.0) continue;
        const double absorb = std::exp(-sigma * dt);
        const double w = transmittance * (1.0 - absorb);
        out.premultiplied += w * scene.radiance(x, ray.direction);
        transmittance *= absorb;
    }
    out.alpha = 1.0 - transmittance;
    return out;
}

GroundTruthView oracle_render(const AnalyticScene& scene, const CameraView& view, int samples_per_ray) {
    if (samples_per_ray < 256) throw std::invalid_argument("oracle_render: samples_per_ray must be >= 256");
    GroundTruthView gt;
    gt.view = view;
    gt.foreground = Image(view.width, view.height, 3);
    gt.alpha = Image(view.width, view.height, 1);
    parallel_for(view.height, [&](int64_t row) {
        for (int col = 0; col < view.width; ++col) {
            const OracleRay r = oracle_ray(scene, pixel_ray(view, static_cast<int>(row), col), samples_per_ray);
            const int rr = static_cast<int>(row);
            gt.alpha.at(rr, col) = static_cast<float>(r.alpha);
            const double denom = std::max(r.alpha, 1e-6);
            for (int k = 0; k < 3; ++k)
                gt.foreground.at(rr, col, k) =
                    r.alpha > 0.0 ? static_cast<float>(std::clamp(r.premultiplied[k] / denom, 0.0, 1.0)) : 0.0f;
        }
    });
    return gt;
}

TurntableRig default_rig(int resolution) {
    TurntableRig rig;
    rig.steps_per_lap = 80;
    rig.axis = {0.0, 0.0, 1.0};
    rig.center = {0.0, 0.0, 0.0};
    const double distance = 3.2;
    const double elevations[2] = {25.0, 5.0};
    const double azimuths[2] = {0.0, 45.0};
    for (int i = 0; i < 2; ++i) {
        const double el = elevations[i] * std::numbers::pi / 180.0;
        const double az = azimuths[i] * std::numbers::pi / 180.0;
        const Eigen::Vector3d eye(distance * std::cos(el) * std::cos(az), distance * std::cos(el) * std::sin(az),
                                  distance * std::sin(el));
        CameraView v;
        v.width = v.height = resolution;
        v.fx = v.fy = 0.875 * resolution;
        v.cx = v.cy = 0.5 * resolution;
        v.extrinsics = look_at(eye, rig.center, rig.axis);
        rig.base_views.push_back(v);
    }
    return rig;
}

std::vector<int> default_training_steps() { return {0, 20, 40, 60}; }

std::vector<std::pair<int, int>> default_heldout_views() { return {{0, 10}, {1, 30}}; }

std::vector<GroundTruthView> generate_dataset(const AnalyticScene& scene, const TurntableRig& rig,
                                              const std::vector<int>& steps, int samples_per_ray) {
    rig.validate();
    std::vector<GroundTruthView> out;
    for (int cam = 0; cam < static_cast<int>(rig.base_views.size()); ++cam)
        for (int step : steps) {
            GroundTruthView gt = oracle_render(scene, propagate_extrinsics(rig, cam, step), samples_per_ray);
            gt.camera = cam;
            gt.step = step;
            out.push_back(std::move(gt));
        }
    return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset, bool alpha16) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["rig"] = rig_to_json(dataset.rig);
    manifest["scene"] = dataset.scene;
    manifest["views"] = nlohmann::json::array();
    for (std::size_t i = 0; i < dataset.views.size(); ++i) {
        const auto& v = dataset.views[i];
        char rgb[64], alpha[64];
        std::snprintf(rgb, sizeof rgb, "view_%03zu_rgb.png", i);
        std::snprintf(alpha, sizeof alpha, "view_%03zu_alpha.png", i);
        write_png(dir / rgb, v.foreground, 8);
        write_png(dir / alpha, v.alpha, alpha16 ? 16 : 8);
        manifest["views"].push_back(
            {{"camera", v.camera}, {"step", v.step}, {"rgb", rgb}, {"alpha", alpha}, {"view", view_to_json(v.view)}});
    }
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("dataset: cannot write manifest in " + dir.string());
    os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw ConfigError("dataset: missing " + (dir / "manifest.json").string());
    nlohmann::json m;
    try {
        is >> m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("dataset: manifest.json: " + std::string(e.what()));
    }
    Dataset d;
    try {
        d.rig = rig_from_json(m.at("rig"));
        d.scene = m.value("scene", nlohmann::json());
        for (const auto& v : m.at("views")) {
            GroundTruthView gt;
            gt.camera = v.at("camera").get<int>();
            gt.step = v.at("step").get<int>();
            gt.view = view_from_json(v.at("view"));
            gt.foreground = read_png(dir / v.at("rgb").get<std::string>());
            gt.alpha = read_png(dir / v.at("alpha").get<std::string>());
            if (gt.foreground.channels != 3 || gt.alpha.channels != 1 || gt.foreground.width != gt.view.width ||
                gt.foreground.height != gt.view.height || gt.alpha.width != gt.view.width ||
                gt.alpha.height != gt.view.height)
                throw ConfigError("dataset: image size or channel mismatch for " + v.at("rgb").get<std::string>());
            d.views.push_back(std::move(gt));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("dataset: manifest.json: " + std::string(e.what()));
    }
    return d;
}

}  // namespace ofield
