#include "ofield/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace ofield {

Mode mode_from_string(const std::string& s) {
    if (s == "full-range" || s == "a") return Mode::kFullRange;
    if (s == "bypass" || s == "b") return Mode::kBypass;
    if (s == "no-gan" || s == "c") return Mode::kNoGan;
    if (s == "full" || s == "d") return Mode::kFull;
    throw ConfigError("config: mode: unknown value '" + s + "' (full-range, bypass, no-gan, full)");
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::kFullRange: return "full-range";
        case Mode::kBypass: return "bypass";
        case Mode::kNoGan: return "no-gan";
        case Mode::kFull: return "full";
    }
    return "?";
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("config: " + key + ": " + why); };
    if (patch_size <= 0 || patch_size % 4 != 0) fail("sampler.K", "must be a positive multiple of 4");
    if (patch_size < PerceptualBackbone<float>::kMinSize) fail("sampler.K", "must be at least 8");
    if (n_coarse <= 0) fail("sampler.N_coarse", "must be positive");
    if (n_fine <= 0) fail("sampler.N_fine", "must be positive");
    if (patches_per_batch <= 0) fail("sampler.patches_per_batch", "must be positive");
    if (field.pos_bands <= 0) fail("field.L_x", "must be positive");
    if (field.dir_bands <= 0) fail("field.L_d", "must be positive");
    if (field.width < 2) fail("field.width", "must be at least 2");
    if (field.depth <= 0) fail("field.depth", "must be positive");
    if (field.features < 4) fail("field.C", "must be at least 4");
    if (renderer_channels <= 0) fail("renderer.base_channels", "must be positive");
    if (std::abs(loss.a - loss.b - 1.0) > 1e-12) fail("loss.a", "a - b must equal 1");
    if (loss.alpha_weight != 0.0 && loss.alpha_weight != 1.0) fail("loss.w_alpha", "must be 0 or 1");
    if (loss.adversarial < 0.0) fail("loss.lambda_adv", "must be non-negative");
    if (perceptual_weight < 0.0) fail("loss.perceptual", "must be non-negative");
    if (!(learning_rate > 0.0)) fail("optim.lr", "must be positive");
    if (steps < 0) fail("steps", "must be non-negative");
    if (log_interval <= 0) fail("log_interval", "must be positive");
    if (checkpoint_interval < 0) fail("checkpoint_interval", "must be non-negative");
    if (grid_resolution <= 0) fail("proxy.grid", "must be positive");
    if (!(silhouette_threshold > 0.0 && silhouette_threshold < 1.0)) fail("proxy.threshold", "must lie in (0,1)");
    if (dilate_radius < 0) fail("proxy.dilate_radius", "must be non-negative");
}

nlohmann::json config_to_json(const TrainConfig& c) {
    return {
        {"mode", to_string(c.mode)},
        {"seed", c.seed},
        {"steps", c.steps},
        {"log_interval", c.log_interval},
        {"checkpoint_interval", c.checkpoint_interval},
        {"sampler", {{"K", c.patch_size}, {"N_coarse", c.n_coarse}, {"N_fine", c.n_fine},
                     {"patches_per_batch", c.patches_per_batch}, {"jitter", c.jitter}}},
        {"field", {{"L_x", c.field.pos_bands}, {"L_d", c.field.dir_bands}, {"width", c.field.width},
                   {"depth", c.field.depth}, {"C", c.field.features}}},
        {"renderer", {{"base_channels", c.renderer_channels}}},
        {"loss", {{"w_alpha", c.loss.alpha_weight}, {"a", c.loss.a}, {"b", c.loss.b},
                  {"lambda_adv", c.loss.adversarial}, {"perceptual", c.perceptual_weight}}},
        {"optim", {{"lr", c.learning_rate}}},
        {"proxy", {{"grid", c.grid_resolution}, {"threshold", c.silhouette_threshold},
                   {"dilate_radius", c.dilate_radius}}},
        {"bounds", {{"lo", {c.scene_bounds.lo.x(), c.scene_bounds.lo.y(), c.scene_bounds.lo.z()}},
                    {"hi", {c.scene_bounds.hi.x(), c.scene_bounds.hi.y(), c.scene_bounds.hi.z()}}}},
    };
}

namespace {

// Reads j[key] into out when present, reporting the dotted path on type errors.
template <typename V>
void read(const nlohmann::json& j, const std::string& section, const char* key, V& out) {
    if (!j.contains(key)) return;
    const std::string path = section.empty() ? key : section + "." + key;
    try {
        out = j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: " + path + ": wrong type (" + j.at(key).dump() + ")");
    }
}

void reject_unknown(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError("config: " + (section.empty() ? std::string("<root>") : section) + ": must be an object");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("config: " + (section.empty() ? k : section + "." + k) + ": unknown key");
}

Eigen::Vector3d read_vec3(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("config: " + path + ": must be an array of 3 numbers");
    try {
        return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: " + path + ": must be an array of 3 numbers");
    }
}

}  // namespace

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    reject_unknown(j, "", {"mode", "seed", "steps", "log_interval", "checkpoint_interval", "sampler", "field",
                           "renderer", "loss", "optim", "proxy", "bounds", "dataset", "out"});
    std::string mode = to_string(c.mode);
    read(j, "", "mode", mode);
    c.mode = mode_from_string(mode);
    read(j, "", "seed", c.seed);
    read(j, "", "steps", c.steps);
    read(j, "", "log_interval", c.log_interval);
    read(j, "", "checkpoint_interval", c.checkpoint_interval);
    if (j.contains("sampler")) {
        const auto& s = j["sampler"];
        reject_unknown(s, "sampler", {"K", "N_coarse", "N_fine", "patches_per_batch", "jitter"});
        read(s, "sampler", "K", c.patch_size);
        read(s, "sampler", "N_coarse", c.n_coarse);
        read(s, "sampler", "N_fine", c.n_fine);
        read(s, "sampler", "patches_per_batch", c.patches_per_batch);
        read(s, "sampler", "jitter", c.jitter);
    }
    if (j.contains("field")) {
        const auto& s = j["field"];
        reject_unknown(s, "field", {"L_x", "L_d", "width", "depth", "C"});
        read(s, "field", "L_x", c.field.pos_bands);
        read(s, "field", "L_d", c.field.dir_bands);
        read(s, "field", "width", c.field.width);
        read(s, "field", "depth", c.field.depth);
        read(s, "field", "C", c.field.features);
    }
    if (j.contains("renderer")) {
        reject_unknown(j["renderer"], "renderer", {"base_channels"});
        read(j["renderer"], "renderer", "base_channels", c.renderer_channels);
    }
    if (j.contains("loss")) {
        const auto& s = j["loss"];
        reject_unknown(s, "loss", {"w_alpha", "a", "b", "lambda_adv", "perceptual"});
        read(s, "loss", "w_alpha", c.loss.alpha_weight);
        read(s, "loss", "a", c.loss.a);
        read(s, "loss", "b", c.loss.b);
        read(s, "loss", "lambda_adv", c.loss.adversarial);
        read(s, "loss", "perceptual", c.perceptual_weight);
    }
    if (j.contains("optim")) {
        reject_unknown(j["optim"], "optim", {"lr"});
        read(j["optim"], "optim", "lr", c.learning_rate);
    }
    if (j.contains("proxy")) {
        const auto& s = j["proxy"];
        reject_unknown(s, "proxy", {"grid", "threshold", "dilate_radius"});
        read(s, "proxy", "grid", c.grid_resolution);
        read(s, "proxy", "threshold", c.silhouette_threshold);
        read(s, "proxy", "dilate_radius", c.dilate_radius);
    }
    if (j.contains("bounds")) {
        const auto& s = j["bounds"];
        reject_unknown(s, "bounds", {"lo", "hi"});
        if (s.contains("lo")) c.scene_bounds.lo = read_vec3(s["lo"], "bounds.lo");
        if (s.contains("hi")) c.scene_bounds.hi = read_vec3(s["hi"], "bounds.hi");
    }
    c.validate();
    return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("config: override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    nlohmann::json* node = &j;
    std::istringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (!node->is_object()) throw ConfigError("config: " + key + ": parent is not an object");
        node = &(*node)[path[i]];
        if (node->is_null()) *node = nlohmann::json::object();
    }
    (*node)[path.back()] = value;
}

// ---------------------------------------------------------------------------

DepthBounds Proxy::depth_bounds(const CameraView& view) const {
    return efficient ? rasterize_depth_bounds(grid, view) : box_depth_bounds(bounds, view);
}

Proxy build_proxy(const std::vector<GroundTruthView>& views, const TrainConfig& config) {
    Proxy p;
    p.efficient = config.efficient_sampling();
    p.bounds = config.scene_bounds;
    std::vector<Mask> sils;
    std::vector<CameraView> cams;
    for (const auto& v : views) {
        sils.push_back(binarize_dilate(v.alpha, config.silhouette_threshold, config.dilate_radius));
        cams.push_back(v.view);
    }
    CarveResult r = carve(sils, cams, config.grid_resolution, config.scene_bounds);
    if (!r.warning.empty()) throw EmptyProxyError(r.warning);
    p.grid = std::move(r.grid);
    return p;
}

// ---------------------------------------------------------------------------

OpacityFieldModel::OpacityFieldModel(const TrainConfig& config)
    : config_(config),
      coarse_(config.field, "field.coarse", config.seed),
      fine_(config.field, "field.fine", config.seed) {
    config_.validate();
    const int c = config.field.features;
    coarse_w_ = nn::init_tensor<float>({3, c, 1, 1}, c, 3, nn::Init::kXavier, config.seed, "head.coarse.weight");
    coarse_b_ = ad::Tensor::full({3}, 0.0f, true);
    fine_w_ = nn::init_tensor<float>({3, c, 1, 1}, c, 3, nn::Init::kXavier, config.seed, "head.fine.weight");
    fine_b_ = ad::Tensor::full({3}, 0.0f, true);
    heads_.add("head.coarse.weight", coarse_w_);
    heads_.add("head.coarse.bias", coarse_b_);
    heads_.add("head.fine.weight", fine_w_);
    heads_.add("head.fine.bias", fine_b_);
    renderer_ = Renderer<float>({c, config.samples(), config.renderer_channels}, config.seed);
    disc_ = Discriminator<float>(config.seed);
}

ad::ParameterSet<float> OpacityFieldModel::generator_parameters() const {
    ad::ParameterSet<float> p;
    p.append(coarse_.parameters());
    p.append(fine_.parameters());
    p.append(heads_);
    if (config_.uses_renderer()) p.append(renderer_.parameters());
    return p;
}

ad::ParameterSet<float> OpacityFieldModel::all_parameters() const {
    ad::ParameterSet<float> p;
    p.append(coarse_.parameters());
    p.append(fine_.parameters());
    p.append(heads_);
    p.append(renderer_.parameters());
    p.append(disc_.parameters());
    return p;
}

ad::Tensor OpacityFieldModel::color_head(const ad::Tensor& radiance, const ad::Tensor& coarse_alpha, bool fine) const {
    const ad::Tensor& w = fine ? fine_w_ : coarse_w_;
    const ad::Tensor& b = fine ? fine_b_ : coarse_b_;
    const ad::Tensor lin = ad::conv2d(radiance, w, ad::Tensor(), 1);
    const ad::Tensor offset = ad::mul(ad::reshape(b, {1, 3, 1, 1}), coarse_alpha);
    // + (1 − α_c)·white
    return ad::add(ad::add(lin, offset), ad::add_scalar(ad::neg(coarse_alpha), 1.0f));
}

PatchForward OpacityFieldModel::forward(std::vector<RayPatch>& patches, uint64_t step, bool jitter, bool render) const {
    if (patches.empty()) throw std::invalid_argument("forward: no patches");
    const int P = static_cast<int>(patches.size());
    const int K = patches[0].K;
    const Aabb& box = config_.scene_bounds;
    auto key = [&](const RayPatch& p) {
        return SampleKey{config_.seed, static_cast<uint64_t>(p.view),
                         static_cast<uint64_t>(p.row0) * 65536u + static_cast<uint64_t>(p.col0), step};
    };
    for (auto& p : patches) sample_coarse(p, config_.n_coarse, jitter, key(p));
    const SampleBatch cb = make_sample_batch(patches, box);
    const FieldOutput<float> co = coarse_.forward(cb.positions, cb.directions);
    const auto ca = compute_alphas(ad::reshape(co.sigma, {cb.rows() / cb.samples, cb.samples}), cb.deltas);
    const FeaturePatch<float> cf = build_feature_patch(ca.alpha, co.features, P, K);

    PatchForward out;
    out.coarse_alpha_c = cf.coarse_alpha;
    out.coarse_image = color_head(cf.radiance, cf.coarse_alpha, false);

    const auto weights = ca.alpha.values();
    const std::size_t per_patch = static_cast<std::size_t>(K) * K * config_.n_coarse;
    for (int i = 0; i < P; ++i) {
        std::vector<float> w(weights.begin() + static_cast<std::ptrdiff_t>(i * per_patch),
                             weights.begin() + static_cast<std::ptrdiff_t>((i + 1) * per_patch));
        sample_fine(patches[static_cast<std::size_t>(i)], w, config_.n_fine, jitter, key(patches[static_cast<std::size_t>(i)]));
    }
    const SampleBatch fb = make_sample_batch(patches, box);
    const FieldOutput<float> fo = fine_.forward(fb.positions, fb.directions);
    const auto fa = compute_alphas(ad::reshape(fo.sigma, {fb.rows() / fb.samples, fb.samples}), fb.deltas);
    out.features = build_feature_patch(fa.alpha, fo.features, P, K);
    out.mlp_image = color_head(out.features.radiance, out.features.coarse_alpha, true);

    if (config_.uses_renderer()) {
        if (render) {
            const RenderOutput<float> r =
                renderer_.forward(out.features.radiance, out.features.density, out.features.coarse_alpha);
            out.foreground = r.foreground;
            out.alpha = r.alpha;
            out.image = r.composite;
        }
    } else {
        out.alpha = out.features.coarse_alpha;
        out.image = out.mlp_image;
    }
    return out;
}

// ---------------------------------------------------------------------------
// full-frame rendering

namespace {

constexpr int kRenderChunk = 4;

// Copies a [P,Ch,K,K] tensor's patch p into a [Ch,Hp,Wp] buffer at the patch origin.
void scatter_patch(const ad::Tensor& src, int p, const RayPatch& patch, std::vector<float>& dst, int hp, int wp) {
    const int ch = static_cast<int>(src.dim(1)), K = patch.K;
    const auto v = src.values();
    for (int c = 0; c < ch; ++c)
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j)
                dst[(static_cast<std::size_t>(c) * hp + patch.row0 + i) * wp + patch.col0 + j] =
                    v[((static_cast<std::size_t>(p) * ch + c) * K + i) * K + j];
}

FrameRender finish(const CameraView& view, const DepthBounds& bounds, const std::vector<float>& rgb,
                   const std::vector<float>& alpha, int hp, int wp, bool premultiplied_composite) {
    FrameRender f;
    f.foreground = Image(view.width, view.height, 3);
    f.alpha = Image(view.width, view.height, 1);
    f.valid = bounds.valid;
    for (int r = 0; r < view.height; ++r)
        for (int c = 0; c < view.width; ++c) {
            if (!bounds.valid.at(r, c)) continue;
            const float a = alpha[static_cast<std::size_t>(r) * wp + c];
            f.alpha.at(r, c) = a;
            for (int k = 0; k < 3; ++k) {
                float v = rgb[(static_cast<std::size_t>(k) * hp + r) * wp + c];
                // Bypass output is a composite; recover the foreground color.
                if (premultiplied_composite) v = a > 1e-6f ? (v - (1.0f - a)) / a : 0.0f;
                f.foreground.at(r, c, k) = std::clamp(v, 0.0f, 1.0f);
            }
        }
    return f;
}

}  // namespace

FrameRender render_image(const OpacityFieldModel& model, const CameraView& view, const DepthBounds& bounds) {
    const TrainConfig& cfg = model.config();
    const int K = cfg.patch_size, C = cfg.field.features, N = cfg.samples();
    const int hp = (view.height + K - 1) / K * K, wp = (view.width + K - 1) / K * K;
    const std::size_t plane = static_cast<std::size_t>(hp) * wp;
    std::vector<RayPatch> patches = partition_patches(view, bounds, K);

    ad::NoGradGuard guard;
    std::vector<float> fc(C * plane, 0.0f), fd(N * plane, 0.0f), ac(plane, 0.0f), mlp(3 * plane, 1.0f);
    for (std::size_t start = 0; start < patches.size(); start += kRenderChunk) {
        std::vector<RayPatch> chunk(patches.begin() + static_cast<std::ptrdiff_t>(start),
                                    patches.begin() + static_cast<std::ptrdiff_t>(std::min(patches.size(), start + kRenderChunk)));
        const PatchForward pf = model.forward(chunk, 0, false, false);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const int p = static_cast<int>(i);
            scatter_patch(pf.features.radiance, p, chunk[i], fc, hp, wp);
            scatter_patch(pf.features.density, p, chunk[i], fd, hp, wp);
            scatter_patch(pf.features.coarse_alpha, p, chunk[i], ac, hp, wp);
            scatter_patch(pf.mlp_image, p, chunk[i], mlp, hp, wp);
        }
    }
    if (!cfg.uses_renderer()) return finish(view, bounds, mlp, ac, hp, wp, true);

    const ad::Tensor radiance({1, C, hp, wp}, std::move(fc));
    const ad::Tensor density({1, N, hp, wp}, std::move(fd));
    const ad::Tensor coarse({1, 1, hp, wp}, std::move(ac));
    const RenderOutput<float> r = model.renderer().forward(radiance, density, coarse);
    const std::vector<float> rgb(r.foreground.values().begin(), r.foreground.values().end());
    const std::vector<float> alpha(r.alpha.values().begin(), r.alpha.values().end());
    return finish(view, bounds, rgb, alpha, hp, wp, false);
}

FrameRender render_patchwise(const OpacityFieldModel& model, const CameraView& view, const DepthBounds& bounds) {
    const TrainConfig& cfg = model.config();
    const int K = cfg.patch_size;
    const int hp = (view.height + K - 1) / K * K, wp = (view.width + K - 1) / K * K;
    const std::size_t plane = static_cast<std::size_t>(hp) * wp;
    std::vector<RayPatch> patches = partition_patches(view, bounds, K);

    ad::NoGradGuard guard;
    std::vector<float> rgb(3 * plane, 0.0f), alpha(plane, 0.0f);
    for (std::size_t start = 0; start < patches.size(); start += kRenderChunk) {
        std::vector<RayPatch> chunk(patches.begin() + static_cast<std::ptrdiff_t>(start),
                                    patches.begin() + static_cast<std::ptrdiff_t>(std::min(patches.size(), start + kRenderChunk)));
        const PatchForward pf = model.forward(chunk, 0, false, true);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const int p = static_cast<int>(i);
            scatter_patch(cfg.uses_renderer() ? pf.foreground : pf.image, p, chunk[i], rgb, hp, wp);
            scatter_patch(pf.alpha, p, chunk[i], alpha, hp, wp);
        }
    }
    return finish(view, bounds, rgb, alpha, hp, wp, !cfg.uses_renderer());
}

}  // namespace ofield
