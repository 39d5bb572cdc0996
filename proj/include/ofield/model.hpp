#pragma once

// The full opacity radiance field: coarse/fine fields, linear color heads,
// the convolutional renderer and the discriminator, together with the
// configuration they are built from and full-frame rendering.

#include "ofield/carving.hpp"
#include "ofield/field.hpp"
#include "ofield/integration.hpp"
#include "ofield/losses.hpp"
#include "ofield/renderer.hpp"
#include "ofield/sampler.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace ofield {

/// Ablation ladder: (a) no renderer, full-range sampling; (b) no renderer;
/// (c) renderer without adversarial loss; (d) everything.
enum class Mode { kFullRange, kBypass, kNoGan, kFull };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);

struct TrainConfig {
    Mode mode = Mode::kFull;
    // sampler
    int patch_size = 16;
    int n_coarse = 16;
    int n_fine = 16;
    int patches_per_batch = 4;
    bool jitter = true;
    // networks
    FieldConfig field;
    int renderer_channels = 16;
    // losses
    LossWeights loss;
    double perceptual_weight = 1.0;
    // optimization
    double learning_rate = 5e-4;
    int steps = 3000;
    int log_interval = 50;
    int checkpoint_interval = 0;  // 0: only at the end
    uint64_t seed = 1;
    // proxy
    int grid_resolution = 128;
    double silhouette_threshold = 0.05;
    int dilate_radius = 2;
    Aabb scene_bounds;

    bool uses_renderer() const { return mode == Mode::kNoGan || mode == Mode::kFull; }
    bool efficient_sampling() const { return mode != Mode::kFullRange; }
    bool adversarial() const { return mode == Mode::kFull && loss.adversarial > 0.0; }
    int samples() const { return n_coarse + n_fine; }

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& j);
/// Applies "dotted.key=value" to a JSON document; the value is parsed as JSON
/// when possible and as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Carved proxy plus the rule for turning it into per-view depth bounds.
struct Proxy {
    VoxelGrid grid;
    bool efficient = true;
    Aabb bounds;

    DepthBounds depth_bounds(const CameraView& view) const;
};

/// Carves the proxy from the dataset's alpha mattes.
Proxy build_proxy(const std::vector<GroundTruthView>& views, const TrainConfig& config);

struct PatchForward {
    FeaturePatch<float> features;  // fine pass
    ad::Tensor coarse_alpha_c;     // coarse network's Σα, [P,1,K,K]
    ad::Tensor coarse_image;       // coarse network's linear-head composite
    ad::Tensor mlp_image;          // fine network's linear-head composite
    ad::Tensor foreground;         // renderer output (empty in bypass modes)
    ad::Tensor alpha;              // final alpha
    ad::Tensor image;              // final composite over white
};

class OpacityFieldModel {
public:
    explicit OpacityFieldModel(const TrainConfig& config);

    /// Samples the patches in place (coarse then fine) and runs every stage.
    /// `render` = false stops after the feature maps and color heads.
    PatchForward forward(std::vector<RayPatch>& patches, uint64_t step, bool jitter, bool render = true) const;

    /// Linear color head on integrated features: W·F_c + b·α_c + (1 − α_c).
    ad::Tensor color_head(const ad::Tensor& radiance, const ad::Tensor& coarse_alpha, bool fine) const;

    const TrainConfig& config() const { return config_; }
    FieldNetwork<float>& coarse() { return coarse_; }
    FieldNetwork<float>& fine() { return fine_; }
    const Renderer<float>& renderer() const { return renderer_; }
    const Discriminator<float>& discriminator() const { return disc_; }

    ad::ParameterSet<float> generator_parameters() const;
    ad::ParameterSet<float> discriminator_parameters() const { return disc_.parameters(); }
    ad::ParameterSet<float> all_parameters() const;

private:
    TrainConfig config_;
    FieldNetwork<float> coarse_, fine_;
    ad::ParameterSet<float> heads_;
    ad::Tensor coarse_w_, coarse_b_, fine_w_, fine_b_;
    Renderer<float> renderer_;
    Discriminator<float> disc_;
};

struct FrameRender {
    Image foreground;  // RGB
    Image alpha;
    Mask valid;
};

/// Assembles full-frame feature maps from every valid patch (zeros elsewhere)
/// and runs the renderer once over the whole frame.
FrameRender render_image(const OpacityFieldModel& model, const CameraView& view, const DepthBounds& bounds);

/// Renders each patch independently and stitches the results.
FrameRender render_patchwise(const OpacityFieldModel& model, const CameraView& view, const DepthBounds& bounds);

}  // namespace ofield
