#pragma once

// Convolutional renderer: a gated-convolution U-Net with a radiance branch
// (features → foreground color) and an opacity branch (color + per-sample
// alphas → residual on the coarse alpha), plus compositing.

#include "ofield/nn.hpp"

namespace ofield {

struct RendererConfig {
    int feature_channels = 8;  // C
    int samples = 32;          // N, channels of the density feature map
    int base_channels = 16;
};

template <typename T>
struct GatedConv {
    nn::Conv<T> feature;
    nn::Conv<T> gate;

    static GatedConv create(ad::ParameterSet<T>& params, const std::string& name, int64_t in, int64_t out, int k,
                            int stride, uint64_t seed);
};

/// leaky_relu(conv_f(x), 0.2) ⊙ sigmoid(conv_g(x)).
template <typename T>
ad::BasicTensor<T> gated_conv(const ad::BasicTensor<T>& x, const GatedConv<T>& layer);

template <typename T>
struct RenderOutput {
    ad::BasicTensor<T> foreground;  // [P, 3, H, W]
    ad::BasicTensor<T> alpha;       // [P, 1, H, W]
    ad::BasicTensor<T> composite;   // [P, 3, H, W]
};

/// α·F + (1−α)·B with a constant background color.
template <typename T>
ad::BasicTensor<T> composite(const ad::BasicTensor<T>& foreground, const ad::BasicTensor<T>& alpha,
                             T background = T(1));

template <typename T>
class Renderer {
public:
    Renderer() = default;
    Renderer(const RendererConfig& config, uint64_t seed);

    /// Inputs NCHW with H, W multiples of 4.
    RenderOutput<T> forward(const ad::BasicTensor<T>& radiance, const ad::BasicTensor<T>& density,
                            const ad::BasicTensor<T>& coarse_alpha) const;

    const RendererConfig& config() const { return config_; }
    ad::ParameterSet<T>& parameters() { return params_; }
    const ad::ParameterSet<T>& parameters() const { return params_; }

    /// Farthest input pixel offset that can influence an output pixel.
    static constexpr int kReceptiveRadius = 8;

private:
    RendererConfig config_;
    ad::ParameterSet<T> params_;
    GatedConv<T> enc0_, enc1_, enc2_, dec1_, dec0_;
    nn::Conv<T> color_out_;
    GatedConv<T> op_enc0_, op_enc1_, op_dec0_;
    nn::Conv<T> residual_out_;
};

}  // namespace ofield
