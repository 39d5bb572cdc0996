#include "ofield/renderer.hpp"

namespace ofield {

template <typename T>
GatedConv<T> GatedConv<T>::create(ad::ParameterSet<T>& params, const std::string& name, int64_t in, int64_t out, int k,
                                  int stride, uint64_t seed) {
    GatedConv g;
    g.feature = nn::Conv<T>::create(params, name + ".f", in, out, k, stride, nn::Init::kHe, seed);
    g.gate = nn::Conv<T>::create(params, name + ".g", in, out, k, stride, nn::Init::kXavier, seed);
    return g;
}

template <typename T>
ad::BasicTensor<T> gated_conv(const ad::BasicTensor<T>& x, const GatedConv<T>& layer) {
    return ad::mul(ad::leaky_relu(layer.feature(x), T(0.2)), ad::sigmoid(layer.gate(x)));
}

template <typename T>
ad::BasicTensor<T> composite(const ad::BasicTensor<T>& foreground, const ad::BasicTensor<T>& alpha, T background) {
    // α·F + (1−α)·B = α·(F − B) + B
    return ad::add_scalar(ad::mul(alpha, ad::add_scalar(foreground, -background)), background);
}

template <typename T>
Renderer<T>::Renderer(const RendererConfig& config, uint64_t seed) : config_(config) {
    const int b = config.base_channels;
    const int in = config.feature_channels + config.samples;
    auto& p = params_;
    enc0_ = GatedConv<T>::create(p, "renderer.radiance.enc0", in, b, 1, 1, seed);
    enc1_ = GatedConv<T>::create(p, "renderer.radiance.enc1", b, 2 * b, 3, 2, seed);
    enc2_ = GatedConv<T>::create(p, "renderer.radiance.enc2", 2 * b, 2 * b, 3, 2, seed);
    dec1_ = GatedConv<T>::create(p, "renderer.radiance.dec1", 4 * b, 2 * b, 1, 1, seed);
    dec0_ = GatedConv<T>::create(p, "renderer.radiance.dec0", 3 * b, b, 1, 1, seed);
    color_out_ = nn::Conv<T>::create(p, "renderer.radiance.out", b, 3, 1, 1, nn::Init::kXavier, seed);
    op_enc0_ = GatedConv<T>::create(p, "renderer.opacity.enc0", 3 + config.samples, b, 1, 1, seed);
    op_enc1_ = GatedConv<T>::create(p, "renderer.opacity.enc1", b, b, 3, 2, seed);
    op_dec0_ = GatedConv<T>::create(p, "renderer.opacity.dec0", 2 * b, b, 1, 1, seed);
    residual_out_ = nn::Conv<T>::create(p, "renderer.opacity.out", b, 1, 1, 1, nn::Init::kZero, seed);
}

template <typename T>
RenderOutput<T> Renderer<T>::forward(const ad::BasicTensor<T>& radiance, const ad::BasicTensor<T>& density,
                                     const ad::BasicTensor<T>& coarse_alpha) const {
    if (radiance.rank() != 4 || density.rank() != 4 || coarse_alpha.rank() != 4 ||
        radiance.dim(1) != config_.feature_channels || density.dim(1) != config_.samples ||
        coarse_alpha.dim(1) != 1)
        throw ad::ShapeError("render_patch", radiance.shape(), density.shape());
    if (radiance.dim(2) % 4 != 0 || radiance.dim(3) % 4 != 0)
        throw ad::ShapeError("render_patch", "spatial size must be a multiple of 4");
    using ad::concat;
    using ad::upsample2x;

    const auto e0 = gated_conv(concat<T>({radiance, density}, 1), enc0_);
    const auto e1 = gated_conv(e0, enc1_);
    const auto e2 = gated_conv(e1, enc2_);
    const auto d1 = gated_conv(concat<T>({upsample2x(e2), e1}, 1), dec1_);
    const auto d0 = gated_conv(concat<T>({upsample2x(d1), e0}, 1), dec0_);
    RenderOutput<T> out;
    out.foreground = ad::sigmoid(color_out_(d0));

    const auto o0 = gated_conv(concat<T>({out.foreground, density}, 1), op_enc0_);
    const auto o1 = gated_conv(o0, op_enc1_);
    const auto v0 = gated_conv(concat<T>({upsample2x(o1), o0}, 1), op_dec0_);
    out.alpha = ad::clamp(ad::add(coarse_alpha, residual_out_(v0)), T(0), T(1));
    out.composite = composite(out.foreground, out.alpha);
    return out;
}

template struct GatedConv<float>;
template struct GatedConv<double>;
template ad::Tensor gated_conv<float>(const ad::Tensor&, const GatedConv<float>&);
template ad::Tensor64 gated_conv<double>(const ad::Tensor64&, const GatedConv<double>&);
template ad::Tensor composite<float>(const ad::Tensor&, const ad::Tensor&, float);
template ad::Tensor64 composite<double>(const ad::Tensor64&, const ad::Tensor64&, double);
template class Renderer<float>;
template class Renderer<double>;

}  // namespace ofield
