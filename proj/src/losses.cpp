#include "ofield/losses.hpp"

#include <cmath>

namespace ofield {

void LossWeights::validate() const {
    if (std::abs(a - b - 1.0) > 1e-12) throw std::invalid_argument("loss weights: a - b must equal 1");
    if (alpha_weight != 0.0 && alpha_weight != 1.0) throw std::invalid_argument("loss weights: alpha_weight must be 0 or 1");
    if (adversarial < 0.0) throw std::invalid_argument("loss weights: adversarial weight must be non-negative");
}

template <typename T>
PerceptualBackbone<T>::PerceptualBackbone(uint64_t seed) {
    auto fixed = [&](ad::Shape s, const char* name) {
        auto t = nn::init_tensor<T>(s, s[1] * s[2] * s[3], s[0] * s[2] * s[3], nn::Init::kHe, seed, name);
        t.set_requires_grad(false);
        return t;
    };
    w1_ = fixed({8, 3, 3, 3}, "backbone.conv1");
    w2_ = fixed({8, 8, 3, 3}, "backbone.conv2");
    w3_ = fixed({16, 8, 3, 3}, "backbone.conv3");
    w4_ = fixed({16, 16, 3, 3}, "backbone.conv4");
    // Stride-2 binomial blur applied per channel.
    std::vector<T> pool(8 * 8 * 9, T(0));
    const T k[3] = {T(0.25), T(0.5), T(0.25)};
    for (int c = 0; c < 8; ++c)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) pool[static_cast<std::size_t>(((c * 8 + c) * 3 + y) * 3 + x)] = k[y] * k[x];
    pool_ = ad::BasicTensor<T>({8, 8, 3, 3}, std::move(pool));
}

template <typename T>
typename PerceptualBackbone<T>::Taps PerceptualBackbone<T>::features(const ad::BasicTensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != 3) throw ad::ShapeError("loss_perceptual", x.shape(), {0, 3, 0, 0});
    if (x.dim(2) < kMinSize || x.dim(3) < kMinSize)
        throw ad::ShapeError("loss_perceptual", "patch smaller than the backbone minimum of 8x8");
    Taps t;
    auto h = ad::relu(ad::conv2d(x, w1_, none_, 1));       // ops 0, 1
    t.shallow = ad::relu(ad::conv2d(h, w2_, none_, 1));    // ops 2, 3
    h = ad::conv2d(t.shallow, pool_, none_, 2);            // op 4
    h = ad::relu(ad::conv2d(h, w3_, none_, 1));            // ops 5, 6
    t.deep = ad::relu(ad::conv2d(h, w4_, none_, 1));       // ops 7, 8
    return t;
}

template <typename T>
Discriminator<T>::Discriminator(uint64_t seed, int channels) {
    c1_ = nn::Conv<T>::create(params_, "disc.conv1", 3, channels, 3, 2, nn::Init::kHe, seed);
    c2_ = nn::Conv<T>::create(params_, "disc.conv2", channels, 2 * channels, 3, 2, nn::Init::kHe, seed);
    c3_ = nn::Conv<T>::create(params_, "disc.conv3", 2 * channels, 1, 3, 1, nn::Init::kXavier, seed);
}

template <typename T>
ad::BasicTensor<T> Discriminator<T>::operator()(const ad::BasicTensor<T>& x) const {
    auto h = ad::leaky_relu(c1_(x), T(0.2));
    h = ad::leaky_relu(c2_(h), T(0.2));
    h = c3_(h);
    const int64_t p = h.dim(0);
    return ad::mean(ad::reshape(h, {p, h.dim(2) * h.dim(3)}), 1);
}

template <typename T>
ad::BasicTensor<T> masked_mse(const ad::BasicTensor<T>& a, const ad::BasicTensor<T>& b, const ad::BasicTensor<T>& mask) {
    if (a.shape() != b.shape()) throw ad::ShapeError("masked_mse", a.shape(), b.shape());
    T count = 0;
    for (T m : mask.values()) count += m;
    const T channels = static_cast<T>(a.dim(1));
    if (!(count > T(0))) return ad::scale(ad::sum(ad::mul(ad::sub(a, b), mask)), T(0));
    return ad::scale(ad::sum(ad::mul(ad::square(ad::sub(a, b)), mask)), T(1) / (count * channels));
}

template <typename T>
ad::BasicTensor<T> loss_reconstruction(const ad::BasicTensor<T>& image, const ad::BasicTensor<T>& alpha,
                                       const ad::BasicTensor<T>& gt_image, const ad::BasicTensor<T>& gt_alpha,
                                       const ad::BasicTensor<T>& mask) {
    return ad::add(masked_mse(image, gt_image, mask), masked_mse(alpha, gt_alpha, mask));
}

template <typename T>
ad::BasicTensor<T> loss_perceptual(const PerceptualBackbone<T>& backbone, const ad::BasicTensor<T>& image,
                                   const ad::BasicTensor<T>& gt_image, const ad::BasicTensor<T>& alpha,
                                   const ad::BasicTensor<T>& gt_alpha, const ad::BasicTensor<T>& mask) {
    auto tap_loss = [&](const ad::BasicTensor<T>& x, const ad::BasicTensor<T>& y) {
        const auto fx = backbone.features(ad::mul(x, mask));
        const auto fy = backbone.features(ad::mul(y, mask));
        return ad::add(ad::mean(ad::square(ad::sub(fx.shallow, fy.shallow))),
                       ad::mean(ad::square(ad::sub(fx.deep, fy.deep))));
    };
    const auto a3 = ad::concat<T>({alpha, alpha, alpha}, 1);
    const auto g3 = ad::concat<T>({gt_alpha, gt_alpha, gt_alpha}, 1);
    return ad::add(tap_loss(image, gt_image), tap_loss(a3, g3));
}

template <typename T>
ad::BasicTensor<T> loss_intermediate(const ad::BasicTensor<T>& image, const ad::BasicTensor<T>& alpha,
                                     const ad::BasicTensor<T>& gt_image, const ad::BasicTensor<T>& gt_alpha,
                                     const ad::BasicTensor<T>& mask, const LossWeights& weights,
                                     const PerceptualBackbone<T>* backbone) {
    // w = a − b·α̃, masked
    const auto w = ad::mul(ad::add_scalar(ad::scale(gt_alpha, static_cast<T>(-weights.b)), static_cast<T>(weights.a)), mask);
    auto loss = masked_mse(image, gt_image, w);
    // masked_mse normalizes by Σw; renormalize to the plain pixel count so w acts as a weight.
    T wsum = 0, count = 0;
    for (T v : w.values()) wsum += v;
    for (T v : mask.values()) count += v;
    if (count > T(0)) loss = ad::scale(loss, wsum / count);
    if (weights.alpha_weight != 0.0)
        loss = ad::add(loss, ad::scale(masked_mse(alpha, gt_alpha, mask), static_cast<T>(weights.alpha_weight)));
    if (backbone) {
        auto taps = [&](const ad::BasicTensor<T>& x, const ad::BasicTensor<T>& y) {
            const auto fx = backbone->features(ad::mul(x, mask));
            const auto fy = backbone->features(ad::mul(y, mask));
            return ad::add(ad::mean(ad::square(ad::sub(fx.shallow, fy.shallow))),
                           ad::mean(ad::square(ad::sub(fx.deep, fy.deep))));
        };
        loss = ad::add(loss, taps(image, gt_image));
    }
    return loss;
}

template <typename T>
ad::BasicTensor<T> lsgan_discriminator_loss(const ad::BasicTensor<T>& fake_scores, const ad::BasicTensor<T>& real_scores) {
    return ad::add(ad::mean(ad::square(fake_scores)), ad::mean(ad::square(ad::add_scalar(real_scores, T(-1)))));
}

template <typename T>
ad::BasicTensor<T> lsgan_generator_loss(const ad::BasicTensor<T>& fake_scores) {
    return ad::mean(ad::square(ad::add_scalar(fake_scores, T(-1))));
}

#define OFIELD_INSTANTIATE_LOSSES(T)                                                                                 \
    template class PerceptualBackbone<T>;                                                                            \
    template class Discriminator<T>;                                                                                 \
    template ad::BasicTensor<T> masked_mse<T>(const ad::BasicTensor<T>&, const ad::BasicTensor<T>&,                  \
                                              const ad::BasicTensor<T>&);                                            \
    template ad::BasicTensor<T> loss_reconstruction<T>(const ad::BasicTensor<T>&, const ad::BasicTensor<T>&,         \
                                                       const ad::BasicTensor<T>&, const ad::BasicTensor<T>&,         \
                                                       const ad::BasicTensor<T>&);                                   \
    template ad::BasicTensor<T> loss_perceptual<T>(const PerceptualBackbone<T>&, const ad::BasicTensor<T>&,          \
                                                   const ad::BasicTensor<T>&, const ad::BasicTensor<T>&,             \
                                                   const ad::BasicTensor<T>&, const ad::BasicTensor<T>&);            \
    template ad::BasicTensor<T> loss_intermediate<T>(const ad::BasicTensor<T>&, const ad::BasicTensor<T>&,           \
                                                     const ad::BasicTensor<T>&, const ad::BasicTensor<T>&,           \
                                                     const ad::BasicTensor<T>&, const LossWeights&,                  \
                                                     const PerceptualBackbone<T>*);                                  \
    template ad::BasicTensor<T> lsgan_discriminator_loss<T>(const ad::BasicTensor<T>&, const ad::BasicTensor<T>&);   \
    template ad::BasicTensor<T> lsgan_generator_loss<T>(const ad::BasicTensor<T>&);

OFIELD_INSTANTIATE_LOSSES(float)
OFIELD_INSTANTIATE_LOSSES(double)

}  // namespace ofield
