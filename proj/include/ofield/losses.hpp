#pragma once

// Training objectives: reconstruction, perceptual, intermediate (MLP output)
// and least-squares adversarial terms, plus the fixed feature backbone and
// the patch discriminator.

#include "ofield/nn.hpp"

#include <stdexcept>

namespace ofield {

struct LossWeights {
    double alpha_weight = 1.0;  // 1 for synthetic ground-truth alpha, 0 for real captures
    double a = 2.0;
    double b = 1.0;
    double adversarial = 0.01;

    /// Throws std::invalid_argument unless a − b = 1 and the alpha weight is 0 or 1.
    void validate() const;
};

/// Fixed random convolutional pyramid. Ops are counted conv/relu/pool from
/// zero; features are tapped after op 3 and op 8.
template <typename T>
class PerceptualBackbone {
public:
    explicit PerceptualBackbone(uint64_t seed = 19);

    struct Taps {
        ad::BasicTensor<T> shallow, deep;
    };
    /// x: [P, 3, H, W] with H, W ≥ kMinSize.
    Taps features(const ad::BasicTensor<T>& x) const;

    static constexpr int kMinSize = 8;

private:
    ad::BasicTensor<T> w1_, w2_, pool_, w3_, w4_;
    ad::BasicTensor<T> none_;
};

template <typename T>
class Discriminator {
public:
    Discriminator() = default;
    explicit Discriminator(uint64_t seed, int channels = 16);

    /// Mean-pooled score per patch: [P, 3, H, W] → [P].
    ad::BasicTensor<T> operator()(const ad::BasicTensor<T>& x) const;

    ad::ParameterSet<T>& parameters() { return params_; }
    const ad::ParameterSet<T>& parameters() const { return params_; }

private:
    ad::ParameterSet<T> params_;
    nn::Conv<T> c1_, c2_, c3_;
};

/// Σ mask·(a−b)² / (Σ mask · channels); mask [P,1,H,W] broadcasts over channels.
template <typename T>
ad::BasicTensor<T> masked_mse(const ad::BasicTensor<T>& a, const ad::BasicTensor<T>& b, const ad::BasicTensor<T>& mask);

/// MSE on the composite plus MSE on alpha.
template <typename T>
ad::BasicTensor<T> loss_reconstruction(const ad::BasicTensor<T>& image, const ad::BasicTensor<T>& alpha,
                                       const ad::BasicTensor<T>& gt_image, const ad::BasicTensor<T>& gt_alpha,
                                       const ad::BasicTensor<T>& mask);

/// Squared feature differences at both taps, for the composite and for alpha
/// replicated to three channels. Masked pixels are zeroed in both inputs.
template <typename T>
ad::BasicTensor<T> loss_perceptual(const PerceptualBackbone<T>& backbone, const ad::BasicTensor<T>& image,
                                   const ad::BasicTensor<T>& gt_image, const ad::BasicTensor<T>& alpha,
                                   const ad::BasicTensor<T>& gt_alpha, const ad::BasicTensor<T>& mask);

/// w_α·MSE(α) + mean(w·(I−Ĩ)²) with w = a − b·α̃, plus perceptual taps on the
/// composite when a backbone is supplied.
template <typename T>
ad::BasicTensor<T> loss_intermediate(const ad::BasicTensor<T>& image, const ad::BasicTensor<T>& alpha,
                                     const ad::BasicTensor<T>& gt_image, const ad::BasicTensor<T>& gt_alpha,
                                     const ad::BasicTensor<T>& mask, const LossWeights& weights,
                                     const PerceptualBackbone<T>* backbone);

/// mean(D(fake)²) + mean((D(real) − 1)²) over per-patch scores.
template <typename T>
ad::BasicTensor<T> lsgan_discriminator_loss(const ad::BasicTensor<T>& fake_scores, const ad::BasicTensor<T>& real_scores);
/// mean((D(fake) − 1)²), unscaled.
template <typename T>
ad::BasicTensor<T> lsgan_generator_loss(const ad::BasicTensor<T>& fake_scores);

template <typename T>
ad::BasicTensor<T> loss_discriminator(const Discriminator<T>& d, const ad::BasicTensor<T>& fake,
                                      const ad::BasicTensor<T>& real) {
    return lsgan_discriminator_loss(d(fake), d(real));
}
template <typename T>
ad::BasicTensor<T> loss_generator_adv(const Discriminator<T>& d, const ad::BasicTensor<T>& fake) {
    return lsgan_generator_loss(d(fake));
}

}  // namespace ofield
