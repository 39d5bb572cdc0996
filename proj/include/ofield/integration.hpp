#pragma once

// Per-sample opacities, feature integration along rays and assembly of
// per-patch feature maps.

#include "ofield/autodiff.hpp"

#include <vector>

namespace ofield {

template <typename T>
struct AlphaResult {
    ad::BasicTensor<T> alpha;          // [R, N]
    ad::BasicTensor<T> transmittance;  // [R, N], T_1 = 1
};

/// α_i = T_i (1 − exp(−σ_i δ_i)), T_i = exp(−Σ_{j<i} σ_j δ_j). Both inputs [R, N].
template <typename T>
AlphaResult<T> compute_alphas(const ad::BasicTensor<T>& sigma, const ad::BasicTensor<T>& delta);

/// Scalar reference path for a single ray; returns α and T (N+1 entries).
void compute_alphas(const std::vector<double>& sigma, const std::vector<double>& delta, std::vector<double>& alpha,
                    std::vector<double>& transmittance);

/// Σ_i α_i f_i; alpha [R, N], features [R, N, C] → [R, C].
template <typename T>
ad::BasicTensor<T> integrate_features(const ad::BasicTensor<T>& alpha, const ad::BasicTensor<T>& features);

template <typename T>
struct FeaturePatch {
    ad::BasicTensor<T> radiance;      // [P, C, K, K]
    ad::BasicTensor<T> density;       // [P, N, K, K], front to back
    ad::BasicTensor<T> coarse_alpha;  // [P, 1, K, K]
};

/// alpha [P·K², N] and features [P·K²·N, C] in row-major pixel order.
template <typename T>
FeaturePatch<T> build_feature_patch(const ad::BasicTensor<T>& alpha, const ad::BasicTensor<T>& features, int patches,
                                    int K);

}  // namespace ofield
