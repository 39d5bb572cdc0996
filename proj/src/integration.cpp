#include "ofield/integration.hpp"

#include <cmath>
#include <stdexcept>

namespace ofield {

template <typename T>
AlphaResult<T> compute_alphas(const ad::BasicTensor<T>& sigma, const ad::BasicTensor<T>& delta) {
    if (sigma.rank() != 2 || sigma.shape() != delta.shape()) throw ad::ShapeError("compute_alphas", sigma.shape(), delta.shape());
    for (T s : sigma.values())
        if (s < T(0) || std::isnan(s)) throw std::invalid_argument("compute_alphas: negative or NaN density");
    for (T d : delta.values())
        if (!(d > T(0))) throw std::invalid_argument("compute_alphas: sample spacing must be positive");
    const auto tau = ad::mul(sigma, delta);
    const auto before = ad::sub(ad::cumsum(tau, 1), tau);
    AlphaResult<T> r;
    r.transmittance = ad::exp(ad::neg(before));
    r.alpha = ad::mul(r.transmittance, ad::sub(ad::BasicTensor<T>::scalar(T(1)), ad::exp(ad::neg(tau))));
    return r;
}

void compute_alphas(const std::vector<double>& sigma, const std::vector<double>& delta, std::vector<double>& alpha,
                    std::vector<double>& transmittance) {
    if (sigma.size() != delta.size()) throw std::invalid_argument("compute_alphas: size mismatch");
    alpha.assign(sigma.size(), 0.0);
    transmittance.assign(sigma.size() + 1, 1.0);
    double depth = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        if (sigma[i] < 0.0 || !(delta[i] > 0.0)) throw std::invalid_argument("compute_alphas: invalid sample");
        transmittance[i] = std::exp(-depth);
        alpha[i] = transmittance[i] * -std::expm1(-sigma[i] * delta[i]);
        depth += sigma[i] * delta[i];
    }
    transmittance[sigma.size()] = std::exp(-depth);
}

template <typename T>
ad::BasicTensor<T> integrate_features(const ad::BasicTensor<T>& alpha, const ad::BasicTensor<T>& features) {
    if (alpha.rank() != 2 || features.rank() != 3 || features.dim(0) != alpha.dim(0) || features.dim(1) != alpha.dim(1))
        throw ad::ShapeError("integrate_features", alpha.shape(), features.shape());
    const auto w = ad::reshape(alpha, {alpha.dim(0), alpha.dim(1), 1});
    return ad::sum(ad::mul(w, features), 1);
}

template <typename T>
FeaturePatch<T> build_feature_patch(const ad::BasicTensor<T>& alpha, const ad::BasicTensor<T>& features, int patches,
                                    int K) {
    const int64_t rays = static_cast<int64_t>(patches) * K * K;
    if (alpha.rank() != 2 || alpha.dim(0) != rays)
        throw ad::ShapeError("build_feature_patch", alpha.shape(), {rays, 0});
    const int64_t n = alpha.dim(1);
    if (features.rank() != 2 || features.dim(0) != rays * n)
        throw ad::ShapeError("build_feature_patch", features.shape(), {rays * n, 0});
    const int64_t c = features.dim(1);
    FeaturePatch<T> out;
    const auto fc = integrate_features(alpha, ad::reshape(features, {rays, n, c}));
    out.radiance = ad::permute(ad::reshape(fc, {patches, K, K, c}), {0, 3, 1, 2});
    out.density = ad::permute(ad::reshape(alpha, {patches, K, K, n}), {0, 3, 1, 2});
    out.coarse_alpha = ad::clamp(ad::sum(out.density, 1, true), T(0), T(1));
    return out;
}

template AlphaResult<float> compute_alphas<float>(const ad::Tensor&, const ad::Tensor&);
template AlphaResult<double> compute_alphas<double>(const ad::Tensor64&, const ad::Tensor64&);
template ad::Tensor integrate_features<float>(const ad::Tensor&, const ad::Tensor&);
template ad::Tensor64 integrate_features<double>(const ad::Tensor64&, const ad::Tensor64&);
template FeaturePatch<float> build_feature_patch<float>(const ad::Tensor&, const ad::Tensor&, int, int);
template FeaturePatch<double> build_feature_patch<double>(const ad::Tensor64&, const ad::Tensor64&, int, int);

}  // namespace ofield
